//! Error type shared across the crate.

use std::fmt;
use std::io;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Operands have incompatible shapes; the message names the operation.
    DimensionMismatch(String),
    /// A container was constructed from data of the wrong length.
    DataLength { expected: usize, got: usize },
    /// A container would hold a NaN or infinity.
    NonFinite(&'static str),
    /// Degenerate sizes (rank or dimension of zero).
    EmptySize(&'static str),
    /// An R x R diagonal block could not be inverted.
    SingularBlock { step: usize },
    /// A tensor handed to `BlockTriangularSystem::from_gram` has a nonzero
    /// block above the diagonal.
    NotBlockTriangular { row_step: usize, col_step: usize },
    /// Chunk length must be at least one.
    InvalidChunkLen(usize),
    /// `scan` requires a nonempty list of flows.
    EmptyScan,
    /// PFT1 stream did not start with the `PFT1` magic bytes.
    BadMagic([u8; 4]),
    /// PFT1 scalar code other than 0 (real64).
    UnsupportedScalar(u8),
    /// PFT1 rank does not match the container being read.
    UnexpectedNdim { expected: u8, got: u8 },
    /// PFT1 payload ended early.
    TruncatedPayload,
    /// PFT1 stream has bytes after the payload.
    TrailingBytes,
    Io(io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape (expected {expected})")
            }
            Error::NonFinite(what) => write!(f, "non-finite entry in {what}"),
            Error::EmptySize(what) => write!(f, "{what} must be at least 1"),
            Error::SingularBlock { step } => {
                write!(f, "singular diagonal block at step {step}")
            }
            Error::NotBlockTriangular { row_step, col_step } => write!(
                f,
                "nonzero block above the diagonal at (step {row_step}, step {col_step})"
            ),
            Error::InvalidChunkLen(n) => write!(f, "invalid chunk length {n}"),
            Error::EmptyScan => write!(f, "scan requires at least one flow"),
            Error::BadMagic(m) => write!(f, "bad PFT1 magic {m:?}"),
            Error::UnsupportedScalar(c) => write!(f, "unsupported PFT1 scalar code {c}"),
            Error::UnexpectedNdim { expected, got } => {
                write!(f, "unexpected PFT1 rank {got} (expected {expected})")
            }
            Error::TruncatedPayload => write!(f, "PFT1 payload truncated"),
            Error::TrailingBytes => write!(f, "trailing bytes after PFT1 payload"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}
