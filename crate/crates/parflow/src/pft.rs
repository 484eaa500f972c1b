//! The `PFT1` tensor container format used by the CLI for input and output.
//!
//! Layout, all little-endian:
//!
//! ```text
//! bytes 0..4   magic "PFT1"
//! byte  4      scalar code (0 = real64; the only supported code)
//! byte  5      ndim
//! 8 * ndim     dims as u64
//! then         payload, row-major f64
//! ```
//!
//! Readers are strict: wrong magic, a truncated payload, or trailing bytes
//! all fail without producing a value, and every payload entry must be
//! finite.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{StateMatrix, Tensor3};

pub const MAGIC: [u8; 4] = *b"PFT1";
pub const SCALAR_REAL64: u8 = 0;

pub fn write_raw<W: Write>(mut w: W, dims: &[u64], data: &[f64]) -> Result<()> {
    let expected: u64 = dims.iter().product();
    debug_assert_eq!(expected as usize, data.len());
    w.write_all(&MAGIC)?;
    w.write_all(&[SCALAR_REAL64, dims.len() as u8])?;
    for &d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    for &x in data {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Read a PFT1 stream, returning its dims and payload. Consumes the reader
/// to EOF and errors on anything left over.
pub fn read_raw<R: Read>(mut r: R) -> Result<(Vec<u64>, Vec<f64>)> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let mut head = [0u8; 2];
    read_exact(&mut r, &mut head)?;
    if head[0] != SCALAR_REAL64 {
        return Err(Error::UnsupportedScalar(head[0]));
    }
    let ndim = head[1] as usize;
    let mut dims = Vec::with_capacity(ndim);
    let mut buf8 = [0u8; 8];
    for _ in 0..ndim {
        read_exact(&mut r, &mut buf8)?;
        dims.push(u64::from_le_bytes(buf8));
    }
    let len = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or(Error::TruncatedPayload)?;
    let len = usize::try_from(len).map_err(|_| Error::TruncatedPayload)?;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        read_exact(&mut r, &mut buf8)?;
        let x = f64::from_le_bytes(buf8);
        if !x.is_finite() {
            return Err(Error::NonFinite("PFT1 payload"));
        }
        data.push(x);
    }
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok((dims, data)),
        _ => Err(Error::TrailingBytes),
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::TruncatedPayload
        } else {
            Error::Io(e)
        }
    })
}

pub fn write_tensor3<W: Write>(w: W, t: &Tensor3) -> Result<()> {
    let (l, r, d) = t.dims();
    write_raw(w, &[l as u64, r as u64, d as u64], t.data())
}

pub fn read_tensor3<R: Read>(r: R) -> Result<Tensor3> {
    let (dims, data) = read_raw(r)?;
    if dims.len() != 3 {
        return Err(Error::UnexpectedNdim { expected: 3, got: dims.len() as u8 });
    }
    Tensor3::from_vec(dims[0] as usize, dims[1] as usize, dims[2] as usize, data)
}

pub fn write_matrix<W: Write>(w: W, m: &StateMatrix) -> Result<()> {
    let d = m.dim() as u64;
    write_raw(w, &[d, d], m.data())
}

pub fn read_matrix<R: Read>(r: R) -> Result<StateMatrix> {
    let (dims, data) = read_raw(r)?;
    if dims.len() != 2 {
        return Err(Error::UnexpectedNdim { expected: 2, got: dims.len() as u8 });
    }
    if dims[0] != dims[1] {
        return Err(Error::DimensionMismatch(format!(
            "PFT1 matrix must be square, got {} x {}",
            dims[0], dims[1]
        )));
    }
    StateMatrix::from_vec(dims[0] as usize, data)
}

pub fn read_tensor3_file<P: AsRef<Path>>(path: P) -> Result<Tensor3> {
    read_tensor3(BufReader::new(File::open(path)?))
}

pub fn write_tensor3_file<P: AsRef<Path>>(path: P, t: &Tensor3) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor3(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn read_matrix_file<P: AsRef<Path>>(path: P) -> Result<StateMatrix> {
    read_matrix(BufReader::new(File::open(path)?))
}

pub fn write_matrix_file<P: AsRef<Path>>(path: P, m: &StateMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix(&mut w, m)?;
    w.flush()?;
    Ok(())
}

/// Serialize a state trajectory as a single ndim-3 tensor of shape
/// `(count, d, d)`.
pub fn write_trajectory<W: Write>(w: W, states: &[StateMatrix]) -> Result<()> {
    let d = states.first().map_or(0, |s| s.dim());
    let mut data = Vec::with_capacity(states.len() * d * d);
    for s in states {
        debug_assert_eq!(s.dim(), d);
        data.extend_from_slice(s.data());
    }
    write_raw(w, &[states.len() as u64, d as u64, d as u64], &data)
}
