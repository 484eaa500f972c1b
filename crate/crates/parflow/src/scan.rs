//! Three-stage pipeline: partition the step range into chunks, compute each
//! chunk's affine flow with a chosen backend, then combine the flows with an
//! associative scan and apply the result to the initial state.

use crate::error::{Error, Result};
use crate::recurrence;
use crate::tensor::{ChunkInputs, StateMatrix};
use crate::{sigdelta, tensorinv};

/// The map `S -> S P + Q` transporting the state across one chunk.
/// These form a monoid under [`compose`] with identity `(Id, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFlow {
    p: StateMatrix,
    q: StateMatrix,
}

impl AffineFlow {
    pub fn new(p: StateMatrix, q: StateMatrix) -> Result<Self> {
        if p.dim() != q.dim() {
            return Err(Error::DimensionMismatch(format!(
                "AffineFlow: P dim {} vs Q dim {}",
                p.dim(),
                q.dim()
            )));
        }
        Ok(AffineFlow { p, q })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Ok(AffineFlow { p: StateMatrix::identity(dim)?, q: StateMatrix::zeros(dim)? })
    }

    pub fn p(&self) -> &StateMatrix {
        &self.p
    }

    pub fn q(&self) -> &StateMatrix {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.p.dim()
    }

    /// Apply to a state: `S P + Q`.
    pub fn apply(&self, s: &StateMatrix) -> Result<StateMatrix> {
        s.matmul(&self.p)?.add(&self.q)
    }
}

/// `compose(F1, F2)` acts like `F1` then `F2`:
/// `(P1 P2, Q1 P2 + Q2)`.
pub fn compose(f1: &AffineFlow, f2: &AffineFlow) -> Result<AffineFlow> {
    let p = f1.p.matmul(&f2.p)?;
    let q = f1.q.matmul(&f2.p)?.add(&f2.q)?;
    AffineFlow::new(p, q)
}

/// Inclusive prefix composition by left fold: `out[i] = flows[0] . ... . flows[i]`.
pub fn scan(flows: &[AffineFlow]) -> Result<Vec<AffineFlow>> {
    if flows.is_empty() {
        return Err(Error::EmptyScan);
    }
    check_uniform_dim(flows)?;
    let mut out = Vec::with_capacity(flows.len());
    let mut acc = flows[0].clone();
    out.push(acc.clone());
    for f in &flows[1..] {
        acc = compose(&acc, f)?;
        out.push(acc.clone());
    }
    Ok(out)
}

/// Inclusive prefix composition evaluated over a fixed halving tree:
/// scan both halves, then fold the left total into the right prefixes.
/// The combination tree depends only on the input length, so results are
/// reproducible bit-for-bit run to run.
pub fn scan_tree(flows: &[AffineFlow]) -> Result<Vec<AffineFlow>> {
    if flows.is_empty() {
        return Err(Error::EmptyScan);
    }
    check_uniform_dim(flows)?;
    scan_tree_rec(flows)
}

fn scan_tree_rec(flows: &[AffineFlow]) -> Result<Vec<AffineFlow>> {
    if flows.len() == 1 {
        return Ok(vec![flows[0].clone()]);
    }
    let mid = flows.len() / 2;
    let mut left = scan_tree_rec(&flows[..mid])?;
    let right = scan_tree_rec(&flows[mid..])?;
    let total_left = left.last().expect("left half nonempty").clone();
    for f in right {
        left.push(compose(&total_left, &f)?);
    }
    Ok(left)
}

fn check_uniform_dim(flows: &[AffineFlow]) -> Result<()> {
    let dim = flows[0].dim();
    for f in flows {
        if f.dim() != dim {
            return Err(Error::DimensionMismatch(format!(
                "scan: flow dims {} vs {}",
                dim,
                f.dim()
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Chunking
// ---------------------------------------------------------------------------

/// Ordered, contiguous, non-overlapping cover of `[0, L)` by half-open step
/// ranges; every chunk nonempty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkSpec {
    offsets: Vec<(usize, usize)>,
}

impl ChunkSpec {
    pub fn offsets(&self) -> &[(usize, usize)] {
        &self.offsets
    }

    pub fn num_chunks(&self) -> usize {
        self.offsets.len()
    }
}

/// Split `L` steps into `ceil(L / chunk_len)` chunks, all of length
/// `chunk_len` except possibly the last.
pub fn partition(steps: usize, chunk_len: usize) -> Result<ChunkSpec> {
    if chunk_len == 0 {
        return Err(Error::InvalidChunkLen(chunk_len));
    }
    let mut offsets = Vec::new();
    let mut start = 0;
    while start < steps {
        let end = (start + chunk_len).min(steps);
        offsets.push((start, end));
        start = end;
    }
    Ok(ChunkSpec { offsets })
}

/// Which solver computes each chunk's flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkBackend {
    /// Fold the sequential recurrence through the chunks (no flows).
    Sequential,
    /// Triangular tensor inversion per chunk.
    TensorInv,
    /// Antidiagonal wavefront per chunk.
    SigDelta,
}

/// Final state after partitioning into chunks of `chunk_len`, computing
/// per-chunk flows with `backend`, scanning and applying to `s0`.
pub fn solve_chunked(
    s0: &StateMatrix,
    inputs: &ChunkInputs,
    chunk_len: usize,
    backend: ChunkBackend,
) -> Result<StateMatrix> {
    Ok(solve_chunked_with_boundaries(s0, inputs, chunk_len, backend)?.0)
}

/// As [`solve_chunked`], also returning the state at every chunk boundary
/// (one entry per chunk, the last being the final state).
pub fn solve_chunked_with_boundaries(
    s0: &StateMatrix,
    inputs: &ChunkInputs,
    chunk_len: usize,
    backend: ChunkBackend,
) -> Result<(StateMatrix, Vec<StateMatrix>)> {
    if s0.dim() != inputs.dim() {
        return Err(Error::DimensionMismatch(format!(
            "solve_chunked: state dim {} vs inputs dim {}",
            s0.dim(),
            inputs.dim()
        )));
    }
    let spec = partition(inputs.steps(), chunk_len)?;
    if spec.num_chunks() == 0 {
        return Ok((s0.clone(), Vec::new()));
    }

    if backend == ChunkBackend::Sequential {
        let mut s = s0.clone();
        let mut boundaries = Vec::with_capacity(spec.num_chunks());
        for &(start, end) in spec.offsets() {
            let chunk = inputs.slice_steps(start, end)?;
            s = recurrence::run(&s, &chunk)?;
            boundaries.push(s.clone());
        }
        return Ok((s, boundaries));
    }

    let mut flows = Vec::with_capacity(spec.num_chunks());
    for &(start, end) in spec.offsets() {
        let chunk = inputs.slice_steps(start, end)?;
        let flow = match backend {
            ChunkBackend::TensorInv => tensorinv::chunk_affine_flow(&chunk)?,
            ChunkBackend::SigDelta => {
                let coeffs = sigdelta::wavefront_solve(chunk.a(), chunk.a_tilde(), chunk.b())?;
                tensorinv::affine_flow_from_coefficients(&coeffs, chunk.b())?
            }
            ChunkBackend::Sequential => unreachable!("handled above"),
        };
        flows.push(flow);
    }
    let prefixes = scan(&flows)?;
    let mut boundaries = Vec::with_capacity(prefixes.len());
    for prefix in &prefixes {
        boundaries.push(prefix.apply(s0)?);
    }
    let last = boundaries.last().expect("at least one chunk").clone();
    Ok((last, boundaries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor3;

    fn flow_from(seed: u64, d: usize) -> AffineFlow {
        // Near-identity deterministic flows.
        let mut p = StateMatrix::identity(d).unwrap();
        let mut q = StateMatrix::zeros(d).unwrap();
        for r in 0..d {
            for c in 0..d {
                let x = ((seed as f64) + (r * d + c) as f64 * 0.71).sin() * 0.3;
                p.set(r, c, p.get(r, c) + x);
                q.set(r, c, ((seed as f64) * 1.3 + (r * d + c) as f64).cos() * 0.2);
            }
        }
        AffineFlow::new(p, q).unwrap()
    }

    #[test]
    fn compose_identities() {
        let f = flow_from(3, 4);
        let id = AffineFlow::identity(4).unwrap();
        let right = compose(&f, &id).unwrap();
        let left = compose(&id, &f).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert!((right.p().get(r, c) - f.p().get(r, c)).abs() < 1e-15);
                assert!((right.q().get(r, c) - f.q().get(r, c)).abs() < 1e-15);
                assert!((left.p().get(r, c) - f.p().get(r, c)).abs() < 1e-15);
                assert!((left.q().get(r, c) - f.q().get(r, c)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn compose_matches_sequential_application() {
        let f1 = flow_from(1, 3);
        let f2 = flow_from(2, 3);
        let s = StateMatrix::from_vec(3, (0..9).map(|x| x as f64 * 0.4 - 1.0).collect()).unwrap();
        let via_compose = compose(&f1, &f2).unwrap().apply(&s).unwrap();
        let via_seq = f2.apply(&f1.apply(&s).unwrap()).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert!((via_compose.get(r, c) - via_seq.get(r, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scan_single_flow_is_itself() {
        let f = flow_from(9, 2);
        let out = scan(std::slice::from_ref(&f)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0], f);
    }

    #[test]
    fn scan_of_identities_is_identity() {
        let flows = vec![AffineFlow::identity(3).unwrap(); 5];
        for f in scan(&flows).unwrap() {
            assert_eq!(f, AffineFlow::identity(3).unwrap());
        }
    }

    #[test]
    fn scan_empty_is_error() {
        assert!(matches!(scan(&[]), Err(Error::EmptyScan)));
        assert!(matches!(scan_tree(&[]), Err(Error::EmptyScan)));
    }

    #[test]
    fn tree_scan_matches_left_fold() {
        let flows: Vec<AffineFlow> = (0..8).map(|s| flow_from(s, 3)).collect();
        let fold = scan(&flows).unwrap();
        let tree = scan_tree(&flows).unwrap();
        assert_eq!(fold.len(), tree.len());
        for (a, b) in fold.iter().zip(tree.iter()) {
            for r in 0..3 {
                for c in 0..3 {
                    assert!((a.p().get(r, c) - b.p().get(r, c)).abs() < 1e-12);
                    assert!((a.q().get(r, c) - b.q().get(r, c)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn partition_examples() {
        let spec = partition(10, 4).unwrap();
        assert_eq!(spec.offsets(), &[(0, 4), (4, 8), (8, 10)]);
        let whole = partition(6, 6).unwrap();
        assert_eq!(whole.offsets(), &[(0, 6)]);
        let units = partition(3, 1).unwrap();
        assert_eq!(units.offsets(), &[(0, 1), (1, 2), (2, 3)]);
        assert!(matches!(partition(5, 0), Err(Error::InvalidChunkLen(0))));
        assert_eq!(partition(0, 4).unwrap().num_chunks(), 0);
    }

    #[test]
    fn solve_chunked_l0_returns_s0() {
        let inputs = ChunkInputs::new(
            Tensor3::zeros(0, 1, 3).unwrap(),
            Tensor3::zeros(0, 1, 3).unwrap(),
            Tensor3::zeros(0, 1, 3).unwrap(),
        )
        .unwrap();
        let s0 = StateMatrix::identity(3).unwrap();
        for backend in [ChunkBackend::Sequential, ChunkBackend::TensorInv, ChunkBackend::SigDelta]
        {
            let (s, bounds) = solve_chunked_with_boundaries(&s0, &inputs, 4, backend).unwrap();
            assert_eq!(s, s0);
            assert!(bounds.is_empty());
        }
    }
}
