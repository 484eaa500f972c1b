//! Dense value-semantic containers and the contraction primitives every
//! backend is built from. This module owns the index conventions:
//!
//! * [`Tensor3`] has shape `(L, R, d)` stored row-major over
//!   `(step, rank-row, dim)`. Step slice `k` holds the *transpose* of the
//!   `d x R` driver matrix of that step, so `tensor[k, i, m]` is entry
//!   `(m, i)` of the step matrix. All indices are 0-based.
//! * [`StateMatrix`] is a dense square `f64` matrix, row-major. It carries the
//!   `d x d` hidden state as well as the flattened `LR x LR` systems produced
//!   by [`flatten_block`].
//! * [`Gram4`] has shape `(L, R, L, R)`; its storage orders entries so that
//!   row `flat(k, i)`, column `flat(k', i')` of the flattened square matrix
//!   is `G[k, i, k', i']` with `flat(k, i) = i + k * R` (see [`BlockIndex`]).

use crate::counters::{self, ScalarBuf};
use crate::error::{Error, Result};

fn ensure_finite(data: &[f64], what: &'static str) -> Result<()> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

// ---------------------------------------------------------------------------
// Tensor3
// ---------------------------------------------------------------------------

/// Driver tensor of shape `(L, R, d)`: `L` steps of rank-`R` increments in
/// dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    steps: usize,
    rank: usize,
    dim: usize,
    data: ScalarBuf,
}

impl Tensor3 {
    pub fn zeros(steps: usize, rank: usize, dim: usize) -> Result<Self> {
        if rank == 0 {
            return Err(Error::EmptySize("rank"));
        }
        if dim == 0 {
            return Err(Error::EmptySize("dimension"));
        }
        Ok(Tensor3 {
            steps,
            rank,
            dim,
            data: ScalarBuf::zeros(steps * rank * dim),
        })
    }

    pub fn from_vec(steps: usize, rank: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if rank == 0 {
            return Err(Error::EmptySize("rank"));
        }
        if dim == 0 {
            return Err(Error::EmptySize("dimension"));
        }
        let expected = steps * rank * dim;
        if data.len() != expected {
            return Err(Error::DataLength { expected, got: data.len() });
        }
        ensure_finite(&data, "Tensor3")?;
        Ok(Tensor3 { steps, rank, dim, data: ScalarBuf::from_vec(data) })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.steps, self.rank, self.dim)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, m: usize) -> f64 {
        self.data[(k * self.rank + i) * self.dim + m]
    }

    #[inline]
    pub(crate) fn set(&mut self, k: usize, i: usize, m: usize, value: f64) {
        self.data[(k * self.rank + i) * self.dim + m] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// View of step `k`: the `R x d` row block storing that step's driver
    /// matrix transposed.
    pub fn step(&self, k: usize) -> StepSlice<'_> {
        let start = k * self.rank * self.dim;
        StepSlice {
            rows: &self.data[start..start + self.rank * self.dim],
            rank: self.rank,
            dim: self.dim,
        }
    }

    /// Copy of the steps in `start..end`.
    pub fn slice_steps(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.steps {
            return Err(Error::DimensionMismatch(format!(
                "step range {start}..{end} out of bounds for L={}",
                self.steps
            )));
        }
        let stride = self.rank * self.dim;
        Tensor3::from_vec(
            end - start,
            self.rank,
            self.dim,
            self.data[start * stride..end * stride].to_vec(),
        )
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let data = self.data.iter().map(|x| x * factor).collect();
        Tensor3 { steps: self.steps, rank: self.rank, dim: self.dim, data: ScalarBuf::from_vec(data) }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Borrowed view of one step of a [`Tensor3`]: `R` rows of length `d`, row
/// `i` being column `i` of the step's `d x R` matrix.
#[derive(Debug, Clone, Copy)]
pub struct StepSlice<'a> {
    rows: &'a [f64],
    rank: usize,
    dim: usize,
}

impl<'a> StepSlice<'a> {
    pub fn from_rows(rows: &'a [f64], rank: usize, dim: usize) -> Self {
        assert_eq!(rows.len(), rank * dim);
        StepSlice { rows, rank, dim }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row `i` of the stored block, i.e. column `i` of the `d x R` matrix.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Entry `(m, i)` of the `d x R` step matrix.
    #[inline]
    pub fn get(&self, i: usize, m: usize) -> f64 {
        self.rows[i * self.dim + m]
    }

    pub fn rows(&self) -> &[f64] {
        self.rows
    }
}

// ---------------------------------------------------------------------------
// StateMatrix
// ---------------------------------------------------------------------------

/// Dense square matrix, row-major. Primarily the hidden state
/// `S` in `R^{d x d}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    dim: usize,
    data: ScalarBuf,
}

impl StateMatrix {
    pub fn zeros(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmptySize("dimension"));
        }
        Ok(StateMatrix { dim, data: ScalarBuf::zeros(dim * dim) })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut s = StateMatrix::zeros(dim)?;
        for r in 0..dim {
            s.data[r * dim + r] = 1.0;
        }
        Ok(s)
    }

    pub fn from_vec(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmptySize("dimension"));
        }
        if data.len() != dim * dim {
            return Err(Error::DataLength { expected: dim * dim, got: data.len() });
        }
        ensure_finite(&data, "StateMatrix")?;
        Ok(StateMatrix { dim, data: ScalarBuf::from_vec(data) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.dim + c]
    }

    #[inline]
    pub(crate) fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.dim + c] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn add(&self, other: &StateMatrix) -> Result<StateMatrix> {
        self.check_same_dim(other, "StateMatrix::add")?;
        let data = self.data.iter().zip(other.data.iter()).map(|(a, b)| a + b).collect();
        Ok(StateMatrix { dim: self.dim, data: ScalarBuf::from_vec(data) })
    }

    pub fn sub(&self, other: &StateMatrix) -> Result<StateMatrix> {
        self.check_same_dim(other, "StateMatrix::sub")?;
        let data = self.data.iter().zip(other.data.iter()).map(|(a, b)| a - b).collect();
        Ok(StateMatrix { dim: self.dim, data: ScalarBuf::from_vec(data) })
    }

    pub fn scaled(&self, factor: f64) -> StateMatrix {
        let data = self.data.iter().map(|x| x * factor).collect();
        StateMatrix { dim: self.dim, data: ScalarBuf::from_vec(data) }
    }

    /// `self * other`, counting `d^3` multiply-adds.
    pub fn matmul(&self, other: &StateMatrix) -> Result<StateMatrix> {
        self.check_same_dim(other, "StateMatrix::matmul")?;
        let d = self.dim;
        let mut out = StateMatrix::zeros(d)?;
        for r in 0..d {
            for m in 0..d {
                let lhs = self.data[r * d + m];
                let row_other = &other.data[m * d..(m + 1) * d];
                let row_out = &mut out.data[r * d..(r + 1) * d];
                for c in 0..d {
                    row_out[c] += lhs * row_other[c];
                }
            }
        }
        counters::add_madds((d * d * d) as u64);
        Ok(out)
    }

    /// `self * q`, counting `d^2` multiply-adds.
    pub fn matvec(&self, q: &[f64]) -> Result<Vec<f64>> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "StateMatrix::matvec: matrix dim {} vs vector len {}",
                self.dim,
                q.len()
            )));
        }
        let d = self.dim;
        let mut out = vec![0.0; d];
        for r in 0..d {
            let row = self.row(r);
            let mut acc = 0.0;
            for c in 0..d {
                acc += row[c] * q[c];
            }
            out[r] = acc;
        }
        counters::add_madds((d * d) as u64);
        Ok(out)
    }

    pub fn transpose(&self) -> StateMatrix {
        let d = self.dim;
        let mut out = StateMatrix::zeros(d).expect("dim checked");
        for r in 0..d {
            for c in 0..d {
                out.data[c * d + r] = self.data[r * d + c];
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    fn check_same_dim(&self, other: &StateMatrix, op: &str) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(format!(
                "{op}: {} vs {}",
                self.dim, other.dim
            )));
        }
        Ok(())
    }
}

/// `||a - b||_F / max(1, ||b||_F)`, the relative Frobenius error of `a`
/// against reference `b`.
pub fn rel_frobenius(a: &StateMatrix, b: &StateMatrix) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let mut diff = 0.0;
    for (x, y) in a.data().iter().zip(b.data().iter()) {
        diff += (x - y) * (x - y);
    }
    diff.sqrt() / b.frobenius_norm().max(1.0)
}

// ---------------------------------------------------------------------------
// BlockIndex
// ---------------------------------------------------------------------------

/// Position in the `(step, rank)` grid together with its flattened offset
/// `flat = rank + step * R`, the bijection onto `[0, L * R)` used by
/// [`flatten_block`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockIndex {
    pub step: usize,
    pub rank: usize,
    pub flat: usize,
}

impl BlockIndex {
    pub fn new(step: usize, rank: usize, rank_count: usize) -> Self {
        debug_assert!(rank < rank_count);
        BlockIndex { step, rank, flat: rank + step * rank_count }
    }

    pub fn from_flat(flat: usize, rank_count: usize) -> Self {
        BlockIndex { step: flat / rank_count, rank: flat % rank_count, flat }
    }
}

// ---------------------------------------------------------------------------
// Gram4
// ---------------------------------------------------------------------------

/// Four-index tensor of shape `(L, R, L, R)`, stored as the flattened
/// `LR x LR` matrix it is isomorphic to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram4 {
    steps: usize,
    rank: usize,
    data: ScalarBuf,
}

impl Gram4 {
    pub fn zeros(steps: usize, rank: usize) -> Result<Self> {
        if rank == 0 {
            return Err(Error::EmptySize("rank"));
        }
        let n = steps * rank;
        Ok(Gram4 { steps, rank, data: ScalarBuf::zeros(n * n) })
    }

    /// The identity tensor `[Id]_{k,i}^{k',i'} = delta_k^{k'} delta_i^{i'}`.
    pub fn identity(steps: usize, rank: usize) -> Result<Self> {
        let mut g = Gram4::zeros(steps, rank)?;
        let n = steps * rank;
        for f in 0..n {
            g.data[f * n + f] = 1.0;
        }
        Ok(g)
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.steps, self.rank, self.steps, self.rank)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    fn n(&self) -> usize {
        self.steps * self.rank
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, kp: usize, ip: usize) -> f64 {
        let n = self.n();
        self.data[(k * self.rank + i) * n + (kp * self.rank + ip)]
    }

    #[inline]
    pub(crate) fn set(&mut self, k: usize, i: usize, kp: usize, ip: usize, value: f64) {
        let n = self.n();
        self.data[(k * self.rank + i) * n + (kp * self.rank + ip)] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Tensor composition `self . other`: contraction over the middle
    /// `(step, rank)` pair. Counts `(LR)^3` multiply-adds.
    pub fn compose(&self, other: &Gram4) -> Result<Gram4> {
        if self.steps != other.steps || self.rank != other.rank {
            return Err(Error::DimensionMismatch(format!(
                "Gram4::compose: ({}, {}) vs ({}, {})",
                self.steps, self.rank, other.steps, other.rank
            )));
        }
        let n = self.n();
        let mut out = Gram4::zeros(self.steps, self.rank)?;
        for row in 0..n {
            for mid in 0..n {
                let lhs = self.data[row * n + mid];
                let other_row = &other.data[mid * n..(mid + 1) * n];
                let out_row = &mut out.data[row * n..(row + 1) * n];
                for col in 0..n {
                    out_row[col] += lhs * other_row[col];
                }
            }
        }
        counters::add_madds((n * n * n) as u64);
        Ok(out)
    }

    /// Contraction of this tensor with a `Tensor3` over the `(step, rank)`
    /// pair: `[self . t]_{k,i}^m = sum_{k',i'} self[k,i,k',i'] t[k',i',m]`.
    /// Counts `(LR)^2 d` multiply-adds.
    pub fn apply_tensor3(&self, t: &Tensor3) -> Result<Tensor3> {
        if self.steps != t.steps() || self.rank != t.rank() {
            return Err(Error::DimensionMismatch(format!(
                "Gram4::apply_tensor3: ({}, {}) vs ({}, {})",
                self.steps,
                self.rank,
                t.steps(),
                t.rank()
            )));
        }
        let n = self.n();
        let d = t.dim();
        let mut out = Tensor3::zeros(self.steps, self.rank, d)?;
        for row in 0..n {
            let out_row = &mut out.data_mut()[row * d..(row + 1) * d];
            for mid in 0..n {
                let lhs = self.data[row * n + mid];
                let t_row = &t.data()[mid * d..(mid + 1) * d];
                for m in 0..d {
                    out_row[m] += lhs * t_row[m];
                }
            }
        }
        counters::add_madds((n * n * d) as u64);
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }
}

// ---------------------------------------------------------------------------
// Contraction primitives
// ---------------------------------------------------------------------------

/// Gram contraction `[A B^T]_{k,i}^{k',i'} = sum_m A[k,i,m] B[k',i',m]`.
/// Counts `(LR)^2 d` multiply-adds.
pub fn contract_ab(a: &Tensor3, b: &Tensor3) -> Result<Gram4> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!(
            "contract_ab: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (steps, rank, d) = a.dims();
    let n = steps * rank;
    let mut g = Gram4::zeros(steps, rank)?;
    for row in 0..n {
        let a_row = &a.data()[row * d..(row + 1) * d];
        for col in 0..n {
            let b_row = &b.data()[col * d..(col + 1) * d];
            let mut acc = 0.0;
            for m in 0..d {
                acc += a_row[m] * b_row[m];
            }
            g.data[row * n + col] = acc;
        }
    }
    counters::add_madds((n * n * d) as u64);
    Ok(g)
}

/// Zero every block whose column step is not strictly earlier than its row
/// step: `out[k,i,k',i'] = G[k,i,k',i']` if `k' < k`, else `0`. Strict in the
/// step index only; rank indices are untouched.
pub fn apply_strict_lower_mask(g: &Gram4) -> Gram4 {
    let (steps, rank) = (g.steps, g.rank);
    let n = g.n();
    let mut out = Gram4::zeros(steps, rank).expect("rank checked by source");
    for k in 0..steps {
        for i in 0..rank {
            let row = k * rank + i;
            // Only columns with step index k' < k survive.
            let keep = k * rank;
            let src = &g.data[row * n..row * n + keep];
            out.data[row * n..row * n + keep].copy_from_slice(src);
        }
    }
    out
}

/// Reinterpret a `Gram4` as the `LR x LR` matrix with
/// `M[flat(k,i), flat(k',i')] = G[k,i,k',i']`.
pub fn flatten_block(g: &Gram4) -> StateMatrix {
    StateMatrix::from_vec(g.n(), g.data.to_vec()).expect("Gram4 entries are finite")
}

/// Inverse of [`flatten_block`].
pub fn unflatten_block(m: &StateMatrix, steps: usize, rank: usize) -> Result<Gram4> {
    if m.dim() != steps * rank {
        return Err(Error::DimensionMismatch(format!(
            "unflatten_block: matrix dim {} vs L*R = {}",
            m.dim(),
            steps * rank
        )));
    }
    let mut g = Gram4::zeros(steps, rank)?;
    g.data.copy_from_slice(m.data());
    Ok(g)
}

// ---------------------------------------------------------------------------
// ChunkInputs
// ---------------------------------------------------------------------------

/// The three driver tensors `A`, `A~`, `B` of equal shape `(L, R, d)`
/// defining the increments `dw_k = A_k B_k^T` and `dxi_k = A~_k B_k^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkInputs {
    a: Tensor3,
    a_tilde: Tensor3,
    b: Tensor3,
}

impl ChunkInputs {
    pub fn new(a: Tensor3, a_tilde: Tensor3, b: Tensor3) -> Result<Self> {
        if a.dims() != a_tilde.dims() || a.dims() != b.dims() {
            return Err(Error::DimensionMismatch(format!(
                "ChunkInputs: A {:?}, A~ {:?}, B {:?}",
                a.dims(),
                a_tilde.dims(),
                b.dims()
            )));
        }
        Ok(ChunkInputs { a, a_tilde, b })
    }

    pub fn a(&self) -> &Tensor3 {
        &self.a
    }

    pub fn a_tilde(&self) -> &Tensor3 {
        &self.a_tilde
    }

    pub fn b(&self) -> &Tensor3 {
        &self.b
    }

    pub fn steps(&self) -> usize {
        self.a.steps()
    }

    pub fn rank(&self) -> usize {
        self.a.rank()
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn slice_steps(&self, start: usize, end: usize) -> Result<ChunkInputs> {
        Ok(ChunkInputs {
            a: self.a.slice_steps(start, end)?,
            a_tilde: self.a_tilde.slice_steps(start, end)?,
            b: self.b.slice_steps(start, end)?,
        })
    }

    /// Same drivers with `A~ = 0`: the homogeneous system.
    pub fn homogeneous(&self) -> ChunkInputs {
        let (l, r, d) = self.a.dims();
        ChunkInputs {
            a: self.a.clone(),
            a_tilde: Tensor3::zeros(l, r, d).expect("dims valid"),
            b: self.b.clone(),
        }
    }
}
