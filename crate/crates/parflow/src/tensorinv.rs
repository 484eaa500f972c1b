//! Chunk solver based on triangular tensor inversion.
//!
//! Builds `C = Id - M (.) A B^T`, inverts it block-by-block through forward
//! substitution, recovers the coefficient tensors
//!
//! ```text
//! W = C^{-1} A,    U = C^{-1} A~
//! ```
//!
//! and assembles `S_1 = S_0 + sum_k (S_0 W_k + U_k) B_k^T`.

use crate::counters;
use crate::error::{Error, Result};
use crate::scan::AffineFlow;
use crate::tensor::{
    apply_strict_lower_mask, contract_ab, ChunkInputs, Gram4, StateMatrix, Tensor3,
};

/// Relative pivot threshold for the per-block Gauss-Jordan inversion.
const PIVOT_RTOL: f64 = 1e-13;

/// A `(L, R, L, R)` tensor that is block lower-triangular in the step index
/// with invertible `R x R` diagonal blocks. Construction validates both
/// properties; `diagonal_blocks_invertible` records the witness.
#[derive(Debug, Clone)]
pub struct BlockTriangularSystem {
    c: Gram4,
    diagonal_blocks_invertible: bool,
    /// Every diagonal block is exactly `Id_R`, as produced by
    /// [`build_system`]; lets the substitution skip block inversions.
    unit_diagonal: bool,
}

impl BlockTriangularSystem {
    /// Validate a general tensor: blocks above the diagonal must be exactly
    /// zero and every diagonal block invertible (the general
    /// triangular-inversion path).
    pub fn from_gram(c: Gram4) -> Result<Self> {
        let (l, r) = (c.steps(), c.rank());
        for k in 0..l {
            for kp in (k + 1)..l {
                for i in 0..r {
                    for ip in 0..r {
                        if c.get(k, i, kp, ip) != 0.0 {
                            return Err(Error::NotBlockTriangular { row_step: k, col_step: kp });
                        }
                    }
                }
            }
        }
        let mut unit_diagonal = true;
        for t in 0..l {
            let block = diag_block(&c, t);
            // Witness invertibility now so the invariant holds for the
            // lifetime of the value.
            invert_small(&block, r, t)?;
            if !is_identity(&block, r) {
                unit_diagonal = false;
            }
        }
        Ok(BlockTriangularSystem { c, diagonal_blocks_invertible: true, unit_diagonal })
    }

    pub fn c(&self) -> &Gram4 {
        &self.c
    }

    pub fn diagonal_blocks_invertible(&self) -> bool {
        self.diagonal_blocks_invertible
    }

    pub fn steps(&self) -> usize {
        self.c.steps()
    }

    pub fn rank(&self) -> usize {
        self.c.rank()
    }
}

/// Coefficient tensors `W`, `U` of shape `(L, R, d)` solving
/// `W_k = A_k + sum_{m<k} W_m B_m^T A_k` and its `A~` analogue.
#[derive(Debug, Clone)]
pub struct SolvedCoefficients {
    w: Tensor3,
    u: Tensor3,
}

impl SolvedCoefficients {
    pub fn new(w: Tensor3, u: Tensor3) -> Result<Self> {
        if w.dims() != u.dims() {
            return Err(Error::DimensionMismatch(format!(
                "SolvedCoefficients: W {:?} vs U {:?}",
                w.dims(),
                u.dims()
            )));
        }
        Ok(SolvedCoefficients { w, u })
    }

    pub fn w(&self) -> &Tensor3 {
        &self.w
    }

    pub fn u(&self) -> &Tensor3 {
        &self.u
    }
}

/// `C = Id - M (.) A B^T`. The strict mask empties the diagonal, so the
/// diagonal blocks come out exactly `Id_R`.
pub fn build_system(a: &Tensor3, b: &Tensor3) -> Result<BlockTriangularSystem> {
    let g = contract_ab(a, b)?;
    let masked = apply_strict_lower_mask(&g);
    let (l, r) = (masked.steps(), masked.rank());
    let mut c = Gram4::zeros(l, r)?;
    for k in 0..l {
        for i in 0..r {
            for kp in 0..l {
                for ip in 0..r {
                    let id = if k == kp && i == ip { 1.0 } else { 0.0 };
                    c.set(k, i, kp, ip, id - masked.get(k, i, kp, ip));
                }
            }
        }
    }
    Ok(BlockTriangularSystem { c, diagonal_blocks_invertible: true, unit_diagonal: true })
}

/// Triangular tensor inversion by forward substitution:
///
/// ```text
/// D_tt = (C_tt)^{-1}
/// D_ts = -D_tt ( sum_{r=s}^{t-1} C_tr D_rs )     for s < t
/// ```
///
/// The outer loop walks row-blocks `t` in order; within one `t` every column
/// `s < t` reads only rows `< t`, so the columns of a row form an
/// independent wave.
pub fn invert_block_triangular(sys: &BlockTriangularSystem) -> Result<Gram4> {
    let (l, r) = (sys.steps(), sys.rank());
    let c = &sys.c;
    let mut d = Gram4::zeros(l, r)?;
    let mut madds: u64 = 0;

    // Inverted diagonal blocks, kept for the substitution.
    let mut diag_inv: Vec<Vec<f64>> = Vec::with_capacity(l);
    for t in 0..l {
        let inv = if sys.unit_diagonal {
            identity_block(r)
        } else {
            let (inv, ops) = invert_small(&diag_block(c, t), r, t)?;
            madds += ops;
            inv
        };
        for i in 0..r {
            for j in 0..r {
                d.set(t, i, t, j, inv[i * r + j]);
            }
        }
        diag_inv.push(inv);
    }

    let mut acc = vec![0.0; r * r];
    for t in 1..l {
        for s in 0..t {
            acc.iter_mut().for_each(|x| *x = 0.0);
            for rr in s..t {
                for i in 0..r {
                    for p in 0..r {
                        let lhs = c.get(t, i, rr, p);
                        for j in 0..r {
                            acc[i * r + j] += lhs * d.get(rr, p, s, j);
                        }
                    }
                }
            }
            madds += ((t - s) * r * r * r) as u64;
            if sys.unit_diagonal {
                for i in 0..r {
                    for j in 0..r {
                        d.set(t, i, s, j, -acc[i * r + j]);
                    }
                }
            } else {
                let inv = &diag_inv[t];
                for i in 0..r {
                    for j in 0..r {
                        let mut v = 0.0;
                        for p in 0..r {
                            v += inv[i * r + p] * acc[p * r + j];
                        }
                        d.set(t, i, s, j, -v);
                    }
                }
                madds += (r * r * r) as u64;
            }
        }
    }
    counters::add_madds(madds);
    Ok(d)
}

/// `W = D . A`, `U = D . A~` (contraction over the `(step, rank)` pair).
pub fn solve_wu(d: &Gram4, a: &Tensor3, a_tilde: &Tensor3) -> Result<SolvedCoefficients> {
    if a.dims() != a_tilde.dims() {
        return Err(Error::DimensionMismatch(format!(
            "solve_wu: A {:?} vs A~ {:?}",
            a.dims(),
            a_tilde.dims()
        )));
    }
    let w = d.apply_tensor3(a)?;
    let u = d.apply_tensor3(a_tilde)?;
    SolvedCoefficients::new(w, u)
}

/// `S_1 = S_0 + sum_k (S_0 W_k + U_k) B_k^T`.
pub fn assemble_state(
    s0: &StateMatrix,
    coeffs: &SolvedCoefficients,
    b: &Tensor3,
) -> Result<StateMatrix> {
    let (l, r, dim) = coeffs.w.dims();
    if b.dims() != (l, r, dim) {
        return Err(Error::DimensionMismatch(format!(
            "assemble_state: coefficients {:?} vs B {:?}",
            coeffs.w.dims(),
            b.dims()
        )));
    }
    if s0.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "assemble_state: state dim {} vs inputs dim {}",
            s0.dim(),
            dim
        )));
    }
    let mut s1 = s0.clone();
    let mut x = vec![0.0; dim * r];
    for k in 0..l {
        // X = S_0 W_k + U_k, a d x R intermediate.
        for row in 0..dim {
            let s_row = s0.row(row);
            for i in 0..r {
                let mut acc = coeffs.u.get(k, i, row);
                for m in 0..dim {
                    acc += s_row[m] * coeffs.w.get(k, i, m);
                }
                x[row * r + i] = acc;
            }
        }
        // S_1 += X B_k^T.
        for row in 0..dim {
            for i in 0..r {
                let coeff = x[row * r + i];
                let b_col = coeffs_b_row(b, k, i);
                for c in 0..dim {
                    let v = s1.get(row, c) + coeff * b_col[c];
                    s1.set(row, c, v);
                }
            }
        }
    }
    counters::add_madds(2 * (l * dim * dim * r) as u64);
    Ok(s1)
}

#[inline]
fn coeffs_b_row<'a>(b: &'a Tensor3, k: usize, i: usize) -> &'a [f64] {
    let d = b.dim();
    let start = (k * b.rank() + i) * d;
    &b.data()[start..start + d]
}

/// Rearranged chunk action `S_0 -> S_0 P + Q` with
/// `P = Id + W^T B` and `Q = U^T B` (contraction over `(step, rank)`).
pub fn affine_flow_from_coefficients(
    coeffs: &SolvedCoefficients,
    b: &Tensor3,
) -> Result<AffineFlow> {
    let (l, r, dim) = coeffs.w.dims();
    if b.dims() != (l, r, dim) {
        return Err(Error::DimensionMismatch(format!(
            "affine_flow_from_coefficients: coefficients {:?} vs B {:?}",
            coeffs.w.dims(),
            b.dims()
        )));
    }
    let mut p = StateMatrix::identity(dim)?;
    let mut q = StateMatrix::zeros(dim)?;
    let n = l * r;
    for row in 0..n {
        let w_row = &coeffs.w.data()[row * dim..(row + 1) * dim];
        let u_row = &coeffs.u.data()[row * dim..(row + 1) * dim];
        let b_row = &b.data()[row * dim..(row + 1) * dim];
        for m in 0..dim {
            let wv = w_row[m];
            let uv = u_row[m];
            let p_row = &mut p.data_mut()[m * dim..(m + 1) * dim];
            for c in 0..dim {
                p_row[c] += wv * b_row[c];
            }
            let q_row = &mut q.data_mut()[m * dim..(m + 1) * dim];
            for c in 0..dim {
                q_row[c] += uv * b_row[c];
            }
        }
    }
    counters::add_madds(2 * (n * dim * dim) as u64);
    AffineFlow::new(p, q)
}

/// Full tensor-inversion pipeline for one chunk, producing its affine flow.
pub fn chunk_affine_flow(inputs: &ChunkInputs) -> Result<AffineFlow> {
    let coeffs = solve_chunk_coefficients(inputs)?;
    affine_flow_from_coefficients(&coeffs, inputs.b())
}

/// Build, invert and solve for one chunk's coefficient tensors.
pub fn solve_chunk_coefficients(inputs: &ChunkInputs) -> Result<SolvedCoefficients> {
    let sys = build_system(inputs.a(), inputs.b())?;
    let d = invert_block_triangular(&sys)?;
    solve_wu(&d, inputs.a(), inputs.a_tilde())
}

/// Single-chunk final state via the tensor-inversion backend.
pub fn solve_chunk(s0: &StateMatrix, inputs: &ChunkInputs) -> Result<StateMatrix> {
    let coeffs = solve_chunk_coefficients(inputs)?;
    assemble_state(s0, &coeffs, inputs.b())
}

fn diag_block(c: &Gram4, t: usize) -> Vec<f64> {
    let r = c.rank();
    let mut block = vec![0.0; r * r];
    for i in 0..r {
        for j in 0..r {
            block[i * r + j] = c.get(t, i, t, j);
        }
    }
    block
}

fn identity_block(r: usize) -> Vec<f64> {
    let mut block = vec![0.0; r * r];
    for i in 0..r {
        block[i * r + i] = 1.0;
    }
    block
}

fn is_identity(block: &[f64], r: usize) -> bool {
    for i in 0..r {
        for j in 0..r {
            let want = if i == j { 1.0 } else { 0.0 };
            if block[i * r + j] != want {
                return false;
            }
        }
    }
    true
}

/// Gauss-Jordan inversion of an `R x R` block with partial pivoting.
/// A pivot of magnitude `<= PIVOT_RTOL * max|block|` counts as singular.
/// Returns the inverse and the multiply-add count of the elimination.
fn invert_small(block: &[f64], r: usize, step: usize) -> Result<(Vec<f64>, u64)> {
    let scale = block.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let tol = PIVOT_RTOL * scale;
    let mut a = block.to_vec();
    let mut inv = identity_block(r);
    let mut madds: u64 = 0;
    for col in 0..r {
        let mut pivot_row = col;
        let mut pivot_mag = a[col * r + col].abs();
        for row in (col + 1)..r {
            let mag = a[row * r + col].abs();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = row;
            }
        }
        if pivot_mag <= tol {
            return Err(Error::SingularBlock { step });
        }
        if pivot_row != col {
            for j in 0..r {
                a.swap(col * r + j, pivot_row * r + j);
                inv.swap(col * r + j, pivot_row * r + j);
            }
        }
        let pivot = a[col * r + col];
        for j in 0..r {
            a[col * r + j] /= pivot;
            inv[col * r + j] /= pivot;
        }
        madds += 2 * r as u64;
        for row in 0..r {
            if row == col {
                continue;
            }
            let factor = a[row * r + col];
            if factor == 0.0 {
                continue;
            }
            for j in 0..r {
                a[row * r + j] -= factor * a[col * r + j];
                inv[row * r + j] -= factor * inv[col * r + j];
            }
            madds += 2 * r as u64;
        }
    }
    Ok((inv, madds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::flatten_block;

    fn filler(l: usize, r: usize, d: usize, seed: f64) -> Tensor3 {
        let data = (0..l * r * d)
            .map(|x| ((x as f64) * 1.3 + seed).sin() * 0.4)
            .collect();
        Tensor3::from_vec(l, r, d, data).unwrap()
    }

    #[test]
    fn build_system_with_zero_b_is_identity() {
        let a = filler(3, 2, 4, 0.0);
        let b = Tensor3::zeros(3, 2, 4).unwrap();
        let sys = build_system(&a, &b).unwrap();
        let id = Gram4::identity(3, 2).unwrap();
        assert_eq!(sys.c().data(), id.data());
        assert!(sys.diagonal_blocks_invertible());
    }

    #[test]
    fn build_system_l1_is_identity_regardless_of_inputs() {
        let a = filler(1, 3, 4, 0.2);
        let b = filler(1, 3, 4, 1.1);
        let sys = build_system(&a, &b).unwrap();
        let id = Gram4::identity(1, 3).unwrap();
        assert_eq!(sys.c().data(), id.data());
    }

    #[test]
    fn build_system_matches_dense_masked_oracle() {
        let (l, r, d) = (4, 2, 3);
        let a = filler(l, r, d, 0.4);
        let b = filler(l, r, d, 2.2);
        let sys = build_system(&a, &b).unwrap();
        let flat = flatten_block(sys.c());
        // Dense oracle: I - strictly-below-block-diagonal part of AB^T.
        let g = contract_ab(&a, &b).unwrap();
        let n = l * r;
        for row in 0..n {
            let (k, i) = (row / r, row % r);
            for col in 0..n {
                let (kp, ip) = (col / r, col % r);
                let mut want = if row == col { 1.0 } else { 0.0 };
                if kp < k {
                    want -= g.get(k, i, kp, ip);
                }
                assert_eq!(flat.get(row, col), want);
            }
        }
    }

    #[test]
    fn invert_identity_is_identity() {
        let sys = BlockTriangularSystem::from_gram(Gram4::identity(3, 2).unwrap()).unwrap();
        let d = invert_block_triangular(&sys).unwrap();
        assert_eq!(d.data(), Gram4::identity(3, 2).unwrap().data());
    }

    #[test]
    fn invert_two_by_two_analytic() {
        // Flattened C = [[1, 0], [c, 1]] must invert to [[1, 0], [-c, 1]].
        let mut c = Gram4::identity(2, 1).unwrap();
        c.set(1, 0, 0, 0, 0.75);
        let sys = BlockTriangularSystem::from_gram(c).unwrap();
        let d = invert_block_triangular(&sys).unwrap();
        assert_eq!(d.get(0, 0, 0, 0), 1.0);
        assert_eq!(d.get(0, 0, 1, 0), 0.0);
        assert_eq!(d.get(1, 0, 0, 0), -0.75);
        assert_eq!(d.get(1, 0, 1, 0), 1.0);
    }

    #[test]
    fn from_gram_rejects_upper_blocks() {
        let mut c = Gram4::identity(2, 1).unwrap();
        c.set(0, 0, 1, 0, 0.5);
        assert!(matches!(
            BlockTriangularSystem::from_gram(c),
            Err(Error::NotBlockTriangular { row_step: 0, col_step: 1 })
        ));
    }

    #[test]
    fn from_gram_rejects_singular_diagonal() {
        let mut c = Gram4::identity(2, 2).unwrap();
        // Make block t=1 rank deficient: second row equal to the first.
        c.set(1, 0, 1, 0, 1.0);
        c.set(1, 0, 1, 1, 2.0);
        c.set(1, 1, 1, 0, 1.0);
        c.set(1, 1, 1, 1, 2.0);
        assert!(matches!(
            BlockTriangularSystem::from_gram(c),
            Err(Error::SingularBlock { step: 1 })
        ));
    }

    #[test]
    fn solve_wu_with_identity_inverse_returns_inputs() {
        let (l, r, d) = (3, 2, 4);
        let a = filler(l, r, d, 0.4);
        let a_tilde = filler(l, r, d, 3.0);
        let id = Gram4::identity(l, r).unwrap();
        let coeffs = solve_wu(&id, &a, &a_tilde).unwrap();
        assert_eq!(coeffs.w().data(), a.data());
        assert_eq!(coeffs.u().data(), a_tilde.data());
    }

    #[test]
    fn assemble_with_zero_b_returns_s0() {
        let (l, r, d) = (3, 2, 4);
        let inputs = ChunkInputs::new(
            filler(l, r, d, 0.1),
            filler(l, r, d, 0.2),
            Tensor3::zeros(l, r, d).unwrap(),
        )
        .unwrap();
        let s0 = StateMatrix::from_vec(d, (0..16).map(|x| x as f64).collect()).unwrap();
        let s1 = solve_chunk(&s0, &inputs).unwrap();
        assert_eq!(s1, s0);
    }

    #[test]
    fn single_step_matches_recurrence_step() {
        let (l, r, d) = (1, 2, 4);
        let inputs = ChunkInputs::new(
            filler(l, r, d, 0.1),
            filler(l, r, d, 1.2),
            filler(l, r, d, 2.3),
        )
        .unwrap();
        let s0 = StateMatrix::from_vec(d, (0..16).map(|x| (x as f64 * 0.37).cos()).collect())
            .unwrap();
        let via_chunk = solve_chunk(&s0, &inputs).unwrap();
        let via_step = crate::recurrence::run(&s0, &inputs).unwrap();
        for row in 0..d {
            for c in 0..d {
                assert!((via_chunk.get(row, c) - via_step.get(row, c)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn affine_flow_trivial_cases() {
        let (l, r, d) = (3, 1, 3);
        // B = 0 gives the identity flow.
        let inputs = ChunkInputs::new(
            filler(l, r, d, 0.3),
            filler(l, r, d, 0.6),
            Tensor3::zeros(l, r, d).unwrap(),
        )
        .unwrap();
        let flow = chunk_affine_flow(&inputs).unwrap();
        assert_eq!(flow.p(), &StateMatrix::identity(d).unwrap());
        assert_eq!(flow.q(), &StateMatrix::zeros(d).unwrap());

        // A~ = 0 gives Q = 0.
        let inputs = ChunkInputs::new(
            filler(l, r, d, 0.3),
            Tensor3::zeros(l, r, d).unwrap(),
            filler(l, r, d, 0.9),
        )
        .unwrap();
        let flow = chunk_affine_flow(&inputs).unwrap();
        assert!(flow.q().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn affine_flow_consistent_with_assemble() {
        let (l, r, d) = (5, 2, 3);
        let inputs = ChunkInputs::new(
            filler(l, r, d, 0.5),
            filler(l, r, d, 1.5),
            filler(l, r, d, 2.5),
        )
        .unwrap();
        let flow = chunk_affine_flow(&inputs).unwrap();
        for trial in 0..5 {
            let s0 = StateMatrix::from_vec(
                d,
                (0..9).map(|x| ((x + trial * 11) as f64 * 0.61).sin()).collect(),
            )
            .unwrap();
            let direct = solve_chunk(&s0, &inputs).unwrap();
            let via_flow = flow.apply(&s0).unwrap();
            for row in 0..d {
                for c in 0..d {
                    assert!((direct.get(row, c) - via_flow.get(row, c)).abs() < 1e-12);
                }
            }
        }
    }
}
