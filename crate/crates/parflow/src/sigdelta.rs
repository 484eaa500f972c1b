//! Wavefront chunk solver.
//!
//! Computes the same coefficient tensors as the tensor-inversion backend by
//! sweeping the two-parameter grid
//!
//! ```text
//! V(0, k)     = A_k
//! V(n, n)     = V(n-1, n) + V(n-1, n-1) B_{n-1}^T A_n
//! V(n, k)     = V(n-1, k) + V(n, k-1) - V(n-1, k-1)
//!               + V(n-1, n-1) B_{n-1}^T (A_k - A_{k-1})        (n < k)
//! ```
//!
//! whose diagonal `V(k, k)` solves `W_k = A_k + sum_{m<k} W_m B_m^T A_k`.
//! Cells are processed along antidiagonals `n + k = i`: no cell depends on
//! another cell of its own wave, so a wave may run in any order (or fully in
//! parallel) without changing a single output bit. `W` and `U` share the
//! recursion with different boundary rows and are carried jointly on a
//! trailing axis of size two.

use crate::counters::{self, ScalarBuf};
use crate::error::{Error, Result};
use crate::tensor::{ChunkInputs, StateMatrix, Tensor3};
use crate::tensorinv::{self, SolvedCoefficients};

/// Processing order of the cells inside one antidiagonal wave. Outputs are
/// bitwise identical for every order; the enum exists to let tests pin that
/// contract down.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveOrder {
    Ascending,
    Descending,
}

/// The waves of the triangular grid `0 <= n <= k < L`: wave `i` holds the
/// cells with `n + k = i`, giving `2L - 1` waves. Every dependency of a cell
/// sits in a strictly earlier wave.
pub fn antidiagonal_schedule(steps: usize) -> Vec<Vec<(usize, usize)>> {
    if steps == 0 {
        return Vec::new();
    }
    let mut waves = Vec::with_capacity(2 * steps - 1);
    for i in 0..(2 * steps - 1) {
        let lo = i.saturating_sub(steps - 1);
        let hi = i / 2;
        waves.push((lo..=hi).map(|n| (n, i - n)).collect());
    }
    waves
}

/// Solve for `W` and `U` along antidiagonal wavefronts.
pub fn wavefront_solve(a: &Tensor3, a_tilde: &Tensor3, b: &Tensor3) -> Result<SolvedCoefficients> {
    wavefront_solve_ordered(a, a_tilde, b, WaveOrder::Ascending)
}

/// [`wavefront_solve`] with an explicit within-wave processing order.
pub fn wavefront_solve_ordered(
    a: &Tensor3,
    a_tilde: &Tensor3,
    b: &Tensor3,
    order: WaveOrder,
) -> Result<SolvedCoefficients> {
    if a.dims() != a_tilde.dims() || a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!(
            "wavefront_solve: A {:?}, A~ {:?}, B {:?}",
            a.dims(),
            a_tilde.dims(),
            b.dims()
        )));
    }
    let (l, r, d) = a.dims();
    if l == 0 {
        return SolvedCoefficients::new(Tensor3::zeros(0, r, d)?, Tensor3::zeros(0, r, d)?);
    }

    let mut madds: u64 = 0;

    // Gram corrections, kept for the whole sweep as an (L, L, R, R) tensor:
    // gram_diff[m][k] = B_m^T (A_k - A_{k-1}), read by interior cells with
    // m <= k - 2.
    let mut gram_diff = ScalarBuf::zeros(l * l * r * r);
    for k in 2..l {
        for m in 0..=(k - 2) {
            let base = (m * l + k) * r * r;
            for alpha in 0..r {
                for beta in 0..r {
                    let mut acc = 0.0;
                    for t in 0..d {
                        acc += b.get(m, alpha, t) * (a.get(k, beta, t) - a.get(k - 1, beta, t));
                    }
                    gram_diff[base + alpha * r + beta] = acc;
                }
            }
            madds += (r * r * d) as u64;
        }
    }

    // Diagonal grams: g_diag[m] = B_m^T A_{m+1}.
    let mut g_diag = ScalarBuf::zeros(l.saturating_sub(1) * r * r);
    for m in 0..l.saturating_sub(1) {
        let base = m * r * r;
        for alpha in 0..r {
            for beta in 0..r {
                let mut acc = 0.0;
                for t in 0..d {
                    acc += b.get(m, alpha, t) * a.get(m + 1, beta, t);
                }
                g_diag[base + alpha * r + beta] = acc;
            }
        }
        madds += (r * r * d) as u64;
    }

    // Rolling antidiagonal buffers and the committed diagonal slices. Each
    // slot `n` holds the stacked cell value as R rows of d pairs (W, U).
    let stride = r * d * 2;
    let mut grid = WavefrontGrid {
        prev_prev: ScalarBuf::zeros(l * stride),
        prev: ScalarBuf::zeros(l * stride),
        cur: ScalarBuf::zeros(l * stride),
        committed: ScalarBuf::zeros(l * stride),
    };

    for wave in antidiagonal_schedule(l) {
        grid.rotate();
        let run_cell = |grid: &mut WavefrontGrid, madds: &mut u64, n: usize, k: usize| {
            let cell_kind = if n == 0 {
                CellKind::Boundary
            } else if n == k {
                CellKind::Diagonal
            } else {
                CellKind::Interior
            };
            match cell_kind {
                CellKind::Boundary => {
                    let target = slot_mut(&mut grid.cur, n, stride);
                    for i in 0..r {
                        for m in 0..d {
                            target[(i * d + m) * 2] = a.get(k, i, m);
                            target[(i * d + m) * 2 + 1] = a_tilde.get(k, i, m);
                        }
                    }
                }
                CellKind::Diagonal => {
                    let src = slot(&grid.prev, n - 1, stride);
                    let diag_prev = slot(&grid.committed, n - 1, stride);
                    let gram = &g_diag[(n - 1) * r * r..n * r * r];
                    let target = slot_mut(&mut grid.cur, n, stride);
                    accumulate_cell(target, &[(src, 1.0)], diag_prev, gram, r, d);
                    *madds += 2 * (d * r * r) as u64;
                }
                CellKind::Interior => {
                    let up = slot(&grid.prev, n - 1, stride);
                    let left = slot(&grid.prev, n, stride);
                    let corner = slot(&grid.prev_prev, n - 1, stride);
                    let diag_prev = slot(&grid.committed, n - 1, stride);
                    let base = ((n - 1) * l + k) * r * r;
                    let gram = &gram_diff[base..base + r * r];
                    let target = slot_mut(&mut grid.cur, n, stride);
                    accumulate_cell(
                        target,
                        &[(up, 1.0), (left, 1.0), (corner, -1.0)],
                        diag_prev,
                        gram,
                        r,
                        d,
                    );
                    *madds += 2 * (d * r * r) as u64;
                }
            }
            if n == k {
                let (cur, committed) = (&grid.cur, &mut grid.committed);
                committed[n * stride..(n + 1) * stride]
                    .copy_from_slice(&cur[n * stride..(n + 1) * stride]);
            }
        };
        match order {
            WaveOrder::Ascending => {
                for &(n, k) in &wave {
                    run_cell(&mut grid, &mut madds, n, k);
                }
            }
            WaveOrder::Descending => {
                for &(n, k) in wave.iter().rev() {
                    run_cell(&mut grid, &mut madds, n, k);
                }
            }
        }
    }
    counters::add_madds(madds);

    // Unstack the committed diagonals into W and U.
    let mut w = Tensor3::zeros(l, r, d)?;
    let mut u = Tensor3::zeros(l, r, d)?;
    for n in 0..l {
        let src = slot(&grid.committed, n, stride);
        for i in 0..r {
            for m in 0..d {
                w.set(n, i, m, src[(i * d + m) * 2]);
                u.set(n, i, m, src[(i * d + m) * 2 + 1]);
            }
        }
    }
    SolvedCoefficients::new(w, u)
}

enum CellKind {
    Boundary,
    Diagonal,
    Interior,
}

struct WavefrontGrid {
    prev_prev: ScalarBuf,
    prev: ScalarBuf,
    cur: ScalarBuf,
    committed: ScalarBuf,
}

impl WavefrontGrid {
    fn rotate(&mut self) {
        std::mem::swap(&mut self.prev_prev, &mut self.prev);
        std::mem::swap(&mut self.prev, &mut self.cur);
    }
}

#[inline]
fn slot(buf: &[f64], n: usize, stride: usize) -> &[f64] {
    &buf[n * stride..(n + 1) * stride]
}

#[inline]
fn slot_mut(buf: &mut [f64], n: usize, stride: usize) -> &mut [f64] {
    &mut buf[n * stride..(n + 1) * stride]
}

/// `target = sum_j coeff_j * src_j + diag_prev * gram`, where `diag_prev`
/// acts as the `d x R` matrix stored in the slot and `gram` is `R x R`;
/// applied to both stacked planes.
fn accumulate_cell(
    target: &mut [f64],
    sources: &[(&[f64], f64)],
    diag_prev: &[f64],
    gram: &[f64],
    r: usize,
    d: usize,
) {
    for beta in 0..r {
        for m in 0..d {
            for plane in 0..2 {
                let idx = (beta * d + m) * 2 + plane;
                let mut acc = 0.0;
                for &(src, coeff) in sources {
                    acc += coeff * src[idx];
                }
                for alpha in 0..r {
                    acc += diag_prev[(alpha * d + m) * 2 + plane] * gram[alpha * r + beta];
                }
                target[idx] = acc;
            }
        }
    }
}

/// Final state from wavefront coefficients; shares the assembly formula with
/// the tensor-inversion backend.
pub fn assemble_state_sig(
    s0: &StateMatrix,
    coeffs: &SolvedCoefficients,
    b: &Tensor3,
) -> Result<StateMatrix> {
    tensorinv::assemble_state(s0, coeffs, b)
}

/// Single-chunk final state via the wavefront backend.
pub fn solve_chunk(s0: &StateMatrix, inputs: &ChunkInputs) -> Result<StateMatrix> {
    let coeffs = wavefront_solve(inputs.a(), inputs.a_tilde(), inputs.b())?;
    assemble_state_sig(s0, &coeffs, inputs.b())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filler(l: usize, r: usize, d: usize, seed: f64) -> Tensor3 {
        let data = (0..l * r * d)
            .map(|x| ((x as f64) * 0.83 + seed).sin() * 0.4)
            .collect();
        Tensor3::from_vec(l, r, d, data).unwrap()
    }

    #[test]
    fn schedule_l1_single_wave() {
        assert_eq!(antidiagonal_schedule(1), vec![vec![(0, 0)]]);
    }

    #[test]
    fn schedule_l3_enumeration() {
        assert_eq!(
            antidiagonal_schedule(3),
            vec![
                vec![(0, 0)],
                vec![(0, 1)],
                vec![(0, 2), (1, 1)],
                vec![(1, 2)],
                vec![(2, 2)],
            ]
        );
    }

    #[test]
    fn schedule_dependencies_lie_in_earlier_waves() {
        let l = 16;
        let waves = antidiagonal_schedule(l);
        assert_eq!(waves.len(), 2 * l - 1);
        let wave_of = |n: usize, k: usize| n + k;
        for (i, wave) in waves.iter().enumerate() {
            for &(n, k) in wave {
                assert!(n <= k && k < l);
                assert_eq!(wave_of(n, k), i);
                if n > 0 {
                    // (n-1, k), (n, k-1), (n-1, k-1) and the committed
                    // diagonal (n-1, n-1) must all be strictly earlier.
                    assert!(wave_of(n - 1, k) < i);
                    assert!(wave_of(n, k - 1) < i);
                    assert!(wave_of(n - 1, k - 1) < i);
                    assert!(wave_of(n - 1, n - 1) < i);
                }
            }
        }
        // Exhaustive: every triangular cell appears exactly once.
        let total: usize = waves.iter().map(Vec::len).sum();
        assert_eq!(total, l * (l + 1) / 2);
    }

    #[test]
    fn zero_b_returns_inputs() {
        let (l, r, d) = (5, 2, 3);
        let a = filler(l, r, d, 0.1);
        let a_tilde = filler(l, r, d, 2.2);
        let b = Tensor3::zeros(l, r, d).unwrap();
        let coeffs = wavefront_solve(&a, &a_tilde, &b).unwrap();
        for k in 0..l {
            for i in 0..r {
                for m in 0..d {
                    assert!((coeffs.w().get(k, i, m) - a.get(k, i, m)).abs() < 1e-15);
                    assert!((coeffs.u().get(k, i, m) - a_tilde.get(k, i, m)).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn l1_returns_first_slices() {
        let (r, d) = (2, 4);
        let a = filler(1, r, d, 0.7);
        let a_tilde = filler(1, r, d, 1.7);
        let b = filler(1, r, d, 2.7);
        let coeffs = wavefront_solve(&a, &a_tilde, &b).unwrap();
        assert_eq!(coeffs.w().data(), a.data());
        assert_eq!(coeffs.u().data(), a_tilde.data());
    }

    #[test]
    fn matches_tensorinv_on_seeded_inputs() {
        let (l, r, d) = (16, 2, 4);
        let a = filler(l, r, d, 0.3);
        let a_tilde = filler(l, r, d, 1.3);
        let b = filler(l, r, d, 2.3);
        let sig = wavefront_solve(&a, &a_tilde, &b).unwrap();
        let sys = tensorinv::build_system(&a, &b).unwrap();
        let dinv = tensorinv::invert_block_triangular(&sys).unwrap();
        let ti = tensorinv::solve_wu(&dinv, &a, &a_tilde).unwrap();
        let scale = ti.w().max_abs().max(1.0);
        for k in 0..l {
            for i in 0..r {
                for m in 0..d {
                    assert!(
                        (sig.w().get(k, i, m) - ti.w().get(k, i, m)).abs() <= 1e-9 * scale,
                        "W mismatch at ({k},{i},{m})"
                    );
                    assert!(
                        (sig.u().get(k, i, m) - ti.u().get(k, i, m)).abs() <= 1e-9 * scale,
                        "U mismatch at ({k},{i},{m})"
                    );
                }
            }
        }
    }

    #[test]
    fn within_wave_order_is_bitwise_irrelevant() {
        let (l, r, d) = (12, 3, 4);
        let a = filler(l, r, d, 0.9);
        let a_tilde = filler(l, r, d, 1.9);
        let b = filler(l, r, d, 2.9);
        let asc = wavefront_solve_ordered(&a, &a_tilde, &b, WaveOrder::Ascending).unwrap();
        let desc = wavefront_solve_ordered(&a, &a_tilde, &b, WaveOrder::Descending).unwrap();
        assert_eq!(asc.w().data(), desc.w().data());
        assert_eq!(asc.u().data(), desc.u().data());
    }

    #[test]
    fn l0_yields_s0_after_assembly() {
        let (r, d) = (2, 3);
        let empty = Tensor3::zeros(0, r, d).unwrap();
        let coeffs = wavefront_solve(&empty, &empty, &empty).unwrap();
        let s0 = StateMatrix::identity(d).unwrap();
        let s1 = assemble_state_sig(&s0, &coeffs, &empty).unwrap();
        assert_eq!(s1, s0);
    }
}
