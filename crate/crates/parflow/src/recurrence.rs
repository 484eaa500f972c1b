//! Sequential reference implementation of the discrete recurrence
//!
//! ```text
//! S_{k+1} = S_k + S_k A_k B_k^T + A~_k B_k^T
//! ```
//!
//! Every other backend in the crate is tested against [`run`]. The module
//! also houses the rank-1 delta-rule parameterization and the memory
//! readout `o = S q`.

use crate::counters;
use crate::error::{Error, Result};
use crate::tensor::{ChunkInputs, StateMatrix, StepSlice, Tensor3};

/// One update `S + S A_k B_k^T + A~_k B_k^T`. Counts `3 d^2 R` multiply-adds.
pub fn step(
    s: &StateMatrix,
    a_k: StepSlice<'_>,
    a_tilde_k: StepSlice<'_>,
    b_k: StepSlice<'_>,
) -> Result<StateMatrix> {
    let d = s.dim();
    let r = a_k.rank();
    if a_k.dim() != d || a_tilde_k.dim() != d || b_k.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "step: state dim {d} vs slices ({}, {}, {})",
            a_k.dim(),
            a_tilde_k.dim(),
            b_k.dim()
        )));
    }
    if a_tilde_k.rank() != r || b_k.rank() != r {
        return Err(Error::DimensionMismatch(format!(
            "step: slice ranks ({r}, {}, {})",
            a_tilde_k.rank(),
            b_k.rank()
        )));
    }

    // T = S A_k, a d x R intermediate; row i of the step slice is column i
    // of the d x R driver matrix.
    let mut t = vec![0.0; d * r];
    for row in 0..d {
        let s_row = s.row(row);
        for i in 0..r {
            let a_col = a_k.row(i);
            let mut acc = 0.0;
            for m in 0..d {
                acc += s_row[m] * a_col[m];
            }
            t[row * r + i] = acc;
        }
    }

    // S' = S + T B_k^T + A~_k B_k^T.
    let mut out = s.clone();
    for row in 0..d {
        let t_row = &t[row * r..(row + 1) * r];
        for i in 0..r {
            let coeff = t_row[i];
            let b_col = b_k.row(i);
            let a_tilde_col = a_tilde_k.row(i);
            for c in 0..d {
                let v = out.get(row, c) + coeff * b_col[c] + a_tilde_col[row] * b_col[c];
                out.set(row, c, v);
            }
        }
    }
    counters::add_madds(3 * (d * d * r) as u64);
    Ok(out)
}

/// Fold [`step`] over all `L` steps. `L = 0` returns `S0` unchanged.
pub fn run(s0: &StateMatrix, inputs: &ChunkInputs) -> Result<StateMatrix> {
    check_state_dim(s0, inputs)?;
    let mut s = s0.clone();
    for k in 0..inputs.steps() {
        s = step(&s, inputs.a().step(k), inputs.a_tilde().step(k), inputs.b().step(k))?;
    }
    Ok(s)
}

/// As [`run`], also collecting all `L + 1` states including `S0`. Trajectory
/// capture is opt-in: the plain fold stays `O(d^2)` memory.
pub fn run_with_trajectory(
    s0: &StateMatrix,
    inputs: &ChunkInputs,
) -> Result<(StateMatrix, Vec<StateMatrix>)> {
    check_state_dim(s0, inputs)?;
    let mut trajectory = Vec::with_capacity(inputs.steps() + 1);
    let mut s = s0.clone();
    trajectory.push(s.clone());
    for k in 0..inputs.steps() {
        s = step(&s, inputs.a().step(k), inputs.a_tilde().step(k), inputs.b().step(k))?;
        trajectory.push(s.clone());
    }
    Ok((s, trajectory))
}

fn check_state_dim(s0: &StateMatrix, inputs: &ChunkInputs) -> Result<()> {
    if s0.dim() != inputs.dim() {
        return Err(Error::DimensionMismatch(format!(
            "run: state dim {} vs inputs dim {}",
            s0.dim(),
            inputs.dim()
        )));
    }
    Ok(())
}

/// Memory readout `o = S q`.
pub fn readout(s: &StateMatrix, q: &[f64]) -> Result<Vec<f64>> {
    s.matvec(q)
}

// ---------------------------------------------------------------------------
// DeltaNet parameterization
// ---------------------------------------------------------------------------

/// Per-step keys, values, learning rates and optional queries of the rank-1
/// delta rule `S_t = S_{t-1} - b_t S_{t-1} k_t k_t^T + b_t v_t k_t^T`.
#[derive(Debug, Clone)]
pub struct DeltaNetParams {
    steps: usize,
    dim: usize,
    keys: Vec<f64>,
    values: Vec<f64>,
    betas: Vec<f64>,
    queries: Option<Vec<f64>>,
}

impl DeltaNetParams {
    pub fn new(
        steps: usize,
        dim: usize,
        keys: Vec<f64>,
        values: Vec<f64>,
        betas: Vec<f64>,
        queries: Option<Vec<f64>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmptySize("dimension"));
        }
        let want = steps * dim;
        for (name, v) in [("keys", &keys), ("values", &values)] {
            if v.len() != want {
                return Err(Error::DataLength { expected: want, got: v.len() });
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite(if name == "keys" { "keys" } else { "values" }));
            }
        }
        if betas.len() != steps {
            return Err(Error::DataLength { expected: steps, got: betas.len() });
        }
        if !betas.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("betas"));
        }
        if let Some(q) = &queries {
            if q.len() != want {
                return Err(Error::DataLength { expected: want, got: q.len() });
            }
            if !q.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite("queries"));
            }
        }
        Ok(DeltaNetParams { steps, dim, keys, values, betas, queries })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn key(&self, t: usize) -> &[f64] {
        &self.keys[t * self.dim..(t + 1) * self.dim]
    }

    pub fn value(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn query(&self, t: usize) -> Option<&[f64]> {
        self.queries.as_ref().map(|q| &q[t * self.dim..(t + 1) * self.dim])
    }
}

/// Map rank-1 delta-rule parameters onto the drivers:
/// `A_t = b_t k_t`, `A~_t = -b_t v_t`, `B_t = -k_t`.
pub fn deltanet_params_to_inputs(p: &DeltaNetParams) -> ChunkInputs {
    let (l, d) = (p.steps, p.dim);
    let mut a = Tensor3::zeros(l, 1, d).expect("dims valid");
    let mut a_tilde = Tensor3::zeros(l, 1, d).expect("dims valid");
    let mut b = Tensor3::zeros(l, 1, d).expect("dims valid");
    for t in 0..l {
        let beta = p.beta(t);
        let key = p.key(t);
        let value = p.value(t);
        for m in 0..d {
            a.set(t, 0, m, beta * key[m]);
            a_tilde.set(t, 0, m, -beta * value[m]);
            b.set(t, 0, m, -key[m]);
        }
    }
    ChunkInputs::new(a, a_tilde, b).expect("tensors share dims by construction")
}
