//! Stationary distribution of the buffer-truncated chain: arrivals that
//! would push a slot above the cap become self-loops (censoring), the
//! fixed point is found by power iteration over the sparse kernel, and
//! the stationary aggregates converge to their closed forms as the cap
//! grows. The solver is an exact oracle for small instances; large state
//! spaces stay with the analytic and Monte Carlo paths.

use thiserror::Error;

use crate::model::{classify, dtmc_transitions, OccupancyState, SwitchParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("unstable regime: the solver targets k > n, got k={k} n={n}")]
    UnstableRegime { k: u32, n: u32 },
    #[error("cap {cap} is below n = {n}")]
    CapTooSmall { cap: u64, n: u32 },
    #[error("state space too large: {states} states (practical cap {cap})")]
    DimensionTooLarge { states: u64, cap: u64 },
    #[error("no convergence: residual {residual:e} after {sweeps} sweeps")]
    NoConvergence { residual: f64, sweeps: u64 },
}

/// Buffer-truncated kernel in sparse row form over the dense index set
/// `{0..cap}^(n-1)`.
#[derive(Debug, Clone)]
pub struct TruncatedChain {
    params: SwitchParams,
    cap: u64,
    dims: usize,
    rows: Vec<Vec<(u32, f64)>>,
}

const MAX_STATES: u64 = 4_000_000;

impl TruncatedChain {
    pub fn params(&self) -> &SwitchParams {
        &self.params
    }

    pub fn cap(&self) -> u64 {
        self.cap
    }

    pub fn state_count(&self) -> usize {
        self.rows.len()
    }

    pub fn index_of(&self, state: &OccupancyState) -> usize {
        let mut idx = 0usize;
        for &v in state.entries() {
            idx = idx * (self.cap as usize + 1) + v as usize;
        }
        idx
    }

    pub fn state_of(&self, mut idx: usize) -> OccupancyState {
        let base = self.cap as usize + 1;
        let mut v = vec![0u64; self.dims];
        for slot in v.iter_mut().rev() {
            *slot = (idx % base) as u64;
            idx /= base;
        }
        OccupancyState::new(v)
    }

    pub fn row(&self, idx: usize) -> &[(u32, f64)] {
        &self.rows[idx]
    }
}

/// Build the truncated kernel: identical to the exact one-step law
/// except that arrivals beyond the cap fold into self-loops.
pub fn build(params: &SwitchParams, cap: u64) -> Result<TruncatedChain, SolveError> {
    let (k, n) = (params.k(), params.n());
    if k <= n {
        return Err(SolveError::UnstableRegime { k, n });
    }
    if cap < u64::from(n) {
        return Err(SolveError::CapTooSmall { cap, n });
    }
    let dims = params.dims();
    let states = (cap + 1).pow(dims as u32);
    if states > MAX_STATES || (dims > 4 && cap > 30) {
        return Err(SolveError::DimensionTooLarge {
            states,
            cap: MAX_STATES,
        });
    }

    let mut chain = TruncatedChain {
        params: *params,
        cap,
        dims,
        rows: Vec::with_capacity(states as usize),
    };
    for idx in 0..states as usize {
        let state = chain.state_of(idx);
        let list = dtmc_transitions(params, &state).expect("in-box state is valid");
        let mut row: Vec<(u32, f64)> = Vec::with_capacity(list.entries().len());
        let mut self_loop = 0.0f64;
        for (target, w) in list.entries() {
            if target.entries().iter().any(|&v| v > cap) {
                self_loop += w;
            } else {
                row.push((chain.index_of(target) as u32, *w));
            }
        }
        if self_loop > 0.0 {
            row.push((idx as u32, self_loop));
        }
        chain.rows.push(row);
    }
    Ok(chain)
}

/// Stationary vector with the aggregates read off it.
#[derive(Debug, Clone)]
pub struct StationaryResult {
    pub pi: Vec<f64>,
    /// Final fixed-point defect, one-norm of `pi P - pi`.
    pub residual: f64,
    pub sweeps: u64,
    /// Mass of the swap-ready region.
    pub pi_r0: f64,
    pub expected_qubits: f64,
    /// Swap-ready share of the expected occupancy.
    pub aggregate_a: f64,
    /// Partially-empty share of the expected occupancy.
    pub aggregate_b: f64,
    pub cap_used: u64,
    /// Probability of sitting on the truncation boundary; the visible
    /// part of the censoring bias.
    pub boundary_mass: f64,
}

/// Power iteration to the fixed point of `pi = pi P`, with periodic
/// renormalization; stops when the one-norm defect falls under `tol`.
///
/// Every transition adds one arrival modulo n (a swap consumes n-1), so
/// the chain is periodic with period n and the bare iteration would
/// slosh mass between the phase classes forever. Iterating the damped
/// kernel (P + I)/2 removes the periodicity without moving the fixed
/// point; the reported residual is still measured against P itself.
pub fn stationary(
    chain: &TruncatedChain,
    tol: f64,
    max_sweeps: u64,
) -> Result<StationaryResult, SolveError> {
    let states = chain.state_count();
    let mut pi = vec![1.0 / states as f64; states];
    let mut next = vec![0.0f64; states];
    let mut residual = f64::INFINITY;
    let mut sweeps = 0u64;
    while sweeps < max_sweeps {
        next.iter_mut().for_each(|v| *v = 0.0);
        for (idx, mass) in pi.iter().enumerate() {
            if *mass == 0.0 {
                continue;
            }
            for (target, w) in &chain.rows[idx] {
                next[*target as usize] += mass * w;
            }
        }
        sweeps += 1;
        residual = pi.iter().zip(next.iter()).map(|(a, b)| (a - b).abs()).sum();
        let mut total = 0.0f64;
        for (n, p) in next.iter_mut().zip(pi.iter()) {
            *n = 0.5 * (*n + *p);
            total += *n;
        }
        next.iter_mut().for_each(|v| *v /= total);
        std::mem::swap(&mut pi, &mut next);
        if residual <= tol {
            break;
        }
    }
    if residual > tol {
        return Err(SolveError::NoConvergence { residual, sweeps });
    }

    let mut pi_r0 = 0.0;
    let mut expected_qubits = 0.0;
    let mut aggregate_a = 0.0;
    let mut aggregate_b = 0.0;
    let mut boundary_mass = 0.0;
    let dims = chain.dims;
    for (idx, mass) in pi.iter().enumerate() {
        let state = chain.state_of(idx);
        let total = state.total() as f64;
        let zeros = classify(&state);
        expected_qubits += mass * total;
        if zeros == 0 {
            pi_r0 += mass;
            aggregate_a += mass * total;
        } else if zeros < dims {
            aggregate_b += mass * total;
        }
        if state.entries().contains(&chain.cap) {
            boundary_mass += mass;
        }
    }
    Ok(StationaryResult {
        pi,
        residual,
        sweeps,
        pi_r0,
        expected_qubits,
        aggregate_a,
        aggregate_b,
        cap_used: chain.cap,
        boundary_mass,
    })
}

/// Stationary balance defect of a test function: the stationary
/// expectation of its one-step change under the exact (untruncated)
/// kernel. Exactly zero for constants; shrinks with the cap otherwise.
pub fn balance_residual(
    chain: &TruncatedChain,
    pi: &[f64],
    test_fn: impl Fn(&OccupancyState) -> f64,
) -> f64 {
    let mut acc = 0.0f64;
    for (idx, mass) in pi.iter().enumerate() {
        if *mass == 0.0 {
            continue;
        }
        let state = chain.state_of(idx);
        let fx = test_fn(&state);
        let step: f64 = dtmc_transitions(chain.params(), &state)
            .expect("in-box state is valid")
            .entries()
            .iter()
            .map(|(y, w)| w * (test_fn(y) - fx))
            .sum();
        acc += mass * step;
    }
    acc.abs()
}

/// One row of a cap-refinement sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub cap: u64,
    pub pi_r0: f64,
    pub expected_qubits: f64,
    pub aggregate_a: f64,
    pub aggregate_b: f64,
    pub boundary_mass: f64,
    pub residual: f64,
}

/// Solve at each cap in turn; errors propagate from the first failure.
pub fn convergence_sweep(
    params: &SwitchParams,
    caps: &[u64],
    tol: f64,
    max_sweeps: u64,
) -> Result<Vec<SweepRow>, SolveError> {
    let mut rows = Vec::with_capacity(caps.len());
    for &cap in caps {
        let chain = build(params, cap)?;
        let sol = stationary(&chain, tol, max_sweeps)?;
        rows.push(SweepRow {
            cap,
            pi_r0: sol.pi_r0,
            expected_qubits: sol.expected_qubits,
            aggregate_a: sol.aggregate_a,
            aggregate_b: sol.aggregate_b,
            boundary_mass: sol.boundary_mass,
            residual: sol.residual,
        });
    }
    Ok(rows)
}
