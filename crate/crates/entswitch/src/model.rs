//! Switch chain model: parameters, occupancy states, the state-space
//! partition, and the exact one-step kernels of the chain in both
//! continuous time (rates) and uniformized discrete time (probabilities).
//!
//! The chain tracks, per tracked link slot, the number of stored qubits.
//! A state with no empty slot is swap-ready: the next arrival on a fresh
//! link triggers a swap attempt and the state drops by one in every slot.
//! Every other transition is a single arrival on one slot. The total exit
//! rate is `k*mu` in every state, which is what makes uniformization at
//! rate `k*mu` exact.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("state has {found} slots, expected n-1 = {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("state has an empty slot and lies outside S")]
    NotInS,
    #[error("target state is not reachable in one step")]
    UnreachableTarget,
}

/// Model parameters: `k` identical links feeding a switch that fuses
/// `n`-partite states, per-link generation rate `mu`, and swap success
/// probability `q`.
///
/// Construction is strict: `3 <= n <= k`, `mu > 0`, `0 <= q <= 1`.
/// Misconfigured parameters fail loudly because the downstream formulas
/// change meaning outside this domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchParams {
    k: u32,
    n: u32,
    mu: f64,
    q: f64,
}

impl SwitchParams {
    pub fn new(k: u32, n: u32, mu: f64, q: f64) -> Result<Self, ModelError> {
        if n < 3 {
            return Err(ModelError::InvalidParams(format!(
                "n must be at least 3, got {n}"
            )));
        }
        if k < n {
            return Err(ModelError::InvalidParams(format!(
                "k must be at least n, got k={k} n={n}"
            )));
        }
        if !mu.is_finite() || mu <= 0.0 {
            return Err(ModelError::InvalidParams(format!(
                "mu must be a positive real, got {mu}"
            )));
        }
        if !q.is_finite() || !(0.0..=1.0).contains(&q) {
            return Err(ModelError::InvalidParams(format!(
                "q must lie in [0, 1], got {q}"
            )));
        }
        Ok(Self { k, n, mu, q })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Number of tracked link slots, `n - 1`.
    pub fn dims(&self) -> usize {
        (self.n - 1) as usize
    }

    /// Total exit rate `k*mu`, identical in every state.
    pub fn uniformization_rate(&self) -> f64 {
        f64::from(self.k) * self.mu
    }
}

/// Occupancy vector: stored qubits per tracked link slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OccupancyState(Vec<u64>);

impl OccupancyState {
    pub fn new(entries: Vec<u64>) -> Self {
        OccupancyState(entries)
    }

    pub fn entries(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total number of stored qubits, `|x|`.
    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn zero_count(&self) -> usize {
        self.0.iter().filter(|&&v| v == 0).count()
    }

    pub fn one_count(&self) -> usize {
        self.0.iter().filter(|&&v| v == 1).count()
    }

    /// True when every slot holds at least one qubit (the set S).
    pub fn is_in_s(&self) -> bool {
        self.0.iter().all(|&v| v >= 1)
    }

    /// State after an arrival on `slot`.
    pub fn with_arrival(&self, slot: usize) -> Self {
        let mut v = self.0.clone();
        v[slot] += 1;
        OccupancyState(v)
    }

    /// State after a swap attempt: one qubit consumed from every slot.
    /// Caller must ensure the state is swap-ready (no empty slot).
    pub fn after_swap(&self) -> Self {
        OccupancyState(self.0.iter().map(|&v| v - 1).collect())
    }
}

impl fmt::Display for OccupancyState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Whether transition weights are one-step probabilities or CTMC rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    Probability,
    Rate,
}

/// Exhaustive non-zero one-step transitions from a state, in deterministic
/// order: the swap/decrement entry first (when present), then one arrival
/// entry per slot in slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionList {
    entries: Vec<(OccupancyState, f64)>,
    mode: WeightMode,
}

impl TransitionList {
    pub(crate) fn new(entries: Vec<(OccupancyState, f64)>, mode: WeightMode) -> Self {
        TransitionList { entries, mode }
    }

    pub fn entries(&self) -> &[(OccupancyState, f64)] {
        &self.entries
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w).sum()
    }

    pub fn weight_to(&self, target: &OccupancyState) -> Option<f64> {
        self.entries
            .iter()
            .find(|(s, _)| s == target)
            .map(|(_, w)| *w)
    }
}

/// Stratum index of a state: the number of empty slots `j`, so that the
/// state belongs to R_j. `j = 0` is the swap-ready region, `j = n-1` is
/// the all-empty state.
pub fn classify(state: &OccupancyState) -> usize {
    state.zero_count()
}

/// Boundary stratum inside S: the number of slots holding exactly one
/// qubit. Zero means the state sits in the interior of S (a swap leaves
/// every slot non-empty); `j >= 1` means a swap would empty `j` slots.
pub fn classify_boundary(state: &OccupancyState) -> Result<usize, ModelError> {
    if !state.is_in_s() {
        return Err(ModelError::NotInS);
    }
    Ok(state.one_count())
}

fn check_dims(params: &SwitchParams, state: &OccupancyState) -> Result<(), ModelError> {
    if state.len() != params.dims() {
        return Err(ModelError::DimensionMismatch {
            expected: params.dims(),
            found: state.len(),
        });
    }
    Ok(())
}

/// One-step probabilities of the uniformized chain.
///
/// Swap-ready states drop by one in every slot with probability
/// `(k-(n-1))/k` and gain an arrival on slot `l` with probability `1/k`.
/// A state with `j >= 1` empty slots gains an arrival on an empty slot
/// with probability `(k-(n-1-j))/(k j)` per empty slot and `1/k` per
/// occupied slot. The all-empty state moves to each unit vector with
/// probability `1/(n-1)`.
pub fn dtmc_transitions(
    params: &SwitchParams,
    state: &OccupancyState,
) -> Result<TransitionList, ModelError> {
    check_dims(params, state)?;
    let k = f64::from(params.k());
    let n = params.n() as usize;
    let dims = params.dims();
    let j = classify(state);

    let mut entries = Vec::with_capacity(dims + 1);
    if j == 0 {
        entries.push((state.after_swap(), (k - (n - 1) as f64) / k));
        for l in 0..dims {
            entries.push((state.with_arrival(l), 1.0 / k));
        }
    } else if j == dims {
        for l in 0..dims {
            entries.push((state.with_arrival(l), 1.0 / dims as f64));
        }
    } else {
        let empty_slot = (k - (n - 1 - j) as f64) / (k * j as f64);
        for l in 0..dims {
            let w = if state.entries()[l] == 0 {
                empty_slot
            } else {
                1.0 / k
            };
            entries.push((state.with_arrival(l), w));
        }
    }
    Ok(TransitionList::new(entries, WeightMode::Probability))
}

/// CTMC rates: the same targets as [`dtmc_transitions`] with every
/// probability multiplied by the uniformization rate `k*mu`. The total
/// always equals `k*mu` exactly because the exit rate is state-independent.
pub fn ctmc_transitions(
    params: &SwitchParams,
    state: &OccupancyState,
) -> Result<TransitionList, ModelError> {
    let rate = params.uniformization_rate();
    let probs = dtmc_transitions(params, state)?;
    let entries = probs
        .entries
        .into_iter()
        .map(|(s, w)| (s, w * rate))
        .collect();
    Ok(TransitionList::new(entries, WeightMode::Rate))
}

/// True iff the step from `state` to `target` is the swap-attempt
/// transition: the source is swap-ready and every slot drops by one.
/// Swap success is a further Bernoulli(q) event owned by the simulator.
pub fn is_swap_transition(
    params: &SwitchParams,
    state: &OccupancyState,
    target: &OccupancyState,
) -> Result<bool, ModelError> {
    let list = dtmc_transitions(params, state)?;
    if list.weight_to(target).is_none() {
        return Err(ModelError::UnreachableTarget);
    }
    Ok(classify(state) == 0 && *target == state.after_swap())
}
