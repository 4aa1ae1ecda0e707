//! Stability machinery for the chain observed on S: the embedded kernel,
//! closed-form and enumerated drift of the quadratic potential, the
//! constants feeding the boundary drift, negative-drift certification,
//! and the non-ergodicity conditions at the critical point.

use thiserror::Error;

use crate::comb::series::MarkFn;
use crate::comb::{self, binom_f64, CombError, SeriesTruncation};
use crate::model::{
    classify_boundary, dtmc_transitions, OccupancyState, SwitchParams, TransitionList, WeightMode,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LyapunovError {
    #[error("state has an empty slot and lies outside S")]
    NotInS,
    #[error("state is not interior: some slot holds exactly one qubit")]
    NotInterior,
    #[error("stratum index {j} outside [{lo}, {hi}]")]
    IndexOutOfRange { j: usize, lo: usize, hi: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Series(#[from] CombError),
    #[error("negative-drift certification failed at {where_}: coefficient {coefficient}")]
    CertificationFailed { where_: String, coefficient: f64 },
}

/// Quadratic potential configuration: `V(x) = sum x_i^2 + b sum_{i<l} x_i x_l`.
///
/// `b >= -2/(n-2)` keeps V nonnegative on S. The certification path uses
/// the parametrization `b = -2(1-alpha)/(n-2)` with `0 < alpha < 1/(n-1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovConfig {
    b: f64,
    alpha: Option<f64>,
}

impl LyapunovConfig {
    pub fn from_cross_term(b: f64, n: u32) -> Result<Self, LyapunovError> {
        if n < 3 {
            return Err(LyapunovError::InvalidConfig(format!(
                "need n >= 3, got {n}"
            )));
        }
        if b < -2.0 / (f64::from(n) - 2.0) {
            return Err(LyapunovError::InvalidConfig(format!(
                "b = {b} makes the potential negative on S (need b >= {})",
                -2.0 / (f64::from(n) - 2.0)
            )));
        }
        Ok(LyapunovConfig { b, alpha: None })
    }

    pub fn from_alpha(alpha: f64, n: u32) -> Result<Self, LyapunovError> {
        if n < 3 {
            return Err(LyapunovError::InvalidConfig(format!(
                "need n >= 3, got {n}"
            )));
        }
        if !(alpha > 0.0 && alpha < 1.0 / (f64::from(n) - 1.0)) {
            return Err(LyapunovError::InvalidConfig(format!(
                "alpha = {alpha} outside (0, 1/(n-1))"
            )));
        }
        let b = -2.0 * (1.0 - alpha) / (f64::from(n) - 2.0);
        Ok(LyapunovConfig {
            b,
            alpha: Some(alpha),
        })
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }
}

/// Potential value `sum x_i^2 + b sum_{i<l} x_i x_l`; nonnegative on S
/// whenever `b >= -2/(n-2)`.
pub fn v_value(state: &OccupancyState, config: &LyapunovConfig) -> f64 {
    let xs = state.entries();
    let sum: f64 = xs.iter().map(|&v| v as f64).sum();
    let sum_sq: f64 = xs.iter().map(|&v| (v * v) as f64).sum();
    // sum_{i<l} x_i x_l = (|x|^2 - sum x_i^2) / 2
    sum_sq + config.b * 0.5 * (sum * sum - sum_sq)
}

/// One-step kernel of the chain observed on S, with the re-entry fan-out
/// truncated at the given cap and a certified bound on the dropped mass.
#[derive(Debug, Clone)]
pub struct EmbeddedKernel {
    pub transitions: TransitionList,
    /// Certified bound on the re-entry mass beyond the truncation cap.
    pub tail_bound: f64,
}

/// One-step transitions of the embedded chain from a state in S.
///
/// Interior states move down by one in every slot with probability
/// `(k-n+1)/k` or gain an arrival with probability `1/k` per slot.
/// Boundary states (some slot at exactly one) replace the decrement by
/// the re-entry fan-out over states reachable after the excursion out of
/// S, weighted by the re-entry law.
pub fn embedded_transitions(
    params: &SwitchParams,
    state: &OccupancyState,
    trunc: &SeriesTruncation,
) -> Result<EmbeddedKernel, LyapunovError> {
    if state.len() != params.dims() {
        return Err(LyapunovError::InvalidParams(format!(
            "state has {} slots, expected {}",
            state.len(),
            params.dims()
        )));
    }
    let j = classify_boundary(state).map_err(|_| LyapunovError::NotInS)?;
    let k = f64::from(params.k());
    let n = params.n();
    let dims = params.dims();
    let down_weight = (k - f64::from(n) + 1.0) / k;

    let mut entries = Vec::new();
    let mut tail_bound = 0.0;
    if j == 0 {
        entries.push((state.after_swap(), down_weight));
    } else {
        // Certify the mass kept by the truncated fan-out before
        // enumerating it.
        let norm = comb::q_star_normalization(params.k(), n, j, trunc)?;
        tail_bound = down_weight * norm.tail_bound;

        let ones: Vec<usize> = (0..dims).filter(|&i| state.entries()[i] == 1).collect();
        let others: Vec<usize> = (0..dims).filter(|&i| state.entries()[i] != 1).collect();
        let base = state.after_swap();
        comb::enumerate_return_vectors(dims, j, trunc.max_total() as u64, &mut |r| {
            let mut target = base.entries().to_vec();
            for (slot, &inc) in ones.iter().zip(&r[..j]) {
                target[*slot] += inc;
            }
            for (slot, &inc) in others.iter().zip(&r[j..]) {
                target[*slot] += inc;
            }
            let w = down_weight * comb::q_star_weight(params.k(), n, j, r);
            entries.push((OccupancyState::new(target), w));
        });
    }
    for l in 0..dims {
        entries.push((state.with_arrival(l), 1.0 / k));
    }
    Ok(EmbeddedKernel {
        transitions: TransitionList::new(entries, WeightMode::Probability),
        tail_bound,
    })
}

/// Drift comparison at one state: the enumerated one-step expectation of
/// the potential change against its closed form.
#[derive(Debug, Clone)]
pub struct DriftReport {
    pub state: OccupancyState,
    pub closed_form: f64,
    pub empirical: f64,
    /// Bound on the enumeration error from truncating the re-entry law.
    pub truncation_tail: f64,
    /// Multiplier of the growing part (total occupancy for interior
    /// states, occupancy beyond the unit slots for boundary states).
    pub coefficient: f64,
    /// Constant part of the closed form.
    pub delta_term: f64,
}

/// Closed-form drift on the interior of S:
/// `[-(k-n)(2+b(n-2))|x| + (n-1)(k-n+2 + b(k-n+1)(n-2)/2)] / k`.
pub fn drift_closed_interior(
    params: &SwitchParams,
    config: &LyapunovConfig,
    state: &OccupancyState,
) -> Result<f64, LyapunovError> {
    let j = classify_boundary(state).map_err(|_| LyapunovError::NotInS)?;
    if j != 0 {
        return Err(LyapunovError::NotInterior);
    }
    let total = state.total() as f64;
    Ok(
        interior_coefficient(params, config) / f64::from(params.k()) * total
            + interior_constant(params, config) / f64::from(params.k()),
    )
}

fn interior_coefficient(params: &SwitchParams, config: &LyapunovConfig) -> f64 {
    let (k, n) = (f64::from(params.k()), f64::from(params.n()));
    -(k - n) * (2.0 + config.b * (n - 2.0))
}

fn interior_constant(params: &SwitchParams, config: &LyapunovConfig) -> f64 {
    let (k, n) = (f64::from(params.k()), f64::from(params.n()));
    (n - 1.0) * (k - n + 2.0 + config.b * (k - n + 1.0) * (n - 2.0) / 2.0)
}

fn check_stratum(n: u32, j: usize) -> Result<(), LyapunovError> {
    if j < 1 || j > (n - 2) as usize {
        return Err(LyapunovError::IndexOutOfRange {
            j,
            lo: 1,
            hi: (n - 2) as usize,
        });
    }
    Ok(())
}

/// Partial harmonic sum `sum_{i=2}^{j+1} 1/(k-n+i)`.
fn harmonic_gap(k: u32, n: u32, j: usize) -> f64 {
    let m = f64::from(k) - f64::from(n);
    (2..=(j + 1)).map(|i| 1.0 / (m + i as f64)).sum()
}

/// Multiplier of the occupancy beyond the unit slots in the boundary
/// drift, divided by k:
/// `[(k-n+1)(2+b(k-1)) sum_{i=2}^{j+1} 1/(k-n+i) - (k-n)(2+b(n-2))] / k`.
pub fn drift_closed_boundary_coefficient(
    params: &SwitchParams,
    config: &LyapunovConfig,
    j: usize,
) -> Result<f64, LyapunovError> {
    check_stratum(params.n(), j)?;
    let (k, n) = (f64::from(params.k()), f64::from(params.n()));
    let bracket =
        (k - n + 1.0) * (2.0 + config.b * (k - 1.0)) * harmonic_gap(params.k(), params.n(), j)
            - (k - n) * (2.0 + config.b * (n - 2.0));
    Ok(bracket / k)
}

/// Route selector for the re-entry expectation factor.
#[derive(Debug, Clone, Copy)]
pub enum GammaRoute {
    /// Truncated series straight from the definition.
    Direct(SeriesTruncation),
    /// Alternating closed form.
    Closed,
}

/// Expectation factor of the re-entry law under the centered linear
/// weight; feeds the unit-slot drift coefficient.
pub fn big_gamma_j(k: u32, n: u32, j: usize, route: GammaRoute) -> Result<f64, LyapunovError> {
    check_stratum(n, j)?;
    if k < n {
        return Err(LyapunovError::InvalidParams(format!(
            "require k >= n, got k={k} n={n}"
        )));
    }
    match route {
        GammaRoute::Closed => {
            let m = f64::from(k) - f64::from(n);
            let mut acc = 0.0;
            for l in 1..=j {
                let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign * binom_f64(j as u64, l as u64) * l as f64 * (m + l as f64)
                    / (m + l as f64 + 1.0).powi(2);
            }
            Ok(acc)
        }
        GammaRoute::Direct(trunc) => {
            let inner = comb::ej_pinned_sum(
                k,
                n,
                j,
                &[(comb::EjBlock::Free, MarkFn::LinearMinusOne)],
                &trunc,
            )?;
            Ok(j as f64 * inner.value)
        }
    }
}

/// Unit-slot drift multiplier of the squared part:
/// `T_j = -(k-n) + (k-n+1) sum_{i=2}^{j+1} 1/(k-n+i)`.
pub fn t_j_closed(k: u32, n: u32, j: usize) -> Result<f64, LyapunovError> {
    check_stratum(n, j)?;
    if k < n {
        return Err(LyapunovError::InvalidParams(format!(
            "require k >= n, got k={k} n={n}"
        )));
    }
    let m = f64::from(k) - f64::from(n);
    Ok(-m + (m + 1.0) * harmonic_gap(k, n, j))
}

/// Unit-slot drift multiplier of the cross part:
/// `W_j = (k-1)(k-n+1) sum_{i=2}^{j+1} 1/(k-n+i) - (n-2)(k-n)`.
pub fn w_j_closed(k: u32, n: u32, j: usize) -> Result<f64, LyapunovError> {
    check_stratum(n, j)?;
    if k < n {
        return Err(LyapunovError::InvalidParams(format!(
            "require k >= n, got k={k} n={n}"
        )));
    }
    let (kf, nf) = (f64::from(k), f64::from(n));
    let m = kf - nf;
    Ok((kf - 1.0) * (m + 1.0) * harmonic_gap(k, n, j) - (nf - 2.0) * m)
}

/// Alternating-sum route to the cross multiplier, used as an extra check
/// against [`w_j_closed`].
pub fn w_j_alternating(k: u32, n: u32, j: usize) -> Result<f64, LyapunovError> {
    check_stratum(n, j)?;
    let (kf, nf) = (f64::from(k), f64::from(n));
    let m = kf - nf;
    let kn = u64::from(k - n);
    let rho = (j as f64 + 1.0) * binom_f64(kn + j as u64 + 1, kn);
    let mut acc = 0.0;
    for l in 1..=j {
        let sign = if l % 2 == 1 { 1.0 } else { -1.0 };
        let d = m + l as f64 + 1.0;
        acc +=
            sign * binom_f64(j as u64, l as u64) * l as f64 * (kf - 1.0 - (nf - 2.0) * d) / (d * d);
    }
    Ok(rho * acc + nf - 2.0)
}

fn ej_prefactor(k: u32, n: u32, j: usize) -> f64 {
    let kn = u64::from(k - n);
    (j as f64 + 1.0) * binom_f64(kn + j as u64 + 1, kn)
}

/// Inner truncation for the stratum-constant sums: the requested tail
/// tolerance must survive the prefactor and the term multipliers.
fn constant_term_trunc(
    k: u32,
    n: u32,
    j: usize,
    trunc: &SeriesTruncation,
) -> Result<SeriesTruncation, LyapunovError> {
    let scale = ej_prefactor(k, n, j) * j as f64 * (3.0 * f64::from(n) + 4.0);
    Ok(SeriesTruncation::new(
        trunc.max_total(),
        trunc.tail_tol() / scale.max(1.0),
    )?)
}

/// Constant term of the squared part of the boundary drift, evaluated by
/// truncated series with certified tails.
pub fn gamma_j(
    params: &SwitchParams,
    j: usize,
    trunc: &SeriesTruncation,
) -> Result<f64, LyapunovError> {
    let (k, n) = (params.k(), params.n());
    check_stratum(n, j)?;
    let trunc = &constant_term_trunc(k, n, j, trunc)?;
    let dims = (n - 1) as usize;
    use comb::EjBlock::{Constrained, Free};
    let base = comb::ej_pinned_sum(k, n, j, &[], trunc)?.value;
    let free = (dims - j) as f64;
    let mut inner = (f64::from(n) - 2.0 * j as f64) * base;
    if j >= 2 {
        let b_sq = comb::ej_pinned_sum(k, n, j, &[(Constrained, MarkFn::Square)], trunc)?.value;
        inner += (j as f64 - 1.0) * b_sq;
    }
    if dims > j {
        let c_sq = comb::ej_pinned_sum(k, n, j, &[(Free, MarkFn::Square)], trunc)?.value;
        let c_lin = comb::ej_pinned_sum(k, n, j, &[(Free, MarkFn::Linear)], trunc)?.value;
        inner += free * c_sq - 2.0 * free * c_lin;
    }
    Ok(ej_prefactor(k, n, j) * j as f64 * inner + f64::from(n) - 1.0 + 2.0 * j as f64)
}

/// Constant term of the cross part of the boundary drift.
pub fn beta_j(
    params: &SwitchParams,
    j: usize,
    trunc: &SeriesTruncation,
) -> Result<f64, LyapunovError> {
    let (k, n) = (params.k(), params.n());
    check_stratum(n, j)?;
    let trunc = &constant_term_trunc(k, n, j, trunc)?;
    let dims = (n - 1) as usize;
    use comb::EjBlock::{Constrained, Free};
    let jf = j as f64;
    let nf = f64::from(n);
    let free = (dims - j) as f64;

    let base = comb::ej_pinned_sum(k, n, j, &[], trunc)?.value;
    let mut inner = -(nf - jf - 1.0) * base - (jf * jf - jf) / 2.0 * base;
    if j >= 2 {
        let b_lin = comb::ej_pinned_sum(k, n, j, &[(Constrained, MarkFn::Linear)], trunc)?.value;
        inner += (jf - 1.0) * b_lin - (nf - jf - 1.0) * (jf - 1.0) * b_lin;
        if j >= 3 {
            let b_pair = comb::ej_pinned_sum(
                k,
                n,
                j,
                &[(Constrained, MarkFn::Linear), (Constrained, MarkFn::Linear)],
                trunc,
            )?
            .value;
            let pairs = (jf - 1.0) * (jf - 2.0) / 2.0;
            inner += pairs * b_pair;
        }
    }
    if dims > j {
        let c_lin = comb::ej_pinned_sum(k, n, j, &[(Free, MarkFn::Linear)], trunc)?.value;
        inner += free * c_lin;
        if j >= 2 {
            let bc = comb::ej_pinned_sum(
                k,
                n,
                j,
                &[(Constrained, MarkFn::Linear), (Free, MarkFn::Linear)],
                trunc,
            )?
            .value;
            inner += (jf - 1.0) * free * bc;
        }
        if dims - j >= 2 {
            let cc = comb::ej_pinned_sum(
                k,
                n,
                j,
                &[
                    (Free, MarkFn::LinearMinusOne),
                    (Free, MarkFn::LinearMinusOne),
                ],
                trunc,
            )?
            .value;
            inner += free * (free - 1.0) / 2.0 * cc;
        }
    }
    Ok(ej_prefactor(k, n, j) * jf * inner + (nf - 2.0) * jf)
}

/// Constant term of the boundary drift, `delta_j = gamma_j + b beta_j`.
pub fn delta_j(
    params: &SwitchParams,
    config: &LyapunovConfig,
    j: usize,
    trunc: &SeriesTruncation,
) -> Result<f64, LyapunovError> {
    Ok(gamma_j(params, j, trunc)? + config.b * beta_j(params, j, trunc)?)
}

/// One-step expected potential change by exhaustive enumeration of the
/// embedded kernel, compared against the matching closed form.
pub fn drift_empirical(
    params: &SwitchParams,
    config: &LyapunovConfig,
    state: &OccupancyState,
    trunc: &SeriesTruncation,
) -> Result<DriftReport, LyapunovError> {
    let j = classify_boundary(state).map_err(|_| LyapunovError::NotInS)?;
    let k = f64::from(params.k());
    if j > 0 {
        check_stratum(params.n(), j)?;
    }
    let kernel = embedded_transitions(params, state, trunc)?;
    let vx = v_value(state, config);
    let empirical: f64 = kernel
        .transitions
        .entries()
        .iter()
        .map(|(y, w)| w * (v_value(y, config) - vx))
        .sum();

    if j == 0 {
        let coefficient = interior_coefficient(params, config) / k;
        let delta_term = interior_constant(params, config) / k;
        return Ok(DriftReport {
            state: state.clone(),
            closed_form: coefficient * state.total() as f64 + delta_term,
            empirical,
            truncation_tail: 0.0,
            coefficient,
            delta_term,
        });
    }

    let coefficient = drift_closed_boundary_coefficient(params, config, j)?;
    let delta_term = delta_j(params, config, j, trunc)? / k;
    let tail_total = state.total() as f64 - j as f64;
    let closed_form = coefficient * tail_total + delta_term;

    // |V(y) - V(x)| <= (1+|b|)(3|x|^2 + 2 s^2) for an excursion of length
    // s, so the dropped part of the expectation is bounded by the
    // polynomial-weighted mass tail.
    let amp = 1.0 + config.b.abs();
    let x_tot = state.total() as f64;
    let down_weight = (k - f64::from(params.n()) + 1.0) / k;
    let truncation_tail = down_weight
        * comb::ej_mass_tail_poly(
            params.k(),
            params.n(),
            j,
            trunc.max_total(),
            2.0 * amp,
            0.0,
            3.0 * amp * x_tot * x_tot,
        );

    Ok(DriftReport {
        state: state.clone(),
        closed_form,
        empirical,
        truncation_tail,
        coefficient,
        delta_term,
    })
}

/// Negative-drift certificate: every growth coefficient strictly
/// negative plus a concrete occupancy threshold beyond which the drift
/// is below `-epsilon`.
#[derive(Debug, Clone)]
pub struct DriftCertificate {
    pub epsilon: f64,
    /// Interior multiplier of the total occupancy (before division by k).
    pub interior_coefficient: f64,
    /// Per-stratum multipliers `2 T_j + b W_j` (before division by k).
    pub stratum_coefficients: Vec<f64>,
    /// Numerically evaluated constant terms per stratum.
    pub deltas: Vec<f64>,
    /// Total occupancy beyond which the drift is below `-epsilon`
    /// everywhere on S.
    pub threshold: u64,
}

const CERT_EPSILON: f64 = 1e-6;

/// Certify that the potential drifts down outside a finite set: checks
/// the interior coefficient and every stratum coefficient for strict
/// negativity and solves the affine inequalities for a threshold on the
/// total occupancy.
pub fn certify_negative_drift(
    params: &SwitchParams,
    config: &LyapunovConfig,
    trunc: &SeriesTruncation,
    threshold_cap: u64,
) -> Result<DriftCertificate, LyapunovError> {
    let (k, n) = (params.k(), params.n());
    if config.alpha.is_none() {
        return Err(LyapunovError::InvalidConfig(
            "certification requires the alpha parametrization".into(),
        ));
    }
    let kf = f64::from(k);
    let interior = interior_coefficient(params, config);
    if interior.is_nan() || interior >= 0.0 {
        return Err(LyapunovError::CertificationFailed {
            where_: "interior".into(),
            coefficient: interior,
        });
    }
    let mut stratum_coefficients = Vec::new();
    let mut deltas = Vec::new();
    let mut threshold = (n as u64)
        .max(((interior_constant(params, config) + kf * CERT_EPSILON) / -interior).ceil() as u64);
    for j in 1..=(n - 2) as usize {
        let c_j = 2.0 * t_j_closed(k, n, j)? + config.b * w_j_closed(k, n, j)?;
        if c_j.is_nan() || c_j >= 0.0 {
            return Err(LyapunovError::CertificationFailed {
                where_: format!("stratum {j}"),
                coefficient: c_j,
            });
        }
        let d_j = delta_j(params, config, j, trunc)?;
        let m_j = j as f64 + (d_j + kf * CERT_EPSILON) / -c_j;
        threshold = threshold.max(m_j.ceil().max(0.0) as u64);
        stratum_coefficients.push(c_j);
        deltas.push(d_j);
    }
    if threshold > threshold_cap {
        return Err(LyapunovError::CertificationFailed {
            where_: format!("threshold {threshold} exceeds cap {threshold_cap}"),
            coefficient: threshold as f64,
        });
    }
    Ok(DriftCertificate {
        epsilon: CERT_EPSILON,
        interior_coefficient: interior,
        stratum_coefficients,
        deltas,
        threshold,
    })
}

/// Evaluation of the two non-ergodicity conditions on the original
/// kernel: bounded downward jumps and componentwise mean drift that is
/// nonnegative everywhere. Both hold exactly when `k = n`.
#[derive(Debug, Clone)]
pub struct InstabilityReport {
    /// Largest per-coordinate downward contribution, `(k-n+1)/k`.
    pub downward_jump_bound: f64,
    /// Total mean occupancy drift per step on the interior,
    /// `-(n-1)(k-n)/k`; exactly zero at the critical point.
    pub interior_total_drift: f64,
    /// Total mean occupancy drift per step on each empty-slot stratum
    /// (always +1: every transition there is an arrival).
    pub boundary_total_drifts: Vec<f64>,
    /// True when the non-ergodicity conditions hold, i.e. `k = n`.
    pub non_ergodic: bool,
}

/// Check the non-ergodicity conditions by direct kernel evaluation.
pub fn instability_conditions(k: u32, n: u32) -> Result<InstabilityReport, LyapunovError> {
    if n < 3 || k < n {
        return Err(LyapunovError::InvalidParams(format!(
            "require k >= n >= 3, got k={k} n={n}"
        )));
    }
    let params = SwitchParams::new(k, n, 1.0, 1.0).expect("validated above");
    let dims = params.dims();
    let kf = f64::from(k);
    let nf = f64::from(n);
    // Interior drift from the closed kernel sums; exactly zero at k = n.
    let interior_total_drift = -(nf - 1.0) * (kf - nf) / kf;

    let mut boundary_total_drifts = Vec::with_capacity(dims);
    for j in 1..=dims {
        let mut probe = vec![2u64; dims];
        for slot in probe.iter_mut().take(j) {
            *slot = 0;
        }
        let state = OccupancyState::new(probe);
        let drift: f64 = dtmc_transitions(&params, &state)
            .map_err(|e| LyapunovError::InvalidParams(e.to_string()))?
            .entries()
            .iter()
            .map(|(y, w)| w * (y.total() as f64 - state.total() as f64))
            .sum();
        boundary_total_drifts.push(drift);
    }
    let non_ergodic =
        interior_total_drift >= 0.0 && boundary_total_drifts.iter().all(|d| *d >= -1e-12);
    Ok(InstabilityReport {
        downward_jump_bound: (kf - nf + 1.0) / kf,
        interior_total_drift,
        boundary_total_drifts,
        non_ergodic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic;
    use crate::oracle;

    fn params(k: u32, n: u32) -> SwitchParams {
        SwitchParams::new(k, n, 1.0, 1.0).unwrap()
    }

    fn st(v: &[u64]) -> OccupancyState {
        OccupancyState::new(v.to_vec())
    }

    fn cfg(b: f64, n: u32) -> LyapunovConfig {
        LyapunovConfig::from_cross_term(b, n).unwrap()
    }

    fn trunc(max: usize, tol: f64) -> SeriesTruncation {
        SeriesTruncation::new(max, tol).unwrap()
    }

    #[test]
    fn potential_examples() {
        assert_eq!(v_value(&st(&[1, 1]), &cfg(0.0, 3)), 2.0);
        assert_eq!(v_value(&st(&[2, 3]), &cfg(-2.0, 3)), 1.0);
        assert_eq!(v_value(&st(&[1, 1, 1]), &cfg(-1.0, 4)), 0.0);
    }

    #[test]
    fn potential_nonnegative_on_s_at_minimal_b() {
        for n in 3..=6u32 {
            let config = cfg(-2.0 / (f64::from(n) - 2.0), n);
            let dims = (n - 1) as usize;
            let mut state = vec![1u64; dims];
            for a in 1..=5u64 {
                for b in 1..=5u64 {
                    state[0] = a;
                    state[dims - 1] = b;
                    assert!(v_value(&st(&state), &config) >= -1e-12);
                }
            }
        }
    }

    #[test]
    fn embedded_kernel_interior_example() {
        let kernel = embedded_transitions(&params(5, 3), &st(&[2, 2]), &trunc(40, 1e-9)).unwrap();
        let list = &kernel.transitions;
        assert_eq!(list.entries().len(), 3);
        assert!((list.weight_to(&st(&[1, 1])).unwrap() - 0.6).abs() <= 1e-15);
        assert!((list.weight_to(&st(&[3, 2])).unwrap() - 0.2).abs() <= 1e-15);
        assert!((list.weight_to(&st(&[2, 3])).unwrap() - 0.2).abs() <= 1e-15);
        assert_eq!(kernel.tail_bound, 0.0);
    }

    fn total_weight_to(list: &TransitionList, target: &OccupancyState) -> f64 {
        list.entries()
            .iter()
            .filter(|(s, _)| s == target)
            .map(|(_, w)| w)
            .sum()
    }

    #[test]
    fn embedded_kernel_boundary_example() {
        // From (1,3) at (4,3): arrivals at 1/4 each, and half the mass
        // fans out over re-entry states (1, 2+r) and their shifts; the
        // shortest re-entry lands on (1,2) with probability (1/2)(3/4).
        let kernel = embedded_transitions(&params(4, 3), &st(&[1, 3]), &trunc(60, 1e-9)).unwrap();
        let list = &kernel.transitions;
        // (2,3) is reachable only as an arrival
        assert!((total_weight_to(list, &st(&[2, 3])) - 0.25).abs() <= 1e-15);
        // (1,4) is an arrival and also the endpoint of the excursion with
        // increments (1,2), which carries (1/2) * 3/64
        let q_14 = 0.5 * 3.0 / 64.0;
        assert!((total_weight_to(list, &st(&[1, 4])) - (0.25 + q_14)).abs() <= 1e-12);
        assert!((total_weight_to(list, &st(&[1, 2])) - 0.375).abs() <= 1e-12);
        assert!((list.total_weight() - 1.0).abs() <= 1e-9 + kernel.tail_bound);
    }

    #[test]
    fn embedded_kernel_mass_sums_to_one() {
        let t = trunc(80, 1e-9);
        for &(k, n) in &[(4u32, 3u32), (5, 3), (6, 4), (7, 5)] {
            let dims = (n - 1) as usize;
            for ones in 1..=dims.min(2) {
                let mut v = vec![3u64; dims];
                for slot in v.iter_mut().take(ones) {
                    *slot = 1;
                }
                let kernel = embedded_transitions(&params(k, n), &st(&v), &t).unwrap();
                let total = kernel.transitions.total_weight();
                assert!(
                    (total - 1.0).abs() <= 1e-9 + kernel.tail_bound,
                    "k={k} n={n} ones={ones}: {total}"
                );
            }
        }
    }

    #[test]
    fn embedded_kernel_matches_excursion_oracle() {
        // The boundary fan-out must equal the excursion law of the
        // original chain started just below S.
        let p = params(5, 3);
        let state = st(&[1, 4]);
        let kernel = embedded_transitions(&p, &state, &trunc(40, 1e-8)).unwrap();
        let (law, _, leftover) = oracle::excursion_law(&p, &state.after_swap(), 22);
        assert!(leftover < 1e-7);
        let down = (5.0 - 3.0 + 1.0) / 5.0;
        let arrivals = [st(&[2, 4]), st(&[1, 5])];
        for (target, mass) in &law {
            let mut got = total_weight_to(&kernel.transitions, target);
            if arrivals.contains(target) {
                got -= 1.0 / 5.0;
            }
            assert!(
                (got - down * mass).abs() <= 1e-7,
                "target {target}: {got} vs {}",
                down * mass
            );
        }
    }

    #[test]
    fn rejects_states_outside_s() {
        let err = embedded_transitions(&params(4, 3), &st(&[0, 2]), &trunc(20, 1e-6));
        assert!(matches!(err, Err(LyapunovError::NotInS)));
    }

    #[test]
    fn interior_drift_frozen_examples() {
        let c0 = cfg(0.0, 3);
        let r = drift_empirical(&params(5, 3), &c0, &st(&[3, 3]), &trunc(10, 1e-6)).unwrap();
        assert!((r.empirical + 3.2).abs() <= 1e-12);
        assert!((r.closed_form + 3.2).abs() <= 1e-12);
        let r = drift_empirical(&params(5, 3), &c0, &st(&[2, 2]), &trunc(10, 1e-6)).unwrap();
        assert!((r.empirical + 1.6).abs() <= 1e-12);
    }

    #[test]
    fn interior_drift_matches_closed_form_exactly() {
        let t = trunc(10, 1e-6);
        for &(k, n) in &[(4u32, 3u32), (5, 3), (6, 4), (7, 5)] {
            let p = params(k, n);
            let dims = (n - 1) as usize;
            for b in [0.0, -0.5, -2.0 / (f64::from(n) - 2.0)] {
                let config = cfg(b, n);
                for lo in 2..=4u64 {
                    for hi in lo..=6u64 {
                        let mut v = vec![lo; dims];
                        v[dims - 1] = hi;
                        if v.iter().sum::<u64>() > 10 {
                            continue;
                        }
                        let r = drift_empirical(&p, &config, &st(&v), &t).unwrap();
                        assert!(
                            (r.empirical - r.closed_form).abs() <= 1e-12,
                            "k={k} n={n} b={b} x={:?}: {} vs {}",
                            v,
                            r.empirical,
                            r.closed_form
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn interior_drift_constant_when_coefficient_vanishes() {
        // At b = -2/(n-2) the occupancy multiplier of the interior drift
        // is zero, so the drift is the same at every interior state.
        let p = params(5, 4);
        let config = cfg(-1.0, 4);
        let t = trunc(10, 1e-6);
        let d1 = drift_empirical(&p, &config, &st(&[2, 2, 2]), &t).unwrap();
        let d2 = drift_empirical(&p, &config, &st(&[5, 3, 7]), &t).unwrap();
        assert!((d1.empirical - d2.empirical).abs() <= 1e-12);
        assert!(d1.coefficient.abs() <= 1e-15);
    }

    #[test]
    fn big_gamma_frozen_and_route_agreement() {
        // Gamma_1 at (5,3) is -3/16; T_1 = 2 C(4,2) Gamma_1 + 1 = -1.25.
        let g = big_gamma_j(5, 3, 1, GammaRoute::Closed).unwrap();
        assert!((g + 3.0 / 16.0).abs() <= 1e-15);
        let t1 = t_j_closed(5, 3, 1).unwrap();
        assert!((t1 + 1.25).abs() <= 1e-15);
        assert!((2.0 * binom_f64(4, 2) * g + 1.0 - t1).abs() <= 1e-12);

        let tr = trunc(200, 1e-11);
        for &(k, n) in &[(4u32, 3u32), (5, 3), (6, 4), (7, 5), (9, 5)] {
            for j in 1..=(n - 2) as usize {
                let direct = big_gamma_j(k, n, j, GammaRoute::Direct(tr)).unwrap();
                let closed = big_gamma_j(k, n, j, GammaRoute::Closed).unwrap();
                assert!(
                    (direct - closed).abs() <= 1e-10,
                    "k={k} n={n} j={j}: {direct} vs {closed}"
                );
                let t_from_gamma = ej_prefactor(k, n, j) * closed + 1.0;
                let t_closed = t_j_closed(k, n, j).unwrap();
                assert!((t_from_gamma - t_closed).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn t_and_w_telescoping() {
        for &(k, n) in &[(5u32, 3u32), (6, 4), (7, 5), (9, 6)] {
            let m = f64::from(k) - f64::from(n);
            for j in 1..=(n - 3).max(1) as usize {
                if j + 1 > (n - 2) as usize {
                    continue;
                }
                let dt = t_j_closed(k, n, j + 1).unwrap() - t_j_closed(k, n, j).unwrap();
                assert!((dt - (m + 1.0) / (m + j as f64 + 2.0)).abs() <= 1e-12);
                let dw = w_j_closed(k, n, j + 1).unwrap() - w_j_closed(k, n, j).unwrap();
                let expect = (f64::from(k) - 1.0) * (m + 1.0) / (m + j as f64 + 2.0);
                assert!((dw - expect).abs() <= 1e-12);
            }
        }
        // frozen: T_2 - T_1 at (6,4) is (k-n+1)/(k-n+3) = 3/5
        let dt = t_j_closed(6, 4, 2).unwrap() - t_j_closed(6, 4, 1).unwrap();
        assert!((dt - 0.6).abs() <= 1e-15);
    }

    #[test]
    fn w_frozen_and_alternating_route() {
        let w1 = w_j_closed(5, 3, 1).unwrap();
        assert!((w1 - 1.0).abs() <= 1e-15);
        for &(k, n) in &[(5u32, 3u32), (6, 4), (7, 5), (10, 6)] {
            for j in 1..=(n - 2) as usize {
                let a = w_j_closed(k, n, j).unwrap();
                let b = w_j_alternating(k, n, j).unwrap();
                assert!((a - b).abs() <= 1e-10, "k={k} n={n} j={j}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn boundary_coefficient_frozen_example() {
        let c = drift_closed_boundary_coefficient(&params(5, 3), &cfg(0.0, 3), 1).unwrap();
        assert!((c + 0.5).abs() <= 1e-15);
    }

    #[test]
    fn boundary_coefficient_equals_t_w_combination() {
        for &(k, n) in &[(5u32, 3u32), (6, 4), (7, 5)] {
            for b in [0.0, -0.5] {
                let config = cfg(b, n);
                let p = params(k, n);
                for j in 1..=(n - 2) as usize {
                    let direct = drift_closed_boundary_coefficient(&p, &config, j).unwrap();
                    let combo = (2.0 * t_j_closed(k, n, j).unwrap()
                        + b * w_j_closed(k, n, j).unwrap())
                        / f64::from(k);
                    assert!((direct - combo).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn alpha_parametrization_matches_explicit_coefficient() {
        // With b = -2(1-alpha)/(n-2) and m = k-n, the stratum coefficient
        // becomes -2((m+1)^2 - alpha(m^2+mn+n-1))/(n-2) H_j - 2 m alpha.
        for &(k, n, alpha) in &[(5u32, 3u32, 0.25f64), (10, 3, 0.4), (7, 4, 0.2)] {
            let config = LyapunovConfig::from_alpha(alpha, n).unwrap();
            let m = f64::from(k) - f64::from(n);
            let nf = f64::from(n);
            for j in 1..=(n - 2) as usize {
                let h: f64 = harmonic_gap(k, n, j);
                let expect = -2.0 / (nf - 2.0)
                    * ((m + 1.0) * (m + 1.0) - alpha * (m * m + m * nf + nf - 1.0))
                    * h
                    - 2.0 * m * alpha;
                let got =
                    2.0 * t_j_closed(k, n, j).unwrap() + config.b() * w_j_closed(k, n, j).unwrap();
                assert!(
                    (got - expect).abs() <= 1e-10,
                    "k={k} n={n} j={j}: {got} vs {expect}"
                );
            }
        }
        // frozen: C_1 = -4 at (5,3), alpha = 1/4
        let config = LyapunovConfig::from_alpha(0.25, 3).unwrap();
        let c1 = 2.0 * t_j_closed(5, 3, 1).unwrap() + config.b() * w_j_closed(5, 3, 1).unwrap();
        assert!((c1 + 4.0).abs() <= 1e-12);
    }

    #[test]
    fn gamma_majorant_bound_holds() {
        let t = trunc(200, 1e-10);
        for &(k, n) in &[(4u32, 3u32), (5, 3), (6, 4), (7, 5)] {
            let p = params(k, n);
            for j in 1..=(n - 2) as usize {
                let g = gamma_j(&p, j, &t).unwrap();
                let kf = f64::from(k);
                let gap = kf - f64::from(n) + 1.0;
                let kn = u64::from(k - n);
                let majorant = (f64::from(n) - 1.0)
                    * j as f64
                    * (j as f64 + 1.0)
                    * binom_f64(kn + j as u64 + 1, kn)
                    * (kf / gap
                        + 2.0 * kf / (gap * gap)
                        + (kf - f64::from(n) + 3.0) * kf / (gap * gap * gap))
                    + f64::from(n)
                    - 1.0
                    + 2.0 * j as f64;
                assert!(g.abs() <= majorant, "k={k} n={n} j={j}: |{g}| > {majorant}");
            }
        }
    }

    #[test]
    fn boundary_drift_matches_closed_form() {
        let t = trunc(70, 1e-9);
        let r = drift_empirical(&params(5, 3), &cfg(0.0, 3), &st(&[1, 5]), &t).unwrap();
        assert!(
            (r.empirical - r.closed_form).abs() <= 1e-8 + r.truncation_tail,
            "{} vs {} (tail {})",
            r.empirical,
            r.closed_form,
            r.truncation_tail
        );
        let r = drift_empirical(&params(6, 4), &cfg(-0.5, 4), &st(&[1, 1, 4]), &t).unwrap();
        assert!((r.empirical - r.closed_form).abs() <= 1e-8 + r.truncation_tail);
    }

    #[test]
    fn boundary_drift_affine_slope_matches_coefficient() {
        let t = trunc(80, 1e-9);
        for &(k, n) in &[(4u32, 3u32), (5, 3), (6, 4)] {
            let p = params(k, n);
            let config = cfg(-0.4, n);
            let dims = (n - 1) as usize;
            for j in 1..=(n - 2) as usize {
                let coeff = drift_closed_boundary_coefficient(&p, &config, j).unwrap();
                let mut prev: Option<f64> = None;
                for x in 2..=8u64 {
                    let mut v = vec![2u64; dims];
                    for slot in v.iter_mut().take(j) {
                        *slot = 1;
                    }
                    v[dims - 1] = x;
                    let r = drift_empirical(&p, &config, &st(&v), &t).unwrap();
                    if let Some(prev) = prev {
                        let slope = r.empirical - prev;
                        assert!(
                            (slope - coeff).abs() <= 1e-8 + 2.0 * r.truncation_tail,
                            "k={k} n={n} j={j} x={x}: slope {slope} vs {coeff}"
                        );
                    }
                    prev = Some(r.empirical);
                }
            }
        }
    }

    #[test]
    fn delta_extraction_is_permutation_invariant() {
        // Which coordinates carry the large entries must not matter.
        let t = trunc(80, 1e-9);
        let p = params(6, 4);
        let config = cfg(-0.4, 4);
        let coeff = drift_closed_boundary_coefficient(&p, &config, 1).unwrap();
        let arrangements = [[1u64, 5, 3], [5, 1, 3], [3, 5, 1]];
        let mut intercepts = Vec::new();
        for v in arrangements {
            let r = drift_empirical(&p, &config, &st(&v), &t).unwrap();
            let tail_total = v.iter().sum::<u64>() as f64 - 1.0;
            intercepts.push(r.empirical - coeff * tail_total);
        }
        for w in intercepts.windows(2) {
            assert!((w[0] - w[1]).abs() <= 1e-8, "{intercepts:?}");
        }
    }

    #[test]
    fn delta_matches_empirical_intercept() {
        // delta_j from the series must equal the intercept of the
        // empirical drift (times k) on its stratum.
        let t = trunc(80, 1e-10);
        for &(k, n, j) in &[(5u32, 3u32, 1usize), (6, 4, 1), (6, 4, 2), (7, 5, 2)] {
            let p = params(k, n);
            for b in [0.0, -0.6] {
                let config = cfg(b, n);
                let dims = (n - 1) as usize;
                let mut v = vec![4u64; dims];
                for slot in v.iter_mut().take(j) {
                    *slot = 1;
                }
                let r = drift_empirical(&p, &config, &st(&v), &t).unwrap();
                let tail_total = v.iter().sum::<u64>() as f64 - j as f64;
                let intercept_scaled = (r.empirical - r.coefficient * tail_total) * f64::from(k);
                let d = delta_j(&p, &config, j, &t).unwrap();
                assert!(
                    (intercept_scaled - d).abs() <= 1e-7,
                    "k={k} n={n} j={j} b={b}: {intercept_scaled} vs {d}"
                );
            }
        }
    }

    #[test]
    fn certification_success_and_failure() {
        let t = trunc(200, 1e-8);
        let p = params(5, 3);
        let config = LyapunovConfig::from_alpha(0.25, 3).unwrap();
        let cert = certify_negative_drift(&p, &config, &t, 100_000).unwrap();
        assert!((cert.stratum_coefficients[0] + 4.0).abs() <= 1e-12);
        assert!(cert.interior_coefficient < 0.0);
        assert!(cert.threshold >= 3);

        let p = params(10, 3);
        let config = LyapunovConfig::from_alpha(0.4, 3).unwrap();
        let cert = certify_negative_drift(&p, &config, &t, 100_000).unwrap();
        assert!(cert.stratum_coefficients.iter().all(|c| *c < 0.0));

        // critical point: interior coefficient vanishes
        let p = params(4, 4);
        let config = LyapunovConfig::from_alpha(0.2, 4).unwrap();
        let err = certify_negative_drift(&p, &config, &t, 100_000);
        assert!(matches!(
            err,
            Err(LyapunovError::CertificationFailed { .. })
        ));
    }

    #[test]
    fn drift_becomes_negative_beyond_threshold() {
        let t = trunc(80, 1e-8);
        let p = params(5, 3);
        let config = LyapunovConfig::from_alpha(0.25, 3).unwrap();
        let cert = certify_negative_drift(&p, &config, &t, 100_000).unwrap();
        let m = cert.threshold;
        // interior state and stratum-1 state just beyond the threshold
        let interior = st(&[m, m]);
        let r = drift_empirical(&p, &config, &interior, &t).unwrap();
        assert!(r.empirical < -cert.epsilon);
        let boundary = st(&[1, 2 * m]);
        let r = drift_empirical(&p, &config, &boundary, &t).unwrap();
        assert!(r.empirical < -cert.epsilon);
    }

    #[test]
    fn domain_errors() {
        let p = params(5, 3);
        let config = cfg(0.0, 3);
        // a state with a unit slot is not interior
        assert_eq!(
            drift_closed_interior(&p, &config, &st(&[1, 4])),
            Err(LyapunovError::NotInterior)
        );
        assert!(matches!(
            drift_closed_boundary_coefficient(&p, &config, 0),
            Err(LyapunovError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            drift_closed_boundary_coefficient(&p, &config, 2),
            Err(LyapunovError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            t_j_closed(5, 3, 2),
            Err(LyapunovError::IndexOutOfRange { .. })
        ));
        // the all-ones state has no covered closed form
        assert!(matches!(
            drift_empirical(&p, &config, &st(&[1, 1]), &trunc(40, 1e-8)),
            Err(LyapunovError::IndexOutOfRange { .. })
        ));
        assert!(LyapunovConfig::from_alpha(0.6, 3).is_err());
        assert!(LyapunovConfig::from_alpha(0.0, 3).is_err());
    }

    #[test]
    fn instability_conditions_examples() {
        let r = instability_conditions(4, 4).unwrap();
        assert_eq!(r.interior_total_drift, 0.0);
        assert!(r.non_ergodic);
        assert!(r.boundary_total_drifts.iter().all(|d| *d >= 0.0));

        let r = instability_conditions(5, 3).unwrap();
        assert!((r.interior_total_drift + 0.8).abs() <= 1e-15);
        assert!(!r.non_ergodic);

        // boundary strata gain exactly one qubit per step in expectation
        for d in instability_conditions(6, 4).unwrap().boundary_total_drifts {
            assert!((d - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn instability_interior_drift_matches_kernel_enumeration() {
        for &(k, n) in &[(4u32, 4u32), (5, 3), (6, 4), (7, 7)] {
            let p = params(k, n);
            let probe = OccupancyState::new(vec![3; p.dims()]);
            let enumerated = oracle::one_step_expectation(&p, &probe, |y| y.total() as f64)
                - probe.total() as f64;
            let report = instability_conditions(k, n).unwrap();
            assert!(
                (enumerated - report.interior_total_drift).abs() <= 1e-12,
                "k={k} n={n}: {enumerated} vs {}",
                report.interior_total_drift
            );
        }
    }

    #[test]
    fn mean_embedded_occupancy_change_matches_psi() {
        // Sanity link between the embedded kernel and the excursion law:
        // from a boundary state the expected occupancy gain through the
        // fan-out equals (psi_j - (n-1)) plus arrivals contributions.
        let p = params(4, 3);
        let t = trunc(60, 1e-9);
        let state = st(&[1, 4]);
        let kernel = embedded_transitions(&p, &state, &t).unwrap();
        let mean_change: f64 = kernel
            .transitions
            .entries()
            .iter()
            .map(|(y, w)| w * (y.total() as f64 - state.total() as f64))
            .sum();
        // arrivals: (n-1)/k * (+1); fan-out: (k-n+1)/k * (psi_1 - (n-1))
        let psi = analytic::psi_j(4, 3, 1).unwrap();
        let expect = 2.0 / 4.0 + 2.0 / 4.0 * (psi - 2.0);
        assert!((mean_change - expect).abs() <= 1e-9);
    }
}
