//! Closed-form performance figures and stability predicates for the
//! switch chain. These are the ground truth the simulator and the
//! truncated solver are checked against.
//!
//! All formulas are evaluated in exact rational arithmetic over the
//! integer inputs and converted to floating point at the boundary, so
//! identity checks at 1e-12 are not limited by intermediate rounding.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use thiserror::Error;

use crate::model::SwitchParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("unstable regime: k must exceed n, got k={k} n={n}")]
    UnstableRegime { k: u32, n: u32 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("stratum index {j} outside [{lo}, {hi}]")]
    IndexOutOfRange { j: u32, lo: u32, hi: u32 },
}

/// Whether the chain admits a stationary distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Unstable,
}

/// Closed-form summary for one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticReport {
    /// Successful swaps per unit time, `q mu k / n`.
    pub capacity: f64,
    /// Expected stored qubits in steady state, `k(n-1)/(2(k-n))`.
    pub expected_qubits: f64,
    /// Stationary mass of the swap-ready region, `k/(n(k-(n-1)))`.
    pub pi_r0: f64,
    /// Swap-ready share of the expected occupancy.
    pub aggregate_a: f64,
    /// Share of the expected occupancy carried by partially-empty states.
    pub aggregate_b: f64,
    pub stable: bool,
}

/// One cell of the occupancy heatmap grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapCell {
    pub k: u32,
    pub n: u32,
    pub expected_qubits: f64,
    pub log10_expected_qubits: f64,
}

fn rat(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64()
        .expect("rational fits in f64 for model-sized inputs")
}

/// Maximum rate of successful n-partite deliveries, `q mu k / n`.
pub fn capacity(params: &SwitchParams) -> Result<f64, AnalyticError> {
    let (k, n) = (params.k(), params.n());
    if k <= n {
        return Err(AnalyticError::UnstableRegime { k, n });
    }
    Ok(params.q() * params.mu() * to_f64(&rat(i64::from(k), i64::from(n))))
}

pub(crate) fn expected_qubits_exact(k: u32, n: u32) -> Result<BigRational, AnalyticError> {
    if n < 2 {
        return Err(AnalyticError::InvalidParams(format!(
            "n must be at least 2, got {n}"
        )));
    }
    if k <= n {
        return Err(AnalyticError::UnstableRegime { k, n });
    }
    let (k, n) = (i64::from(k), i64::from(n));
    Ok(rat(k * (n - 1), 2 * (k - n)))
}

/// Expected number of stored qubits in steady state, `k(n-1)/(2(k-n))`.
/// Admits `n = 2` so the full heatmap grid can be produced; the kernel
/// itself requires `n >= 3`.
pub fn expected_qubits(k: u32, n: u32) -> Result<f64, AnalyticError> {
    expected_qubits_exact(k, n).map(|r| to_f64(&r))
}

pub(crate) fn pi_r0_exact(k: u32, n: u32) -> Result<BigRational, AnalyticError> {
    if n < 3 {
        return Err(AnalyticError::InvalidParams(format!(
            "n must be at least 3, got {n}"
        )));
    }
    if k <= n {
        return Err(AnalyticError::UnstableRegime { k, n });
    }
    let (k, n) = (i64::from(k), i64::from(n));
    Ok(rat(k, n * (k - (n - 1))))
}

/// Stationary probability of the swap-ready region, `k/(n(k-(n-1)))`.
pub fn pi_r0(k: u32, n: u32) -> Result<f64, AnalyticError> {
    pi_r0_exact(k, n).map(|r| to_f64(&r))
}

pub(crate) fn aggregates_ab_exact(
    k: u32,
    n: u32,
) -> Result<(BigRational, BigRational), AnalyticError> {
    if n < 3 {
        return Err(AnalyticError::InvalidParams(format!(
            "n must be at least 3, got {n}"
        )));
    }
    if k <= n {
        return Err(AnalyticError::UnstableRegime { k, n });
    }
    let (k, n) = (i64::from(k), i64::from(n));
    let a = rat(k * (n - 1) * (2 * k - n), 2 * n * (k - n) * (k - (n - 1)));
    let b = rat(k * (n - 1) * (n - 2), 2 * n * (k - (n - 1)));
    Ok((a, b))
}

/// Decomposition of the expected occupancy into the swap-ready share A
/// and the partially-empty share B; `A + B` equals [`expected_qubits`].
pub fn aggregates_ab(k: u32, n: u32) -> Result<(f64, f64), AnalyticError> {
    aggregates_ab_exact(k, n).map(|(a, b)| (to_f64(&a), to_f64(&b)))
}

/// Ergodicity predicate: stable iff `k > n`.
pub fn stability(k: u32, n: u32) -> Result<Stability, AnalyticError> {
    if n < 3 || k < n {
        return Err(AnalyticError::InvalidParams(format!(
            "require k >= n >= 3, got k={k} n={n}"
        )));
    }
    Ok(if k > n {
        Stability::Stable
    } else {
        Stability::Unstable
    })
}

/// Capacity upper bound for heterogeneous link rates: replace every link
/// by the fastest one, giving `q k max(rates) / n`.
pub fn capacity_upper_bound_heterogeneous(
    rates: &[f64],
    n: u32,
    q: f64,
) -> Result<f64, AnalyticError> {
    if rates.is_empty() {
        return Err(AnalyticError::InvalidParams(
            "rate list must be non-empty".into(),
        ));
    }
    if rates.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(AnalyticError::InvalidParams(
            "rates must be positive reals".into(),
        ));
    }
    if n < 3 {
        return Err(AnalyticError::InvalidParams(format!(
            "n must be at least 3, got {n}"
        )));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(AnalyticError::InvalidParams(format!(
            "q must lie in [0, 1], got {q}"
        )));
    }
    let max = rates.iter().cloned().fold(f64::MIN, f64::max);
    Ok(q * rates.len() as f64 * max / f64::from(n))
}

pub(crate) fn psi_j_exact(k: u32, n: u32, j: u32) -> Result<BigRational, AnalyticError> {
    if j < 1 || j > n - 1 {
        return Err(AnalyticError::IndexOutOfRange {
            j,
            lo: 1,
            hi: n - 1,
        });
    }
    if k < n {
        return Err(AnalyticError::InvalidParams(format!(
            "require k >= n, got k={k} n={n}"
        )));
    }
    let (k, n) = (i64::from(k), i64::from(n));
    let mut sum = BigRational::zero();
    for l in 1..=i64::from(j) {
        sum += rat(k, k - n + l + 1);
    }
    Ok(sum)
}

/// Expected number of uniformized steps the chain spends outside S after
/// entering with `j` empty slots: `sum_{l=1}^{j} k/(k-n+l+1)`.
///
/// The top-stratum value plus `n-1` bounds the occupancy gap between the
/// chain and its embedded-on-S version throughout any excursion, which
/// is what makes the embedded first moment carry over to the full chain.
pub fn psi_j(k: u32, n: u32, j: u32) -> Result<f64, AnalyticError> {
    psi_j_exact(k, n, j).map(|r| to_f64(&r))
}

/// Occupancy grid over `k` in the given range and `n` from 2 to `k-1`,
/// with `log10` values for heatmap rendering.
pub fn heatmap_grid(k_lo: u32, k_hi: u32) -> Result<Vec<HeatmapCell>, AnalyticError> {
    if k_lo < 3 || k_hi < k_lo {
        return Err(AnalyticError::InvalidParams(format!(
            "require 3 <= k_lo <= k_hi, got [{k_lo}, {k_hi}]"
        )));
    }
    let mut cells = Vec::new();
    for k in k_lo..=k_hi {
        for n in 2..k {
            let eq = expected_qubits(k, n)?;
            cells.push(HeatmapCell {
                k,
                n,
                expected_qubits: eq,
                log10_expected_qubits: eq.log10(),
            });
        }
    }
    Ok(cells)
}

/// Full closed-form summary for one parameter point.
pub fn report(params: &SwitchParams) -> Result<AnalyticReport, AnalyticError> {
    let (k, n) = (params.k(), params.n());
    let capacity = capacity(params)?;
    let (a, b) = aggregates_ab(k, n)?;
    Ok(AnalyticReport {
        capacity,
        expected_qubits: expected_qubits(k, n)?,
        pi_r0: pi_r0(k, n)?,
        aggregate_a: a,
        aggregate_b: b,
        stable: k > n,
    })
}
