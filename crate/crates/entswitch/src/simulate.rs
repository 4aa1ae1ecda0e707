//! Monte Carlo estimation over long runs of the uniformized chain:
//! capacity, time-average occupancy and swap-ready fraction with
//! batch-means confidence intervals, an embedded-chain view with
//! excursion statistics, and an unbounded-growth probe at the critical
//! point.
//!
//! Reproducibility: one ChaCha stream per replication, selected by the
//! replication index on top of the configured seed, so results are
//! bit-identical for a given configuration regardless of how the
//! replications are scheduled. Each step consumes one uniform draw for
//! the transition and, on swap attempts only, a second draw for the
//! Bernoulli(q) success, so the visited path does not depend on q.
//!
//! Model time advances deterministically by `1/(k mu)` per step rather
//! than by sampled exponential increments; the total exit rate is the
//! same in every state, so rate estimates keep their mean and lose
//! variance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::SwitchParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    ConfigInvalid(String),
    #[error("growth probe requires the critical point k = n, got k={k} n={n}")]
    NotCritical { k: u32, n: u32 },
}

/// Simulation run length, warmup, seeding and batching policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    steps: u64,
    warmup: u64,
    seed: u64,
    replications: u32,
    batches: u32,
}

impl SimConfig {
    pub fn new(
        steps: u64,
        warmup: u64,
        seed: u64,
        replications: u32,
        batches: u32,
    ) -> Result<Self, SimError> {
        if steps <= warmup {
            return Err(SimError::ConfigInvalid(format!(
                "steps ({steps}) must exceed warmup ({warmup})"
            )));
        }
        if batches < 10 {
            return Err(SimError::ConfigInvalid(format!(
                "need at least 10 batches, got {batches}"
            )));
        }
        if replications < 1 {
            return Err(SimError::ConfigInvalid(
                "need at least 1 replication".into(),
            ));
        }
        if (steps - warmup) < u64::from(batches) {
            return Err(SimError::ConfigInvalid(
                "fewer post-warmup steps than batches".into(),
            ));
        }
        Ok(SimConfig {
            steps,
            warmup,
            seed,
            replications,
            batches,
        })
    }

    /// Default discipline: 5% warmup, 50 batches, one replication.
    pub fn with_defaults(steps: u64, seed: u64) -> Result<Self, SimError> {
        SimConfig::new(steps, steps / 20, seed, 1, 50)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn warmup(&self) -> u64 {
        self.warmup
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replications(&self) -> u32 {
        self.replications
    }

    pub fn batches(&self) -> u32 {
        self.batches
    }
}

/// Point estimates with 95% batch-means confidence halfwidths.
#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    /// Successful swaps per unit model time.
    pub capacity_est: f64,
    pub capacity_halfwidth: f64,
    /// Time-average total occupancy.
    pub occupancy_est: f64,
    pub occupancy_halfwidth: f64,
    /// Fraction of steps spent swap-ready.
    pub r0_fraction: f64,
    pub r0_halfwidth: f64,
    /// Swap attempts and successes after warmup, over all replications.
    pub attempts: u64,
    pub successes: u64,
    /// Post-warmup model time over all replications.
    pub elapsed_model_time: f64,
    pub steps: u64,
    pub replications: u32,
    pub seed: u64,
}

impl SimReport {
    /// Capacity estimated from attempts thinned by q instead of counted
    /// successes; agrees with `capacity_est` in the mean.
    pub fn capacity_via_attempts(&self, q: f64) -> f64 {
        q * self.attempts as f64 / self.elapsed_model_time
    }
}

/// Two-sided 97.5% Student t quantile, nearest-lower df.
fn t_quantile_975(df: u64) -> f64 {
    const TABLE: [(u64, f64); 34] = [
        (1, 12.706),
        (2, 4.303),
        (3, 3.182),
        (4, 2.776),
        (5, 2.571),
        (6, 2.447),
        (7, 2.365),
        (8, 2.306),
        (9, 2.262),
        (10, 2.228),
        (11, 2.201),
        (12, 2.179),
        (13, 2.160),
        (14, 2.145),
        (15, 2.131),
        (16, 2.120),
        (17, 2.110),
        (18, 2.101),
        (19, 2.093),
        (20, 2.086),
        (21, 2.080),
        (22, 2.074),
        (23, 2.069),
        (24, 2.064),
        (25, 2.060),
        (26, 2.056),
        (27, 2.052),
        (28, 2.048),
        (29, 2.045),
        (30, 2.042),
        (40, 2.021),
        (60, 2.000),
        (120, 1.980),
        (u64::MAX, 1.960),
    ];
    let mut q = 12.706;
    for (d, v) in TABLE {
        if df >= d {
            q = v;
        }
    }
    q
}

/// One transition of the uniformized chain, drawing the slot by walking
/// the same weights in the same order as the kernel's transition list.
/// Returns true when the step was a swap attempt.
fn advance(params: &SwitchParams, state: &mut [u64], u: f64) -> bool {
    let k = f64::from(params.k());
    let n = params.n() as usize;
    let dims = state.len();
    let zeros = state.iter().filter(|&&v| v == 0).count();

    if zeros == 0 {
        let w_swap = (k - (n - 1) as f64) / k;
        if u < w_swap {
            for v in state.iter_mut() {
                *v -= 1;
            }
            return true;
        }
        let slot = (((u - w_swap) * k).floor() as usize).min(dims - 1);
        state[slot] += 1;
        return false;
    }
    if zeros == dims {
        let slot = ((u * dims as f64).floor() as usize).min(dims - 1);
        state[slot] += 1;
        return false;
    }
    let empty_w = (k - (n - 1 - zeros) as f64) / (k * zeros as f64);
    let occupied_w = 1.0 / k;
    let mut cum = 0.0;
    for (slot, v) in state.iter_mut().enumerate() {
        cum += if *v == 0 { empty_w } else { occupied_w };
        if u < cum || slot == dims - 1 {
            *v += 1;
            return false;
        }
    }
    unreachable!("cumulative walk always selects a slot");
}

#[derive(Debug, Default, Clone)]
struct RepStats {
    occ_sum: f64,
    r0_count: u64,
    attempts: u64,
    successes: u64,
    post_steps: u64,
    batch_occ: Vec<f64>,
    batch_r0: Vec<f64>,
    batch_capacity: Vec<f64>,
}

fn run_replication(params: &SwitchParams, config: &SimConfig, rep: u32) -> RepStats {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(u64::from(rep));
    let dims = params.dims();
    let mut state = vec![0u64; dims];
    let post = config.steps - config.warmup;
    let batches = u64::from(config.batches);
    let batch_len = post / batches;
    let rate = params.uniformization_rate();

    let mut stats = RepStats {
        batch_occ: Vec::with_capacity(config.batches as usize),
        batch_r0: Vec::with_capacity(config.batches as usize),
        batch_capacity: Vec::with_capacity(config.batches as usize),
        ..RepStats::default()
    };
    let (mut b_occ, mut b_r0, mut b_succ, mut b_len) = (0.0f64, 0u64, 0u64, 0u64);

    for t in 0..config.steps {
        let measured = t >= config.warmup;
        if measured {
            let total: u64 = state.iter().sum();
            stats.occ_sum += total as f64;
            b_occ += total as f64;
            if state.iter().all(|&v| v > 0) {
                stats.r0_count += 1;
                b_r0 += 1;
            }
        }
        let u: f64 = rng.random();
        let swap_attempt = advance(params, &mut state, u);
        if swap_attempt {
            // success draw always taken so the path is q-independent
            let success = rng.random::<f64>() < params.q();
            if measured {
                stats.attempts += 1;
                if success {
                    stats.successes += 1;
                    b_succ += 1;
                }
            }
        }
        if measured {
            stats.post_steps += 1;
            b_len += 1;
            if b_len == batch_len && (stats.batch_occ.len() as u64) < batches {
                stats.batch_occ.push(b_occ / b_len as f64);
                stats.batch_r0.push(b_r0 as f64 / b_len as f64);
                stats
                    .batch_capacity
                    .push(b_succ as f64 * rate / b_len as f64);
                b_occ = 0.0;
                b_r0 = 0;
                b_succ = 0;
                b_len = 0;
            }
        }
    }
    stats
}

fn mean_halfwidth(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    let hw = t_quantile_975(samples.len() as u64 - 1) * (var / n).sqrt();
    (mean, hw)
}

/// Long-run estimation of capacity, occupancy and swap-ready fraction.
///
/// Unstable parameter points are allowed; their output describes growth
/// rather than a steady state.
pub fn run(params: &SwitchParams, config: &SimConfig) -> Result<SimReport, SimError> {
    let reps: Vec<RepStats> = run_replications(params, config);

    let mut batch_occ = Vec::new();
    let mut batch_r0 = Vec::new();
    let mut batch_cap = Vec::new();
    let (mut occ_sum, mut r0_count, mut attempts, mut successes, mut post_steps) =
        (0.0f64, 0u64, 0u64, 0u64, 0u64);
    for r in &reps {
        batch_occ.extend_from_slice(&r.batch_occ);
        batch_r0.extend_from_slice(&r.batch_r0);
        batch_cap.extend_from_slice(&r.batch_capacity);
        occ_sum += r.occ_sum;
        r0_count += r.r0_count;
        attempts += r.attempts;
        successes += r.successes;
        post_steps += r.post_steps;
    }
    let rate = params.uniformization_rate();
    let elapsed = post_steps as f64 / rate;
    let (_, occ_hw) = mean_halfwidth(&batch_occ);
    let (_, r0_hw) = mean_halfwidth(&batch_r0);
    let (_, cap_hw) = mean_halfwidth(&batch_cap);
    Ok(SimReport {
        capacity_est: successes as f64 / elapsed,
        capacity_halfwidth: cap_hw,
        occupancy_est: occ_sum / post_steps as f64,
        occupancy_halfwidth: occ_hw,
        r0_fraction: r0_count as f64 / post_steps as f64,
        r0_halfwidth: r0_hw,
        attempts,
        successes,
        elapsed_model_time: elapsed,
        steps: config.steps,
        replications: config.replications,
        seed: config.seed,
    })
}

fn run_replications(params: &SwitchParams, config: &SimConfig) -> Vec<RepStats> {
    let reps = config.replications;
    if reps == 1 {
        return vec![run_replication(params, config, 0)];
    }
    let workers = std::thread::available_parallelism()
        .map(|p| p.get())
        .unwrap_or(1)
        .min(reps as usize);
    let mut out: Vec<Option<RepStats>> = vec![None; reps as usize];
    // contiguous chunks per worker; results land at their replication
    // index, so scheduling cannot change the merged output
    std::thread::scope(|scope| {
        let chunk = (reps as usize).div_ceil(workers);
        for (w, slots) in out.chunks_mut(chunk).enumerate() {
            let start = w * chunk;
            scope.spawn(move || {
                for (i, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(run_replication(params, config, (start + i) as u32));
                }
            });
        }
    });
    out.into_iter()
        .map(|r| r.expect("worker filled slot"))
        .collect()
}

/// Per-stratum excursion statistics from the embedded view.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcursionStat {
    /// Number of empty slots at the moment the chain left S.
    pub stratum: usize,
    pub count: u64,
    /// Mean number of steps spent outside S.
    pub mean_steps: f64,
}

/// Estimates over the chain observed at its visits to S.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedReport {
    /// Number of embedded samples (visits to S) after warmup.
    pub visits: u64,
    /// Mean total occupancy over the embedded samples.
    pub mean_occupancy: f64,
    pub mean_occupancy_halfwidth: f64,
    pub excursions: Vec<ExcursionStat>,
    pub steps: u64,
    pub seed: u64,
}

/// Simulate the chain and subsample it at visits to S, reporting the
/// embedded occupancy and the per-stratum excursion lengths.
pub fn run_embedded(params: &SwitchParams, config: &SimConfig) -> Result<EmbeddedReport, SimError> {
    if params.k() <= params.n() {
        return Err(SimError::ConfigInvalid(format!(
            "embedded estimation requires k > n, got k={} n={}",
            params.k(),
            params.n()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    let dims = params.dims();
    let mut state = vec![0u64; dims];

    let mut visits = 0u64;
    let mut batch_means: Vec<f64> = Vec::new();
    let post = config.steps - config.warmup;
    let batch_len = (post / u64::from(config.batches)).max(1);
    let (mut b_sum, mut b_count) = (0.0f64, 0u64);
    let mut occ_total = 0.0f64;

    let mut exc_count = vec![0u64; dims + 1];
    let mut exc_steps = vec![0u64; dims + 1];
    // stratum at entry, steps so far, whether it started after warmup;
    // the run starts in the all-empty state, outside S, and that initial
    // segment is not a proper excursion, so it stays untracked.
    let mut excursion: Option<(usize, u64, bool)> = None;
    let mut prev_in_s = false;

    for t in 0..config.steps {
        let measured = t >= config.warmup;
        let zeros = state.iter().filter(|&&v| v == 0).count();
        let in_s = zeros == 0;
        if in_s {
            if let Some((j, len, counted)) = excursion.take() {
                if counted {
                    exc_count[j] += 1;
                    exc_steps[j] += len;
                }
            }
            if measured {
                let total: u64 = state.iter().sum();
                visits += 1;
                occ_total += total as f64;
                b_sum += total as f64;
                b_count += 1;
                if b_count == batch_len {
                    batch_means.push(b_sum / b_count as f64);
                    b_sum = 0.0;
                    b_count = 0;
                }
            }
        } else {
            match &mut excursion {
                Some((_, len, _)) => *len += 1,
                None if prev_in_s => excursion = Some((zeros, 1, measured)),
                None => {}
            }
        }
        prev_in_s = in_s;
        let u: f64 = rng.random();
        if advance(params, &mut state, u) {
            let _ = rng.random::<f64>();
        }
    }

    let (_, hw) = mean_halfwidth(&batch_means);
    let excursions = (1..=dims)
        .filter(|&j| exc_count[j] > 0)
        .map(|j| ExcursionStat {
            stratum: j,
            count: exc_count[j],
            mean_steps: exc_steps[j] as f64 / exc_count[j] as f64,
        })
        .collect();
    Ok(EmbeddedReport {
        visits,
        mean_occupancy: occ_total / visits.max(1) as f64,
        mean_occupancy_halfwidth: hw,
        excursions,
        steps: config.steps,
        seed: config.seed,
    })
}

/// Median total occupancy at each horizon, over replications.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonStat {
    pub horizon: u64,
    pub median_occupancy: f64,
}

/// Growth probe at the critical point `k = n`: the chain has no
/// stationary distribution there, so the occupancy medians must keep
/// growing with the horizon.
pub fn instability_probe(
    params: &SwitchParams,
    horizons: &[u64],
    replications: u32,
    seed: u64,
) -> Result<Vec<HorizonStat>, SimError> {
    if params.k() != params.n() {
        return Err(SimError::NotCritical {
            k: params.k(),
            n: params.n(),
        });
    }
    if horizons.is_empty() || replications == 0 {
        return Err(SimError::ConfigInvalid(
            "need at least one horizon and one replication".into(),
        ));
    }
    let mut sorted: Vec<u64> = horizons.to_vec();
    sorted.sort_unstable();
    let max_horizon = *sorted.last().expect("non-empty");

    let mut per_horizon: Vec<Vec<f64>> = vec![Vec::new(); sorted.len()];
    for rep in 0..replications {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(rep));
        let mut state = vec![0u64; params.dims()];
        let mut next = 0usize;
        for t in 1..=max_horizon {
            let u: f64 = rng.random();
            if advance(params, &mut state, u) {
                let _ = rng.random::<f64>();
            }
            while next < sorted.len() && sorted[next] == t {
                per_horizon[next].push(state.iter().sum::<u64>() as f64);
                next += 1;
            }
        }
    }
    Ok(sorted
        .into_iter()
        .zip(per_horizon)
        .map(|(horizon, mut vals)| {
            vals.sort_by(f64::total_cmp);
            let m = vals.len();
            let median_occupancy = if m % 2 == 1 {
                vals[m / 2]
            } else {
                0.5 * (vals[m / 2 - 1] + vals[m / 2])
            };
            HorizonStat {
                horizon,
                median_occupancy,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic;
    use crate::model::{dtmc_transitions, OccupancyState};

    fn p(k: u32, n: u32, mu: f64, q: f64) -> SwitchParams {
        SwitchParams::new(k, n, mu, q).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(1000, 100, 1, 1, 10).is_ok());
        assert!(SimConfig::new(100, 100, 1, 1, 10).is_err());
        assert!(SimConfig::new(1000, 100, 1, 1, 9).is_err());
        assert!(SimConfig::new(1000, 100, 1, 0, 10).is_err());
        assert!(SimConfig::new(105, 100, 1, 1, 10).is_err());
    }

    #[test]
    fn sampler_agrees_with_kernel_weights() {
        // Stepping with a fine grid of uniforms must reproduce the
        // transition list weights exactly, including the entry order.
        let grid = 40_000usize;
        for &(k, n) in &[(4u32, 3u32), (5, 3), (6, 4), (7, 5)] {
            let params = p(k, n, 1.0, 1.0);
            let dims = params.dims();
            let states = [
                vec![0u64; dims],
                vec![1u64; dims],
                {
                    let mut v = vec![2u64; dims];
                    v[0] = 0;
                    v
                },
                {
                    let mut v = vec![0u64; dims];
                    v[dims - 1] = 3;
                    v
                },
            ];
            for start in &states {
                let list = dtmc_transitions(&params, &OccupancyState::new(start.clone())).unwrap();
                let mut counts = vec![0u64; list.entries().len()];
                for g in 0..grid {
                    let u = (g as f64 + 0.5) / grid as f64;
                    let mut s = start.clone();
                    advance(&params, &mut s, u);
                    let target = OccupancyState::new(s);
                    let idx = list
                        .entries()
                        .iter()
                        .position(|(t, _)| *t == target)
                        .unwrap_or_else(|| panic!("sampler left the kernel at {target}"));
                    counts[idx] += 1;
                }
                for (i, (_, w)) in list.entries().iter().enumerate() {
                    let got = counts[i] as f64 / grid as f64;
                    assert!(
                        (got - w).abs() <= 1.0 / grid as f64 + 1e-9,
                        "k={k} n={n} state={start:?} entry {i}: {got} vs {w}"
                    );
                }
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let params = p(5, 3, 1.0, 0.8);
        let config = SimConfig::new(20_000, 1000, 42, 2, 10).unwrap();
        let a = run(&params, &config).unwrap();
        let b = run(&params, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn path_does_not_depend_on_q() {
        let config = SimConfig::new(50_000, 2500, 7, 1, 10).unwrap();
        let full = run(&p(5, 3, 1.0, 1.0), &config).unwrap();
        let half = run(&p(5, 3, 1.0, 0.5), &config).unwrap();
        assert_eq!(full.attempts, half.attempts);
        assert_eq!(full.occupancy_est, half.occupancy_est);
        assert_eq!(full.r0_fraction, half.r0_fraction);
        // success thinning halves the capacity up to binomial noise
        assert!(
            (half.capacity_est - 0.5 * full.capacity_est).abs() <= 4.0 * half.capacity_halfwidth
        );
    }

    #[test]
    fn estimates_match_closed_forms() {
        let params = p(5, 3, 1.0, 0.8);
        let config = SimConfig::new(200_000, 10_000, 11, 1, 50).unwrap();
        let report = run(&params, &config).unwrap();
        let c = analytic::capacity(&params).unwrap();
        let eq = analytic::expected_qubits(5, 3).unwrap();
        let r0 = analytic::pi_r0(5, 3).unwrap();
        assert!(
            (report.capacity_est - c).abs() <= 3.0 * report.capacity_halfwidth,
            "{} vs {c} (hw {})",
            report.capacity_est,
            report.capacity_halfwidth
        );
        assert!((report.occupancy_est - eq).abs() <= 3.0 * report.occupancy_halfwidth);
        assert!((report.r0_fraction - r0).abs() <= 3.0 * report.r0_halfwidth);
        assert!(report.successes <= report.attempts);
        // capacity identity at the estimator level
        let lhs = report.r0_fraction * (5.0 - 2.0) * params.mu() * params.q();
        assert!((lhs - report.capacity_est).abs() <= 3.0 * report.capacity_halfwidth);
        // attempt-thinned estimator agrees
        assert!(
            (report.capacity_via_attempts(params.q()) - report.capacity_est).abs()
                <= 3.0 * report.capacity_halfwidth
        );
    }

    #[test]
    fn embedded_excursions_match_expected_lengths() {
        let params = p(4, 3, 1.0, 1.0);
        let config = SimConfig::new(400_000, 20_000, 3, 1, 50).unwrap();
        let report = run_embedded(&params, &config).unwrap();
        for stat in &report.excursions {
            let psi = analytic::psi_j(4, 3, stat.stratum as u32).unwrap();
            assert!(
                (stat.mean_steps - psi).abs() <= 0.02 * psi,
                "stratum {}: {} vs {psi}",
                stat.stratum,
                stat.mean_steps
            );
        }
        assert!(report.visits > 100_000);
        // the embedded occupancy has a finite mean: the batch means
        // settle and the halfwidth is small against the estimate
        assert!(report.mean_occupancy_halfwidth.is_finite());
        assert!(report.mean_occupancy_halfwidth < 0.1 * report.mean_occupancy);
    }

    #[test]
    fn probe_requires_critical_point() {
        assert!(matches!(
            instability_probe(&p(5, 3, 1.0, 1.0), &[100], 5, 1),
            Err(SimError::NotCritical { .. })
        ));
        let stats = instability_probe(&p(3, 3, 1.0, 1.0), &[1000, 10_000], 11, 1).unwrap();
        assert_eq!(stats.len(), 2);
        assert!(stats[1].median_occupancy > stats[0].median_occupancy);
    }
}
