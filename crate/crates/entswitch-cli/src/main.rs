//! Command-line front end: closed forms, simulation, truncated solving,
//! drift certification, identity verification and heatmap-grid export,
//! with machine-readable JSON/CSV output embedding a run manifest.
//!
//! Exit codes: 0 success, 1 internal error, 2 parameter rejection,
//! 3 tolerance or tail-bound violation.

mod opts;
mod output;

use std::fmt;

use entswitch::analytic;
use entswitch::comb::{self, SeriesTruncation};
use entswitch::lyapunov::{self, LyapunovConfig, LyapunovError};
use entswitch::model::SwitchParams;
use entswitch::simulate::{self, SimConfig};
use entswitch::solve::{self, SolveError};

use opts::Opts;
use output::{emit, f12, f17, run_json, write_with_manifest, RunManifest};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Param(String),
    Tolerance(String),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Param(m) | CliError::Tolerance(m) | CliError::Io(m) => {
                write!(f, "{m}")
            }
        }
    }
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Param(_) => 2,
            CliError::Tolerance(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

fn param_err(e: impl fmt::Display) -> CliError {
    CliError::Param(e.to_string())
}

fn comb_err(e: comb::CombError) -> CliError {
    match e {
        comb::CombError::TailBoundViolated { .. } => CliError::Tolerance(e.to_string()),
        other => CliError::Param(other.to_string()),
    }
}

fn solve_err(e: SolveError) -> CliError {
    match e {
        SolveError::NoConvergence { .. } => CliError::Tolerance(e.to_string()),
        other => CliError::Param(other.to_string()),
    }
}

fn lyapunov_err(e: LyapunovError) -> CliError {
    match e {
        LyapunovError::Series(inner) => comb_err(inner),
        other => CliError::Param(other.to_string()),
    }
}

const USAGE: &str = "\
entswitch — entanglement switch chain analysis

usage: entswitch <subcommand> [--flag value]...

subcommands:
  analytic    closed-form capacity, occupancy and swap-ready mass
              --k K --n N [--mu 1.0] [--q 1.0] [--format text|json] [--out FILE]
  simulate    seeded Monte Carlo estimation
              --k K --n N [--mu] [--q] [--steps 1000000] [--warmup steps/20]
              [--seed] [--replications 1] [--batches 50] [--mode steady|embedded|probe]
              [--horizons 10000,1000000] [--format text|json] [--out FILE] [--csv FILE]
  solve       stationary distribution of the buffer-truncated chain
              --k K --n N [--cap 80] [--tol 1e-12] [--max-sweeps 500000]
              [--caps 10,20,40,80] [--format text|json] [--out FILE]
              [--csv FILE] [--dump-pi FILE]
  sweep       occupancy heatmap grid as CSV
              [--kmin 3] [--kmax 100] [--out FILE]
  drift       negative-drift certificate for the embedded chain
              --k K --n N [--alpha 0.5/(n-1)] [--max-total 300] [--tail-tol 1e-8]
              [--threshold-cap 1000000] [--format text|json] [--out FILE]
  identities  summation-identity verification suite
              [--kmin 5] [--kmax 10] [--lmax 3] [--max-total 900]
              [--tail-tol 1e-10] [--tol 1e-9]

common flags: --config FILE (flat key=value defaults; flags win),
              --seed N (else ENTSWITCH_SEED, else a fixed default)
";

fn main() {
    let code = match real_main() {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    };
    std::process::exit(code);
}

fn real_main() -> Result<(), CliError> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(cmd) = args.first() else {
        eprint!("{USAGE}");
        return Err(CliError::Usage("missing subcommand".into()));
    };
    if cmd == "help" || cmd == "--help" || cmd == "-h" {
        print!("{USAGE}");
        return Ok(());
    }
    let opts = Opts::parse(&args[1..])?;
    match cmd.as_str() {
        "analytic" => cmd_analytic(&opts),
        "simulate" => cmd_simulate(&opts),
        "solve" => cmd_solve(&opts),
        "sweep" => cmd_sweep(&opts),
        "drift" => cmd_drift(&opts),
        "identities" => cmd_identities(&opts),
        other => Err(CliError::Usage(format!(
            "unknown subcommand `{other}` (try --help)"
        ))),
    }
}

fn switch_params(opts: &Opts) -> Result<SwitchParams, CliError> {
    let k = opts.require_u32("k")?;
    let n = opts.require_u32("n")?;
    let mu = opts.f64_or("mu", 1.0)?;
    let q = opts.f64_or("q", 1.0)?;
    SwitchParams::new(k, n, mu, q).map_err(param_err)
}

fn cmd_analytic(opts: &Opts) -> Result<(), CliError> {
    let params = switch_params(opts)?;
    let mut manifest = RunManifest::new("analytic");
    manifest
        .param("k", params.k())
        .param("n", params.n())
        .param("mu", params.mu())
        .param("q", params.q());
    let report = analytic::report(&params).map_err(|e| match e {
        analytic::AnalyticError::UnstableRegime { .. } => {
            CliError::Param("unstable: k must exceed n".into())
        }
        other => param_err(other),
    })?;
    let text = match opts.string_or("format", "text").as_str() {
        "json" => {
            let data = format!(
                "{{\"k\":{},\"n\":{},\"mu\":{},\"q\":{},\"capacity\":{},\"expected_qubits\":{},\"pi_r0\":{},\"aggregate_a\":{},\"aggregate_b\":{},\"stable\":{}}}",
                params.k(),
                params.n(),
                f17(params.mu()),
                f17(params.q()),
                f17(report.capacity),
                f17(report.expected_qubits),
                f17(report.pi_r0),
                f17(report.aggregate_a),
                f17(report.aggregate_b),
                report.stable,
            );
            run_json(&manifest, &data)
        }
        "text" => format!(
            "capacity         {}\nexpected_qubits  {}\npi_r0            {}\naggregate_a      {}\naggregate_b      {}\nstable           {}\n",
            f12(report.capacity),
            f12(report.expected_qubits),
            f12(report.pi_r0),
            f12(report.aggregate_a),
            f12(report.aggregate_b),
            report.stable,
        ),
        other => return Err(CliError::Usage(format!("unknown format `{other}`"))),
    };
    emit(opts.raw("out"), &text, &mut manifest)
}

fn cmd_simulate(opts: &Opts) -> Result<(), CliError> {
    let params = switch_params(opts)?;
    let steps = opts.u64_or("steps", 1_000_000)?;
    let warmup = opts.u64_or("warmup", steps / 20)?;
    let seed = opts.seed()?;
    let replications = opts.u32_or("replications", 1)?;
    let batches = opts.u32_or("batches", 50)?;
    let config = SimConfig::new(steps, warmup, seed, replications, batches).map_err(param_err)?;

    let mut manifest = RunManifest::new("simulate");
    manifest
        .param("k", params.k())
        .param("n", params.n())
        .param("mu", params.mu())
        .param("q", params.q())
        .param("steps", steps)
        .param("warmup", warmup)
        .param("replications", replications)
        .param("batches", batches);
    manifest.seed = Some(seed);

    match opts.string_or("mode", "steady").as_str() {
        "steady" => {}
        "embedded" => {
            let report = simulate::run_embedded(&params, &config).map_err(param_err)?;
            let mut text = format!(
                "visits           {}\nmean_occupancy   {} ± {}\n",
                report.visits,
                f12(report.mean_occupancy),
                f12(report.mean_occupancy_halfwidth),
            );
            for e in &report.excursions {
                let psi =
                    analytic::psi_j(params.k(), params.n(), e.stratum as u32).map_err(param_err)?;
                text.push_str(&format!(
                    "excursion j={}    mean {} over {} visits (expected {})\n",
                    e.stratum,
                    f12(e.mean_steps),
                    e.count,
                    f12(psi),
                ));
            }
            return emit(opts.raw("out"), &text, &mut manifest);
        }
        "probe" => {
            let horizons: Vec<u64> = opts
                .string_or("horizons", "10000,1000000")
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<u64>()
                        .map_err(|_| CliError::Usage(format!("bad horizon `{s}`")))
                })
                .collect::<Result<_, _>>()?;
            let stats = simulate::instability_probe(&params, &horizons, replications, seed)
                .map_err(param_err)?;
            let mut text = String::from("horizon,median_occupancy\n");
            for s in &stats {
                text.push_str(&format!("{},{}\n", s.horizon, f17(s.median_occupancy)));
            }
            return emit(opts.raw("out"), &text, &mut manifest);
        }
        other => return Err(CliError::Usage(format!("unknown mode `{other}`"))),
    }

    let report = simulate::run(&params, &config).map_err(param_err)?;
    let csv_row = format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        params.k(),
        params.n(),
        f17(params.mu()),
        f17(params.q()),
        steps,
        seed,
        f17(report.capacity_est),
        f17(report.capacity_halfwidth),
        f17(report.occupancy_est),
        f17(report.occupancy_halfwidth),
        f17(report.r0_fraction),
        f17(report.r0_halfwidth),
        report.attempts,
        report.successes,
    );
    if let Some(path) = opts.raw("csv") {
        let csv = format!(
            "k,n,mu,q,steps,seed,capacity,capacity_ci,occupancy,occupancy_ci,r0_frac,r0_ci,attempts,successes\n{csv_row}"
        );
        write_with_manifest(path, &csv, &mut manifest)?;
    }
    let text = match opts.string_or("format", "text").as_str() {
        "json" => {
            let data = format!(
                "{{\"k\":{},\"n\":{},\"mu\":{},\"q\":{},\"steps\":{},\"seed\":{},\"capacity\":{},\"capacity_ci\":{},\"occupancy\":{},\"occupancy_ci\":{},\"r0_frac\":{},\"r0_ci\":{},\"attempts\":{},\"successes\":{},\"elapsed_model_time\":{}}}",
                params.k(),
                params.n(),
                f17(params.mu()),
                f17(params.q()),
                steps,
                seed,
                f17(report.capacity_est),
                f17(report.capacity_halfwidth),
                f17(report.occupancy_est),
                f17(report.occupancy_halfwidth),
                f17(report.r0_fraction),
                f17(report.r0_halfwidth),
                report.attempts,
                report.successes,
                f17(report.elapsed_model_time),
            );
            run_json(&manifest, &data)
        }
        "text" => format!(
            "capacity     {} ± {}\noccupancy    {} ± {}\nr0_fraction  {} ± {}\nattempts     {}\nsuccesses    {}\nmodel_time   {}\n",
            f12(report.capacity_est),
            f12(report.capacity_halfwidth),
            f12(report.occupancy_est),
            f12(report.occupancy_halfwidth),
            f12(report.r0_fraction),
            f12(report.r0_halfwidth),
            report.attempts,
            report.successes,
            f12(report.elapsed_model_time),
        ),
        other => return Err(CliError::Usage(format!("unknown format `{other}`"))),
    };
    emit(opts.raw("out"), &text, &mut manifest)
}

fn cmd_solve(opts: &Opts) -> Result<(), CliError> {
    let params = switch_params(opts)?;
    let tol = opts.f64_or("tol", 1e-12)?;
    let max_sweeps = opts.u64_or("max-sweeps", 500_000)?;

    // a comma list of caps runs the refinement sweep, one row per cap
    if let Some(list) = opts.raw("caps") {
        let caps: Vec<u64> = list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| CliError::Usage(format!("bad cap `{s}`")))
            })
            .collect::<Result<_, _>>()?;
        let mut manifest = RunManifest::new("solve");
        manifest
            .param("k", params.k())
            .param("n", params.n())
            .param("caps", list)
            .param("tol", tol);
        let rows = solve::convergence_sweep(&params, &caps, tol, max_sweeps).map_err(solve_err)?;
        let mut csv = String::from("k,n,B,pi_R0,expected_qubits,A,B_aggr,residual,boundary_mass\n");
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                params.k(),
                params.n(),
                r.cap,
                f17(r.pi_r0),
                f17(r.expected_qubits),
                f17(r.aggregate_a),
                f17(r.aggregate_b),
                f17(r.residual),
                f17(r.boundary_mass),
            ));
        }
        if let Some(path) = opts.raw("csv") {
            write_with_manifest(path, &csv, &mut manifest)?;
            return Ok(());
        }
        return emit(opts.raw("out"), &csv, &mut manifest);
    }

    let cap = opts.u64_or("cap", 80)?;
    let mut manifest = RunManifest::new("solve");
    manifest
        .param("k", params.k())
        .param("n", params.n())
        .param("cap", cap)
        .param("tol", tol)
        .param("max_sweeps", max_sweeps);

    let chain = solve::build(&params, cap).map_err(solve_err)?;
    let sol = solve::stationary(&chain, tol, max_sweeps).map_err(solve_err)?;

    if let Some(path) = opts.raw("dump-pi") {
        let dims = params.dims();
        let mut csv = (1..=dims)
            .map(|i| format!("x{i}"))
            .collect::<Vec<_>>()
            .join(",")
            + ",probability\n";
        for (idx, mass) in sol.pi.iter().enumerate() {
            let state = chain.state_of(idx);
            let coords = state
                .entries()
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(",");
            csv.push_str(&format!("{coords},{}\n", f17(*mass)));
        }
        write_with_manifest(path, &csv, &mut manifest)?;
    }
    if let Some(path) = opts.raw("csv") {
        let csv = format!(
            "k,n,B,pi_R0,expected_qubits,A,B_aggr,residual,boundary_mass\n{},{},{},{},{},{},{},{},{}\n",
            params.k(),
            params.n(),
            cap,
            f17(sol.pi_r0),
            f17(sol.expected_qubits),
            f17(sol.aggregate_a),
            f17(sol.aggregate_b),
            f17(sol.residual),
            f17(sol.boundary_mass),
        );
        write_with_manifest(path, &csv, &mut manifest)?;
    }
    let text = match opts.string_or("format", "text").as_str() {
        "json" => {
            let data = format!(
                "{{\"k\":{},\"n\":{},\"B\":{},\"pi_R0\":{},\"expected_qubits\":{},\"A\":{},\"B_aggr\":{},\"residual\":{},\"boundary_mass\":{},\"sweeps\":{}}}",
                params.k(),
                params.n(),
                cap,
                f17(sol.pi_r0),
                f17(sol.expected_qubits),
                f17(sol.aggregate_a),
                f17(sol.aggregate_b),
                f17(sol.residual),
                f17(sol.boundary_mass),
                sol.sweeps,
            );
            run_json(&manifest, &data)
        }
        "text" => format!(
            "states           {}\npi_R0            {}\nexpected_qubits  {}\naggregate_A      {}\naggregate_B      {}\nresidual         {}\nboundary_mass    {}\nsweeps           {}\n",
            chain.state_count(),
            f12(sol.pi_r0),
            f12(sol.expected_qubits),
            f12(sol.aggregate_a),
            f12(sol.aggregate_b),
            f12(sol.residual),
            f12(sol.boundary_mass),
            sol.sweeps,
        ),
        other => return Err(CliError::Usage(format!("unknown format `{other}`"))),
    };
    emit(opts.raw("out"), &text, &mut manifest)
}

fn cmd_sweep(opts: &Opts) -> Result<(), CliError> {
    let k_lo = opts.u32_or("kmin", 3)?;
    let k_hi = opts.u32_or("kmax", 100)?;
    let mut manifest = RunManifest::new("sweep");
    manifest.param("kmin", k_lo).param("kmax", k_hi);
    let cells = analytic::heatmap_grid(k_lo, k_hi).map_err(param_err)?;
    let mut csv = String::from("k,n,expected_qubits,log10_expected_qubits\n");
    for c in &cells {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            c.k,
            c.n,
            f17(c.expected_qubits),
            f17(c.log10_expected_qubits)
        ));
    }
    emit(opts.raw("out"), &csv, &mut manifest)
}

fn cmd_drift(opts: &Opts) -> Result<(), CliError> {
    let k = opts.require_u32("k")?;
    let n = opts.require_u32("n")?;
    let params = SwitchParams::new(k, n, 1.0, 1.0).map_err(param_err)?;
    let alpha = opts.f64_or("alpha", 0.5 / (f64::from(n) - 1.0))?;
    let max_total = opts.usize_or("max-total", 300)?;
    let tail_tol = opts.f64_or("tail-tol", 1e-8)?;
    let threshold_cap = opts.u64_or("threshold-cap", 1_000_000)?;
    let trunc = SeriesTruncation::new(max_total, tail_tol).map_err(comb_err)?;

    let mut manifest = RunManifest::new("drift");
    manifest
        .param("k", k)
        .param("n", n)
        .param("alpha", alpha)
        .param("max_total", max_total)
        .param("tail_tol", tail_tol);

    if k == n {
        // no certificate exists at the critical point; report the
        // non-ergodicity conditions instead and reject the parameters
        let report = lyapunov::instability_conditions(k, n).map_err(lyapunov_err)?;
        eprintln!(
            "no certificate at k = n: interior drift {}, downward jumps bounded by {}, boundary drifts nonnegative: non-ergodicity conditions hold",
            f12(report.interior_total_drift),
            f12(report.downward_jump_bound),
        );
        return Err(CliError::Param(
            "certification requires k > n (the chain is unstable at k = n)".into(),
        ));
    }

    let config = LyapunovConfig::from_alpha(alpha, n).map_err(lyapunov_err)?;
    let cert = lyapunov::certify_negative_drift(&params, &config, &trunc, threshold_cap)
        .map_err(lyapunov_err)?;

    let text = match opts.string_or("format", "text").as_str() {
        "json" => {
            let cj = cert
                .stratum_coefficients
                .iter()
                .map(|c| f17(*c))
                .collect::<Vec<_>>()
                .join(",");
            let deltas = cert
                .deltas
                .iter()
                .map(|d| f17(*d))
                .collect::<Vec<_>>()
                .join(",");
            let data = format!(
                "{{\"k\":{k},\"n\":{n},\"alpha\":{},\"b\":{},\"interior_coefficient\":{},\"stratum_coefficients\":[{cj}],\"deltas\":[{deltas}],\"threshold\":{},\"epsilon\":{}}}",
                f17(alpha),
                f17(config.b()),
                f17(cert.interior_coefficient),
                cert.threshold,
                f17(cert.epsilon),
            );
            run_json(&manifest, &data)
        }
        "text" => {
            let mut t = format!(
                "negative-drift certificate  k={k} n={n} alpha={}\nb                     {}\ninterior coefficient  {}\n",
                f12(alpha),
                f12(config.b()),
                f12(cert.interior_coefficient),
            );
            for (j, (c, d)) in cert
                .stratum_coefficients
                .iter()
                .zip(&cert.deltas)
                .enumerate()
            {
                t.push_str(&format!(
                    "stratum {}             C = {}  delta = {}\n",
                    j + 1,
                    f12(*c),
                    f12(*d)
                ));
            }
            t.push_str(&format!(
                "threshold             {}\nepsilon               {}\n",
                cert.threshold,
                f12(cert.epsilon)
            ));
            t
        }
        other => return Err(CliError::Usage(format!("unknown format `{other}`"))),
    };
    emit(opts.raw("out"), &text, &mut manifest)
}

fn cmd_identities(opts: &Opts) -> Result<(), CliError> {
    let k_lo = opts.u32_or("kmin", 5)?;
    let k_hi = opts.u32_or("kmax", 10)?;
    let l_max = opts.usize_or("lmax", 3)?;
    let max_total = opts.usize_or("max-total", 900)?;
    let tail_tol = opts.f64_or("tail-tol", 1e-10)?;
    let tol = opts.f64_or("tol", 1e-9)?;
    let trunc = SeriesTruncation::new(max_total, tail_tol).map_err(comb_err)?;

    let mut manifest = RunManifest::new("identities");
    manifest
        .param("kmin", k_lo)
        .param("kmax", k_hi)
        .param("lmax", l_max)
        .param("max_total", max_total)
        .param("tail_tol", tail_tol)
        .param("tol", tol);

    let report = comb::identity_suite(k_lo, k_hi, l_max, &trunc).map_err(comb_err)?;
    let text = format!(
        "identity suite over k in [{k_lo}, {k_hi}], shifts <= {l_max} ({} cases)\nclosed-form base        {}\nrecursion               {}\naggregate family        {}\ngenerating identities   {}\nalternating binomial    {}\nnormalization           {}\nmax residual            {}  (tolerance {})\n",
        report.cases,
        f12(report.f0_residual),
        f12(report.recursion_residual),
        f12(report.g_residual),
        f12(report.generating_residual),
        f12(report.binomial_residual),
        f12(report.normalization_residual),
        f12(report.max_residual()),
        f12(tol),
    );
    emit(opts.raw("out"), &text, &mut manifest)?;
    if report.max_residual() > tol {
        return Err(CliError::Tolerance(format!(
            "max identity residual {} exceeds tolerance {}",
            f12(report.max_residual()),
            f12(tol)
        )));
    }
    Ok(())
}
