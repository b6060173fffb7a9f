use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;

use levelcross::crossings::{variance_count, variance_rate_asymptotic, CrossingError, CrossingMode, CrossingStats};
use levelcross::kernels::{Kernel, KernelFamily};
use levelcross::montecarlo::{dump_path, estimate_stats_levels, simulate_paths, SimConfig, SimError, SimSource};
use levelcross::quadrature::QuadratureError;
use levelcross::verification::{self, SuiteReport};
use serde::Serialize;

use crate::args::{LevelArgs, SimulateArgs, StatsArgs, Suite, VerifyArgs};
use crate::{emit, Failure};

pub fn crossing_failure(e: &CrossingError) -> Failure {
    match e {
        CrossingError::Kernel(_)
        | CrossingError::InvalidArgument(_)
        | CrossingError::Validity(_)
        | CrossingError::Quadrature(QuadratureError::InvalidSpec(_)) => Failure::Usage(e.to_string()),
        _ => Failure::Numeric(e.to_string()),
    }
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::Config(_) | SimError::Kernel(_) => Failure::Usage(e.to_string()),
        _ => Failure::Numeric(e.to_string()),
    }
}

pub fn kernel(family: KernelFamily) -> Result<Kernel, Failure> {
    Kernel::from_family(family).map_err(|e| Failure::Usage(e.to_string()))
}

pub fn level(args: &LevelArgs, kernel: &Kernel) -> f64 {
    match (args.u, args.psi) {
        (_, Some(psi)) => psi * kernel.amplitude(),
        (Some(u), None) => u,
        (None, None) => 0.0,
    }
}

/// The statistics when available, including unconverged ones, and the failure if any.
pub fn settle(result: Result<CrossingStats, CrossingError>) -> (Option<CrossingStats>, Option<Failure>) {
    match result {
        Ok(s) => (Some(s), None),
        Err(CrossingError::NotConverged(s)) => {
            let f = Failure::Numeric(CrossingError::NotConverged(s.clone()).to_string());
            (Some(*s), Some(f))
        }
        Err(e) => (None, Some(crossing_failure(&e))),
    }
}

#[derive(Serialize)]
struct FiniteReport {
    horizon: f64,
    mean_count: f64,
    variance_count: Option<f64>,
    fano: Option<f64>,
    variance_error: Option<f64>,
    converged: bool,
    error: Option<String>,
}

#[derive(Serialize)]
struct StatsReport {
    kernel: KernelFamily,
    u: f64,
    mode: CrossingMode,
    mean_rate: f64,
    var_rate: Option<f64>,
    fano: Option<f64>,
    var_rate_error: Option<f64>,
    converged: bool,
    clamped: bool,
    error: Option<String>,
    finite: Option<FiniteReport>,
}

/// Shortest round-trip digits, in exponent form outside [1e-4, 1e7).
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e7).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), num)
}

pub fn stats(a: StatsArgs) -> Result<(), Failure> {
    let family = a.kernel.family()?;
    let k = kernel(family)?;
    let spec = a.quad.spec()?;
    let u = level(&a.level, &k);
    if !u.is_finite() {
        return Err(Failure::Usage(format!("level must be finite, got {u}")));
    }
    let mode = a.level.mode;
    if let Some(t) = a.horizon {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Failure::Usage(format!("--horizon must be positive, got {t}")));
        }
    }

    let (asym, asym_fail) = settle(variance_rate_asymptotic(&k, u, mode, &spec));
    let finite = a.horizon.map(|t| (t, settle(variance_count(&k, u, t, mode, &spec))));

    let mut failures = Vec::new();
    let mut report = StatsReport {
        kernel: family,
        u,
        mode,
        mean_rate: levelcross::crossings::mean_rate(&k, u, mode),
        var_rate: asym.map(|s| s.variance),
        fano: asym.and_then(|s| s.fano),
        var_rate_error: asym.map(|s| s.diagnostics.error_estimate),
        converged: asym.is_some_and(|s| s.diagnostics.converged),
        clamped: asym.is_some_and(|s| s.diagnostics.clamped),
        error: asym_fail.as_ref().map(|f| f.message().to_string()),
        finite: None,
    };
    failures.extend(asym_fail);
    if let Some((t, (s, fail))) = finite {
        report.finite = Some(FiniteReport {
            horizon: t,
            mean_count: t * report.mean_rate,
            variance_count: s.map(|s| s.variance),
            fano: s.filter(|s| s.mean > 0.0).map(|s| s.variance / s.mean),
            variance_error: s.map(|s| s.diagnostics.error_estimate),
            converged: s.is_some_and(|s| s.diagnostics.converged),
            error: fail.as_ref().map(|f| f.message().to_string()),
        });
        failures.extend(fail);
    }

    let text = if a.output.json {
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
    } else {
        let mut s = String::new();
        let mut line = |k: &str, v: String| writeln!(s, "{k:<16}{v}").unwrap();
        line("kernel", format!("{family:?}"));
        line("u", num(u));
        line("mode", mode.to_string());
        line("mean_rate", num(report.mean_rate));
        line("var_rate", opt(report.var_rate));
        line("fano", opt(report.fano));
        line("var_rate_error", opt(report.var_rate_error));
        line("converged", report.converged.to_string());
        if let Some(e) = &report.error {
            line("error", e.clone());
        }
        if let Some(f) = &report.finite {
            line("horizon", num(f.horizon));
            line("mean_count", num(f.mean_count));
            line("variance_count", opt(f.variance_count));
            line("fano_count", opt(f.fano));
            line("variance_error", opt(f.variance_error));
            line("converged_count", f.converged.to_string());
            if let Some(e) = &f.error {
                line("error_count", e.clone());
            }
        }
        s
    };
    emit(a.output.out.as_deref(), &text)?;
    // A usage-type failure outranks a numeric one.
    match failures.into_iter().min_by_key(|f| f.code()) {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct SimRow {
    u: f64,
    analytic_mean: f64,
    sim_mean: f64,
    mean_se: f64,
    z_mean: f64,
    analytic_variance: Option<f64>,
    sim_variance: f64,
    variance_se: f64,
    z_variance: Option<f64>,
    analytic_fano: Option<f64>,
    sim_fano: Option<f64>,
    fano_se: Option<f64>,
    z_fano: Option<f64>,
    total_crossings: u64,
}

#[derive(Serialize)]
struct SimReport {
    source: SimSource,
    mode: CrossingMode,
    horizon: f64,
    dt: f64,
    steps: usize,
    trials: usize,
    seed: u64,
    refine_depth: u32,
    rows: Vec<SimRow>,
}

const Z_LIMIT: f64 = 4.0;

pub fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let family = a.kernel.family()?;
    let source = match family {
        _ if a.circulant => SimSource::Kernel(family),
        KernelFamily::Sdho { omega0, zeta, theta } => SimSource::Sdho { omega0, zeta, theta },
        KernelFamily::OuMeanRevert { sigma, tau_f, tau_e } => SimSource::OuSystem { sigma, tau_f, tau_e },
        other => SimSource::Kernel(other),
    };
    let spec = a.quad.spec()?;
    if a.u.iter().any(|u| !u.is_finite()) {
        return Err(Failure::Usage("levels must be finite".into()));
    }
    let base = SimConfig::with_slow_step(source, a.horizon, a.dt_factor, a.trials, a.seed).map_err(sim_failure)?;
    let config = SimConfig {
        u: a.u[0],
        mode: a.mode,
        bootstrap_resamples: a.bootstrap,
        refine_depth: if matches!(source, SimSource::Kernel(_)) { 0 } else { a.refine_depth },
        ..base
    };
    let k = config.validate().map_err(sim_failure)?;

    if let Some(p) = &a.dump_path {
        let file = File::create(p).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", p.display())))?;
        let path = simulate_paths(&config).map_err(sim_failure)?.path(0);
        dump_path(&path, BufWriter::new(file)).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", p.display())))?;
    }

    let estimates = estimate_stats_levels(&config, &a.u).map_err(sim_failure)?;
    let mut numeric = None;
    let mut rows = Vec::new();
    for est in estimates {
        let (exact, fail) = settle(variance_count(&k, est.u, a.horizon, a.mode, &spec));
        if numeric.is_none() {
            numeric = fail;
        }
        let analytic_mean = a.horizon * levelcross::crossings::mean_rate(&k, est.u, a.mode);
        let analytic_fano = exact.filter(|s| s.mean > 0.0).map(|s| s.variance / s.mean);
        rows.push(SimRow {
            u: est.u,
            analytic_mean,
            sim_mean: est.mean,
            mean_se: est.mean_se,
            z_mean: (est.mean - analytic_mean) / est.mean_se,
            analytic_variance: exact.map(|s| s.variance),
            sim_variance: est.variance,
            variance_se: est.variance_se,
            z_variance: exact.map(|s| {
                let err = s.diagnostics.error_estimate;
                (est.variance - s.variance) / (est.variance_se.powi(2) + err * err).sqrt()
            }),
            analytic_fano,
            sim_fano: est.fano,
            fano_se: est.fano_se,
            z_fano: match (est.fano, analytic_fano, est.fano_se) {
                (Some(f), Some(g), Some(se)) => Some((f - g) / se),
                _ => None,
            },
            total_crossings: est.total_crossings,
        });
    }
    let report = SimReport {
        source,
        mode: a.mode,
        horizon: a.horizon,
        dt: config.effective_dt(),
        steps: config.steps(),
        trials: a.trials,
        seed: a.seed,
        refine_depth: config.refine_depth,
        rows,
    };

    let text = if a.output.json {
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
    } else {
        let mut s = String::new();
        writeln!(
            s,
            "# {:?}, mode {}, T = {}, dt = {:.6}, {} trials, seed {}, refine depth {}",
            source, a.mode, a.horizon, report.dt, a.trials, a.seed, report.refine_depth
        )
        .unwrap();
        writeln!(
            s,
            "{:>10} {:>12} {:>18} {:>7} {:>12} {:>18} {:>7} {:>9} {:>16} {:>7}",
            "u", "mean", "sim", "z", "variance", "sim", "z", "fano", "sim", "z"
        )
        .unwrap();
        let z = |v: Option<f64>| v.map_or_else(|| "-".into(), |z| format!("{z:+.2}"));
        let g = |v: Option<f64>, p: usize| v.map_or_else(|| "-".into(), |x| format!("{x:.p$}"));
        for r in &report.rows {
            writeln!(
                s,
                "{:>10} {:>12.4} {:>18} {:>7} {:>12} {:>18} {:>7} {:>9} {:>16} {:>7}",
                r.u,
                r.analytic_mean,
                format!("{:.4} ± {:.4}", r.sim_mean, r.mean_se),
                z(Some(r.z_mean)),
                g(r.analytic_variance, 4),
                format!("{:.4} ± {:.4}", r.sim_variance, r.variance_se),
                z(r.z_variance),
                g(r.analytic_fano, 5),
                match (r.sim_fano, r.fano_se) {
                    (Some(f), Some(se)) => format!("{f:.5} ± {se:.5}"),
                    (f, _) => g(f, 5),
                },
                z(r.z_fano),
            )
            .unwrap();
        }
        s
    };
    emit(a.output.out.as_deref(), &text)?;

    if let Some(f) = numeric {
        return Err(f);
    }
    let worst = report
        .rows
        .iter()
        .flat_map(|r| [Some(r.z_mean), r.z_variance, r.z_fano])
        .flatten()
        .fold(0.0_f64, |m, z| if z.is_nan() { f64::INFINITY } else { m.max(z.abs()) });
    if worst > Z_LIMIT {
        return Err(Failure::Statistical(format!("largest |z| = {worst:.2} exceeds {Z_LIMIT}")));
    }
    Ok(())
}

fn run_suite(suite: Suite, a: &VerifyArgs) -> SuiteReport {
    match suite {
        Suite::PlaneIntegrals => verification::theorem_integrals(200, a.seed),
        Suite::Lemmas => verification::lemmas(50, a.seed),
        Suite::Special => verification::special_functions(1000, a.seed),
        Suite::Integrands => verification::integrand_brute_force(),
        Suite::ZeroLevel => verification::zero_level(),
        Suite::Claims => verification::figure_claims(),
        Suite::Reentrance => verification::ou_reentrance(),
        Suite::Invariance => verification::invariance(10_000, a.seed),
        Suite::Asymptotic => verification::asymptotic_convergence(),
        Suite::MonteCarlo => verification::monte_carlo(a.trials, a.seed, a.refine_depth),
        Suite::All => unreachable!("expanded before running"),
    }
}

const ANALYTIC: [Suite; 9] = [
    Suite::PlaneIntegrals,
    Suite::Lemmas,
    Suite::Special,
    Suite::Integrands,
    Suite::ZeroLevel,
    Suite::Claims,
    Suite::Reentrance,
    Suite::Invariance,
    Suite::Asymptotic,
];

pub fn verify(a: VerifyArgs) -> Result<(), Failure> {
    let mut suites: Vec<Suite> = Vec::new();
    let requested = if a.suite.is_empty() { ANALYTIC.to_vec() } else { a.suite.clone() };
    for s in requested {
        let expanded: Vec<Suite> = if s == Suite::All {
            ANALYTIC.iter().copied().chain([Suite::MonteCarlo]).collect()
        } else {
            vec![s]
        };
        for e in expanded {
            if !suites.contains(&e) {
                suites.push(e);
            }
        }
    }

    let mut reports = Vec::new();
    let mut text = String::new();
    for &suite in &suites {
        let rep = run_suite(suite, &a);
        if !a.output.json {
            writeln!(text, "{}", rep.summary()).unwrap();
            for f in &rep.failures {
                writeln!(text, "    {f}").unwrap();
            }
            if a.verbose {
                for n in &rep.notes {
                    writeln!(text, "    note: {n}").unwrap();
                }
            }
        }
        reports.push((suite, rep));
    }
    if a.output.json {
        let all: Vec<&SuiteReport> = reports.iter().map(|(_, r)| r).collect();
        text = serde_json::to_string_pretty(&all).expect("reports serialize") + "\n";
    }
    emit(a.output.out.as_deref(), &text)?;

    let failed: Vec<&(Suite, SuiteReport)> = reports.iter().filter(|(_, r)| !r.passed()).collect();
    if failed.is_empty() {
        return Ok(());
    }
    let names: Vec<&str> = failed.iter().map(|(_, r)| r.name.as_str()).collect();
    let message = format!("{} of {} suites failed: {}", failed.len(), reports.len(), names.join(", "));
    if failed.iter().all(|(s, _)| *s == Suite::MonteCarlo) {
        Err(Failure::Statistical(message))
    } else {
        Err(Failure::Numeric(message))
    }
}
