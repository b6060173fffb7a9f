//! Oracle suites: each compares a closed form against an independent
//! computation and reports every check that misses its tolerance.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::crossings::*;
use crate::kernels::*;
use crate::montecarlo::*;
use crate::quadrature::{integrate_finite, EndpointPolicy, QuadratureSpec};
use crate::special::{erf, erfc, owens_t};

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub checks: usize,
    pub failures: Vec<String>,
    /// Largest error/tolerance ratio seen.
    pub worst_ratio: f64,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl SuiteReport {
    fn new(name: &str) -> Self {
        Self { name: name.into(), checks: 0, failures: Vec::new(), worst_ratio: 0.0, notes: Vec::new(), elapsed: Duration::ZERO }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checks > 0
    }

    fn check(&mut self, err: f64, tol: f64, label: impl FnOnce() -> String) {
        self.checks += 1;
        let ratio = err / tol;
        if ratio.is_nan() || ratio > self.worst_ratio {
            self.worst_ratio = if ratio.is_nan() { f64::INFINITY } else { ratio };
        }
        if !(err <= tol) {
            self.failures.push(format!("{}: error {err:.3e} > {tol:.1e}", label()));
        }
    }

    fn claim(&mut self, ok: bool, label: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures.push(label());
        }
    }

    fn fail(&mut self, label: String) {
        self.checks += 1;
        self.worst_ratio = f64::INFINITY;
        self.failures.push(label);
    }

    fn timed(mut self, start: Instant) -> Self {
        self.elapsed = start.elapsed();
        self
    }

    /// One-line summary, e.g. for a terminal.
    pub fn summary(&self) -> String {
        format!(
            "{} {}: {} checks, {} failed, worst error/tol {:.2e}, {:.1}s",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.checks,
            self.failures.len(),
            self.worst_ratio,
            self.elapsed.as_secs_f64()
        )
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn tight() -> QuadratureSpec {
    QuadratureSpec { rel_tol: 1e-13, abs_tol: 1e-300, max_subdivisions: 4000, endpoint: EndpointPolicy::Closed, ..QuadratureSpec::default() }
}

fn quad<F: FnMut(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
    quad_with(f, lo, hi, &tight())
}

fn quad_with<F: FnMut(f64) -> f64>(f: F, lo: f64, hi: f64, spec: &QuadratureSpec) -> f64 {
    integrate_finite(f, lo, hi, spec).map(|r| r.value).unwrap_or(f64::NAN)
}

fn quad_split<F: FnMut(f64) -> f64>(f: F, lo: f64, hi: f64, breaks: &[f64]) -> f64 {
    quad_split_with(f, lo, hi, breaks, &tight())
}

fn quad_split_with<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, breaks: &[f64], spec: &QuadratureSpec) -> f64 {
    let mut pts = vec![lo];
    pts.extend(breaks.iter().copied().filter(|&b| b > lo && b < hi));
    pts.push(hi);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    pts.windows(2).map(|w| quad_with(&mut f, w[0], w[1], spec)).sum()
}

fn draw_abg(rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    (rng.gen_range(0.1..10.0), rng.gen_range(0.1..10.0), rng.gen_range(-3.0..3.0))
}

/// Closed forms of the two velocity-plane integrals against nested quadrature.
pub fn theorem_integrals(draws: usize, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut rep = SuiteReport::new("theorem integrals");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..draws {
        let (a, b, g) = draw_abg(&mut rng);
        let (up, total) = theorem_closed_forms(a, b, g);
        match bruteforce_theorem_integrals(a, b, g) {
            Ok((bu, bt)) => {
                rep.check(rel(up, bu), 1e-9, || format!("up at ({a}, {b}, {g})"));
                rep.check(rel(total, bt), 1e-9, || format!("total at ({a}, {b}, {g})"));
            }
            Err(e) => rep.fail(format!("quadrature at ({a}, {b}, {g}): {e}")),
        }
    }
    rep.timed(start)
}

// erf(A) + erf(B) without cancellation when the two have opposite signs.
fn erf_pair(a: f64, b: f64) -> f64 {
    if a >= 0.0 && b <= 0.0 {
        erfc(-b) - erfc(a)
    } else if a <= 0.0 && b >= 0.0 {
        erfc(-a) - erfc(b)
    } else {
        erf(a) + erf(b)
    }
}

/// The six one- and two-dimensional identities behind the plane integrals.
pub fn lemmas(draws: usize, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut rep = SuiteReport::new("lemma identities");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sqpi = PI.sqrt();
    for _ in 0..draws {
        let (a, b, g) = draw_abg(&mut rng);
        let s = a + b;
        let shift = |x: f64| (-a * (x - g).powi(2)).exp();

        // inner integral over y > |x|
        let x: f64 = rng.gen_range(-3.0..3.0);
        let ax = x.abs();
        let lhs = quad(|y| (y * y - x * x) * (-b * y * y).exp(), ax, ax + (80.0 / b).sqrt()) * shift(x);
        let rhs = ax * (-a * (x - g).powi(2) - b * x * x).exp() / (2.0 * b)
            - sqpi / (4.0 * b.powf(1.5)) * (2.0 * b * x * x - 1.0) * shift(x) * erfc(b.sqrt() * ax);
        rep.check(rel(lhs, rhs), 1e-9, || format!("inner y-integral at ({a}, {b}, {g}, x={x})"));

        // |x| against a shifted Gaussian
        let centre = a * g / s;
        let w = (80.0 / s).sqrt();
        let lhs = quad_split(|x| x.abs() * (-a * (x - g).powi(2) - b * x * x).exp(), centre - w, centre + w, &[0.0]);
        let erf_term = if g == 0.0 {
            0.0
        } else {
            sqpi * a * g * (-a * b * g * g / s).exp() * erf(a * g / s.sqrt())
        };
        let rhs = ((-a * g * g).exp() * s.sqrt() + erf_term) / s.powf(1.5);
        rep.check(rel(lhs, rhs), 1e-9, || format!("|x| Gaussian at ({a}, {b}, {g})"));

        // (2x² − 1) against a Gaussian; sign-changing, so the error is
        // measured against the larger of |rhs| and 1e-3 of the L1 norm
        let k = a / b;
        let m = g * b.sqrt();
        let w = (80.0 / k).sqrt();
        let poly = |x: f64| (2.0 * x * x - 1.0) * (-k * (x - m).powi(2)).exp();
        let lhs = quad_split(poly, m - w, m + w, &[-FRAC_1_SQRT_2, FRAC_1_SQRT_2]);
        let norm = quad_split(|x| poly(x).abs(), m - w, m + w, &[-FRAC_1_SQRT_2, FRAC_1_SQRT_2]);
        let rhs = sqpi * (b / a).sqrt() * (b / a + 2.0 * b * g * g - 1.0);
        rep.check((lhs - rhs).abs() / rhs.abs().max(1e-3 * norm), 1e-9, || format!("polynomial Gaussian at ({a}, {b}, {g})"));

        // four-term exponential on the half line; e^{4αγx/√β} is folded
        // into the second Gaussian
        let f = |x: f64| {
            (-k * (x + m).powi(2) - x * x).exp() * (m - x) - (x + m) * (-k * (x - m).powi(2) - x * x).exp()
        };
        let hi = m.abs() + 12.0;
        let lhs = quad_split(f, 0.0, hi, &[m.abs() * k / (k + 1.0), m.abs()]);
        let erf_term = if g == 0.0 {
            0.0
        } else {
            sqpi * g * (2.0 * a + b) * (-a * b * g * g / s).exp() * erf(a * g / s.sqrt())
        };
        let rhs = -b * ((-a * g * g).exp() * s.sqrt() + erf_term) / s.powf(1.5);
        rep.check(rel(lhs, rhs), 1e-9, || format!("four-term exponential at ({a}, {b}, {g})"));

        // erf pair against Owen's T
        let ks = k.sqrt();
        let f = |x: f64| (-x * x).exp() * erf_pair(ks * (x + m), ks * (x - m));
        let lhs = quad_split(f, 0.0, m.abs() + 12.0, &[m.abs() * k / (k + 1.0), m.abs()]);
        let rhs = 4.0 * sqpi * owens_t((2.0 * a * b / s).sqrt() * g, ks);
        rep.check(rel(lhs, rhs), 1e-9, || format!("erf pair at ({a}, {b}, {g})"));

        // full-plane (y² − x²) integral by nested quadrature; sign-changing
        let (wx, wy) = ((80.0 / a).sqrt(), (80.0 / b).sqrt());
        let outer = QuadratureSpec { rel_tol: 1e-11, ..tight() };
        let plane = |signed: bool| {
            quad_split_with(
                |x| {
                    let inner = |y: f64| {
                        let v = (y * y - x * x) * (-b * y * y).exp();
                        if signed { v } else { v.abs() }
                    };
                    quad_split(inner, -wy, wy, &[-x.abs(), 0.0, x.abs()]) * shift(x)
                },
                g - wx,
                g + wx,
                &[0.0, g],
                &outer,
            )
        };
        let lhs = plane(true);
        let norm = plane(false);
        let rhs = 0.5 * PI * (a - b - 2.0 * a * b * g * g) / (a * b).powf(1.5);
        rep.check((lhs - rhs).abs() / rhs.abs().max(1e-3 * norm), 1e-9, || format!("plane integral at ({a}, {b}, {g})"));
    }
    rep.timed(start)
}


/// Owen's T against direct quadrature of its defining integral.
pub fn special_functions(points: usize, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut rep = SuiteReport::new("special functions");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..points {
        let h: f64 = rng.gen_range(-8.0..8.0);
        let a: f64 = rng.gen_range(-2.0f64..2.0).signum() * 10f64.powf(rng.gen_range(-2.0..2.0));
        let direct = quad(|x| (-0.5 * h * h * (1.0 + x * x)).exp() / (1.0 + x * x), 0.0, a.abs()) / (2.0 * PI) * a.signum();
        rep.check((owens_t(h, a) - direct).abs(), 1e-12, || format!("T({h}, {a})"));
    }
    for i in 0..200 {
        let a = -50.0 + 0.5 * i as f64;
        rep.check((owens_t(0.0, a) - a.atan() / (2.0 * PI)).abs(), 1e-15, || format!("T(0, {a})"));
    }
    rep.timed(start)
}

fn integrand_grid_kernels() -> Vec<(String, Kernel)> {
    let mut v: Vec<(String, Kernel)> = [0.5, 1.0, 2.0]
        .iter()
        .map(|&z| (format!("sdho zeta={z}"), make_sdho(1.0, z, 1.0).unwrap()))
        .collect();
    v.push(("ou kappa=0.1".into(), make_ou_mean_revert(1.0, 3.0, 30.0).unwrap()));
    v.push(("se".into(), make_squared_exponential(1.0, 1.0).unwrap()));
    v.push(("rq alpha=0.75".into(), make_rational_quadratic(1.0, 1.0, 0.75).unwrap()));
    v
}

/// Closed-form integrands against 2D quadrature of the 4-variate density.
pub fn integrand_brute_force() -> SuiteReport {
    let start = Instant::now();
    let mut rep = SuiteReport::new("integrand vs brute force");
    for (name, k) in integrand_grid_kernels() {
        let tau = k.tau_slow();
        let sigma = k.amplitude();
        for &lag in &[0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
            for &level in &[0.0, 0.5, 1.5] {
                let (t, u) = (lag * tau, level * sigma);
                for mode in [CrossingMode::Up, CrossingMode::Total] {
                    let closed = integrand(&k, u, t, mode);
                    let brute = match mode {
                        CrossingMode::Total => bruteforce_integrand_total(&k, u, t),
                        _ => bruteforce_integrand_up(&k, u, t),
                    };
                    match (closed, brute) {
                        (Ok(c), Ok(b)) => rep.check((c - b).abs() / c.abs().max(1e-12), 1e-7, || {
                            format!("{name} {mode} t={t} u={u}: closed {c:e} brute {b:e}")
                        }),
                        (c, b) => rep.fail(format!("{name} {mode} t={t} u={u}: {c:?} {b:?}")),
                    }
                }
            }
        }
    }
    rep.timed(start)
}

fn builtin_kernels() -> Vec<(String, Kernel)> {
    let mut v = integrand_grid_kernels();
    v.push(("ou kappa=5".into(), make_ou_mean_revert(1.5, 4.0, 0.8).unwrap()));
    v.push(("rq alpha=3".into(), make_rational_quadratic(0.5, 1.0, 3.0).unwrap()));
    v
}

/// General-level machinery at u = 0 against the arctangent formulas.
pub fn zero_level() -> SuiteReport {
    let start = Instant::now();
    let mut rep = SuiteReport::new("zero-level consistency");
    let spec = QuadratureSpec::with_tolerances(1e-12, 1e-15);
    for (name, k) in builtin_kernels() {
        for mode in [CrossingMode::Up, CrossingMode::Total] {
            let rate = mode.multiplicity() * (k.q0() / k.r0()).sqrt() / (2.0 * PI);
            let general = variance_rate_asymptotic(&k, 0.0, mode, &spec);
            let zero = zero_level_stats(&k, Horizon::Asymptotic, mode, &spec);
            match (general, zero) {
                (Ok(g), Ok(z)) => {
                    rep.check(rel(g.mean, rate), 1e-10, || format!("{name} {mode} mean rate"));
                    rep.check(rel(z.mean, rate), 1e-10, || format!("{name} {mode} zero-level mean rate"));
                    rep.check(rel(g.variance, z.variance), 1e-10, || format!("{name} {mode} variance rate"));
                    let (gf, zf) = (g.fano.unwrap_or(f64::NAN), z.fano.unwrap_or(f64::NAN));
                    rep.check(rel(gf, zf), 1e-10, || format!("{name} {mode} fano {gf} vs {zf}"));
                }
                (g, z) => rep.fail(format!("{name} {mode}: {g:?} {z:?}")),
            }
        }
    }
    rep.timed(start)
}

fn fano_or_nan(k: &Kernel, u: f64, mode: CrossingMode, spec: &QuadratureSpec) -> f64 {
    fano(k, u, mode, spec).unwrap_or(f64::NAN)
}

fn psi_grid(points: usize) -> Vec<f64> {
    (0..points).map(|i| 4.0 * i as f64 / (points - 1) as f64).collect()
}

fn sign_changes(values: &[f64]) -> usize {
    values.windows(2).filter(|w| (w[0] - 1.0).signum() != (w[1] - 1.0).signum()).count()
}

/// Qualitative claims: mean rate free of damping, sub/super-Poisson regimes,
/// heavy-tail excess and reentrance of F − 1.
pub fn figure_claims() -> SuiteReport {
    let start = Instant::now();
    let mut rep = SuiteReport::new("figure claims");
    let spec = QuadratureSpec::default();

    for &u in &[0.0, 0.5, 1.0, 2.0, 3.0] {
        let rates: Vec<u64> = (0..13)
            .map(|i| {
                let zeta = 0.25 * 16f64.powf(i as f64 / 12.0);
                mean_rate(&make_sdho(1.0, zeta, 1.0).unwrap(), u, CrossingMode::Up).to_bits()
            })
            .collect();
        rep.claim(rates.iter().all(|&r| r == rates[0]), || format!("mean rate varies with zeta at u={u}"));
    }

    for &u in &[0.0, 1.0] {
        let under = fano_or_nan(&make_sdho(1.0, 0.5, 1.0).unwrap(), u, CrossingMode::Up, &spec);
        let over = fano_or_nan(&make_sdho(1.0, 2.5, 1.0).unwrap(), u, CrossingMode::Up, &spec);
        rep.claim(under < 1.0, || format!("F(zeta=0.5, u={u}) = {under} is not < 1"));
        rep.claim(over > 1.0, || format!("F(zeta=2.5, u={u}) = {over} is not > 1"));
    }

    let psi = psi_grid(50);
    let shape = KernelShape::RationalQuadratic { alpha: 0.75 };
    let curve: Vec<f64> = psi
        .iter()
        .map(|&p| dimensionless_fano(&shape, p, CrossingMode::Up, &spec).unwrap_or(f64::NAN))
        .collect();
    let (peak_idx, peak) = curve.iter().enumerate().fold((0, f64::MIN), |acc, (i, &f)| if f > acc.1 { (i, f) } else { acc });
    rep.claim(peak > 1.0, || format!("RQ 0.75 never exceeds 1 (max {peak})"));
    let tail = *curve.last().unwrap();
    rep.claim(
        curve.iter().all(|f| f.is_finite()) && (tail - 1.0).abs() < (peak - 1.0).abs() && peak_idx + 1 < curve.len(),
        || format!("RQ 0.75 does not head back towards 1: peak {peak} at psi={}, F(4) = {tail}", psi[peak_idx]),
    );
    rep.notes.push(format!("RQ 0.75: max F = {peak:.6} at psi = {:.3}, F(4) = {tail:.6}", psi[peak_idx]));
    // Large shape parameters: sub-Poissonian except for a sliver above 1,
    // of order 1e-5, on the high-threshold side.
    let large = KernelShape::RationalQuadratic { alpha: 50.0 };
    for &p in &psi {
        let f = dimensionless_fano(&large, p, CrossingMode::Up, &spec).unwrap_or(f64::NAN);
        if p <= 3.5 {
            rep.claim(f < 1.0, || format!("RQ 50 at psi={p}: F = {f} is not < 1"));
        } else {
            rep.claim(f < 1.0 + 1e-4, || format!("RQ 50 at psi={p}: F = {f} is not < 1 + 1e-4"));
        }
    }
    rep.timed(start)
}

/// Looks for a κ on a log grid in [0.05, 5] where F↑ − 1 changes sign at
/// least twice along ψ ∈ [0, 4] (sub → super → sub).
pub fn ou_reentrance() -> SuiteReport {
    let start = Instant::now();
    let mut rep = SuiteReport::new("ou reentrance");
    let spec = QuadratureSpec::default();
    let psi = psi_grid(41);
    let mut most = (0usize, f64::NAN);
    let mut found = None;
    for i in 0..25 {
        let kappa = 0.05 * 100f64.powf(i as f64 / 24.0);
        let shape = KernelShape::OuMeanRevert { kappa };
        let curve: Vec<f64> = psi
            .iter()
            .map(|&p| dimensionless_fano(&shape, p, CrossingMode::Up, &spec).unwrap_or(f64::NAN))
            .collect();
        if !curve.iter().all(|f| f.is_finite()) {
            rep.fail(format!("kappa={kappa}: non-finite Fano factor on the grid"));
            continue;
        }
        let changes = sign_changes(&curve);
        if changes > most.0 || most.1.is_nan() {
            most = (changes, kappa);
        }
        if changes >= 2 {
            found = Some(kappa);
            break;
        }
    }
    rep.notes.push(format!("most sign changes of F - 1: {} (kappa = {:.4})", most.0, most.1));
    rep.claim(found.is_some(), || format!("no kappa with two sign changes of F - 1; at most {} (kappa = {:.4})", most.0, most.1));
    rep.timed(start)
}

/// Scale, sign and parametrisation invariances.
pub fn invariance(draws: usize, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut rep = SuiteReport::new("invariance");
    let spec = QuadratureSpec::default();
    let modes = [CrossingMode::Up, CrossingMode::Total];

    for mode in modes {
        for &psi in &[0.0, 1.0, 2.0] {
            let families: [(&str, Box<dyn Fn(f64) -> Kernel>); 3] = [
                ("rq 0.75", Box::new(|tau| make_rational_quadratic(1.0, tau, 0.75).unwrap())),
                ("rq 3", Box::new(|tau| make_rational_quadratic(1.0, tau, 3.0).unwrap())),
                ("se", Box::new(|tau| make_squared_exponential(1.0, tau).unwrap())),
            ];
            for (name, make) in families.iter() {
                let f: Vec<f64> = [0.5, 1.0, 7.0].iter().map(|&tau| fano_or_nan(&make(tau), psi, mode, &spec)).collect();
                let dev = f.iter().map(|x| (x - f[1]).abs()).fold(0.0, f64::max);
                rep.check(dev, 1e-8, || format!("{name} {mode} psi={psi}: tau dependence {f:?}"));
            }
            let f: Vec<f64> = [0.3, 1.0, 4.0]
                .iter()
                .map(|&sigma| fano_or_nan(&make_sdho(1.0, 0.7, sigma * sigma).unwrap(), psi * sigma, mode, &spec))
                .collect();
            let dev = f.iter().map(|x| (x - f[1]).abs()).fold(0.0, f64::max);
            rep.check(dev, 1e-8, || format!("sdho {mode} psi={psi}: sigma dependence {f:?}"));
            for (name, k) in builtin_kernels() {
                let u = psi * k.amplitude();
                let (a, b) = (fano_or_nan(&k, u, mode, &spec), fano_or_nan(&k, -u, mode, &spec));
                rep.check((a - b).abs(), 1e-12, || format!("{name} {mode}: F(u) {a} vs F(-u) {b}"));
            }
            for &(s, tf, te) in &[(1.0, 3.0, 30.0), (2.0, 1.0, 0.25), (0.7, 2.0, 1.9)] {
                let ou = make_ou_mean_revert(s, tf, te).unwrap();
                let (w, z, th) = ou_to_sdho(s, tf, te);
                let sd = make_sdho(w, z, th).unwrap();
                let (a, b) = (fano_or_nan(&ou, psi * s, mode, &spec), fano_or_nan(&sd, psi * s, mode, &spec));
                rep.check((a - b).abs(), 1e-8, || format!("ou ({s}, {tf}, {te}) {mode} psi={psi}: {a} vs mapped {b}"));
            }
        }
    }
    for (name, k) in builtin_kernels() {
        for &t in &[0.3, 1.7, 6.0] {
            let t = t * k.tau_slow();
            for mode in modes {
                let (a, b) = (integrand(&k, 1.3, t, mode), integrand(&k, -1.3, t, mode));
                rep.claim(matches!((&a, &b), (Ok(x), Ok(y)) if x == y), || format!("{name} {mode} t={t}: {a:?} vs {b:?}"));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0usize;
    for _ in 0..draws {
        let family = match rng.gen_range(0..4) {
            0 => KernelFamily::Sdho { omega0: rng.gen_range(0.1..10.0), zeta: rng.gen_range(0.05..5.0), theta: rng.gen_range(0.1..10.0) },
            1 => KernelFamily::OuMeanRevert { sigma: rng.gen_range(0.1..10.0), tau_f: rng.gen_range(0.1..10.0), tau_e: rng.gen_range(0.1..10.0) },
            2 => KernelFamily::RationalQuadratic { sigma: rng.gen_range(0.1..10.0), tau: rng.gen_range(0.1..10.0), alpha: rng.gen_range(0.5..20.0) },
            _ => KernelFamily::SquaredExponential { sigma: rng.gen_range(0.1..10.0), tau: rng.gen_range(0.1..10.0) },
        };
        let k = Kernel::from_family(family).unwrap();
        let t = k.tau_slow() * 10f64.powf(rng.gen_range(-4.0..1.0));
        let u = k.amplitude() * rng.gen_range(-4.0..4.0);
        match abg_params(&k, u, t) {
            Ok(p) if p.alpha > 0.0 && p.beta > 0.0 => {}
            other => {
                bad += 1;
                if bad <= 5 {
                    rep.notes.push(format!("{family:?} t={t} u={u}: {other:?}"));
                }
            }
        }
    }
    rep.claim(bad == 0, || format!("{bad} of {draws} draws with non-positive alpha or beta"));
    rep.timed(start)
}

/// Var[N(T)]/T at a long horizon against the asymptotic variance rate.
pub fn asymptotic_convergence() -> SuiteReport {
    let start = Instant::now();
    let mut rep = SuiteReport::new("finite to asymptotic");
    let spec = QuadratureSpec::default();
    let k = make_sdho(1.0, 1.0, 1.0).unwrap();
    let horizon = 200.0 * k.tau_slow();
    for mode in [CrossingMode::Up, CrossingMode::Total] {
        match (variance_count(&k, 0.5, horizon, mode, &spec), variance_rate_asymptotic(&k, 0.5, mode, &spec)) {
            (Ok(f), Ok(a)) => {
                let per_time = f.variance / horizon;
                rep.check(rel(per_time, a.variance), 1e-2, || format!("{mode}: {per_time} vs {}", a.variance));
            }
            (f, a) => rep.fail(format!("{mode}: {f:?} {a:?}")),
        }
    }
    rep.timed(start)
}

/// Oscillator simulations against the analytic mean, variance and Fano factor.
pub fn monte_carlo(trials: usize, seed: u64, refine_depth: u32) -> SuiteReport {
    let start = Instant::now();
    let mut rep = SuiteReport::new("monte carlo");
    let spec = QuadratureSpec::default();
    let horizon = 120.0;
    let levels = [0.0, 0.25, 0.5];
    for &zeta in &[0.5, 1.0, 2.0] {
        let source = SimSource::Sdho { omega0: 1.0, zeta, theta: 1.0 };
        let config = match SimConfig::with_slow_step(source, horizon, 0.01, trials, seed) {
            Ok(c) => SimConfig { refine_depth, ..c },
            Err(e) => {
                rep.fail(format!("zeta={zeta}: {e}"));
                continue;
            }
        };
        let k = make_sdho(1.0, zeta, 1.0).unwrap();
        let estimates = match estimate_stats_levels(&config, &levels) {
            Ok(e) => e,
            Err(e) => {
                rep.fail(format!("zeta={zeta}: {e}"));
                continue;
            }
        };
        for est in estimates {
            let exact = match variance_count(&k, est.u, horizon, CrossingMode::Up, &spec) {
                Ok(s) => s,
                Err(e) => {
                    rep.fail(format!("zeta={zeta} u={}: {e}", est.u));
                    continue;
                }
            };
            let err = exact.diagnostics.error_estimate;
            let z_mean = (est.mean - exact.mean) / est.mean_se;
            let z_var = (est.variance - exact.variance) / (est.variance_se.powi(2) + err * err).sqrt();
            let fano_exact = exact.variance / exact.mean;
            let fano_est = est.fano.unwrap_or(f64::NAN);
            let z_fano = (fano_est - fano_exact) / est.fano_se.unwrap_or(f64::NAN);
            let cell = format!("zeta={zeta} u={}", est.u);
            rep.check(z_mean.abs(), 3.0, || format!("{cell} mean {} vs {}", est.mean, exact.mean));
            rep.check(z_var.abs(), 3.0, || format!("{cell} variance {} vs {}", est.variance, exact.variance));
            rep.check(z_fano.abs(), 4.0, || format!("{cell} fano {fano_est} vs {fano_exact}"));
            rep.notes.push(format!("{cell}: z(mean) {z_mean:+.2}, z(var) {z_var:+.2}, z(fano) {z_fano:+.2}"));
        }
    }
    rep.timed(start)
}
