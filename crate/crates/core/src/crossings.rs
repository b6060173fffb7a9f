//! Mean, variance and Fano factor of level crossings of a smooth stationary
//! Gaussian process.
//!
//! All lag integrals are carried out on I/I₂, the crossing-pair integrand
//! normalized by its large-lag product term, in units of τ_slow. That keeps
//! the absolute quadrature tolerance meaningful at any level u and any time
//! scale.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{check_validity_default, Autocorrelation, KernelError, KernelShape};
use crate::quadrature::{
    integrate_finite, integrate_semi_infinite, EndpointPolicy, QuadratureError, QuadratureResult, QuadratureSpec,
    TailPolicy,
};
use crate::special::{erf, owens_t};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingMode {
    Up,
    /// Statistically identical to `Up`.
    Down,
    Total,
}

impl CrossingMode {
    fn is_total(self) -> bool {
        self == CrossingMode::Total
    }

    pub fn multiplicity(self) -> f64 {
        if self.is_total() {
            2.0
        } else {
            1.0
        }
    }
}

impl std::str::FromStr for CrossingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "up" => Ok(CrossingMode::Up),
            "down" => Ok(CrossingMode::Down),
            "total" => Ok(CrossingMode::Total),
            other => Err(format!("unknown crossing mode '{other}' (expected up, down or total)")),
        }
    }
}

impl std::fmt::Display for CrossingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CrossingMode::Up => "up",
            CrossingMode::Down => "down",
            CrossingMode::Total => "total",
        })
    }
}

#[derive(Debug, Clone, Error)]
pub enum CrossingError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("degenerate lag t = {t}: r0² − r² is not resolvable in double precision")]
    DegenerateLag { t: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("kernel fails validity requirements: {0}")]
    Validity(String),
    #[error("negative variance {variance} exceeds 10x the quadrature error {error}")]
    NegativeVariance { variance: f64, error: f64 },
    #[error("quadrature did not converge (error estimate {})", .0.diagnostics.error_estimate)]
    NotConverged(Box<CrossingStats>),
}

/// Parameters of the rotated velocity Gaussian at lag t and level u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    /// (r0² − r²)/(4αβ)
    pub determinant: f64,
    /// 2q0α − 1 and 2q0β − 1, both → 0 as the process decorrelates
    pub alpha_excess: f64,
    pub beta_excess: f64,
    /// √(r0² − r²)
    pub root_gap: f64,
    pub r: f64,
}

pub fn abg_params<K: Autocorrelation + ?Sized>(kernel: &K, u: f64, t: f64) -> Result<CrossingParams, CrossingError> {
    if !(t > 0.0) {
        return Err(CrossingError::InvalidArgument(format!("lag must be positive, got {t}")));
    }
    let c = kernel.lag_covariance(t)?;
    let r0 = kernel.r0();
    let r_sum = r0 + c.r;
    let resolvable = c.r_gap > 0.0 && r_sum > 0.0 && c.d_alpha > 0.0 && c.d_beta > 0.0;
    if !resolvable || !(c.d_alpha.is_finite() && c.d_beta.is_finite()) {
        return Err(CrossingError::DegenerateLag { t });
    }
    let p2 = c.p * c.p;
    Ok(CrossingParams {
        alpha: r_sum / (2.0 * c.d_alpha),
        beta: c.r_gap / (2.0 * c.d_beta),
        gamma: std::f64::consts::SQRT_2 * c.p * u / r_sum,
        delta: 1.0 / r_sum,
        determinant: c.d_alpha * c.d_beta,
        alpha_excess: (c.q * r_sum + p2) / c.d_alpha,
        beta_excess: (p2 - c.q * c.r_gap) / c.d_beta,
        root_gap: (c.r_gap * r_sum).sqrt(),
        r: c.r,
    })
}

/// Large-lag product term I₂: (q0/r0)e^{−u²/r0}/(4π²) for up, four times that for total.
pub fn product_term<K: Autocorrelation + ?Sized>(kernel: &K, u: f64, mode: CrossingMode) -> f64 {
    let (r0, q0) = (kernel.r0(), kernel.q0());
    let up = q0 / r0 * (-u * u / r0).exp() / (4.0 * PI * PI);
    if mode.is_total() {
        4.0 * up
    } else {
        up
    }
}

/// I/I₂ at lag t. Uses the expm1/log1p excess form when the excess is small
/// and a log-combined direct form otherwise.
pub fn normalized_integrand<K: Autocorrelation + ?Sized>(
    kernel: &K,
    u: f64,
    t: f64,
    mode: CrossingMode,
) -> Result<f64, CrossingError> {
    let prm = abg_params(kernel, u, t)?;
    Ok(normalized_from_params(&prm, kernel.r0(), kernel.q0(), u, mode))
}

fn normalized_from_params(prm: &CrossingParams, r0: f64, q0: f64, u: f64, mode: CrossingMode) -> f64 {
    let (a, b, g) = (prm.alpha, prm.beta, prm.gamma);
    let (ae, be) = (prm.alpha_excess, prm.beta_excess);
    let s = a + b;
    let rho = prm.r / r0;
    // L = ln(pref·q0/I₂) with pref = e^{−δu²}/(4π²√(r0²−r²))
    let log_det = if rho.abs() < 0.5 { (-rho * rho).ln_1p() } else { (prm.root_gap / r0).ln() * 2.0 };
    let l = u * u * prm.r * prm.delta / r0 - 0.5 * log_det;
    let x = -a * g * g - 0.5 * (ae.ln_1p() + be.ln_1p());
    let k_over_q0 = 2.0 * (ae - be) / ((1.0 + ae) * (1.0 + be)) - 2.0 * g * g / q0;

    let h = g * (2.0 * a * b / s).sqrt();
    let owen = owens_t(h, (a / b).sqrt());
    let owen_term = if mode.is_total() { owen - 0.125 } else { owen };
    // e^{x}·√π γ √(α+β) e^{α²γ²/(α+β)} erf(αγ/√(α+β)), non-negative
    let erf_log = if g == 0.0 {
        None
    } else {
        let e = erf(a * g / s.sqrt()).abs();
        (e > 0.0).then(|| x + a * a * g * g / s + (PI.sqrt() * g.abs() * s.sqrt() * e).ln())
    };

    let b2 = erf_log.map_or(0.0, f64::exp);
    let excess = x.exp_m1() + b2 + PI * k_over_q0 * owen_term;
    if l.abs() < 0.5 && excess.abs() < 0.5 {
        return l.exp_m1() + l.exp() * excess;
    }
    let t1 = (l + x).exp();
    let t2 = erf_log.map_or(0.0, |e| (l + e).exp());
    let t3 = if owen_term == 0.0 {
        0.0
    } else {
        PI * k_over_q0 * owen_term.signum() * (l + owen_term.abs().ln()).exp()
    };
    t1 + t2 + t3 - 1.0
}

/// Crossing-pair excess integrand for upcrossings.
pub fn integrand_up<K: Autocorrelation + ?Sized>(kernel: &K, u: f64, t: f64) -> Result<f64, CrossingError> {
    integrand(kernel, u, t, CrossingMode::Up)
}

/// Crossing-pair excess integrand for all crossings.
pub fn integrand_total<K: Autocorrelation + ?Sized>(kernel: &K, u: f64, t: f64) -> Result<f64, CrossingError> {
    integrand(kernel, u, t, CrossingMode::Total)
}

pub fn integrand<K: Autocorrelation + ?Sized>(
    kernel: &K,
    u: f64,
    t: f64,
    mode: CrossingMode,
) -> Result<f64, CrossingError> {
    Ok(product_term(kernel, u, mode) * normalized_integrand(kernel, u, t, mode)?)
}

/// Mean crossings per unit time.
pub fn mean_rate<K: Autocorrelation + ?Sized>(kernel: &K, u: f64, mode: CrossingMode) -> f64 {
    let (r0, q0) = (kernel.r0(), kernel.q0());
    mode.multiplicity() * (q0 / r0).sqrt() * (-u * u / (2.0 * r0)).exp() / (2.0 * PI)
}

pub fn mean_count<K: Autocorrelation + ?Sized>(
    kernel: &K,
    u: f64,
    horizon: f64,
    mode: CrossingMode,
) -> Result<f64, CrossingError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(CrossingError::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    Ok(horizon * mean_rate(kernel, u, mode))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Finite(f64),
    /// Long-time limit: mean and variance are per unit time.
    Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Error estimate on the variance (or variance rate).
    pub error_estimate: f64,
    pub evaluations: usize,
    pub converged: bool,
    /// The raw variance was slightly negative and was clamped to zero.
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingStats {
    pub mode: CrossingMode,
    pub u: f64,
    /// Mean count (finite horizon) or mean rate (asymptotic).
    pub mean: f64,
    /// Variance of the count (finite horizon) or variance rate (asymptotic).
    pub variance: f64,
    /// Only defined in the long-time limit.
    pub fano: Option<f64>,
    pub horizon: Horizon,
    pub diagnostics: Diagnostics,
}

struct LagIntegral {
    value: f64,
    error: f64,
    evaluations: usize,
    converged: bool,
}

fn tail_spec(spec: &QuadratureSpec, algebraic: bool) -> QuadratureSpec {
    let tail = match spec.tail {
        TailPolicy::Auto if algebraic => TailPolicy::AlgebraicMap,
        TailPolicy::Auto => TailPolicy::ExponentialMap,
        other => other,
    };
    QuadratureSpec { tail, scale: 1.0, endpoint: EndpointPolicy::Closed, ..*spec }
}

// ∫ w(t̃)·g(t̃) dt̃ over (0, upper] in units of τ_slow, with the first sliver
// [0, t̃_min] estimated from the bounded integrand at t̃_min.
fn lag_integral<F>(
    mut g: F,
    upper: Option<f64>,
    t_min: f64,
    spec: &QuadratureSpec,
) -> Result<LagIntegral, CrossingError>
where
    F: FnMut(f64) -> Result<f64, CrossingError>,
{
    let mut failure: Option<CrossingError> = None;
    let mut wrapped = |t: f64| match g(t) {
        Ok(v) => v,
        Err(e) => {
            if failure.is_none() {
                failure = Some(e);
            }
            f64::NAN
        }
    };
    let head_value = wrapped(t_min);
    let head_half = wrapped(0.5 * t_min);
    let result: Result<QuadratureResult, QuadratureError> = match upper {
        Some(hi) => integrate_finite(&mut wrapped, t_min, hi, spec),
        None => integrate_semi_infinite(&mut wrapped, t_min, spec),
    };
    if let Some(e) = failure {
        return Err(e);
    }
    let r = result?;
    let head = t_min * head_value;
    let head_err = t_min * (head_value - head_half).abs();
    let error = r.error_estimate + head_err;
    Ok(LagIntegral {
        value: r.value + head,
        error,
        evaluations: r.evaluations + 2,
        converged: r.converged && error <= spec.abs_tol.max(spec.rel_tol * (r.value + head).abs()),
    })
}

const T_MIN: f64 = 1e-7;

fn gate<K: Autocorrelation + ?Sized>(kernel: &K, asymptotic: bool) -> Result<bool, CrossingError> {
    let report = check_validity_default(kernel);
    let ok = if asymptotic { report.supports_asymptotic() } else { report.supports_finite_variance() };
    if !ok {
        let failed: Vec<String> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .chain((!report.tail_integrable && asymptotic).then(|| "tail not integrable".to_string()))
            .collect();
        return Err(CrossingError::Validity(failed.join("; ")));
    }
    Ok(report.tail_integrable && !report.piterbarg_finite)
}

fn finish(mut stats: CrossingStats, raw_variance: f64) -> Result<CrossingStats, CrossingError> {
    let err = stats.diagnostics.error_estimate;
    if raw_variance < 0.0 {
        if raw_variance < -10.0 * err {
            return Err(CrossingError::NegativeVariance { variance: raw_variance, error: err });
        }
        stats.variance = 0.0;
        stats.diagnostics.clamped = true;
    } else {
        stats.variance = raw_variance;
    }
    if !stats.diagnostics.converged {
        return Err(CrossingError::NotConverged(Box::new(stats)));
    }
    Ok(stats)
}

fn check_level(u: f64) -> Result<(), CrossingError> {
    if u.is_finite() {
        Ok(())
    } else {
        Err(CrossingError::InvalidArgument(format!("level must be finite, got {u}")))
    }
}

/// Variance of the crossing count on [0, T].
pub fn variance_count<K: Autocorrelation + ?Sized>(
    kernel: &K,
    u: f64,
    horizon: f64,
    mode: CrossingMode,
    spec: &QuadratureSpec,
) -> Result<CrossingStats, CrossingError> {
    check_level(u)?;
    let mean = mean_count(kernel, u, horizon, mode)?;
    spec.validate()?;
    gate(kernel, false)?;
    let tau = kernel.tau_slow();
    let upper = horizon / tau;
    let t_min = T_MIN.min(1e-3 * upper);
    let qspec = tail_spec(spec, false);
    let li = lag_integral(
        |s| Ok((1.0 - s / upper) * normalized_integrand(kernel, u, s * tau, mode)?),
        Some(upper),
        t_min,
        &qspec,
    )?;
    let scale = 2.0 * horizon * product_term(kernel, u, mode) * tau;
    let stats = CrossingStats {
        mode,
        u,
        mean,
        variance: f64::NAN,
        fano: None,
        horizon: Horizon::Finite(horizon),
        diagnostics: Diagnostics {
            error_estimate: scale * li.error,
            evaluations: li.evaluations,
            converged: li.converged,
            clamped: false,
        },
    };
    finish(stats, mean + scale * li.value)
}

fn asymptotic_integral<K: Autocorrelation + ?Sized>(
    kernel: &K,
    u: f64,
    mode: CrossingMode,
    spec: &QuadratureSpec,
    algebraic: bool,
) -> Result<LagIntegral, CrossingError> {
    let tau = kernel.tau_slow();
    let qspec = tail_spec(spec, algebraic);
    lag_integral(|s| normalized_integrand(kernel, u, s * tau, mode), None, T_MIN, &qspec)
}

/// Long-time variance rate lim Var[N(T)]/T together with the mean rate and Fano factor.
pub fn variance_rate_asymptotic<K: Autocorrelation + ?Sized>(
    kernel: &K,
    u: f64,
    mode: CrossingMode,
    spec: &QuadratureSpec,
) -> Result<CrossingStats, CrossingError> {
    check_level(u)?;
    spec.validate()?;
    let algebraic = gate(kernel, true)? || kernel.algebraic_tail();
    let li = asymptotic_integral(kernel, u, mode, spec, algebraic)?;
    let mean = mean_rate(kernel, u, mode);
    let scale = 2.0 * product_term(kernel, u, mode) * kernel.tau_slow();
    // F − 1 written without the e^{±u²} factors that cancel between the
    // variance and the mean.
    let fano_scale = mode.multiplicity() * (kernel.q0() / kernel.r0()).sqrt() * kernel.tau_slow()
        * (-u * u / (2.0 * kernel.r0())).exp()
        / PI;
    let raw = mean + scale * li.value;
    let stats = CrossingStats {
        mode,
        u,
        mean,
        variance: f64::NAN,
        fano: Some((1.0 + fano_scale * li.value).max(0.0)),
        horizon: Horizon::Asymptotic,
        diagnostics: Diagnostics {
            error_estimate: scale * li.error,
            evaluations: li.evaluations,
            converged: li.converged,
            clamped: false,
        },
    };
    finish(stats, raw)
}

/// Long-time Fano factor lim Var[N(T)]/E[N(T)].
pub fn fano<K: Autocorrelation + ?Sized>(
    kernel: &K,
    u: f64,
    mode: CrossingMode,
    spec: &QuadratureSpec,
) -> Result<f64, CrossingError> {
    let stats = variance_rate_asymptotic(kernel, u, mode, spec)?;
    Ok(stats.fano.unwrap_or(f64::NAN))
}

/// Fano factor as a function of the kernel shape and ψ = u/σ only.
pub fn dimensionless_fano(
    shape: &KernelShape,
    psi: f64,
    mode: CrossingMode,
    spec: &QuadratureSpec,
) -> Result<f64, CrossingError> {
    let kernel = shape.unit_kernel()?;
    fano(&kernel, psi * kernel.amplitude(), mode, spec)
}

/// Zero-level excess integrand in its arctangent form.
pub fn zero_level_integrand<K: Autocorrelation + ?Sized>(
    kernel: &K,
    t: f64,
    mode: CrossingMode,
) -> Result<f64, CrossingError> {
    let (r0, q0) = (kernel.r0(), kernel.q0());
    let i2 = q0 / (4.0 * PI * PI * r0) * if mode.is_total() { 4.0 } else { 1.0 };
    Ok(i2 * zero_level_ratio(kernel, t, mode)?)
}

// Zero-level integrand divided by its product term. Both modes share the
// form e^{L}[1/(2q0√(αβ)) + (α−β)/(αβ)·θ/(2q0)] − 1 with L = ln(r0/√(r0²−r²)).
fn zero_level_ratio<K: Autocorrelation + ?Sized>(kernel: &K, t: f64, mode: CrossingMode) -> Result<f64, CrossingError> {
    let prm = abg_params(kernel, 0.0, t)?;
    let (a, b) = (prm.alpha, prm.beta);
    let (r0, q0) = (kernel.r0(), kernel.q0());
    let ratio = (a / b).sqrt();
    let angle = if mode.is_total() { ((ratio - 1.0) / (ratio + 1.0)).atan() } else { ratio.atan() };
    let l = (r0 / prm.root_gap).ln();
    if l < 0.5 {
        // Large lags: expand around the decorrelated limit.
        let (ae, be) = (prm.alpha_excess, prm.beta_excess);
        let x = -0.5 * (ae.ln_1p() + be.ln_1p());
        let k_over_q0 = 2.0 * (ae - be) / ((1.0 + ae) * (1.0 + be));
        let rho = prm.r / r0;
        let l = -0.5 * (-rho * rho).ln_1p();
        return Ok(l.exp_m1() + l.exp() * (x.exp_m1() + 0.5 * k_over_q0 * angle));
    }
    let bracket = 1.0 / (a * b).sqrt() + (a - b) / (a * b) * angle;
    Ok(r0 / (2.0 * q0 * prm.root_gap) * bracket - 1.0)
}

/// Statistics at u = 0 through the arctangent-form integrand, as an
/// independent path to the general one.
pub fn zero_level_stats<K: Autocorrelation + ?Sized>(
    kernel: &K,
    horizon: Horizon,
    mode: CrossingMode,
    spec: &QuadratureSpec,
) -> Result<CrossingStats, CrossingError> {
    spec.validate()?;
    let (r0, q0) = (kernel.r0(), kernel.q0());
    let rate = mode.multiplicity() * (q0 / r0).sqrt() / (2.0 * PI);
    let tau = kernel.tau_slow();
    let i2 = q0 / (4.0 * PI * PI * r0) * if mode.is_total() { 4.0 } else { 1.0 };
    let (mean, li, scale, fano_scale) = match horizon {
        Horizon::Finite(t_end) => {
            if !(t_end > 0.0 && t_end.is_finite()) {
                return Err(CrossingError::InvalidArgument(format!("horizon must be positive, got {t_end}")));
            }
            gate(kernel, false)?;
            let upper = t_end / tau;
            let qspec = tail_spec(spec, false);
            let li = lag_integral(
                |s| Ok((1.0 - s / upper) * zero_level_ratio(kernel, s * tau, mode)?),
                Some(upper),
                T_MIN.min(1e-3 * upper),
                &qspec,
            )?;
            (rate * t_end, li, 2.0 * t_end * i2 * tau, None)
        }
        Horizon::Asymptotic => {
            let algebraic = gate(kernel, true)? || kernel.algebraic_tail();
            let qspec = tail_spec(spec, algebraic);
            let li = lag_integral(|s| zero_level_ratio(kernel, s * tau, mode), None, T_MIN, &qspec)?;
            (rate, li, 2.0 * i2 * tau, Some(2.0 * i2 * tau / rate))
        }
    };
    let stats = CrossingStats {
        mode,
        u: 0.0,
        mean,
        variance: f64::NAN,
        fano: fano_scale.map(|c| (1.0 + c * li.value).max(0.0)),
        horizon,
        diagnostics: Diagnostics {
            error_estimate: scale * li.error,
            evaluations: li.evaluations,
            converged: li.converged,
            clamped: false,
        },
    };
    finish(stats, mean + scale * li.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::*;
    use proptest::prelude::*;

    fn sdho(zeta: f64) -> Kernel {
        make_sdho(1.0, zeta, 1.0).unwrap()
    }

    fn tight() -> QuadratureSpec {
        QuadratureSpec::with_tolerances(1e-12, 1e-15)
    }

    #[test]
    fn gamma_vanishes_at_zero_level() {
        for k in [sdho(0.5), make_squared_exponential(1.0, 1.0).unwrap()] {
            for &t in &[1e-4, 0.3, 2.0, 9.0] {
                assert_eq!(abg_params(&k, 0.0, t).unwrap().gamma, 0.0);
            }
        }
    }

    #[test]
    fn decorrelated_limit_of_parameters() {
        let k = make_squared_exponential(1.0, 1.0).unwrap();
        let p = abg_params(&k, 1.0, 50.0).unwrap();
        assert_eq!(p.delta, 1.0);
        assert_eq!(p.gamma.abs(), 0.0);
    }

    #[test]
    fn parameters_match_textbook_evaluation() {
        // Underdamped ACF written out independently: ω_d = √3/2.
        let t: f64 = 1.0;
        let wd = 3f64.sqrt() / 2.0;
        let e = (-0.5 * t).exp();
        let (s, c) = (wd * t).sin_cos();
        let r = e * (c + 0.5 / wd * s);
        let p = -e * s / wd;
        let q = e * (c - 0.5 / wd * s);
        let (r0, q0, u) = (1.0, 1.0, 1.0);
        let alpha = -(r + r0) / (2.0 * (p * p + (q - q0) * (r + r0)));
        let beta = -(r0 - r) / (2.0 * (p * p + (q + q0) * (r - r0)));
        let gamma = 2f64.sqrt() * p * u / (r + r0);
        let delta = 1.0 / (r + r0);
        let got = abg_params(&sdho(0.5), u, t).unwrap();
        for (a, b) in [(got.alpha, alpha), (got.beta, beta), (got.gamma, gamma), (got.delta, delta)] {
            assert!((a - b).abs() <= 1e-13 * b.abs(), "{a} vs {b}");
        }
        assert!((got.determinant - (r0 * r0 - r * r) / (4.0 * alpha * beta)).abs() <= 1e-10 * got.determinant);
    }

    #[test]
    fn determinant_identity() {
        for k in [sdho(0.3), sdho(1.0), sdho(3.0), make_rational_quadratic(1.0, 1.0, 0.75).unwrap()] {
            for &t in &[1e-3, 0.05, 0.7, 3.0, 12.0] {
                let p = abg_params(&k, 0.7, t).unwrap();
                let expected = p.root_gap * p.root_gap / (4.0 * p.alpha * p.beta);
                assert!((p.determinant - expected).abs() <= 1e-10 * expected);
            }
        }
    }

    #[test]
    fn mean_rates() {
        for &z in &[0.5, 1.0, 2.0] {
            let k = sdho(z);
            assert!((mean_rate(&k, 0.0, CrossingMode::Up) - 0.15915494309189535).abs() < 1e-16);
            assert!((mean_rate(&k, 1.0, CrossingMode::Up) - 0.096532352630053914).abs() < 1e-16);
            assert_eq!(mean_rate(&k, 0.7, CrossingMode::Total), 2.0 * mean_rate(&k, 0.7, CrossingMode::Up));
        }
        assert!(mean_count(&sdho(0.5), 0.0, 0.0, CrossingMode::Up).is_err());
    }

    #[test]
    fn mean_rate_independent_of_damping() {
        let base = mean_rate(&sdho(0.5), 0.8, CrossingMode::Up);
        for &z in &[0.05, 0.9, 1.0, 1.1, 4.0] {
            assert_eq!(mean_rate(&sdho(z), 0.8, CrossingMode::Up).to_bits(), base.to_bits());
        }
    }

    #[test]
    fn zero_level_reduction_of_integrands() {
        let k = sdho(0.5);
        for i in 1..=50 {
            let t = 0.2 * i as f64;
            for mode in [CrossingMode::Up, CrossingMode::Total] {
                let general = integrand(&k, 0.0, t, mode).unwrap();
                let zero = zero_level_integrand(&k, t, mode).unwrap();
                assert!((general - zero).abs() <= 1e-12 * zero.abs().max(1e-3), "t={t} {mode}: {general} {zero}");
            }
        }
    }

    #[test]
    fn integrands_vanish_when_decorrelated() {
        let k = make_squared_exponential(1.0, 1.0).unwrap();
        for u in [0.0, 1.0, 2.5] {
            assert!(integrand_up(&k, u, 60.0).unwrap().abs() < 1e-12);
            assert!(integrand_total(&k, u, 60.0).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn integrand_bounded_at_small_lags() {
        // Smooth-velocity kernels lose all paired crossings at coincident
        // times (I → −I₂); the damped kernels have rough velocities and keep
        // a finite pair density.
        let kernels = [sdho(0.5), sdho(2.0), make_ou_mean_revert(1.0, 3.0, 30.0).unwrap()];
        for k in kernels.iter() {
            for mode in [CrossingMode::Up, CrossingMode::Total] {
                let a = normalized_integrand(k, 0.5, 1e-7 * k.tau_slow(), mode).unwrap();
                let b = normalized_integrand(k, 0.5, 1e-8 * k.tau_slow(), mode).unwrap();
                assert!(a.is_finite() && (a - b).abs() < 1e-5 * (1.0 + a.abs()), "{a} {b}");
            }
        }
        for k in [make_squared_exponential(1.0, 1.0).unwrap(), make_rational_quadratic(1.0, 1.0, 0.75).unwrap()] {
            for mode in [CrossingMode::Up, CrossingMode::Total] {
                let v = normalized_integrand(&k, 0.5, 1e-6, mode).unwrap();
                assert!((v + 1.0).abs() < 1e-4, "{v}");
            }
        }
    }

    #[test]
    fn semi_infinite_integral_matches_arctangent_form() {
        let k = sdho(0.5);
        let spec = QuadratureSpec { scale: 1.0, ..QuadratureSpec::default() };
        let general = integrate_semi_infinite(|t| integrand_up(&k, 0.0, t.max(1e-9)).unwrap(), 0.0, &spec).unwrap();
        let zero =
            integrate_semi_infinite(|t| zero_level_integrand(&k, t.max(1e-9), CrossingMode::Up).unwrap(), 0.0, &spec)
                .unwrap();
        assert!((general.value - zero.value).abs() < 1e-8, "{} {}", general.value, zero.value);
    }

    #[test]
    fn zero_level_path_agrees_with_general_path() {
        let kernels = [
            sdho(0.5),
            sdho(1.0),
            sdho(2.0),
            make_ou_mean_revert(1.0, 3.0, 30.0).unwrap(),
            make_squared_exponential(1.0, 1.0).unwrap(),
            make_rational_quadratic(1.0, 1.0, 0.75).unwrap(),
        ];
        for k in &kernels {
            for mode in [CrossingMode::Up, CrossingMode::Total] {
                let a = variance_rate_asymptotic(k, 0.0, mode, &tight()).unwrap();
                let b = zero_level_stats(k, Horizon::Asymptotic, mode, &tight()).unwrap();
                assert!((a.variance - b.variance).abs() <= 1e-10 * a.variance, "{:?} {mode}", k.family());
                assert!((a.fano.unwrap() - b.fano.unwrap()).abs() <= 1e-10 * a.fano.unwrap());
                assert_eq!(a.mean, b.mean);
            }
        }
    }

    #[test]
    fn damping_sign_of_fano() {
        let spec = QuadratureSpec::default();
        for u in [0.0, 1.0] {
            assert!(fano(&sdho(0.5), u, CrossingMode::Up, &spec).unwrap() < 1.0);
            assert!(fano(&sdho(2.5), u, CrossingMode::Up, &spec).unwrap() > 1.0);
        }
    }

    #[test]
    fn fano_is_time_scale_free() {
        let spec = QuadratureSpec::default();
        for alpha in [0.75, 3.0] {
            let base = fano(&make_rational_quadratic(1.0, 1.0, alpha).unwrap(), 0.8, CrossingMode::Up, &spec).unwrap();
            for tau in [0.5, 7.0] {
                let k = make_rational_quadratic(1.0, tau, alpha).unwrap();
                let f = fano(&k, 0.8, CrossingMode::Up, &spec).unwrap();
                assert!((f - base).abs() <= 1e-8, "alpha={alpha} tau={tau}: {f} vs {base}");
            }
        }
    }

    #[test]
    fn dimensionless_view_matches_raw_units() {
        let spec = QuadratureSpec::default();
        let k = make_squared_exponential(3.0, 2.0).unwrap();
        let raw = fano(&k, 3.0 * 1.2, CrossingMode::Up, &spec).unwrap();
        let reduced = dimensionless_fano(&KernelShape::SquaredExponential, 1.2, CrossingMode::Up, &spec).unwrap();
        assert!((raw - reduced).abs() <= 1e-8 * reduced);
        let zero = zero_level_stats(&KernelShape::SquaredExponential.unit_kernel().unwrap(), Horizon::Asymptotic, CrossingMode::Up, &spec)
            .unwrap();
        let psi0 = dimensionless_fano(&KernelShape::SquaredExponential, 0.0, CrossingMode::Up, &spec).unwrap();
        assert!((psi0 - zero.fano.unwrap()).abs() < 1e-8);
    }

    #[test]
    fn ou_and_mapped_oscillator_share_fano() {
        let spec = QuadratureSpec::default();
        let (sigma, tf, te) = (1.0, 3.0, 30.0);
        let ou = make_ou_mean_revert(sigma, tf, te).unwrap();
        let (w, z, th) = ou_to_sdho(sigma, tf, te);
        let sd = make_sdho(w, z, th).unwrap();
        for u in [0.0, 0.2, 0.5] {
            let a = fano(&ou, u, CrossingMode::Up, &spec).unwrap();
            let b = fano(&sd, u, CrossingMode::Up, &spec).unwrap();
            assert!((a - b).abs() <= 1e-8 * a, "{a} {b}");
        }
    }

    #[test]
    fn short_horizon_is_poisson_like() {
        let k = sdho(0.5);
        let s = variance_count(&k, 0.3, 1e-6, CrossingMode::Up, &QuadratureSpec::default()).unwrap();
        assert!((s.variance - s.mean).abs() <= 1e-6 * s.mean);
    }

    #[test]
    fn finite_horizon_approaches_rate() {
        let k = sdho(1.0);
        for mode in [CrossingMode::Up, CrossingMode::Total] {
            let horizon = 200.0 * k.tau_slow();
            let fin = variance_count(&k, 0.5, horizon, mode, &QuadratureSpec::default()).unwrap();
            let asym = variance_rate_asymptotic(&k, 0.5, mode, &QuadratureSpec::default()).unwrap();
            assert!((fin.variance / horizon - asym.variance).abs() < 0.01 * asym.variance);
        }
    }

    #[test]
    fn total_rate_is_not_twice_up_rate() {
        let k = sdho(0.5);
        let spec = QuadratureSpec::default();
        let up = variance_rate_asymptotic(&k, 0.0, CrossingMode::Up, &spec).unwrap();
        let total = variance_rate_asymptotic(&k, 0.0, CrossingMode::Total, &spec).unwrap();
        assert!((total.variance - 2.0 * up.variance).abs() > 1e-6);
        let down = variance_rate_asymptotic(&k, 0.0, CrossingMode::Down, &spec).unwrap();
        assert_eq!(down.variance, up.variance);
    }

    #[test]
    fn rare_crossings_become_poisson() {
        let k = make_squared_exponential(1.0, 1.0).unwrap();
        let spec = QuadratureSpec::default();
        let dev = |u: f64| (fano(&k, u, CrossingMode::Up, &spec).unwrap() - 1.0).abs();
        let (d3, d4, d6) = (dev(3.0), dev(4.0), dev(6.0));
        assert!(d6 < d4 && d4 < d3, "{d3} {d4} {d6}");
    }

    #[test]
    fn invalid_kernel_rejected() {
        struct Flat;
        impl Autocorrelation for Flat {
            fn eval(&self, t: f64) -> Result<KernelDerivatives, KernelError> {
                Ok(KernelDerivatives { t, r: 1.0, p: 0.0, q: 1.0 })
            }
            fn r0(&self) -> f64 {
                1.0
            }
            fn q0(&self) -> f64 {
                1.0
            }
            fn tau_slow(&self) -> f64 {
                1.0
            }
        }
        let err = variance_rate_asymptotic(&Flat, 0.0, CrossingMode::Up, &QuadratureSpec::default());
        assert!(matches!(err, Err(CrossingError::Validity(_))));
    }

    fn any_kernel() -> impl Strategy<Value = Kernel> {
        prop_oneof![
            (0.05f64..5.0, 0.2f64..5.0).prop_map(|(z, w)| make_sdho(w, z, 1.3).unwrap()),
            (0.05f64..5.0).prop_map(|kappa| make_ou_mean_revert(1.0, 3.0 * kappa, 3.0).unwrap()),
            (0.6f64..20.0).prop_map(|a| make_rational_quadratic(1.0, 1.5, a).unwrap()),
            (0.3f64..4.0).prop_map(|tau| make_squared_exponential(0.7, tau).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn alpha_beta_positive(k in any_kernel(), lag in -6.0f64..1.3) {
            let t = k.tau_slow() * 10f64.powf(lag);
            let p = abg_params(&k, 1.0, t).unwrap();
            prop_assert!(p.alpha > 0.0 && p.beta > 0.0 && p.delta > 0.0);
        }

        #[test]
        fn integrand_even_in_level(k in any_kernel(), lag in -3.0f64..1.0, u in 0.0f64..3.0) {
            let t = k.tau_slow() * 10f64.powf(lag);
            for mode in [CrossingMode::Up, CrossingMode::Total] {
                let a = integrand(&k, u, t, mode).unwrap();
                let b = integrand(&k, -u, t, mode).unwrap();
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-300));
            }
        }
    }
}
