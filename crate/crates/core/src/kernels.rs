//! Autocorrelation kernels with analytic first and second derivatives.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::{integrate_finite, QuadratureSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
    #[error("negative lag t = {0}; evaluate at |t|")]
    NegativeLag(f64),
}

/// (r, p, q) = (r(t), r'(t), -r''(t)) at lag t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelDerivatives {
    pub t: f64,
    pub r: f64,
    pub p: f64,
    pub q: f64,
}

/// Lag quantities in which r and q appear through differences with r0 and q0.
/// Near t = 0 these are evaluated from power series whose low orders cancel
/// exactly, so they keep full relative precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagCovariance {
    pub r: f64,
    pub p: f64,
    pub q: f64,
    /// r0 - r
    pub r_gap: f64,
    /// q0 - q
    pub q_gap: f64,
    /// (q0 - q)(r0 + r) - p²
    pub d_alpha: f64,
    /// (q0 + q)(r0 - r) - p²
    pub d_beta: f64,
}

pub trait Autocorrelation: Send + Sync {
    fn eval(&self, t: f64) -> Result<KernelDerivatives, KernelError>;
    fn r0(&self) -> f64;
    fn q0(&self) -> f64;
    fn tau_slow(&self) -> f64;

    /// Series form of the small-lag quantities, if the kernel provides one.
    fn small_lag(&self) -> Option<&SmallLagSeries> {
        None
    }

    /// True when |r| decays only algebraically, so lag integrals need an
    /// algebraic tail map.
    fn algebraic_tail(&self) -> bool {
        false
    }

    fn lag_covariance(&self, t: f64) -> Result<LagCovariance, KernelError> {
        if let Some(series) = self.small_lag() {
            if t < series.switch_lag {
                let d = self.eval(t)?;
                return Ok(series.evaluate(d));
            }
        }
        let d = self.eval(t)?;
        let (r0, q0) = (self.r0(), self.q0());
        let r_gap = r0 - d.r;
        let q_gap = q0 - d.q;
        Ok(LagCovariance {
            r: d.r,
            p: d.p,
            q: d.q,
            r_gap,
            q_gap,
            d_alpha: q_gap * (r0 + d.r) - d.p * d.p,
            d_beta: (q0 + d.q) * r_gap - d.p * d.p,
        })
    }
}

const SERIES_TERMS: usize = 44;

/// Power series in t of r0 - r, r', q0 - q and the two α/β denominators.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallLagSeries {
    pub switch_lag: f64,
    r_gap: Vec<f64>,
    slope: Vec<f64>,
    q_gap: Vec<f64>,
    d_alpha: Vec<f64>,
    d_beta: Vec<f64>,
}

fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck)
}

// Coefficients whose magnitude is at rounding level relative to the terms that
// produced them are exact cancellations and are set to zero.
fn flush(sum: f64, magnitude: f64) -> f64 {
    if sum.abs() <= 1e-13 * magnitude {
        0.0
    } else {
        sum
    }
}

impl SmallLagSeries {
    /// `c[k]` are the one-sided Taylor coefficients of r at t = 0+, with
    /// c[1] = 0. Valid where the truncated series is accurate, below `switch_lag`.
    pub fn from_taylor(c: &[f64], switch_lag: f64) -> Self {
        let n = c.len();
        let r0 = c[0];
        let q0 = -2.0 * c[2];
        let r_gap: Vec<f64> = (0..n).map(|k| if k == 0 { 0.0 } else { -c[k] }).collect();
        let slope: Vec<f64> = (0..n - 1).map(|k| (k + 1) as f64 * c[k + 1]).collect();
        let q_gap: Vec<f64> =
            (0..n - 2).map(|k| if k == 0 { 0.0 } else { ((k + 2) * (k + 1)) as f64 * c[k + 2] }).collect();
        let m = n - 2;
        let get = |v: &Vec<f64>, k: usize| v.get(k).copied().unwrap_or(0.0);
        let r_sum = |k: usize| if k == 0 { 2.0 * r0 } else { -get(&r_gap, k) };
        let q_sum = |k: usize| if k == 0 { 2.0 * q0 } else { -get(&q_gap, k) };
        let mut d_alpha = vec![0.0; m];
        let mut d_beta = vec![0.0; m];
        for k in 0..m {
            let (mut sa, mut ma, mut sb, mut mb) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..=k {
                let ta = get(&q_gap, i) * r_sum(k - i);
                let tb = q_sum(i) * get(&r_gap, k - i);
                let tp = get(&slope, i) * get(&slope, k - i);
                sa += ta - tp;
                ma += ta.abs() + tp.abs();
                sb += tb - tp;
                mb += tb.abs() + tp.abs();
            }
            d_alpha[k] = flush(sa, ma);
            d_beta[k] = flush(sb, mb);
        }
        Self { switch_lag, r_gap, slope, q_gap, d_alpha, d_beta }
    }

    fn evaluate(&self, d: KernelDerivatives) -> LagCovariance {
        let t = d.t;
        LagCovariance {
            r: d.r,
            p: horner(&self.slope, t),
            q: d.q,
            r_gap: horner(&self.r_gap, t),
            q_gap: horner(&self.q_gap, t),
            d_alpha: horner(&self.d_alpha, t),
            d_beta: horner(&self.d_beta, t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    Sdho { omega0: f64, zeta: f64, theta: f64 },
    OuMeanRevert { sigma: f64, tau_f: f64, tau_e: f64 },
    RationalQuadratic { sigma: f64, tau: f64, alpha: f64 },
    SquaredExponential { sigma: f64, tau: f64 },
}

/// Kernel shape with amplitude and time scale removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelShape {
    Sdho { zeta: f64 },
    OuMeanRevert { kappa: f64 },
    RationalQuadratic { alpha: f64 },
    SquaredExponential,
}

impl KernelShape {
    /// The kernel with unit amplitude σ and unit time scale.
    pub fn unit_kernel(&self) -> Result<Kernel, KernelError> {
        match *self {
            KernelShape::Sdho { zeta } => make_sdho(1.0, zeta, 1.0),
            KernelShape::OuMeanRevert { kappa } => make_ou_mean_revert(1.0, kappa, 1.0),
            KernelShape::RationalQuadratic { alpha } => make_rational_quadratic(1.0, 1.0, alpha),
            KernelShape::SquaredExponential => make_squared_exponential(1.0, 1.0),
        }
    }
}

// r(t) = r0 e^{-λt}(C + λS) with C = cosh(ht), S = sinh(ht)/h and h² = λ² - ω².
// h² < 0 is the oscillatory branch; small h²t² is summed as a series in h²t²,
// which is continuous through critical damping.
#[derive(Debug, Clone, Copy, PartialEq)]
struct DampedPair {
    r0: f64,
    lambda: f64,
    h2: f64,
    omega2: f64,
    /// slow decay rate λ - h (overdamped) computed without cancellation
    slow: f64,
    fast: f64,
}

impl DampedPair {
    fn new(r0: f64, lambda: f64, h2: f64, omega2: f64) -> Self {
        let (slow, fast) = if h2 > 0.0 {
            let h = h2.sqrt();
            (omega2 / (lambda + h), lambda + h)
        } else {
            (lambda, lambda)
        };
        Self { r0, lambda, h2, omega2, slow, fast }
    }

    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let x = self.h2 * t * t;
        let (r0, lam, w2) = (self.r0, self.lambda, self.omega2);
        if x.abs() < 0.25 {
            let (mut c, mut s) = (1.0, 1.0);
            let (mut tc, mut ts) = (1.0, 1.0);
            for k in 1..20 {
                let kf = k as f64;
                tc *= x / ((2.0 * kf - 1.0) * (2.0 * kf));
                ts *= x / ((2.0 * kf) * (2.0 * kf + 1.0));
                c += tc;
                s += ts;
                if tc.abs() < 1e-18 && ts.abs() < 1e-18 {
                    break;
                }
            }
            s *= t;
            let e = (-lam * t).exp();
            return (r0 * e * (c + lam * s), -r0 * w2 * e * s, r0 * w2 * e * (c - lam * s));
        }
        if self.h2 > 0.0 {
            let h = self.h2.sqrt();
            let es = (-self.slow * t).exp();
            let ef = (-self.fast * t).exp();
            let ratio = lam / h;
            let r = 0.5 * r0 * ((1.0 + ratio) * es + (1.0 - ratio) * ef);
            let p = -r0 * w2 * (es - ef) / (2.0 * h);
            let q = 0.5 * r0 * w2 * ((1.0 - ratio) * es + (1.0 + ratio) * ef);
            (r, p, q)
        } else {
            let wd = (-self.h2).sqrt();
            let (sn, cs) = (wd * t).sin_cos();
            let s = sn / wd;
            let e = (-lam * t).exp();
            (r0 * e * (cs + lam * s), -r0 * w2 * e * s, r0 * w2 * e * (cs - lam * s))
        }
    }

    fn taylor(&self) -> Vec<f64> {
        // r'' + 2λ r' + ω² r = 0 for t > 0 with r(0) = r0, r'(0) = 0.
        let mut c = vec![0.0; SERIES_TERMS];
        c[0] = self.r0;
        for k in 0..SERIES_TERMS - 2 {
            let kf = k as f64;
            c[k + 2] = -(2.0 * self.lambda * (kf + 1.0) * c[k + 1] + self.omega2 * c[k]) / ((kf + 2.0) * (kf + 1.0));
        }
        c
    }

    fn fastest_rate(&self) -> f64 {
        if self.h2 > 0.0 {
            self.fast
        } else {
            self.omega2.sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Damped(DampedPair),
    RationalQuadratic { var: f64, tau: f64, alpha: f64 },
    SquaredExponential { var: f64, tau: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    family: KernelFamily,
    repr: Repr,
    r0: f64,
    q0: f64,
    tau_slow: f64,
    series: SmallLagSeries,
}

fn positive(name: &str, v: f64) -> Result<f64, KernelError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(KernelError::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

pub fn make_sdho(omega0: f64, zeta: f64, theta: f64) -> Result<Kernel, KernelError> {
    positive("omega0", omega0)?;
    positive("theta", theta)?;
    if !(zeta > 0.0 && zeta.is_finite()) {
        return Err(KernelError::InvalidParameter(format!(
            "zeta must be positive (zeta = 0 is undamped and never decorrelates), got {zeta}"
        )));
    }
    let r0 = theta / (omega0 * omega0);
    let omega2 = omega0 * omega0;
    let pair = DampedPair::new(r0, zeta * omega0, omega2 * (zeta - 1.0) * (zeta + 1.0), omega2);
    let tau_slow = if zeta > 1.0 { 1.0 / (omega0 * (zeta - (zeta * zeta - 1.0).sqrt())) } else { 1.0 / (zeta * omega0) };
    Ok(Kernel::damped(KernelFamily::Sdho { omega0, zeta, theta }, pair, theta, tau_slow))
}

pub fn make_ou_mean_revert(sigma: f64, tau_f: f64, tau_e: f64) -> Result<Kernel, KernelError> {
    positive("sigma", sigma)?;
    positive("tau_f", tau_f)?;
    positive("tau_e", tau_e)?;
    let kappa = tau_f / tau_e;
    let r0 = sigma * sigma * kappa / (1.0 + kappa);
    let (l1, l2) = (1.0 / tau_e, 1.0 / tau_f);
    let lambda = 0.5 * (l1 + l2);
    let half_gap = 0.5 * (l2 - l1);
    let omega2 = l1 * l2;
    let pair = DampedPair::new(r0, lambda, half_gap * half_gap, omega2);
    let q0 = r0 * omega2;
    Ok(Kernel::damped(KernelFamily::OuMeanRevert { sigma, tau_f, tau_e }, pair, q0, tau_f.max(tau_e)))
}

/// SDHO parameters (ω0, ζ, θ) whose kernel coincides with the OU-driven
/// kernel: decay rates 1/τ_e and 1/τ_f and the same variance.
pub fn ou_to_sdho(sigma: f64, tau_f: f64, tau_e: f64) -> (f64, f64, f64) {
    let omega0 = 1.0 / (tau_e * tau_f).sqrt();
    let zeta = 0.5 * (1.0 / tau_e + 1.0 / tau_f) / omega0;
    let kappa = tau_f / tau_e;
    let theta = sigma * sigma * kappa / (1.0 + kappa) * omega0 * omega0;
    (omega0, zeta, theta)
}

pub fn make_rational_quadratic(sigma: f64, tau: f64, alpha: f64) -> Result<Kernel, KernelError> {
    positive("sigma", sigma)?;
    positive("tau", tau)?;
    positive("alpha", alpha)?;
    let var = sigma * sigma;
    let mut c = vec![0.0; SERIES_TERMS];
    let x_unit = 1.0 / (2.0 * alpha * tau * tau);
    let mut coef = var;
    for k in 0..SERIES_TERMS / 2 {
        c[2 * k] = coef;
        let kf = k as f64;
        coef *= -(alpha + kf) / (kf + 1.0) * x_unit;
    }
    let switch = 0.25 * tau * (2.0 * alpha).sqrt().min(1.0);
    Ok(Kernel {
        family: KernelFamily::RationalQuadratic { sigma, tau, alpha },
        repr: Repr::RationalQuadratic { var, tau, alpha },
        r0: var,
        q0: var / (tau * tau),
        tau_slow: tau,
        series: SmallLagSeries::from_taylor(&c, switch),
    })
}

pub fn make_squared_exponential(sigma: f64, tau: f64) -> Result<Kernel, KernelError> {
    positive("sigma", sigma)?;
    positive("tau", tau)?;
    let var = sigma * sigma;
    let mut c = vec![0.0; SERIES_TERMS];
    let mut coef = var;
    for k in 0..SERIES_TERMS / 2 {
        c[2 * k] = coef;
        coef *= -1.0 / (2.0 * tau * tau * (k as f64 + 1.0));
    }
    Ok(Kernel {
        family: KernelFamily::SquaredExponential { sigma, tau },
        repr: Repr::SquaredExponential { var, tau },
        r0: var,
        q0: var / (tau * tau),
        tau_slow: tau,
        series: SmallLagSeries::from_taylor(&c, 0.25 * tau),
    })
}

impl Kernel {
    fn damped(family: KernelFamily, pair: DampedPair, q0: f64, tau_slow: f64) -> Self {
        let switch = 0.25 / pair.fastest_rate();
        let series = SmallLagSeries::from_taylor(&pair.taylor(), switch);
        Kernel { family, r0: pair.r0, q0, tau_slow, repr: Repr::Damped(pair), series }
    }

    pub fn from_family(family: KernelFamily) -> Result<Self, KernelError> {
        match family {
            KernelFamily::Sdho { omega0, zeta, theta } => make_sdho(omega0, zeta, theta),
            KernelFamily::OuMeanRevert { sigma, tau_f, tau_e } => make_ou_mean_revert(sigma, tau_f, tau_e),
            KernelFamily::RationalQuadratic { sigma, tau, alpha } => make_rational_quadratic(sigma, tau, alpha),
            KernelFamily::SquaredExponential { sigma, tau } => make_squared_exponential(sigma, tau),
        }
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn shape(&self) -> KernelShape {
        match self.family {
            KernelFamily::Sdho { zeta, .. } => KernelShape::Sdho { zeta },
            KernelFamily::OuMeanRevert { tau_f, tau_e, .. } => KernelShape::OuMeanRevert { kappa: tau_f / tau_e },
            KernelFamily::RationalQuadratic { alpha, .. } => KernelShape::RationalQuadratic { alpha },
            KernelFamily::SquaredExponential { .. } => KernelShape::SquaredExponential,
        }
    }

    /// Amplitude σ against which levels are made dimensionless (ψ = u/σ).
    pub fn amplitude(&self) -> f64 {
        match self.family {
            KernelFamily::Sdho { omega0, theta, .. } => theta.sqrt() / omega0,
            KernelFamily::OuMeanRevert { sigma, .. }
            | KernelFamily::RationalQuadratic { sigma, .. }
            | KernelFamily::SquaredExponential { sigma, .. } => sigma,
        }
    }

    /// Fastest timescale relevant to sampling the path: √(r0/q0), the
    /// inverse angular frequency of zero crossings.
    pub fn tau_fast(&self) -> f64 {
        (self.r0 / self.q0).sqrt()
    }

}

impl Autocorrelation for Kernel {
    fn eval(&self, t: f64) -> Result<KernelDerivatives, KernelError> {
        if t < 0.0 || t.is_nan() {
            return Err(KernelError::NegativeLag(t));
        }
        let (r, p, q) = match self.repr {
            Repr::Damped(pair) => pair.eval(t),
            Repr::RationalQuadratic { var, tau, alpha } => {
                let x = t * t / (2.0 * alpha * tau * tau);
                let lw = x.ln_1p();
                let r = var * (-alpha * lw).exp();
                let w1 = (-(alpha + 1.0) * lw).exp();
                let p = -var * t / (tau * tau) * w1;
                let q = var / (tau * tau) * (-(alpha + 2.0) * lw).exp() * (1.0 - (2.0 * alpha + 1.0) * x);
                (r, p, q)
            }
            Repr::SquaredExponential { var, tau } => {
                let z = t / tau;
                let e = (-0.5 * z * z).exp();
                (var * e, -var * t / (tau * tau) * e, var / (tau * tau) * (1.0 - z * z) * e)
            }
        };
        Ok(KernelDerivatives { t, r, p, q })
    }

    fn r0(&self) -> f64 {
        self.r0
    }

    fn q0(&self) -> f64 {
        self.q0
    }

    fn tau_slow(&self) -> f64 {
        self.tau_slow
    }

    fn small_lag(&self) -> Option<&SmallLagSeries> {
        Some(&self.series)
    }

    fn algebraic_tail(&self) -> bool {
        matches!(self.repr, Repr::RationalQuadratic { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub checks: Vec<ValidityCheck>,
    /// ∫_0^ε (r''(t) - r''(0))/t dt
    pub geman_integral: f64,
    pub geman_finite: bool,
    /// ∫ t(|r| + |r'| + |r''|) dt
    pub piterbarg_finite: bool,
    /// ∫ (|r| + |r'| + |r''|) dt
    pub tail_integrable: bool,
}

impl ValidityReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn passed(&self, name: &str) -> bool {
        self.checks.iter().any(|c| c.name == name && c.passed)
    }

    /// Requirements for a finite crossing-count variance at finite T.
    pub fn supports_finite_variance(&self) -> bool {
        self.passed(CHECK_POSITIVE) && self.passed(CHECK_ORIGIN) && self.passed(CHECK_BOUNDED) && self.geman_finite
    }

    /// Requirements for the long-time variance rate: additionally the crossing
    /// integrand, which decays like |r| + |r'| + |r''|, must be integrable.
    pub fn supports_asymptotic(&self) -> bool {
        self.supports_finite_variance() && self.passed(CHECK_DECAY) && self.tail_integrable
    }
}

pub const CHECK_POSITIVE: &str = "r0 > 0 and q0 > 0";
pub const CHECK_ORIGIN: &str = "r'(0) = 0";
pub const CHECK_BOUNDED: &str = "|r(t)| < r0";
pub const CHECK_DECAY: &str = "r(t) -> 0";
pub const CHECK_GEMAN: &str = "Geman integral finite";
pub const CHECK_PITERBARG: &str = "weighted tail integral finite";

/// 512 log-spaced lags on [1e-6, 20]·τ_slow.
pub fn default_validity_grid(tau_slow: f64) -> Vec<f64> {
    let n = 512;
    let (lo, hi) = ((1e-6f64).ln(), (20.0f64).ln());
    (0..n).map(|i| tau_slow * (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp()).collect()
}

fn decade_partial_integrals<K: Autocorrelation + ?Sized>(kernel: &K, weighted: bool) -> Option<(f64, f64, f64)> {
    let tau = kernel.tau_slow();
    let spec = QuadratureSpec { rel_tol: 1e-8, abs_tol: 1e-300, ..QuadratureSpec::default() };
    let mut total = 0.0;
    let mut last_increment = 0.0;
    let mut previous = 0.0;
    let mut lo = 0.0;
    for k in 1..=6 {
        let hi = tau * 10f64.powi(k);
        let f = |t: f64| match kernel.eval(t) {
            Ok(d) => (if weighted { t } else { 1.0 }) * (d.r.abs() + d.p.abs() + d.q.abs()),
            Err(_) => f64::NAN,
        };
        let r = integrate_finite(f, lo, hi, &spec).ok()?;
        total += r.value;
        previous = last_increment;
        last_increment = r.value;
        lo = hi;
    }
    Some((total, previous, last_increment))
}

/// Numerical validity checks on a lag grid.
pub fn check_validity<K: Autocorrelation + ?Sized>(kernel: &K, grid: &[f64], epsilon: f64) -> ValidityReport {
    let (r0, q0) = (kernel.r0(), kernel.q0());
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checks.push(ValidityCheck { name: name.to_string(), passed, detail });
    };

    push(CHECK_POSITIVE, r0 > 0.0 && q0 > 0.0, format!("r0 = {r0}, q0 = {q0}"));

    match kernel.eval(0.0) {
        Ok(d) => {
            let scale = (r0.abs() * q0.abs()).sqrt().max(f64::MIN_POSITIVE);
            let ok = d.p.abs() <= 1e-10 * scale
                && (d.r - r0).abs() <= 1e-10 * r0.abs()
                && (d.q - q0).abs() <= 1e-10 * q0.abs().max(f64::MIN_POSITIVE);
            push(CHECK_ORIGIN, ok, format!("r(0) = {}, r'(0) = {}, -r''(0) = {}", d.r, d.p, d.q));
        }
        Err(e) => push(CHECK_ORIGIN, false, e.to_string()),
    }

    let mut worst = f64::NEG_INFINITY;
    let mut worst_t = f64::NAN;
    let mut bounded = true;
    for &t in grid.iter().filter(|&&t| t > 0.0) {
        match kernel.eval(t) {
            Ok(d) => {
                let ratio = d.r.abs() / r0;
                if ratio > worst {
                    worst = ratio;
                    worst_t = t;
                }
                if !(d.r.abs() < r0) {
                    bounded = false;
                }
            }
            Err(_) => bounded = false,
        }
    }
    push(CHECK_BOUNDED, bounded, format!("max |r|/r0 = {worst} at t = {worst_t}"));

    // Exponential and Gaussian kernels are below 1e-3·r0 at 10·τ_slow; the
    // algebraic RQ tail needs further decades.
    let tau = kernel.tau_slow();
    let decay_lag = (1..=7).map(|k| 10f64.powi(k) * tau).find(|&t| {
        kernel.eval(t).map(|d| d.r.abs() < 1e-3 * r0).unwrap_or(false)
    });
    match decay_lag {
        Some(t) => push(CHECK_DECAY, true, format!("|r| < 1e-3 r0 at t = {t} ({} tau_slow)", t / tau)),
        None => push(CHECK_DECAY, false, "no decay below 1e-3 r0 up to 1e7 tau_slow".into()),
    }

    let spec = QuadratureSpec { rel_tol: 1e-8, abs_tol: 1e-14 * q0.abs().max(1e-300), ..QuadratureSpec::default() };
    let geman = integrate_finite(
        |t| match kernel.lag_covariance(t) {
            Ok(c) => c.q_gap / t,
            Err(_) => f64::NAN,
        },
        0.0,
        epsilon,
        &spec,
    );
    let (geman_integral, geman_finite) = match geman {
        Ok(r) => (r.value, r.converged && r.value.is_finite()),
        Err(_) => (f64::NAN, false),
    };
    push(CHECK_GEMAN, geman_finite, format!("integral over (0, {epsilon}] = {geman_integral}"));

    // Finite when the last decade contributes nothing, or when decade
    // contributions shrink geometrically (a power tail steeper than 1/t).
    let verdict = |weighted| match decade_partial_integrals(kernel, weighted) {
        Some((total, previous, last)) => {
            total.is_finite() && (last <= 1e-12 * total.abs() || last < 0.7 * previous)
        }
        None => false,
    };
    let piterbarg_finite = verdict(true);
    let tail_integrable = verdict(false);
    push(
        CHECK_PITERBARG,
        piterbarg_finite,
        format!("weighted tail {}; unweighted tail {}", finite_word(piterbarg_finite), finite_word(tail_integrable)),
    );

    ValidityReport { checks, geman_integral, geman_finite, piterbarg_finite, tail_integrable }
}

fn finite_word(b: bool) -> &'static str {
    if b {
        "finite"
    } else {
        "infinite"
    }
}

/// Validity report on the default grid with ε = 1e-2·τ_slow.
pub fn check_validity_default<K: Autocorrelation + ?Sized>(kernel: &K) -> ValidityReport {
    let tau = kernel.tau_slow();
    check_validity(kernel, &default_validity_grid(tau), 1e-2 * tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn builtins() -> Vec<Kernel> {
        vec![
            make_sdho(1.0, 0.5, 1.0).unwrap(),
            make_sdho(1.3, 1.0, 0.7).unwrap(),
            make_sdho(0.8, 2.0, 2.0).unwrap(),
            make_ou_mean_revert(1.0, 3.0, 30.0).unwrap(),
            make_ou_mean_revert(1.5, 4.0, 0.8).unwrap(),
            make_rational_quadratic(1.0, 2.0, 0.75).unwrap(),
            make_rational_quadratic(0.5, 1.0, 3.0).unwrap(),
            make_squared_exponential(2.0, 3.0).unwrap(),
        ]
    }

    #[test]
    fn ou_kernel_matches_biexponential_form() {
        let (sigma, tau_f, tau_e) = (1.0f64, 3.0f64, 30.0f64);
        let k = make_ou_mean_revert(sigma, tau_f, tau_e).unwrap();
        let kappa = tau_f / tau_e;
        for i in 0..60 {
            let t = 0.05 * 1.2f64.powi(i);
            let direct = sigma * sigma * kappa / (1.0 - kappa * kappa) * ((-t / tau_e).exp() - kappa * (-t / tau_f).exp());
            let r = k.eval(t).unwrap().r;
            assert!((r - direct).abs() <= 1e-12 * direct.abs().max(1e-300), "t={t}: {r} vs {direct}");
        }
        assert!((k.r0() - sigma * sigma * kappa / (1.0 + kappa)).abs() < 1e-15);
    }

    #[test]
    fn values_at_origin() {
        let d = make_sdho(1.0, 0.5, 1.0).unwrap().eval(0.0).unwrap();
        assert_eq!((d.r, d.p, d.q), (1.0, 0.0, 1.0));
        let d = make_squared_exponential(1.0, 1.0).unwrap().eval(0.0).unwrap();
        assert_eq!((d.r, d.p, d.q), (1.0, 0.0, 1.0));
        let d = make_rational_quadratic(1.0, 1.0, 0.75).unwrap().eval(0.0).unwrap();
        assert_eq!((d.r, d.p, d.q), (1.0, 0.0, 1.0));
        let k = make_ou_mean_revert(1.0, 3.0, 3.001).unwrap();
        let kappa = 3.0 / 3.001;
        assert!((k.eval(0.0).unwrap().r - kappa / (1.0 + kappa)).abs() < 1e-15);
        let k = make_ou_mean_revert(1.0, 3.0, 30.0).unwrap();
        assert!((k.r0() - 0.1 / 1.1).abs() < 1e-16);
    }

    #[test]
    fn closed_form_substitutions() {
        let k = make_sdho(2.0, 1.0, 1.0).unwrap();
        for i in 0..50 {
            let t = i as f64 * 0.2;
            let expected = 0.25 * (-2.0 * t).exp() * (1.0 + 2.0 * t);
            assert!((k.eval(t).unwrap().r - expected).abs() <= 1e-15 * expected.max(1e-300) + 1e-300);
        }
        let se = make_squared_exponential(2.0, 3.0).unwrap();
        assert!((se.eval(3.0).unwrap().r - 4.0 * (-0.5f64).exp()).abs() < 1e-15);
        let rq = make_rational_quadratic(1.0, 1.0, 2.0).unwrap();
        assert!((rq.eval(1.0).unwrap().r - 0.64).abs() < 1e-15);
    }

    #[test]
    fn overdamped_matches_two_exponential_form() {
        // ζ = 2, ω0 = 1: rates 2 ∓ √3, amplitude split from r(0) = 1, r'(0) = 0.
        let k = make_sdho(1.0, 2.0, 1.0).unwrap();
        let s = 3f64.sqrt();
        let (l1, l2) = (2.0 - s, 2.0 + s);
        let (a1, a2) = (l2 / (l2 - l1), -l1 / (l2 - l1));
        for &t in &[0.01, 0.3, 1.0, 2.5, 10.0] {
            let expected = a1 * (-l1 * t).exp() + a2 * (-l2 * t).exp();
            let got = k.eval(t).unwrap().r;
            assert!((got - expected).abs() < 1e-14 * expected.abs(), "t={t}");
        }
    }

    #[test]
    fn sdho_equipartition() {
        for &zeta in &[0.1, 0.5, 1.0, 1.7, 5.0] {
            let k = make_sdho(1.7, zeta, 2.3).unwrap();
            assert_eq!(k.r0(), 2.3 / (1.7 * 1.7));
            assert_eq!(k.q0(), 2.3);
        }
    }

    #[test]
    fn finite_difference_consistency() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for k in builtins() {
            let h = 1e-5 * k.tau_slow();
            for _ in 0..100 {
                let t = rng.gen_range(2.0 * h..10.0 * k.tau_slow());
                let d = k.eval(t).unwrap();
                let plus = k.eval(t + h).unwrap();
                let minus = k.eval(t - h).unwrap();
                let p_fd = (plus.r - minus.r) / (2.0 * h);
                assert!((p_fd - d.p).abs() <= 1e-6f64.max(1e-4 * d.p.abs()), "{:?} t={t}", k.family());
                let q_fd = -(plus.p - minus.p) / (2.0 * h);
                assert!((q_fd - d.q).abs() <= 1e-6f64.max(1e-4 * d.q.abs()), "{:?} t={t}", k.family());
            }
        }
    }

    #[test]
    fn squared_exponential_is_rational_quadratic_limit() {
        let se = make_squared_exponential(1.0, 1.0).unwrap();
        let rq = make_rational_quadratic(1.0, 1.0, 1e6).unwrap();
        // The gap is r·t⁴/(8α): below 1e-5 of the variance on [0, 5τ], and
        // pointwise relative below 1e-5 while t⁴ < 80.
        for i in 0..=100 {
            let t = 0.05 * i as f64;
            let (a, b) = (se.eval(t).unwrap().r, rq.eval(t).unwrap().r);
            assert!((a - b).abs() <= 1e-5 * se.r0(), "t={t}");
            if t <= 2.9 {
                assert!((a - b).abs() <= 1e-5 * a, "t={t}");
            }
        }
    }

    #[test]
    fn sdho_branches_continuous_at_critical_damping() {
        let lo = make_sdho(1.0, 1.0 - 1e-6, 1.0).unwrap();
        let mid = make_sdho(1.0, 1.0, 1.0).unwrap();
        let hi = make_sdho(1.0, 1.0 + 1e-6, 1.0).unwrap();
        for i in 0..=200 {
            let t = 0.05 * i as f64;
            let m = mid.eval(t).unwrap().r;
            for k in [&lo, &hi] {
                assert!((k.eval(t).unwrap().r - m).abs() <= 1e-4 * m, "t={t}");
            }
        }
    }

    #[test]
    fn ou_near_unit_kappa_matches_limit() {
        let tau_e = 3.0 * (1.0 + 1e-8);
        let k = make_ou_mean_revert(1.0, 3.0, tau_e).unwrap();
        for i in 0..=100 {
            let t = 0.3 * i as f64;
            let limit = 0.5 * (-t / tau_e).exp() * (1.0 + t / tau_e);
            assert!((k.eval(t).unwrap().r - limit).abs() <= 1e-6 * limit, "t={t}");
        }
        let exact_one = make_ou_mean_revert(1.0, 3.0, 3.0).unwrap();
        assert!(exact_one.eval(1.0).unwrap().r.is_finite());
    }

    #[test]
    fn ou_decays() {
        let k = make_ou_mean_revert(1.0, 3.0, 30.0).unwrap();
        assert!(k.eval(3000.0).unwrap().r.abs() < 1e-30);
    }

    #[test]
    fn ou_maps_to_overdamped_sdho() {
        for &(sigma, tf, te) in &[(1.0, 3.0, 30.0), (0.7, 3.0, 0.6), (2.0, 1.0, 1.5)] {
            let ou = make_ou_mean_revert(sigma, tf, te).unwrap();
            let (w, z, th) = ou_to_sdho(sigma, tf, te);
            assert!(z >= 1.0);
            let sd = make_sdho(w, z, th).unwrap();
            assert!((sd.tau_slow() - ou.tau_slow()).abs() <= 1e-12 * ou.tau_slow());
            for i in 0..200 {
                let t = 0.1 * i as f64 * ou.tau_slow();
                let (a, b) = (ou.eval(t).unwrap(), sd.eval(t).unwrap());
                assert!((a.r - b.r).abs() <= 1e-10 * a.r.abs().max(1e-300), "t={t}");
                assert!((a.q - b.q).abs() <= 1e-10 * ou.q0() * (a.r / ou.r0()).abs().max(1e-300) + 1e-300);
            }
        }
    }

    #[test]
    fn series_agrees_with_direct_form_at_switch() {
        for k in builtins() {
            let series = k.small_lag().unwrap();
            let t = series.switch_lag;
            let below = k.lag_covariance(t * (1.0 - 1e-12)).unwrap();
            let d = k.eval(t).unwrap();
            let r_gap = k.r0() - d.r;
            let q_gap = k.q0() - d.q;
            assert!((below.r_gap - r_gap).abs() <= 1e-10 * r_gap, "{:?}", k.family());
            assert!((below.q_gap - q_gap).abs() <= 1e-9 * q_gap, "{:?}", k.family());
            assert!((below.p - d.p).abs() <= 1e-12 * d.p.abs(), "{:?}", k.family());
            let d_beta = (k.q0() + d.q) * r_gap - d.p * d.p;
            assert!((below.d_beta - d_beta).abs() <= 1e-6 * d_beta, "{:?} {} {}", k.family(), below.d_beta, d_beta);
        }
    }

    #[test]
    fn series_denominators_stay_positive_at_tiny_lags() {
        for k in builtins() {
            for e in 3..=12 {
                let t = k.tau_slow() * 10f64.powi(-e);
                let c = k.lag_covariance(t).unwrap();
                assert!(c.d_alpha > 0.0 && c.d_beta > 0.0 && c.r_gap > 0.0, "{:?} t={t} {c:?}", k.family());
            }
        }
    }

    #[test]
    fn squared_exponential_d_beta_leading_order() {
        // For SE with σ = τ = 1, (q0+q)(r0-r) - p² = 1 - e^{-t²} - t² e^{-t²/2} = t⁶/24 + O(t⁸).
        let k = make_squared_exponential(1.0, 1.0).unwrap();
        for &t in &[1e-2, 1e-3, 1e-5] {
            let c = k.lag_covariance(t).unwrap();
            let leading = t.powi(6) / 24.0;
            assert!((c.d_beta / leading - 1.0).abs() < 1e-3 * (1.0 + 1e4 * t * t), "t={t}");
        }
    }

    #[test]
    fn validity_of_builtins() {
        for k in [make_sdho(1.0, 0.5, 1.0).unwrap(), make_squared_exponential(1.0, 1.0).unwrap()] {
            let report = check_validity_default(&k);
            assert!(report.all_passed(), "{report:#?}");
            assert!(report.supports_asymptotic());
        }
    }

    #[test]
    fn heavy_tailed_rational_quadratic_fails_only_the_weighted_tail() {
        let k = make_rational_quadratic(1.0, 1.0, 0.75).unwrap();
        let report = check_validity_default(&k);
        assert!(!report.piterbarg_finite);
        assert!(report.tail_integrable);
        assert!(report.supports_asymptotic());
    }

    struct Constant;
    impl Autocorrelation for Constant {
        fn eval(&self, t: f64) -> Result<KernelDerivatives, KernelError> {
            Ok(KernelDerivatives { t, r: 1.0, p: 0.0, q: 0.0 })
        }
        fn r0(&self) -> f64 {
            1.0
        }
        fn q0(&self) -> f64 {
            0.0
        }
        fn tau_slow(&self) -> f64 {
            1.0
        }
    }

    #[test]
    fn constant_kernel_fails_boundedness() {
        let report = check_validity_default(&Constant);
        let bounded = report.checks.iter().find(|c| c.name == CHECK_BOUNDED).unwrap();
        assert!(!bounded.passed);
        assert!(!report.all_passed());
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(make_sdho(1.0, 0.0, 1.0).is_err());
        assert!(make_sdho(1.0, -0.5, 1.0).is_err());
        assert!(make_sdho(0.0, 0.5, 1.0).is_err());
        assert!(make_rational_quadratic(1.0, 1.0, 0.0).is_err());
        assert!(make_squared_exponential(1.0, 1.0).unwrap().eval(-1.0).is_err());
    }

    proptest! {
        #[test]
        fn correlation_bounded_by_variance(zeta in 0.05f64..6.0, t in 1e-4f64..50.0) {
            let k = make_sdho(1.0, zeta, 1.0).unwrap();
            prop_assert!(k.eval(t).unwrap().r.abs() < k.r0());
        }

        #[test]
        fn rational_quadratic_bounded(alpha in 0.1f64..20.0, t in 1e-4f64..100.0) {
            let k = make_rational_quadratic(1.0, 1.0, alpha).unwrap();
            let d = k.eval(t).unwrap();
            prop_assert!(d.r > 0.0 && d.r < 1.0);
        }
    }
}
