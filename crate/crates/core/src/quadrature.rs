//! Adaptive Gauss-Kronrod (10/21) integration on finite and semi-infinite
//! domains.

use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EndpointPolicy {
    /// The integrand is never evaluated at the left endpoint.
    OpenLeft,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TailPolicy {
    /// Let the caller pick; treated as `ExponentialMap` by the integrator.
    Auto,
    /// t = lo − s·ln(1−x); suited to exponentially decaying integrands.
    ExponentialMap,
    /// t = lo + s·((1−x)^{-2} − 1); handles algebraic tails decaying faster than t^{-1}.
    AlgebraicMap,
    /// Integrate [lo, lo + multiple·s] and count the last panel as tail error.
    FixedCutoff { multiple: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    pub endpoint: EndpointPolicy,
    pub tail: TailPolicy,
    /// Length scale s used by the tail maps and the fixed cutoff.
    pub scale: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_subdivisions: 2000,
            endpoint: EndpointPolicy::OpenLeft,
            tail: TailPolicy::Auto,
            scale: 1.0,
        }
    }
}

impl QuadratureSpec {
    pub fn with_tolerances(rel_tol: f64, abs_tol: f64) -> Self {
        Self { rel_tol, abs_tol, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), QuadratureError> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(QuadratureError::InvalidSpec("tolerances must be positive".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(QuadratureError::InvalidSpec("scale must be positive and finite".into()));
        }
        if let TailPolicy::FixedCutoff { multiple } = self.tail {
            if !(multiple >= 10.0) {
                return Err(QuadratureError::InvalidSpec("cutoff multiple must be >= 10".into()));
            }
        }
        if self.max_subdivisions == 0 {
            return Err(QuadratureError::InvalidSpec("max_subdivisions must be >= 1".into()));
        }
        Ok(())
    }

    fn tolerance_for(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureResult {
    pub value: f64,
    pub error_estimate: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("integrand returned {value} at t = {abscissa}")]
    NonFinite { abscissa: f64, value: f64 },
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("invalid quadrature spec: {0}")]
    InvalidSpec(String),
}

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

#[derive(Debug, Clone, Copy)]
struct Panel {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error).then(other.lo.total_cmp(&self.lo))
    }
}

fn checked<F: FnMut(f64) -> f64>(f: &mut F, t: f64) -> Result<f64, QuadratureError> {
    let v = f(t);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(QuadratureError::NonFinite { abscissa: t, value: v })
    }
}

fn gk21<F: FnMut(f64) -> f64>(f: &mut F, lo: f64, hi: f64) -> Result<Panel, QuadratureError> {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = checked(f, center)?;
    let mut kronrod = fc * WGK[10];
    let mut gauss = 0.0;
    let mut abs_sum = kronrod.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let x = half * XGK[j];
        let f1 = checked(f, center - x)?;
        let f2 = checked(f, center + x)?;
        fv1[j] = f1;
        fv2[j] = f2;
        kronrod += WGK[j] * (f1 + f2);
        abs_sum += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * kronrod;
    let mut asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let scale = half.abs();
    let value = kronrod * half;
    let res_abs = abs_sum * scale;
    let res_asc = asc * scale;
    let mut error = ((kronrod - gauss) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok(Panel { lo, hi, value, error })
}

struct Adaptive {
    panels: Vec<Panel>,
    evaluations: usize,
    converged: bool,
}

fn adaptive<F: FnMut(f64) -> f64>(
    f: &mut F,
    lo: f64,
    hi: f64,
    spec: &QuadratureSpec,
) -> Result<Adaptive, QuadratureError> {
    let mut heap = BinaryHeap::new();
    let mut frozen: Vec<Panel> = Vec::new();
    heap.push(gk21(f, lo, hi)?);
    let mut evaluations = 21;
    let mut count = 1;
    let converged = loop {
        let (value, error) = heap
            .iter()
            .chain(frozen.iter())
            .fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
        if error <= spec.tolerance_for(value) {
            break true;
        }
        if count >= spec.max_subdivisions {
            break false;
        }
        let Some(worst) = heap.pop() else {
            break false;
        };
        let mid = 0.5 * (worst.lo + worst.hi);
        if !(mid > worst.lo && mid < worst.hi) || (worst.hi - worst.lo) < 4.0 * f64::EPSILON * mid.abs() {
            frozen.push(worst);
            continue;
        }
        heap.push(gk21(f, worst.lo, mid)?);
        heap.push(gk21(f, mid, worst.hi)?);
        evaluations += 42;
        count += 1;
    };
    let mut panels: Vec<Panel> = heap.into_vec();
    panels.extend(frozen);
    panels.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    Ok(Adaptive { panels, evaluations, converged })
}

fn summarize(run: &Adaptive) -> QuadratureResult {
    // Summation in abscissa order keeps the result independent of heap layout.
    let value = run.panels.iter().map(|p| p.value).sum();
    let error_estimate = run.panels.iter().map(|p| p.error).sum();
    QuadratureResult { value, error_estimate, evaluations: run.evaluations, converged: run.converged }
}

/// Integrates f over [lo, hi].
pub fn integrate_finite<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    spec: &QuadratureSpec,
) -> Result<QuadratureResult, QuadratureError> {
    spec.validate()?;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(QuadratureError::InvalidInterval { lo, hi });
    }
    let mut extra = 0;
    if spec.endpoint == EndpointPolicy::Closed {
        checked(&mut f, lo)?;
        checked(&mut f, hi)?;
        extra = 2;
    }
    let run = adaptive(&mut f, lo, hi, spec)?;
    let mut result = summarize(&run);
    result.evaluations += extra;
    Ok(result)
}

/// Integrates f over [lo, ∞) using the tail policy in `spec`.
pub fn integrate_semi_infinite<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    spec: &QuadratureSpec,
) -> Result<QuadratureResult, QuadratureError> {
    spec.validate()?;
    if !lo.is_finite() {
        return Err(QuadratureError::InvalidInterval { lo, hi: f64::INFINITY });
    }
    let s = spec.scale;
    match spec.tail {
        TailPolicy::Auto | TailPolicy::ExponentialMap => {
            let mut g = |x: f64| {
                let one_minus = 1.0 - x;
                let t = lo - s * (-x).ln_1p();
                if !t.is_finite() {
                    return 0.0;
                }
                let v = f(t);
                if v == 0.0 {
                    0.0
                } else {
                    v * s / one_minus
                }
            };
            let run = adaptive(&mut g, 0.0, 1.0, spec)?;
            Ok(summarize(&run))
        }
        TailPolicy::AlgebraicMap => {
            let mut g = |x: f64| {
                let one_minus = 1.0 - x;
                let inv = 1.0 / one_minus;
                let t = lo + s * x * (2.0 - x) * inv * inv;
                if !t.is_finite() {
                    return 0.0;
                }
                let v = f(t);
                if v == 0.0 {
                    0.0
                } else {
                    v * 2.0 * s * inv * inv * inv
                }
            };
            let run = adaptive(&mut g, 0.0, 1.0, spec)?;
            Ok(summarize(&run))
        }
        TailPolicy::FixedCutoff { multiple } => {
            let hi = lo + multiple * s;
            let run = adaptive(&mut f, lo, hi, spec)?;
            let mut result = summarize(&run);
            let last = run.panels.last().map(|p| p.value.abs()).unwrap_or(0.0);
            result.error_estimate += last;
            result.converged = result.converged && result.error_estimate <= spec.tolerance_for(result.value);
            Ok(result)
        }
    }
}
