//! Monte Carlo crossing counts and brute-force quadrature oracles.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crossings::{mean_count, CrossingMode};
use crate::kernels::{Autocorrelation, Kernel, KernelError, KernelFamily};
use crate::quadrature::{integrate_finite, EndpointPolicy, QuadratureError, QuadratureSpec};

#[derive(Debug, Clone, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("circulant embedding not non-negative definite up to {0} points")]
    Embedding(usize),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("covariance at lag t = {0} is not positive definite")]
    DegenerateLag(f64),
}

/// What generates the paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum SimSource {
    /// Damped oscillator SDE in (x, v).
    Sdho { omega0: f64, zeta: f64, theta: f64 },
    /// OU noise x driving the mean-reverting y; y is observed.
    OuSystem { sigma: f64, tau_f: f64, tau_e: f64 },
    /// Any kernel, by circulant embedding.
    Kernel(KernelFamily),
}

impl SimSource {
    pub fn kernel(&self) -> Result<Kernel, KernelError> {
        match *self {
            SimSource::Sdho { omega0, zeta, theta } => crate::kernels::make_sdho(omega0, zeta, theta),
            SimSource::OuSystem { sigma, tau_f, tau_e } => crate::kernels::make_ou_mean_revert(sigma, tau_f, tau_e),
            SimSource::Kernel(family) => Kernel::from_family(family),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub source: SimSource,
    pub horizon: f64,
    /// Requested step; the simulation uses T/⌈T/dt⌉ so the horizon is exact.
    pub dt: f64,
    pub trials: usize,
    pub seed: u64,
    pub u: f64,
    pub mode: CrossingMode,
    pub bootstrap_resamples: usize,
    /// Bisection depth of exact bridge sampling between grid points near a
    /// level (SDE sources only). 0 counts on the plain grid.
    pub refine_depth: u32,
}

impl SimConfig {
    pub fn new(source: SimSource, horizon: f64, dt: f64, trials: usize, seed: u64) -> Self {
        Self { source, horizon, dt, trials, seed, u: 0.0, mode: CrossingMode::Up, bootstrap_resamples: 1000, refine_depth: 0 }
    }

    /// Step of dt_factor × τ_slow, the convention used for the oscillator runs.
    pub fn with_slow_step(source: SimSource, horizon: f64, dt_factor: f64, trials: usize, seed: u64) -> Result<Self, SimError> {
        let tau = source.kernel()?.tau_slow();
        Ok(Self::new(source, horizon, dt_factor * tau, trials, seed))
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).ceil() as usize
    }

    pub fn effective_dt(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    pub fn validate(&self) -> Result<Kernel, SimError> {
        let kernel = self.source.kernel()?;
        let tau_fast = kernel.tau_fast();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.dt > 0.05 * tau_fast * (1.0 + 1e-12) {
            return Err(SimError::Config(format!(
                "dt = {} exceeds 0.05 x tau_fast = {}",
                self.dt,
                0.05 * tau_fast
            )));
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return Err(SimError::Config(format!("horizon {} must be at least dt", self.horizon)));
        }
        if self.trials < 2 {
            return Err(SimError::Config("at least 2 trials are required".into()));
        }
        if self.refine_depth > 30 {
            return Err(SimError::Config(format!("refine depth {} is above 30", self.refine_depth)));
        }
        if !self.u.is_finite() {
            return Err(SimError::Config("level must be finite".into()));
        }
        Ok(kernel)
    }
}

type Mat2 = [[f64; 2]; 2];

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

fn cholesky2(s: &Mat2) -> Option<Mat2> {
    if !(s[0][0] > 0.0) {
        return None;
    }
    let l00 = s[0][0].sqrt();
    let l10 = s[1][0] / l00;
    let d = s[1][1] - l10 * l10;
    if d < -1e-12 * s[1][1].abs() {
        return None;
    }
    Some([[l00, 0.0], [l10, d.max(0.0).sqrt()]])
}

/// e^{J·t} for a 2×2 matrix with real trace, via e^{mt}(cosh(ht) I + sinh(ht)/h (J − mI)).
fn expm2(j: &Mat2, t: f64) -> Mat2 {
    let m = 0.5 * (j[0][0] + j[1][1]);
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let h2 = m * m - det;
    let x = h2 * t * t;
    let (c, s) = if x.abs() < 0.25 {
        let (mut c, mut s, mut tc, mut ts) = (1.0, 1.0, 1.0, 1.0);
        for k in 1..20 {
            let kf = k as f64;
            tc *= x / ((2.0 * kf - 1.0) * (2.0 * kf));
            ts *= x / ((2.0 * kf) * (2.0 * kf + 1.0));
            c += tc;
            s += ts;
        }
        (c, s * t)
    } else if h2 > 0.0 {
        let h = h2.sqrt();
        ((h * t).cosh(), (h * t).sinh() / h)
    } else {
        let w = (-h2).sqrt();
        ((w * t).cos(), (w * t).sin() / w)
    };
    let e = (m * t).exp();
    [
        [e * (c + s * (j[0][0] - m)), e * s * j[0][1]],
        [e * s * j[1][0], e * (c + s * (j[1][1] - m))],
    ]
}

/// Exact Gaussian transition of a stationary 2D linear SDE.
#[derive(Debug, Clone)]
struct LinearSystem {
    drift: Mat2,
    stationary: Mat2,
    dt: f64,
    transition: Mat2,
    step_chol: Mat2,
    stationary_chol: Mat2,
    observed: usize,
}

impl LinearSystem {
    fn new(drift: Mat2, stationary: Mat2, dt: f64, observed: usize) -> Result<Self, SimError> {
        let a = expm2(&drift, dt);
        let propagated = mat_mul(&mat_mul(&a, &stationary), &transpose(&a));
        let mut step = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                step[i][j] = stationary[i][j] - propagated[i][j];
            }
        }
        step[0][1] = 0.5 * (step[0][1] + step[1][0]);
        step[1][0] = step[0][1];
        let step_chol =
            cholesky2(&step).ok_or_else(|| SimError::Config("step covariance is not positive semidefinite".into()))?;
        let stationary_chol =
            cholesky2(&stationary).ok_or_else(|| SimError::Config("stationary covariance is singular".into()))?;
        Ok(Self { drift, stationary, dt, transition: a, step_chol, stationary_chol, observed })
    }

    fn sdho(omega0: f64, zeta: f64, theta: f64, dt: f64) -> Result<Self, SimError> {
        let drift = [[0.0, 1.0], [-omega0 * omega0, -2.0 * zeta * omega0]];
        let stationary = [[theta / (omega0 * omega0), 0.0], [0.0, theta]];
        Self::new(drift, stationary, dt, 0)
    }

    fn ou_system(sigma: f64, tau_f: f64, tau_e: f64, dt: f64) -> Result<Self, SimError> {
        let drift = [[-1.0 / tau_f, 0.0], [1.0 / tau_e, -1.0 / tau_e]];
        let kappa = tau_f / tau_e;
        let cross = sigma * sigma * kappa / (1.0 + kappa);
        let stationary = [[sigma * sigma, cross], [cross, cross]];
        Self::new(drift, stationary, dt, 1)
    }

    fn sample(&self, rng: &mut ChaCha8Rng, n: usize, both: bool) -> (Vec<f64>, Option<Vec<f64>>) {
        let z = |rng: &mut ChaCha8Rng| -> [f64; 2] { [rng.sample(StandardNormal), rng.sample(StandardNormal)] };
        let l = &self.stationary_chol;
        let e = z(rng);
        let mut s = [l[0][0] * e[0], l[1][0] * e[0] + l[1][1] * e[1]];
        let mut obs = Vec::with_capacity(n + 1);
        let mut other = both.then(|| Vec::with_capacity(n + 1));
        let (a, c) = (&self.transition, &self.step_chol);
        let hidden = 1 - self.observed;
        for i in 0..=n {
            obs.push(s[self.observed]);
            if let Some(o) = other.as_mut() {
                o.push(s[hidden]);
            }
            if i == n {
                break;
            }
            let e = z(rng);
            s = [
                a[0][0] * s[0] + a[0][1] * s[1] + c[0][0] * e[0],
                a[1][0] * s[0] + a[1][1] * s[1] + c[1][0] * e[0] + c[1][1] * e[1],
            ];
        }
        (obs, other)
    }
}

/// Step covariance ∫₀ʰ e^{Js} G e^{Jᵀs} ds by its Taylor series in h, with
/// G = −(JΣ∞ + Σ∞Jᵀ). Accurate for the tiny steps where Σ∞ − AΣ∞Aᵀ cancels.
fn step_covariance_series(drift: &Mat2, stationary: &Mat2, h: f64) -> Mat2 {
    let js = mat_mul(drift, stationary);
    let mut term = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            term[i][j] = -(js[i][j] + js[j][i]) * h;
        }
    }
    let mut sum = term;
    for n in 1..60 {
        let jx = mat_mul(drift, &term);
        let mut next = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                next[i][j] = (jx[i][j] + jx[j][i]) * h / (n as f64 + 1.0);
            }
        }
        term = next;
        let mut small = true;
        for i in 0..2 {
            for j in 0..2 {
                sum[i][j] += term[i][j];
                small &= term[i][j].abs() <= 1e-17 * sum[i][i].abs().max(sum[j][j].abs());
            }
        }
        if small {
            break;
        }
    }
    sum
}

fn inverse2(m: &Mat2) -> Mat2 {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
}

// Midpoint law of an interval of length h given both end states:
// N(A_{h/2}s0 + K(s1 − A_h s0), Q_{h/2} − K A_{h/2} Q_{h/2}).
#[derive(Debug, Clone)]
struct BridgeLevel {
    h: f64,
    half: Mat2,
    full: Mat2,
    gain: Mat2,
    chol: Mat2,
    // sd of the observed coordinate over one sub-step, for the proximity test
    spread: f64,
}

#[derive(Debug, Clone)]
struct Bridge {
    levels: Vec<BridgeLevel>,
    observed: usize,
    drift: Mat2,
}

impl Bridge {
    fn new(sys: &LinearSystem, depth: u32) -> Result<Self, SimError> {
        let mut levels = Vec::with_capacity(depth as usize);
        for d in 0..depth {
            let h = sys.dt / (1u64 << d) as f64;
            let full = expm2(&sys.drift, h);
            let half = expm2(&sys.drift, 0.5 * h);
            let q_full = step_covariance_series(&sys.drift, &sys.stationary, h);
            let q_half = step_covariance_series(&sys.drift, &sys.stationary, 0.5 * h);
            let gain = mat_mul(&mat_mul(&q_half, &transpose(&half)), &inverse2(&q_full));
            let reduce = mat_mul(&mat_mul(&gain, &half), &q_half);
            let mut cov = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] = q_half[i][j] - reduce[i][j];
                }
            }
            let sym = 0.5 * (cov[0][1] + cov[1][0]);
            cov[0][1] = sym;
            cov[1][0] = sym;
            for i in 0..2 {
                cov[i][i] = cov[i][i].max(0.0);
            }
            let chol = cholesky2(&cov).unwrap_or([[cov[0][0].sqrt(), 0.0], [0.0, 0.0]]);
            let spread = q_full[sys.observed][sys.observed].sqrt();
            levels.push(BridgeLevel { h, half, full, gain, chol, spread });
        }
        Ok(Self { levels, observed: sys.observed, drift: sys.drift })
    }

    fn rate(&self, s: &[f64; 2]) -> f64 {
        let row = self.drift[self.observed];
        row[0] * s[0] + row[1] * s[1]
    }

    // Adds the crossings of the bridge between s0 and s1 to `counts`.
    fn count(&self, s0: [f64; 2], s1: [f64; 2], depth: usize, levels: &[f64], rng: &mut ChaCha8Rng, counts: &mut [(u64, u64)]) {
        let (x0, x1) = (s0[self.observed], s1[self.observed]);
        if let Some(lv) = self.levels.get(depth) {
            let reach = 2.0 * self.rate(&s0).abs().max(self.rate(&s1).abs()) * lv.h + 10.0 * lv.spread;
            let near = levels.iter().any(|&u| (x0 - u).abs() < reach || (x1 - u).abs() < reach);
            if near {
                let (a, f, k, c) = (&lv.half, &lv.full, &lv.gain, &lv.chol);
                let pred = [f[0][0] * s0[0] + f[0][1] * s0[1], f[1][0] * s0[0] + f[1][1] * s0[1]];
                let innov = [s1[0] - pred[0], s1[1] - pred[1]];
                let e: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                let mid = [
                    a[0][0] * s0[0] + a[0][1] * s0[1] + k[0][0] * innov[0] + k[0][1] * innov[1] + c[0][0] * e[0],
                    a[1][0] * s0[0] + a[1][1] * s0[1] + k[1][0] * innov[0] + k[1][1] * innov[1] + c[1][0] * e[0] + c[1][1] * e[1],
                ];
                self.count(s0, mid, depth + 1, levels, rng, counts);
                self.count(mid, s1, depth + 1, levels, rng, counts);
                return;
            }
        }
        for (c, &u) in counts.iter_mut().zip(levels) {
            if x0 < u && u <= x1 {
                c.0 += 1;
            } else if x0 >= u && u > x1 {
                c.1 += 1;
            }
        }
    }
}

/// Stationary Gaussian sampler on a uniform grid by circulant embedding.
#[derive(Clone)]
pub struct CirculantSampler {
    samples: usize,
    scaled_root: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CirculantSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CirculantSampler").field("samples", &self.samples).field("embedding", &self.scaled_root.len()).finish()
    }
}

const EMBEDDING_CAP: usize = 1 << 24;

impl CirculantSampler {
    pub fn new<K: Autocorrelation + ?Sized>(kernel: &K, samples: usize, dt: f64) -> Result<Self, SimError> {
        let mut half = samples.max(2).next_power_of_two();
        let mut planner = FftPlanner::new();
        loop {
            let m = 2 * half;
            if m > EMBEDDING_CAP {
                return Err(SimError::Embedding(EMBEDDING_CAP));
            }
            let mut row = vec![Complex64::new(0.0, 0.0); m];
            for k in 0..=half {
                let v = kernel.eval(k as f64 * dt)?.r;
                row[k] = Complex64::new(v, 0.0);
                if k > 0 && k < half {
                    row[m - k] = Complex64::new(v, 0.0);
                }
            }
            let fft = planner.plan_fft_forward(m);
            fft.process(&mut row);
            let max = row.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
            let min = row.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
            if min >= -1e-12 * max {
                let scaled_root = row.iter().map(|c| (c.re.max(0.0) / m as f64).sqrt()).collect();
                return Ok(Self { samples, scaled_root, fft });
            }
            half *= 2;
        }
    }

    pub fn embedding_len(&self) -> usize {
        self.scaled_root.len()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut buf: Vec<Complex64> = self
            .scaled_root
            .iter()
            .map(|&s| Complex64::new(s * rng.sample::<f64, _>(StandardNormal), s * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        self.fft.process(&mut buf);
        buf.iter().take(self.samples).map(|c| c.re).collect()
    }
}

/// A sampled trajectory on the grid t_i = i·dt.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub trial: usize,
    pub dt: f64,
    pub values: Vec<f64>,
    /// Velocity for the oscillator, the driving noise for the OU system.
    pub companion: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
enum Generator {
    Linear(LinearSystem, Option<Bridge>),
    Circulant(CirculantSampler),
}

/// Deterministic per-trial path generator: trial i always gets ChaCha8 stream i.
#[derive(Debug, Clone)]
pub struct PathStream {
    generator: Generator,
    seed: u64,
    steps: usize,
    dt: f64,
    trials: usize,
    next: usize,
    companion: bool,
}

impl PathStream {
    pub fn path(&self, trial: usize) -> Path {
        let mut rng = trial_rng(self.seed, trial as u64);
        let (values, companion) = match &self.generator {
            Generator::Linear(sys, _) => sys.sample(&mut rng, self.steps, self.companion),
            Generator::Circulant(c) => (c.sample(&mut rng), None),
        };
        Path { trial, dt: self.dt, values, companion }
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    /// Crossing counts of one trial at each level. With bridge refinement the
    /// grid path is the same as `path(trial)`; the bridge draws continue the
    /// trial's stream afterwards.
    pub fn counts(&self, trial: usize, levels: &[f64], mode: CrossingMode) -> Vec<u64> {
        let pick = |up: u64, down: u64| match mode {
            CrossingMode::Up => up,
            CrossingMode::Down => down,
            CrossingMode::Total => up + down,
        };
        match &self.generator {
            Generator::Linear(sys, Some(bridge)) => {
                let mut rng = trial_rng(self.seed, trial as u64);
                let (obs, other) = sys.sample(&mut rng, self.steps, true);
                let other = other.expect("hidden coordinate requested");
                let state = |i: usize| {
                    let mut s = [0.0; 2];
                    s[sys.observed] = obs[i];
                    s[1 - sys.observed] = other[i];
                    s
                };
                let mut acc = vec![(0u64, 0u64); levels.len()];
                for i in 0..self.steps {
                    bridge.count(state(i), state(i + 1), 0, levels, &mut rng, &mut acc);
                }
                acc.into_iter().map(|(up, down)| pick(up, down)).collect()
            }
            _ => {
                let p = self.path(trial);
                levels.iter().map(|&u| count_crossings(&p.values, u, mode)).collect()
            }
        }
    }
}

impl Iterator for PathStream {
    type Item = Path;

    fn next(&mut self) -> Option<Path> {
        if self.next >= self.trials {
            return None;
        }
        let p = self.path(self.next);
        self.next += 1;
        Some(p)
    }
}

fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn linear_generator(sys: LinearSystem, depth: u32) -> Result<Generator, SimError> {
    let bridge = if depth > 0 { Some(Bridge::new(&sys, depth)?) } else { None };
    Ok(Generator::Linear(sys, bridge))
}

fn stream_for(config: &SimConfig, generator: Generator, companion: bool) -> PathStream {
    PathStream {
        generator,
        seed: config.seed,
        steps: config.steps(),
        dt: config.effective_dt(),
        trials: config.trials,
        next: 0,
        companion,
    }
}

pub fn simulate_sdho_paths(config: &SimConfig) -> Result<PathStream, SimError> {
    config.validate()?;
    match config.source {
        SimSource::Sdho { omega0, zeta, theta } => {
            let sys = LinearSystem::sdho(omega0, zeta, theta, config.effective_dt())?;
            Ok(stream_for(config, linear_generator(sys, config.refine_depth)?, true))
        }
        _ => Err(SimError::Config("simulate_sdho_paths needs an Sdho source".into())),
    }
}

pub fn simulate_ou_system_paths(config: &SimConfig) -> Result<PathStream, SimError> {
    config.validate()?;
    match config.source {
        SimSource::OuSystem { sigma, tau_f, tau_e } => {
            let sys = LinearSystem::ou_system(sigma, tau_f, tau_e, config.effective_dt())?;
            Ok(stream_for(config, linear_generator(sys, config.refine_depth)?, true))
        }
        _ => Err(SimError::Config("simulate_ou_system_paths needs an OuSystem source".into())),
    }
}

pub fn simulate_kernel_paths<K: Autocorrelation + ?Sized>(kernel: &K, config: &SimConfig) -> Result<PathStream, SimError> {
    config.validate()?;
    let sampler = CirculantSampler::new(kernel, config.steps() + 1, config.effective_dt())?;
    Ok(stream_for(config, Generator::Circulant(sampler), false))
}

/// Paths for whatever source the config names.
pub fn simulate_paths(config: &SimConfig) -> Result<PathStream, SimError> {
    match config.source {
        SimSource::Sdho { .. } => simulate_sdho_paths(config),
        SimSource::OuSystem { .. } => simulate_ou_system_paths(config),
        SimSource::Kernel(family) => simulate_kernel_paths(&Kernel::from_family(family)?, config),
    }
}

/// Grid crossings: up when x_i < u ≤ x_{i+1}, down when x_i ≥ u > x_{i+1}.
pub fn count_crossings(path: &[f64], u: f64, mode: CrossingMode) -> u64 {
    let mut up = 0;
    let mut down = 0;
    for w in path.windows(2) {
        if w[0] < u && u <= w[1] {
            up += 1;
        } else if w[0] >= u && u > w[1] {
            down += 1;
        }
    }
    match mode {
        CrossingMode::Up => up,
        CrossingMode::Down => down,
        CrossingMode::Total => up + down,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEstimate {
    pub u: f64,
    pub mode: CrossingMode,
    pub mean: f64,
    pub variance: f64,
    pub fano: Option<f64>,
    pub mean_se: f64,
    pub variance_se: f64,
    pub fano_se: Option<f64>,
    pub trials: usize,
    pub total_crossings: u64,
}

fn moments(counts: &[u64]) -> (f64, f64, f64) {
    let n = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &c in counts {
        let d = c as f64 - mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    (mean, m2 / (n - 1.0), m4 / n)
}

/// Summary statistics of per-trial counts. The Fano standard error comes
/// from a seeded nonparametric bootstrap.
pub fn summarize_counts(counts: &[u64], u: f64, mode: CrossingMode, resamples: usize, seed: u64) -> SimEstimate {
    let n = counts.len();
    let nf = n as f64;
    let (mean, var, m4) = moments(counts);
    let var_of_var = (m4 - (nf - 3.0) / (nf - 1.0) * var * var) / nf;
    let fano = (mean > 0.0).then(|| var / mean);
    let fano_se = fano.and_then(|_| {
        if resamples < 2 {
            return None;
        }
        let mut rng = trial_rng(seed, u64::MAX);
        let mut sample = vec![0u64; n];
        let mut stats = Vec::with_capacity(resamples);
        for _ in 0..resamples {
            for s in sample.iter_mut() {
                *s = counts[rng.gen_range(0..n)];
            }
            let (m, v, _) = moments(&sample);
            if m > 0.0 {
                stats.push(v / m);
            }
        }
        Some(moments_f64(&stats).1.sqrt())
    });
    SimEstimate {
        u,
        mode,
        mean,
        variance: var,
        fano,
        mean_se: (var / nf).sqrt(),
        variance_se: var_of_var.max(0.0).sqrt(),
        fano_se,
        trials: n,
        total_crossings: counts.iter().sum(),
    }
}

fn moments_f64(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, m2 / (n - 1.0))
}

/// Per-trial crossing counts for several levels from shared paths.
/// Row i holds the counts of trial i, in level order.
pub fn simulate_counts(config: &SimConfig, levels: &[f64], mode: CrossingMode) -> Result<Vec<Vec<u64>>, SimError> {
    let stream = simulate_paths(config)?;
    Ok((0..config.trials)
        .into_par_iter()
        .map(|trial| stream.counts(trial, levels, mode))
        .collect())
}

/// Estimates for several levels from one set of paths.
pub fn estimate_stats_levels(config: &SimConfig, levels: &[f64]) -> Result<Vec<SimEstimate>, SimError> {
    let counts = simulate_counts(config, levels, config.mode)?;
    Ok(levels
        .iter()
        .enumerate()
        .map(|(j, &u)| {
            let column: Vec<u64> = counts.iter().map(|row| row[j]).collect();
            summarize_counts(&column, u, config.mode, config.bootstrap_resamples, config.seed ^ (j as u64 + 1))
        })
        .collect())
}

pub fn estimate_stats(config: &SimConfig) -> Result<SimEstimate, SimError> {
    Ok(estimate_stats_levels(config, &[config.u])?.remove(0))
}

/// Writes one trajectory as whitespace-separated columns `t x`.
pub fn dump_path<W: Write>(path: &Path, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# t x")?;
    for (i, x) in path.values.iter().enumerate() {
        writeln!(out, "{:.17e} {:.17e}", i as f64 * path.dt, x)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Brute-force velocity integrals

fn nested_spec(rel: f64, abs: f64) -> QuadratureSpec {
    QuadratureSpec {
        rel_tol: rel,
        abs_tol: abs,
        max_subdivisions: 400,
        endpoint: EndpointPolicy::Closed,
        ..QuadratureSpec::default()
    }
}

/// ∫ f over [lo, hi] split at the given interior points.
fn integrate_pieces<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, breaks: &[f64], spec: &QuadratureSpec) -> Result<f64, QuadratureError> {
    let mut pts: Vec<f64> = std::iter::once(lo)
        .chain(breaks.iter().copied().filter(|&b| b > lo && b < hi))
        .chain(std::iter::once(hi))
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let mut total = 0.0;
    for w in pts.windows(2) {
        if w[1] > w[0] {
            total += integrate_finite(&mut f, w[0], w[1], spec)?.value;
        }
    }
    Ok(total)
}

// log f_Q(u,u,y1,y2) − log f_P(u,y1) − log f_P(u,y2), the log excess of the
// joint crossing density over independence.
enum LogExcess {
    // Well-conditioned Σ_Q: Λ = −½ log det(I + Σ0⁻¹E) + ½ aᵀ E b.
    Full { chol: nalgebra::Cholesky<f64, nalgebra::U4>, e: Matrix4<f64>, half_logdet: f64, u: f64, r0: f64, q0: f64 },
    // Near-singular Σ_Q: condition the velocities on X(0) = X(t) = u and
    // rotate to z1 = (y2 − y1)/√2, z2 = (y1 + y2)/√2.
    Conditional { constant: f64, gamma: f64, vz1: f64, vz2: f64, q0: f64 },
}

struct VelocityModel {
    excess: LogExcess,
    q0: f64,
    mean1: f64,
    c11: f64,
    c12: f64,
    cond_sd: f64,
    mu_shift: f64,
}

fn principal_minor_sums(m: &Matrix4<f64>) -> f64 {
    // e2 + e3 + e4 of M: sums of principal minors of order 2..4.
    let mut e2 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            e2 += m[(i, i)] * m[(j, j)] - m[(i, j)] * m[(j, i)];
        }
    }
    let mut e3 = 0.0;
    for skip in 0..4 {
        let idx: Vec<usize> = (0..4).filter(|&k| k != skip).collect();
        let sub = nalgebra::Matrix3::from_fn(|a, b| m[(idx[a], idx[b])]);
        e3 += sub.determinant();
    }
    e2 + e3 + m.determinant()
}

impl VelocityModel {
    fn new<K: Autocorrelation + ?Sized>(kernel: &K, u: f64, t: f64) -> Result<Self, SimError> {
        let d = kernel.eval(t)?;
        let c = kernel.lag_covariance(t)?;
        let (r0, q0) = (kernel.r0(), kernel.q0());
        let (r, p, q) = (d.r, d.p, d.q);
        let sigma_q = Matrix4::new(r0, r, 0.0, p, r, r0, -p, 0.0, 0.0, -p, q0, q, p, 0.0, q, q0);
        let scale = Matrix4::from_diagonal(&Vector4::new(r0, r0, q0, q0).map(|v| 1.0 / v.sqrt()));
        let corr = scale * sigma_q * scale;
        let eig = SymmetricEigen::new(corr).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        let rp = r0 + r;
        let (r_gap, d_alpha, d_beta) = (c.r_gap, c.d_alpha, c.d_beta);
        if !(r_gap > 0.0 && d_alpha > 0.0 && d_beta > 0.0) {
            return Err(SimError::DegenerateLag(t));
        }
        let vz1 = d_alpha / rp;
        let vz2 = d_beta / r_gap;
        let mu = p * u / rp;
        let c11 = 0.5 * (vz1 + vz2);
        let c12 = 0.5 * (vz2 - vz1);
        let excess = if lo > 1e-4 * hi {
            let e = sigma_q - Matrix4::from_diagonal(&Vector4::new(r0, r0, q0, q0));
            let m = Matrix4::from_fn(|i, j| e[(i, j)] / [r0, r0, q0, q0][i]);
            let chol = sigma_q.cholesky().ok_or(SimError::DegenerateLag(t))?;
            LogExcess::Full { chol, e, half_logdet: 0.5 * principal_minor_sums(&m).ln_1p(), u, r0, q0 }
        } else {
            // log f_X(u,u) + log N(z) − log f_P f_P without the velocity quadratic terms.
            let log_fx = -(2.0 * PI).ln() - 0.5 * (r_gap * rp).ln() - u * u / rp;
            let log_nz = -(2.0 * PI).ln() - 0.5 * (vz1 * vz2).ln();
            let log_pp = -2.0 * (2.0 * PI).ln() - (r0 * q0).ln() - u * u / r0;
            LogExcess::Conditional {
                constant: log_fx + log_nz - log_pp,
                gamma: std::f64::consts::SQRT_2 * mu,
                vz1,
                vz2,
                q0,
            }
        };
        Ok(Self { excess, q0, mean1: -mu, c11, c12, cond_sd: (vz1 * vz2 / c11).sqrt(), mu_shift: mu.abs() })
    }

    fn log_excess(&self, y1: f64, y2: f64) -> f64 {
        match &self.excess {
            LogExcess::Full { chol, e, half_logdet, u, r0, q0 } => {
                let v = Vector4::new(*u, *u, y1, y2);
                let a = chol.solve(&v);
                let b = Vector4::new(u / r0, u / r0, y1 / q0, y2 / q0);
                -half_logdet + 0.5 * a.dot(&(e * b))
            }
            LogExcess::Conditional { constant, gamma, vz1, vz2, q0 } => {
                let z1 = (y2 - y1) / std::f64::consts::SQRT_2;
                let z2 = (y1 + y2) / std::f64::consts::SQRT_2;
                constant - (z1 - gamma).powi(2) / (2.0 * vz1) - z2 * z2 / (2.0 * vz2) + (y1 * y1 + y2 * y2) / (2.0 * q0)
            }
        }
    }

    // y1·y2·φ(y1)φ(y2)·(e^Λ − 1), φ the N(0, q0) density
    fn density_excess(&self, y1: f64, y2: f64) -> f64 {
        let log_pp = -(y1 * y1 + y2 * y2) / (2.0 * self.q0) - (2.0 * PI * self.q0).ln();
        let l = self.log_excess(y1, y2);
        let v = if l < 1.0 { log_pp.exp() * l.exp_m1() } else { (log_pp + l).exp() - log_pp.exp() };
        y1 * y2 * v
    }
}

/// I/I₂ by direct 2D quadrature of the velocity integral against the
/// 4-variate Gaussian density, independent of the closed form.
pub fn bruteforce_normalized<K: Autocorrelation + ?Sized>(kernel: &K, u: f64, t: f64, mode: CrossingMode) -> Result<f64, SimError> {
    let model = VelocityModel::new(kernel, u, t)?;
    let q0 = model.q0;
    let ymax = 12.0 * q0.sqrt() + model.mu_shift;
    let total = mode == CrossingMode::Total;
    let lo = if total { -ymax } else { 0.0 };
    let inner_spec = nested_spec(1e-12, 1e-18);
    let outer_spec = nested_spec(1e-11, 1e-16);
    let mut failure = None;
    let outer_breaks: Vec<f64> = {
        let sd = model.c11.sqrt();
        let mut b = vec![model.mean1 - 10.0 * sd, model.mean1, model.mean1 + 10.0 * sd];
        if total {
            b.push(0.0);
        }
        b
    };
    let value = integrate_pieces(
        |y1| {
            let m = -model.mean1 + model.c12 / model.c11 * (y1 - model.mean1);
            let s = model.cond_sd;
            let mut breaks = vec![m - 10.0 * s, m - 3.0 * s, m, m + 3.0 * s, m + 10.0 * s];
            if total {
                breaks.push(0.0);
            }
            match integrate_pieces(|y2| model.density_excess(y1, y2).abs_if(total, y1, y2), lo, ymax, &breaks, &inner_spec) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        lo,
        ymax,
        &outer_breaks,
        &outer_spec,
    );
    if let Some(e) = failure {
        return Err(e.into());
    }
    let mean_abs_velocity = if total { 4.0 * q0 / (2.0 * PI) } else { q0 / (2.0 * PI) };
    Ok(value? / mean_abs_velocity)
}

trait AbsIf {
    fn abs_if(self, total: bool, y1: f64, y2: f64) -> f64;
}

impl AbsIf for f64 {
    // |y1 y2| weight for total crossings: flip the sign where y1·y2 < 0.
    fn abs_if(self, total: bool, y1: f64, y2: f64) -> f64 {
        if total && y1 * y2 < 0.0 {
            -self
        } else {
            self
        }
    }
}

pub fn bruteforce_integrand_up<K: Autocorrelation + ?Sized>(kernel: &K, u: f64, t: f64) -> Result<f64, SimError> {
    Ok(crate::crossings::product_term(kernel, u, CrossingMode::Up) * bruteforce_normalized(kernel, u, t, CrossingMode::Up)?)
}

pub fn bruteforce_integrand_total<K: Autocorrelation + ?Sized>(kernel: &K, u: f64, t: f64) -> Result<f64, SimError> {
    Ok(crate::crossings::product_term(kernel, u, CrossingMode::Total)
        * bruteforce_normalized(kernel, u, t, CrossingMode::Total)?)
}

/// Finite-horizon variance from the brute-force integrand: mean + 2T∫(1 − t/T) I dt.
pub fn bruteforce_variance<K: Autocorrelation + ?Sized>(kernel: &K, u: f64, horizon: f64, mode: CrossingMode) -> Result<f64, SimError> {
    let mean = mean_count(kernel, u, horizon, mode).map_err(|e| SimError::Config(e.to_string()))?;
    let mode = if mode == CrossingMode::Down { CrossingMode::Up } else { mode };
    let i2 = crate::crossings::product_term(kernel, u, mode);
    let t_min = (1e-3 * kernel.tau_slow()).min(1e-3 * horizon);
    let mut failure = None;
    let mut g = |t: f64| match bruteforce_normalized(kernel, u, t, mode) {
        Ok(v) => (1.0 - t / horizon) * v,
        Err(e) => {
            failure.get_or_insert(e);
            f64::NAN
        }
    };
    let head = t_min * g(t_min);
    let spec = nested_spec(1e-9, 1e-12);
    let body = integrate_finite(&mut g, t_min, horizon, &spec);
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(mean + 2.0 * horizon * i2 * (body?.value + head))
}

/// Closed forms of ∫∫_{|z1|<z2} (z2² − z1²) e^{−α(z1−γ)² − βz2²} and of the
/// |z2² − z1²| integral over the plane.
pub fn theorem_closed_forms(alpha: f64, beta: f64, gamma: f64) -> (f64, f64) {
    let s = alpha + beta;
    let ab = alpha * beta;
    let k = (alpha - beta - 2.0 * ab * gamma * gamma) / ab.powf(1.5);
    let erf_part = if gamma == 0.0 {
        0.0
    } else {
        (PI.sqrt() * gamma.abs() * s.sqrt() * crate::special::erf(alpha * gamma.abs() / s.sqrt())).ln()
            - alpha * beta * gamma * gamma / s
    };
    let first = ((-alpha * gamma * gamma).exp() + if gamma == 0.0 { 0.0 } else { erf_part.exp() }) / (2.0 * ab);
    let owen = crate::special::owens_t(gamma * (2.0 * ab / s).sqrt(), (alpha / beta).sqrt());
    let up = first + PI * k * owen;
    let total = 4.0 * first + 4.0 * PI * k * (owen - 0.125);
    (up, total)
}

/// The same two integrals by nested adaptive quadrature.
pub fn bruteforce_theorem_integrals(alpha: f64, beta: f64, gamma: f64) -> Result<(f64, f64), SimError> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(SimError::Config("alpha and beta must be positive".into()));
    }
    let inner = nested_spec(1e-13, 1e-300);
    let outer = nested_spec(1e-12, 1e-300);
    let wz1 = (70.0 / alpha).sqrt();
    let wz2 = (70.0 / beta).sqrt();
    let weight = |z1: f64, z2: f64| (-alpha * (z1 - gamma).powi(2) - beta * z2 * z2).exp();
    let mut failure = None;
    let mut inner_integral = |z1: f64, lo: f64, hi: f64, sign: f64| -> f64 {
        if hi <= lo {
            return 0.0;
        }
        match integrate_finite(|z2| sign * (z2 * z2 - z1 * z1) * weight(z1, z2), lo, hi, &inner) {
            Ok(r) => r.value,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    };
    let (lo, hi) = (gamma - wz1, gamma + wz1);
    let breaks = [0.0, gamma];
    let up = integrate_pieces(|z1| inner_integral(z1, z1.abs(), z1.abs() + wz2, 1.0), lo, hi, &breaks, &outer)?;
    let inside = integrate_pieces(|z1| inner_integral(z1, 0.0, z1.abs().min(wz2), -1.0), lo, hi, &breaks, &outer)?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok((up, 2.0 * up + 2.0 * inside))
}
