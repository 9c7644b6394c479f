//! Monte Carlo simulation of the Volterra variance dynamics
//! `V_t = ξ₀(t) + (ν/λ) ∫_0^t f(t-s) √V_s dB_s` on the grid `t_i = iΔ`.
//!
//! Two schemes share one convolution engine.
//!
//! [`Scheme::Euler`] is the integrated-kernel Euler scheme
//!
//! ```text
//! V_i = ξ₀(t_i) + Σ_{j<i} w_{i-j} √V_j⁺ ΔB_j,   w_m = (ν/λ) [F(mΔ) - F((m-1)Δ)] / Δ
//! ```
//!
//! with full truncation `V⁺ = max(V, 0)` in both the diffusion coefficient
//! and the daily aggregates `r = Σ √V⁺ ΔW`, `σ² = Σ V⁺ Δ`. For very rough
//! kernels `V` spends most steps below zero and `E[V⁺]` overshoots `ξ₀`.
//!
//! [`Scheme::InverseGaussian`] (the default) works with the integrated
//! variance `ΔX_i = ∫_{t_i}^{t_{i+1}} V` and `ΔZ_i = ∫ √V dB` over each step.
//! Applying each `ΔZ_j` at the start of its step gives
//!
//! ```text
//! ΔX_i = a_i + b ΔZ_i,   a_i = ∫_{t_i}^{t_{i+1}} ξ₀ + Σ_{j<i} c_{i-j} ΔZ_j
//! c_m = (ν/λ) [F((m+1)Δ) - F(mΔ)],   b = c_0 = (ν/λ) F(Δ)
//! ```
//!
//! and, with `ΔZ_i` a Brownian motion run for time `ΔX_i`, `ΔX_i` is the
//! first passage of `τ - b W_τ` to `a_i`: inverse Gaussian with mean `a_i`
//! and shape `a_i²/b²`. `ΔX` is nonnegative by construction, and
//! `E[ΔZ_i | past] = 0`, `E[ΔZ_i² | past] = E[ΔX_i | past]`, so the mean of
//! the daily variance matches the forward curve exactly. With these weights
//! `a_i` stays positive in practice; a step with `a_i ≤ 0` would get
//! `ΔX = ΔZ = 0` and be counted as truncated.
//!
//! The convolution is causal: step `i` needs every earlier noise term. The FFT
//! engine solves it exactly with the usual divide-and-conquer scheme (the left
//! half of each block is finished first, then its contribution to the right
//! half is added with one circular FFT), for `O(N log² N)` work per path
//! instead of `O(N²)`. Both engines are available and agree to rounding.
//!
//! Every path draws from its own ChaCha20 stream `(seed, path / 2)` when
//! antithetic, `(seed, path)` otherwise, so results do not depend on how paths
//! are chunked or scheduled.

use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::Serialize;
use thiserror::Error;

use crate::model::{ForwardVarianceCurve, ModelError, ModelParams};
use crate::par;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("memory guard: {what} = {requested} exceeds the limit {limit}")]
    MemoryGuard {
        what: &'static str,
        requested: usize,
        limit: usize,
    },
    #[error("non-finite variance on path {path} at step {step}")]
    NonFinite { path: u64, step: usize },
    #[error("insufficient days: {0}")]
    InsufficientDays(String),
    #[error("incompatible batches: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Time-stepping scheme for the variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scheme {
    /// Positive integrated-variance scheme with inverse Gaussian steps.
    InverseGaussian,
    /// Integrated-kernel Euler with full truncation.
    Euler,
}

/// How the Volterra convolution is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Convolution {
    /// Exact divide-and-conquer FFT, `O(N log² N)`.
    Fft,
    /// Plain double loop, `O(N²)`.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub steps_per_day: usize,
    pub n_days: usize,
    /// Day length in years.
    pub delta: f64,
    pub seed: u64,
    pub antithetic: bool,
    pub scheme: Scheme,
    pub convolution: Convolution,
    /// Upper bound on `n_days · steps_per_day`.
    pub max_steps: usize,
    /// Upper bound on the number of stored daily values in one batch.
    pub max_batch_values: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_paths: 1000,
            steps_per_day: 20,
            n_days: 252,
            delta: crate::model::DEFAULT_DELTA,
            seed: 0,
            antithetic: false,
            scheme: Scheme::InverseGaussian,
            convolution: Convolution::Fft,
            max_steps: 1 << 22,
            max_batch_values: 1 << 27,
        }
    }
}

impl SimConfig {
    pub fn n_steps(&self) -> usize {
        self.n_days * self.steps_per_day
    }

    /// Grid step `Δ = δ / steps_per_day`.
    pub fn dt(&self) -> f64 {
        self.delta / self.steps_per_day as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 || self.steps_per_day == 0 || self.n_days == 0 {
            return Err(SimError::Config(
                "paths, steps per day and days must be positive".into(),
            ));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(SimError::Config(format!(
                "delta = {} must be positive",
                self.delta
            )));
        }
        if self.antithetic && !self.n_paths.is_multiple_of(2) {
            return Err(SimError::Config(
                "antithetic sampling needs an even path count".into(),
            ));
        }
        let steps = self.n_days.saturating_mul(self.steps_per_day);
        if steps > self.max_steps {
            return Err(SimError::MemoryGuard {
                what: "steps per path",
                requested: steps,
                limit: self.max_steps,
            });
        }
        Ok(())
    }

    fn check_batch_size(&self, paths: usize) -> Result<()> {
        let values = paths.saturating_mul(self.n_days).saturating_mul(3);
        if values > self.max_batch_values {
            return Err(SimError::MemoryGuard {
                what: "stored values per batch",
                requested: values,
                limit: self.max_batch_values,
            });
        }
        Ok(())
    }
}

/// Integrated-kernel Euler weights `w_m`, `m = 0..len` with `w_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights {
    weights: Vec<f64>,
    dt: f64,
}

impl KernelWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `Σ_m w_m Δ`, which telescopes to `(ν/λ) F((len - 1) Δ)`.
    pub fn checksum(&self) -> f64 {
        self.weights.iter().sum::<f64>() * self.dt
    }
}

/// Weights for every lag a path of `config` can need (padded up to the FFT
/// block grid).
pub fn precompute_kernel_weights(
    params: &ModelParams,
    config: &SimConfig,
) -> Result<KernelWeights> {
    config.validate()?;
    Ok(kernel_weights(
        params,
        config.dt(),
        padded_len(config.n_steps()),
    ))
}

fn kernel_weights(params: &ModelParams, dt: f64, len: usize) -> KernelWeights {
    let kernel = params.kernel();
    let scale = params.nu() / params.lambda() / dt;
    let mut weights = vec![0.0; len];
    for (m, w) in weights.iter_mut().enumerate().skip(1) {
        *w = scale * kernel.cdf_increment((m - 1) as f64 * dt, m as f64 * dt);
    }
    KernelWeights { weights, dt }
}

/// Weights `c_m = (ν/λ) [F((m+1)Δ) - F(mΔ)]`, `m = 0..len`, of the inverse
/// Gaussian scheme. `Σ_{m<=M} c_m = (ν/λ) F((M+1)Δ)`.
pub fn integrated_kernel_weights(params: &ModelParams, dt: f64, len: usize) -> Vec<f64> {
    let kernel = params.kernel();
    let scale = params.nu() / params.lambda();
    (0..len)
        .map(|m| scale * kernel.cdf_increment(m as f64 * dt, (m + 1) as f64 * dt))
        .collect()
}

const BLOCK: usize = 64;

fn padded_len(n: usize) -> usize {
    n.max(BLOCK).next_power_of_two()
}

/// Brownian increments `(ΔW, ΔB)` of one path with `Corr = ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPair {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

impl BrownianPair {
    /// Increments for `path` under `seed`. With `antithetic`, paths `2p` and
    /// `2p + 1` share a stream and are exact negatives of each other.
    pub fn generate(seed: u64, path: u64, antithetic: bool, n: usize, dt: f64, rho: f64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (stream, sign) = if antithetic {
            (path / 2, if path.is_multiple_of(2) { 1.0 } else { -1.0 })
        } else {
            (path, 1.0)
        };
        rng.set_stream(stream);
        let sd = sign * dt.sqrt();
        let perp = (1.0 - rho * rho).sqrt();
        let mut dw = Vec::with_capacity(n);
        let mut db = Vec::with_capacity(n);
        for _ in 0..n {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            dw.push(sd * z1);
            db.push(sd * (rho * z1 + perp * z2));
        }
        Self { dw, db }
    }
}

struct Level {
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
    weight_spectrum: Vec<Complex<f64>>,
}

/// Causal Volterra convolution engine shared by all paths of a batch.
struct Convolver {
    weights: Vec<f64>,
    method: Convolution,
    // levels[i] handles blocks of size BLOCK << (i + 1)
    levels: Vec<Level>,
}

struct Workspace {
    acc: Vec<f64>,
    x: Vec<f64>,
    real: Vec<f64>,
    spectrum: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl Convolver {
    fn new(weights: Vec<f64>, method: Convolution) -> Self {
        let len = weights.len();
        let mut levels = Vec::new();
        if method == Convolution::Fft {
            let mut planner = RealFftPlanner::<f64>::new();
            let mut n = 2 * BLOCK;
            while n <= len {
                let forward = planner.plan_fft_forward(n);
                let inverse = planner.plan_fft_inverse(n);
                let mut input = weights[..n].to_vec();
                let mut weight_spectrum = forward.make_output_vec();
                forward
                    .process(&mut input, &mut weight_spectrum)
                    .expect("buffer sizes come from the plan");
                // fold the inverse transform's 1/n into the weights
                for c in &mut weight_spectrum {
                    *c /= n as f64;
                }
                levels.push(Level {
                    forward,
                    inverse,
                    weight_spectrum,
                });
                n *= 2;
            }
        }
        Self {
            weights,
            method,
            levels,
        }
    }

    fn workspace(&self) -> Workspace {
        let len = self.weights.len();
        let scratch = self
            .levels
            .iter()
            .map(|l| l.forward.get_scratch_len().max(l.inverse.get_scratch_len()))
            .max()
            .unwrap_or(0);
        Workspace {
            acc: vec![0.0; len],
            x: vec![0.0; len],
            real: vec![0.0; len],
            spectrum: vec![Complex::default(); len / 2 + 1],
            scratch: vec![Complex::default(); scratch],
        }
    }

    /// Runs the recursion for `n` steps. `step(i, conv)` receives
    /// `Σ_{j<i} w_{i-j} x_j` and returns `x_i`.
    fn run<F: FnMut(usize, f64) -> f64>(&self, n: usize, ws: &mut Workspace, mut step: F) {
        debug_assert!(n <= self.weights.len());
        match self.method {
            Convolution::Direct => {
                let w = &self.weights;
                for i in 0..n {
                    let conv: f64 = (0..i).map(|j| w[i - j] * ws.x[j]).sum();
                    ws.x[i] = step(i, conv);
                }
            }
            Convolution::Fft => {
                ws.acc[..n].fill(0.0);
                self.solve(0, self.weights.len(), n, ws, &mut step);
            }
        }
    }

    fn solve<F: FnMut(usize, f64) -> f64>(
        &self,
        l: usize,
        r: usize,
        n: usize,
        ws: &mut Workspace,
        step: &mut F,
    ) {
        if l >= n {
            return;
        }
        let size = r - l;
        if size == BLOCK {
            let w = &self.weights;
            for i in l..r.min(n) {
                let local: f64 = (l..i).map(|j| w[i - j] * ws.x[j]).sum();
                ws.x[i] = step(i, ws.acc[i] + local);
            }
            return;
        }
        let mid = l + size / 2;
        self.solve(l, mid, n, ws, step);
        if mid >= n {
            return;
        }
        // Circular convolution of size `size` is exact on [mid, r): the
        // wrapped indices land below mid - l.
        let level = &self.levels[(size / BLOCK).trailing_zeros() as usize - 1];
        let half = size / 2;
        let real = &mut ws.real[..size];
        real[..half].copy_from_slice(&ws.x[l..mid]);
        real[half..].fill(0.0);
        let spectrum = &mut ws.spectrum[..half + 1];
        level
            .forward
            .process_with_scratch(real, spectrum, &mut ws.scratch)
            .expect("buffer sizes come from the plan");
        for (s, w) in spectrum.iter_mut().zip(&level.weight_spectrum) {
            *s *= w;
        }
        spectrum[0].im = 0.0;
        spectrum[half].im = 0.0;
        level
            .inverse
            .process_with_scratch(spectrum, real, &mut ws.scratch)
            .expect("buffer sizes come from the plan");
        for i in mid..r.min(n) {
            ws.acc[i] += real[i - l];
        }
        self.solve(mid, r, n, ws, step);
    }
}

/// Daily aggregates for a contiguous range of paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathBatch {
    pub config: SimConfig,
    /// Global index of the first path in this batch.
    pub first_path: u64,
    pub n_paths: usize,
    /// `Σ w_m Δ` of the weight table used.
    pub kernel_checksum: f64,
    /// Fraction of grid steps with `V < 0` before truncation.
    pub truncated_fraction: f64,
    /// Path-major `n_paths × n_days` daily returns.
    r: Vec<f64>,
    /// Path-major daily integrated variances.
    s2: Vec<f64>,
    /// Path-major spot variance at the open of each day, `V((d - 1) δ)`.
    v_open: Vec<f64>,
}

impl PathBatch {
    pub fn n_days(&self) -> usize {
        self.config.n_days
    }

    fn row<'a>(&self, data: &'a [f64], path: usize) -> &'a [f64] {
        let n = self.config.n_days;
        &data[path * n..(path + 1) * n]
    }

    /// Daily returns of the `path`-th path in this batch (day `d` at index `d - 1`).
    pub fn r(&self, path: usize) -> &[f64] {
        self.row(&self.r, path)
    }

    pub fn s2(&self, path: usize) -> &[f64] {
        self.row(&self.s2, path)
    }

    pub fn v_open(&self, path: usize) -> &[f64] {
        self.row(&self.v_open, path)
    }

    /// Writes `path_id,day,r,sigma2` rows.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path_id", "day", "r", "sigma2"])?;
        for p in 0..self.n_paths {
            let id = (self.first_path + p as u64).to_string();
            for (d, (r, s)) in self.r(p).iter().zip(self.s2(p)).enumerate() {
                w.write_record([
                    id.as_str(),
                    &(d + 1).to_string(),
                    &r.to_string(),
                    &s.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

struct PathOutput {
    r: Vec<f64>,
    s2: Vec<f64>,
    v_open: Vec<f64>,
    truncated: usize,
}

/// Simulates all `config.n_paths` paths.
pub fn simulate_paths(
    params: &ModelParams,
    curve: &ForwardVarianceCurve,
    config: &SimConfig,
) -> Result<PathBatch> {
    simulate_paths_range(params, curve, config, 0..config.n_paths as u64)
}

/// Simulates the paths with global indices in `paths`. Chunked runs
/// reproduce a single full run path for path.
pub fn simulate_paths_range(
    params: &ModelParams,
    curve: &ForwardVarianceCurve,
    config: &SimConfig,
    paths: Range<u64>,
) -> Result<PathBatch> {
    config.validate()?;
    let count = (paths.end.saturating_sub(paths.start)) as usize;
    if count == 0 {
        return Err(SimError::Config("empty path range".into()));
    }
    if config.antithetic && (!paths.start.is_multiple_of(2) || !count.is_multiple_of(2)) {
        return Err(SimError::Config(
            "antithetic ranges must cover whole pairs".into(),
        ));
    }
    config.check_batch_size(count)?;
    let n = config.n_steps();
    let dt = config.dt();
    let len = padded_len(n);
    let (weights, xi) = match config.scheme {
        Scheme::Euler => (
            kernel_weights(params, dt, len).weights,
            (0..n)
                .map(|i| curve.value(i as f64 * dt))
                .collect::<Vec<_>>(),
        ),
        Scheme::InverseGaussian => {
            let c = integrated_kernel_weights(params, dt, len);
            let xi = (0..n)
                .map(|i| curve.integral_over(i as f64 * dt, dt))
                .collect();
            (c, xi)
        }
    };
    let checksum = weights.iter().sum::<f64>()
        * if config.scheme == Scheme::Euler {
            dt
        } else {
            1.0
        };
    let b = weights[0];
    let mut shifted = weights;
    // the convolution only ever sees lags m >= 1
    shifted[0] = 0.0;
    let convolver = Convolver::new(shifted, config.convolution);

    let outputs = par::map_range(0..count, |p| {
        let path = paths.start + p as u64;
        match config.scheme {
            Scheme::Euler => simulate_euler(params, config, &convolver, &xi, path),
            Scheme::InverseGaussian => {
                simulate_inverse_gaussian(params, config, &convolver, &xi, b, path)
            }
        }
    });
    let mut batch = PathBatch {
        config: config.clone(),
        first_path: paths.start,
        n_paths: count,
        kernel_checksum: checksum,
        truncated_fraction: 0.0,
        r: Vec::with_capacity(count * config.n_days),
        s2: Vec::with_capacity(count * config.n_days),
        v_open: Vec::with_capacity(count * config.n_days),
    };
    let mut truncated = 0usize;
    for out in outputs {
        let out = out?;
        batch.r.extend_from_slice(&out.r);
        batch.s2.extend_from_slice(&out.s2);
        batch.v_open.extend_from_slice(&out.v_open);
        truncated += out.truncated;
    }
    batch.truncated_fraction = truncated as f64 / (count * n) as f64;
    Ok(batch)
}

fn simulate_euler(
    params: &ModelParams,
    config: &SimConfig,
    convolver: &Convolver,
    xi: &[f64],
    path: u64,
) -> Result<PathOutput> {
    let n = config.n_steps();
    let spd = config.steps_per_day;
    let dt = config.dt();
    let noise = BrownianPair::generate(config.seed, path, config.antithetic, n, dt, params.rho());
    let mut out = PathOutput {
        r: vec![0.0; config.n_days],
        s2: vec![0.0; config.n_days],
        v_open: vec![0.0; config.n_days],
        truncated: 0,
    };
    let mut bad = None;
    let mut ws = convolver.workspace();
    convolver.run(n, &mut ws, |i, conv| {
        let v = xi[i] + conv;
        if !v.is_finite() {
            bad.get_or_insert(i);
            return 0.0;
        }
        let day = i / spd;
        if i % spd == 0 {
            out.v_open[day] = v;
        }
        if v < 0.0 {
            out.truncated += 1;
        }
        let vp = v.max(0.0);
        let vol = vp.sqrt();
        out.r[day] += vol * noise.dw[i];
        out.s2[day] += vp * dt;
        vol * noise.db[i]
    });
    match bad {
        Some(step) => Err(SimError::NonFinite { path, step }),
        None => Ok(out),
    }
}

fn simulate_inverse_gaussian(
    params: &ModelParams,
    config: &SimConfig,
    convolver: &Convolver,
    xi: &[f64],
    b: f64,
    path: u64,
) -> Result<PathOutput> {
    let n = config.n_steps();
    let spd = config.steps_per_day;
    let dt = config.dt();
    let rho = params.rho();
    let perp = (1.0 - rho * rho).sqrt();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let (stream, sign) = if config.antithetic {
        (path / 2, if path.is_multiple_of(2) { 1.0 } else { -1.0 })
    } else {
        (path, 1.0)
    };
    rng.set_stream(stream);
    let mut out = PathOutput {
        r: vec![0.0; config.n_days],
        s2: vec![0.0; config.n_days],
        v_open: vec![0.0; config.n_days],
        truncated: 0,
    };
    let mut bad = None;
    let mut ws = convolver.workspace();
    convolver.run(n, &mut ws, |i, conv| {
        let a = xi[i] + conv;
        if !a.is_finite() {
            bad.get_or_insert(i);
            return 0.0;
        }
        let (dx, dz) = if b == 0.0 {
            // deterministic variance
            let z: f64 = rng.sample(StandardNormal);
            (a, a.sqrt() * z)
        } else if a <= 0.0 {
            // no variance and no noise, as with full truncation; absorbing at
            // ΔX = 0 instead would make ΔZ = -a/b > 0 and bias later steps
            out.truncated += 1;
            (0.0, 0.0)
        } else {
            let dx = inverse_gaussian(&mut rng, a, (a / b).powi(2));
            (dx, (dx - a) / b)
        };
        let z: f64 = rng.sample(StandardNormal);
        let day = i / spd;
        if i % spd == 0 {
            out.v_open[day] = dx / dt;
        }
        out.r[day] += rho * dz + sign * perp * dx.sqrt() * z;
        out.s2[day] += dx;
        dz
    });
    match bad {
        Some(step) => Err(SimError::NonFinite { path, step }),
        None => Ok(out),
    }
}

// Michael-Schucany-Haas with the root written without cancellation:
// μ + μ/(2l) (y - √(y² + 4ly)) = μ 4ly / (y + √(y² + 4ly))². The textbook
// form loses every digit once y/l is large, which happens whenever the mean
// is small against b².
fn inverse_gaussian<R: Rng>(rng: &mut R, mean: f64, shape: f64) -> f64 {
    let v: f64 = rng.sample(StandardNormal);
    let u: f64 = rng.random();
    let y = mean * v * v;
    if y == 0.0 {
        return mean;
    }
    let root = (y * y + 4.0 * shape * y).sqrt();
    let x = mean * 4.0 * shape * y / ((y + root) * (y + root));
    // x = 0 (underflow) is always accepted
    if u * (mean + x) <= mean {
        x
    } else {
        mean * mean / x
    }
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    /// Number of independent sampling units (paths, or antithetic pairs).
    pub n: usize,
}

impl McEstimate {
    /// `|estimate - target|` in units of the standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.estimate - target).abs() / self.std_error
    }
}

/// Streaming mean and covariance of a fixed-size vector (Welford updates).
#[derive(Debug, Clone, PartialEq)]
struct VectorStats<const K: usize> {
    n: usize,
    mean: [f64; K],
    m2: [[f64; K]; K],
}

impl<const K: usize> VectorStats<K> {
    fn new() -> Self {
        Self {
            n: 0,
            mean: [0.0; K],
            m2: [[0.0; K]; K],
        }
    }

    fn push(&mut self, x: [f64; K]) {
        self.n += 1;
        let n = self.n as f64;
        let mut d = [0.0; K];
        for i in 0..K {
            d[i] = x[i] - self.mean[i];
            self.mean[i] += d[i] / n;
        }
        for i in 0..K {
            for j in 0..K {
                self.m2[i][j] += d[i] * (x[j] - self.mean[j]);
            }
        }
    }

    /// Covariance of the sample mean.
    fn mean_cov(&self, i: usize, j: usize) -> f64 {
        let n = self.n as f64;
        self.m2[i][j] / (n - 1.0) / n
    }
}

fn check_day(batch: &PathBatch, day: usize, what: &str) -> Result<()> {
    if day == 0 || day > batch.n_days() {
        return Err(SimError::InsufficientDays(format!(
            "{what} = {day} outside the simulated days 1..={}",
            batch.n_days()
        )));
    }
    Ok(())
}

// Sampling units: single paths, or the average of each antithetic pair.
fn for_each_unit<const K: usize>(
    batch: &PathBatch,
    stats: &mut VectorStats<K>,
    per_path: impl Fn(usize) -> [f64; K],
) {
    if batch.config.antithetic {
        for p in (0..batch.n_paths).step_by(2) {
            let a = per_path(p);
            let b = per_path(p + 1);
            stats.push(std::array::from_fn(|i| 0.5 * (a[i] + b[i])));
        }
    } else {
        for p in 0..batch.n_paths {
            stats.push(per_path(p));
        }
    }
}

/// Streaming Zumbach estimator over several batches of the same run.
///
/// Estimates `E[r_t² σ²_{t+k}] - E[r²_{t+k} σ²_t]` as the mean of the
/// per-path differences (days are 1-based).
#[derive(Debug, Clone)]
pub struct ZumbachMc {
    t_day: usize,
    lags: Vec<usize>,
    stats: Vec<VectorStats<1>>,
}

impl ZumbachMc {
    pub fn new(t_day: usize, lags: &[usize]) -> Self {
        Self {
            t_day,
            lags: lags.to_vec(),
            stats: vec![VectorStats::new(); lags.len()],
        }
    }

    pub fn add(&mut self, batch: &PathBatch) -> Result<()> {
        check_day(batch, self.t_day, "t_day")?;
        for (&k, stats) in self.lags.iter().zip(&mut self.stats) {
            if k == 0 {
                return Err(SimError::InsufficientDays("lag must be >= 1".into()));
            }
            check_day(batch, self.t_day + k, "t_day + k")?;
            let (t, u) = (self.t_day - 1, self.t_day + k - 1);
            for_each_unit(batch, stats, |p| {
                let (r, s) = (batch.r(p), batch.s2(p));
                [r[t] * r[t] * s[u] - r[u] * r[u] * s[t]]
            });
        }
        Ok(())
    }

    pub fn estimates(&self) -> Vec<McEstimate> {
        self.stats
            .iter()
            .map(|s| McEstimate {
                estimate: s.mean[0],
                std_error: s.mean_cov(0, 0).sqrt(),
                n: s.n,
            })
            .collect()
    }
}

/// Zumbach estimate at day `t_day` and lag `k` from one batch.
pub fn estimate_zumbach_mc(batch: &PathBatch, t_day: usize, k: usize) -> Result<McEstimate> {
    let mut acc = ZumbachMc::new(t_day, &[k]);
    acc.add(batch)?;
    Ok(acc.estimates()[0])
}

/// Moment estimates on one day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimates {
    pub mean_sigma2: McEstimate,
    pub var_sigma2: McEstimate,
    pub fourth_moment_r: McEstimate,
}

/// Streaming moment estimator.
#[derive(Debug, Clone)]
pub struct MomentsMc {
    t_day: usize,
    // per unit: (σ², σ⁴, r⁴)
    stats: VectorStats<3>,
}

impl MomentsMc {
    pub fn new(t_day: usize) -> Self {
        Self {
            t_day,
            stats: VectorStats::new(),
        }
    }

    pub fn add(&mut self, batch: &PathBatch) -> Result<()> {
        check_day(batch, self.t_day, "t_day")?;
        let d = self.t_day - 1;
        for_each_unit(batch, &mut self.stats, |p| {
            let s = batch.s2(p)[d];
            let r = batch.r(p)[d];
            [s, s * s, r.powi(4)]
        });
        Ok(())
    }

    pub fn estimates(&self) -> MomentEstimates {
        let s = &self.stats;
        let n = s.n;
        let mean = s.mean[0];
        // Var = E[σ⁴] - E[σ²]²; delta method with gradient (-2 E[σ²], 1)
        let g = [-2.0 * mean, 1.0];
        let mut var_se2 = 0.0;
        for (i, gi) in g.iter().enumerate() {
            for (j, gj) in g.iter().enumerate() {
                var_se2 += gi * gj * s.mean_cov(i, j);
            }
        }
        MomentEstimates {
            mean_sigma2: McEstimate {
                estimate: mean,
                std_error: s.mean_cov(0, 0).sqrt(),
                n,
            },
            var_sigma2: McEstimate {
                estimate: s.mean[1] - mean * mean,
                std_error: var_se2.max(0.0).sqrt(),
                n,
            },
            fourth_moment_r: McEstimate {
                estimate: s.mean[2],
                std_error: s.mean_cov(2, 2).sqrt(),
                n,
            },
        }
    }
}

/// `Var[σ²]`, `E[r⁴]` (and `E[σ²]`) at day `t_day` from one batch.
pub fn estimate_moments_mc(batch: &PathBatch, t_day: usize) -> Result<MomentEstimates> {
    let mut acc = MomentsMc::new(t_day);
    acc.add(batch)?;
    Ok(acc.estimates())
}

/// Mean of the spot variance at the open of `day` (time `(day - 1) δ`).
pub fn estimate_mean_variance(batch: &PathBatch, day: usize) -> Result<McEstimate> {
    check_day(batch, day, "day")?;
    let mut stats = VectorStats::<1>::new();
    for_each_unit(batch, &mut stats, |p| [batch.v_open(p)[day - 1]]);
    Ok(McEstimate {
        estimate: stats.mean[0],
        std_error: stats.mean_cov(0, 0).sqrt(),
        n: stats.n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        ModelParams::reference()
    }

    #[test]
    fn inverse_gaussian_moments() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        // shape/mean from 1e-8 (the regime that breaks the textbook root) to 1
        for (mean, shape) in [(1e-7, 1e-15), (5e-6, 1e-5), (1.0, 1.0)] {
            let n = 400_000;
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let x = inverse_gaussian(&mut rng, mean, shape);
                assert!(x >= 0.0);
                s += x;
                s2 += x * x;
            }
            let m = s / n as f64;
            let var = s2 / n as f64 - m * m;
            let want_var = mean.powi(3) / shape;
            assert!(
                (m - mean).abs() < 4.0 * (want_var / n as f64).sqrt(),
                "{mean} {shape}: {m}"
            );
            if shape / mean >= 1.0 {
                assert!((var / want_var - 1.0).abs() < 0.05, "{var} {want_var}");
            }
        }
    }

    #[test]
    fn fft_and_direct_convolutions_agree() {
        let p = params();
        for n in [1, 63, 64, 65, 300, 1000] {
            let w = kernel_weights(&p, 1e-4, padded_len(n)).weights;
            let noise: Vec<f64> = (0..n)
                .map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0)
                .collect();
            let mut results = Vec::new();
            for method in [Convolution::Direct, Convolution::Fft] {
                let c = Convolver::new(w.clone(), method);
                let mut ws = c.workspace();
                let mut v = vec![0.0; n];
                c.run(n, &mut ws, |i, conv| {
                    v[i] = 0.02 + conv;
                    // feedback through the state, as in the simulator
                    v[i].abs().sqrt() * noise[i] * 1e-2
                });
                results.push(v);
            }
            for (a, b) in results[0].iter().zip(&results[1]) {
                assert!(
                    (a - b).abs() <= 1e-12 * a.abs().max(0.02),
                    "n={n}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn padded_lengths() {
        assert_eq!(padded_len(1), 64);
        assert_eq!(padded_len(64), 64);
        assert_eq!(padded_len(65), 128);
        assert_eq!(padded_len(15120), 16384);
    }

    #[test]
    fn vector_stats_matches_two_pass() {
        let xs = [1.0, 4.0, 2.5, -1.0, 3.0];
        let mut s = VectorStats::<2>::new();
        for &x in &xs {
            s.push([x, x * x]);
        }
        let m = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0;
        assert!((s.mean[0] - m).abs() < 1e-15);
        assert!((s.mean_cov(0, 0) * 5.0 - var).abs() < 1e-13);
    }
}
