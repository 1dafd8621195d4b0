//! Exact synthesis of fractional Gaussian noise and fractional Brownian
//! motion on a uniform grid.
//!
//! Noise is produced by circulant embedding of the fGN autocovariance
//! (Davies–Harte); for fGN the embedding is nonnegative definite for every
//! `H` in (0, 1), so the samples have exactly the target covariance. A dense
//! Cholesky factorisation is used for short series and as a fallback.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::stream_rng;

/// Largest series for which the Cholesky route may be selected.
pub const MAX_CHOLESKY_STEPS: usize = 2048;

/// Hurst index, strictly inside (0, 1).
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Hurst(f64);

impl Hurst {
    pub fn new(h: f64) -> Result<Self> {
        if h.is_finite() && h > 0.0 && h < 1.0 {
            Ok(Hurst(h))
        } else {
            Err(Error::Parameter(format!("Hurst index must lie in (0, 1), got {h}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Hurst {
    type Error = Error;
    fn try_from(h: f64) -> Result<Self> {
        Hurst::new(h)
    }
}

impl From<Hurst> for f64 {
    fn from(h: Hurst) -> f64 {
        h.0
    }
}

impl fmt::Display for Hurst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn check_step(step: f64) -> Result<()> {
    if step.is_finite() && step > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("grid step must be positive and finite, got {step}")))
    }
}

fn autocov_unchecked(h: f64, lag: u64, step: f64) -> f64 {
    if lag > 0 && h == 0.5 {
        return 0.0;
    }
    let two_h = 2.0 * h;
    let k = lag as f64;
    let km1 = (k - 1.0).abs();
    0.5 * step.powf(two_h) * ((k + 1.0).powf(two_h) - 2.0 * k.powf(two_h) + km1.powf(two_h))
}

/// Autocovariance of fGN increments over a grid of spacing `step`:
/// `γ(k) = (δ^{2H}/2)(|k+1|^{2H} − 2|k|^{2H} + |k−1|^{2H})`.
pub fn fgn_autocovariance(hurst: Hurst, lag: u64, step: f64) -> Result<f64> {
    check_step(step)?;
    Ok(autocov_unchecked(hurst.value(), lag, step))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    CirculantEmbedding,
    Cholesky,
}

#[derive(Clone, Copy, Debug)]
pub struct SynthesisConfig {
    /// Series with fewer steps than this use the Cholesky route.
    pub cholesky_below: usize,
    /// Switch to Cholesky when the embedding has a negative eigenvalue
    /// beyond tolerance (only possible up to [`MAX_CHOLESKY_STEPS`]).
    pub allow_fallback: bool,
    /// Eigenvalue clamp tolerance, relative to the largest eigenvalue.
    pub eigen_tolerance: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig { cholesky_below: 32, allow_fallback: true, eigen_tolerance: 1e-12 }
    }
}

/// One draw of d-dimensional fGN: `steps` rows of `dim` independent
/// coordinates, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FgnSample {
    increments: Vec<f64>,
    steps: usize,
    dim: usize,
    step: f64,
    hurst: Hurst,
    seed: u64,
}

impl FgnSample {
    /// Wrap externally produced increments (row-major, `steps × dim`).
    pub fn from_increments(increments: Vec<f64>, dim: usize, step: f64, hurst: Hurst, seed: u64) -> Result<Self> {
        check_step(step)?;
        if dim == 0 || !increments.len().is_multiple_of(dim) {
            return Err(Error::Input(format!("{} values cannot form rows of width {dim}", increments.len())));
        }
        let steps = increments.len() / dim;
        Ok(FgnSample { increments, steps, dim, step, hurst, seed })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn step(&self) -> f64 {
        self.step
    }
    pub fn hurst(&self) -> Hurst {
        self.hurst
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn increments(&self) -> &[f64] {
        &self.increments
    }
    pub fn row(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.increments.iter().skip(j).step_by(self.dim).copied().collect()
    }
}

/// fBm path on `{0, δ, …, steps·δ}`, row-major `(steps + 1) × dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct FbmPath {
    pub values: Vec<f64>,
    pub dim: usize,
    pub step: f64,
}

impl FbmPath {
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.step
    }
}

/// Partial sums of the increments, starting from the origin.
pub fn cumulate_to_fbm(noise: &FgnSample) -> FbmPath {
    let dim = noise.dim;
    let mut values = Vec::with_capacity((noise.steps + 1) * dim);
    values.extend(std::iter::repeat_n(0.0, dim));
    let mut acc = vec![0.0; dim];
    for k in 0..noise.steps {
        for (a, x) in acc.iter_mut().zip(noise.row(k)) {
            *a += x;
        }
        values.extend_from_slice(&acc);
    }
    FbmPath { values, dim, step: noise.step }
}

enum Engine {
    Circulant { scale: Vec<f64>, fft: Arc<dyn Fft<f64>> },
    Cholesky { lower: DMatrix<f64> },
}

/// Reusable sampler for a fixed `(H, steps, δ)`; the embedding spectrum or
/// Cholesky factor is computed once and shared by all draws.
pub struct FgnGenerator {
    hurst: Hurst,
    steps: usize,
    step: f64,
    engine: Engine,
}

impl fmt::Debug for FgnGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FgnGenerator")
            .field("hurst", &self.hurst)
            .field("steps", &self.steps)
            .field("step", &self.step)
            .field("method", &self.method())
            .finish()
    }
}

/// Smallest 5-smooth integer ≥ `n`; keeps FFT sizes fast without padding to
/// a power of two.
fn smooth_size(n: usize) -> usize {
    let mut best = n.next_power_of_two();
    let mut p5 = 1usize;
    while p5 < best {
        let mut p35 = p5;
        while p35 < best {
            let mut v = p35;
            while v < n {
                v *= 2;
            }
            best = best.min(v);
            p35 *= 3;
        }
        p5 *= 5;
    }
    best
}

impl FgnGenerator {
    pub fn new(hurst: Hurst, steps: usize, step: f64, config: SynthesisConfig) -> Result<Self> {
        check_step(step)?;
        if steps == 0 {
            return Err(Error::Parameter("fGN needs at least one step".into()));
        }
        if config.cholesky_below > MAX_CHOLESKY_STEPS + 1 {
            return Err(Error::Parameter(format!(
                "cholesky threshold {} exceeds the supported maximum {MAX_CHOLESKY_STEPS}",
                config.cholesky_below
            )));
        }
        if steps < config.cholesky_below {
            return Self::with_method(hurst, steps, step, Method::Cholesky);
        }
        match Self::circulant(hurst, steps, step, config.eigen_tolerance) {
            Ok(gen) => Ok(gen),
            Err(e) if config.allow_fallback && steps <= MAX_CHOLESKY_STEPS => {
                let _ = e;
                Self::with_method(hurst, steps, step, Method::Cholesky)
            }
            Err(e) => Err(e),
        }
    }

    pub fn with_method(hurst: Hurst, steps: usize, step: f64, method: Method) -> Result<Self> {
        check_step(step)?;
        if steps == 0 {
            return Err(Error::Parameter("fGN needs at least one step".into()));
        }
        match method {
            Method::CirculantEmbedding => Self::circulant(hurst, steps, step, SynthesisConfig::default().eigen_tolerance),
            Method::Cholesky => {
                if steps > MAX_CHOLESKY_STEPS {
                    return Err(Error::Parameter(format!("Cholesky synthesis limited to {MAX_CHOLESKY_STEPS} steps, got {steps}")));
                }
                let h = hurst.value();
                let cov = DMatrix::from_fn(steps, steps, |i, j| autocov_unchecked(h, i.abs_diff(j) as u64, step));
                let chol = cov.cholesky().ok_or_else(|| Error::Synthesis("fGN covariance is not positive definite".into()))?;
                Ok(FgnGenerator { hurst, steps, step, engine: Engine::Cholesky { lower: chol.l() } })
            }
        }
    }

    fn circulant(hurst: Hurst, steps: usize, step: f64, tolerance: f64) -> Result<Self> {
        let h = hurst.value();
        let m = smooth_size(steps.max(2));
        let size = 2 * m;
        let mut buf: Vec<Complex64> = (0..size)
            .map(|j| {
                let lag = if j <= m { j } else { size - j };
                Complex64::new(autocov_unchecked(h, lag as u64, step), 0.0)
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(size);
        fft.process(&mut buf);
        let max = buf.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
        let min = buf.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
        if min < -tolerance * max {
            return Err(Error::Synthesis(format!("circulant embedding has eigenvalue {min:e} below -{tolerance:e} x {max:e}")));
        }
        let n = size as f64;
        let scale = buf.iter().map(|c| (c.re.max(0.0) / n).sqrt()).collect();
        Ok(FgnGenerator { hurst, steps, step, engine: Engine::Circulant { scale, fft } })
    }

    pub fn method(&self) -> Method {
        match self.engine {
            Engine::Circulant { .. } => Method::CirculantEmbedding,
            Engine::Cholesky { .. } => Method::Cholesky,
        }
    }

    pub fn hurst(&self) -> Hurst {
        self.hurst
    }
    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn step(&self) -> f64 {
        self.step
    }

    /// Two independent noise columns drawn from `stream` of `seed`.
    fn pair(&self, seed: u64, stream: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = stream_rng(seed, stream);
        match &self.engine {
            Engine::Circulant { scale, fft } => {
                let mut buf: Vec<Complex64> = scale
                    .iter()
                    .map(|&s| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex64::new(s * re, s * im)
                    })
                    .collect();
                fft.process(&mut buf);
                let a = buf[..self.steps].iter().map(|c| c.re).collect();
                let b = buf[..self.steps].iter().map(|c| c.im).collect();
                (a, b)
            }
            Engine::Cholesky { lower } => {
                let mut draw = || {
                    let z = nalgebra::DVector::from_fn(self.steps, |_, _| rng.sample::<f64, _>(StandardNormal));
                    (lower * z).iter().copied().collect::<Vec<f64>>()
                };
                let a = draw();
                let b = draw();
                (a, b)
            }
        }
    }

    /// Draw `dim` independent fGN columns. Columns `2j` and `2j + 1` come
    /// from ChaCha stream `j` of `seed`, so column `j` does not depend on
    /// `dim`.
    pub fn sample(&self, dim: usize, seed: u64) -> FgnSample {
        assert!(dim >= 1, "dimension must be positive");
        let mut increments = vec![0.0; self.steps * dim];
        for pair in 0..dim.div_ceil(2) {
            let (a, b) = self.pair(seed, pair as u64);
            let ja = 2 * pair;
            for (k, v) in a.into_iter().enumerate() {
                increments[k * dim + ja] = v;
            }
            if ja + 1 < dim {
                for (k, v) in b.into_iter().enumerate() {
                    increments[k * dim + ja + 1] = v;
                }
            }
        }
        FgnSample { increments, steps: self.steps, dim, step: self.step, hurst: self.hurst, seed }
    }
}

/// Convenience wrapper: build a generator with default settings and draw
/// one sample.
pub fn generate_fgn(hurst: Hurst, steps: usize, step: f64, dim: usize, seed: u64) -> Result<FgnSample> {
    if dim == 0 {
        return Err(Error::Parameter("dimension must be positive".into()));
    }
    Ok(FgnGenerator::new(hurst, steps, step, SynthesisConfig::default())?.sample(dim, seed))
}
