//! Additive fractional SDEs `dX = b(X) dt + σ dB^H`: model definitions,
//! probabilistic checks of the stability and Lipschitz assumptions, Euler
//! integration driven by exact fBm, and approximate stationary sampling by
//! burn-in.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::{FgnGenerator, Hurst, SynthesisConfig};
use crate::seed::stream_rng;

/// Drift field `b: Rᵈ → Rᵈ`.
pub trait Drift: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);
}

/// Drifts with documented stability and Lipschitz constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ZooDrift {
    /// `b(x) = −θx`; α = L = θ.
    FractionalOu { theta: f64, dim: usize },
    /// `b(x) = −Ax`, `A` symmetric positive definite; α = λ_min, L = λ_max.
    Linear { matrix: Vec<Vec<f64>> },
    /// `b(x)_i = −θx_i − c·tanh(x_i)`; α = θ, L = θ + c.
    TanhConvex { theta: f64, c: f64, dim: usize },
}

impl ZooDrift {
    pub fn name(&self) -> &'static str {
        match self {
            ZooDrift::FractionalOu { .. } => "fou",
            ZooDrift::Linear { .. } => "linear",
            ZooDrift::TanhConvex { .. } => "tanh",
        }
    }

    fn matrix(&self) -> Option<DMatrix<f64>> {
        match self {
            ZooDrift::Linear { matrix } => {
                let d = matrix.len();
                Some(DMatrix::from_fn(d, d, |i, j| matrix[i][j]))
            }
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ZooDrift::FractionalOu { theta, dim } | ZooDrift::TanhConvex { theta, dim, .. } => {
                if *dim == 0 {
                    return Err(Error::Model("dimension must be positive".into()));
                }
                if !(theta.is_finite() && *theta > 0.0) {
                    return Err(Error::Model(format!("theta must be positive, got {theta}")));
                }
                if let ZooDrift::TanhConvex { c, .. } = self {
                    if !(c.is_finite() && *c > 0.0) {
                        return Err(Error::Model(format!("c must be positive, got {c}")));
                    }
                }
                Ok(())
            }
            ZooDrift::Linear { matrix } => {
                let d = matrix.len();
                if d == 0 || matrix.iter().any(|row| row.len() != d) {
                    return Err(Error::Model("drift matrix must be square and nonempty".into()));
                }
                let a = self.matrix().expect("linear drift has a matrix");
                if (&a - a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
                    return Err(Error::Model("drift matrix must be symmetric".into()));
                }
                let eig = SymmetricEigen::new(a).eigenvalues;
                if eig.min() <= 0.0 {
                    return Err(Error::Model("drift matrix must be positive definite".into()));
                }
                Ok(())
            }
        }
    }

    /// Eigenvalues of `A` for the linear entry.
    pub fn linear_eigen(&self) -> Option<SymmetricEigen<f64, nalgebra::Dyn>> {
        self.matrix().map(SymmetricEigen::new)
    }

    /// Stability constant α.
    pub fn contraction(&self) -> f64 {
        match self {
            ZooDrift::FractionalOu { theta, .. } | ZooDrift::TanhConvex { theta, .. } => *theta,
            ZooDrift::Linear { .. } => self.linear_eigen().unwrap().eigenvalues.min(),
        }
    }

    /// Lipschitz constant L.
    pub fn lipschitz(&self) -> f64 {
        match self {
            ZooDrift::FractionalOu { theta, .. } => *theta,
            ZooDrift::TanhConvex { theta, c, .. } => theta + c,
            ZooDrift::Linear { .. } => self.linear_eigen().unwrap().eigenvalues.max(),
        }
    }
}

impl Drift for ZooDrift {
    fn dim(&self) -> usize {
        match self {
            ZooDrift::FractionalOu { dim, .. } | ZooDrift::TanhConvex { dim, .. } => *dim,
            ZooDrift::Linear { matrix } => matrix.len(),
        }
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            ZooDrift::FractionalOu { theta, .. } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -theta * xi;
                }
            }
            ZooDrift::TanhConvex { theta, c, .. } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -theta * xi - c * xi.tanh();
                }
            }
            ZooDrift::Linear { matrix } => {
                for (o, row) in out.iter_mut().zip(matrix) {
                    *o = -row.iter().zip(x).map(|(a, xi)| a * xi).sum::<f64>();
                }
            }
        }
    }
}

type DriftFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Drift given by a closure.
pub struct FnDrift {
    dim: usize,
    f: DriftFn,
}

impl FnDrift {
    pub fn new(dim: usize, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        FnDrift { dim, f: Box::new(f) }
    }
}

impl fmt::Debug for FnDrift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnDrift(dim = {})", self.dim)
    }
}

impl Drift for FnDrift {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    drift: Arc<dyn Drift>,
    zoo: Option<ZooDrift>,
    sigma: DMatrix<f64>,
    hurst: Hurst,
    declared_alpha: f64,
    declared_lipschitz: f64,
}

impl ModelSpec {
    pub fn new(drift: Arc<dyn Drift>, sigma: DMatrix<f64>, hurst: Hurst, alpha: f64, lipschitz: f64) -> Result<Self> {
        let d = drift.dim();
        if d == 0 {
            return Err(Error::Model("dimension must be positive".into()));
        }
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::Model(format!("sigma must be {d}x{d}, got {}x{}", sigma.nrows(), sigma.ncols())));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("sigma has non-finite entries".into()));
        }
        let sv = sigma.clone().singular_values();
        if sv.min() <= 1e-12 * sv.max().max(f64::MIN_POSITIVE) {
            return Err(Error::Model("sigma is not invertible".into()));
        }
        if !(alpha > 0.0 && lipschitz > 0.0 && alpha.is_finite() && lipschitz.is_finite()) {
            return Err(Error::Model("declared stability and Lipschitz constants must be positive".into()));
        }
        if alpha > lipschitz {
            return Err(Error::Model(format!("stability constant {alpha} exceeds Lipschitz constant {lipschitz}")));
        }
        let mut b0 = vec![0.0; d];
        drift.eval(&vec![0.0; d], &mut b0);
        if b0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("drift is not finite at the origin".into()));
        }
        Ok(ModelSpec { drift, zoo: None, sigma, hurst, declared_alpha: alpha, declared_lipschitz: lipschitz })
    }

    pub fn from_zoo(zoo: ZooDrift, sigma: DMatrix<f64>, hurst: Hurst) -> Result<Self> {
        zoo.validate()?;
        let (alpha, lip) = (zoo.contraction(), zoo.lipschitz());
        let mut model = ModelSpec::new(Arc::new(zoo.clone()), sigma, hurst, alpha, lip)?;
        model.zoo = Some(zoo);
        Ok(model)
    }

    /// One-dimensional fractional Ornstein–Uhlenbeck model.
    pub fn fractional_ou(theta: f64, sigma: f64, hurst: Hurst) -> Result<Self> {
        ModelSpec::from_zoo(ZooDrift::FractionalOu { theta, dim: 1 }, DMatrix::from_element(1, 1, sigma), hurst)
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }
    pub fn drift(&self) -> &dyn Drift {
        self.drift.as_ref()
    }
    pub fn zoo(&self) -> Option<&ZooDrift> {
        self.zoo.as_ref()
    }
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }
    pub fn hurst(&self) -> Hurst {
        self.hurst
    }
    pub fn declared_alpha(&self) -> f64 {
        self.declared_alpha
    }
    pub fn declared_lipschitz(&self) -> f64 {
        self.declared_lipschitz
    }

    /// `|b(0)|`.
    pub fn drift_at_origin(&self) -> f64 {
        let d = self.dim();
        let mut b0 = vec![0.0; d];
        self.drift.eval(&vec![0.0; d], &mut b0);
        b0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    n: usize,
    delta_n: f64,
}

impl SamplingGrid {
    pub fn new(n: usize, delta_n: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("sample size n must be positive".into()));
        }
        if !(delta_n.is_finite() && delta_n > 0.0) {
            return Err(Error::Parameter(format!("sampling step must be positive, got {delta_n}")));
        }
        if (n as f64) * delta_n < 1.0 - 1e-12 {
            return Err(Error::Parameter(format!("observation horizon n*delta_n = {} is below 1", n as f64 * delta_n)));
        }
        Ok(SamplingGrid { n, delta_n })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn delta_n(&self) -> f64 {
        self.delta_n
    }
    /// `nΔ_n`.
    pub fn horizon(&self) -> f64 {
        self.n as f64 * self.delta_n
    }
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.delta_n
    }
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (1..=self.n).map(|k| self.time(k))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    values: Vec<f64>,
    dim: usize,
    grid: SamplingGrid,
    burn_in: f64,
    sim_step: f64,
}

impl ObservationSet {
    /// Wrap externally supplied observations (row-major `n × dim`).
    pub fn from_values(values: Vec<f64>, dim: usize, grid: SamplingGrid, burn_in: f64, sim_step: f64) -> Result<Self> {
        if dim == 0 || values.len() != grid.n() * dim {
            return Err(Error::Input(format!("expected {} x {dim} values, got {}", grid.n(), values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("observations must be finite".into()));
        }
        if !(sim_step > 0.0 && sim_step <= grid.delta_n() * (1.0 + 1e-12)) {
            return Err(Error::Input(format!("simulation step {sim_step} must lie in (0, delta_n]")));
        }
        let ratio = grid.delta_n() / sim_step;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio {
            return Err(Error::Input("simulation step must divide delta_n".into()));
        }
        Ok(ObservationSet { values, dim, grid, burn_in: burn_in.max(0.0), sim_step })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.grid.n()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn grid(&self) -> SamplingGrid {
        self.grid
    }
    pub fn burn_in(&self) -> f64 {
        self.burn_in
    }
    pub fn sim_step(&self) -> f64 {
        self.sim_step
    }
    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().skip(j).step_by(self.dim).copied().collect()
    }
}

/// Result of a probabilistic assumption check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub estimate: f64,
    pub declared: f64,
    pub violated: bool,
}

fn uniform_in_ball(rng: &mut impl Rng, d: usize, radius: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    v.iter_mut().for_each(|x| *x *= r / norm);
    v
}

/// Apply `ratio` to random pairs in the ball; returns all finite ratios.
fn probe(
    model: &ModelSpec,
    pairs: usize,
    radius: f64,
    seed: u64,
    ratio: impl Fn(&[f64], &[f64], &[f64], &[f64]) -> f64,
) -> Result<Vec<f64>> {
    if pairs < 100 {
        return Err(Error::Parameter(format!("at least 100 probe pairs required, got {pairs}")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Parameter(format!("probe radius must be positive, got {radius}")));
    }
    let d = model.dim();
    let mut rng = stream_rng(seed, 0);
    let (mut bx, mut by) = (vec![0.0; d], vec![0.0; d]);
    let mut out = Vec::with_capacity(pairs);
    while out.len() < pairs {
        let x = uniform_in_ball(&mut rng, d, radius);
        let y = uniform_in_ball(&mut rng, d, radius);
        if x == y {
            continue;
        }
        model.drift.eval(&x, &mut bx);
        model.drift.eval(&y, &mut by);
        if bx.iter().chain(&by).any(|v| !v.is_finite()) {
            return Err(Error::Model(format!("drift evaluation failed near {x:?}")));
        }
        out.push(ratio(&x, &y, &bx, &by));
    }
    Ok(out)
}

fn diff_norm_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Estimate the stability constant `α̂ = min −⟨b(x) − b(y), x − y⟩ / |x − y|²`
/// over random pairs. Certifies violations only.
pub fn check_contraction(model: &ModelSpec, probe_pairs: usize, radius: f64, seed: u64) -> Result<AssumptionCheck> {
    let ratios = probe(model, probe_pairs, radius, seed, |x, y, bx, by| {
        let inner: f64 = bx.iter().zip(by).zip(x.iter().zip(y)).map(|((a, b), (u, v))| (a - b) * (u - v)).sum();
        -inner / diff_norm_sq(x, y)
    })?;
    let estimate = ratios.into_iter().fold(f64::INFINITY, f64::min);
    let declared = model.declared_alpha;
    let tol = 1e-9 * declared.max(1.0);
    Ok(AssumptionCheck { estimate, declared, violated: estimate <= 0.0 || estimate < declared - tol })
}

/// Estimate `L̂ = max |b(x) − b(y)| / |x − y|` over random pairs.
pub fn check_lipschitz(model: &ModelSpec, probe_pairs: usize, radius: f64, seed: u64) -> Result<AssumptionCheck> {
    let ratios = probe(model, probe_pairs, radius, seed, |x, y, bx, by| (diff_norm_sq(bx, by) / diff_norm_sq(x, y)).sqrt())?;
    let estimate = ratios.into_iter().fold(0.0, f64::max);
    let declared = model.declared_lipschitz;
    let tol = 1e-9 * declared.max(1.0);
    Ok(AssumptionCheck { estimate, declared, violated: estimate > declared + tol })
}

/// Sampled trajectory on `{0, δ, …, steps·δ}`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub values: Vec<f64>,
    pub dim: usize,
    pub step: f64,
}

impl Path {
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }
}

/// Euler stepper: `x ← x + b(x)δ + σ ΔB`.
struct Euler<'a> {
    model: &'a ModelSpec,
    step: f64,
    drift: Vec<f64>,
    sigma_row_major: Vec<f64>,
}

impl<'a> Euler<'a> {
    fn new(model: &'a ModelSpec, step: f64) -> Self {
        let d = model.dim();
        let sigma_row_major = (0..d * d).map(|k| model.sigma[(k / d, k % d)]).collect();
        Euler { model, step, drift: vec![0.0; d], sigma_row_major }
    }

    #[inline]
    fn advance(&mut self, x: &mut [f64], noise: &[f64]) {
        let d = x.len();
        self.model.drift.eval(x, &mut self.drift);
        if d == 1 {
            x[0] += self.drift[0] * self.step + self.sigma_row_major[0] * noise[0];
            return;
        }
        for ((xi, row), b) in x.iter_mut().zip(self.sigma_row_major.chunks_exact(d)).zip(&self.drift) {
            let shock: f64 = row.iter().zip(noise).map(|(s, z)| s * z).sum();
            *xi += b * self.step + shock;
        }
    }
}

fn check_state(x: &[f64], step_index: usize, step: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Integration { step: step_index, time: step_index as f64 * step })
    }
}

/// Integrate from `x0` over `[0, horizon]` with Euler step `sim_step`.
pub fn simulate_path(model: &ModelSpec, x0: &[f64], horizon: f64, sim_step: f64, seed: u64) -> Result<Path> {
    let d = model.dim();
    if x0.len() != d {
        return Err(Error::Input(format!("initial state has dimension {}, model has {d}", x0.len())));
    }
    if !(sim_step > 0.0 && horizon > 0.0 && sim_step.is_finite() && horizon.is_finite()) {
        return Err(Error::Parameter("horizon and simulation step must be positive".into()));
    }
    let ratio = horizon / sim_step;
    let steps = ratio.round() as usize;
    if steps == 0 || (ratio - steps as f64).abs() > 1e-6 * ratio.max(1.0) {
        return Err(Error::Parameter(format!("horizon {horizon} is not a multiple of the step {sim_step}")));
    }
    let noise = FgnGenerator::new(model.hurst, steps, sim_step, SynthesisConfig::default())?.sample(d, seed);
    let mut euler = Euler::new(model, sim_step);
    let mut x = x0.to_vec();
    let mut values = Vec::with_capacity((steps + 1) * d);
    values.extend_from_slice(&x);
    for k in 0..steps {
        euler.advance(&mut x, noise.row(k));
        check_state(&x, k + 1, sim_step)?;
        values.extend_from_slice(&x);
    }
    Ok(Path { values, dim: d, step: sim_step })
}

#[derive(Clone, Debug, Default)]
pub struct StationaryOptions {
    /// Discarded initial segment; default `max(20, 10/α)`.
    pub burn_in: Option<f64>,
    /// Euler step; default `Δ_n / max(50, ⌈Δ_n / 0.01⌉)`.
    pub sim_step: Option<f64>,
    /// Starting point; default the origin.
    pub x0: Option<Vec<f64>>,
    pub synthesis: SynthesisConfig,
}

pub fn default_burn_in(model: &ModelSpec) -> f64 {
    20f64.max(10.0 / model.declared_alpha)
}

/// Euler steps per observation interval for the default step rule.
pub fn default_stride(delta_n: f64) -> usize {
    50usize.max((delta_n / 0.01 - 1e-9).ceil() as usize)
}

/// Draws observation vectors `(X_{t_1}, …, X_{t_n})` after a burn-in.
/// Holds the fGN synthesis state so repeated draws reuse it.
#[derive(Debug)]
pub struct StationarySampler {
    model: ModelSpec,
    grid: SamplingGrid,
    burn_in: f64,
    sim_step: f64,
    stride: usize,
    burn_steps: usize,
    x0: Vec<f64>,
    generator: FgnGenerator,
}

impl StationarySampler {
    pub fn new(model: &ModelSpec, grid: SamplingGrid, options: &StationaryOptions) -> Result<Self> {
        let d = model.dim();
        let burn_in = options.burn_in.unwrap_or_else(|| default_burn_in(model));
        if !(burn_in >= 0.0 && burn_in.is_finite()) {
            return Err(Error::Parameter(format!("burn-in must be nonnegative, got {burn_in}")));
        }
        let (stride, sim_step) = match options.sim_step {
            None => {
                let stride = default_stride(grid.delta_n());
                (stride, grid.delta_n() / stride as f64)
            }
            Some(step) => {
                if !(step > 0.0 && step <= grid.delta_n() * (1.0 + 1e-12)) {
                    return Err(Error::Parameter(format!("simulation step {step} must lie in (0, delta_n]")));
                }
                let ratio = grid.delta_n() / step;
                let stride = ratio.round().max(1.0) as usize;
                if (ratio - stride as f64).abs() > 1e-6 * ratio {
                    return Err(Error::Parameter(format!("simulation step {step} does not divide delta_n")));
                }
                (stride, step)
            }
        };
        let burn_steps = (burn_in / sim_step - 1e-9).ceil().max(0.0) as usize;
        let x0 = options.x0.clone().unwrap_or_else(|| vec![0.0; d]);
        if x0.len() != d {
            return Err(Error::Input(format!("initial state has dimension {}, model has {d}", x0.len())));
        }
        let total = burn_steps + grid.n() * stride;
        let generator = FgnGenerator::new(model.hurst, total, sim_step, options.synthesis)?;
        Ok(StationarySampler { model: model.clone(), grid, burn_in, sim_step, stride, burn_steps, x0, generator })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }
    pub fn grid(&self) -> SamplingGrid {
        self.grid
    }
    pub fn burn_in(&self) -> f64 {
        self.burn_in
    }
    pub fn sim_step(&self) -> f64 {
        self.sim_step
    }

    pub fn sample(&self, seed: u64) -> Result<ObservationSet> {
        let d = self.model.dim();
        let noise = self.generator.sample(d, seed);
        let mut euler = Euler::new(&self.model, self.sim_step);
        let mut x = self.x0.clone();
        for k in 0..self.burn_steps {
            euler.advance(&mut x, noise.row(k));
        }
        check_state(&x, self.burn_steps, self.sim_step)?;
        let mut values = Vec::with_capacity(self.grid.n() * d);
        let mut k = self.burn_steps;
        for _ in 0..self.grid.n() {
            for _ in 0..self.stride {
                euler.advance(&mut x, noise.row(k));
                k += 1;
            }
            check_state(&x, k, self.sim_step)?;
            values.extend_from_slice(&x);
        }
        Ok(ObservationSet { values, dim: d, grid: self.grid, burn_in: self.burn_in, sim_step: self.sim_step })
    }
}

/// One-shot stationary sample.
pub fn sample_stationary(model: &ModelSpec, grid: SamplingGrid, options: &StationaryOptions, seed: u64) -> Result<ObservationSet> {
    StationarySampler::new(model, grid, options)?.sample(seed)
}
