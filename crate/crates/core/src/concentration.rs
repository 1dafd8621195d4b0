//! Empirical sub-Gaussian tails for Lipschitz averages of stationary
//! observations.
//!
//! For `F = n⁻¹ Σ g(X_{t_k})` the target bound is
//! `P(F − E F > r) ≤ exp(−r² (nΔ_n)^{β_H} / (4 C ‖g‖²_Lip))`. This module
//! estimates the left side by replication, fits `C`, and checks the bound.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{eval_product, product_lipschitz_bound, Bandwidth, Kernel};
use crate::rates::beta_h;
use crate::replicate::{mean_compensated, sum_compensated, try_map_indexed, Execution};
use crate::sde::StationarySampler;
use crate::seed::{derive_seed, stream_rng};

/// Functions `g: R^d → R` with known Lipschitz constants.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Observable {
    /// `min(max(x_coord, −bound), bound)`.
    IdentityClip {
        coord: usize,
        bound: f64,
    },
    /// `x_coord`.
    Projection {
        coord: usize,
    },
    /// `K_h(x₀ − x)`.
    Kernel {
        kernel: Kernel,
        h: Bandwidth,
        x0: Vec<f64>,
    },
    Constant {
        value: f64,
    },
}

impl Observable {
    pub fn describe(&self) -> String {
        match self {
            Observable::IdentityClip { coord, bound } => format!("identity-clip(coord={coord},bound={bound})"),
            Observable::Projection { coord } => format!("proj-{coord}"),
            Observable::Kernel { kernel, h, x0 } => format!("kernel(order={},h={:?},x0={:?})", kernel.order(), h.as_slice(), x0),
            Observable::Constant { value } => format!("constant({value})"),
        }
    }

    /// Smallest dimension this observable can be evaluated in.
    pub fn min_dim(&self) -> usize {
        match self {
            Observable::IdentityClip { coord, .. } | Observable::Projection { coord } => coord + 1,
            Observable::Kernel { h, .. } => h.dim(),
            Observable::Constant { .. } => 1,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Observable::IdentityClip { coord, bound } => x[*coord].clamp(-bound, *bound),
            Observable::Projection { coord } => x[*coord],
            Observable::Kernel { kernel, h, x0 } => {
                let u: Vec<f64> = x0.iter().zip(x).map(|(a, b)| a - b).collect();
                eval_product(kernel, h, &u)
            }
            Observable::Constant { value } => *value,
        }
    }

    /// `‖g‖_Lip` for the Euclidean norm; exact except for the kernel,
    /// where it is the bound `√d κ_L / V_h`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Observable::IdentityClip { bound, .. } => {
                if *bound > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Observable::Projection { .. } => 1.0,
            Observable::Kernel { kernel, h, .. } => product_lipschitz_bound(kernel, h),
            Observable::Constant { .. } => 0.0,
        }
    }

    /// Parse `identity-clip`, `identity-clip:B`, `proj-I`, `constant:C` or
    /// `kernel:H,X0_1,…,X0_d` (isotropic `H`, Epanechnikov).
    pub fn parse(spec: &str, dim: usize) -> Result<Self> {
        let bad = || Error::Parameter(format!("unrecognised observable {spec:?}"));
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        if spec == "identity-clip" {
            return Ok(Observable::IdentityClip { coord: 0, bound: 1.0 });
        }
        if let Some(b) = spec.strip_prefix("identity-clip:") {
            return Ok(Observable::IdentityClip { coord: 0, bound: num(b)? });
        }
        if let Some(i) = spec.strip_prefix("proj-") {
            let coord = i.parse::<usize>().map_err(|_| bad())?;
            if coord >= dim {
                return Err(Error::Parameter(format!("projection index {coord} out of range for dimension {dim}")));
            }
            return Ok(Observable::Projection { coord });
        }
        if let Some(c) = spec.strip_prefix("constant:") {
            return Ok(Observable::Constant { value: num(c)? });
        }
        if let Some(rest) = spec.strip_prefix("kernel:") {
            let parts: Vec<f64> = rest.split(',').map(num).collect::<Result<_>>()?;
            if parts.len() != dim + 1 {
                return Err(Error::Parameter(format!("kernel observable needs h and {dim} coordinates of x0")));
            }
            return Ok(Observable::Kernel {
                kernel: Kernel::epanechnikov(),
                h: Bandwidth::isotropic(parts[0], dim)?,
                x0: parts[1..].to_vec(),
            });
        }
        Err(bad())
    }
}

/// Largest `|g(x) − g(y)| / |x − y|` over random pairs in `[lo, hi]^d`.
/// The second point of each pair is at a log-uniform distance from the
/// first so that both small- and large-scale slopes are probed.
pub fn lipschitz_probe(g: &Observable, dim: usize, lo: &[f64], hi: &[f64], pairs: usize, seed: u64) -> Result<f64> {
    if lo.len() != dim || hi.len() != dim || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return Err(Error::Parameter("probe box must have lo < hi in every coordinate".into()));
    }
    if g.min_dim() > dim {
        return Err(Error::Input(format!("observable needs dimension {}, got {dim}", g.min_dim())));
    }
    let width = lo.iter().zip(hi).map(|(a, b)| b - a).fold(0.0, f64::max);
    let mut rng = stream_rng(seed, 0);
    let mut best = 0.0f64;
    let mut x = vec![0.0; dim];
    let mut y = vec![0.0; dim];
    for _ in 0..pairs {
        for i in 0..dim {
            x[i] = rng.random_range(lo[i]..hi[i]);
        }
        let dist = width * 10f64.powf(rng.random_range(-6.0..0.0));
        let mut dir: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        dir.iter_mut().for_each(|v| *v /= norm);
        for i in 0..dim {
            y[i] = x[i] + dist * dir[i];
        }
        let sep = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if sep > 0.0 {
            best = best.max((g.eval(&x) - g.eval(&y)).abs() / sep);
        }
    }
    Ok(best)
}

/// How the mean `E g(X)` used for centering is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Centering {
    /// Average of all replications' observations.
    Pooled,
    Known(f64),
}

/// 95% Wilson score interval for `k` successes in `m` trials.
pub fn wilson_interval(k: usize, m: usize) -> (f64, f64) {
    let z = 1.959_963_984_540_054f64;
    let m_f = m as f64;
    let p = k as f64 / m_f;
    let denom = 1.0 + z * z / m_f;
    let center = (p + z * z / (2.0 * m_f)) / denom;
    let half = z * (p * (1.0 - p) / m_f + z * z / (4.0 * m_f * m_f)).sqrt() / denom;
    let lo = if k == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
    let hi = if k == m { 1.0 } else { (center + half).clamp(p, 1.0) };
    (lo, hi)
}

/// Evenly spaced grid on `(0, r_max]`, with `r_max` the sixth-largest
/// deviation so the far end still has a few exceedances.
pub fn auto_r_grid(deviations: &[f64], points: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = deviations.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() || points == 0 {
        return Vec::new();
    }
    let idx = sorted.len().saturating_sub(6);
    let r_max = sorted[idx].max(0.0);
    if r_max == 0.0 {
        return Vec::new();
    }
    (1..=points).map(|k| r_max * k as f64 / points as f64).collect()
}

/// Exceedance counts: one-sided `#{D > r}` and two-sided `#{|D| > r}`.
pub fn exceedance_counts(deviations: &[f64], r_grid: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let one = r_grid.iter().map(|&r| deviations.iter().filter(|&&d| d > r).count()).collect();
    let two = r_grid.iter().map(|&r| deviations.iter().filter(|&&d| d.abs() > r).count()).collect();
    (one, two)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubGaussianFit {
    pub c_hat: f64,
    /// 95% interval for `Ĉ` from the slope's standard error; the upper end
    /// is infinite when the slope interval reaches zero.
    pub c_interval: (f64, f64),
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Grid indices used in the fit.
    pub window: Vec<usize>,
}

/// `x(r) = r² (nΔ_n)^{β_H} / (4 ‖g‖²_Lip)`.
pub fn scaled_square(r: f64, horizon: f64, beta: f64, lipschitz: f64) -> f64 {
    r * r * horizon.powf(beta) / (4.0 * lipschitz * lipschitz)
}

/// Least squares of `−log P̂(r)` on `x(r)` over `20/R ≤ P̂ ≤ 0.5`;
/// `Ĉ = 1/slope`.
pub fn fit_subgaussian_constant(
    r_grid: &[f64],
    p_hat: &[f64],
    replications: usize,
    horizon: f64,
    beta: f64,
    lipschitz: f64,
) -> Result<SubGaussianFit> {
    if !(lipschitz > 0.0) {
        return Err(Error::Input("observable has zero Lipschitz norm".into()));
    }
    let floor = 20.0 / replications as f64;
    let window: Vec<usize> = (0..r_grid.len()).filter(|&i| p_hat[i] >= floor && p_hat[i] <= 0.5 && p_hat[i] > 0.0).collect();
    if window.len() < 3 {
        return Err(Error::Fit(format!("only {} tail points inside the fitting window [{floor:.2e}, 0.5]", window.len())));
    }
    let xs: Vec<f64> = window.iter().map(|&i| scaled_square(r_grid[i], horizon, beta, lipschitz)).collect();
    let ys: Vec<f64> = window.iter().map(|&i| -p_hat[i].ln()).collect();
    let m = xs.len() as f64;
    let xm = mean_compensated(&xs);
    let ym = mean_compensated(&ys);
    let sxx = sum_compensated(xs.iter().map(|x| (x - xm).powi(2)));
    let sxy = sum_compensated(xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)));
    let syy = sum_compensated(ys.iter().map(|y| (y - ym).powi(2)));
    if !(sxx > 0.0) {
        return Err(Error::Fit("fitting window has a single abscissa".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    if !(slope > 0.0) {
        return Err(Error::Fit(format!("nonpositive tail slope {slope:.3e}; tails are not decreasing")));
    }
    let sse = sum_compensated(xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)));
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let se = if m > 2.0 { (sse / (m - 2.0) / sxx).sqrt() } else { f64::INFINITY };
    let lo_slope = slope - 1.96 * se;
    let c_interval = (1.0 / (slope + 1.96 * se), if lo_slope > 0.0 { 1.0 / lo_slope } else { f64::INFINITY });
    Ok(SubGaussianFit { c_hat: 1.0 / slope, c_interval, slope, intercept, r_squared, window })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub observable: String,
    pub lipschitz: f64,
    pub n: usize,
    pub delta_n: f64,
    pub hurst: f64,
    pub beta_h: f64,
    pub replications: usize,
    pub center: f64,
    pub r: Vec<f64>,
    /// One-sided `P̂(F − E F > r)`.
    pub p_hat: Vec<f64>,
    pub wilson_lo: Vec<f64>,
    pub wilson_hi: Vec<f64>,
    /// Two-sided `P̂(|F − E F| > r)`.
    pub p_hat_two_sided: Vec<f64>,
    pub fit: Option<SubGaussianFit>,
    /// `exp(−x(r) / Ĉ)` at the fitted constant.
    pub bound: Vec<f64>,
}

impl TailReport {
    pub fn horizon(&self) -> f64 {
        self.n as f64 * self.delta_n
    }

    /// Whether `P̂(r) ≤ exp(−x(r)/(safety·Ĉ))` on the fitting window, and
    /// the two-sided frequency respects twice that bound.
    pub fn bound_holds(&self, safety: f64) -> Option<bool> {
        let fit = self.fit.as_ref()?;
        let c = safety * fit.c_hat;
        Some(fit.window.iter().all(|&i| {
            let b = (-scaled_square(self.r[i], self.horizon(), self.beta_h, self.lipschitz) / c).exp();
            self.p_hat[i] <= b && self.p_hat_two_sided[i] <= 2.0 * b
        }))
    }
}

/// Build a report from centered deviations `F_r − E F`.
#[allow(clippy::too_many_arguments)]
pub fn tail_from_deviations(
    observable: String,
    lipschitz: f64,
    n: usize,
    delta_n: f64,
    hurst: f64,
    beta: f64,
    center: f64,
    deviations: &[f64],
    r_grid: &[f64],
) -> TailReport {
    let reps = deviations.len();
    let (one, two) = exceedance_counts(deviations, r_grid);
    let p_hat: Vec<f64> = one.iter().map(|&k| k as f64 / reps as f64).collect();
    let (wilson_lo, wilson_hi) = one.iter().map(|&k| wilson_interval(k, reps)).unzip();
    let p_hat_two_sided = two.iter().map(|&k| k as f64 / reps as f64).collect();
    let horizon = n as f64 * delta_n;
    let fit = fit_subgaussian_constant(r_grid, &p_hat, reps, horizon, beta, lipschitz).ok();
    let bound = match &fit {
        Some(f) => r_grid.iter().map(|&r| (-scaled_square(r, horizon, beta, lipschitz) / f.c_hat).exp()).collect(),
        None => vec![f64::NAN; r_grid.len()],
    };
    TailReport {
        observable,
        lipschitz,
        n,
        delta_n,
        hurst,
        beta_h: beta,
        replications: reps,
        center,
        r: r_grid.to_vec(),
        p_hat,
        wilson_lo,
        wilson_hi,
        p_hat_two_sided,
        fit,
        bound,
    }
}

/// Replicated averages `F = n⁻¹ Σ g(X_{t_k})`; replication `r` uses seed
/// `derive_seed(root_seed, r)`.
pub fn replicate_means(
    sampler: &StationarySampler,
    g: &Observable,
    replications: usize,
    root_seed: u64,
    exec: Execution,
) -> Result<Vec<f64>> {
    if g.min_dim() > sampler.model().dim() {
        return Err(Error::Input(format!("observable needs dimension {}, model has {}", g.min_dim(), sampler.model().dim())));
    }
    try_map_indexed(replications, exec, |r| {
        let data = sampler.sample(derive_seed(root_seed, r as u64))?;
        let vals: Vec<f64> = data.rows().map(|x| g.eval(x)).collect();
        Ok(mean_compensated(&vals))
    })
}

/// Empirical tail of the centered average over `replications` independent
/// stationary samples, with Wilson intervals and the fitted constant.
/// Without an explicit grid, [`auto_r_grid`] with 30 points is used.
pub fn empirical_tail(
    sampler: &StationarySampler,
    g: &Observable,
    r_grid: Option<&[f64]>,
    replications: usize,
    root_seed: u64,
    centering: Centering,
    exec: Execution,
) -> Result<TailReport> {
    let lip = g.lipschitz();
    if !(lip > 0.0) {
        return Err(Error::Input(format!("observable {} has zero Lipschitz norm", g.describe())));
    }
    if replications < 2 {
        return Err(Error::Parameter("at least two replications are required".into()));
    }
    if let Some(grid) = r_grid {
        if grid.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Parameter("r grid must be finite and nonnegative".into()));
        }
    }
    let means = replicate_means(sampler, g, replications, root_seed, exec)?;
    let center = match centering {
        Centering::Pooled => mean_compensated(&means),
        Centering::Known(v) => v,
    };
    let deviations: Vec<f64> = means.iter().map(|m| m - center).collect();
    let grid = match r_grid {
        Some(g) => g.to_vec(),
        None => auto_r_grid(&deviations, 30),
    };
    let model = sampler.model();
    let obs = sampler.grid();
    Ok(tail_from_deviations(
        g.describe(),
        lip,
        obs.n(),
        obs.delta_n(),
        model.hurst().value(),
        beta_h(model.hurst()),
        center,
        &deviations,
        &grid,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::Hurst;
    use crate::sde::{ModelSpec, SamplingGrid, StationaryOptions};
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn lipschitz_examples() {
        let id = Observable::Projection { coord: 0 };
        assert_eq!(id.lipschitz(), 1.0);
        assert_relative_eq!(lipschitz_probe(&id, 1, &[-3.0], &[3.0], 1000, 1).unwrap(), 1.0, epsilon = 1e-9);
        let clip = Observable::IdentityClip { coord: 0, bound: 1.0 };
        assert_eq!(clip.lipschitz(), 1.0);
        let probe = lipschitz_probe(&clip, 1, &[-3.0], &[3.0], 2000, 2).unwrap();
        assert!(probe <= 1.0 + 1e-12 && probe > 0.99);
        let k = Observable::Kernel { kernel: Kernel::epanechnikov(), h: Bandwidth::new(vec![0.5]).unwrap(), x0: vec![0.2] };
        assert_relative_eq!(k.lipschitz(), 1.5 / 0.25);
        let probe = lipschitz_probe(&k, 1, &[-0.3], &[0.7], 20_000, 3).unwrap();
        assert!((probe / k.lipschitz() - 1.0).abs() < 0.05, "probe {probe}");
        let k2 = Observable::Kernel { kernel: Kernel::epanechnikov(), h: Bandwidth::new(vec![0.5, 0.8]).unwrap(), x0: vec![0.0, 0.0] };
        assert!(lipschitz_probe(&k2, 2, &[-0.5, -0.8], &[0.5, 0.8], 20_000, 4).unwrap() <= k2.lipschitz());
    }

    #[test]
    fn parse_observables() {
        assert!(matches!(Observable::parse("identity-clip", 1).unwrap(), Observable::IdentityClip { coord: 0, bound } if bound == 1.0));
        assert!(matches!(Observable::parse("proj-1", 2).unwrap(), Observable::Projection { coord: 1 }));
        assert!(Observable::parse("proj-2", 2).is_err());
        let k = Observable::parse("kernel:0.5,0.1,0.2", 2).unwrap();
        assert_relative_eq!(k.eval(&[0.1, 0.2]), 0.75 * 0.75 / 0.25);
        assert!(Observable::parse("kernel:0.5", 2).is_err());
        assert!(Observable::parse("wat", 1).is_err());
    }

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_interval(0, 100);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.03 && hi < 0.04);
        let (lo, hi) = wilson_interval(50, 100);
        assert_relative_eq!(lo + hi, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_observable_never_exceeds() {
        let g = Observable::Constant { value: 3.0 };
        let devs = vec![0.0; 50];
        let (one, two) = exceedance_counts(&devs, &[0.01, 0.1, 1.0]);
        assert!(one.iter().chain(&two).all(|&k| k == 0));
        let model = ModelSpec::fractional_ou(1.0, 1.0, Hurst::new(0.5).unwrap()).unwrap();
        let sampler = StationarySampler::new(&model, SamplingGrid::new(10, 0.5).unwrap(), &StationaryOptions::default()).unwrap();
        let err = empirical_tail(&sampler, &g, None, 10, 0, Centering::Pooled, Execution::Sequential).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    fn gaussian_means(reps: usize, v: f64, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, 0);
        (0..reps)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v.sqrt() * z
            })
            .collect()
    }

    /// Exact-tail oracle: fit the same window on `P(N(0, v) > r)`.
    fn oracle_c(r: &[f64], v: f64, reps: usize, horizon: f64, lip: f64) -> f64 {
        let p: Vec<f64> = r.iter().map(|&x| 0.5 * statrs::function::erf::erfc(x / (2.0 * v).sqrt())).collect();
        fit_subgaussian_constant(r, &p, reps, horizon, 1.0, lip).unwrap().c_hat
    }

    #[test]
    fn gaussian_surrogate_constant() {
        // white-noise surrogate: mean of n i.i.d. N(0,1) has variance 1/n
        let reps = 20_000;
        let n = 100usize;
        let v = 1.0 / n as f64;
        let devs = gaussian_means(reps, v, 7);
        let r = auto_r_grid(&devs, 30);
        let rep = tail_from_deviations("g".into(), 1.0, n, 1.0, 0.5, 1.0, 0.0, &devs, &r);
        let fit = rep.fit.clone().unwrap();
        let oracle = oracle_c(&r, v, reps, n as f64, 1.0);
        assert!((fit.c_hat / oracle - 1.0).abs() < 0.25, "fit {} oracle {oracle}", fit.c_hat);
        assert!(fit.r_squared > 0.9);
        // the asymptotic Gaussian constant is 1/2 on this scale: exp(−r² n /(4C)) = exp(−r² n/2)
        assert!(fit.c_hat > 0.25 && fit.c_hat < 1.0);
        assert_eq!(rep.bound_holds(1.5), Some(true));
    }

    #[test]
    fn fit_is_scale_equivariant() {
        let devs = gaussian_means(10_000, 0.01, 11);
        let r = auto_r_grid(&devs, 25);
        let a = tail_from_deviations("g".into(), 1.0, 100, 1.0, 0.5, 1.0, 0.0, &devs, &r);
        // g → 2g doubles both deviations and the Lipschitz norm
        let devs2: Vec<f64> = devs.iter().map(|d| 2.0 * d).collect();
        let r2: Vec<f64> = r.iter().map(|x| 2.0 * x).collect();
        let b = tail_from_deviations("2g".into(), 2.0, 100, 1.0, 0.5, 1.0, 0.0, &devs2, &r2);
        assert_relative_eq!(a.fit.unwrap().c_hat, b.fit.unwrap().c_hat, max_relative = 1e-12);
    }

    #[test]
    fn fit_failures_are_reported() {
        assert!(matches!(fit_subgaussian_constant(&[0.1, 0.2], &[0.3, 0.2], 100, 10.0, 1.0, 1.0), Err(Error::Fit(_))));
        let increasing = fit_subgaussian_constant(&[0.1, 0.2, 0.3, 0.4], &[0.2, 0.3, 0.4, 0.45], 1000, 10.0, 1.0, 1.0);
        assert!(matches!(increasing, Err(Error::Fit(_))));
        assert!(matches!(fit_subgaussian_constant(&[0.1, 0.2, 0.3], &[0.3, 0.2, 0.1], 1000, 10.0, 1.0, 0.0), Err(Error::Input(_))));
    }

    #[test]
    fn tails_are_monotone() {
        let devs = gaussian_means(2000, 1.0, 3);
        let r: Vec<f64> = (0..20).map(|k| k as f64 * 0.2).collect();
        let rep = tail_from_deviations("g".into(), 1.0, 10, 1.0, 0.5, 1.0, 0.0, &devs, &r);
        assert!(rep.p_hat.windows(2).all(|w| w[1] <= w[0]));
        assert!(rep.p_hat.iter().zip(&rep.p_hat_two_sided).all(|(a, b)| a <= b));
        assert!(rep.p_hat.iter().zip(rep.wilson_lo.iter().zip(&rep.wilson_hi)).all(|(p, (l, h))| l <= p && p <= h));
    }

    #[test]
    fn fou_tail_is_subgaussian() {
        let model = ModelSpec::fractional_ou(1.0, 1.0, Hurst::new(0.5).unwrap()).unwrap();
        let opts = StationaryOptions { burn_in: Some(10.0), sim_step: Some(0.05), ..Default::default() };
        let sampler = StationarySampler::new(&model, SamplingGrid::new(100, 0.2).unwrap(), &opts).unwrap();
        let g = Observable::IdentityClip { coord: 0, bound: 1.0 };
        let rep = empirical_tail(&sampler, &g, None, 600, 5, Centering::Pooled, Execution::Sequential).unwrap();
        let fit = rep.fit.as_ref().expect("fit");
        assert!(fit.c_hat > 0.0 && fit.r_squared > 0.8);
        let again = empirical_tail(&sampler, &g, None, 600, 5, Centering::Pooled, Execution::Parallel).unwrap();
        assert_eq!(rep, again);
    }
}
