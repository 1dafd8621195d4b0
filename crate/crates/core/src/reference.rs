//! True stationary density values used as the target in risk studies.
//!
//! Linear drifts have a Gaussian invariant law whose covariance is
//! computed from the fBm covariance by quadrature. The tanh drift with
//! Brownian noise and diagonal diffusion has an explicit gradient-flow
//! density. Anything else falls back to a long simulated run.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::density::estimate_many;
use crate::error::{Error, Result};
use crate::fbm::{Hurst, SynthesisConfig};
use crate::kernels::{Bandwidth, Kernel};
use crate::quad::{tanh_sinh, GaussLegendre};
use crate::replicate::{mean_compensated, try_map_indexed, Execution};
use crate::sde::{ModelSpec, SamplingGrid, StationaryOptions, StationarySampler, ZooDrift};
use crate::seed::derive_seed;

const QUAD_TOL: f64 = 1e-11;

fn fbm_covariance(hurst: f64, s: f64, u: f64) -> f64 {
    0.5 * (s.powf(2.0 * hurst) + u.powf(2.0 * hurst) - (s - u).abs().powf(2.0 * hurst))
}

/// `Cov(∫_{-∞}^0 e^{λs} dB^H_s, ∫_{-∞}^0 e^{μs} dB^H_s)` for one fBm,
/// computed as `λμ ∫∫ e^{-λs-μu} R_H(s, u) ds du` over the quadrant.
pub fn exponential_cross_covariance(hurst: Hurst, lambda: f64, mu: f64) -> Result<f64> {
    if !(lambda > 0.0 && mu > 0.0) {
        return Err(Error::Reference(format!("rates must be positive, got {lambda}, {mu}")));
    }
    let h = hurst.value();
    if h == 0.5 {
        return Ok(1.0 / (lambda + mu));
    }
    // Split the quadrant at the diagonal; on {u < s} write s = u + r and
    // map each half-line to (0, 1) with v = e^{-rate·x}.
    let half = |a: f64, b: f64| -> Result<f64> {
        let mut worst = 0.0f64;
        let (outer, change) = tanh_sinh(0.0, 1.0, QUAD_TOL, |v| {
            let u = -v.ln() / (a + b);
            let (inner, change) = tanh_sinh(0.0, 1.0, QUAD_TOL, |w| fbm_covariance(h, u - w.ln() / a, u));
            worst = worst.max(change.abs());
            inner / a
        });
        let worst = (worst / a).max(change.abs()) / outer.abs().max(f64::MIN_POSITIVE);
        if !(outer.is_finite() && worst < 1e-8) {
            return Err(Error::Reference(format!("covariance quadrature did not converge (relative change {worst:.2e})")));
        }
        Ok(outer / (a + b))
    };
    Ok(lambda * mu * (half(lambda, mu)? + half(mu, lambda)?))
}

/// Stationary variance of the one-dimensional fOU `dX = −θX dt + σ dB^H`.
pub fn fou_stationary_variance(hurst: Hurst, theta: f64, sigma: f64) -> Result<f64> {
    Ok(sigma * sigma * exponential_cross_covariance(hurst, theta, theta)?)
}

/// Invariant covariance of `dX = −AX dt + σ dB^H`, `A` symmetric positive
/// definite.
pub fn linear_stationary_covariance(a: &DMatrix<f64>, sigma: &DMatrix<f64>, hurst: Hurst) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    let eig = a.clone().symmetric_eigen();
    let q = &eig.eigenvectors;
    let s = q.transpose() * sigma;
    let mut c = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let cij = exponential_cross_covariance(hurst, eig.eigenvalues[i], eig.eigenvalues[j])?;
            c[(i, j)] = cij;
            c[(j, i)] = cij;
        }
    }
    let mut cov_y = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            cov_y[(i, j)] = (0..d).map(|k| s[(i, k)] * s[(j, k)]).sum::<f64>() * c[(i, j)];
        }
    }
    let cov = q * cov_y * q.transpose();
    Ok((&cov + cov.transpose()) * 0.5)
}

pub fn gaussian_density(cov: &DMatrix<f64>, x: &[f64]) -> Result<f64> {
    let d = cov.nrows();
    let chol = cov.clone().cholesky().ok_or_else(|| Error::Reference("stationary covariance is not positive definite".into()))?;
    let z = chol.l().solve_lower_triangular(&DVector::from_column_slice(x)).expect("triangular solve");
    let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum();
    Ok((-0.5 * z.norm_squared() - log_det - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln()).exp())
}

fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Invariant density of `dX = −(θX + c tanh X) dt + s dW` at `x`,
/// `∝ exp(−(θx² + 2c log cosh x)/s²)`.
pub fn tanh_gradient_density(theta: f64, c: f64, s: f64, x: f64) -> f64 {
    let potential = |y: f64| (theta * y * y + 2.0 * c * log_cosh(y)) / (s * s);
    let reach = 40.0 * s / theta.sqrt() + 1.0;
    let gl = GaussLegendre::new(64);
    let z = gl.integrate_composite(-reach, reach, 64, |y| (-potential(y)).exp());
    (-potential(x)).exp() / z
}

fn closed_form(model: &ModelSpec, x0: &[f64]) -> Result<Option<f64>> {
    let Some(zoo) = model.zoo() else { return Ok(None) };
    let d = model.dim();
    match zoo {
        ZooDrift::FractionalOu { theta, .. } => {
            let a = DMatrix::from_diagonal_element(d, d, *theta);
            let cov = linear_stationary_covariance(&a, model.sigma(), model.hurst())?;
            gaussian_density(&cov, x0).map(Some)
        }
        ZooDrift::Linear { matrix } => {
            let a = DMatrix::from_fn(d, d, |i, j| matrix[i][j]);
            let cov = linear_stationary_covariance(&a, model.sigma(), model.hurst())?;
            gaussian_density(&cov, x0).map(Some)
        }
        ZooDrift::TanhConvex { theta, c, .. } => {
            let sigma = model.sigma();
            let diagonal = (0..d).all(|i| (0..d).all(|j| i == j || sigma[(i, j)] == 0.0));
            if model.hurst().value() != 0.5 || !diagonal {
                return Ok(None);
            }
            Ok(Some((0..d).map(|i| tanh_gradient_density(*theta, *c, sigma[(i, i)].abs(), x0[i])).product()))
        }
    }
}

/// Settings for the simulated reference used when no closed form exists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongRunSettings {
    /// Observations per independent chunk.
    pub n_per_chunk: usize,
    pub chunks: usize,
    pub delta_n: f64,
    /// Coarse bandwidth; the estimate is extrapolated from `h` and `h/2`.
    pub h: f64,
    pub seed: u64,
    pub burn_in: Option<f64>,
    pub sim_step: Option<f64>,
    /// Results are cached here as JSON when set.
    #[serde(skip)]
    pub cache_dir: Option<PathBuf>,
    /// Identifies the model in the cache key; required for drifts outside
    /// the zoo.
    pub model_key: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongRunReference {
    /// Extrapolated value `(4 f̂_{h/2} − f̂_h)/3`.
    pub value: f64,
    pub coarse: f64,
    pub fine: f64,
    /// Chunk-to-chunk standard error of `value`.
    pub standard_error: f64,
    pub observations: usize,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn cache_key(model: &ModelSpec, x0: &[f64], settings: &LongRunSettings) -> Result<String> {
    let model_id = match (&settings.model_key, model.zoo()) {
        (Some(k), _) => k.clone(),
        (None, Some(z)) => serde_json::to_string(z)?,
        (None, None) => return Err(Error::Config("a model_key is required to cache references for custom drifts".into())),
    };
    let text = format!(
        "{model_id}|{:?}|{}|{:?}|{}",
        model.sigma().as_slice(),
        model.hurst(),
        x0.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(","),
        serde_json::to_string(settings)?
    );
    Ok(format!("{:016x}", fnv1a(text.as_bytes())))
}

/// Simulated reference: independent stationary chunks, Epanechnikov
/// estimates at `h` and `h/2`, Richardson-extrapolated to remove the
/// `h²` bias term.
pub fn long_run_reference(model: &ModelSpec, x0: &[f64], settings: &LongRunSettings, exec: Execution) -> Result<LongRunReference> {
    if settings.chunks < 2 || settings.n_per_chunk == 0 {
        return Err(Error::Parameter("long-run reference needs at least two nonempty chunks".into()));
    }
    if x0.len() != model.dim() {
        return Err(Error::Input(format!("x0 has dimension {}, model has {}", x0.len(), model.dim())));
    }
    let cache_path = match &settings.cache_dir {
        Some(dir) => Some(dir.join(format!("reference-{}.json", cache_key(model, x0, settings)?))),
        None => None,
    };
    if let Some(path) = &cache_path {
        if let Ok(text) = std::fs::read_to_string(path) {
            if let Ok(cached) = serde_json::from_str::<LongRunReference>(&text) {
                return Ok(cached);
            }
        }
    }
    let grid = SamplingGrid::new(settings.n_per_chunk, settings.delta_n)?;
    let options =
        StationaryOptions { burn_in: settings.burn_in, sim_step: settings.sim_step, x0: None, synthesis: SynthesisConfig::default() };
    let sampler = StationarySampler::new(model, grid, &options)?;
    let kernel = Kernel::epanechnikov();
    let d = model.dim();
    let bandwidths = [Bandwidth::isotropic(settings.h, d)?, Bandwidth::isotropic(settings.h / 2.0, d)?];
    let per_chunk = try_map_indexed(settings.chunks, exec, |c| -> Result<[f64; 2]> {
        let data = sampler.sample(derive_seed(settings.seed, c as u64))?;
        let e = estimate_many(&data, &kernel, &bandwidths, x0)?;
        Ok([e[0], e[1]])
    })?;
    let coarse = mean_compensated(&per_chunk.iter().map(|e| e[0]).collect::<Vec<_>>());
    let fine = mean_compensated(&per_chunk.iter().map(|e| e[1]).collect::<Vec<_>>());
    let extrapolated: Vec<f64> = per_chunk.iter().map(|e| (4.0 * e[1] - e[0]) / 3.0).collect();
    let value = mean_compensated(&extrapolated);
    let k = extrapolated.len() as f64;
    let var = extrapolated.iter().map(|v| (v - value).powi(2)).sum::<f64>() / (k - 1.0);
    let result =
        LongRunReference { value, coarse, fine, standard_error: (var / k).sqrt(), observations: settings.chunks * settings.n_per_chunk };
    if let Some(path) = &cache_path {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(&result)?)?;
    }
    Ok(result)
}

/// `f(x₀)` for the invariant law of `model`: closed form when available,
/// otherwise the long-run reference if settings are given.
pub fn reference_density(model: &ModelSpec, x0: &[f64], long_run: Option<&LongRunSettings>, exec: Execution) -> Result<f64> {
    if x0.len() != model.dim() {
        return Err(Error::Input(format!("x0 has dimension {}, model has {}", x0.len(), model.dim())));
    }
    if let Some(v) = closed_form(model, x0)? {
        return Ok(v);
    }
    match long_run {
        Some(settings) => Ok(long_run_reference(model, x0, settings, exec)?.value),
        None => Err(Error::Config("no closed-form stationary density for this model; supply long-run reference settings".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::FnDrift;
    use approx::assert_relative_eq;
    use statrs::function::gamma::gamma;
    use std::sync::Arc;

    fn h(v: f64) -> Hurst {
        Hurst::new(v).unwrap()
    }

    fn closed_cross(hurst: f64, l: f64, m: f64) -> f64 {
        hurst * gamma(2.0 * hurst) * (l.powf(1.0 - 2.0 * hurst) + m.powf(1.0 - 2.0 * hurst)) / (l + m)
    }

    #[test]
    fn fou_brownian_density() {
        let model = ModelSpec::fractional_ou(1.0, 1.0, h(0.5)).unwrap();
        let f = reference_density(&model, &[0.0], None, Execution::Sequential).unwrap();
        assert_relative_eq!(f, 1.0 / std::f64::consts::PI.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(f, 0.5642, epsilon = 1e-4);
    }

    #[test]
    fn fou_fractional_variance() {
        for &hv in &[0.3, 0.7, 0.9] {
            let v = fou_stationary_variance(h(hv), 1.0, 1.0).unwrap();
            assert_relative_eq!(v, hv * gamma(2.0 * hv), max_relative = 1e-8);
            assert!(v <= gamma(2.0 * hv + 1.0));
        }
        let model = ModelSpec::fractional_ou(1.0, 1.0, h(0.7)).unwrap();
        let f = reference_density(&model, &[0.0], None, Execution::Sequential).unwrap();
        let v = 0.7 * gamma(1.4);
        assert_relative_eq!(f, 1.0 / (2.0 * std::f64::consts::PI * v).sqrt(), max_relative = 1e-8);
    }

    #[test]
    fn cross_covariance_matches_closed_form() {
        for &hv in &[0.2, 0.35, 0.65, 0.8] {
            for &(l, m) in &[(1.0, 2.0), (0.5, 3.0), (2.0, 2.0)] {
                let q = exponential_cross_covariance(h(hv), l, m).unwrap();
                assert_relative_eq!(q, closed_cross(hv, l, m), max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn diagonal_linear_is_product() {
        let zoo = ZooDrift::Linear { matrix: vec![vec![1.0, 0.0], vec![0.0, 2.0]] };
        let model = ModelSpec::from_zoo(zoo, DMatrix::identity(2, 2), h(0.5)).unwrap();
        let f = reference_density(&model, &[0.0, 0.0], None, Execution::Sequential).unwrap();
        let g = |v: f64| 1.0 / (2.0 * std::f64::consts::PI * v).sqrt();
        assert_relative_eq!(f, g(0.5) * g(0.25), epsilon = 1e-12);
    }

    #[test]
    fn rotated_linear_covariance() {
        // A = R diag(1, 3) Rᵀ with σ = I: covariance is R diag(c(1,1), c(3,3)) Rᵀ
        let (c, s) = (0.6f64, 0.8f64);
        let r = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let a = &r * DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0])) * r.transpose();
        let hv = 0.7;
        let cov = linear_stationary_covariance(&a, &DMatrix::identity(2, 2), h(hv)).unwrap();
        let expect =
            &r * DMatrix::from_diagonal(&DVector::from_vec(vec![closed_cross(hv, 1.0, 1.0), closed_cross(hv, 3.0, 3.0)])) * r.transpose();
        assert!((cov - expect).amax() < 1e-8);
    }

    #[test]
    fn general_sigma_uses_cross_terms() {
        // σ mixes coordinates of a diagonal A: Cov_ij = (σσᵀ)_ij c(λ_i, λ_j)
        let hv = 0.3;
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let cov = linear_stationary_covariance(&a, &sigma, h(hv)).unwrap();
        let ss = &sigma * sigma.transpose();
        for i in 0..2 {
            for j in 0..2 {
                let lam = [1.0, 2.0];
                assert_relative_eq!(cov[(i, j)], ss[(i, j)] * closed_cross(hv, lam[i], lam[j]), max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn tanh_density_integrates_to_one() {
        let gl = GaussLegendre::new(64);
        let total = gl.integrate_composite(-30.0, 30.0, 200, |x| tanh_gradient_density(1.0, 1.0, 1.0, x));
        assert_relative_eq!(total, 1.0, epsilon = 1e-10);
        // c → 0 recovers N(0, s²/(2θ))
        assert_relative_eq!(
            tanh_gradient_density(2.0, 1e-12, 1.0, 0.0),
            1.0 / (2.0 * std::f64::consts::PI * 0.25).sqrt(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn missing_closed_form_is_config_error() {
        let drift = Arc::new(FnDrift::new(1, |x, out| out[0] = -x[0] - x[0].powi(3) / (1.0 + x[0] * x[0])));
        let model = ModelSpec::new(drift, DMatrix::identity(1, 1), h(0.6), 1.0, 2.0).unwrap();
        assert!(matches!(reference_density(&model, &[0.0], None, Execution::Sequential), Err(Error::Config(_))));
    }

    #[test]
    fn long_run_reference_caches() {
        let dir = tempfile::tempdir().unwrap();
        let model = ModelSpec::fractional_ou(1.0, 1.0, h(0.5)).unwrap();
        let settings = LongRunSettings {
            n_per_chunk: 400,
            chunks: 4,
            delta_n: 0.5,
            h: 0.4,
            seed: 3,
            burn_in: Some(5.0),
            sim_step: Some(0.05),
            cache_dir: Some(dir.path().to_path_buf()),
            model_key: None,
        };
        let a = long_run_reference(&model, &[0.0], &settings, Execution::Sequential).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let b = long_run_reference(&model, &[0.0], &settings, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        assert!((a.value - 1.0 / std::f64::consts::PI.sqrt()).abs() < 0.2);
    }
}
