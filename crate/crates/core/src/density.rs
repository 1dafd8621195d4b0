//! Pointwise kernel density estimation and Monte Carlo risk.

use std::collections::HashMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::glselect::{majorants, select_from_estimates, BandwidthGrid, Kappa};
use crate::kernels::{Bandwidth, Kernel};
use crate::replicate::{mean_compensated, sum_compensated, try_map_indexed, Execution};
use crate::sde::{ObservationSet, StationarySampler};
use crate::seed::{derive_seed, stream_rng};

/// `f̂_h(x₀)` together with what produced it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointEstimate {
    pub x0: Vec<f64>,
    pub h: Bandwidth,
    pub value: f64,
    pub n: usize,
    pub delta_n: f64,
}

fn check_dims(data: &ObservationSet, x0: &[f64], bandwidths: &[Bandwidth]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Input("no observations".into()));
    }
    let d = data.dim();
    if x0.len() != d {
        return Err(Error::Input(format!("x0 has dimension {}, data has {d}", x0.len())));
    }
    if let Some(h) = bandwidths.iter().find(|h| h.dim() != d) {
        return Err(Error::Input(format!("bandwidth has dimension {}, data has {d}", h.dim())));
    }
    Ok(())
}

/// `f̂_h(x₀) = n⁻¹ Σ K_h(x₀ − X_{t_i})`.
pub fn estimate_at(data: &ObservationSet, kernel: &Kernel, h: &Bandwidth, x0: &[f64]) -> Result<PointEstimate> {
    let value = estimate_many(data, kernel, std::slice::from_ref(h), x0)?[0];
    Ok(PointEstimate { x0: x0.to_vec(), h: h.clone(), value, n: data.len(), delta_n: data.grid().delta_n() })
}

/// `f̂_h(x₀)` for several bandwidths in one pass over the data.
///
/// Per coordinate, the kernel is evaluated once for each distinct
/// bandwidth value, so lattice grids cost `O(n d L)` kernel evaluations
/// rather than `O(n d |grid|)`.
pub fn estimate_many(data: &ObservationSet, kernel: &Kernel, bandwidths: &[Bandwidth], x0: &[f64]) -> Result<Vec<f64>> {
    check_dims(data, x0, bandwidths)?;
    if bandwidths.is_empty() {
        return Ok(Vec::new());
    }
    let d = data.dim();
    // distinct[i] lists the distinct values of h_i; slot[b][i] indexes it.
    let mut distinct: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut slot: Vec<Vec<usize>> = Vec::with_capacity(bandwidths.len());
    let mut lookup: Vec<HashMap<u64, usize>> = vec![HashMap::new(); d];
    for h in bandwidths {
        let mut row = Vec::with_capacity(d);
        for (i, &hi) in h.as_slice().iter().enumerate() {
            let idx = *lookup[i].entry(hi.to_bits()).or_insert_with(|| {
                distinct[i].push(hi);
                distinct[i].len() - 1
            });
            row.push(idx);
        }
        slot.push(row);
    }
    let reach: Vec<f64> = distinct.iter().map(|v| v.iter().copied().fold(0.0, f64::max)).collect();
    let mut factors: Vec<Vec<f64>> = distinct.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut sums = vec![0.0; bandwidths.len()];
    'rows: for x in data.rows() {
        for i in 0..d {
            if (x0[i] - x[i]).abs() >= reach[i] {
                continue 'rows;
            }
        }
        for i in 0..d {
            let u = x0[i] - x[i];
            for (f, &hi) in factors[i].iter_mut().zip(&distinct[i]) {
                *f = if u.abs() >= hi { 0.0 } else { kernel.eval(u / hi) / hi };
            }
        }
        for (sum, row) in sums.iter_mut().zip(&slot) {
            let mut prod = 1.0;
            for (i, &s) in row.iter().enumerate() {
                prod *= factors[i][s];
                if prod == 0.0 {
                    break;
                }
            }
            *sum += prod;
        }
    }
    let n = data.len() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

/// Estimator evaluated in a risk study.
#[derive(Clone, Debug, PartialEq)]
pub enum Estimator {
    Fixed(Bandwidth),
    /// Data-driven bandwidth from the selection rule.
    Adaptive {
        kappa: Kappa,
        p: f64,
    },
    /// Returns the given value regardless of data.
    Constant(f64),
}

impl Estimator {
    pub fn label(&self) -> String {
        match self {
            Estimator::Fixed(h) => {
                let parts: Vec<String> = h.as_slice().iter().map(|v| format!("{v:.6}")).collect();
                format!("fixed[{}]", parts.join(","))
            }
            Estimator::Adaptive { kappa, p } => match kappa {
                Kappa::Fixed(k) => format!("adaptive[kappa={k},p={p}]"),
                Kappa::LogN => format!("adaptive[kappa=log-n,p={p}]"),
            },
            Estimator::Constant(v) => format!("constant[{v}]"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RiskReport {
    pub estimator: String,
    pub p: f64,
    pub replications: usize,
    pub truth: f64,
    /// `(mean |f̃ − f(x₀)|^p)^{1/p}`.
    pub risk: f64,
    /// Bootstrap standard error of `risk`.
    pub standard_error: f64,
    /// `|mean f̃ − f(x₀)|`.
    pub bias_part: f64,
    /// `(mean |f̃ − mean f̃|^p)^{1/p}`.
    pub stoch_part: f64,
    pub mean_estimate: f64,
    /// Average selected `V_h` for data-driven estimators.
    pub mean_selected_volume: Option<f64>,
}

/// Raw Monte Carlo output: `values[e][r]` is estimator `e` on replication `r`.
#[derive(Clone, Debug)]
pub struct RiskSamples {
    pub values: Vec<Vec<f64>>,
    pub selected_volume: Vec<Option<Vec<f64>>>,
}

pub const BOOTSTRAP_RESAMPLES: usize = 400;

pub fn p_norm_error(values: &[f64], center: f64, p: f64) -> f64 {
    mean_compensated(&values.iter().map(|v| (v - center).abs().powf(p)).collect::<Vec<_>>()).powf(1.0 / p)
}

/// Reduce replicated estimates to a [`RiskReport`].
pub fn summarize(label: String, values: &[f64], truth: f64, p: f64, bootstrap_seed: u64, selected_volume: Option<&[f64]>) -> RiskReport {
    let r = values.len();
    let risk = p_norm_error(values, truth, p);
    let mean = mean_compensated(values);
    let stoch = p_norm_error(values, mean, p);
    let mut rng = stream_rng(bootstrap_seed, 0);
    let mut resampled = vec![0.0; r];
    let boot: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            for v in resampled.iter_mut() {
                *v = values[rng.random_range(0..r)];
            }
            p_norm_error(&resampled, truth, p)
        })
        .collect();
    let boot_mean = mean_compensated(&boot);
    let var = sum_compensated(boot.iter().map(|b| (b - boot_mean).powi(2))) / (BOOTSTRAP_RESAMPLES - 1) as f64;
    RiskReport {
        estimator: label,
        p,
        replications: r,
        truth,
        risk,
        standard_error: var.sqrt(),
        bias_part: (mean - truth).abs(),
        stoch_part: stoch,
        mean_estimate: mean,
        mean_selected_volume: selected_volume.map(mean_compensated),
    }
}

fn check_risk_params(p: f64, replications: usize, truth: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Parameter(format!("p must be at least 1, got {p}")));
    }
    if replications < 2 {
        return Err(Error::Parameter("at least two replications are required".into()));
    }
    if !truth.is_finite() {
        return Err(Error::Config("true density value is not finite; compute it with the reference-density operation".into()));
    }
    Ok(())
}

/// Run every estimator on the same `replications` stationary samples.
/// Replication `r` uses seed `derive_seed(root_seed, r)`.
pub fn replicate_estimates(
    sampler: &StationarySampler,
    kernel: &Kernel,
    estimators: &[Estimator],
    x0: &[f64],
    replications: usize,
    root_seed: u64,
    exec: Execution,
) -> Result<RiskSamples> {
    let grid_obs = sampler.grid();
    let model = sampler.model();
    let needs_grid = estimators.iter().any(|e| matches!(e, Estimator::Adaptive { .. }));
    let grid =
        if needs_grid { Some(BandwidthGrid::build(grid_obs.n(), grid_obs.delta_n(), model.hurst(), model.dim(), kernel)?) } else { None };
    let fixed: Vec<Bandwidth> =
        estimators.iter().filter_map(|e| if let Estimator::Fixed(h) = e { Some(h.clone()) } else { None }).collect();
    let grid_bw = grid.as_ref().map(|g| g.bandwidths()).unwrap_or_default();
    let all_bw: Vec<Bandwidth> = fixed.iter().chain(&grid_bw).cloned().collect();
    let majorant_sets: Vec<Option<Vec<f64>>> = estimators
        .iter()
        .map(|e| match (e, &grid) {
            (Estimator::Adaptive { kappa, p }, Some(g)) => Some(majorants(g, kappa.resolve(grid_obs.n()), *p)),
            _ => None,
        })
        .collect();

    // per replication: one value and optional selected V_h per estimator
    let per_rep = try_map_indexed(replications, exec, |r| -> Result<Vec<(f64, Option<f64>)>> {
        let data = sampler.sample(derive_seed(root_seed, r as u64))?;
        let est = estimate_many(&data, kernel, &all_bw, x0)?;
        let (fixed_est, grid_est) = est.split_at(fixed.len());
        let mut fixed_iter = fixed_est.iter();
        let mut out = Vec::with_capacity(estimators.len());
        for (e, maj) in estimators.iter().zip(&majorant_sets) {
            out.push(match e {
                Estimator::Fixed(_) => (*fixed_iter.next().expect("fixed estimate"), None),
                Estimator::Constant(v) => (*v, None),
                Estimator::Adaptive { kappa, p } => {
                    let g = grid.as_ref().expect("grid built for adaptive estimators");
                    let m = maj.as_ref().expect("majorants for adaptive estimators");
                    let diag = select_from_estimates(g, x0, grid_est, m, kappa.resolve(grid_obs.n()), *p);
                    (diag.selected_estimate(), Some(diag.selected_member().v_h))
                }
            });
        }
        Ok(out)
    })?;

    let mut values = vec![Vec::with_capacity(replications); estimators.len()];
    let mut selected_volume: Vec<Option<Vec<f64>>> =
        estimators.iter().map(|e| matches!(e, Estimator::Adaptive { .. }).then(|| Vec::with_capacity(replications))).collect();
    for rep in per_rep {
        for (e, (v, vol)) in rep.into_iter().enumerate() {
            values[e].push(v);
            if let (Some(acc), Some(vol)) = (selected_volume[e].as_mut(), vol) {
                acc.push(vol);
            }
        }
    }
    Ok(RiskSamples { values, selected_volume })
}

/// Monte Carlo estimate of `R_n = (E|f̃(x₀) − f(x₀)|^p)^{1/p}` for each
/// estimator, paired across estimators.
#[allow(clippy::too_many_arguments)]
pub fn mc_pointwise_risk(
    sampler: &StationarySampler,
    kernel: &Kernel,
    estimators: &[Estimator],
    x0: &[f64],
    p: f64,
    replications: usize,
    root_seed: u64,
    truth: f64,
    exec: Execution,
) -> Result<Vec<RiskReport>> {
    check_risk_params(p, replications, truth)?;
    let samples = replicate_estimates(sampler, kernel, estimators, x0, replications, root_seed, exec)?;
    Ok(estimators
        .iter()
        .enumerate()
        .map(|(e, est)| {
            summarize(
                est.label(),
                &samples.values[e],
                truth,
                p,
                derive_seed(root_seed ^ 0xb007_57ab, e as u64),
                samples.selected_volume[e].as_deref(),
            )
        })
        .collect())
}

/// `∫ K_h(x₀ − y) f(y) dy` for a product of one-dimensional densities,
/// by Gauss–Legendre quadrature in each coordinate.
pub fn smoothed_density_product(kernel: &Kernel, h: &Bandwidth, x0: &[f64], marginals: &[&dyn Fn(f64) -> f64]) -> f64 {
    let gl = crate::quad::GaussLegendre::new(64);
    h.as_slice()
        .iter()
        .zip(x0)
        .zip(marginals)
        .map(|((&hi, &xi), f)| gl.integrate_composite(-1.0, 1.0, 4, |v| kernel.eval(v) * f(xi - hi * v)))
        .product()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::Hurst;
    use crate::sde::{ModelSpec, SamplingGrid, StationaryOptions};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn data(values: Vec<f64>, dim: usize) -> ObservationSet {
        let n = values.len() / dim;
        ObservationSet::from_values(values, dim, SamplingGrid::new(n, 1.0).unwrap(), 0.0, 0.01).unwrap()
    }

    fn bw(h: &[f64]) -> Bandwidth {
        Bandwidth::new(h.to_vec()).unwrap()
    }

    #[test]
    fn single_observation_at_point() {
        let k = Kernel::epanechnikov();
        let e = estimate_at(&data(vec![0.3], 1), &k, &bw(&[1.0]), &[0.3]).unwrap();
        assert_relative_eq!(e.value, 0.75);
    }

    #[test]
    fn observations_outside_support() {
        let k = Kernel::epanechnikov();
        let e = estimate_at(&data(vec![5.0, -3.0, 2.0], 1), &k, &bw(&[0.5]), &[0.0]).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn two_observations_one_in_support() {
        let k = Kernel::epanechnikov();
        let e = estimate_at(&data(vec![1.0, 3.0], 1), &k, &bw(&[1.0]), &[1.0]).unwrap();
        assert_relative_eq!(e.value, 0.375);
    }

    #[test]
    fn dimension_mismatch() {
        let k = Kernel::epanechnikov();
        assert!(matches!(estimate_at(&data(vec![0.0, 0.0], 2), &k, &bw(&[1.0]), &[0.0, 0.0]), Err(Error::Input(_))));
        assert!(matches!(estimate_at(&data(vec![0.0, 0.0], 2), &k, &bw(&[1.0, 1.0]), &[0.0]), Err(Error::Input(_))));
    }

    #[test]
    fn many_matches_single() {
        let k = Kernel::new(3).unwrap();
        let values: Vec<f64> = (0..200).map(|i| ((i as f64) * 0.731).sin() * 1.3).collect();
        let obs = data(values, 2);
        let hs = vec![bw(&[1.0, 0.5]), bw(&[0.2, 0.5]), bw(&[0.2, 1.0]), bw(&[0.7, 0.7])];
        let many = estimate_many(&obs, &k, &hs, &[0.1, -0.2]).unwrap();
        for (h, m) in hs.iter().zip(&many) {
            let direct: f64 = obs.rows().map(|x| crate::kernels::eval_product(&k, h, &[0.1 - x[0], -0.2 - x[1]])).sum::<f64>() / 100.0;
            assert_relative_eq!(*m, direct, epsilon = 1e-14);
        }
    }

    #[test]
    fn constant_estimator_has_zero_risk() {
        let model = ModelSpec::fractional_ou(1.0, 1.0, Hurst::new(0.5).unwrap()).unwrap();
        let opts = StationaryOptions { burn_in: Some(1.0), sim_step: Some(0.1), ..Default::default() };
        let sampler = StationarySampler::new(&model, SamplingGrid::new(20, 0.5).unwrap(), &opts).unwrap();
        let k = Kernel::epanechnikov();
        let reports =
            mc_pointwise_risk(&sampler, &k, &[Estimator::Constant(0.42)], &[0.0], 2.0, 8, 1, 0.42, Execution::Sequential).unwrap();
        assert_eq!(reports[0].risk, 0.0);
        assert_eq!(reports[0].standard_error, 0.0);
        assert_eq!(reports[0].bias_part, 0.0);
    }

    #[test]
    fn risk_is_deterministic_and_paired() {
        let model = ModelSpec::fractional_ou(1.0, 1.0, Hurst::new(0.6).unwrap()).unwrap();
        let opts = StationaryOptions { burn_in: Some(5.0), sim_step: Some(0.05), ..Default::default() };
        let sampler = StationarySampler::new(&model, SamplingGrid::new(100, 0.5).unwrap(), &opts).unwrap();
        let k = Kernel::epanechnikov();
        let ests = [Estimator::Fixed(bw(&[0.5])), Estimator::Adaptive { kappa: Kappa::Fixed(1.0), p: 2.0 }];
        let a = mc_pointwise_risk(&sampler, &k, &ests, &[0.0], 2.0, 12, 9, 0.5, Execution::Parallel).unwrap();
        let b = mc_pointwise_risk(&sampler, &k, &ests, &[0.0], 2.0, 12, 9, 0.5, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        for rep in &a {
            assert!(rep.risk <= rep.bias_part + rep.stoch_part + 1e-12);
        }
        assert!(a[1].mean_selected_volume.is_some());
    }

    #[test]
    fn risk_rejects_missing_truth() {
        let model = ModelSpec::fractional_ou(1.0, 1.0, Hurst::new(0.5).unwrap()).unwrap();
        let sampler = StationarySampler::new(&model, SamplingGrid::new(4, 0.5).unwrap(), &StationaryOptions::default()).unwrap();
        let err =
            mc_pointwise_risk(&sampler, &Kernel::epanechnikov(), &[], &[0.0], 2.0, 4, 0, f64::NAN, Execution::Sequential).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn smoothed_gaussian_bias_scales_quadratically() {
        let k = Kernel::epanechnikov();
        let s2 = 0.5f64;
        let f = |x: f64| (-x * x / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt();
        let truth = f(0.0);
        let bias: Vec<f64> =
            [0.4, 0.2, 0.1].iter().map(|&h| (smoothed_density_product(&k, &bw(&[h]), &[0.0], &[&f]) - truth).abs()).collect();
        let slope = (bias[2].ln() - bias[0].ln()) / (0.1f64.ln() - 0.4f64.ln());
        assert!((slope - 2.0).abs() < 0.3, "slope {slope}");
    }

    proptest! {
        #[test]
        fn concatenation_is_weighted_average(a in prop::collection::vec(-2.0f64..2.0, 1..40), b in prop::collection::vec(-2.0f64..2.0, 1..40), h in 0.05f64..1.0, x0 in -1.0f64..1.0) {
            let k = Kernel::epanechnikov();
            let ea = estimate_at(&data(a.clone(), 1), &k, &bw(&[h]), &[x0]).unwrap().value;
            let eb = estimate_at(&data(b.clone(), 1), &k, &bw(&[h]), &[x0]).unwrap().value;
            let joined: Vec<f64> = a.iter().chain(&b).copied().collect();
            let ej = estimate_at(&data(joined, 1), &k, &bw(&[h]), &[x0]).unwrap().value;
            let (na, nb) = (a.len() as f64, b.len() as f64);
            prop_assert!((ej - (na * ea + nb * eb) / (na + nb)).abs() < 1e-12 * (1.0 + ej.abs()));
        }

        #[test]
        fn estimate_bounded_by_sup_norm(v in prop::collection::vec(-1.0f64..1.0, 2..60), h0 in 0.05f64..1.0, h1 in 0.05f64..1.0, order in 0usize..5) {
            let mut v = v;
            if v.len() % 2 == 1 { v.pop(); }
            let k = Kernel::new(order).unwrap();
            let h = bw(&[h0, h1]);
            let e = estimate_at(&data(v, 2), &k, &h, &[0.0, 0.1]).unwrap().value;
            prop_assert!(e.abs() <= k.sup_norm().powi(2) / (h0 * h1) * (1.0 + 1e-12));
        }
    }
}
