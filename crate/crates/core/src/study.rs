//! Declarative studies: configuration, execution and result files.
//!
//! A study is described by one TOML document (see `README.md` for the
//! keys). Results are written as flat CSV plus nested JSON with a schema
//! version; timing goes to a separate `timing.json` so the result files
//! are byte-for-byte reproducible from the configuration and seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::concentration::{empirical_tail, Centering, Observable, TailReport};
use crate::density::{mc_pointwise_risk, Estimator, RiskReport};
use crate::error::{Error, Result};
use crate::fbm::{Hurst, SynthesisConfig};
use crate::glselect::{BandwidthGrid, Kappa};
use crate::kernels::{Bandwidth, Kernel};
use crate::rates::{beta_h, gamma_of, oracle_bandwidth, rate_bundle, RateBundle};
use crate::reference::{reference_density, LongRunSettings};
use crate::replicate::Execution;
use crate::sde::{ModelSpec, SamplingGrid, StationaryOptions, StationarySampler, ZooDrift};
use crate::seed::derive_seed;

pub const SCHEMA_VERSION: u32 = 1;

/// `σ` as a scalar multiple of the identity or a full matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaConfig {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `fou`, `linear` or `tanh`.
    pub kind: String,
    pub hurst: f64,
    pub sigma: SigmaConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        let hurst = Hurst::new(self.hurst).map_err(|e| Error::Config(e.to_string()))?;
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::Config(format!("model kind {:?} requires `{name}`", self.kind)));
        let zoo = match self.kind.as_str() {
            "fou" => ZooDrift::FractionalOu { theta: need(self.theta, "theta")?, dim: self.dim.unwrap_or(1) },
            "tanh" => ZooDrift::TanhConvex { theta: need(self.theta, "theta")?, c: need(self.c, "c")?, dim: self.dim.unwrap_or(1) },
            "linear" => ZooDrift::Linear {
                matrix: self.matrix.clone().ok_or_else(|| Error::Config("model kind \"linear\" requires `matrix`".into()))?,
            },
            other => return Err(Error::Config(format!("unknown model kind {other:?}; expected fou, linear or tanh"))),
        };
        let d = crate::sde::Drift::dim(&zoo);
        let sigma = match &self.sigma {
            SigmaConfig::Scalar(s) => DMatrix::from_diagonal_element(d, d, *s),
            SigmaConfig::Matrix(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::Config(format!("sigma must be {d}x{d}")));
                }
                DMatrix::from_fn(d, d, |i, j| rows[i][j])
            }
        };
        ModelSpec::from_zoo(zoo, sigma, hurst).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_step: Option<f64>,
    #[serde(default = "default_cholesky_below")]
    pub cholesky_below: usize,
}

fn default_cholesky_below() -> usize {
    SynthesisConfig::default().cholesky_below
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig { burn_in: None, sim_step: None, cholesky_below: default_cholesky_below() }
    }
}

impl SimulationConfig {
    pub fn options(&self) -> StationaryOptions {
        StationaryOptions {
            burn_in: self.burn_in,
            sim_step: self.sim_step,
            x0: None,
            synthesis: SynthesisConfig { cholesky_below: self.cholesky_below, ..SynthesisConfig::default() },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub n: usize,
    pub delta_n: f64,
}

fn default_p() -> f64 {
    2.0
}
fn default_order() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default = "default_order")]
    pub kernel_order: usize,
    #[serde(default = "default_p")]
    pub p: f64,
    /// Evaluation points; defaults to the origin.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x0: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fixed_h: Vec<Vec<f64>>,
    /// Smoothness for the oracle bandwidth `h(s)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_s: Option<Vec<f64>>,
    /// κ values (`"log-n"` or a number) for the data-driven rule.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub adaptive_kappa: Vec<String>,
    /// Also evaluate every member of the selection grid.
    #[serde(default)]
    pub grid_members: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            kernel_order: 1,
            p: 2.0,
            x0: Vec::new(),
            fixed_h: Vec::new(),
            oracle_s: None,
            adaptive_kappa: Vec::new(),
            grid_members: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationConfig {
    /// Observable spec, e.g. `identity-clip`, `proj-0`, `kernel:0.5,0`.
    pub observable: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_grid: Option<Vec<f64>>,
    /// Known mean of the observable; pooled replication mean otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_mean: Option<f64>,
    #[serde(default = "default_safety")]
    pub safety: f64,
}

fn default_safety() -> f64 {
    1.5
}

fn default_seed() -> u64 {
    20_240_601
}
fn default_replications() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub model: ModelConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    pub grid: Vec<GridPoint>,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concentration: Option<ConcentrationConfig>,
    /// Simulated reference settings for models without a closed form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<LongRunSettings>,
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: StudyConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Evaluation points with the origin as default.
    pub fn points(&self, dim: usize) -> Vec<Vec<f64>> {
        if self.estimator.x0.is_empty() {
            vec![vec![0.0; dim]]
        } else {
            self.estimator.x0.clone()
        }
    }

    pub fn kappas(&self) -> Result<Vec<Kappa>> {
        self.estimator.adaptive_kappa.iter().map(|k| k.parse::<Kappa>().map_err(|e| Error::Config(e.to_string()))).collect()
    }

    /// Cross-field checks; returns the built model.
    pub fn validate(&self) -> Result<ModelSpec> {
        let model = self.model.build()?;
        let d = model.dim();
        if self.grid.is_empty() {
            return Err(Error::Config("at least one grid point is required".into()));
        }
        for g in &self.grid {
            SamplingGrid::new(g.n, g.delta_n).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.replications < 2 {
            return Err(Error::Config("replications must be at least 2".into()));
        }
        let e = &self.estimator;
        if !(e.p >= 1.0) {
            return Err(Error::Config(format!("p must be at least 1, got {}", e.p)));
        }
        Kernel::new(e.kernel_order).map_err(|e| Error::Config(e.to_string()))?;
        for x in self.points(d) {
            if x.len() != d {
                return Err(Error::Config(format!("x0 {x:?} does not have dimension {d}")));
            }
        }
        for h in &e.fixed_h {
            if h.len() != d {
                return Err(Error::Config(format!("fixed bandwidth {h:?} does not have dimension {d}")));
            }
            Bandwidth::new(h.clone()).map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(s) = &e.oracle_s {
            if s.len() != d {
                return Err(Error::Config(format!("oracle_s must have {d} entries")));
            }
            gamma_of(s).map_err(|e| Error::Config(e.to_string()))?;
        }
        let kappas = self.kappas()?;
        if !kappas.is_empty() || e.grid_members {
            let beta = beta_h(model.hurst());
            for g in &self.grid {
                if beta * (g.n as f64 * g.delta_n).ln() < 1.0 {
                    return Err(Error::Config(format!(
                        "(n*delta_n)^beta_H < e at n={}, delta_n={}; the selection grid is empty",
                        g.n, g.delta_n
                    )));
                }
            }
        }
        if let Some(c) = &self.concentration {
            Observable::parse(&c.observable, d).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub n: usize,
    pub delta_n: f64,
    pub horizon: f64,
    pub x0: Vec<f64>,
    /// Groups rows across grid points (e.g. the oracle bandwidth, whose
    /// value changes with `n`).
    pub family: String,
    pub estimator: String,
    pub h: Option<Vec<f64>>,
    pub replications: usize,
    pub truth: f64,
    pub risk: f64,
    pub standard_error: f64,
    pub bias: f64,
    pub stoch: f64,
    pub mean_estimate: f64,
    pub mean_selected_volume: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub x0: Vec<f64>,
    pub family: String,
    /// Least-squares slope of `log risk` on `log(nΔ_n)`.
    pub slope: f64,
    /// Standard error from the regression residuals (`None` with two points).
    pub standard_error: Option<f64>,
    /// `−β_H γ(s)` for the oracle family.
    pub theoretical: Option<f64>,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRates {
    pub n: usize,
    pub delta_n: f64,
    pub rates: RateBundle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateStudyResult {
    pub schema_version: u32,
    pub software_version: String,
    pub config: StudyConfig,
    pub rows: Vec<RiskRow>,
    pub slopes: Vec<SlopeFit>,
    pub rates: Vec<GridRates>,
}

/// Ordinary least squares `y = a + b x`; returns `(b, se(b))`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Option<(f64, Option<f64>)> {
    let m = x.len();
    if m < 2 {
        return None;
    }
    let xm = x.iter().sum::<f64>() / m as f64;
    let ym = y.iter().sum::<f64>() / m as f64;
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let b = x.iter().zip(y).map(|(a, c)| (a - xm) * (c - ym)).sum::<f64>() / sxx;
    let a = ym - b * xm;
    let se = (m > 2).then(|| {
        let sse: f64 = x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum();
        (sse / (m - 2) as f64 / sxx).sqrt()
    });
    Some((b, se))
}

fn rows_from_reports(g: &GridPoint, x0: &[f64], families: &[(String, Option<Vec<f64>>)], reports: Vec<RiskReport>) -> Vec<RiskRow> {
    reports
        .into_iter()
        .zip(families)
        .map(|(r, (family, h))| RiskRow {
            n: g.n,
            delta_n: g.delta_n,
            horizon: g.n as f64 * g.delta_n,
            x0: x0.to_vec(),
            family: family.clone(),
            estimator: r.estimator,
            h: h.clone(),
            replications: r.replications,
            truth: r.truth,
            risk: r.risk,
            standard_error: r.standard_error,
            bias: r.bias_part,
            stoch: r.stoch_part,
            mean_estimate: r.mean_estimate,
            mean_selected_volume: r.mean_selected_volume,
        })
        .collect()
}

/// Monte Carlo risk at every grid point and evaluation point, then the
/// log-log slope of each estimator family across grid points.
pub fn run_rate_study(config: &StudyConfig, cache_dir: Option<&Path>, exec: Execution) -> Result<RateStudyResult> {
    let model = config.validate()?;
    let d = model.dim();
    let kernel = Kernel::new(config.estimator.kernel_order)?;
    let kappas = config.kappas()?;
    let options = config.simulation.options();
    let reference = config.reference.clone().map(|mut r| {
        r.cache_dir = cache_dir.map(Path::to_path_buf);
        r
    });
    let points = config.points(d);
    let truths: Vec<f64> = points.iter().map(|x| reference_density(&model, x, reference.as_ref(), exec)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut rates = Vec::new();
    for (gi, g) in config.grid.iter().enumerate() {
        let grid = SamplingGrid::new(g.n, g.delta_n)?;
        let sampler = StationarySampler::new(&model, grid, &options)?;
        let mut estimators = Vec::new();
        let mut families: Vec<(String, Option<Vec<f64>>)> = Vec::new();
        for h in &config.estimator.fixed_h {
            let b = Bandwidth::new(h.clone())?;
            families.push((Estimator::Fixed(b.clone()).label(), Some(h.clone())));
            estimators.push(Estimator::Fixed(b));
        }
        if let Some(s) = &config.estimator.oracle_s {
            let b = oracle_bandwidth(s, g.n, g.delta_n, model.hurst())?;
            families.push((format!("oracle[s={s:?}]"), Some(b.as_slice().to_vec())));
            estimators.push(Estimator::Fixed(b));
            rates.push(GridRates { n: g.n, delta_n: g.delta_n, rates: rate_bundle(model.hurst(), s, g.n, g.delta_n)? });
        }
        if config.estimator.grid_members {
            let bg = BandwidthGrid::build(g.n, g.delta_n, model.hurst(), d, &kernel)?;
            for m in bg.members() {
                families.push((format!("grid[l={:?}]", m.levels), Some(m.h.as_slice().to_vec())));
                estimators.push(Estimator::Fixed(m.h.clone()));
            }
        }
        for k in &kappas {
            let e = Estimator::Adaptive { kappa: *k, p: config.estimator.p };
            families.push((e.label(), None));
            estimators.push(e);
        }
        for (xi, (x0, truth)) in points.iter().zip(&truths).enumerate() {
            let seed = derive_seed(derive_seed(config.seed, gi as u64), xi as u64);
            let reports =
                mc_pointwise_risk(&sampler, &kernel, &estimators, x0, config.estimator.p, config.replications, seed, *truth, exec)?;
            let mut block = rows_from_reports(g, x0, &families, reports);
            if config.estimator.grid_members {
                let best = block.iter().filter(|r| r.family.starts_with("grid[")).min_by(|a, b| a.risk.total_cmp(&b.risk)).cloned();
                if let Some(mut best) = best {
                    best.family = "grid-best".into();
                    block.push(best);
                }
            }
            rows.extend(block);
        }
    }
    let slopes = fit_slopes(&rows, config, &model);
    Ok(RateStudyResult {
        schema_version: SCHEMA_VERSION,
        software_version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        rows,
        slopes,
        rates,
    })
}

fn fit_slopes(rows: &[RiskRow], config: &StudyConfig, model: &ModelSpec) -> Vec<SlopeFit> {
    type Series = (Vec<f64>, Vec<f64>, Vec<f64>);
    let mut groups: BTreeMap<(String, String), Series> = BTreeMap::new();
    for r in rows {
        if r.family.starts_with("grid[") || !(r.risk > 0.0) {
            continue;
        }
        let key = (format!("{:?}", r.x0), r.family.clone());
        let e = groups.entry(key).or_insert_with(|| (r.x0.clone(), Vec::new(), Vec::new()));
        e.1.push(r.horizon.ln());
        e.2.push(r.risk.ln());
    }
    let theoretical = config.estimator.oracle_s.as_ref().and_then(|s| gamma_of(s).ok()).map(|(_, g)| -beta_h(model.hurst()) * g);
    groups
        .into_iter()
        .filter_map(|((_, family), (x0, x, y))| {
            let (slope, se) = ols_slope(&x, &y)?;
            Some(SlopeFit {
                x0,
                theoretical: if family.starts_with("oracle[") { theoretical } else { None },
                family,
                slope,
                standard_error: se,
                points: x.len(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationStudyResult {
    pub schema_version: u32,
    pub software_version: String,
    pub config: StudyConfig,
    pub reports: Vec<TailReport>,
    /// `bound_holds(safety)` per report (`None` when no fit was possible).
    pub bound_holds: Vec<Option<bool>>,
    /// `max Ĉ / min Ĉ` over grid points with a fit.
    pub c_hat_spread: Option<f64>,
}

pub fn run_concentration_study(config: &StudyConfig, exec: Execution) -> Result<ConcentrationStudyResult> {
    let model = config.validate()?;
    let conc = config.concentration.as_ref().ok_or_else(|| Error::Config("missing [concentration] section".into()))?;
    let g = Observable::parse(&conc.observable, model.dim())?;
    let centering = conc.known_mean.map(Centering::Known).unwrap_or(Centering::Pooled);
    let options = config.simulation.options();
    let mut reports = Vec::new();
    for (gi, gp) in config.grid.iter().enumerate() {
        let sampler = StationarySampler::new(&model, SamplingGrid::new(gp.n, gp.delta_n)?, &options)?;
        let seed = derive_seed(config.seed, gi as u64);
        reports.push(empirical_tail(&sampler, &g, conc.r_grid.as_deref(), config.replications, seed, centering, exec)?);
    }
    let bound_holds = reports.iter().map(|r| r.bound_holds(conc.safety)).collect();
    let cs: Vec<f64> = reports.iter().filter_map(|r| r.fit.as_ref().map(|f| f.c_hat)).collect();
    let c_hat_spread = (cs.len() >= 2).then(|| cs.iter().copied().fold(f64::MIN, f64::max) / cs.iter().copied().fold(f64::MAX, f64::min));
    Ok(ConcentrationStudyResult {
        schema_version: SCHEMA_VERSION,
        software_version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        reports,
        bound_holds,
        c_hat_spread,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(";")
}

pub const RISK_CSV_HEADER: &str =
    "n,delta_n,horizon,x0,family,estimator,h,replications,truth,risk,se,bias,stoch,mean_estimate,selected_volume";

pub fn risk_csv(rows: &[RiskRow]) -> String {
    let mut out = String::from(RISK_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.delta_n,
            r.horizon,
            fmt_vec(&r.x0),
            r.family.replace(',', ";"),
            r.estimator.replace(',', ";"),
            r.h.as_deref().map(fmt_vec).unwrap_or_default(),
            r.replications,
            r.truth,
            r.risk,
            r.standard_error,
            r.bias,
            r.stoch,
            r.mean_estimate,
            fmt_opt(r.mean_selected_volume)
        );
    }
    out
}

pub const TAIL_CSV_HEADER: &str = "n,delta_n,r,p_hat,wilson_lo,wilson_hi,p_hat_two_sided,bound";

pub fn tail_csv(reports: &[TailReport]) -> String {
    let mut out = String::from(TAIL_CSV_HEADER);
    out.push('\n');
    for rep in reports {
        for i in 0..rep.r.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                rep.n, rep.delta_n, rep.r[i], rep.p_hat[i], rep.wilson_lo[i], rep.wilson_hi[i], rep.p_hat_two_sided[i], rep.bound[i]
            );
        }
    }
    out
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Write `risk.csv` and `risk.json`.
pub fn emit_rate_study(result: &RateStudyResult, dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(vec![write(dir, "risk.csv", &risk_csv(&result.rows))?, write(dir, "risk.json", &to_json(result)?)?])
}

/// Write `tail.csv` and `tail.json`.
pub fn emit_concentration_study(result: &ConcentrationStudyResult, dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(vec![write(dir, "tail.csv", &tail_csv(&result.reports))?, write(dir, "tail.json", &to_json(result)?)?])
}

/// Wall-clock sidecar, kept apart from the reproducible outputs.
pub fn emit_timing(dir: &Path, command: &str, seconds: f64) -> Result<PathBuf> {
    #[derive(Serialize)]
    struct Timing<'a> {
        command: &'a str,
        wall_clock_seconds: f64,
        threads: usize,
    }
    let threads = if cfg!(feature = "parallel") { rayon_threads() } else { 1 };
    write(dir, "timing.json", &to_json(&Timing { command, wall_clock_seconds: seconds, threads })?)
}

#[cfg(feature = "parallel")]
fn rayon_threads() -> usize {
    rayon::current_num_threads()
}

#[cfg(not(feature = "parallel"))]
fn rayon_threads() -> usize {
    1
}
