use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fracdens::concentration::Observable;
use fracdens::fbm::{cumulate_to_fbm, generate_fgn, Hurst};
use fracdens::glselect::{select, BandwidthGrid, Kappa, SelectionDiagnostics};
use fracdens::kernels::Kernel;
use fracdens::rates::{
    adaptive_bandwidth_star, oracle_bandwidth, rate_bundle, star_in_grid, theorem_constants, AdaptiveStar, HolderClass, RateBundle,
    TheoremConstants,
};
use fracdens::replicate::{init_threads, Execution};
use fracdens::sde::{sample_stationary, ObservationSet, SamplingGrid};
use fracdens::study::{self, ConcentrationConfig, GridPoint, ModelConfig, SigmaConfig, StudyConfig};
use fracdens::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "fracdens", version, about = "Density estimation for stationary fractional SDEs")]
struct Cli {
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Study configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for result files.
    #[arg(long, global = true, default_value = "results")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample an fBm path; CSV `t,x_1..x_d`.
    Fbm {
        #[arg(long)]
        hurst: f64,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// Output file (stdout when absent).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Sample stationary observations; CSV `k,t_k,x_1..x_d`.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the bandwidth selection rule on a `simulate` CSV; JSON diagnostics.
    Select {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        hurst: f64,
        /// Evaluation point, comma separated (default: origin).
        #[arg(long, value_delimiter = ',')]
        x0: Option<Vec<f64>>,
        /// Number or `log-n`.
        #[arg(long, default_value = "1")]
        kappa: String,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        #[arg(long, default_value_t = 1)]
        kernel_order: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Monte Carlo risk over a grid of (n, Δ_n); writes risk.csv and risk.json.
    RiskStudy {
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Rate exponents, bandwidths and explicit constants; JSON.
    Rates {
        #[arg(long)]
        hurst: f64,
        /// Smoothness per coordinate, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        s: Vec<f64>,
        /// Hölder radius per coordinate (default 1).
        #[arg(long, value_delimiter = ',')]
        l: Option<Vec<f64>>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        delta_n: f64,
        #[arg(long, default_value = "log-n")]
        kappa: String,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        /// Concentration constant; constants are reported only when given.
        #[arg(long)]
        c_hat: Option<f64>,
        #[arg(long, default_value_t = 1)]
        kernel_order: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Empirical tail of a Lipschitz functional; writes tail.csv and tail.json.
    Concentration {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// `identity-clip[:B]`, `proj-I`, `constant:C` or `kernel:H,x0..`.
        #[arg(long)]
        observable: Option<String>,
        #[arg(long)]
        replications: Option<usize>,
    },
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// `fou`, `linear` or `tanh`.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    hurst: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    /// Scalar diffusion coefficient (σ·I).
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    burn_in: Option<f64>,
    #[arg(long)]
    sim_step: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct GridArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    delta_n: Option<f64>,
}

fn load_config(path: Option<&Path>) -> Result<Option<StudyConfig>> {
    path.map(StudyConfig::load).transpose()
}

/// Config file merged with command-line overrides.
fn merged_config(cli: &Cli, model: &ModelArgs, grid: &GridArgs) -> Result<StudyConfig> {
    let mut cfg = match load_config(cli.config.as_deref())? {
        Some(c) => c,
        None => {
            let kind = model.model.clone().unwrap_or_else(|| "fou".into());
            let hurst = model.hurst.ok_or_else(|| Error::Config("--hurst is required without --config".into()))?;
            let (n, delta_n) = match (grid.n, grid.delta_n) {
                (Some(n), Some(d)) => (n, d),
                _ => return Err(Error::Config("--n and --delta-n are required without --config".into())),
            };
            StudyConfig::from_toml(&format!(
                "[model]\nkind = {kind:?}\nhurst = {hurst}\nsigma = 1.0\n\n[[grid]]\nn = {n}\ndelta_n = {delta_n}\n"
            ))?
        }
    };
    let m: &mut ModelConfig = &mut cfg.model;
    if let Some(k) = &model.model {
        m.kind = k.clone();
    }
    if let Some(h) = model.hurst {
        m.hurst = h;
    }
    if model.theta.is_some() {
        m.theta = model.theta;
    }
    if model.c.is_some() {
        m.c = model.c;
    }
    if let Some(s) = model.sigma {
        m.sigma = SigmaConfig::Scalar(s);
    }
    if model.dim.is_some() {
        m.dim = model.dim;
    }
    if m.kind != "linear" && m.theta.is_none() {
        m.theta = Some(1.0);
    }
    if model.burn_in.is_some() {
        cfg.simulation.burn_in = model.burn_in;
    }
    if model.sim_step.is_some() {
        cfg.simulation.sim_step = model.sim_step;
    }
    if let (Some(n), Some(delta_n)) = (grid.n, grid.delta_n) {
        cfg.grid = vec![GridPoint { n, delta_n }];
    } else if grid.n.is_some() || grid.delta_n.is_some() {
        return Err(Error::Config("--n and --delta-n must be given together".into()));
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn emit_text(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text)?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn parse_hurst(h: f64) -> Result<Hurst> {
    Hurst::new(h)
}

fn run_fbm(seed: u64, hurst: f64, steps: usize, step: f64, dim: usize, output: Option<&Path>) -> Result<()> {
    let path = cumulate_to_fbm(&generate_fgn(parse_hurst(hurst)?, steps, step, dim, seed)?);
    let mut out = String::from("t");
    for j in 1..=dim {
        let _ = write!(out, ",x_{j}");
    }
    out.push('\n');
    for k in 0..path.len() {
        let _ = write!(out, "{}", path.time(k));
        for v in path.row(k) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    emit_text(output, &out)
}

fn observations_csv(data: &ObservationSet) -> String {
    let mut out = String::from("k,t_k");
    for j in 1..=data.dim() {
        let _ = write!(out, ",x_{j}");
    }
    out.push('\n');
    let grid = data.grid();
    for (i, row) in data.rows().enumerate() {
        let _ = write!(out, "{},{}", i + 1, grid.time(i + 1));
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Parse a `k,t_k,x_1..x_d` file back into observations.
fn read_observations(path: &Path) -> Result<ObservationSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Input("empty observation file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "k" || cols[1] != "t_k" {
        return Err(Error::Input(format!("expected header k,t_k,x_1.., got {header:?}")));
    }
    let dim = cols.len() - 2;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|_| Error::Input(format!("line {}: cannot parse {f:?}", i + 2))))
            .collect::<Result<_>>()?;
        if fields.len() != cols.len() {
            return Err(Error::Input(format!("line {}: expected {} fields", i + 2, cols.len())));
        }
        times.push(fields[1]);
        values.extend_from_slice(&fields[2..]);
    }
    let n = times.len();
    if n == 0 {
        return Err(Error::Input("observation file has no rows".into()));
    }
    let delta_n = if n >= 2 { (times[n - 1] - times[0]) / (n - 1) as f64 } else { times[0] };
    let grid = SamplingGrid::new(n, delta_n)?;
    ObservationSet::from_values(values, dim, grid, 0.0, delta_n)
}

#[derive(Serialize)]
struct SelectOutput {
    n: usize,
    delta_n: f64,
    hurst: f64,
    kernel_order: usize,
    grid_size: usize,
    selected_h: Vec<f64>,
    selected_estimate: f64,
    diagnostics: SelectionDiagnostics,
}

fn run_select(input: &Path, hurst: f64, x0: Option<Vec<f64>>, kappa: &str, p: f64, order: usize, output: Option<&Path>) -> Result<()> {
    let data = read_observations(input)?;
    let hurst = parse_hurst(hurst)?;
    let kernel = Kernel::new(order)?;
    let x0 = x0.unwrap_or_else(|| vec![0.0; data.dim()]);
    let grid = BandwidthGrid::build(data.grid().n(), data.grid().delta_n(), hurst, data.dim(), &kernel)?;
    let kappa = kappa.parse::<Kappa>()?.resolve(data.grid().n());
    let diagnostics = select(&data, &kernel, &grid, &x0, kappa, p)?;
    let out = SelectOutput {
        n: data.grid().n(),
        delta_n: data.grid().delta_n(),
        hurst: hurst.value(),
        kernel_order: order,
        grid_size: grid.len(),
        selected_h: diagnostics.selected_bandwidth().as_slice().to_vec(),
        selected_estimate: diagnostics.selected_estimate(),
        diagnostics,
    };
    emit_text(output, &study::to_json(&out)?)
}

#[derive(Serialize)]
struct RatesOutput {
    rates: RateBundle,
    oracle_h: Vec<f64>,
    adaptive_star: Option<AdaptiveStar>,
    star_in_grid: Option<bool>,
    constants: Option<TheoremConstants>,
}

#[allow(clippy::too_many_arguments)]
fn run_rates(
    hurst: f64,
    s: Vec<f64>,
    l: Option<Vec<f64>>,
    n: usize,
    delta_n: f64,
    kappa: &str,
    p: f64,
    c_hat: Option<f64>,
    order: usize,
    output: Option<&Path>,
) -> Result<()> {
    let hurst = parse_hurst(hurst)?;
    let rates = rate_bundle(hurst, &s, n, delta_n)?;
    let oracle_h = oracle_bandwidth(&s, n, delta_n, hurst)?.as_slice().to_vec();
    let (adaptive_star, in_grid) = match adaptive_bandwidth_star(&s, n, delta_n, hurst) {
        Ok(star) => {
            let member = star_in_grid(&star, n, delta_n, hurst);
            (Some(star), Some(member))
        }
        Err(Error::Precondition(_)) => (None, None),
        Err(e) => return Err(e),
    };
    let constants = match c_hat {
        Some(c) => {
            let kernel = Kernel::new(order)?;
            let class = HolderClass::new(s.clone(), l.unwrap_or_else(|| vec![1.0; s.len()]))?;
            Some(theorem_constants(&kernel, &class, kappa.parse::<Kappa>()?.resolve(n), p, c, order)?)
        }
        None => None,
    };
    let out = RatesOutput { rates, oracle_h, adaptive_star, star_in_grid: in_grid, constants };
    emit_text(output, &study::to_json(&out)?)
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        init_threads(t);
    }
    let exec = Execution::Parallel;
    let seed = cli.seed.unwrap_or(20_240_601);
    match &cli.command {
        Command::Fbm { hurst, steps, step, dim, output } => run_fbm(seed, *hurst, *steps, *step, *dim, output.as_deref()),
        Command::Simulate { model, grid, output } => {
            let cfg = merged_config(cli, model, grid)?;
            let spec = cfg.validate()?;
            let g = cfg.grid[0];
            let data = sample_stationary(&spec, SamplingGrid::new(g.n, g.delta_n)?, &cfg.simulation.options(), cfg.seed)?;
            emit_text(output.as_deref(), &observations_csv(&data))
        }
        Command::Select { input, hurst, x0, kappa, p, kernel_order, output } => {
            run_select(input, *hurst, x0.clone(), kappa, *p, *kernel_order, output.as_deref())
        }
        Command::RiskStudy { replications } => {
            let mut cfg = load_config(cli.config.as_deref())?.ok_or_else(|| Error::Config("risk-study requires --config".into()))?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(r) = replications {
                cfg.replications = *r;
            }
            let start = Instant::now();
            let result = study::run_rate_study(&cfg, Some(&cli.out_dir.join("cache")), exec)?;
            for p in study::emit_rate_study(&result, &cli.out_dir)? {
                eprintln!("wrote {}", p.display());
            }
            study::emit_timing(&cli.out_dir, "risk-study", start.elapsed().as_secs_f64())?;
            Ok(())
        }
        Command::Rates { hurst, s, l, n, delta_n, kappa, p, c_hat, kernel_order, output } => {
            run_rates(*hurst, s.clone(), l.clone(), *n, *delta_n, kappa, *p, *c_hat, *kernel_order, output.as_deref())
        }
        Command::Concentration { model, grid, observable, replications } => {
            let mut cfg = merged_config(cli, model, grid)?;
            if let Some(r) = replications {
                cfg.replications = *r;
            }
            if let Some(o) = observable {
                match &mut cfg.concentration {
                    Some(c) => c.observable = o.clone(),
                    None => {
                        cfg.concentration = Some(ConcentrationConfig { observable: o.clone(), r_grid: None, known_mean: None, safety: 1.5 })
                    }
                }
            }
            if cfg.concentration.is_none() {
                cfg.concentration =
                    Some(ConcentrationConfig { observable: "identity-clip".into(), r_grid: None, known_mean: None, safety: 1.5 });
            }
            let dim = cfg.validate()?.dim();
            Observable::parse(&cfg.concentration.as_ref().map(|c| c.observable.clone()).unwrap_or_default(), dim)?;
            let start = Instant::now();
            let result = study::run_concentration_study(&cfg, exec)?;
            for p in study::emit_concentration_study(&result, &cli.out_dir)? {
                eprintln!("wrote {}", p.display());
            }
            study::emit_timing(&cli.out_dir, "concentration", start.elapsed().as_secs_f64())?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
