use std::path::{Path, PathBuf};
use std::process::ExitCode;

use belief_risk::harness::{
    render_svg, run_latency_sweep, run_sigma_sweep, run_spatial_field, write_csv, FieldSpec, SvgKind, SweepSpec,
    Table, DEFAULT_FIXED_LATENCY, DEFAULT_R_THR, DEFAULT_SIGMA_LEVELS,
};
use belief_risk::{
    generate_scenario, load_scenario, serialize_scenario, Covariance2, DegradationParams, RiskEngine, RiskValue,
    Scenario, ScenarioKind,
};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] belief_risk::Error),
    #[error("cannot read scenario {path}: {source}")]
    ReadScenario { path: PathBuf, source: std::io::Error },
    #[error("estimation failed at sigma = {0}")]
    FlaggedRows(String),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use belief_risk::Error as E;
        match self {
            CliError::Core(E::EstimationFailed(_) | E::SamplingExhausted { .. }) | CliError::FlaggedRows(_) => 3,
            _ => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "belief-risk", version, about = "Residual risk of degraded perception under ego localization uncertainty")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ScenarioArg {
    /// Scenario config path, or `builtin:<kind>[@<layout seed>]` with kind one of
    /// straight_road_a, straight_road_b, t_section, complex_intersection
    #[arg(long)]
    scenario: String,
}

#[derive(Args, Clone)]
struct Outputs {
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_svg: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Deterministic residual risk at the nominal ego pose
    Eval {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = DEFAULT_FIXED_LATENCY)]
        latency: f64,
        /// Opponent position perception error, meters along track
        #[arg(long, default_value_t = 0.0)]
        pos_error: f64,
        /// Opponent speed perception error, m/s
        #[arg(long, default_value_t = 0.0)]
        vel_error: f64,
    },
    /// Mean, spread and exceedance of the residual risk per localization sigma
    SweepSigma {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_FIXED_LATENCY)]
        latency: f64,
        /// Exceedance threshold
        #[arg(long, default_value_t = DEFAULT_R_THR)]
        rthr: f64,
        /// Comma-separated sigma levels in meters
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
        #[command(flatten)]
        out: Outputs,
    },
    /// Residual risk at the nominal pose per latency, with sigma = 0
    SweepLatency {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Comma-separated latencies in seconds (default 0, 0.1, .., 1)
        #[arg(long, value_delimiter = ',')]
        latency: Option<Vec<f64>>,
        #[command(flatten)]
        out: Outputs,
    },
    /// Residual risk with the ego moved over a grid around its nominal pose
    Field {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = DEFAULT_FIXED_LATENCY)]
        latency: f64,
        /// Cell size in meters
        #[arg(long, default_value_t = 0.5)]
        cell: f64,
        /// Cells on each side of the nominal pose along x and y
        #[arg(long, value_delimiter = ',', default_values_t = [30usize, 10])]
        half_cells: Vec<usize>,
        #[command(flatten)]
        out: Outputs,
    },
    /// Print a built-in scenario as a config file
    Generate {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Write to this file instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve_scenario(spec: &str) -> Result<Scenario, CliError> {
    if let Some(rest) = spec.strip_prefix("builtin:") {
        let (kind, seed) = match rest.split_once('@') {
            Some((k, s)) => {
                let seed = s
                    .parse()
                    .map_err(|_| belief_risk::Error::InvalidInput(format!("bad layout seed `{s}`")))?;
                (k, seed)
            }
            None => (rest, 0),
        };
        return Ok(generate_scenario(kind.parse::<ScenarioKind>()?, seed)?);
    }
    let text = std::fs::read_to_string(spec)
        .map_err(|source| CliError::ReadScenario { path: PathBuf::from(spec), source })?;
    Ok(load_scenario(&text)?)
}

fn emit(table: &Table<'_>, out: &Outputs, kind: SvgKind, title: &str) -> Result<(), CliError> {
    match &out.out_csv {
        Some(path) => write_csv(table, path)?,
        None => print!("{}", table.to_csv()),
    }
    if let Some(path) = &out.out_svg {
        render_svg(table, path, kind, title)?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(belief_risk::Error::from)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Eval { scenario, latency, pos_error, vel_error } => {
            let sc = resolve_scenario(&scenario.scenario)?;
            let engine = RiskEngine::new(&sc, sc.engine)?;
            let d = DegradationParams::new(latency, pos_error, vel_error)?;
            let b = engine.evaluate(&d, &sc.ego.nominal_pose, &Covariance2::ZERO)?;
            // shortest round-trip representation, so values compare exactly
            println!("scenario={}", sc.name);
            println!("baseline={:?}", b.baseline.value());
            println!("degraded={:?}", b.degraded.value());
            println!("residual={:?}", b.residual.value());
        }
        Command::SweepSigma { scenario, seed, samples, latency, rthr, sigmas, out } => {
            let sc = resolve_scenario(&scenario.scenario)?;
            let spec = SweepSpec {
                sigma_levels: sigmas.unwrap_or_else(|| DEFAULT_SIGMA_LEVELS.to_vec()),
                fixed_latency: latency,
                r_thr: RiskValue::new(rthr)?,
                n_samples: samples,
                master_seed: seed,
                ..SweepSpec::default()
            };
            let rows = run_sigma_sweep(&sc, &spec, &sc.engine)?;
            let title = format!("{}: residual risk vs localization uncertainty", sc.name);
            emit(&Table::Sigma(&rows), &out, SvgKind::Curve, &title)?;
            let failed: Vec<String> =
                rows.iter().filter(|r| r.failure.is_some()).map(|r| r.sigma.to_string()).collect();
            if !failed.is_empty() {
                return Err(CliError::FlaggedRows(failed.join(", ")));
            }
        }
        Command::SweepLatency { scenario, latency, out } => {
            let sc = resolve_scenario(&scenario.scenario)?;
            let levels = latency.unwrap_or_else(|| SweepSpec::default().latency_levels);
            let rows = run_latency_sweep(&sc, &levels, &sc.engine)?;
            let title = format!("{}: residual risk vs latency", sc.name);
            emit(&Table::Latency(&rows), &out, SvgKind::Curve, &title)?;
        }
        Command::Field { scenario, latency, cell, half_cells, out } => {
            let sc = resolve_scenario(&scenario.scenario)?;
            let (hx, hy) = match half_cells[..] {
                [h] => (h, h),
                [hx, hy] => (hx, hy),
                _ => {
                    return Err(belief_risk::Error::InvalidInput("--half-cells takes one or two values".into()).into())
                }
            };
            let spec = FieldSpec::centered(sc.ego.nominal_pose.position(), (hx, hy), cell, latency);
            let grid = run_spatial_field(&sc, &spec, &sc.engine)?;
            let title = format!("{}: residual risk field, latency {latency} s", sc.name);
            emit(&Table::Field(&grid), &out, SvgKind::Heatmap, &title)?;
        }
        Command::Generate { scenario, out } => {
            let sc = resolve_scenario(&scenario.scenario)?;
            let text = serialize_scenario(&sc)?;
            match out {
                Some(path) => write_text(&path, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.workers {
        Some(0) => Err(CliError::Pool("--workers must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Pool(e.to_string()))
            .and_then(|pool| pool.install(|| run(cli))),
        None => run(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
