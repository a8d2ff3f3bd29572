//! `smartscatter`: design a particle distribution for a target far-field
//! pattern and check it with the forward and inverse solvers.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use smartscatter_core::Error as CoreError;

use crate::commands::{Context, VerifyInput};

/// Invalid input: exit code 2.
#[derive(Debug)]
pub struct InputError(String);

impl InputError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

#[derive(Parser)]
#[command(name = "smartscatter", version, about = "Particle-distribution design for prescribed far-field patterns")]
struct Cli {
    /// Worker threads (default: SMARTSCATTER_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set grid.n_radial=12` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Target pattern -> source h -> potential q -> particle density N.
    Synthesize {
        #[command(flatten)]
        common: Common,
    },
    /// Compare particle clouds drawn from N.csv (or a given cloud) with the
    /// effective medium and the target.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Density table written by `synthesize` (default: OUTPUT_DIR/N.csv).
        #[arg(long, conflicts_with = "cloud")]
        density: Option<PathBuf>,
        /// Cloud table with columns x,y,z,C.
        #[arg(long)]
        cloud: Option<PathBuf>,
    },
    /// Scattering amplitude table of a potential.
    Forward {
        #[command(flatten)]
        common: Common,
        /// Potential table written by `synthesize`.
        #[arg(long)]
        potential: Option<PathBuf>,
    },
    /// Capacitance of a closed triangulated surface.
    Capacitance {
        #[command(flatten)]
        common: Common,
        /// OFF mesh.
        #[arg(long)]
        mesh: PathBuf,
        /// Highest correction order.
        #[arg(long, default_value_t = 0)]
        order: usize,
        /// Permittivity factor (1 in natural units).
        #[arg(long)]
        epsilon0: Option<f64>,
        /// Write the report here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fourier transform of the potential from an amplitude table.
    Invert {
        #[command(flatten)]
        common: Common,
        /// Amplitude table written by `forward`.
        #[arg(long)]
        amplitude: PathBuf,
        /// Wavenumber of the data (overrides `k`).
        #[arg(long)]
        k: Option<f64>,
        /// `grid:SPACING:MAX` or `points:x,y,z;...` (default: spacing k, |xi| <= 2k).
        #[arg(long)]
        xi_grid: Option<String>,
        /// Noise bound of the data; exact-data inversion when absent.
        #[arg(long)]
        noise_delta: Option<f64>,
        /// Write the report here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synthesize { .. } => "synthesize",
            Command::Verify { .. } => "verify",
            Command::Forward { .. } => "forward",
            Command::Capacitance { .. } => "capacitance",
            Command::Invert { .. } => "invert",
        }
    }
}

fn setup_threads(requested: Option<usize>) -> Result<()> {
    let n = match requested {
        Some(n) => Some(n),
        None => match std::env::var("SMARTSCATTER_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| InputError::new(format!("SMARTSCATTER_THREADS must be a count, got {v:?}")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(InputError::new("thread count must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn context(common: &Common, extra: &[String]) -> Result<Context> {
    let mut sets = common.sets.clone();
    sets.extend_from_slice(extra);
    let (config, base) = config::load(common.config.as_deref(), &sets)?;
    let out_dir = common
        .output_dir
        .clone()
        .or_else(|| config.output_dir.as_ref().map(|p| config::resolve(&base, p)));
    Ok(Context { config, base, out_dir })
}

/// Report with the resolved configuration and version; no timestamps, so
/// equal inputs give byte-identical files.
fn report(command: &str, config: Value, results: Value) -> Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "results": results,
    })
}

fn emit(report: &Value, file: Option<PathBuf>, elapsed: f64) -> Result<()> {
    let text = serde_json::to_string_pretty(report)? + "\n";
    match file {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(&path, &text)?;
            let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            let meta = json!({"unix_time": stamp, "elapsed_seconds": elapsed});
            let mut meta_path = path.clone().into_os_string();
            meta_path.push(".meta.json");
            std::fs::write(meta_path, serde_json::to_string_pretty(&meta)? + "\n")?;
            println!("{}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    setup_threads(cli.threads)?;
    let start = Instant::now();
    let name = cli.command.name();
    let (report, file) = match cli.command {
        Command::Synthesize { common } => {
            let ctx = context(&common, &[])?;
            let results = commands::synthesize_cmd(&ctx)?;
            let file = ctx.out_dir.as_ref().map(|d| d.join("report.json"));
            (report(name, serde_json::to_value(&ctx.config)?, results), file)
        }
        Command::Verify { common, density, cloud } => {
            let ctx = context(&common, &[])?;
            let input = match (density, cloud) {
                (_, Some(c)) => VerifyInput::Cloud(c),
                (Some(d), None) => VerifyInput::Density(d),
                (None, None) => {
                    let dir = ctx
                        .out_dir
                        .as_ref()
                        .ok_or_else(|| InputError::new("verify needs --density, --cloud or an output directory"))?;
                    VerifyInput::Density(dir.join("N.csv"))
                }
            };
            let results = commands::verify_cmd(&ctx, input)?;
            let file = ctx.out_dir.as_ref().map(|d| d.join("verify_report.json"));
            (report(name, serde_json::to_value(&ctx.config)?, results), file)
        }
        Command::Forward { common, potential } => {
            let ctx = context(&common, &[])?;
            let results = commands::forward_cmd(&ctx, potential)?;
            let file = ctx.out_dir.as_ref().map(|d| d.join("forward_report.json"));
            (report(name, serde_json::to_value(&ctx.config)?, results), file)
        }
        Command::Capacitance {
            common,
            mesh,
            order,
            epsilon0,
            output,
        } => {
            let results = commands::capacitance_cmd(&mesh, order, epsilon0)?;
            let resolved = json!({
                "mesh": mesh,
                "order": order,
                "epsilon0": epsilon0.unwrap_or(1.0),
                "config": common.config,
            });
            (report(name, resolved, results), output)
        }
        Command::Invert {
            common,
            amplitude,
            k,
            xi_grid,
            noise_delta,
            output,
        } => {
            let mut extra = Vec::new();
            if let Some(k) = k {
                extra.push(format!("k={k}"));
            }
            if let Some(d) = noise_delta {
                extra.push(format!("noise_delta={d}"));
            }
            let ctx = context(&common, &extra)?;
            let k = ctx.config.k;
            let spec = xi_grid.unwrap_or_else(|| format!("grid:{k}:{}", 2.0 * k));
            let xi = commands::parse_xi_grid(&spec)?;
            let results = commands::invert_cmd(&ctx, &amplitude, &xi)?;
            let resolved = json!({
                "pipeline": ctx.config,
                "amplitude": amplitude,
                "xi_grid": spec,
            });
            (report(name, resolved, results), output)
        }
    };
    emit(&report, file, start.elapsed().as_secs_f64())
}

/// 2 for invalid input, 1 for a failed computation.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<InputError>() || cause.is::<serde_json::Error>() || cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Argument { .. }
                | CoreError::Domain { .. }
                | CoreError::Resolution { .. }
                | CoreError::Mesh(_)
                | CoreError::Io(_)
                | CoreError::Parse(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help and version print through the error path with exit 0
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
