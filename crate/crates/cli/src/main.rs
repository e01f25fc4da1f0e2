use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;
mod manifest;
mod sweep;

#[derive(Parser, Debug)]
#[command(name = "spopo", version, about = "Classical and positive-P simulation of a first-order transverse-mode SPOPO")]
struct Cli {
    /// Worker threads for data-parallel stages (0 = all cores).
    #[arg(long, global = true, env = "SPOPO_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Supermodes of the coupling matrix and the oscillation threshold.
    Supermodes(SupermodesArgs),
    /// Classical steady state, stability and phase-locking diagnostics.
    SteadyState(SteadyArgs),
    /// Output noise spectrum from the linearised model.
    Spectrum(SpectrumArgs),
    /// Positive-P ensemble: phase diffusion and homodyne spectra.
    Montecarlo(MonteCarloArgs),
    /// Scan the configuration over a grid of parameters.
    Sweep(SweepArgs),
    /// Sample the emitted spatiotemporal field.
    Field(FieldArgs),
}

#[derive(Args, Debug, Serialize)]
struct Common {
    /// Configuration file (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SupermodesArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Number of leading eigenvectors to write.
    #[arg(long, default_value_t = 5)]
    n_vectors: usize,
}

#[derive(Args, Debug, Serialize)]
struct SteadyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Seed of the phase-locking check.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Quadrature {
    /// Squeezed dark quadrature (above threshold).
    Yd,
    /// Antisqueezed dark quadrature (above threshold).
    Xd,
    /// Both quadratures of one supermode (below threshold).
    Supermode,
}

#[derive(Args, Debug, Serialize)]
struct SpectrumArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value_t = Quadrature::Yd)]
    quadrature: Quadrature,
    /// Supermode index for `--quadrature supermode`.
    #[arg(long, default_value_t = 0)]
    mode: usize,
    /// Lowest frequency, in units of gamma.
    #[arg(long, default_value_t = 0.0)]
    omega_min: f64,
    /// Highest frequency, in units of gamma.
    #[arg(long, default_value_t = 10.0)]
    omega_max: f64,
    #[arg(long, default_value_t = 101)]
    n_points: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum DumpFormat {
    None,
    Bin,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum StepperArg {
    Euler,
    Midpoint,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum NoiseArg {
    Block,
    Minimal,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum TaperArg {
    Rectangular,
    Hann,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum EstimatorArg {
    Goldstone,
    Projection,
}

#[derive(Args, Debug, Serialize)]
struct MonteCarloArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long, default_value_t = 10_000)]
    n_traj: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Time step (default 1e-3/gamma).
    #[arg(long)]
    dt: Option<f64>,
    /// Integration time (default 5/gamma).
    #[arg(long)]
    t_max: Option<f64>,
    /// Steps between saved samples.
    #[arg(long, default_value_t = 10)]
    save_stride: usize,
    #[arg(long, value_enum, default_value_t = StepperArg::Euler)]
    stepper: StepperArg,
    #[arg(long, value_enum, default_value_t = NoiseArg::Block)]
    noise: NoiseArg,
    /// Amplitude beyond which a trajectory is discarded.
    #[arg(long)]
    escape_radius: Option<f64>,
    /// Trajectories integrated per wave.
    #[arg(long, default_value_t = 256)]
    wave: usize,
    /// Start of the phase-variance fit window (default 1/gamma).
    #[arg(long)]
    fit_from: Option<f64>,
    /// Transient dropped before the quadrature analysis (default 1/gamma).
    #[arg(long)]
    transient: Option<f64>,
    /// Largest correlation lag (default 3.5/gamma).
    #[arg(long)]
    max_lag: Option<f64>,
    #[arg(long, value_enum, default_value_t = TaperArg::Rectangular)]
    taper: TaperArg,
    /// Orientation estimator for the dark quadratures.
    #[arg(long, value_enum, default_value_t = EstimatorArg::Goldstone)]
    estimator: EstimatorArg,
    /// Jackknife blocks.
    #[arg(long, default_value_t = 20)]
    n_blocks: usize,
    /// Highest spectrum frequency, in units of gamma.
    #[arg(long, default_value_t = 4.0)]
    omega_max: f64,
    #[arg(long, default_value_t = 41)]
    n_points: usize,
    /// Write the saved trajectories.
    #[arg(long, value_enum, default_value_t = DumpFormat::None)]
    dump: DumpFormat,
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Sweep grid (JSON).
    #[arg(long)]
    grid: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct FieldArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Orientation of the bright mode.
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    #[arg(long, default_value_t = 24)]
    n_phi: usize,
    #[arg(long, default_value_t = 12)]
    n_r: usize,
    #[arg(long, default_value_t = 16)]
    n_z: usize,
    #[arg(long, default_value_t = 32)]
    n_t: usize,
    /// Largest radius, in waists.
    #[arg(long, default_value_t = 2.5)]
    r_max: f64,
}

pub(crate) fn thread_count() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

fn init_threads(threads: Option<usize>) -> anyhow::Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    #[cfg(not(feature = "parallel"))]
    if threads.is_some_and(|n| n > 1) {
        log::warn!("built without the parallel feature; --threads is ignored");
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Supermodes(a) => commands::supermodes(&a),
        Command::SteadyState(a) => commands::steady_state(&a),
        Command::Spectrum(a) => commands::spectrum(&a),
        Command::Montecarlo(a) => commands::montecarlo(&a),
        Command::Sweep(a) => sweep::run(&a),
        Command::Field(a) => commands::field(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
