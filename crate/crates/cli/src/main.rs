mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "sipmstat", version, about = "SiPM photon-number statistics: synthesize, simulate, calibrate and fit")]
struct Cli {
    /// Worker threads for parallel sections (Monte Carlo, bootstrap).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a measured count histogram from a source seen through a detector.
    Synth(SynthArgs),
    /// Fit source parameters to a measured count histogram.
    Fit(FitArgs),
    /// Fit dark-count rate and crosstalk to a no-light histogram.
    Calibrate(CalibrateArgs),
    /// Lattice Monte Carlo of crosstalk cascades.
    Mc(McArgs),
    /// Fit the stimulation curve to mean photon number versus pump intensity.
    Stim(StimArgs),
    /// Turn a pulse-height histogram into photon-number counts.
    Pulses(PulsesArgs),
    /// Naive matrix-inverse reconstruction of a source distribution.
    Invert(InvertArgs),
    /// Regenerate the synthetic plot datasets into one directory.
    Figures(FiguresArgs),
}

/// Detector parameters from flags, a `key=value` file, or both (flags win).
#[derive(Args, Clone, Debug, Default)]
pub struct DetectorArgs {
    /// Detection efficiency in [0, 1].
    #[arg(long)]
    pub eta: Option<f64>,
    /// Mean dark counts per gate.
    #[arg(long = "lambda-dk")]
    pub lambda_dk: Option<f64>,
    /// Crosstalk probability in [0, 1).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// File with `eta=`, `lambda_dk=`, `epsilon=` lines.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyArg {
    Thermal,
    Negbinom,
    Poisson,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitFamilyArg {
    Thermal,
    Negbinom,
    Poisson,
    /// Fit all three and select.
    All,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormalizationArg {
    /// Mass above the histogram range is an unobserved overflow bin.
    Full,
    /// Likelihood conditional on counts within the histogram range.
    Measured,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum WidthLawArg {
    PerPeak,
    Parametric,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    /// Mean photon number of the source.
    #[arg(long = "n-bar")]
    pub n_bar: f64,
    /// Number of modes (negbinom only).
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest detected count recorded; events above it are discarded.
    /// Defaults to the full support.
    #[arg(long = "n-max")]
    pub n_max: Option<usize>,
    /// Output histogram CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[arg(long, value_enum, default_value = "all")]
    pub family: FitFamilyArg,
    /// Source photon-number truncation (chosen from the data by default).
    #[arg(long = "n-max")]
    pub n_max: Option<usize>,
    #[arg(long, value_enum, default_value = "full")]
    pub normalization: NormalizationArg,
    /// Bootstrap replicas for a cross-check of the standard errors.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// No-light count histogram.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Largest detected count modelled (defaults to the histogram range).
    #[arg(long = "n-max")]
    pub n_max: Option<usize>,
    /// Heralded coincidences, for the efficiency estimate.
    #[arg(long, requires = "singles")]
    pub coincidences: Option<u64>,
    #[arg(long, requires = "coincidences")]
    pub singles: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct McArgs {
    /// Lattice size as ROWSxCOLS.
    #[arg(long, default_value = "10x10")]
    pub grid: String,
    /// Nearest-neighbour crosstalk probability.
    #[arg(long = "epsilon-nn")]
    pub epsilon_nn: f64,
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Wrap the lattice edges.
    #[arg(long)]
    pub periodic: bool,
    /// Elements fired at the start of each cascade.
    #[arg(long, default_value_t = 1)]
    pub fired: usize,
    /// Simulate full detection of this many incident photons instead.
    #[arg(long, conflicts_with = "fired")]
    pub photons: Option<u64>,
    /// Efficiency for --photons.
    #[arg(long, default_value_t = 1.0, requires = "photons")]
    pub eta: f64,
    /// Dark-count mean for --photons.
    #[arg(long = "lambda-dk", default_value_t = 0.0, requires = "photons")]
    pub lambda_dk: f64,
    /// Also write a table against the analytic crosstalk model.
    #[arg(long, conflicts_with = "photons")]
    pub compare: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StimArgs {
    /// CSV with `intensity,n_bar,err` rows.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Points on the emitted fitted curve.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PulsesArgs {
    /// CSV with `bin_left,count` rows.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long = "max-peaks", default_value_t = 30)]
    pub max_peaks: usize,
    #[arg(long = "width-law", value_enum, default_value = "per-peak")]
    pub width_law: WidthLawArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InvertArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub detector: DetectorArgs,
    /// Size of the square block inverted (defaults to the histogram range).
    #[arg(long = "n-max")]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FiguresArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Events per synthetic count histogram.
    #[arg(long, default_value_t = 1_000_000)]
    pub trials: u64,
    /// Cascades per Monte Carlo comparison.
    #[arg(long = "mc-trials", default_value_t = 200_000)]
    pub mc_trials: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let outcome = match cli.command {
        Command::Synth(a) => commands::synth::run(&a)?,
        Command::Fit(a) => commands::fit::run(&a)?,
        Command::Calibrate(a) => commands::calibrate::run(&a)?,
        Command::Mc(a) => commands::mc::run(&a)?,
        Command::Stim(a) => commands::stim::run(&a)?,
        Command::Pulses(a) => commands::pulses::run(&a)?,
        Command::Invert(a) => commands::invert::run(&a)?,
        Command::Figures(a) => commands::figures::run(&a)?,
    };
    outcome.outputs.commit()?;
    print!("{}", outcome.summary);
    Ok(outcome.converged)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(0) => Err(CliError::validation("--threads must be >= 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::validation(e.to_string()))
            .and_then(|pool| pool.install(|| run(cli))),
        None => run(cli),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("warning: fit did not converge; outputs are marked converged=false");
            ExitCode::from(error::EXIT_CONVERGENCE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
