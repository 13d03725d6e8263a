use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qstrobe_cli::config::ExperimentConfig;
use qstrobe_cli::report::Format;
use qstrobe_cli::run::{run_experiment, Mode};

#[derive(Parser)]
#[command(name = "qstrobe", version, about = "Stroboscopic and continuous arrival-time experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "STROBE_WORKERS")]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value = "all")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Stroboscopic time distribution of one outcome, with its clock reference.
    Strobe(Common),
    /// Quantum-clock densities for every outcome.
    Clock(Common),
    /// Probability flow through a threshold.
    Flow(Common),
    /// Survival under repeated projective measurement.
    Zeno(Common),
    /// Fuzzy continuous-measurement trajectories and moment equations.
    Continuous(Common),
    /// Detector click streams.
    Clicks(Common),
    /// Driven two-level atom.
    Rabi(Common),
    /// All distributions side by side, with a scaling table.
    Compare(Common),
}

impl Command {
    fn split(self) -> (Mode, Common) {
        match self {
            Command::Strobe(c) => (Mode::Strobe, c),
            Command::Clock(c) => (Mode::Clock, c),
            Command::Flow(c) => (Mode::Flow, c),
            Command::Zeno(c) => (Mode::Zeno, c),
            Command::Continuous(c) => (Mode::Continuous, c),
            Command::Clicks(c) => (Mode::Clicks, c),
            Command::Rabi(c) => (Mode::Rabi, c),
            Command::Compare(c) => (Mode::Compare, c),
        }
    }
}

fn main() -> ExitCode {
    let (mode, args) = Cli::parse().command.split();
    if let Some(n) = args.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let mut cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return ExitCode::from(1);
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args.out.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    match run_experiment(&cfg, mode, args.format, &out) {
        Ok(manifest) => {
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!("wrote {} files to {}", manifest.files.len() + 1, out.display());
            ExitCode::from(manifest.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
