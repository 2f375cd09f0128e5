use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qident::{run_file, Command, Overrides};

/// Simulate and identify open quantum system models.
#[derive(Debug, Parser)]
#[command(name = "qident", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Simulate the configured model and write its observable trace.
    Simulate(Common),
    /// Fit the unknown parameters by gradient descent from every start.
    Identify(Common),
    /// Propose ancilla frequencies from the spectrum of the measured trace.
    Guess(Common),
    /// Evaluate identified (and true) environment spectra.
    Spectrum(Common),
    /// Compare the approximate, exact and finite-difference gradients.
    Gradcheck(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output root; defaults to io.out_dir, then $QIDENT_OUT/<config name>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use only the first N starts.
    #[arg(long, value_name = "N")]
    starts: Option<usize>,
    /// Noise seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Only log warnings and errors.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Identify(c) => (Command::Identify, c),
        Cmd::Guess(c) => (Command::Guess, c),
        Cmd::Spectrum(c) => (Command::Spectrum, c),
        Cmd::Gradcheck(c) => (Command::Gradcheck, c),
    };
    let level = if common.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let overrides = Overrides {
        out: common.out,
        starts: common.starts,
        seed: common.seed,
    };
    match run_file(command, &common.config, &overrides) {
        Ok(dir) => {
            log::info!("done: {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("qident: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
