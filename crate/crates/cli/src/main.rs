use std::path::PathBuf;
use std::process::ExitCode;

use buckstab::buck_model::Feedthrough;
use buckstab_cli::{analyze_cascade, analyze_single, bode, parse_config, simulate, CliError, Quantity};
use clap::{Parser, Subcommand, ValueEnum};

/// Stability analysis of PI-controlled buck converters, alone and in cascade.
///
/// Exit status: 0 stable, 2 analysis completed but unstable, 1 error.
#[derive(Parser)]
#[command(name = "buckstab", version)]
struct Cli {
    /// System description (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config's feedthrough mode.
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Paper,
    Physical,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-loop verdict and margins of each stage on its own.
    AnalyzeSingle {
        /// 1-based stage index; all stages when omitted.
        #[arg(long)]
        stage: Option<usize>,
    },
    /// Middlebrook, exact-pole and Nyquist verdicts for a two-stage cascade.
    AnalyzeCascade,
    /// Frequency-response CSVs.
    Bode {
        /// Repeatable; all quantities when omitted.
        #[arg(long = "quantity", value_enum)]
        quantities: Vec<Quantity>,
    },
    /// Nonlinear averaged time simulation.
    Simulate {
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let path = cli.config.ok_or_else(|| CliError::Usage("--config <path> is required".into()))?;
    let mut cfg = parse_config(&path)?;
    if let Some(m) = cli.mode {
        cfg.modes.feedthrough = match m {
            Mode::Paper => Feedthrough::Paper,
            Mode::Physical => Feedthrough::Physical,
        };
    }
    let outcome = match cli.command {
        Command::AnalyzeSingle { stage } => analyze_single(&cfg, stage, &cli.out)?,
        Command::AnalyzeCascade => analyze_cascade(&cfg, &cli.out)?,
        Command::Bode { quantities } => bode(&cfg, &quantities, &cli.out)?,
        Command::Simulate { duration, dt } => simulate(&cfg, duration, dt, &cli.out)?,
    };
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
