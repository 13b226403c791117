use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ris_mom::cli::{self, Fault, ScenarioConfig, EXIT_OK, EXIT_VALIDATE};
use ris_mom::geometry::ElementKind;

/// Method-of-Moments channel modelling for RIS-assisted MIMO links.
#[derive(Parser)]
#[command(version, about)]
struct Args {
    /// Scenario file (TOML); dipole defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir` in the scenario.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only report errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the full-wave channel against a dense solve on a 3x3 RIS.
    Validate {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Write the mesh and the binary impedance matrix.
    Assemble,
    /// Design the 1-bit state and write its bitmap and pattern.
    Design,
    /// Compare scattering patterns of the optimised and uniform states.
    Pattern,
    /// Sweep the receiver distance and fit the path-loss exponent.
    Sweep,
    /// Report spectral radii of the elimination operators.
    Diagnose,
}

fn run(args: Args) -> Result<i32, ris_mom::Error> {
    let cfg = match &args.config {
        Some(path) => ScenarioConfig::from_file(path)?,
        None => ScenarioConfig::default_for(ElementKind::Dipole)?,
    };
    let cfg = match args.out {
        Some(dir) => cfg.with_output_dir(dir),
        None => cfg,
    };
    match args.command {
        Command::Validate { inject_fault } => {
            let fault = if inject_fault { Fault::AdjointRs } else { Fault::None };
            let report = cli::cmd_validate(&cfg, fault)?;
            return Ok(if report.passed { EXIT_OK } else { EXIT_VALIDATE });
        }
        Command::Assemble => {
            cli::cmd_assemble(&cfg)?;
        }
        Command::Design => {
            cli::cmd_design(&cfg)?;
        }
        Command::Pattern => {
            cli::cmd_pattern(&cfg)?;
        }
        Command::Sweep => {
            cli::cmd_sweep(&cfg)?;
        }
        Command::Diagnose => {
            cli::cmd_diagnose(&cfg)?;
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let args = Args::parse();
    cli::set_quiet(args.quiet);
    let level = if args.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let code = match run(args) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            cli::exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
