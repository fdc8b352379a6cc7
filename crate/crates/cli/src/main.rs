use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use agfem_cli::{execute, CliError, Command, RunConfig};
use clap::{Args, Parser, Subcommand};
use log::{error, info};

#[derive(Parser)]
#[command(name = "agfem", version, about = "Aggregated unfitted FE studies for two-phase interface problems")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Uniform or adaptive convergence study.
    Converge(Common),
    /// Contrast × cut-location robustness sweep.
    Sweep(Common),
    /// Condition numbers of aggregated and standard spaces over the sweep grid.
    Cond(Common),
    /// Single solve with VTK export.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file (`section.key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration entry; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::Converge(a) => (Command::Converge, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::Cond(a) => (Command::Cond, a),
        Cmd::Run(a) => (Command::Run, a),
    };
    let result = fs::read_to_string(&args.config)
        .map_err(CliError::from)
        .and_then(|text| RunConfig::from_text(&text, &args.set).map_err(CliError::from))
        .and_then(|cfg| execute(cmd, &cfg, &args.out));
    match result {
        Ok(outcome) => {
            for f in &outcome.files {
                info!("wrote {}", f.display());
            }
            if outcome.failures > 0 {
                error!("{} flagged rows", outcome.failures);
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            error!("{e}");
            let code = match &e {
                // a missing config file is a configuration error
                CliError::Io(_) if !args.config.is_file() => 2,
                _ => e.exit_code(),
            };
            ExitCode::from(code as u8)
        }
    }
}
