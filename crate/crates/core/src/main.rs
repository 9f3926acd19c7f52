use clap::{Parser, Subcommand};
use kelvin_lab::cli::{run, Command};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "kelvin-lab", version, about = "Stochastic Lagrangian checks on 2D periodic Navier-Stokes")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the config's out_dir, then `.`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides base_seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate and write the history file plus an energy summary.
    Solve(Common),
    /// Backward-martingale circulation check.
    Kelvin(Common),
    /// First-variation report for the action.
    Action(Common),
    /// Weber-velocity circulation identity per sample.
    Weber(Common),
    /// Forward-martingale check on the time-reversed field.
    ReverseKelvin(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::Solve(a) => (Command::Solve, a),
        Cmd::Kelvin(a) => (Command::Kelvin, a),
        Cmd::Action(a) => (Command::Action, a),
        Cmd::Weber(a) => (Command::Weber, a),
        Cmd::ReverseKelvin(a) => (Command::ReverseKelvin, a),
    };
    match run(cmd, &args.config, args.out.as_deref(), args.seed) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                eprintln!("{}: verdict FAIL", cmd.name());
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
