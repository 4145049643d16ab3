use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use wasslip_cli::{exit_code, run, Command, Invocation};

/// Robust-risk certificates, attacks and Lipschitz-penalised training.
#[derive(Parser, Debug)]
#[command(name = "wasslip", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let inv = Invocation {
        command: args.command,
        config: args.config,
        out: args.out,
        seed: args.seed,
    };
    let result = run(&inv);
    let code = exit_code(&result);
    match result {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            for line in &outcome.failures {
                eprintln!("FAILED {line}");
            }
        }
        Err(e) => {
            let err = anyhow::Error::new(e).context(format!(
                "wasslip {} with {}",
                inv.command.name(),
                inv.config.display()
            ));
            eprintln!("{err:#}");
        }
    }
    ExitCode::from(code)
}
