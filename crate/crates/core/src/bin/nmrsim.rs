use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nmrsim::experiment::{self, canonical, parse_config, CANONICAL, OUT_DIR_ENV};
use nmrsim::verify;

/// Two-spin NMR simulator for truncated oscillator dynamics.
#[derive(Parser)]
#[command(name = "nmrsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment: a config file path or a shipped experiment name.
    Run {
        config: String,
    },
    /// Run the acceptance criteria and print one line per criterion.
    Verify,
    /// List the shipped experiments.
    ListExperiments,
}

fn load(arg: &str) -> Result<experiment::ExperimentConfig, String> {
    let path = PathBuf::from(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        return parse_config(&text).map_err(|e| format!("{}: {e}", path.display()));
    }
    match canonical(arg) {
        Some(c) => Ok(c.config()),
        None => Err(format!("`{arg}` is neither a config file nor a shipped experiment")),
    }
}

fn run(arg: &str) -> ExitCode {
    let cfg = match load(arg) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match experiment::run_experiment(&cfg) {
        Ok((outcome, files)) => {
            print!("{}", outcome.report());
            println!("csv: {}", files.csv.display());
            if let Some(f) = &files.frequencies {
                println!("frequencies: {}", f.display());
            }
            if let Some(p) = &files.program {
                println!("program: {}", p.display());
            }
            println!("report: {}", files.report.display());
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {}: {e}", cfg.name);
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config } => run(&config),
        Command::Verify => {
            let outcomes = verify::verify_all();
            for o in &outcomes {
                println!("{o}");
            }
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
            if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::ListExperiments => {
            for c in CANONICAL {
                println!("{:<14} {}", c.name, c.description());
            }
            println!("(outputs go to the config's [output] dir, or ${OUT_DIR_ENV} when set)");
            ExitCode::SUCCESS
        }
    }
}
