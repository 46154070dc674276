//! Thin CLI over the library: solve / verify / convergence on a JSON
//! config file or a bundled preset (`preset:<name>`).
//!
//! Exit codes: 0 all checks pass, 1 a check or the solve failed,
//! 2 usage or configuration error. `RBSDE_THREADS` caps the worker
//! thread count (node-level parallelism only; results are independent
//! of it).

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use rbsde::harness::{cmd_convergence, cmd_solve, cmd_verify, load_config, PRESET_NAMES};
use rbsde::Error;

#[derive(Parser)]
#[command(
    name = "rbsde",
    about = "Lattice solvers for infinite-horizon reflected BSDE systems with oblique reflection",
    after_help = format!("CONFIG is a JSON file path or preset:<name> with <name> one of: {}", PRESET_NAMES.join(", "))
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate, solve and report values with solve-level diagnostics.
    Solve {
        /// Config file path or preset:<name>.
        config: String,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a per-mode value table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the full diagnostic battery (both backends, penalty decay,
    /// representation, contraction probe).
    Verify {
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a per-mode value table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-solve with the step count doubled per level; CSV output.
    Convergence {
        config: String,
        /// Number of refinement levels (>= 2).
        #[arg(long)]
        levels: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_output(text: &str, out: Option<&PathBuf>) -> std::io::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn init_threads() {
    if let Ok(value) = std::env::var("RBSDE_THREADS") {
        if let Ok(threads) = value.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        } else {
            eprintln!("warning: ignoring non-numeric RBSDE_THREADS = {value:?}");
        }
    }
}

/// Usage-class errors exit 2, solve/check failures exit 1.
fn exit_code_for(err: &Error) -> ExitCode {
    match err {
        Error::Config(_) | Error::InvalidInput(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn run() -> Result<ExitCode, (Error, ExitCode)> {
    let cli = Cli::parse();
    init_threads();
    let started = Instant::now();

    let code = match cli.command {
        Command::Solve {
            config,
            out,
            csv,
            seed,
        } => {
            let mut config = load_config(&config).map_err(|e| {
                let code = exit_code_for(&e);
                (e, code)
            })?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let report = cmd_solve(&config).map_err(|e| (e, ExitCode::from(1)))?;
            write_output(&report.to_json_pretty(), out.as_ref())
                .map_err(|e| (Error::Io(e), ExitCode::from(1)))?;
            if let Some(path) = csv {
                std::fs::write(&path, report.values_csv())
                    .map_err(|e| (Error::Io(e), ExitCode::from(1)))?;
            }
            eprintln!("{}", report.check_summary());
            eprintln!(
                "solve finished in {:.1} ms",
                started.elapsed().as_secs_f64() * 1e3
            );
            if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::Verify {
            config,
            out,
            csv,
            seed,
        } => {
            let mut config = load_config(&config).map_err(|e| {
                let code = exit_code_for(&e);
                (e, code)
            })?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let report = cmd_verify(&config).map_err(|e| (e, ExitCode::from(1)))?;
            write_output(&report.to_json_pretty(), out.as_ref())
                .map_err(|e| (Error::Io(e), ExitCode::from(1)))?;
            if let Some(path) = csv {
                std::fs::write(&path, report.values_csv())
                    .map_err(|e| (Error::Io(e), ExitCode::from(1)))?;
            }
            eprintln!("{}", report.check_summary());
            eprintln!(
                "verify finished in {:.1} ms",
                started.elapsed().as_secs_f64() * 1e3
            );
            if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::Convergence {
            config,
            levels,
            out,
        } => {
            let config = load_config(&config).map_err(|e| {
                let code = exit_code_for(&e);
                (e, code)
            })?;
            let table = cmd_convergence(&config, levels).map_err(|e| {
                let code = exit_code_for(&e);
                (e, code)
            })?;
            write_output(&table.to_csv(), out.as_ref())
                .map_err(|e| (Error::Io(e), ExitCode::from(1)))?;
            eprintln!(
                "convergence study ({levels} levels) finished in {:.1} ms",
                started.elapsed().as_secs_f64() * 1e3
            );
            ExitCode::SUCCESS
        }
    };
    Ok(code)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err((err, code)) => {
            eprintln!("error: {err}");
            code
        }
    }
}
