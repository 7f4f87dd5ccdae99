use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hris_core::report::emit_csv;
use hris_core::runner::{run_experiment, Experiment};
use hris_core::scenario::{load_scenario, Scenario};
use hris_core::Error;

/// Monte-Carlo simulator for self-configuring hybrid reflecting/absorbing surfaces.
///
/// Log verbosity follows HRIS_SIM_LOG (e.g. `HRIS_SIM_LOG=info`).
#[derive(Parser)]
#[command(name = "hris-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its tables as CSV (and .dat for plots).
    Run {
        /// Scenario file (JSON). Defaults to the built-in reference scenario.
        #[arg(long)]
        config: Option<PathBuf>,
        /// sumrate, energy or battery
        #[arg(long)]
        experiment: Experiment,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of drops per point.
        #[arg(long)]
        drops: Option<usize>,
        /// Worker threads (default: all cores). Results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the built-in reference scenario as JSON.
    Config,
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Config => {
            println!("{}", Scenario::reference().to_json()?);
            Ok(())
        }
        Command::Run {
            config,
            experiment,
            out,
            seed,
            drops,
            threads,
        } => {
            let mut scenario = match &config {
                Some(path) => load_scenario(path).map_err(|e| match e {
                    Error::Io(io) => Error::Config(format!("{}: {io}", path.display())),
                    other => other,
                })?,
                None => Scenario::reference(),
            };
            if let Some(s) = seed {
                scenario.seed = s;
            }
            if let Some(d) = drops {
                scenario.drops = d;
            }
            scenario.validate()?;
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(n) = threads {
                if n == 0 {
                    return Err(Error::Config("--threads must be at least 1".into()));
                }
                pool = pool.num_threads(n);
            }
            let pool = pool.build().map_err(|e| Error::Solve(format!("thread pool: {e}")))?;
            log::info!("running {experiment} with seed {} and {} drops", scenario.seed, scenario.drops);
            let report = pool.install(|| run_experiment(&scenario, experiment))?;
            for path in emit_csv(&report, &out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HRIS_SIM_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("hris-sim: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("hris-sim: {e}");
            ExitCode::from(1)
        }
    }
}
