use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use ergodic_cli::{listing, output, run};

#[derive(Parser)]
#[command(
    name = "ergodic",
    version,
    about = "Ergodic Bellman and homogenization experiments",
    long_about = "Ergodic Bellman and homogenization experiments on the unit torus.\n\n\
                  All coefficients are 1-periodic in every variable, including the slow variable x of \
                  two-scale problems, and epsilon must be the reciprocal of an integer. \
                  See CONFIG.md for the config schema."
)]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Debug logging and extra per-iteration artifacts.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List shipped configs with their expected numbers.
    List {
        #[arg(long, default_value = concat!(env!("CARGO_MANIFEST_DIR"), "/examples"))]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(k) = cli.workers {
        if k == 0 {
            eprintln!("error: invalid --workers: need at least one worker");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .expect("global pool set once");
    }

    match cli.command {
        Command::List { dir } => {
            let rows = listing::list_configs(&dir);
            // A closed pipe (`ergodic list | head`) is not an error.
            let _ = listing::write_table(&rows, std::io::stdout().lock());
            ExitCode::SUCCESS
        }
        Command::Run { config, out } => match run_one(&config, out, cli.verbose) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
    }
}

fn run_one(path: &std::path::Path, out: Option<PathBuf>, verbose: bool) -> Result<(), run::RunError> {
    let config = ergodic_cli::load(path)?;
    let dir = out
        .or_else(|| config.common.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(path.file_stem().unwrap_or_default()));
    output::prepare_dir(&dir)?;
    let start = Instant::now();
    let result = run::execute(&config, verbose)?;
    let wall = start.elapsed();
    let passed = result.summary.get("all_checks_pass").and_then(|v| v.as_bool());
    let manifest = output::write_run(&dir, &config, result, wall, rayon::current_num_threads())?;
    println!("wrote {}", manifest.display());
    if passed == Some(false) {
        eprintln!("warning: some expected values were not reproduced; see summary.json");
    }
    Ok(())
}
