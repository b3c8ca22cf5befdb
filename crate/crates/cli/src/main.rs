//! `meanfield`: runs declarative experiments against `meanfield-core`.
//!
//! Exit codes: 0 success, 2 schema violation, 3 resource cap, 4 numerical
//! failure, failed invariant or missing input.

mod error;
mod output;
mod plot;
mod run;
mod spec;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::{CliError, CliResult};
use crate::run::{run_experiment, verify_experiment, RunOptions, RunReport};

#[derive(Parser)]
#[command(name = "meanfield", version, about = "Mean-field energy experiments")]
struct Cli {
    /// Worker threads; defaults to MEANFIELD_THREADS, then to all cores.
    #[arg(long, global = true, env = "MEANFIELD_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the task named in an experiment file.
    Run {
        spec: PathBuf,
        /// Output directory; overrides `output_dir` in the file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replaces the master seed of the file.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Run the invariant suite for the cost and dimension of an experiment file.
    Verify {
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Write tidy plot tables for a finished run into `<run-dir>/plot`.
    Plotdata { run_dir: PathBuf },
}

fn options(spec_path: &Path, out: Option<PathBuf>, file_out: Option<&PathBuf>) -> CliResult<RunOptions> {
    let base = spec_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = match (out, file_out) {
        (Some(o), _) => o,
        (None, Some(o)) if o.is_relative() => base.join(o),
        (None, Some(o)) => o.clone(),
        (None, None) => PathBuf::from("out"),
    };
    let spec_bytes = std::fs::read(spec_path)
        .map_err(|e| CliError::task(format!("cannot read {}: {e}", spec_path.display())))?;
    Ok(RunOptions { out, base, spec_bytes })
}

fn report(r: RunReport, out: &Path) -> CliResult<()> {
    for f in &r.manifest.outputs {
        println!("{}", out.join(&f.path).display());
    }
    if r.failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::task(format!("invariant violations:\n  {}", r.failures.join("\n  "))))
    }
}

fn run_with(
    path: &Path,
    out: Option<PathBuf>,
    seed_override: Option<u64>,
    f: fn(&spec::ExperimentSpec, &RunOptions) -> CliResult<RunReport>,
) -> CliResult<()> {
    let mut spec = spec::load(path)?;
    if let Some(s) = seed_override {
        spec.seed = s;
    }
    let opts = options(path, out, spec.output_dir.as_ref())?;
    report(f(&spec, &opts)?, &opts.out)
}

fn execute(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::task(format!("cannot start the thread pool: {e}")))?;
    }
    match cli.command {
        Command::Run { spec, out, seed_override } => run_with(&spec, out, seed_override, run_experiment),
        Command::Verify { spec, out, seed_override } => run_with(&spec, out, seed_override, verify_experiment),
        Command::Plotdata { run_dir } => {
            for name in plot::emit_plot_data(&run_dir)? {
                println!("{}", run_dir.join("plot").join(name).display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
