//! Command-line experiment runner.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 config or parameter error,
//! 3 invariant violation (including failed `analyze` checks).

mod analyze;
mod compare;
mod config;
mod data;
mod run;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use analyze::{analyze_run, AnalysisReport, AnalyzeOptions, Check};
pub use compare::{compare, render_table, speedups, time_to_threshold, CompareEntry};
pub use config::{
    BuiltObjectives, DataSource, ExperimentConfig, GenScheduleConfig, GenSpec, GraphSpec, ObjectiveConfig,
    SimSpec,
};
pub use data::{centralized_f_star, synthetic_dataset};
pub use run::{output_root, run_experiment, thread_pool, RunResult, RunSummary, THREADS_ENV};

use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "asyspa-lab", version, about = "Asynchronous push-sum subgradient experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every seed of an experiment config.
    Run {
        config: PathBuf,
        /// Override the config's output root.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time-to-threshold and speedup versus the first input.
    Compare {
        /// Configs (first seed is run) or finished run directories.
        #[arg(required = true, num_args = 2..)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 1e-2)]
        threshold: f64,
        /// Also write the table as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Replay and audit a finished simulate run directory.
    Analyze {
        run_dir: PathBuf,
        #[arg(long)]
        slots: Option<usize>,
        #[arg(long, default_value_t = 20_000)]
        max_instants: u64,
    },
    /// Write a synthetic multiclass dataset as CSV.
    GenData {
        #[arg(long)]
        n_s: usize,
        #[arg(long)]
        n_f: usize,
        #[arg(long)]
        n_c: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn config_base(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Executes one parsed command; returns the exit code.
pub fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let base = config_base(&config);
            let root = out.unwrap_or_else(|| output_root(&cfg, &base));
            for r in run_experiment(&cfg, &base, &root)? {
                match &r.summary.final_metrics {
                    Some(m) => println!(
                        "{}: {} instants, t = {:.6}, f_avg_err = {:e}",
                        r.dir.display(),
                        r.summary.instants,
                        m.t,
                        m.f_avg_err
                    ),
                    None => println!(
                        "{}: {} steps, f_err = {:e}",
                        r.dir.display(),
                        r.summary.instants,
                        r.summary.final_f_err.unwrap_or(f64::NAN)
                    ),
                }
            }
            Ok(0)
        }
        Command::Compare { inputs, threshold, json } => {
            let entries = compare(&inputs, threshold)?;
            print!("{}", render_table(&entries, threshold));
            if let Some(path) = json {
                serde_json::to_writer_pretty(BufWriter::new(fs::File::create(path)?), &entries)?;
            }
            Ok(0)
        }
        Command::Analyze { run_dir, slots, max_instants } => {
            let report = analyze_run(&run_dir, &AnalyzeOptions { slots, max_instants })?;
            for c in &report.checks {
                println!("{} {:<28} {:e} (limit {:e})", if c.pass { "ok  " } else { "FAIL" }, c.name, c.value, c.limit);
            }
            Ok(if report.pass { 0 } else { 3 })
        }
        Command::GenData { n_s, n_f, n_c, seed, out } => {
            let ds = synthetic_dataset(n_s, n_f, n_c, seed)?;
            ds.write_csv(BufWriter::new(fs::File::create(&out)?))?;
            println!("wrote {} rows to {}", ds.len(), out.display());
            Ok(0)
        }
    }
}

/// Parses `args` (program name first) and runs; errors go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn main_from_env() -> i32 {
    main_with_args(std::env::args_os())
}
