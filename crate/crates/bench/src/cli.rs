use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::compare::{compare_table, load_dir, summary_to_csv};
use crate::config::RunConfig;
use crate::demos::demo_config;
use crate::error::{BenchError, Result};
use crate::rates::{fit_rate, mean_running_min_gaps, parse_window};
use crate::runner::{manifest_instance_id, run_config, RunReport};
use crate::trace_io::read_trace;

#[derive(Debug, Parser)]
#[command(
    name = "bilevel-bench",
    version,
    about = "Seeded benchmarks for bilevel stochastic gradient methods"
)]
pub struct Cli {
    /// Replace the configured seed list with this single seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of concurrent (solver, seed) runs.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Override the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every solver and seed of a config file.
    Run { config: PathBuf },
    /// Fit the log-log slope of running-minimum gaps (averaged over the traces).
    Rates {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        fstar: f64,
        /// Inclusive iteration window `a:b`.
        #[arg(long)]
        window: String,
    },
    /// Summary table of the traces in a run directory.
    Compare { dir: PathBuf },
    /// Run a built-in demo: quadratic, logreg, logreg-darts-variants, continual, lq-constrained.
    Demo { name: String },
}

fn apply_overrides(mut config: RunConfig, cli: &Cli) -> Result<RunConfig> {
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn report(out: &mut impl Write, r: &RunReport, dir: &std::path::Path) -> std::io::Result<()> {
    writeln!(out, "wrote {} traces to {}", r.traces.len(), dir.display())?;
    write!(out, "{}", summary_to_csv(&r.summary))?;
    for c in &r.continual {
        writeln!(
            out,
            "{} seed {}: {} jumps at stage boundaries, {} elsewhere, final validation error {:.4}",
            c.solver, c.seed, c.jumps.at_boundaries, c.jumps.elsewhere, c.final_val_error
        )?;
    }
    Ok(())
}

/// Executes a parsed command line, writing human output to `out`.
pub fn execute(cli: &Cli, out: &mut impl Write) -> Result<()> {
    let io = |e: std::io::Error| BenchError::Io {
        path: "<stdout>".into(),
        source: e,
    };
    match &cli.command {
        Command::Run { config } => {
            let config = apply_overrides(RunConfig::load(config)?, cli)?;
            let r = run_config(&config, cli.workers)?;
            report(out, &r, &config.output_dir).map_err(io)
        }
        Command::Demo { name } => {
            let config = apply_overrides(demo_config(name)?, cli)?;
            let r = run_config(&config, cli.workers)?;
            report(out, &r, &config.output_dir).map_err(io)
        }
        Command::Rates { traces, fstar, window } => {
            let window = parse_window(window)?;
            let loaded = traces.iter().map(|p| read_trace(p)).collect::<Result<Vec<_>>>()?;
            let gaps = mean_running_min_gaps(&loaded, *fstar)?;
            let fit = fit_rate(&gaps, window)?;
            writeln!(
                out,
                "slope {:.6} intercept {:.6} r2 {:.6} window {}:{} traces {}",
                fit.slope,
                fit.intercept,
                fit.r2,
                fit.window.0,
                fit.window.1,
                loaded.len()
            )
            .map_err(io)
        }
        Command::Compare { dir } => {
            let instance = manifest_instance_id(dir).unwrap_or_else(|| dir.display().to_string());
            let traces = load_dir(dir, &instance)?;
            let rows = compare_table(&traces)?;
            write!(out, "{}", summary_to_csv(&rows)).map_err(io)
        }
    }
}

pub fn main() -> std::process::ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    match execute(&cli, &mut stdout.lock()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::from(match e {
                BenchError::Config(_) | BenchError::Capability(_) => 2,
                _ => 1,
            })
        }
    }
}
