//! Executes a run configuration across solvers and seeds.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use bilevel_core::instances::{JumpReport, StageBoundary};

use crate::compare::{compare_table, summary_to_csv, trace_file_name, LabeledTrace, SummaryRow};
use crate::config::{InstanceConfig, RunConfig};
use crate::error::{io_err, BenchError, Result};
use crate::instance::{BuiltInstance, FStar};
use crate::trace_io::trace_to_csv;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const JUMPS_FILE: &str = "jumps.csv";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_hash: String,
    pub instance_id: String,
    pub instance_kind: String,
    pub seeds: Vec<u64>,
    pub solvers: Vec<String>,
    pub f_star: Option<f64>,
    pub f_star_source: String,
    pub config: String,
}

/// Continual-learning diagnostics for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinualSummary {
    pub solver: String,
    pub seed: u64,
    pub jumps: JumpReport,
    pub boundaries: Vec<StageBoundary>,
    pub final_val_error: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub traces: Vec<LabeledTrace>,
    pub summary: Vec<SummaryRow>,
    pub manifest: Manifest,
    pub continual: Vec<ContinualSummary>,
    pub f_star: FStar,
}

/// Identifies the instance block independently of solvers and seeds.
pub fn instance_id(instance: &InstanceConfig) -> String {
    let canonical = serde_json::to_string(instance).expect("instance configs always serialize");
    let digest = Sha256::digest(canonical.as_bytes());
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    format!("{}-{hex}", instance.kind())
}

struct Job {
    solver: usize,
    seed: u64,
}

/// Runs every (solver, seed) pair with up to `workers` threads; writes one
/// trace file per pair into `out_dir` when given.
pub fn execute(config: &RunConfig, workers: usize, out_dir: Option<&Path>) -> Result<RunReport> {
    config.validate()?;
    let built = BuiltInstance::build(&config.instance)?;
    let modulus = built.strong_convexity();
    let f_star = built.f_star(&config.instance)?;
    let id = instance_id(&config.instance);
    let jobs: Vec<Job> = (0..config.solvers.len())
        .flat_map(|solver| config.seeds.iter().map(move |&seed| Job { solver, seed }))
        .collect();
    let solver_configs = jobs
        .iter()
        .map(|j| config.solvers[j.solver].to_solver_config(j.solver, j.seed, modulus))
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let threshold = match config.instance {
        InstanceConfig::Continual { jump_threshold, .. } => jump_threshold,
        _ => f64::NAN,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| BenchError::Config(format!("workers: {e}")))?;
    let results: Vec<(LabeledTrace, Option<ContinualSummary>)> = pool.install(|| {
        jobs.par_iter()
            .zip(solver_configs.par_iter())
            .map(|(job, sc)| {
                let name = &config.solvers[job.solver].name;
                log::info!("running {name} seed {}", job.seed);
                let out = built.run(sc)?;
                if let Some(dir) = out_dir {
                    let path = dir.join(trace_file_name(name, job.seed));
                    std::fs::write(&path, trace_to_csv(&out.trace)).map_err(io_err(&path))?;
                }
                let cl = out.continual.map(|c| ContinualSummary {
                    solver: name.clone(),
                    seed: job.seed,
                    jumps: c.jumps(threshold),
                    boundaries: c.boundaries.clone(),
                    final_val_error: c.final_val_error,
                });
                Ok((
                    LabeledTrace {
                        instance: id.clone(),
                        solver: name.clone(),
                        seed: job.seed,
                        trace: out.trace,
                    },
                    cl,
                ))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut traces = Vec::with_capacity(results.len());
    let mut continual = Vec::new();
    for (t, c) in results {
        traces.push(t);
        continual.extend(c);
    }
    let summary = compare_table(&traces)?;
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        instance_id: id,
        instance_kind: config.instance.kind().to_string(),
        seeds: config.seeds.clone(),
        solvers: config.solvers.iter().map(|s| s.name.clone()).collect(),
        f_star: f_star.value,
        f_star_source: f_star.source.to_string(),
        config: config.to_toml_string(),
    };
    if let Some(dir) = out_dir {
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(io_err(&path))
        };
        write(SUMMARY_FILE, summary_to_csv(&summary))?;
        write(
            MANIFEST_FILE,
            serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
        )?;
        if !continual.is_empty() {
            write(JUMPS_FILE, jumps_to_csv(&continual))?;
        }
    }
    Ok(RunReport {
        traces,
        summary,
        manifest,
        continual,
        f_star,
    })
}

/// Runs the configuration and writes artifacts into its `output_dir`.
pub fn run_config(config: &RunConfig, workers: usize) -> Result<RunReport> {
    execute(config, workers, Some(&config.output_dir))
}

pub fn jumps_to_csv(rows: &[ContinualSummary]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record([
        "solver",
        "seed",
        "jumps_at_boundaries",
        "jumps_elsewhere",
        "final_val_error",
    ])
    .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.solver.clone(),
            r.seed.to_string(),
            r.jumps.at_boundaries.to_string(),
            r.jumps.elsewhere.to_string(),
            r.final_val_error.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 output")
}

/// Reads the instance id recorded in a run directory's manifest, if any.
pub fn manifest_instance_id(dir: &Path) -> Option<String> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
    let value: serde_json::Value = serde_json::from_str(&text).ok()?;
    value.get("instance_id")?.as_str().map(str::to_string)
}
