//! Per-solver summary tables over seeds.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use bilevel_core::solvers::RunTrace;

use crate::error::{io_err, BenchError, Result};

/// One finished run.
#[derive(Debug, Clone)]
pub struct LabeledTrace {
    /// Identifies the instance; all traces in one table must agree.
    pub instance: String,
    pub solver: String,
    pub seed: u64,
    pub trace: RunTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub solver: String,
    pub seeds: usize,
    pub final_f_true_mean: f64,
    pub final_f_true_min: f64,
    pub accessed_mean: f64,
    pub wall_seconds_mean: f64,
    pub final_val_error_mean: Option<f64>,
    /// 1 = best mean final `f_true`; ties share a rank.
    pub rank: usize,
}

fn final_record(t: &LabeledTrace) -> Result<&bilevel_core::solvers::TraceRecord> {
    t.trace
        .last()
        .ok_or_else(|| BenchError::Compare(format!("trace of {} seed {} is empty", t.solver, t.seed)))
}

/// Builds the summary, ordered by rank then solver name.
pub fn compare_table(traces: &[LabeledTrace]) -> Result<Vec<SummaryRow>> {
    let first = traces.first().ok_or_else(|| BenchError::Compare("no traces".into()))?;
    if let Some(other) = traces.iter().find(|t| t.instance != first.instance) {
        return Err(BenchError::Compare(format!(
            "mismatched instances: {:?} ({} seed {}) vs {:?} ({} seed {})",
            first.instance, first.solver, first.seed, other.instance, other.solver, other.seed
        )));
    }
    let all_seeds: BTreeSet<u64> = traces.iter().map(|t| t.seed).collect();
    let mut by_solver: BTreeMap<&str, BTreeMap<u64, &LabeledTrace>> = BTreeMap::new();
    for t in traces {
        if by_solver.entry(&t.solver).or_default().insert(t.seed, t).is_some() {
            return Err(BenchError::Compare(format!(
                "duplicate trace for {} seed {}",
                t.solver, t.seed
            )));
        }
    }
    let mut gaps = Vec::new();
    for (solver, runs) in &by_solver {
        for seed in all_seeds.iter().filter(|s| !runs.contains_key(s)) {
            gaps.push(format!("{solver} seed {seed}"));
        }
    }
    if !gaps.is_empty() {
        return Err(BenchError::Compare(format!("missing traces: {}", gaps.join(", "))));
    }
    let mut rows = Vec::with_capacity(by_solver.len());
    for (solver, runs) in &by_solver {
        let n = runs.len() as f64;
        let mut f_sum = 0.0;
        let mut f_min = f64::INFINITY;
        let mut acc = 0.0;
        let mut wall = 0.0;
        let mut val = Some(0.0);
        for t in runs.values() {
            let r = final_record(t)?;
            f_sum += r.f_true;
            f_min = f_min.min(r.f_true);
            acc += r.accessed as f64;
            wall += r.wall_seconds;
            val = match (val, r.val_error) {
                (Some(s), Some(v)) => Some(s + v),
                _ => None,
            };
        }
        rows.push(SummaryRow {
            solver: solver.to_string(),
            seeds: runs.len(),
            final_f_true_mean: f_sum / n,
            final_f_true_min: f_min,
            accessed_mean: acc / n,
            wall_seconds_mean: wall / n,
            final_val_error_mean: val.map(|s| s / n),
            rank: 0,
        });
    }
    for i in 0..rows.len() {
        let better = rows
            .iter()
            .filter(|r| r.final_f_true_mean < rows[i].final_f_true_mean)
            .count();
        rows[i].rank = better + 1;
    }
    rows.sort_by(|a, b| a.rank.cmp(&b.rank).then_with(|| a.solver.cmp(&b.solver)));
    Ok(rows)
}

pub fn summary_to_csv(rows: &[SummaryRow]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record([
        "rank",
        "solver",
        "seeds",
        "final_f_true_mean",
        "final_f_true_min",
        "accessed_mean",
        "wall_seconds_mean",
        "final_val_error_mean",
    ])
    .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.rank.to_string(),
            r.solver.clone(),
            r.seeds.to_string(),
            r.final_f_true_mean.to_string(),
            r.final_f_true_min.to_string(),
            r.accessed_mean.to_string(),
            r.wall_seconds_mean.to_string(),
            r.final_val_error_mean.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 output")
}

pub fn trace_file_name(solver: &str, seed: u64) -> String {
    format!("trace_{solver}_seed{seed}.csv")
}

/// Inverse of [`trace_file_name`].
pub fn parse_trace_file_name(name: &str) -> Option<(String, u64)> {
    let stem = name.strip_prefix("trace_")?.strip_suffix(".csv")?;
    let (solver, seed) = stem.rsplit_once("_seed")?;
    if solver.is_empty() {
        return None;
    }
    Some((solver.to_string(), seed.parse().ok()?))
}

/// Loads every trace file in `dir`, labeled with `instance`.
pub fn load_dir(dir: &Path, instance: &str) -> Result<Vec<LabeledTrace>> {
    let mut out = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(io_err(dir))?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let name = entry.file_name();
        let Some((solver, seed)) = name.to_str().and_then(parse_trace_file_name) else {
            continue;
        };
        out.push(LabeledTrace {
            instance: instance.to_string(),
            solver,
            seed,
            trace: crate::trace_io::read_trace(&entry.path())?,
        });
    }
    Ok(out)
}
