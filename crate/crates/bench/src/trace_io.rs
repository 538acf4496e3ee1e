//! Trace CSV files: `k,accessed,wall_seconds,f_true,ul_value_eval,ll_value_eval`
//! followed by `grad_norm_fd` and/or `val_error` when any record carries them.
//! RFC 4180 quoting, LF line endings.

use std::path::Path;

use bilevel_core::solvers::{RunTrace, TraceRecord};

use crate::error::{io_err, BenchError, Result};

pub const BASE_COLUMNS: [&str; 6] = [
    "k",
    "accessed",
    "wall_seconds",
    "f_true",
    "ul_value_eval",
    "ll_value_eval",
];
pub const OPTIONAL_COLUMNS: [&str; 2] = ["grad_norm_fd", "val_error"];

fn writer<W: std::io::Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(w)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Serializes the records of `trace`.
pub fn trace_to_csv(trace: &RunTrace) -> String {
    let grad = trace.records.iter().any(|r| r.grad_norm_fd.is_some());
    let val = trace.records.iter().any(|r| r.val_error.is_some());
    let mut w = writer(Vec::new());
    let mut header: Vec<&str> = BASE_COLUMNS.to_vec();
    if grad {
        header.push(OPTIONAL_COLUMNS[0]);
    }
    if val {
        header.push(OPTIONAL_COLUMNS[1]);
    }
    w.write_record(&header).expect("in-memory write");
    for r in &trace.records {
        let mut row = vec![
            r.k.to_string(),
            r.accessed.to_string(),
            r.wall_seconds.to_string(),
            r.f_true.to_string(),
            r.ul_value_eval.to_string(),
            r.ll_value_eval.to_string(),
        ];
        if grad {
            row.push(opt(r.grad_norm_fd));
        }
        if val {
            row.push(opt(r.val_error));
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ASCII output")
}

pub fn write_trace(path: &Path, trace: &RunTrace) -> Result<()> {
    std::fs::write(path, trace_to_csv(trace)).map_err(io_err(path))
}

fn field<T: std::str::FromStr>(value: &str, column: &str, line: u64) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| BenchError::Trace(format!("line {line}: column {column}: cannot parse {value:?}")))
}

/// Parses a trace CSV. `inner_steps` is not stored in trace files and comes back empty.
pub fn parse_trace_csv(text: &str) -> Result<RunTrace> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| BenchError::Trace(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.len() < BASE_COLUMNS.len() || header[..BASE_COLUMNS.len()] != BASE_COLUMNS {
        return Err(BenchError::Trace(format!(
            "header must start with {}, got {}",
            BASE_COLUMNS.join(","),
            header.join(",")
        )));
    }
    let mut grad_col = None;
    let mut val_col = None;
    for (i, name) in header.iter().enumerate().skip(BASE_COLUMNS.len()) {
        let slot = match name.as_str() {
            "grad_norm_fd" => &mut grad_col,
            "val_error" => &mut val_col,
            other => return Err(BenchError::Trace(format!("unknown column {other:?}"))),
        };
        if slot.replace(i).is_some() {
            return Err(BenchError::Trace(format!("duplicate column {name:?}")));
        }
    }
    let mut trace = RunTrace::default();
    for row in reader.records() {
        let row = row.map_err(|e| BenchError::Trace(e.to_string()))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let optional = |col: Option<usize>, name: &str| -> Result<Option<f64>> {
            match col.map(|c| &row[c]) {
                None => Ok(None),
                Some(v) if v.trim().is_empty() => Ok(None),
                Some(v) => field(v, name, line).map(Some),
            }
        };
        trace.records.push(TraceRecord {
            k: field(&row[0], "k", line)?,
            accessed: field(&row[1], "accessed", line)?,
            wall_seconds: field(&row[2], "wall_seconds", line)?,
            f_true: field(&row[3], "f_true", line)?,
            ul_value_eval: field(&row[4], "ul_value_eval", line)?,
            ll_value_eval: field(&row[5], "ll_value_eval", line)?,
            grad_norm_fd: optional(grad_col, "grad_norm_fd")?,
            val_error: optional(val_col, "val_error")?,
        });
    }
    Ok(trace)
}

pub fn read_trace(path: &Path) -> Result<RunTrace> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_trace_csv(&text)
}

/// Trace text with the `wall_seconds` column blanked, for determinism checks.
pub fn without_wall_seconds(csv_text: &str) -> String {
    csv_text
        .lines()
        .map(|line| {
            let mut parts: Vec<&str> = line.split(',').collect();
            if parts.len() > 2 {
                parts[2] = "";
            }
            parts.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
