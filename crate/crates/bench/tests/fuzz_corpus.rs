//! Feeds the checked-in fuzz corpus through every parser entry point.

use std::path::PathBuf;

use bilevel_bench::config::RunConfig;
use bilevel_bench::trace_io::parse_trace_csv;
use bilevel_core::instances::data::{parse_csv_dataset, parse_idx};

fn corpus(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (
                path.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&path).unwrap(),
            )
        })
        .collect();
    files.sort();
    assert!(!files.is_empty(), "{}", dir.display());
    files
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn config_seeds_parse_and_roundtrip() {
    for (name, bytes) in corpus("config_toml") {
        let config = RunConfig::from_toml_str(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let again = RunConfig::from_toml_str(&config.to_toml_string()).unwrap();
        assert_eq!(config.hash(), again.hash(), "{name}");
    }
}

#[test]
fn dataset_seeds() {
    for (name, bytes) in corpus("csv_dataset") {
        let parsed = parse_csv_dataset(text(&bytes));
        assert_eq!(
            parsed.is_ok(),
            !matches!(name.as_str(), "ragged.csv" | "nonfinite.csv"),
            "{name}: {parsed:?}"
        );
    }
}

#[test]
fn idx_seeds() {
    for (name, bytes) in corpus("idx") {
        let parsed = parse_idx(&bytes);
        assert_eq!(
            parsed.is_ok(),
            name == "labels.idx" || name == "images.idx",
            "{name}: {parsed:?}"
        );
    }
}

#[test]
fn trace_seeds() {
    for (name, bytes) in corpus("trace_csv") {
        let parsed = parse_trace_csv(text(&bytes));
        assert_eq!(parsed.is_ok(), name != "bad_header.csv", "{name}: {parsed:?}");
    }
}
