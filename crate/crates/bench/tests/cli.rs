use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bilevel_bench::trace_io::{read_trace, without_wall_seconds};

const CONFIG: &str = r#"
seeds = [0, 1]
output_dir = "out"

[instance]
kind = "quadratic"
n = 4
m = 5
noise_std = 0.1
coupling_seed = 3

[[solver]]
name = "bsg_h"
engine = "bsg_h"
max_iters = 60
eval_every = 5
ul_stepsize = { schedule = "harmonic", value = 0.5 }
ll_stepsize = { schedule = "fixed", value = 0.2 }
inner = { policy = "k_squared", gamma = 1.0 }

[[solver]]
name = "bsg_1"
engine = "bsg_1"
max_iters = 60
eval_every = 5
record_grad_norm = true
ul_stepsize = { schedule = "harmonic", value = 0.5 }
ll_stepsize = { schedule = "fixed", value = 0.2 }
inner = { policy = "one_step" }
batch = { ul = 2, ll = 2 }
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bilevel-bench"))
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, out: &Path) -> Output {
    let o = bin().arg("--out").arg(out).arg("run").arg(config).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn read(path: PathBuf) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn run_writes_traces_summary_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("a");
    run(&config, &out);

    let bsg_h = read(out.join("trace_bsg_h_seed0.csv"));
    assert_eq!(
        bsg_h.lines().next().unwrap(),
        "k,accessed,wall_seconds,f_true,ul_value_eval,ll_value_eval"
    );
    let bsg_1 = read(out.join("trace_bsg_1_seed1.csv"));
    assert_eq!(
        bsg_1.lines().next().unwrap(),
        "k,accessed,wall_seconds,f_true,ul_value_eval,ll_value_eval,grad_norm_fd"
    );
    let records: Vec<u64> = bsg_h
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(records, (0..=60).step_by(5).collect::<Vec<_>>());

    let manifest: serde_json::Value = serde_json::from_str(&read(out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["instance_kind"], "quadratic");
    assert_eq!(manifest["f_star"], 0.0);
    assert_eq!(manifest["f_star_source"], "closed_form");
    assert_eq!(manifest["seeds"], serde_json::json!([0, 1]));
    assert_eq!(manifest["solvers"], serde_json::json!(["bsg_h", "bsg_1"]));
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn summary_means_match_the_raw_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("a");
    run(&config, &out);
    let mut rdr = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let solver = &rec[col("solver")];
        let traces: Vec<_> = [0, 1]
            .iter()
            .map(|s| read_trace(&out.join(format!("trace_{solver}_seed{s}.csv"))).unwrap())
            .collect();
        let finals: Vec<_> = traces.iter().map(|t| t.last().unwrap().clone()).collect();
        let mean_f = finals.iter().map(|r| r.f_true).sum::<f64>() / 2.0;
        let min_f = finals.iter().map(|r| r.f_true).fold(f64::INFINITY, f64::min);
        let mean_acc = finals.iter().map(|r| r.accessed as f64).sum::<f64>() / 2.0;
        let get = |name: &str| rec[col(name)].parse::<f64>().unwrap();
        assert!((get("final_f_true_mean") - mean_f).abs() <= 1e-12);
        assert!((get("final_f_true_min") - min_f).abs() <= 1e-12);
        assert!((get("accessed_mean") - mean_acc).abs() <= 1e-12);
        assert_eq!(&rec[col("seeds")], "2");
        rows += 1;
    }
    assert_eq!(rows, 2);
}

#[test]
fn reruns_are_identical_except_wall_seconds() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), CONFIG);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&config, &a);
    let o = bin()
        .args(["--workers", "2", "--out"])
        .arg(&b)
        .arg("run")
        .arg(&config)
        .output()
        .unwrap();
    assert!(o.status.success());
    for solver in ["bsg_h", "bsg_1"] {
        for seed in [0, 1] {
            let name = format!("trace_{solver}_seed{seed}.csv");
            assert_eq!(
                without_wall_seconds(&read(a.join(&name))),
                without_wall_seconds(&read(b.join(&name))),
                "{name}"
            );
        }
    }
    let manifest = |d: &Path| {
        let mut m: serde_json::Value = serde_json::from_str(&read(d.join("manifest.json"))).unwrap();
        m.as_object_mut().unwrap().remove("config");
        m
    };
    assert_eq!(manifest(&a), manifest(&b));
}

#[test]
fn manifest_hash_tracks_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let hash = |text: &str, sub: &str| {
        let dir = tmp.path().join(sub);
        std::fs::create_dir_all(&dir).unwrap();
        let config = write_config(&dir, text);
        run(&config, &dir.join("out"));
        let m: serde_json::Value = serde_json::from_str(&read(dir.join("out/manifest.json"))).unwrap();
        m["config_hash"].as_str().unwrap().to_string()
    };
    let base = hash(CONFIG, "base");
    assert_eq!(base, hash(CONFIG, "same"));
    assert_ne!(base, hash(&CONFIG.replace("max_iters = 60", "max_iters = 50"), "iters"));
    assert_ne!(
        base,
        hash(&CONFIG.replace("noise_std = 0.1", "noise_std = 0.2"), "noise")
    );
}

#[test]
fn compare_and_rates_read_a_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("a");
    run(&config, &out);
    let o = bin().arg("compare").arg(&out).output().unwrap();
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap(), read(out.join("summary.csv")));

    let o = bin()
        .arg("rates")
        .arg(out.join("trace_bsg_h_seed0.csv"))
        .arg(out.join("trace_bsg_h_seed1.csv"))
        .args(["--fstar", "0", "--window", "5:60"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("slope "), "{text}");
    assert!(text.trim_end().ends_with("traces 2"), "{text}");
}

#[test]
fn capability_mismatch_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let text = CONFIG.replace("coupling_seed = 3", "coupling_seed = 3\nequalities = 2");
    let config = write_config(tmp.path(), &text);
    let o = bin()
        .arg("--out")
        .arg(tmp.path().join("x"))
        .arg("run")
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("solver[0]"));
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn malformed_config_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &CONFIG.replace("noise_std", "noise_sd"));
    let o = bin().arg("run").arg(&config).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let missing = bin().arg("run").arg(tmp.path().join("nope.toml")).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
}
