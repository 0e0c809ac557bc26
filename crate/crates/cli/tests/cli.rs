use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const TWO_BY_TWO: &str = "%%MatrixMarket matrix coordinate real symmetric\n2 2 3\n1 1 4\n2 1 1\n2 2 3\n";

fn laplacian_mtx(k: usize) -> String {
    let n = k * k;
    let mut entries = Vec::new();
    for i in 0..k {
        for j in 0..k {
            let r = i * k + j + 1;
            entries.push(format!("{r} {r} 4"));
            if j > 0 {
                entries.push(format!("{r} {} -1", r - 1));
            }
            if i > 0 {
                entries.push(format!("{r} {} -1", r - k));
            }
        }
    }
    format!(
        "%%MatrixMarket matrix coordinate real symmetric\n{n} {n} {}\n{}\n",
        entries.len(),
        entries.join("\n")
    )
}

fn jpcg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jpcg")).args(args).output().unwrap()
}

fn setup(matrix: &str) -> (TempDir, String) {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("a.mtx");
    fs::write(&path, matrix).unwrap();
    let s = path.to_str().unwrap().to_string();
    (dir, s)
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn report(path: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn compare_mode_reports_delta_and_divergence() {
    let (dir, m) = setup(&laplacian_mtx(5));
    let r = p(&dir, "r.json");
    let out = jpcg(&["solve", "--matrix", &m, "--mode", "compare", "--report", &r]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = report(&r);
    assert_eq!(v["converged"], true);
    let cmp = &v["comparison"];
    assert!(cmp["iteration_delta"].as_i64().unwrap().abs() <= 2);
    assert!(cmp.get("first_divergence").is_some());
}

#[test]
fn counters_by_schedule_mode() {
    let (dir, m) = setup(&laplacian_mtx(6));
    let r = p(&dir, "r.json");
    assert_eq!(jpcg(&["solve", "--matrix", &m, "--report", &r]).status.code(), Some(0));
    let v = report(&r);
    assert_eq!(v["writes_per_iteration"], 4);
    assert_eq!(v["reads_per_iteration"], 10);
    assert!(v["estimated_cycles"].as_u64().unwrap() > 0);
    assert!(v["vector_reads"].as_array().unwrap().len() as u64 == v["iterations"].as_u64().unwrap());
    assert_eq!(
        jpcg(&["solve", "--matrix", &m, "--schedule", "naive", "--report", &r])
            .status
            .code(),
        Some(0)
    );
    let v = report(&r);
    assert_eq!(v["reads_per_iteration"], 14);
    assert_eq!(v["writes_per_iteration"], 5);
}

#[test]
fn reference_mode_leaves_counters_null() {
    let (dir, m) = setup(TWO_BY_TWO);
    let r = p(&dir, "r.json");
    assert_eq!(
        jpcg(&["solve", "--matrix", &m, "--mode", "reference", "--report", &r])
            .status
            .code(),
        Some(0)
    );
    let v = report(&r);
    assert_eq!(v["solver"], "reference");
    for key in [
        "vector_reads",
        "reads_per_iteration",
        "writes_per_iteration",
        "estimated_cycles",
    ] {
        assert!(v[key].is_null(), "{key}");
    }
}

#[test]
fn budget_exhaustion_exits_two() {
    let (dir, m) = setup(&laplacian_mtx(5));
    let r = p(&dir, "r.json");
    let out = jpcg(&["solve", "--matrix", &m, "--max-iters", "2", "--report", &r]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(report(&r)["termination"], "budget");
}

#[test]
fn errors_exit_one() {
    let (dir, m) = setup(TWO_BY_TWO);
    let missing = p(&dir, "missing.mtx");
    assert_eq!(jpcg(&["solve", "--matrix", &missing]).status.code(), Some(1));
    assert_eq!(
        jpcg(&["solve", "--matrix", &m, "--fifo-depth", "nope=3"]).status.code(),
        Some(1)
    );
    let b = p(&dir, "b.txt");
    fs::write(&b, "1\n2\n3\n").unwrap();
    let out = jpcg(&["solve", "--matrix", &m, "--b", &b]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));
    let out = jpcg(&["solve", "--matrix", &m, "--scheme", "fp16"]);
    assert_ne!(out.status.code(), Some(0));
    let out = jpcg(&["solve", "--matrix", &m, "--fifo-depth", "M5->M6:r=33"]);
    assert_eq!(out.status.code(), Some(0), "a 2-element stream never fills the join");
}

#[test]
fn tight_join_fifo_reports_deadlock() {
    let (_dir, m) = setup(&laplacian_mtx(7));
    let out = jpcg(&["solve", "--matrix", &m, "--fifo-depth", "M5->M6:r=33"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("{M5: push M5->M6:r, M6: pop M5->M6:z}"), "{err}");
}

#[test]
fn trace_csv_is_reproducible_and_round_trips() {
    let (dir, m) = setup(&laplacian_mtx(5));
    let (t1, t2) = (p(&dir, "t1.csv"), p(&dir, "t2.csv"));
    let r = p(&dir, "r.json");
    for t in [&t1, &t2] {
        assert_eq!(
            jpcg(&["solve", "--matrix", &m, "--trace", t, "--report", &r])
                .status
                .code(),
            Some(0)
        );
    }
    let a = fs::read(&t1).unwrap();
    assert_eq!(a, fs::read(&t2).unwrap());
    let text = String::from_utf8(a).unwrap();
    let v = report(&r);
    assert_eq!(text.lines().next(), Some("iteration,rr"));
    assert_eq!(text.lines().count() as u64, v["iterations"].as_u64().unwrap() + 2);
    let parsed = jpcg_core_trace(&t1);
    let from_json: Vec<f64> = v["residual_trace"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["rr"].as_f64().unwrap())
        .collect();
    assert_eq!(parsed, from_json);
}

fn jpcg_core_trace(path: &str) -> Vec<f64> {
    fs::read_to_string(Path::new(path))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split_once(',').unwrap().1.parse().unwrap())
        .collect()
}

#[test]
fn artifacts_are_written() {
    let (dir, m) = setup(&laplacian_mtx(3));
    let (log, tr, sd, x) = (p(&dir, "log"), p(&dir, "tr"), p(&dir, "sd"), p(&dir, "x"));
    let out = jpcg(&[
        "solve",
        "--matrix",
        &m,
        "--instruction-log",
        &log,
        "--transcripts",
        &tr,
        "--schedule-dump",
        &sd,
        "--solution",
        &x,
        "--scheduler",
        "conc",
        "--report",
        &p(&dir, "r.json"),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(&log).unwrap().lines().count() > 10);
    assert!(fs::read_to_string(&tr).unwrap().contains("M5->M6:z"));
    assert!(!fs::read_to_string(&sd).unwrap().is_empty());
    assert_eq!(fs::read_to_string(&x).unwrap().lines().count(), 9);
}
