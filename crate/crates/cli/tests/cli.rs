use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn preset(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(rel)
}

fn hetsplit(args: &[&str], model: &str, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hetsplit"));
    cmd.args(args);
    if args[0] != "report" {
        cmd.arg("--model")
            .arg(preset(&format!("models/{model}.json")))
            .arg("--profile")
            .arg(preset("profiles/desk-balanced.json"));
    }
    cmd.arg("--out").arg(out);
    cmd.output().expect("spawn hetsplit")
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&hetsplit(&["bench"], "toy-64", out));
    ok(&hetsplit(&["plan", "--budget", "60%"], "toy-64", out));
    ok(&hetsplit(&["simulate"], "toy-64", out));
    ok(&hetsplit(&["sweep"], "toy-64", out));
    ok(&hetsplit(&["run", "--gen-len", "8"], "toy-64", out));
    ok(&hetsplit(&["report"], "toy-64", out));

    for f in [
        "samples.json",
        "curves.json",
        "plan.json",
        "timeline.csv",
        "breakdown.json",
        "strategies.json",
        "strategies.csv",
        "sweep.csv",
        "run_report.json",
        "run_timeline.csv",
        "param_trace.csv",
        "report.md",
        "breakdown.csv",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }

    let md = fs::read_to_string(out.join("report.md")).unwrap();
    for s in ["| naive |", "| pinned |", "| hybrid |"] {
        assert!(md.contains(s), "report lacks {s}");
    }

    let bd = fs::read_to_string(out.join("breakdown.csv")).unwrap();
    let rows = data_lines(&bd);
    assert_eq!(rows[0], "lane,busy_pct,idle_pct");
    assert_eq!(rows.len(), 5);
    for r in &rows[1..] {
        let v: Vec<f64> = r.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
        assert!((v[0] + v[1] - 100.0).abs() <= 0.011, "{r}");
    }

    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run_report.json")).unwrap()).unwrap();
    assert_eq!(run["provenance"]["model"], "toy-64");
    assert_eq!(run["per_token_ms"].as_array().unwrap().len(), 8);
    assert!(run["checksum"].as_str().unwrap().len() == 64);
    let ratio = run["makespan"].as_f64().unwrap() / run["simulated_makespan"].as_f64().unwrap();
    assert!((ratio - 1.0).abs() <= 0.15, "engine/simulator ratio {ratio}");

    let tl = fs::read_to_string(out.join("timeline.csv")).unwrap();
    assert!(tl.starts_with("# tool=hetsplit"));
    assert!(tl.contains("\nlane,module,step,kind,start,end\n"));
}

#[test]
fn artifacts_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for out in [a.path(), b.path()] {
        ok(&hetsplit(&["bench"], "opt-125m", out));
        ok(&hetsplit(&["plan", "--budget", "60%"], "opt-125m", out));
        ok(&hetsplit(&["simulate"], "opt-125m", out));
        ok(&hetsplit(&["sweep", "--budgets", "40%,70%"], "opt-125m", out));
    }
    for f in [
        "samples.json",
        "curves.json",
        "plan.json",
        "timeline.csv",
        "breakdown.json",
        "strategies.json",
        "sweep.csv",
    ] {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn opt_125m_bench_has_two_shape_classes() {
    let dir = tempfile::tempdir().unwrap();
    ok(&hetsplit(&["bench"], "opt-125m", dir.path()));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("curves.json")).unwrap()).unwrap();
    assert_eq!(v["curves"].as_array().unwrap().len(), 2);
}

#[test]
fn full_budget_keeps_everything_resident() {
    let dir = tempfile::tempdir().unwrap();
    ok(&hetsplit(&["bench"], "opt-125m", dir.path()));
    ok(&hetsplit(&["plan", "--budget", "200%"], "opt-125m", dir.path()));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("plan.json")).unwrap()).unwrap();
    for d in v["decisions"].as_array().unwrap() {
        assert_eq!(d["placement"], "GpuResident", "{}", d["module"]["id"]);
    }
}

#[test]
fn infeasible_budget_exits_2_with_minimum() {
    let dir = tempfile::tempdir().unwrap();
    ok(&hetsplit(&["bench"], "toy-64", dir.path()));
    let o = hetsplit(&["plan", "--budget", "1000"], "toy-64", dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("minimum feasible budget"));
    assert!(!dir.path().join("plan.json").exists());
}

#[test]
fn internal_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    // No curves yet.
    let o = hetsplit(&["plan", "--budget", "50%"], "toy-64", dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("curves.json"));
}

#[test]
fn report_lists_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    ok(&hetsplit(&["bench"], "toy-64", dir.path()));
    ok(&hetsplit(&["plan", "--budget", "60%"], "toy-64", dir.path()));
    ok(&hetsplit(&["simulate"], "toy-64", dir.path()));
    fs::remove_file(dir.path().join("timeline.csv")).unwrap();
    let o = hetsplit(&["report"], "toy-64", dir.path());
    assert_ne!(o.status.code(), Some(0));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("timeline.csv"), "{err}");
    assert!(!err.contains("plan.json"));
}

#[test]
fn gen_len_zero_run_has_empty_decode() {
    let dir = tempfile::tempdir().unwrap();
    ok(&hetsplit(&["bench"], "toy-64", dir.path()));
    ok(&hetsplit(&["plan", "--budget", "60%"], "toy-64", dir.path()));
    ok(&hetsplit(&["run", "--gen-len", "0", "--prompt-len", "4"], "toy-64", dir.path()));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run_report.json")).unwrap()).unwrap();
    assert!(v["per_token_ms"].as_array().unwrap().is_empty());
    assert!(v["generated_tokens"].as_array().unwrap().is_empty());
}

#[test]
fn sweep_latency_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    ok(&hetsplit(&["bench"], "opt-125m", dir.path()));
    ok(&hetsplit(&["sweep"], "opt-125m", dir.path()));
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows = data_lines(&text);
    let header: Vec<&str> = rows[0].split(',').collect();
    let lat = header.iter().position(|h| *h == "per_token_latency").unwrap();
    let feas = header.iter().position(|h| *h == "feasible").unwrap();
    let vals: Vec<f64> = rows[1..]
        .iter()
        .map(|r| r.split(',').collect::<Vec<_>>())
        .filter(|c| c[feas] == "true")
        .map(|c| c[lat].parse().unwrap())
        .collect();
    assert!(vals.len() >= 3);
    for w in vals.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "{vals:?}");
    }
}

#[test]
fn measured_bench_leaves_no_lock() {
    let dir = tempfile::tempdir().unwrap();
    ok(&hetsplit(&["bench", "--backend", "measured"], "toy-64", dir.path()));
    assert!(dir.path().join("curves.json").is_file());
    assert!(!dir.path().join(".bench.lock").exists());
}

#[test]
fn engine_refuses_large_models() {
    let dir = tempfile::tempdir().unwrap();
    ok(&hetsplit(&["bench"], "opt-6.7b", dir.path()));
    ok(&hetsplit(&["plan", "--budget", "50%"], "opt-6.7b", dir.path()));
    let o = hetsplit(&["run"], "opt-6.7b", dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("desk engine"));
}
