use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn plansim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plansim"))
        .args(args)
        .env_remove("PLANSIM_PROFILE_DIR")
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn plansim")
}

fn ok(args: &[&str]) -> String {
    let out = plansim(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    plansim(args).status.code().unwrap()
}

fn cfg(name: &str) -> String {
    configs().join(name).display().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn tiny_single_gpu_is_compute_only() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    ok(&[
        "simulate",
        &cfg("simulate-tiny.json"),
        "--report",
        report.to_str().unwrap(),
    ]);
    let r = read_json(&report);
    let busy = &r["result"]["per_device_busy"]["0"];
    assert_eq!(busy["comm"].as_f64().unwrap(), 0.0);
    let compute = busy["compute"].as_f64().unwrap();
    let iter = r["result"]["iter_time"].as_f64().unwrap();
    assert!(compute > 0.0);
    assert!(
        (iter - compute).abs() <= 1e-12 * compute,
        "{iter} vs {compute}"
    );
    assert_eq!(r["lowering"]["comm_queries"], 0);
}

#[test]
fn simulate_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let ta = dir.path().join("a.csv");
    let tb = dir.path().join("b.csv");
    for (r, t) in [(&a, &ta), (&b, &tb)] {
        ok(&[
            "simulate",
            &cfg("simulate-tiny.json"),
            "--report",
            r.to_str().unwrap(),
            "--timeline",
            t.to_str().unwrap(),
        ]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read(&ta).unwrap(), std::fs::read(&tb).unwrap());
    let timeline = std::fs::read_to_string(&ta).unwrap();
    assert!(timeline.starts_with("device,stream,task_label,start_us,end_us\n"));
}

#[test]
fn mtnlg_row_matches_golden() {
    let stdout = ok(&["simulate", &cfg("simulate-mtnlg.json")]);
    let golden = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/simulate-mtnlg.txt"),
    )
    .unwrap();
    assert_eq!(stdout, golden);
}

#[test]
fn graph_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let gj = dir.path().join("g.json");
    let gs = dir.path().join("g.txt");
    ok(&[
        "simulate",
        &cfg("simulate-tiny.json"),
        "--graph-json",
        gj.to_str().unwrap(),
        "--graph-summary",
        gs.to_str().unwrap(),
    ]);
    let g = read_json(&gj);
    assert!(!g["nodes"].as_array().unwrap().is_empty());
    assert!(std::fs::read_to_string(&gs).unwrap().lines().count() > 1);
}

#[test]
fn sweep_tiny_rows() {
    let csv = ok(&["sweep", &cfg("sweep-tiny.json")]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 9);
    assert!(lines[0].starts_with("t,d,p,"));
    let mut triples: Vec<&str> = lines[1..].iter().map(|l| &l[..5]).collect();
    triples.sort();
    assert_eq!(
        triples,
        ["1,1,1", "1,1,2", "1,2,1", "1,2,2", "2,1,1", "2,1,2", "2,2,1", "2,2,2"]
    );

    let one = ok(&[
        "sweep",
        &cfg("sweep-tiny.json"),
        "--t-max",
        "1",
        "--d-max",
        "1",
        "--p-max",
        "1",
    ]);
    assert_eq!(one.lines().count(), 2);
    assert_eq!(
        csv,
        ok(&["sweep", &cfg("sweep-tiny.json"), "--parallel", "3"])
    );
}

#[test]
fn sweep_skip_reasons_and_picks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let picks = dir.path().join("p.json");
    let stdout = ok(&[
        "sweep",
        &cfg("sweep-tiny.json"),
        "--t-max",
        "3",
        "--out",
        out.to_str().unwrap(),
        "--picks",
        picks.to_str().unwrap(),
        "--baseline",
        "4",
        "--window",
        "0.5",
    ]);
    assert!(stdout.contains("12 points, 8 valid"), "{stdout}");
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv
        .lines()
        .filter(|l| l.starts_with("3,"))
        .all(|l| l.ends_with(",false,tensor degree 3 does not divide heads 4 and hidden size 64")));
    let p = read_json(&picks);
    let gpus = p["picks"][0]["point"]["gpus"].as_u64().unwrap();
    assert!((2..=4).contains(&gpus));
}

#[test]
fn chinchilla_naive_formula() {
    let out = ok(&["chinchilla", "naive", "--compute", "2.7165e24"]);
    assert!(out.contains("params   1.4669e11"), "{out}");
    assert!(out.contains("tokens   3.0903e12"), "{out}");
    let by_gpus = ok(&["chinchilla", "naive", "--gpus", "3360", "--days", "30"]);
    assert!(by_gpus.contains("compute  2.7172e24"), "{by_gpus}");
    assert_eq!(code(&["chinchilla", "naive", "--compute=-1"]), 2);
    assert_eq!(code(&["chinchilla", "naive"]), 2);
}

#[test]
fn chinchilla_injected_table_selects_bold_row() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("c.json");
    let out = ok(&[
        "chinchilla",
        "effective",
        &cfg("chinchilla-grid.json"),
        "--out",
        json.to_str().unwrap(),
    ]);
    assert!(out.contains("selected: hidden 10240 layers 60"), "{out}");
    let r = read_json(&json);
    assert_eq!(r["selected"]["best_plan"]["d"], 105);
    assert_eq!(r["points"].as_array().unwrap().len(), 10);
}

#[test]
fn chinchilla_empty_grid_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.json");
    std::fs::write(&path, r#"{"gpus": 8, "days_budget": 1, "grid": []}"#).unwrap();
    let out = plansim(&["chinchilla", "effective", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid is empty"));
}

#[test]
fn cluster_toy_dominance() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    ok(&[
        "cluster",
        &cfg("cluster-toy.json"),
        "--out",
        a.to_str().unwrap(),
    ]);
    ok(&[
        "cluster",
        &cfg("cluster-toy.json"),
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let r = read_json(&a);
    assert_eq!(r["jobs"], 3);
    for key in ["deadline_ratio", "avg_jct", "makespan"] {
        assert_eq!(r["dominance"][key], true, "{key}");
    }
    assert_eq!(r["baseline"]["metrics"]["completed"], 3);
    for j in r["optimal"]["jobs"].as_array().unwrap() {
        assert!(j["jct"].as_f64().is_some());
        assert!(j["deadline_met"].is_boolean());
    }
}

#[test]
fn cluster_synthetic_seed_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.json");
    std::fs::write(
        &conf,
        format!(
            r#"{{"catalog": "{}", "total_gpus": 16, "trace": {{"synthetic": {{"seed": 5, "jobs": 12, "mean_interarrival_s": 0.5, "min_iterations": 100000, "max_iterations": 1000000}}}}}}"#,
            cfg("catalog-toy.json")
        ),
    )
    .unwrap();
    let curves = dir.path().join("curves.json");
    let trace = dir.path().join("trace.csv");
    let first = ok(&[
        "cluster",
        conf.to_str().unwrap(),
        "--curves-out",
        curves.to_str().unwrap(),
        "--trace-out",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(first, ok(&["cluster", conf.to_str().unwrap()]));
    assert_eq!(std::fs::read_to_string(&trace).unwrap().lines().count(), 13);

    // Cached curves give the same schedule.
    let cached = dir.path().join("cached.json");
    std::fs::write(
        &cached,
        format!(
            r#"{{"catalog": "{}", "total_gpus": 16, "curves": "curves.json", "trace": {{"path": "trace.csv"}}}}"#,
            cfg("catalog-toy.json")
        ),
    )
    .unwrap();
    assert_eq!(first, ok(&["cluster", cached.to_str().unwrap()]));
}

#[test]
fn cluster_empty_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e.json");
    ok(&[
        "cluster",
        &cfg("cluster-empty.json"),
        "--out",
        out.to_str().unwrap(),
    ]);
    let r = read_json(&out);
    assert_eq!(r["jobs"], 0);
    assert_eq!(r["baseline"]["metrics"]["makespan"].as_f64(), Some(0.0));
    assert_eq!(r["optimal"]["metrics"]["makespan"].as_f64(), Some(0.0));
}

#[test]
fn cluster_bad_trace_names_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("t.csv"),
        "job_id,arrival_s,model_id,iterations,lambda\n0,0,tiny-a,10,1.0\n1,0,tiny-a,10,9\n",
    )
    .unwrap();
    let conf = dir.path().join("c.json");
    std::fs::write(
        &conf,
        format!(
            r#"{{"catalog": "{}", "total_gpus": 16, "trace": {{"path": "t.csv"}}}}"#,
            cfg("catalog-toy.json")
        ),
    )
    .unwrap();
    let out = plansim(&["cluster", conf.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("lambda"), "{err}");
}

#[test]
fn exit_codes() {
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["simulate"]), 1);
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["simulate", "/nonexistent/config.json"]), 2);

    let dir = tempfile::tempdir().unwrap();
    let model = cfg("models/gpt-tiny.json");
    let write = |name: &str, body: String| {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p.display().to_string()
    };
    let typo = write(
        "typo.json",
        format!(
            r#"{{"model": "{model}", "plan": {{"t":1,"d":1,"p":1,"global_batch":4}}, "profile": []}}"#
        ),
    );
    let bad_plan = write(
        "plan.json",
        format!(r#"{{"model": "{model}", "plan": {{"t":3,"d":1,"p":1,"global_batch":4}}}}"#),
    );
    let no_fallback = write(
        "nofb.json",
        format!(
            r#"{{"model": "{model}", "plan": {{"t":1,"d":1,"p":1,"global_batch":4}}, "cost": {{"fallback": false}}}}"#
        ),
    );
    assert_eq!(code(&["simulate", &typo]), 2);
    assert_eq!(code(&["simulate", &bad_plan]), 2);

    // A lookup miss surfaces at the cost-database stage, and nothing is written.
    let report = dir.path().join("never.json");
    let out = plansim(&[
        "simulate",
        &no_fallback,
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cost database"));
    assert!(!report.exists());
    assert_eq!(
        code(&["sweep", &cfg("sweep-tiny.json"), "--parallel", "0"]),
        2
    );
}

#[test]
fn profiles_resolve_through_profile_dir() {
    let dir = tempfile::tempdir().unwrap();
    let profiles = dir.path().join("profiles");
    std::fs::create_dir(&profiles).unwrap();
    let synth = profiles.join("synth.json");
    ok(&[
        "synth-profile",
        "--seed",
        "3",
        "--out",
        synth.to_str().unwrap(),
    ]);
    assert_eq!(
        std::fs::read_to_string(&synth).unwrap(),
        ok(&["synth-profile", "--seed", "3"])
    );
    ok(&["validate-profile", synth.to_str().unwrap()]);

    let conf = dir.path().join("c.json");
    std::fs::write(
        &conf,
        format!(
            r#"{{"model": "{}", "plan": {{"t":1,"d":2,"p":1,"global_batch":4}}, "profiles": ["synth.json"]}}"#,
            cfg("models/gpt-tiny.json")
        ),
    )
    .unwrap();
    assert_eq!(code(&["simulate", conf.to_str().unwrap()]), 2);
    ok(&[
        "simulate",
        conf.to_str().unwrap(),
        "--profile-dir",
        profiles.to_str().unwrap(),
    ]);
    let via_env = Command::new(env!("CARGO_BIN_EXE_plansim"))
        .args(["simulate", conf.to_str().unwrap()])
        .env("PLANSIM_PROFILE_DIR", &profiles)
        .output()
        .unwrap();
    assert!(via_env.status.success());
}

#[test]
fn validate_profile_flags_broken_rows() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"collectives": [{"kind": "allreduce", "n": 8, "bytes": 1024, "us": -1.0}]}"#,
    )
    .unwrap();
    let out = plansim(&["validate-profile", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAILED"));
}
