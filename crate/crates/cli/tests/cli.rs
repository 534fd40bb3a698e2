use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sva(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sva"))
        .args(args)
        .output()
        .unwrap()
}

fn small_config(dir: &Path) -> String {
    let cfg = serde_json::json!({
        "scenario": "tiny",
        "design": "random",
        "sem": {
            "J": 40, "K": 2, "L": 2, "d_max": 1,
            "sigma_y": 1.0, "sigma_c": 1.0, "sigma_x": 1.0, "sigma_h": 1.0,
            "sparsity": { "p0j": 0.5, "p0k": 0.5, "p0beta": 0.5, "p_dse": 0.25 },
            "dense_gamma": false
        },
        "n": 30,
        "M": 2,
        "pipeline": { "degree": 1, "include_intercept": true,
                      "pa": { "B": 10, "alpha": 0.1 },
                      "signature": { "selector": "lfdr", "alpha": 0.5, "adjust_for_y": false } },
        "seed": 3
    });
    let path = dir.join("cfg.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_writes_dataset_and_spec() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = sva(&[
        "simulate",
        "--scenario",
        "lowdim",
        "--n",
        "20",
        "--seed",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let data = fs::read_to_string(out.join("data.csv")).unwrap();
    assert_eq!(data.lines().next().unwrap(), "y,x1,x2,x3,x4");
    assert_eq!(data.lines().count(), 21);
    assert!(out.join("sem.json").exists());
}

#[test]
fn run_overrides_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = sva(&[
            "run",
            "--config",
            &cfg,
            "--reps",
            "3",
            "--seed",
            "8",
            "--scenario",
            "renamed",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(summary["M"], 3);
        assert_eq!(summary["seed"], 8);
        assert_eq!(summary["scenario"], "renamed");
    }
    let ra = fs::read(a.join("results.csv")).unwrap();
    assert_eq!(ra, fs::read(b.join("results.csv")).unwrap());
    let rows = String::from_utf8(ra).unwrap().lines().count() - 1;
    let failures = fs::read_to_string(a.join("failures.csv"))
        .unwrap()
        .lines()
        .count()
        - 1;
    assert_eq!(rows + failures, 3 * 4);
}

#[test]
fn sweep_runs_every_value() {
    let dir = tempfile::tempdir().unwrap();
    let base: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(small_config(dir.path())).unwrap()).unwrap();
    let sweep = serde_json::json!({ "parameter": "sigma_c", "values": [0.5, 1.0], "base": base });
    let path = dir.path().join("sweep.json");
    fs::write(&path, sweep.to_string()).unwrap();
    let out = dir.path().join("out");
    let o = sva(&[
        "sweep",
        "--config",
        path.to_str().unwrap(),
        "--reps",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let points: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(points.as_array().unwrap().len(), 2);
    assert!(out.join("sweep.csv").exists());
    assert!(out.join("point_1/results.csv").exists());
}

#[test]
fn pa_and_fdr_read_csv_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    let mut text = String::from("a,b,c,d,e,f\n");
    for i in 0..12 {
        let row: Vec<String> = (0..6)
            .map(|j| (((i * 7 + j * 3) % 11) as f64 * 0.1).to_string())
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(&m, text).unwrap();
    let o = sva(&[
        "pa",
        "--input",
        m.to_str().unwrap(),
        "--center",
        "--b",
        "20",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rep["B"], 20);
    assert!(rep["L_hat"].is_u64());

    let p = dir.path().join("p.csv");
    let ps: Vec<String> = (1..=20).map(|i| (i as f64 / 21.0).to_string()).collect();
    fs::write(&p, format!("pvalue\n{}\n", ps.join("\n"))).unwrap();
    let out = dir.path().join("q.csv");
    let o = sva(&[
        "fdr",
        "--input",
        p.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let q = fs::read_to_string(out).unwrap();
    assert_eq!(q.lines().next().unwrap(), "pvalue,qvalue,lfdr");
    assert_eq!(q.lines().count(), 21);
    assert!(String::from_utf8_lossy(&o.stderr).contains("pi0"));
}

#[test]
fn exit_codes_distinguish_config_and_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());

    let o = sva(&["run", "--config", &cfg, "--reps", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(
        sva(&["run", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        sva(&["run", "--scenario", "nope", "--reps", "1"])
            .status
            .code(),
        Some(2)
    );
    let empty = dir.path().join("empty.json");
    let base: serde_json::Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    fs::write(
        &empty,
        serde_json::json!({ "parameter": "n", "values": [], "base": base }).to_string(),
    )
    .unwrap();
    assert_eq!(
        sva(&["sweep", "--config", empty.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );

    let missing = dir.path().join("missing.json");
    assert_eq!(
        sva(&["run", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(3)
    );
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "x").unwrap();
    let under = blocker.join("out");
    assert_eq!(
        sva(&[
            "run",
            "--config",
            &cfg,
            "--reps",
            "1",
            "--out",
            under.to_str().unwrap()
        ])
        .status
        .code(),
        Some(3)
    );
}
