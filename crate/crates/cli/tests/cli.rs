use std::path::Path;
use std::process::{Command, Output};

fn ping(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ping"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_soi(out: &Path) -> Vec<String> {
    [
        "--design", "soi", "--q", "1,3", "--sigma", "0.1", "--reps", "2", "--seed", "7", "--grid", "6",
        "--iters", "40", "--burnin", "40", "--out",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain(std::iter::once(out.display().to_string()))
    .collect()
}

fn run(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ping(&refs)
}

#[test]
fn deterministic_table_and_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out_a = run(&small_soi(a.path()));
    assert!(out_a.status.success(), "{}", String::from_utf8_lossy(&out_a.stderr));
    let out_b = run(&small_soi(b.path()));
    assert!(out_b.status.success());
    let table_a = std::fs::read_to_string(a.path().join("table.csv")).unwrap();
    let table_b = std::fs::read_to_string(b.path().join("table.csv")).unwrap();
    assert_eq!(table_a, table_b);
    assert!(table_a.starts_with("metric,GP,GP_se,PING-3,PING-3_se"));
    assert_eq!(String::from_utf8_lossy(&out_a.stdout), table_a);
    for f in ["meta.json", "replications.csv", "slices/GP_beta1.csv", "slices/PING-3_beta1.csv"] {
        assert!(a.path().join(f).exists(), "missing {f}");
    }
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["experiment"]["reps"], 2);
    assert_eq!(meta["chains"].as_array().unwrap().len(), 4);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"design": "soi", "q": [3], "sigma": 1.0, "reps": 5, "grid": 5, "iters": 20, "burnin": 20}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = ping(&["--config", cfg.to_str().unwrap(), "--reps", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["experiment"]["reps"], 1);
    assert_eq!(meta["experiment"]["design"]["noise_var"], 1.0);
    assert_eq!(meta["experiment"]["priors"], serde_json::json!([3]));
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"design": "soi", "repetitions": 3}"#).unwrap();
    let o = ping(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));

    std::fs::write(&cfg, "{not json").unwrap();
    assert_eq!(ping(&["--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(ping(&["--design", "cube"]).status.code(), Some(2));
    assert_eq!(ping(&["--design", "ios", "--reps", "0"]).status.code(), Some(2));
}

#[test]
fn chain_failure_exits_three_with_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"design": "ios", "q": [3], "grid": 5, "reps": 1, "iters": 5, "burnin": 5, "pcg_max_iter": 1}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = ping(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let stderr = String::from_utf8_lossy(&o.stderr);
    let line = stderr.lines().find(|l| l.starts_with("checkpoint: ")).expect("checkpoint path printed");
    let path = Path::new(line.trim_start_matches("checkpoint: "));
    assert!(path.exists());
    assert!(path.starts_with(&out));
}
