use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use weighted_fpp::dmetric::DBall;
use weighted_fpp::engine::{load_snapshot_csv, read_snapshot_binary, RunConfig, StopRule};
use weighted_fpp::experiments::{ExperimentKind, ExperimentSpec};
use weighted_fpp::weights::{AlphaWeightFunction, NormSpec};

fn wfpp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wfpp"))
        .args(args)
        .env_remove("WFPP_OUTPUT_DIR")
        .output()
        .expect("spawn wfpp")
}

fn stderr_category(out: &Output) -> String {
    let v: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    v["error"]["category"].as_str().unwrap().to_string()
}

fn write_json(path: &Path, v: &impl serde::Serialize) {
    std::fs::write(path, serde_json::to_string(v).unwrap()).unwrap();
}

fn small_run() -> RunConfig {
    let weight = AlphaWeightFunction::constant(0.5, 1.0, 2).unwrap();
    let mut cfg = RunConfig::new(weight, 3, StopRule::EdgeCount { n: 2000 });
    cfg.snapshot_schedule = vec![weighted_fpp::engine::Checkpoint::Step { n: 500 }];
    cfg
}

#[test]
fn usage_errors_exit_2() {
    let out = wfpp(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_category(&out), "usage");
    assert_eq!(wfpp(&["simulate"]).status.code(), Some(2));
    assert_eq!(wfpp(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_config_exits_3() {
    let out = wfpp(&["simulate", "--config", "/definitely/missing.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_category(&out), "config.not_found");
}

#[test]
fn unknown_key_and_bad_json_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let mut v = serde_json::to_value(small_run()).unwrap();
    v["colour"] = Value::from("red");
    write_json(&cfg, &v);
    let out = wfpp(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_category(&out), "config.unknown_key");
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    std::fs::write(&cfg, "{ not json").unwrap();
    let out = wfpp(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_category(&out), "config.parse");
}

#[test]
fn runtime_errors_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = wfpp(&[
        "dball", "--alpha", "0.5", "--dim", "5", "--radius", "1", "--output-dir", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr_category(&out).starts_with("runtime."));
}

#[test]
fn simulate_outputs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    write_json(&cfg, &small_run());
    let out_dir = dir.path().join("out");
    let out = wfpp(&[
        "simulate", "--config", cfg.to_str().unwrap(), "--binary", "--set", "stop_rule.n=1500",
        "--output-dir", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (dim, edges) = load_snapshot_csv(&out_dir.join("edges.csv")).unwrap();
    assert_eq!(dim, 2);
    assert_eq!(edges.len(), 1500);
    let mut bin = std::fs::File::open(out_dir.join("edges.bin")).unwrap();
    let (bdim, bedges) = read_snapshot_binary(&mut bin).unwrap();
    assert_eq!((bdim, &bedges), (dim, &edges));
    let (_, snap) = load_snapshot_csv(&out_dir.join("snapshot_000.csv")).unwrap();
    assert_eq!(&snap[..], &edges[..500]);
    let summary: Value = serde_json::from_slice(&std::fs::read(out_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(summary["edge_count"], 1500);
    assert_eq!(summary["seed"], 3);
    assert!(std::fs::read(out_dir.join("cluster.ppm")).unwrap().starts_with(b"P6\n"));
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    write_json(&cfg, &small_run());
    let run = |seed: &str, sub: &str| {
        let d = dir.path().join(sub);
        let out = wfpp(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", seed, "--output-dir", d.to_str().unwrap()]);
        assert!(out.status.success());
        std::fs::read(d.join("edges.csv")).unwrap()
    };
    assert_eq!(run("11", "a"), run("11", "b"));
    assert_ne!(run("11", "a"), run("12", "c"));
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_wfpp"))
        .args(["lambda", "--alpha", "1", "--resolution", "128"])
        .env("WFPP_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&std::fs::read(dir.path().join("lambda.json")).unwrap()).unwrap();
    let lambda = v["estimate"]["value"].as_f64().unwrap();
    assert!((lambda - std::f64::consts::PI).abs() < 1e-3, "{lambda}");
}

#[test]
fn dball_radii_match_the_ray_formula() {
    // alpha = 1/2, f0 = 1: D(0, x) = 2 sqrt|x|, so D = 1 at |x| = 1/4.
    let dir = tempfile::tempdir().unwrap();
    let out = wfpp(&[
        "dball", "--alpha", "0.5", "--profile", "const:1", "--mu", "euclidean", "--radius", "1", "--directions", "64",
        "--output-dir", dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (dirs, radii) = DBall::load_csv(&dir.path().join("dball.csv")).unwrap();
    assert_eq!(dirs.len(), 64);
    for r in radii {
        assert!((r - 0.25).abs() <= 0.02 * 0.25, "{r}");
    }
}

#[test]
fn urn_subcommand_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let weight = AlphaWeightFunction::norm_power(NormSpec::Euclidean, 1.0, 1).unwrap();
    let mut spec = ExperimentSpec::new(ExperimentKind::UrnD1, RunConfig::new(weight, 5, StopRule::EdgeCount { n: 1 }), 200);
    spec.steps = 6;
    let cfg = dir.path().join("urn.json");
    write_json(&cfg, &spec);
    let out_dir = dir.path().join("out");
    let out = wfpp(&["urn", "--config", cfg.to_str().unwrap(), "--output-dir", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&std::fs::read(out_dir.join("urn.json")).unwrap()).unwrap();
    assert_eq!(v["steps"], 6);
    assert!(out_dir.join("urn.csv").exists());

    // A spec of the wrong kind is a config error.
    let out = wfpp(&["chi", "--config", cfg.to_str().unwrap(), "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}
