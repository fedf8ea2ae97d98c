use std::path::Path;
use std::process::{Command, Output};

use heavytail_cli::config::{self, ExperimentConfig, Overrides};
use heavytail_cli::run::ExperimentReport;
use serde_json::{json, Value};

fn heavytail(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heavytail")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn pareto(alpha: f64) -> Value {
    json!({"family": "pareto", "params": {"alpha": alpha}})
}

#[test]
fn simulate_twice_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"process": {"kind": "iid", "marginal": pareto(3.0), "m": 0}, "n": 10, "reps": 50});
    let path = write_config(dir.path(), "sim.json", &cfg);
    let mut outs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let o = heavytail(&["simulate", "--config", &path, "--seed", "1", "--out-dir", out_dir.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outs.push(std::fs::read(out_dir.join("simulate.csv")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    let text = String::from_utf8(outs[0].clone()).unwrap();
    assert!(text.starts_with("rep,t,x\n0,0,"));
    assert_eq!(text.lines().count(), 1 + 500);
}

#[test]
fn infeasible_grid_is_refused_with_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "seed": 7,
        "process": {"kind": "iid", "marginal": pareto(3.0)},
        "n": 100, "reps": 1000, "grid": [1e3, 1e4, 1e5]
    });
    let path = write_config(dir.path(), "ld.json", &cfg);
    let o = heavytail(&["estimate-ld", "--config", &path, "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err: Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(err["kind"], "infeasible");
    assert!(err["required_reps"].as_f64().unwrap() > 1e9);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("estimate-ld.report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "refused");
    assert!(!dir.path().join("estimate-ld.csv").exists());
}

#[test]
fn weibull_negative_control_fails_c2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "seed": 1,
        "checks": [{
            "condition": "c2",
            "model": {"family": "weibull_type", "params": {"alpha": 0.5}},
            "boundary": {"regime": "lognormal_ln"},
            "n_grid": {"lo": 10.0, "hi": 1000.0, "points": 10},
            "delta": 1.0
        }]
    });
    let path = write_config(dir.path(), "c.json", &cfg);
    let o = heavytail(&["check-conditions", "--config", &path, "--out-dir", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("check-conditions.json")).unwrap()).unwrap();
    assert_eq!(v[0]["report"]["verdict"], "FailTrend");
    assert_eq!(v[0]["report"]["condition_id"], "C2a");
    let csv = std::fs::read_to_string(dir.path().join("check-conditions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(csv.lines().nth(1).unwrap().ends_with(",FailTrend"));
}

#[test]
fn validation_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "workers": 0,
        "process": {"kind": "iid", "marginal": {"family": "pareto", "params": {"beta": 1.0}}},
        "n": 0, "reps": 0, "grid": [3.0, 2.0]
    });
    let path = write_config(dir.path(), "bad.json", &cfg);
    let o = heavytail(&["estimate-ld", "--config", &path]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for needle in ["seed is required", "workers", "unknown parameter 'beta'", "missing parameter 'alpha'", "n must", "reps must", "grid"] {
        assert!(err.contains(needle), "missing '{needle}' in:\n{err}");
    }
    assert!(err.contains("7 problems"), "{err}");
}

#[test]
fn subcommand_mismatch_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"subcommand": "bounds", "seed": 1});
    let path = write_config(dir.path(), "m.json", &cfg);
    let o = heavytail(&["covmax", "--config", &path]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_config_and_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "seed": 5, "workers": 2, "format": "csv", "out_dir": "/nonexistent/never",
        "model": {"family": "pareto", "params": {"alpha": 3.0}, "two_sided": true, "p_plus": 0.5},
        "n": 20, "c": 5.0, "p": 4, "xs": {"lo": 2.0, "hi": 20.0, "points": 12}, "reps": 20000
    });
    let path = write_config(dir.path(), "b.json", &cfg);
    let out = dir.path().join("out");
    let o = heavytail(&[
        "bounds", "--config", &path, "--seed", "9", "--workers", "1", "--format", "both", "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("bounds.report.json")).unwrap();
    let report: ExperimentReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report.config.seed, Some(9));
    assert_eq!(report.config.workers, 1);
    assert!(out.join("bounds.json").exists() && out.join("bounds.csv").exists());
    assert_eq!(report.results["dominated"], true);
    assert_eq!(report.provenance.len(), 1);
    assert!(report.version.starts_with('v'));

    // The echoed config re-parses to the same value.
    let echo = serde_json::to_value(&report.config).unwrap();
    let again = config::from_value(echo, "bounds", &Overrides::default()).unwrap();
    assert_eq!(again, report.config);
    let rerun_dir = dir.path().join("rerun");
    let mut c2: ExperimentConfig = again.clone();
    c2.out_dir = rerun_dir.clone();
    heavytail_cli::run(&c2).unwrap();
    assert_eq!(
        std::fs::read(out.join("bounds.csv")).unwrap(),
        std::fs::read(rerun_dir.join("bounds.csv")).unwrap()
    );
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "seed": 3,
        "process": {"kind": "min_construction", "weights": [1.0, 1.0], "noise": {"family": "logweibull", "params": {"alpha": 2.0}}},
        "n": 50, "reps": 30000, "grid": {"lo": 2.0, "hi": 6.0, "points": 8}
    });
    let path = write_config(dir.path(), "w.json", &cfg);
    let mut seen: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
    for w in ["1", "4", "16"] {
        let out = dir.path().join(w);
        let o = heavytail(&["estimate-ld", "--config", &path, "--workers", w, "--out-dir", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        seen.push((std::fs::read(out.join("estimate-ld.csv")).unwrap(), std::fs::read(out.join("estimate-ld.json")).unwrap()));
    }
    assert!(seen.windows(2).all(|p| p[0] == p[1]));
}

#[test]
fn covmax_and_linear_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cov = json!({
        "seed": 2,
        "process": {"kind": "iid", "marginal": pareto(4.5)},
        "p": 8, "n": 40, "reps": 30, "law": "frechet"
    });
    let path = write_config(dir.path(), "cov.json", &cov);
    let o = heavytail(&["covmax", "--config", &path, "--out-dir", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("covmax.csv")).unwrap();
    assert!(csv.starts_with("rep,diag_max_norm,offdiag_max_norm\n"));
    assert_eq!(csv.lines().count(), 31);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("covmax.json")).unwrap()).unwrap();
    assert_eq!(v["limit"]["alpha"], 2.25);
    assert!(v["ks_diag"].as_f64().unwrap() > 0.0);

    let lin = json!({
        "seed": 2,
        "noise": {"family": "logweibull", "params": {"alpha": 2.0}, "two_sided": true, "p_plus": 0.5},
        "coefficients": {"rule": "finite", "psi": [1.0, 0.5]},
        "analysis": {"mode": "windows", "variant": "pair_jump", "n_grid": [100.0, 1e4, 1e6]}
    });
    let path = write_config(dir.path(), "lin.json", &lin);
    let o = heavytail(&["linear-ld", "--config", &path, "--out-dir", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("linear-ld.json")).unwrap()).unwrap();
    // m0'/m0 = 1 < e at alpha = 2: nonempty
    assert_eq!(v["windows"][0]["nonempty"], true);
    assert_eq!(v["windows"][0]["K"], 1.0);
    assert_eq!(v["coef_stats"]["m0"], 1.5);
}

#[test]
fn budget_refusal_for_oversized_covmax() {
    let dir = tempfile::tempdir().unwrap();
    let cov = json!({
        "seed": 2,
        "process": {"kind": "iid", "marginal": {"family": "lognormal"}},
        "p": {"regime": "gumbel", "K": 1.0, "C": 0.25}, "n": 10000, "reps": 300, "law": "gumbel"
    });
    let path = write_config(dir.path(), "cov.json", &cov);
    let o = heavytail(&["covmax", "--config", &path, "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err: Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(err["kind"], "budget");
    assert!(err["estimated_work"].as_f64().unwrap() > err["work_limit"].as_f64().unwrap());
}
