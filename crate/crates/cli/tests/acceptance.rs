//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test -p heavytail-cli --test acceptance -- 4 6`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use heavytail::dist::ModelSpec;
use heavytail::linproc::{lambda_window, WindowVariant};
use heavytail::procsim::ProcessSpec;
use heavytail_cli::config::{self, Overrides};
use serde_json::{json, Value};

const WORKERS: usize = 4;

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Check {
    Check { pass, detail }
}

/// Output files of one experiment run through the batch driver.
struct Run {
    payload: Value,
    csv: Vec<u8>,
}

fn run(sub: &str, cfg: Value, workers: usize, out: &Path) -> Result<Run, String> {
    let overrides = Overrides { workers: Some(workers), out_dir: Some(out.to_path_buf()), ..Default::default() };
    let cfg = config::from_value(cfg, sub, &overrides).map_err(|e| e.to_string())?;
    let outcome = heavytail_cli::run(&cfg).map_err(|e| e.to_string())?;
    if let Some(err) = outcome.report.error {
        return Err(serde_json::to_string(&err).unwrap());
    }
    let payload = std::fs::read_to_string(out.join(format!("{sub}.json"))).map_err(|e| e.to_string())?;
    let csv = std::fs::read(out.join(format!("{sub}.csv"))).map_err(|e| e.to_string())?;
    Ok(Run { payload: serde_json::from_str(&payload).unwrap(), csv })
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap_or(f64::NAN)).collect()
}

fn sym_pareto(alpha: f64) -> Value {
    json!({"family": "pareto", "params": {"alpha": alpha}, "two_sided": true, "p_plus": 0.5})
}

fn fmt(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn iid_ld_ratio() -> Check {
    let mut sups = Vec::new();
    let mut worst = Vec::new();
    for n in [100usize, 500] {
        let cfg = json!({
            "seed": 101,
            "process": {"kind": "iid", "marginal": sym_pareto(3.0)},
            "n": n,
            "estimator": "conditional",
            "grid": {"boundary": {"regime": "nagaev_rv", "alpha": 3.0, "sigma": 3f64.sqrt()}, "delta": 2.0},
            "reps": 1_000_000
        });
        let dir = tmp();
        let r = match run("estimate-ld", cfg, WORKERS, dir.path()) {
            Ok(r) => r,
            Err(e) => return check(false, format!("n={n}: {e}")),
        };
        let ratio = floats(&r.payload["curve"]["ratio"]);
        sups.push(r.payload["sup"]["sup"].as_f64().unwrap());
        worst.push(format!("n={n} ratios {}", fmt(&[ratio[0], ratio[ratio.len() / 2], ratio[ratio.len() - 1]])));
    }
    let pass = sups.iter().all(|&s| s <= 0.2) && sups[1] < sups[0];
    check(pass, format!("sup|ratio-1| = {} (limit 0.2, must decrease); {}", fmt(&sups), worst.join("; ")))
}

fn dependent_ld_ratio() -> Check {
    let n = 200usize;
    let process = json!({
        "kind": "min_construction",
        "weights": [1.0, 1.0],
        "noise": {"family": "logweibull", "params": {"alpha": 2.0}}
    });
    let model = serde_json::from_value::<ProcessSpec>(process.clone()).unwrap().build().unwrap();
    let marginal = model.marginal();
    let (lo, hi) = (marginal.isf(1e-3 / n as f64).unwrap(), marginal.isf(1e-5 / n as f64).unwrap());
    let cfg = json!({
        "seed": 202,
        "process": process,
        "n": n,
        "grid": {"lo": lo, "hi": hi, "points": 8},
        "reps": 10_000_000
    });
    let dir = tmp();
    let r = match run("estimate-ld", cfg, WORKERS, dir.path()) {
        Ok(r) => r,
        Err(e) => return check(false, e),
    };
    let c = &r.payload["curve"];
    let (ci_lo, ci_hi, ratio) = (floats(&c["ci_lo"]), floats(&c["ci_hi"]), floats(&c["ratio"]));
    let pass = ci_lo.iter().zip(&ci_hi).all(|(&l, &h)| l <= 1.3 && h >= 0.7);
    check(pass, format!("x in [{lo:.2}, {hi:.2}]; ratios {} (99% CIs must meet [0.7, 1.3])", fmt(&ratio)))
}

fn normal_regime() -> Check {
    let cfg = json!({
        "seed": 303,
        "process": {"kind": "iid", "marginal": sym_pareto(4.5)},
        "n": 2000,
        "regime": "normal",
        "grid": [1.0],
        "grid_units": "sigma_n",
        "reps": 1_000_000
    });
    let dir = tmp();
    match run("estimate-ld", cfg, WORKERS, dir.path()) {
        Ok(r) => {
            let c = &r.payload["curve"];
            let ratio = c["ratio"][0].as_f64().unwrap();
            check(
                (0.9..=1.1).contains(&ratio),
                format!(
                    "ratio to normal tail at x = sigma sqrt(n): {ratio:.4}, 99% CI [{:.4}, {:.4}] (band [0.9, 1.1])",
                    c["ci_lo"][0].as_f64().unwrap(),
                    c["ci_hi"][0].as_f64().unwrap()
                ),
            )
        }
        Err(e) => check(false, e),
    }
}

fn negative_controls() -> Check {
    let comonotone = json!({"kind": "comonotone", "marginal": sym_pareto(3.0), "m": 2});
    let cfg = json!({
        "seed": 404,
        "checks": [
            {
                "condition": "c2",
                "model": {"family": "weibull_type", "params": {"alpha": 0.5}},
                "boundary": {"regime": "lognormal_ln"},
                "n_grid": {"lo": 10.0, "hi": 1000.0, "points": 10},
                "delta": 1.0
            },
            {"condition": "c3", "process": comonotone, "eps": 1.0, "x_grid": {"lo": 2.5, "hi": 8.0, "points": 8}, "reps": 200000},
            {"condition": "rv3", "process": comonotone, "x_grid": {"lo": 2.0, "hi": 12.0, "points": 8}, "reps": 200000}
        ]
    });
    let dir = tmp();
    match run("check-conditions", cfg, WORKERS, dir.path()) {
        Ok(r) => {
            let verdicts: Vec<String> = r.payload.as_array().unwrap().iter().map(|c| {
                format!("{}={}", c["report"]["condition_id"].as_str().unwrap(), c["report"]["verdict"].as_str().unwrap())
            }).collect();
            let pass = verdicts.iter().all(|v| v.ends_with("=FailTrend"));
            check(pass, format!("weibull C2, comonotone C3 and RV3: {}", verdicts.join(", ")))
        }
        Err(e) => check(false, e),
    }
}

fn linear_tail_ratio() -> Check {
    // Target c_+ F̄_|Z|(x) = 1e-4 with c_+ = 1/2 for psi = (1, 0.5) and symmetric noise.
    let noise = json!({"family": "lognormal", "params": {"mu": 0.0, "sigma": 1.0}, "two_sided": true, "p_plus": 0.5});
    let abs_noise = serde_json::from_value::<ModelSpec>(json!({"family": "lognormal"})).unwrap().build().unwrap();
    let x = abs_noise.isf(2e-4).unwrap();
    let cfg = json!({
        "seed": 505,
        "noise": noise,
        "coefficients": {"rule": "finite", "psi": [1.0, 0.5]},
        "analysis": {"mode": "tail_ratio", "xs": [x], "reps": 10_000_000}
    });
    let dir = tmp();
    match run("linear-ld", cfg, WORKERS, dir.path()) {
        Ok(r) => {
            let c = &r.payload["curve"];
            let ratio = c["ratio"][0].as_f64().unwrap();
            check(
                (ratio - 1.0).abs() <= 0.25,
                format!(
                    "x = {x:.2}: MC/limit = {ratio:.4}, 99% CI [{:.4}, {:.4}] (within 25%)",
                    c["ci_lo"][0].as_f64().unwrap(),
                    c["ci_hi"][0].as_f64().unwrap()
                ),
            )
        }
        Err(e) => check(false, e),
    }
}

fn window_table() -> Check {
    let e = std::f64::consts::E;
    let mut cases = Vec::new();
    for alpha in [1.05, 1.5, 1.9, 1.999, 2.0, 2.001, 2.5, 3.0, 5.0] {
        cases.push((WindowVariant::SingleJump, alpha, 1.0, 1.0, alpha < 2.0));
        for ratio in [1.0, 1.5, 2.0, 2.7, e, 2.72, 3.0, 10.0] {
            let want = alpha < 2.0 || (alpha == 2.0 && ratio < e);
            cases.push((WindowVariant::PairJump, alpha, 1.0, ratio, want));
        }
    }
    let mut wrong = Vec::new();
    for &(variant, alpha, m0, ratio, want) in &cases {
        for n in [1e2, 1e4, 1e8] {
            match lambda_window(variant, alpha, n, 0.1, Some(m0), Some(m0 * ratio), 1.0) {
                Ok(w) if w.nonempty == want => {}
                Ok(w) => wrong.push(format!("{variant:?} alpha={alpha} ratio={ratio:.4} n={n}: nonempty={}", w.nonempty)),
                Err(err) => wrong.push(format!("{variant:?} alpha={alpha} ratio={ratio:.4}: {err}")),
            }
        }
    }
    check(wrong.is_empty(), format!("{} windows checked, {} mismatches {}", cases.len() * 3, wrong.len(), wrong.join("; ")))
}

fn covmax_frechet() -> Check {
    let cfg = json!({
        "seed": 707,
        "process": {"kind": "iid", "marginal": {"family": "pareto", "params": {"alpha": 4.5}}},
        "p": 200, "n": 2000, "reps": 500, "law": "frechet", "offdiag_level": 0.5
    });
    let dir = tmp();
    match run("covmax", cfg, WORKERS, dir.path()) {
        Ok(r) => {
            let ks = r.payload["ks_diag"].as_f64().unwrap();
            let frac = r.payload["offdiag_exceed_fraction"].as_f64().unwrap();
            check(
                ks <= 0.12 && frac <= 0.05,
                format!("KS to Frechet(2.25) = {ks:.4} (limit 0.12); off-diagonal fraction above 0.5 = {frac:.4} (limit 0.05)"),
            )
        }
        Err(e) => check(false, e),
    }
}

fn covmax_gumbel() -> Check {
    let mut ks = Vec::new();
    for n in [10_000usize, 100_000] {
        let cfg = json!({
            "seed": 808,
            "process": {"kind": "iid", "marginal": {"family": "lognormal"}, "m": 0},
            "p": {"regime": "gumbel", "K": 1.0, "C": 0.25},
            "n": n, "reps": 300, "law": "gumbel"
        });
        let dir = tmp();
        match run("covmax", cfg, WORKERS, dir.path()) {
            Ok(r) => ks.push(r.payload["ks_diag"].as_f64().unwrap()),
            Err(e) => return check(false, format!("n={n}: {e}")),
        }
    }
    check(ks[0] <= 0.15 && ks[1] < ks[0], format!("KS to Gumbel at n = 1e4, 1e5: {} (limit 0.15, must decrease)", fmt(&ks)))
}

fn bounds_dominate() -> Check {
    let cfg = json!({
        "seed": 909,
        "model": sym_pareto(3.0),
        "n": 20, "c": 5.0, "p": 4,
        "xs": {"lo": 2.0, "hi": 20.0, "points": 12},
        "reps": 1_000_000
    });
    let dir = tmp();
    match run("bounds", cfg, WORKERS, dir.path()) {
        Ok(r) => {
            let rep = &r.payload["report"];
            let points = rep["xs"].as_array().unwrap().len();
            let dominated = r.payload["dominated"].as_bool().unwrap();
            check(
                dominated && points == 12,
                format!("{points} grid points, both bounds above empirical - 3 SE: {dominated}"),
            )
        }
        Err(e) => check(false, e),
    }
}

/// Small instance of every subcommand.
fn experiments() -> Vec<(&'static str, Value)> {
    let logweibull = json!({"family": "logweibull", "params": {"alpha": 2.0}});
    vec![
        ("simulate", json!({"seed": 10, "process": {"kind": "stoch_vol", "atoms": [[0.5, 0.5], [2.0, 0.5]], "window": 2, "noise": sym_pareto(3.0)}, "n": 30, "reps": 40})),
        ("check-conditions", json!({"seed": 11, "checks": [
            {"condition": "c3", "process": {"kind": "min_construction", "weights": [1.0, 1.0], "noise": logweibull}, "g": {"g": "linear", "slope": 0.5}, "eps": 1.0, "x_grid": {"lo": 2.0, "hi": 5.0, "points": 5}, "reps": 20000},
            {"condition": "iid_ld", "model": sym_pareto(3.0), "n": 50, "boundary": {"regime": "nagaev_rv", "alpha": 3.0}, "delta": 2.0, "reps": 20000}
        ]})),
        ("estimate-ld", json!({"seed": 12, "process": {"kind": "gaussian_transform", "theta": [0.5], "alpha": 0.5}, "n": 40, "grid": {"lo": 2.0, "hi": 5.0, "points": 4}, "reps": 20000})),
        ("estimate-ld", json!({"seed": 13, "process": {"kind": "iid", "marginal": sym_pareto(2.5)}, "n": 40, "estimator": "conditional", "grid": [30.0, 60.0, 120.0], "reps": 20000})),
        ("linear-ld", json!({"seed": 14, "noise": sym_pareto(3.0), "coefficients": {"rule": "geometric", "ratio": 0.5}, "analysis": {"mode": "tail_ratio", "xs": [5.0, 10.0, 20.0], "reps": 20000}})),
        ("covmax", json!({"seed": 15, "process": {"kind": "iid", "marginal": {"family": "pareto", "params": {"alpha": 4.5}}}, "p": 12, "n": 50, "reps": 20, "law": "frechet"})),
        ("bounds", json!({"seed": 16, "model": sym_pareto(3.0), "n": 10, "c": 4.0, "p": 4, "xs": [2.0, 4.0, 8.0], "reps": 20000})),
    ]
}

fn reproducible() -> Check {
    let mut bad = Vec::new();
    let exps = experiments();
    for (sub, cfg) in &exps {
        let mut seen: Vec<(Vec<u8>, String)> = Vec::new();
        for (attempt, w) in [1usize, 1, 4, 16].into_iter().enumerate() {
            let dir = tmp();
            match run(sub, cfg.clone(), w, dir.path()) {
                Ok(r) => seen.push((r.csv, serde_json::to_string(&r.payload).unwrap())),
                Err(e) => {
                    bad.push(format!("{sub} run {attempt}: {e}"));
                    break;
                }
            }
        }
        if !seen.windows(2).all(|p| p[0] == p[1]) {
            bad.push(format!("{sub}: outputs differ"));
        }
    }
    check(bad.is_empty(), format!("{} experiments x (2 runs at 1 worker, 4, 16 workers): {}", exps.len(), if bad.is_empty() { "identical".into() } else { bad.join("; ") }))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("iid LD ratio, symmetric Pareto(3)", iid_ld_ratio),
        ("dependent LD ratio, min construction", dependent_ld_ratio),
        ("normal regime, symmetric Pareto(4.5)", normal_regime),
        ("negative controls", negative_controls),
        ("linear process marginal tail", linear_tail_ratio),
        ("window emptiness table", window_table),
        ("covariance maxima, Frechet case", covmax_frechet),
        ("covariance maxima, Gumbel case", covmax_gumbel),
        ("Prokhorov and Fuk-Nagaev bounds", bounds_dominate),
        ("reproducibility across runs and workers", reproducible),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let c = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| check(false, "panicked".into()));
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {id:>2} ({name}, {:.1}s): {}", start.elapsed().as_secs_f64(), c.detail);
        if !c.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: {} criteria failed: {failed:?}", failed.len());
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
