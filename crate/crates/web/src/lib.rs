//! WebAssembly bindings for the browser demo.
//!
//! Each export takes plain numbers or a JSON model record and returns a JSON
//! string; the same functions are callable natively for testing.

use heavytail::dist::ModelSpec;
use heavytail::exec::Executor;
use heavytail::ldmc::{self, ThresholdGrid};
use heavytail::linproc::{lambda_window, WindowVariant};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn model(spec: &str) -> Result<heavytail::dist::TailModel, String> {
    let spec: ModelSpec = serde_json::from_str(spec).map_err(|e| format!("model: {e}"))?;
    let problems = spec.problems();
    if !problems.is_empty() {
        return Err(problems.join("; "));
    }
    spec.build().map_err(|e| e.to_string())
}

/// Tail `F̄(x)`, `n F̄(x)` and hazard on a geometric grid.
pub fn tail_curve_json(spec: &str, lo: f64, hi: f64, points: usize, n: f64) -> Result<Value, String> {
    let m = model(spec)?;
    let xs = ldmc::geometric(lo, hi, points).map_err(|e| e.to_string())?;
    let tail: Vec<f64> = xs.iter().map(|&x| m.tail(x)).collect();
    Ok(json!({
        "class": m.class_tag(),
        "xs": xs,
        "n_tail": tail.iter().map(|t| n * t).collect::<Vec<_>>(),
        "tail": tail,
        "hazard": xs.iter().map(|&x| m.hazard(x)).collect::<Vec<_>>(),
    }))
}

/// Conditional Monte Carlo estimate of `P(S_n > x) / (n F̄(x))` for iid summands.
pub fn ld_ratio_json(spec: &str, n: usize, lo: f64, hi: f64, points: usize, reps: u32, seed: u32) -> Result<Value, String> {
    let m = model(spec)?;
    let xs = ldmc::geometric(lo, hi, points).map_err(|e| e.to_string())?;
    let grid = ThresholdGrid::new(xs, None, n, 1.0).map_err(|e| e.to_string())?;
    let curve = ldmc::estimate_reduced_iid(&m, n, &grid, reps as u64, seed as u64, &Executor::sequential())
        .map_err(|e| e.to_string())?;
    let sup = ldmc::uniform_sup_report(&curve);
    Ok(json!({ "curve": curve, "sup": sup }))
}

/// Window endpoints for both variants over a geometric n-grid.
pub fn window_table_json(alpha: f64, m0: f64, m0_prime: f64, n_lo: f64, n_hi: f64, points: usize) -> Result<Value, String> {
    let ns = ldmc::geometric(n_lo, n_hi, points).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for variant in [WindowVariant::SingleJump, WindowVariant::PairJump] {
        for &n in &ns {
            let w = lambda_window(variant, alpha, n, 0.1, Some(m0), Some(m0_prime), 1.0).map_err(|e| e.to_string())?;
            rows.push(w);
        }
    }
    Ok(json!(rows))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn tail_curve(spec: &str, lo: f64, hi: f64, points: usize, n: f64) -> Result<String, JsError> {
    to_js(tail_curve_json(spec, lo, hi, points, n))
}

#[wasm_bindgen]
pub fn ld_ratio(spec: &str, n: usize, lo: f64, hi: f64, points: usize, reps: u32, seed: u32) -> Result<String, JsError> {
    to_js(ld_ratio_json(spec, n, lo, hi, points, reps, seed))
}

#[wasm_bindgen]
pub fn window_table(alpha: f64, m0: f64, m0_prime: f64, n_lo: f64, n_hi: f64, points: usize) -> Result<String, JsError> {
    to_js(window_table_json(alpha, m0, m0_prime, n_lo, n_hi, points))
}

#[cfg(test)]
mod tests {
    use super::*;

    const PARETO: &str = r#"{"family": "pareto", "params": {"alpha": 2.0}}"#;

    #[test]
    fn tail_curve_matches_closed_form() {
        let v = tail_curve_json(PARETO, 1.0, 100.0, 3, 10.0).unwrap();
        let tail: Vec<f64> = serde_json::from_value(v["tail"].clone()).unwrap();
        assert!((tail[1] - 0.01).abs() < 1e-14);
        assert!((v["n_tail"][2].as_f64().unwrap() - 10.0 * 1e-4).abs() < 1e-15);
    }

    #[test]
    fn ld_ratio_is_near_one_deep_in_the_tail() {
        let v = ld_ratio_json(PARETO, 10, 200.0, 2000.0, 3, 20_000, 1).unwrap();
        let ratio: Vec<f64> = serde_json::from_value(v["curve"]["ratio"].clone()).unwrap();
        assert!(ratio.iter().all(|r| (r - 1.0).abs() < 0.2), "{ratio:?}");
    }

    #[test]
    fn window_table_rows_and_errors() {
        let v = window_table_json(2.0, 1.0, 2.0, 100.0, 1e6, 4).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 8);
        assert_eq!(v[0]["nonempty"], false);
        assert_eq!(v[4]["nonempty"], true);
        assert!(window_table_json(0.5, 1.0, 2.0, 100.0, 1e6, 4).is_err());
        assert!(tail_curve_json(r#"{"family": "pareto"}"#, 1.0, 2.0, 2, 1.0).unwrap_err().contains("alpha"));
    }
}
