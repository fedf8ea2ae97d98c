//! Dispatch of a validated config to the library and serialization of results.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use heavytail::conditions::{self, boundary_catalogue, ConditionReport, LagCurve};
use heavytail::covmax::{self, LimitLaw, MaxLaw};
use heavytail::exec::{domain, Executor};
use heavytail::ldmc::{self, Estimator, FukNagaevConstants, RatioCurve, ThresholdGrid};
use heavytail::linproc::{self, LambdaWindow};
use heavytail::procsim::{make_linear, ProcessKind, Scratch};
use heavytail::stats::Moments;
use heavytail::{dist::ClassTag, Error};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::*;
use crate::output::{num, opt_num, write_atomic, Csv};

/// `v<package version>`, with `-<git describe>` appended when the build
/// environment provides `HEAVYTAIL_GIT_DESCRIBE`.
pub fn version() -> String {
    match option_env!("HEAVYTAIL_GIT_DESCRIBE") {
        Some(d) if !d.is_empty() => format!("v{}-{d}", env!("CARGO_PKG_VERSION")),
        _ => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}

/// Most path values a `simulate` run will write.
pub const SIMULATE_MAX_VALUES: f64 = 5e7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Refused,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub result: String,
    pub estimator: String,
    pub reps: Option<u64>,
    pub ci_method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub context: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub required_reps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimated_work: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub work_limit: Option<f64>,
}

impl ErrorInfo {
    fn new(context: &str, e: &Error) -> Self {
        let mut info = ErrorInfo {
            kind: String::new(),
            context: context.into(),
            message: e.to_string(),
            required_reps: None,
            estimated_work: None,
            work_limit: None,
        };
        info.kind = match e {
            Error::ParameterDomain(_) => "parameter_domain",
            Error::Class(_) => "class",
            Error::Numeric(_) => "numeric",
            Error::Infeasible { required_reps, .. } => {
                info.required_reps = Some(*required_reps);
                "infeasible"
            }
            Error::Budget { estimated, limit, .. } => {
                info.estimated_work = Some(*estimated);
                info.work_limit = Some(*limit);
                "budget"
            }
            Error::Unsupported(_) => "unsupported",
            Error::DegenerateDependence(_) => "degenerate_dependence",
        }
        .into();
        info
    }
}

/// Exit status for a library error: 2 invalid input, 3 refusal, 4 numeric failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible { .. } | Error::Budget { .. } => 3,
        Error::Numeric(_) => 4,
        _ => 2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub status: Status,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    pub provenance: Vec<Provenance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
    pub results: Value,
}

#[derive(Debug)]
pub struct Outcome {
    pub report: ExperimentReport,
    pub report_path: PathBuf,
    pub exit_code: i32,
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Io(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Io(m) => write!(f, "output error: {m}"),
        }
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Io(_) => 1,
        }
    }
}

/// Results of one experiment before they are written.
pub struct Artifacts {
    pub csv: Option<String>,
    pub payload: Value,
    pub provenance: Vec<Provenance>,
}

/// A library error tagged with the part of the config it came from.
type Failure = (String, Error);

fn at<T>(context: &str, r: heavytail::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| (context.to_string(), e))
}

fn grid_values(context: &str, g: &Grid) -> Result<Vec<f64>, Failure> {
    g.values().map_err(|m| (context.to_string(), Error::ParameterDomain(m)))
}

/// Validates, runs and writes outputs. Library errors are written as a
/// refusal report and reflected in `exit_code`; invalid configs are not run.
pub fn run(config: &ExperimentConfig) -> Result<Outcome, RunError> {
    config.validate().map_err(RunError::Config)?;
    let exec = Executor::new(config.workers).map_err(|e| RunError::Config(ConfigError::Invalid(vec![e.to_string()])))?;
    let seed = config.seed.expect("validated");
    let start = Instant::now();
    let result = compute(&config.experiment, seed, &exec);
    let wall_time_s = start.elapsed().as_secs_f64();

    let name = config.experiment.name();
    let dir = &config.out_dir;
    let mut outputs = Vec::new();
    let io = |e: std::io::Error| RunError::Io(e.to_string());
    let (status, error, results, provenance, code) = match result {
        Ok(art) => {
            if config.format.csv() {
                if let Some(csv) = &art.csv {
                    let path = dir.join(format!("{name}.csv"));
                    write_atomic(&path, csv.as_bytes()).map_err(io)?;
                    outputs.push(path.to_string_lossy().into_owned());
                }
            }
            if config.format.json() {
                let path = dir.join(format!("{name}.json"));
                let text = serde_json::to_string_pretty(&art.payload).expect("payload serializes") + "\n";
                write_atomic(&path, text.as_bytes()).map_err(io)?;
                outputs.push(path.to_string_lossy().into_owned());
            }
            (Status::Ok, None, art.payload, art.provenance, 0)
        }
        Err((context, e)) => {
            let code = exit_code(&e);
            let status = if code == 3 { Status::Refused } else { Status::Failed };
            let info = ErrorInfo::new(&format!("{name}: {context}"), &e);
            (status, Some(info), Value::Null, Vec::new(), code)
        }
    };
    let report = ExperimentReport {
        tool: "heavytail".into(),
        version: version(),
        config: config.clone(),
        status,
        wall_time_s,
        outputs,
        provenance,
        error,
        results,
    };
    let report_path = dir.join(format!("{name}.report.json"));
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_atomic(&report_path, text.as_bytes()).map_err(io)?;
    Ok(Outcome { report, report_path, exit_code: code })
}

/// Runs the experiment without touching the file system.
pub fn compute(experiment: &Experiment, seed: u64, exec: &Executor) -> Result<Artifacts, Failure> {
    match experiment {
        Experiment::Simulate(c) => simulate(c, seed, exec),
        Experiment::CheckConditions(c) => check_conditions(c, seed, exec),
        Experiment::EstimateLd(c) => estimate_ld(c, seed, exec),
        Experiment::LinearLd(c) => linear_ld(c, seed, exec),
        Experiment::Covmax(c) => covmax_run(c, seed, exec),
        Experiment::Bounds(c) => bounds(c, seed, exec),
    }
}

fn simulate(c: &SimulateConfig, seed: u64, exec: &Executor) -> Result<Artifacts, Failure> {
    let process = at("process", c.process.build())?;
    let values = c.n as f64 * c.reps as f64;
    if values > SIMULATE_MAX_VALUES {
        return Err((
            "n * reps".into(),
            Error::Budget { message: "path dump too large".into(), estimated: values, limit: SIMULATE_MAX_VALUES },
        ));
    }
    let n = c.n;
    let parts = exec.run_batches(seed, domain("simulate"), c.reps, |rng, first, len| {
        let mut text = String::new();
        let mut path = vec![0.0; n];
        let mut scratch = Scratch::default();
        let mut moments = Moments::default();
        let mut max = f64::NEG_INFINITY;
        for r in 0..len {
            process.fill_path(rng, &mut path, &mut scratch);
            for (t, &x) in path.iter().enumerate() {
                writeln!(text, "{},{},{}", first + r, t, x).unwrap();
                moments.push(x);
                max = max.max(x);
            }
        }
        (text, moments, max)
    });
    let mut csv = String::from("rep,t,x\n");
    let mut moments = Moments::default();
    let mut max = f64::NEG_INFINITY;
    for (text, m, mx) in &parts {
        csv.push_str(text);
        moments = moments.merge(m);
        max = max.max(*mx);
    }
    let payload = json!({
        "process": process.kind(),
        "m": process.m(),
        "n": n,
        "reps": c.reps,
        "marginal_mean": process.mean(),
        "marginal_variance": process.marginal().variance(),
        "sample_mean": moments.mean,
        "sample_variance": moments.variance(),
        "sample_max": max,
    });
    Ok(Artifacts {
        csv: Some(csv),
        payload,
        provenance: vec![Provenance {
            result: "paths".into(),
            estimator: "exact stationary sampler".into(),
            reps: Some(c.reps),
            ci_method: "none".into(),
        }],
    })
}

fn run_check(ch: &Check, ctx: &str, seed: u64, exec: &Executor) -> Result<(ConditionReport, Option<Vec<LagCurve>>), Failure> {
    let report = match ch {
        Check::C1 { model, g, x_grid, c } => {
            let m = at(ctx, model.build())?;
            at(ctx, conditions::check_c1(&g.build(&m), &m, &grid_values(ctx, x_grid)?, *c))?
        }
        Check::C2 { model, g, boundary, n_grid, delta, sup_grid } => {
            let m = at(ctx, model.build())?;
            let b = at(ctx, boundary_catalogue(boundary.clone()))?;
            at(ctx, conditions::check_c2_ratio(&g.build(&m), &m, &b, &grid_values(ctx, n_grid)?, *delta, *sup_grid))?
        }
        Check::Lemma21 { model, g, boundary, n_grid, eps, sup_grid } => {
            let m = at(ctx, model.build())?;
            let b = at(ctx, boundary_catalogue(boundary.clone()))?;
            at(ctx, conditions::lemma21_check(&m, &g.build(&m), &b, &grid_values(ctx, n_grid)?, *eps, *sup_grid))?
        }
        Check::IidLd { model, n, boundary, delta, reps } => {
            let m = at(ctx, model.build())?;
            let b = at(ctx, boundary_catalogue(boundary.clone()))?;
            at(ctx, conditions::check_iid_ld(&m, *n, &b, *delta, *reps, seed, exec))?
        }
        Check::C3 { process, g, eps, x_grid, reps } => {
            let p = at(ctx, process.build())?;
            let g = g.build(p.marginal());
            let (r, curves) = at(ctx, conditions::estimate_c3(&p, &g, *eps, &grid_values(ctx, x_grid)?, *reps, seed, exec))?;
            return Ok((r, Some(curves)));
        }
        Check::Rv3 { process, x_grid, reps } => {
            let p = at(ctx, process.build())?;
            let (r, curves) = at(ctx, conditions::tail_dependence_lag(&p, &grid_values(ctx, x_grid)?, *reps, seed, exec))?;
            return Ok((r, Some(curves)));
        }
        Check::SingleJump(w) | Check::PairJump(w) => {
            let noise = at(ctx, w.noise.build())?;
            let stats = at(ctx, linproc::coef_stats(&w.coefficients, w.truncation_tol, None))?;
            let (g, _) = at(ctx, linproc::window_g(&noise, w.eps, w.calibration_x))?;
            let ns = grid_values(ctx, &w.n_grid)?;
            let r = if matches!(ch, Check::SingleJump(_)) {
                linproc::check_single_jump_ratio(&noise, &g, &stats, &ns, w.window)
            } else {
                linproc::check_pair_ratio(&noise, &g, &stats, &ns, w.window)
            };
            at(ctx, r)?
        }
    };
    Ok((report, None))
}

fn check_conditions(c: &CheckConfig, seed: u64, exec: &Executor) -> Result<Artifacts, Failure> {
    let mut csv = Csv::new(&["check", "condition_id", "grid_kind", "grid", "statistic", "ci_lo", "ci_hi", "verdict"]);
    let mut items = Vec::new();
    let mut provenance = Vec::new();
    for (i, ch) in c.checks.iter().enumerate() {
        let ctx = format!("checks[{i}]");
        let (report, curves) = run_check(ch, &ctx, seed, exec)?;
        let id = serde_json::to_value(report.condition_id).unwrap();
        let id = id.as_str().unwrap_or_default().to_string();
        let verdict = serde_json::to_value(report.verdict).unwrap();
        let verdict = verdict.as_str().unwrap_or_default().to_string();
        for k in 0..report.grid.len() {
            csv.row(&[
                i.to_string(),
                id.clone(),
                report.grid_kind.clone(),
                num(report.grid[k]),
                num(report.statistic[k]),
                num(report.ci_lo[k]),
                num(report.ci_hi[k]),
                verdict.clone(),
            ]);
        }
        let mc = report.seed.is_some();
        provenance.push(Provenance {
            result: ctx,
            estimator: if mc { "monte carlo".into() } else { "analytic".into() },
            reps: match ch {
                Check::IidLd { reps, .. } | Check::C3 { reps, .. } | Check::Rv3 { reps, .. } => Some(*reps),
                _ => None,
            },
            ci_method: match ch {
                Check::IidLd { .. } => "normal-99 on conditional replicates".into(),
                Check::C3 { .. } | Check::Rv3 { .. } => "wilson-99".into(),
                _ => "exact evaluation".into(),
            },
        });
        let mut item = json!({ "report": report });
        if let Some(curves) = curves {
            item["lag_curves"] = serde_json::to_value(curves).unwrap();
        }
        items.push(item);
    }
    Ok(Artifacts { csv: Some(csv.finish()), payload: Value::Array(items), provenance })
}

fn estimate_ld(c: &EstimateLdConfig, seed: u64, exec: &Executor) -> Result<Artifacts, Failure> {
    let process = at("process", c.process.build())?;
    let mut sigma_n = None;
    let grid = match &c.grid {
        ThresholdSpec::Grid(g) => {
            let mut xs = grid_values("grid", g)?;
            if c.grid_units == GridUnits::SigmaN {
                let s = at("grid_units", process.sum_variance(c.n, seed, exec))?.sqrt();
                xs.iter_mut().for_each(|x| *x *= s);
                sigma_n = Some(s);
            }
            at("grid", ThresholdGrid::new(xs, None, c.n, 1.0))?
        }
        ThresholdSpec::Boundary { boundary, delta, span, points } => {
            let b = at("grid.boundary", boundary_catalogue(boundary.clone()))?;
            match span {
                Some(f) => at("grid", ThresholdGrid::span(&b, c.n, *delta, *f, *points))?,
                None => at("grid", ThresholdGrid::default_for(process.marginal(), &b, c.n, *delta, c.reps))?,
            }
        }
    };
    let curve = match (c.regime, c.estimator) {
        (Regime::Normal, _) => {
            let (curve, s) = at("regime", ldmc::normal_regime_ratio(&process, c.n, &grid.xs, c.reps, seed, exec))?;
            sigma_n = Some(s);
            curve
        }
        (Regime::BigJump, Estimator::Naive) => {
            at("estimator", ldmc::estimate_naive(&process, c.n, &grid, c.reps, seed, exec))?
        }
        (Regime::BigJump, Estimator::Conditional) => {
            if process.kind() != ProcessKind::Iid {
                return Err((
                    "estimator".into(),
                    Error::Unsupported("the conditional estimator needs an iid process".into()),
                ));
            }
            at("estimator", ldmc::estimate_reduced_iid(process.marginal(), c.n, &grid, c.reps, seed, exec))?
        }
    };
    Ok(curve_artifacts(curve, json!({ "t_n": finite_or_null(grid.t_n), "sigma_n": sigma_n })))
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn ci_method(e: Estimator) -> &'static str {
    match e {
        Estimator::Naive => "wilson-99",
        Estimator::Conditional => "normal-99 on conditional replicates",
    }
}

fn curve_artifacts(curve: RatioCurve, extra: Value) -> Artifacts {
    let sup = ldmc::uniform_sup_report(&curve);
    let provenance = vec![Provenance {
        result: "ratio_curve".into(),
        estimator: serde_json::to_value(curve.estimator).unwrap().as_str().unwrap_or_default().into(),
        reps: Some(curve.reps),
        ci_method: ci_method(curve.estimator).into(),
    }];
    let mut payload = json!({ "curve": curve, "sup": sup });
    if let (Value::Object(p), Value::Object(e)) = (&mut payload, extra) {
        p.extend(e);
    }
    Artifacts { csv: Some(curve.to_csv()), payload, provenance }
}

fn logweibull_alpha(noise: &heavytail::dist::TailModel) -> Result<f64, Failure> {
    match noise.class_tag().base() {
        ClassTag::LogWeibull { alpha } => Ok(*alpha),
        other => Err(("noise".into(), Error::Unsupported(format!("window formulas need log-Weibull noise, got {other:?}")))),
    }
}

fn window_at(
    variant: linproc::WindowVariant,
    alpha: f64,
    n: f64,
    w: &linproc::WindowParams,
    stats: &linproc::CoefStats,
) -> heavytail::Result<LambdaWindow> {
    linproc::lambda_window(variant, alpha, n, w.delta, Some(stats.m0), Some(stats.m0_prime), w.k)
}

fn linear_ld(c: &LinearLdConfig, seed: u64, exec: &Executor) -> Result<Artifacts, Failure> {
    let noise = at("noise", c.noise.build())?;
    let stats = at("coefficients", linproc::coef_stats(&c.coefficients, c.truncation_tol, None))?;
    let (c_plus, c_minus) = linproc::tail_constants(&stats, &noise);
    let base = json!({ "coef_stats": stats, "tail_constants": { "c_plus": c_plus, "c_minus": c_minus } });
    match &c.analysis {
        LinearAnalysis::TailRatio { xs, reps } => {
            let process = at("coefficients", make_linear(&c.coefficients, &noise, c.truncation_tol))?;
            let xs = grid_values("analysis.xs", xs)?;
            let curve = at("analysis", linproc::lemma41_ratio(&process, &xs, *reps, seed, exec))?;
            Ok(curve_artifacts(curve, base))
        }
        LinearAnalysis::WindowRatio { n, variant, window, xs, reps } => {
            let alpha = logweibull_alpha(&noise)?;
            let process = at("coefficients", make_linear(&c.coefficients, &noise, c.truncation_tol))?;
            let lw = at("analysis.window", window_at(*variant, alpha, *n as f64, window, &stats))?;
            let xs = grid_values("analysis.xs", xs)?;
            let (curve, sup) = at("analysis", linproc::prop42_ratio(&process, *n, &lw, &xs, *reps, seed, exec))?;
            let mut art = curve_artifacts(curve, base);
            art.payload["window"] = serde_json::to_value(&lw).unwrap();
            art.payload["sup_to_limit"] = serde_json::to_value(sup).unwrap();
            Ok(art)
        }
        LinearAnalysis::Windows { variant, n_grid, window } => {
            let alpha = logweibull_alpha(&noise)?;
            let mut csv =
                Csv::new(&["variant", "alpha", "delta", "n", "K", "c_n", "b_n", "log_b_n", "nonempty", "finite_n_nonempty"]);
            let mut rows = Vec::new();
            for n in grid_values("analysis.n_grid", n_grid)? {
                let lw = at("analysis.window", window_at(*variant, alpha, n, window, &stats))?;
                let v = serde_json::to_value(lw.variant).unwrap();
                csv.row(&[
                    v.as_str().unwrap_or_default().into(),
                    num(lw.alpha),
                    num(lw.delta),
                    num(lw.n),
                    num(lw.k),
                    num(lw.c_n),
                    num(lw.b_n),
                    num(lw.log_b_n),
                    lw.nonempty.to_string(),
                    lw.finite_n_nonempty.to_string(),
                ]);
                rows.push(lw);
            }
            let mut payload = base;
            payload["windows"] = serde_json::to_value(rows).unwrap();
            Ok(Artifacts {
                csv: Some(csv.finish()),
                payload,
                provenance: vec![Provenance {
                    result: "windows".into(),
                    estimator: "closed form".into(),
                    reps: None,
                    ci_method: "none".into(),
                }],
            })
        }
    }
}

fn covmax_run(c: &CovmaxConfig, seed: u64, exec: &Executor) -> Result<Artifacts, Failure> {
    let process = at("process", c.process.build())?;
    let p = match &c.p {
        Dimension::Fixed(p) => *p,
        Dimension::Rule(r) => {
            let p = at("p", covmax::dimension_rule(r, c.n as f64))?;
            if p > usize::MAX as f64 / 2.0 {
                return Err(("p".into(), Error::ParameterDomain(format!("dimension {p:.3e} is not representable"))));
            }
            p as usize
        }
    };
    let samples = at("covmax", covmax::simulate_covmax_with(&process, p, c.n, c.reps, c.law, seed, exec, &c.limits))?;
    let limit = match c.law {
        MaxLaw::Frechet => {
            let x2 = at("process", process.marginal().square())?;
            LimitLaw::Frechet { alpha: x2.class_tag().regvar_index().unwrap_or(f64::NAN) }
        }
        MaxLaw::Gumbel => LimitLaw::Gumbel,
    };
    let diag: Vec<f64> = samples.iter().map(|s| s.diag_max_normalized).collect();
    let ks = at("covmax", covmax::ks_distance(&diag, limit))?;
    let off: Vec<f64> = samples.iter().filter_map(|s| s.offdiag_max_normalized).collect();
    let exceed = if off.is_empty() {
        None
    } else {
        Some(off.iter().filter(|&&v| v > c.offdiag_level).count() as f64 / off.len() as f64)
    };
    let mut csv = Csv::new(&["rep", "diag_max_norm", "offdiag_max_norm"]);
    for (r, s) in samples.iter().enumerate() {
        csv.row(&[r.to_string(), num(s.diag_max_normalized), opt_num(s.offdiag_max_normalized)]);
    }
    let first = &samples[0];
    let payload = json!({
        "p": p,
        "n": c.n,
        "reps": c.reps,
        "law": c.law,
        "limit": limit,
        "constants": first.constants,
        "coverage": first.coverage,
        "ks_diag": ks,
        "offdiag_level": c.offdiag_level,
        "offdiag_exceed_fraction": exceed,
    });
    Ok(Artifacts {
        csv: Some(csv.finish()),
        payload,
        provenance: vec![Provenance {
            result: "covariance maxima".into(),
            estimator: "direct simulation".into(),
            reps: Some(c.reps),
            ci_method: "Kolmogorov-Smirnov distance to the limit law".into(),
        }],
    })
}

fn bounds(c: &BoundsConfig, seed: u64, exec: &Executor) -> Result<Artifacts, Failure> {
    let model = at("model", c.model.build())?;
    let xs = grid_values("xs", &c.xs)?;
    let constants = c.constants.unwrap_or_else(|| FukNagaevConstants::default_for(c.p as f64));
    let report = at("bounds", ldmc::bounds_check(&model, c.n, c.c, c.p, constants, &xs, c.reps, seed, exec))?;
    let mut csv = Csv::new(&["x", "empirical", "std_error", "prokhorov", "fuk_nagaev"]);
    for i in 0..report.xs.len() {
        csv.row(&[
            num(report.xs[i]),
            num(report.empirical[i]),
            num(report.std_error[i]),
            num(report.prokhorov[i]),
            num(report.fuk_nagaev[i]),
        ]);
    }
    let dominated = report.dominated();
    Ok(Artifacts {
        csv: Some(csv.finish()),
        payload: json!({ "report": report, "dominated": dominated }),
        provenance: vec![Provenance {
            result: "bounds".into(),
            estimator: "naive".into(),
            reps: Some(c.reps),
            ci_method: "binomial standard error, 3 SE slack".into(),
        }],
    })
}
