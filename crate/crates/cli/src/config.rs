//! Experiment configuration: one JSON document per run, with command-line overrides.

use std::path::{Path, PathBuf};

use heavytail::conditions::{BoundaryRegime, GFunction, SupGrid};
use heavytail::covmax::{CovMaxLimits, DimensionRule, MaxLaw};
use heavytail::dist::{ModelSpec, TailModel};
use heavytail::ldmc::{Estimator, FukNagaevConstants};
use heavytail::linproc::{EpsilonRule, WindowParams, WindowVariant};
use heavytail::procsim::{CoefRule, ProcessSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
    #[default]
    Both,
}

impl OutputFormat {
    pub fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Required; there is no entropy-seeded default.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(flatten)]
    pub experiment: Experiment,
}

fn one() -> usize {
    1
}

fn default_out_dir() -> PathBuf {
    PathBuf::from(".")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Experiment {
    Simulate(SimulateConfig),
    CheckConditions(CheckConfig),
    EstimateLd(EstimateLdConfig),
    LinearLd(LinearLdConfig),
    Covmax(CovmaxConfig),
    Bounds(BoundsConfig),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Simulate(_) => "simulate",
            Experiment::CheckConditions(_) => "check-conditions",
            Experiment::EstimateLd(_) => "estimate-ld",
            Experiment::LinearLd(_) => "linear-ld",
            Experiment::Covmax(_) => "covmax",
            Experiment::Bounds(_) => "bounds",
        }
    }
}

/// A grid given either as explicit values or as a geometric range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Values(Vec<f64>),
    Geometric { lo: f64, hi: f64, points: usize },
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>, String> {
        let v = match self {
            Grid::Values(v) => v.clone(),
            Grid::Geometric { lo, hi, points } => {
                heavytail::ldmc::geometric(*lo, *hi, *points).map_err(|e| e.to_string())?
            }
        };
        if v.is_empty() {
            return Err("grid is empty".into());
        }
        if v.iter().any(|x| !x.is_finite()) || v.windows(2).any(|w| !(w[1] > w[0])) {
            return Err("grid must be finite and strictly increasing".into());
        }
        Ok(v)
    }
}

/// Threshold-shift function `g`, built against a marginal law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "g", rename_all = "snake_case")]
pub enum GSpec {
    /// `c x / S(x)`.
    XOverHazard {
        #[serde(default = "unit")]
        c: f64,
    },
    XOverSqrtHazard,
    /// `x / (ln x)^a`.
    XOverLogPower { a: f64 },
    /// `slope * x`.
    Linear { slope: f64 },
}

fn unit() -> f64 {
    1.0
}

impl Default for GSpec {
    fn default() -> Self {
        GSpec::XOverHazard { c: 1.0 }
    }
}

impl GSpec {
    pub fn build(&self, model: &TailModel) -> GFunction {
        match *self {
            GSpec::XOverHazard { c } => GFunction::over_hazard(model, c),
            GSpec::XOverSqrtHazard => GFunction::over_sqrt_hazard(model),
            GSpec::XOverLogPower { a } => GFunction::over_log_power(a),
            GSpec::Linear { slope } => GFunction::from_log(format!("{slope}*x"), move |u| slope.ln() + u),
        }
    }

    fn problems(&self) -> Vec<String> {
        match *self {
            GSpec::XOverHazard { c } if !(c > 0.0) => vec![format!("g: c must be positive, got {c}")],
            GSpec::Linear { slope } if !(slope > 0.0) => vec![format!("g: slope must be positive, got {slope}")],
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub process: ProcessSpec,
    pub n: usize,
    pub reps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "condition", rename_all = "snake_case")]
pub enum Check {
    C1 {
        model: ModelSpec,
        #[serde(default)]
        g: GSpec,
        x_grid: Grid,
        #[serde(default = "unit")]
        c: f64,
    },
    C2 {
        model: ModelSpec,
        #[serde(default)]
        g: GSpec,
        boundary: BoundaryRegime,
        n_grid: Grid,
        delta: f64,
        #[serde(default)]
        sup_grid: SupGrid,
    },
    Lemma21 {
        model: ModelSpec,
        #[serde(default)]
        g: GSpec,
        boundary: BoundaryRegime,
        n_grid: Grid,
        eps: f64,
        #[serde(default)]
        sup_grid: SupGrid,
    },
    IidLd {
        model: ModelSpec,
        n: usize,
        boundary: BoundaryRegime,
        delta: f64,
        reps: u64,
    },
    C3 {
        process: ProcessSpec,
        #[serde(default)]
        g: GSpec,
        eps: f64,
        x_grid: Grid,
        reps: u64,
    },
    Rv3 {
        process: ProcessSpec,
        x_grid: Grid,
        reps: u64,
    },
    SingleJump(WindowCheck),
    PairJump(WindowCheck),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCheck {
    pub noise: ModelSpec,
    pub coefficients: CoefRule,
    pub n_grid: Grid,
    #[serde(default)]
    pub eps: EpsilonRule,
    /// Point at which `a(x)` is matched to the mean excess of `|Z|`.
    #[serde(default = "calibration_x")]
    pub calibration_x: f64,
    #[serde(default)]
    pub window: WindowParams,
    #[serde(default = "truncation_tol")]
    pub truncation_tol: f64,
}

fn calibration_x() -> f64 {
    50.0
}

fn truncation_tol() -> f64 {
    1e-12
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Ratio to `n F̄(x)`.
    #[default]
    BigJump,
    /// Ratio to `Φ̄(x / σ_n)`.
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridUnits {
    #[default]
    Absolute,
    /// Thresholds are multiples of `σ_n = sd(S_n)`.
    SigmaN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdSpec {
    /// Geometric grid from `delta t_n`; up to `span * delta t_n` when given,
    /// otherwise to the naive feasibility ceiling.
    Boundary {
        boundary: BoundaryRegime,
        delta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        span: Option<f64>,
        #[serde(default = "sixteen")]
        points: usize,
    },
    Grid(Grid),
}

fn sixteen() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateLdConfig {
    pub process: ProcessSpec,
    pub n: usize,
    #[serde(default = "naive")]
    pub estimator: Estimator,
    #[serde(default)]
    pub regime: Regime,
    pub grid: ThresholdSpec,
    #[serde(default)]
    pub grid_units: GridUnits,
    pub reps: u64,
}

fn naive() -> Estimator {
    Estimator::Naive
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLdConfig {
    pub noise: ModelSpec,
    pub coefficients: CoefRule,
    #[serde(default = "truncation_tol")]
    pub truncation_tol: f64,
    pub analysis: LinearAnalysis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LinearAnalysis {
    /// Simulated `P(X > x)` against `(k+ p+ + k- p-) P(|Z| > x)`.
    TailRatio { xs: Grid, reps: u64 },
    /// Simulated `P(S_n > x)` inside the window against `n P(|Z| > x / |m0|)`.
    WindowRatio {
        n: usize,
        variant: WindowVariant,
        #[serde(default)]
        window: WindowParams,
        xs: Grid,
        reps: u64,
    },
    /// Window ends `(c_n, b_n)` over an n-grid.
    Windows {
        variant: WindowVariant,
        n_grid: Grid,
        #[serde(default)]
        window: WindowParams,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dimension {
    Fixed(usize),
    Rule(DimensionRule),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovmaxConfig {
    pub process: ProcessSpec,
    pub p: Dimension,
    pub n: usize,
    pub reps: u64,
    pub law: MaxLaw,
    #[serde(default)]
    pub limits: CovMaxLimits,
    /// Level for the reported off-diagonal exceedance fraction.
    #[serde(default = "half")]
    pub offdiag_level: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsConfig {
    pub model: ModelSpec,
    pub n: usize,
    /// Truncation level of the summands.
    pub c: f64,
    /// Even moment order of the moment bound.
    pub p: u32,
    pub xs: Grid,
    pub reps: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<FukNagaevConstants>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Io(String),
    Parse(String),
    Invalid(Vec<String>),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Io(m) => write!(f, "cannot read config: {m}"),
            ConfigError::Parse(m) => write!(f, "cannot parse config: {m}"),
            ConfigError::Invalid(list) => {
                writeln!(f, "invalid config ({} problems):", list.len())?;
                for p in list {
                    writeln!(f, "  - {p}")?;
                }
                Ok(())
            }
        }
    }
}

/// Merges `overrides` and the subcommand into a config document and parses it.
pub fn from_value(mut doc: Value, subcommand: &str, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let obj = doc.as_object_mut().ok_or_else(|| ConfigError::Parse("config must be a JSON object".into()))?;
    match obj.get("subcommand") {
        None => {
            obj.insert("subcommand".into(), Value::from(subcommand));
        }
        Some(Value::String(s)) if s == subcommand => {}
        Some(other) => {
            return Err(ConfigError::Invalid(vec![format!(
                "config is for subcommand {other}, but '{subcommand}' was invoked"
            )]))
        }
    }
    if let Some(s) = overrides.seed {
        obj.insert("seed".into(), Value::from(s));
    }
    if let Some(w) = overrides.workers {
        obj.insert("workers".into(), Value::from(w));
    }
    if let Some(d) = &overrides.out_dir {
        obj.insert("out_dir".into(), Value::from(d.to_string_lossy().into_owned()));
    }
    if let Some(f) = overrides.format {
        obj.insert("format".into(), serde_json::to_value(f).expect("format serializes"));
    }
    serde_json::from_value(doc).map_err(|e| ConfigError::Parse(e.to_string()))
}

pub fn load(path: &Path, subcommand: &str, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    from_value(doc, subcommand, overrides)
}

fn positive<T: PartialOrd + Default + std::fmt::Display>(out: &mut Vec<String>, name: &str, v: T) {
    if !(v > T::default()) {
        out.push(format!("{name} must be positive, got {v}"));
    }
}

fn grid(out: &mut Vec<String>, name: &str, g: &Grid, need_positive: bool) {
    match g.values() {
        Err(e) => out.push(format!("{name}: {e}")),
        Ok(v) if need_positive && v[0] <= 0.0 => out.push(format!("{name}: values must be positive")),
        Ok(_) => {}
    }
}

fn model(out: &mut Vec<String>, name: &str, m: &ModelSpec) {
    out.extend(m.problems().into_iter().map(|p| format!("{name}: {p}")));
}

fn process(out: &mut Vec<String>, name: &str, p: &ProcessSpec) {
    out.extend(p.problems().into_iter().map(|e| format!("{name}: {e}")));
}

fn boundary(out: &mut Vec<String>, name: &str, b: &BoundaryRegime) {
    if let Err(e) = heavytail::conditions::boundary_catalogue(b.clone()) {
        out.push(format!("{name}: {e}"));
    }
}

impl ExperimentConfig {
    /// All validation problems; empty when the config can run.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.seed.is_none() {
            out.push("seed is required (set it in the config or pass --seed)".into());
        }
        positive(&mut out, "workers", self.workers);
        match &self.experiment {
            Experiment::Simulate(c) => {
                process(&mut out, "process", &c.process);
                positive(&mut out, "n", c.n);
                positive(&mut out, "reps", c.reps);
            }
            Experiment::CheckConditions(c) => {
                if c.checks.is_empty() {
                    out.push("checks must list at least one condition".into());
                }
                for (i, ch) in c.checks.iter().enumerate() {
                    check_problems(&mut out, &format!("checks[{i}]"), ch);
                }
            }
            Experiment::EstimateLd(c) => {
                process(&mut out, "process", &c.process);
                positive(&mut out, "n", c.n);
                positive(&mut out, "reps", c.reps);
                match &c.grid {
                    ThresholdSpec::Grid(g) => grid(&mut out, "grid", g, true),
                    ThresholdSpec::Boundary { boundary: b, delta, span, points } => {
                        boundary(&mut out, "grid.boundary", b);
                        positive(&mut out, "grid.delta", *delta);
                        if span.is_some_and(|s| !(s > 1.0)) {
                            out.push("grid.span must exceed 1".into());
                        }
                        if *points < 2 {
                            out.push("grid.points must be at least 2".into());
                        }
                        if c.grid_units == GridUnits::SigmaN {
                            out.push("grid_units sigma_n applies to explicit grids only".into());
                        }
                    }
                }
                if c.regime == Regime::Normal && c.estimator == Estimator::Conditional {
                    out.push("the normal regime uses the naive estimator".into());
                }
            }
            Experiment::LinearLd(c) => {
                model(&mut out, "noise", &c.noise);
                if let Err(e) = heavytail::linproc::coef_stats(&c.coefficients, c.truncation_tol, None) {
                    out.push(format!("coefficients: {e}"));
                }
                match &c.analysis {
                    LinearAnalysis::TailRatio { xs, reps } => {
                        grid(&mut out, "analysis.xs", xs, true);
                        positive(&mut out, "analysis.reps", *reps);
                    }
                    LinearAnalysis::WindowRatio { n, xs, reps, window, .. } => {
                        positive(&mut out, "analysis.n", *n);
                        grid(&mut out, "analysis.xs", xs, true);
                        positive(&mut out, "analysis.reps", *reps);
                        window_problems(&mut out, "analysis.window", window);
                    }
                    LinearAnalysis::Windows { n_grid, window, .. } => {
                        grid(&mut out, "analysis.n_grid", n_grid, true);
                        window_problems(&mut out, "analysis.window", window);
                    }
                }
            }
            Experiment::Covmax(c) => {
                process(&mut out, "process", &c.process);
                positive(&mut out, "n", c.n);
                positive(&mut out, "reps", c.reps);
                match &c.p {
                    Dimension::Fixed(p) => positive(&mut out, "p", *p),
                    Dimension::Rule(r) => {
                        if let Err(e) = heavytail::covmax::dimension_rule(r, c.n.max(1) as f64) {
                            out.push(format!("p: {e}"));
                        }
                    }
                }
                positive(&mut out, "limits.max_work", c.limits.max_work);
            }
            Experiment::Bounds(c) => {
                model(&mut out, "model", &c.model);
                positive(&mut out, "n", c.n);
                positive(&mut out, "c", c.c);
                positive(&mut out, "reps", c.reps);
                if c.p < 2 || c.p % 2 != 0 {
                    out.push(format!("p must be an even integer >= 2, got {}", c.p));
                }
                grid(&mut out, "xs", &c.xs, true);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(p))
        }
    }
}

fn window_problems(out: &mut Vec<String>, name: &str, w: &WindowParams) {
    if !(w.delta > 0.0 && w.delta < 1.0) {
        out.push(format!("{name}.delta must lie in (0, 1), got {}", w.delta));
    }
    positive(out, &format!("{name}.K"), w.k);
    if w.points < 2 {
        out.push(format!("{name}.points must be at least 2"));
    }
}

fn check_problems(out: &mut Vec<String>, at: &str, ch: &Check) {
    match ch {
        Check::C1 { model: m, g, x_grid, c } => {
            model(out, &format!("{at}.model"), m);
            out.extend(g.problems().into_iter().map(|p| format!("{at}.{p}")));
            grid(out, &format!("{at}.x_grid"), x_grid, true);
            positive(out, &format!("{at}.c"), *c);
        }
        Check::C2 { model: m, g, boundary: b, n_grid, delta, .. } => {
            model(out, &format!("{at}.model"), m);
            out.extend(g.problems().into_iter().map(|p| format!("{at}.{p}")));
            boundary(out, &format!("{at}.boundary"), b);
            grid(out, &format!("{at}.n_grid"), n_grid, true);
            positive(out, &format!("{at}.delta"), *delta);
        }
        Check::Lemma21 { model: m, g, boundary: b, n_grid, eps, .. } => {
            model(out, &format!("{at}.model"), m);
            out.extend(g.problems().into_iter().map(|p| format!("{at}.{p}")));
            boundary(out, &format!("{at}.boundary"), b);
            grid(out, &format!("{at}.n_grid"), n_grid, true);
            positive(out, &format!("{at}.eps"), *eps);
        }
        Check::IidLd { model: m, n, boundary: b, delta, reps } => {
            model(out, &format!("{at}.model"), m);
            positive(out, &format!("{at}.n"), *n);
            boundary(out, &format!("{at}.boundary"), b);
            positive(out, &format!("{at}.delta"), *delta);
            positive(out, &format!("{at}.reps"), *reps);
        }
        Check::C3 { process: p, g, eps, x_grid, reps } => {
            process(out, &format!("{at}.process"), p);
            out.extend(g.problems().into_iter().map(|e| format!("{at}.{e}")));
            positive(out, &format!("{at}.eps"), *eps);
            grid(out, &format!("{at}.x_grid"), x_grid, true);
            positive(out, &format!("{at}.reps"), *reps);
        }
        Check::Rv3 { process: p, x_grid, reps } => {
            process(out, &format!("{at}.process"), p);
            grid(out, &format!("{at}.x_grid"), x_grid, true);
            positive(out, &format!("{at}.reps"), *reps);
        }
        Check::SingleJump(w) | Check::PairJump(w) => {
            model(out, &format!("{at}.noise"), &w.noise);
            if let Err(e) = heavytail::linproc::coef_stats(&w.coefficients, w.truncation_tol, None) {
                out.push(format!("{at}.coefficients: {e}"));
            }
            grid(out, &format!("{at}.n_grid"), &w.n_grid, true);
            window_problems(out, &format!("{at}.window"), &w.window);
        }
    }
}
