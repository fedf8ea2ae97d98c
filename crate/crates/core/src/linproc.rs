//! Large deviations of causal linear processes: coefficient sums, the
//! marginal tail constant, threshold windows on which the linear ratio is
//! certified, and Monte Carlo ratio experiments.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::conditions::{ConditionId, ConditionReport, GFunction, Verdict};
use crate::dist::{ClassTag, TailModel};
use crate::error::{Error, Result};
use crate::exec::{domain, Executor};
use crate::ldmc::{self, RatioCurve, SupReport, Target, ThresholdGrid};
use crate::numeric::log_sum_exp;
use crate::procsim::{CoefRule, ProcessModel, Scratch};
use crate::stats::{classify_trend, wilson, Trend, Z99};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefStats {
    /// `sum_j psi_j`.
    pub m0: f64,
    /// `sum_{j >= 1} |psi_j|`.
    pub m1: f64,
    /// `sum_j |psi_j|`.
    pub m0_prime: f64,
    pub k_plus: usize,
    pub k_minus: usize,
    pub delta: f64,
    /// `sum_{i >= 1} (sum_{j >= i} |psi_j|)^delta`.
    pub delta_norm: f64,
    /// Highest retained lag.
    pub order: usize,
    pub truncated: bool,
}

fn power_tail_sum(e: f64, from: f64) -> f64 {
    // sum_{k >= from} k^-e by Euler-Maclaurin to second order
    from.powf(1.0 - e) / (e - 1.0) + 0.5 * from.powf(-e) + e / 12.0 * from.powf(-e - 1.0)
}

/// Coefficient sums of a rule. Finite rules are exact; infinite rules use
/// closed forms (geometric) or truncated sums with an asymptotic remainder.
pub fn coef_stats(rule: &CoefRule, truncation_tol: f64, delta: Option<f64>) -> Result<CoefStats> {
    let delta = match (delta, rule) {
        (Some(d), _) => d,
        (None, CoefRule::PowerLaw { exponent }) if *exponent > 2.0 => 0.5 * (1.0 + 1.0 / (exponent - 1.0)),
        (None, _) => 0.5,
    };
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    let coefs = rule.truncate(truncation_tol, Some(delta))?;
    let psi = &coefs.psi;
    let unit = |c: f64| (c.abs() - 1.0).abs() <= 1e-12;
    let k_plus = psi.iter().filter(|&&c| unit(c) && c > 0.0).count();
    let k_minus = psi.iter().filter(|&&c| unit(c) && c < 0.0).count();
    let order = psi.len() - 1;
    let (m0, m0_prime, delta_norm) = match rule {
        CoefRule::Finite { .. } => {
            let m0 = psi.iter().sum::<f64>();
            let abs: Vec<f64> = psi.iter().map(|c| c.abs()).collect();
            let mut tail = 0.0;
            let mut norm = 0.0;
            for i in (1..abs.len()).rev() {
                tail += abs[i];
                norm += tail.powf(delta);
            }
            (m0, abs.iter().sum::<f64>(), norm)
        }
        CoefRule::Geometric { ratio } => {
            let a = ratio.abs();
            let ad = a.powf(delta);
            (1.0 / (1.0 - ratio), 1.0 / (1.0 - a), (1.0 - a).powf(-delta) * ad / (1.0 - ad))
        }
        CoefRule::PowerLaw { exponent } => {
            let e = *exponent;
            if !((e - 1.0) * delta > 1.0) {
                return Err(Error::Class(format!(
                    "delta-norm diverges for power-law exponent {e} and delta {delta}"
                )));
            }
            // psi_j = (1 + j)^-e, so sum_{j >= i} psi_j = sum_{k >= i+1} k^-e
            let mut tail = power_tail_sum(e, psi.len() as f64 + 1.0);
            let mut norm = 0.0;
            for i in (1..psi.len()).rev() {
                tail += psi[i];
                norm += tail.powf(delta);
            }
            let total = tail + psi[0];
            // remaining terms: (i^{1-e}/(e-1))^delta summed from i = len
            let r = (e - 1.0) * delta;
            let from = psi.len() as f64;
            norm += (e - 1.0).powf(-delta) * from.powf(1.0 - r) / (r - 1.0);
            (total, total, norm)
        }
    };
    let m1 = m0_prime - psi[0].abs();
    if !delta_norm.is_finite() {
        return Err(Error::Class("delta-norm diverges".into()));
    }
    Ok(CoefStats { m0, m1, m0_prime, k_plus, k_minus, delta, delta_norm, order, truncated: coefs.truncated })
}

/// `(k_plus p_plus + k_minus p_minus, k_plus p_minus + k_minus p_plus)`: the
/// right and left tail constants of the marginal relative to `P(|Z| > x)`.
pub fn tail_constants(stats: &CoefStats, noise: &TailModel) -> (f64, f64) {
    let (pp, pm) = noise.balance();
    let (kp, km) = (stats.k_plus as f64, stats.k_minus as f64);
    (kp * pp + km * pm, kp * pm + km * pp)
}

fn linear_parts(process: &ProcessModel) -> Result<(&TailModel, CoefStats)> {
    let noise = process
        .linear_noise()
        .ok_or_else(|| Error::Unsupported("process is not linear".into()))?;
    let psi = process.coefficients().expect("linear process has coefficients").psi.clone();
    let stats = coef_stats(&CoefRule::Finite { psi }, 1.0, None)?;
    Ok((noise, stats))
}

/// Monte Carlo `P(X > x)` against `(k_plus p_plus + k_minus p_minus) P(|Z| > x)`.
pub fn lemma41_ratio(process: &ProcessModel, xs: &[f64], reps: u64, seed: u64, exec: &Executor) -> Result<RatioCurve> {
    let (noise, stats) = linear_parts(process)?;
    let (c_plus, _) = tail_constants(&stats, noise);
    if stats.k_plus + stats.k_minus == 0 || c_plus == 0.0 {
        return Err(Error::Unsupported(
            "no coefficient of modulus one carries the right tail; the limit constant is 0".into(),
        ));
    }
    let grid = ThresholdGrid::new(xs.to_vec(), None, 1, 1.0)?;
    let k = grid.xs.len();
    let parts = exec.run_batches(seed, domain("marginal"), reps, |rng, _, len| {
        let mut hist = vec![0u64; k + 1];
        let mut one = [0.0];
        let mut scratch = Scratch::default();
        for _ in 0..len {
            process.fill_path(rng, &mut one, &mut scratch);
            hist[grid.xs.partition_point(|&t| t < one[0])] += 1;
        }
        hist
    });
    let mut hist = vec![0u64; k + 1];
    for h in parts {
        hist.iter_mut().zip(h).for_each(|(a, b)| *a += b);
    }
    let mut curve = RatioCurve {
        xs: grid.xs.clone(),
        p_hat: vec![0.0; k],
        target: grid.xs.iter().map(|&x| c_plus * noise.abs_tail(x)).collect(),
        ratio: vec![0.0; k],
        ci_lo: vec![0.0; k],
        ci_hi: vec![0.0; k],
        reps,
        estimator: ldmc::Estimator::Naive,
        target_kind: Target::Linear,
        ess: None,
        rel_se: vec![0.0; k],
    };
    let mut acc = 0u64;
    for i in (0..k).rev() {
        acc += hist[i + 1];
        let p = acc as f64 / reps as f64;
        let (lo, hi) = wilson(acc, reps, Z99);
        let t = curve.target[i];
        curve.p_hat[i] = p;
        curve.ratio[i] = p / t;
        curve.ci_lo[i] = lo / t;
        curve.ci_hi[i] = hi / t;
        curve.rel_se[i] = if acc == 0 { f64::INFINITY } else { ((1.0 - p) / acc as f64).sqrt() };
    }
    Ok(curve)
}

/// Which window-defining ratio the window controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowVariant {
    /// Single large noise term against the coefficient tail sum `m1`.
    SingleJump,
    /// Pair of large noise terms with `m0' > m0 > 0`.
    PairJump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaWindow {
    pub variant: WindowVariant,
    pub alpha: f64,
    pub delta: f64,
    pub n: f64,
    /// Multiplier in `c_n = K sqrt(n (ln n)^alpha) ln ln n`.
    #[serde(rename = "K")]
    pub k: f64,
    pub c_n: f64,
    /// `ln b_n`; `b_n` itself overflows for large `n`.
    pub log_b_n: f64,
    pub b_n: f64,
    /// Emptiness by the asymptotic regime rule.
    pub nonempty: bool,
    /// `c_n < b_n` at this `n`.
    pub finite_n_nonempty: bool,
    pub m0: Option<f64>,
    pub m0_prime: Option<f64>,
}

impl LambdaWindow {
    /// Whether `x` lies strictly inside `(c_n, b_n)` of a nonempty window.
    pub fn contains(&self, x: f64) -> bool {
        self.nonempty && x > self.c_n && x.ln() < self.log_b_n
    }

    /// `points` log-equispaced values of `ln x` strictly inside the window;
    /// an unbounded window is scanned up to `e^100 c_n`.
    pub fn log_grid(&self, points: usize) -> Vec<f64> {
        let lc = self.c_n.ln();
        let lb = if self.log_b_n.is_finite() { self.log_b_n } else { lc + 100.0 };
        (0..points).map(|i| lc + (lb - lc) * (i as f64 + 0.5) / points as f64).collect()
    }
}

/// Window `(c_n, b_n)` for log-Weibull(`alpha`) noise.
pub fn lambda_window(
    variant: WindowVariant,
    alpha: f64,
    n: f64,
    delta: f64,
    m0: Option<f64>,
    m0_prime: Option<f64>,
    k: f64,
) -> Result<LambdaWindow> {
    if !(alpha > 1.0) || !(n > std::f64::consts::E) || !(delta > 0.0 && delta < 1.0) || !(k > 0.0) {
        return Err(Error::domain(format!(
            "window needs alpha > 1, n > e, delta in (0, 1) and K > 0; got alpha={alpha}, n={n}, delta={delta}, K={k}"
        )));
    }
    let ln = n.ln();
    let lnln = ln.ln();
    let c_n = k * (n * ln.powf(alpha)).sqrt() * lnln;
    let (log_b_n, nonempty) = match variant {
        WindowVariant::SingleJump => {
            let lb = ((1.0 - delta) * ln / ((alpha - 1.0) * lnln)).powf(1.0 / (alpha - 1.0));
            (lb, alpha < 2.0)
        }
        WindowVariant::PairJump => {
            let (m0, mp) = match (m0, m0_prime) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::domain("pair-jump window needs m0 and m0'")),
            };
            if !(m0 > 0.0 && mp >= m0) {
                return Err(Error::domain(format!("pair-jump window needs m0' >= m0 > 0, got m0={m0}, m0'={mp}")));
            }
            let r = (mp / m0).ln();
            let lb = if r == 0.0 {
                f64::INFINITY
            } else {
                ((1.0 - delta) * ln / (alpha * r)).powf(1.0 / (alpha - 1.0))
            };
            let ne = if alpha < 2.0 {
                true
            } else if alpha == 2.0 {
                mp / m0 < std::f64::consts::E
            } else {
                false
            };
            (lb, ne)
        }
    };
    Ok(LambdaWindow {
        variant,
        alpha,
        delta,
        n,
        k,
        c_n,
        log_b_n,
        b_n: log_b_n.exp(),
        nonempty,
        finite_n_nonempty: c_n.ln() < log_b_n,
        m0,
        m0_prime,
    })
}

/// Shrinking factor in `g = eps(x) a(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum EpsilonRule {
    /// `(ln ln x)^-power`.
    LogLogPower { power: f64 },
    Constant { value: f64 },
}

impl Default for EpsilonRule {
    fn default() -> Self {
        EpsilonRule::LogLogPower { power: 0.5 }
    }
}

impl EpsilonRule {
    fn log_eval(&self, u: f64) -> f64 {
        match *self {
            EpsilonRule::LogLogPower { power } => -power * u.ln().ln(),
            EpsilonRule::Constant { value } => value.ln(),
        }
    }
}

/// `g(x) = eps(x) a(x)` with `a(x) = c x / (ln x)^(alpha - 1)` for log-Weibull
/// noise; `c` is matched to the mean excess of `|Z|` at `x0`.
pub fn window_g(noise: &TailModel, eps: EpsilonRule, x0: f64) -> Result<(GFunction, f64)> {
    let alpha = match noise.class_tag().base() {
        ClassTag::LogWeibull { alpha } => *alpha,
        other => return Err(Error::Unsupported(format!("window g needs log-Weibull noise, got {other:?}"))),
    };
    if !(x0 > std::f64::consts::E) {
        return Err(Error::domain("calibration point must exceed e"));
    }
    let a0 = noise.abs_base().mean_excess(x0)?;
    let c = a0 * x0.ln().powf(alpha - 1.0) / x0;
    let label = format!("eps(x)*{c:.6}*x/(ln x)^{}", alpha - 1.0);
    let g = GFunction::from_log(label, move |u: f64| eps.log_eval(u) + c.ln() + u - (alpha - 1.0) * u.ln());
    Ok((g, c))
}

fn log_alpha(noise: &TailModel) -> Result<f64> {
    match noise.class_tag().base() {
        ClassTag::LogWeibull { alpha } => Ok(*alpha),
        other => Err(Error::Unsupported(format!("window formulas need log-Weibull noise, got {other:?}"))),
    }
}

/// Window construction shared across an n-grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowParams {
    pub delta: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub points: usize,
}

impl Default for WindowParams {
    fn default() -> Self {
        WindowParams { delta: 0.1, k: 1.0, points: 64 }
    }
}

fn window_check(
    id: ConditionId,
    variant: WindowVariant,
    noise: &TailModel,
    stats: &CoefStats,
    n_grid: &[f64],
    params: WindowParams,
    stat_at: impl Fn(f64, f64) -> f64,
    g_label: &str,
) -> Result<ConditionReport> {
    let alpha = log_alpha(noise)?;
    let (m0, mp) = (Some(stats.m0.abs()), Some(stats.m0_prime));
    let mut stat = Vec::with_capacity(n_grid.len());
    let mut windows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let w = lambda_window(variant, alpha, n, params.delta, m0, mp, params.k)?;
        if w.nonempty && w.finite_n_nonempty {
            let ln_n = n.ln();
            let sup = w
                .log_grid(params.points)
                .into_iter()
                .map(|u| stat_at(u, ln_n))
                .fold(f64::NEG_INFINITY, f64::max);
            stat.push(sup.exp());
        } else {
            stat.push(f64::NAN);
        }
        windows.push(w);
    }
    let params_json = json!({ "windows": windows, "g": g_label, "coef_stats": stats, "window_params": params });
    if windows.iter().all(|w| !w.nonempty) {
        return Ok(ConditionReport {
            condition_id: id,
            grid_kind: "n".into(),
            grid: n_grid.to_vec(),
            ci_lo: stat.clone(),
            ci_hi: stat.clone(),
            statistic: stat,
            verdict: Verdict::PassTrend,
            details: "window empty for every n: the condition holds vacuously".into(),
            params: params_json,
            seed: None,
        });
    }
    let finite: Vec<f64> = stat.iter().copied().filter(|v| v.is_finite()).collect();
    let trend = classify_trend(&finite, 1e-12);
    let last = finite.last().copied().unwrap_or(f64::NAN);
    let verdict = match trend {
        Trend::Insufficient => Verdict::Inconclusive,
        Trend::Decreasing | Trend::Flat if last < 1e-2 => Verdict::PassTrend,
        _ => Verdict::FailTrend,
    };
    Ok(ConditionReport {
        condition_id: id,
        grid_kind: "n".into(),
        grid: n_grid.to_vec(),
        ci_lo: stat.clone(),
        ci_hi: stat.clone(),
        statistic: stat.clone(),
        verdict,
        details: format!(
            "trend {trend:?}; final {last:.3e} against 1e-2; {} n-values with c_n >= b_n skipped",
            stat.len() - finite.len()
        ),
        params: params_json,
        seed: None,
    })
}

/// `sup_{x in window} P(m1 |Z| > g(x)) / (n P(|m0| |Z| > x))` per `n`, in
/// closed form on the log scale.
pub fn check_single_jump_ratio(
    noise: &TailModel,
    g: &GFunction,
    stats: &CoefStats,
    n_grid: &[f64],
    params: WindowParams,
) -> Result<ConditionReport> {
    let (lm0, lm1) = (stats.m0.abs().ln(), stats.m1.ln());
    window_check(
        ConditionId::LinearJump,
        WindowVariant::SingleJump,
        noise,
        stats,
        n_grid,
        params,
        |u, ln_n| {
            if stats.m1 == 0.0 {
                return f64::NEG_INFINITY;
            }
            noise.log_abs_tail(g.log_eval(u) - lm1) - ln_n - noise.log_abs_tail(u - lm0)
        },
        &g.label,
    )
}

/// `sup_{x in window} [P(m0'|Z| > x) / (n P(|m0||Z| > x)) + P(m0'|Z| > g(x))^2 / P(|m0||Z| > x)]`.
pub fn check_pair_ratio(
    noise: &TailModel,
    g: &GFunction,
    stats: &CoefStats,
    n_grid: &[f64],
    params: WindowParams,
) -> Result<ConditionReport> {
    let (lm0, lmp) = (stats.m0.abs().ln(), stats.m0_prime.ln());
    window_check(
        ConditionId::LinearPair,
        WindowVariant::PairJump,
        noise,
        stats,
        n_grid,
        params,
        |u, ln_n| {
            let base = noise.log_abs_tail(u - lm0);
            let first = noise.log_abs_tail(u - lmp) - ln_n - base;
            let second = 2.0 * noise.log_abs_tail(g.log_eval(u) - lmp) - base;
            log_sum_exp([first, second])
        },
        &g.label,
    )
}

/// Crude Monte Carlo `P(S_n > x)` against `n P(|Z| > x / |m0|)` on thresholds
/// inside a nonempty window; the sup distance is to `p_plus` (`m0 > 0`) or
/// `p_minus` (`m0 < 0`).
pub fn prop42_ratio(
    process: &ProcessModel,
    n: usize,
    window: &LambdaWindow,
    xs: &[f64],
    reps: u64,
    seed: u64,
    exec: &Executor,
) -> Result<(RatioCurve, SupReport)> {
    let (noise, stats) = linear_parts(process)?;
    if stats.m0 == 0.0 {
        return Err(Error::domain("m0 = 0: the linear ratio has no big-jump limit"));
    }
    if !window.nonempty || !window.finite_n_nonempty {
        return Err(Error::domain(format!(
            "window is empty (c_n = {:.4e}, ln b_n = {:.4}, regime nonempty: {})",
            window.c_n, window.log_b_n, window.nonempty
        )));
    }
    if let Some(x) = xs.iter().find(|&&x| !window.contains(x)) {
        return Err(Error::domain(format!("threshold {x} lies outside the window")));
    }
    let grid = ThresholdGrid::new(xs.to_vec(), None, n, 1.0)?;
    let mut curve = ldmc::estimate_naive(process, n, &grid, reps, seed, exec)?;
    let m0 = stats.m0.abs();
    curve.retarget(Target::Linear, xs.iter().map(|&x| n as f64 * noise.abs_tail(x / m0)).collect())?;
    let (pp, pm) = noise.balance();
    let limit = if stats.m0 > 0.0 { pp } else { pm };
    let mut sup = SupReport { sup: f64::NEG_INFINITY, index: 0, ci_half_width: f64::NAN };
    for (i, r) in curve.ratio.iter().enumerate() {
        let d = (r - limit).abs();
        if d > sup.sup {
            sup = SupReport { sup: d, index: i, ci_half_width: 0.5 * (curve.ci_hi[i] - curve.ci_lo[i]) };
        }
    }
    Ok((curve, sup))
}
