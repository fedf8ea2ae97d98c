//! Monte Carlo estimation of `P(S_n > x)` on threshold grids, ratio curves
//! against `n F̄(x)` or the normal approximation, and classical exponential
//! bounds for bounded summands.

use serde::{Deserialize, Serialize};

use crate::conditions::SeparatingBoundary;
use crate::dist::TailModel;
use crate::error::{Error, Result};
use crate::exec::{domain, Executor};
use crate::numeric::norm_sf;
use crate::procsim::{ProcessModel, Scratch};
use crate::stats::{wilson, Moments, Z99};

/// Expected exceedances required at the top of a naive grid.
pub const MIN_EXPECTED_HITS: f64 = 50.0;

/// Strictly increasing thresholds, optionally tied to a boundary `t_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub xs: Vec<f64>,
    pub boundary: Option<SeparatingBoundary>,
    pub n: usize,
    pub delta: f64,
    /// `t_n` of the boundary, NaN without one.
    pub t_n: f64,
}

pub fn geometric(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) || count < 2 {
        return Err(Error::domain(format!("geometric grid needs 0 < lo < hi and 2+ points, got [{lo}, {hi}] x {count}")));
    }
    let r = (hi / lo).ln();
    Ok((0..count)
        .map(|i| if i + 1 == count { hi } else { lo * (r * i as f64 / (count - 1) as f64).exp() })
        .collect())
}

impl ThresholdGrid {
    pub fn new(xs: Vec<f64>, boundary: Option<SeparatingBoundary>, n: usize, delta: f64) -> Result<Self> {
        if xs.is_empty() || xs.iter().any(|x| !x.is_finite()) || xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("threshold grid must be finite, nonempty and strictly increasing"));
        }
        if n == 0 {
            return Err(Error::domain("n must be at least 1"));
        }
        let t_n = match &boundary {
            Some(b) => {
                if !(delta > 0.0) {
                    return Err(Error::domain("delta must be positive"));
                }
                let t = b.t(n as f64);
                if xs[0] < delta * t * (1.0 - 1e-12) {
                    return Err(Error::domain(format!(
                        "grid starts at {} below delta*t_n = {}",
                        xs[0],
                        delta * t
                    )));
                }
                t
            }
            None => f64::NAN,
        };
        Ok(ThresholdGrid { xs, boundary, n, delta, t_n })
    }

    /// 16 geometric points from `delta t_n` to the threshold where
    /// `n F̄(x) = 10 / reps`.
    pub fn default_for(
        marginal: &TailModel,
        boundary: &SeparatingBoundary,
        n: usize,
        delta: f64,
        reps: u64,
    ) -> Result<Self> {
        let lo = delta * boundary.t(n as f64);
        let hi = marginal.isf(10.0 / (reps as f64 * n as f64))?;
        if !(hi > lo) {
            return Err(Error::Infeasible {
                message: format!("delta*t_n = {lo:.4e} is beyond the reachable threshold {hi:.4e}"),
                required_reps: (10.0 / (n as f64 * marginal.tail(lo))).ceil(),
            });
        }
        Self::new(geometric(lo, hi, 16)?, Some(boundary.clone()), n, delta)
    }
}

impl ThresholdGrid {
    /// `points` geometric thresholds from `delta t_n` to `factor delta t_n`.
    pub fn span(boundary: &SeparatingBoundary, n: usize, delta: f64, factor: f64, points: usize) -> Result<Self> {
        let lo = delta * boundary.t(n as f64);
        Self::new(geometric(lo, factor * lo, points)?, Some(boundary.clone()), n, delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Naive,
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// `n F̄(x)`.
    SubexpNbar,
    /// `Φ̄(x / σ_n)`.
    Normal,
    /// Linear-process tail approximation.
    Linear,
}

/// Estimated probabilities over a grid and their ratio to a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioCurve {
    pub xs: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub target: Vec<f64>,
    pub ratio: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub reps: u64,
    pub estimator: Estimator,
    pub target_kind: Target,
    /// Effective sample size per point (conditional estimator).
    pub ess: Option<Vec<f64>>,
    /// Relative standard error per point.
    pub rel_se: Vec<f64>,
}

impl RatioCurve {
    pub fn to_csv(&self) -> String {
        let est = match self.estimator {
            Estimator::Naive => "naive",
            Estimator::Conditional => "conditional",
        };
        let mut out = String::from("x,p_hat,target,ratio,ci_lo,ci_hi,reps,estimator\n");
        for i in 0..self.xs.len() {
            out.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e},{:e},{},{}\n",
                self.xs[i], self.p_hat[i], self.target[i], self.ratio[i], self.ci_lo[i], self.ci_hi[i], self.reps, est
            ));
        }
        out
    }

    /// Replaces the target (e.g. with a linear-process approximation) and
    /// rescales ratios and intervals.
    pub fn retarget(&mut self, kind: Target, target: Vec<f64>) -> Result<()> {
        if target.len() != self.xs.len() {
            return Err(Error::domain("target length must match the grid"));
        }
        for i in 0..target.len() {
            let s = self.target[i] / target[i];
            self.ratio[i] *= s;
            self.ci_lo[i] *= s;
            self.ci_hi[i] *= s;
        }
        self.target = target;
        self.target_kind = kind;
        Ok(())
    }
}

/// Number of sums exceeding each threshold, from one simulation pass.
fn exceedance_counts(
    process: &ProcessModel,
    n: usize,
    xs: &[f64],
    reps: u64,
    seed: u64,
    label: &str,
    exec: &Executor,
) -> Vec<u64> {
    let k = xs.len();
    let shift = n as f64 * process.mean();
    let parts = exec.run_batches(seed, domain(label), reps, |rng, _, len| {
        let mut hist = vec![0u64; k + 1];
        let mut path = vec![0.0; n];
        let mut scratch = Scratch::default();
        for _ in 0..len {
            process.fill_path(rng, &mut path, &mut scratch);
            let s = path.iter().sum::<f64>() - shift;
            hist[xs.partition_point(|&t| t < s)] += 1;
        }
        hist
    });
    let hist = parts.into_iter().fold(vec![0u64; k + 1], |mut acc, h| {
        acc.iter_mut().zip(h).for_each(|(a, b)| *a += b);
        acc
    });
    let mut counts = vec![0u64; k];
    let mut acc = 0;
    for i in (0..k).rev() {
        acc += hist[i + 1];
        counts[i] = acc;
    }
    counts
}

fn naive_curve(xs: &[f64], counts: &[u64], target: Vec<f64>, reps: u64, kind: Target) -> RatioCurve {
    let mut c = RatioCurve {
        xs: xs.to_vec(),
        p_hat: Vec::new(),
        ratio: Vec::new(),
        ci_lo: Vec::new(),
        ci_hi: Vec::new(),
        rel_se: Vec::new(),
        target,
        reps,
        estimator: Estimator::Naive,
        target_kind: kind,
        ess: None,
    };
    for (i, &k) in counts.iter().enumerate() {
        let p = k as f64 / reps as f64;
        let (lo, hi) = wilson(k, reps, Z99);
        let t = c.target[i];
        c.p_hat.push(p);
        c.ratio.push(p / t);
        c.ci_lo.push(lo / t);
        c.ci_hi.push(hi / t);
        c.rel_se.push(if k == 0 { f64::INFINITY } else { ((1.0 - p) / k as f64).sqrt() });
    }
    c
}

/// Crude Monte Carlo of the centered sum with Wilson 99% intervals, as a
/// ratio to `n F̄(x)`. Refuses grids whose top point would see fewer than
/// [`MIN_EXPECTED_HITS`] expected exceedances.
pub fn estimate_naive(
    process: &ProcessModel,
    n: usize,
    grid: &ThresholdGrid,
    reps: u64,
    seed: u64,
    exec: &Executor,
) -> Result<RatioCurve> {
    if n == 0 || reps == 0 {
        return Err(Error::domain("n and reps must be positive"));
    }
    let marginal = process.marginal();
    let x_max = *grid.xs.last().unwrap();
    let nbar_top = n as f64 * marginal.tail(x_max);
    if reps as f64 * nbar_top < MIN_EXPECTED_HITS {
        return Err(Error::Infeasible {
            message: format!(
                "{reps} replications give {:.3} expected exceedances at x = {x_max:.4e}",
                reps as f64 * nbar_top
            ),
            required_reps: (MIN_EXPECTED_HITS / nbar_top).ceil(),
        });
    }
    let counts = exceedance_counts(process, n, &grid.xs, reps, seed, "naive", exec);
    let target = grid.xs.iter().map(|&x| n as f64 * marginal.tail(x)).collect();
    Ok(naive_curve(&grid.xs, &counts, target, reps, Target::SubexpNbar))
}

/// Pairwise (tree) reduction of per-batch moments in index order.
fn merge_tree(parts: &[Moments]) -> Moments {
    match parts.len() {
        0 => Moments::default(),
        1 => parts[0],
        len => merge_tree(&parts[..len / 2]).merge(&merge_tree(&parts[len / 2..])),
    }
}

/// Conditional Monte Carlo for iid sums: conditioning on all summands but the
/// largest gives the unbiased replicate `n F̄(max(M_{n-1}, x - S_{n-1}))`.
/// Intervals are normal-theory 99% on the replicate mean.
pub fn estimate_reduced_iid(
    model: &TailModel,
    n: usize,
    grid: &ThresholdGrid,
    reps: u64,
    seed: u64,
    exec: &Executor,
) -> Result<RatioCurve> {
    if n == 0 || reps < 2 {
        return Err(Error::domain("n must be positive and reps at least 2"));
    }
    let k = grid.xs.len();
    let nf = n as f64;
    let ys: Vec<f64> = grid.xs.iter().map(|&x| x + nf * model.mean()).collect();
    let parts = exec.run_batches(seed, domain("conditional"), reps, |rng, _, len| {
        let mut acc = vec![Moments::default(); k];
        for _ in 0..len {
            let mut s = 0.0;
            let mut m = f64::NEG_INFINITY;
            for _ in 1..n {
                let v = model.sample(rng);
                s += v;
                m = m.max(v);
            }
            for (a, &y) in acc.iter_mut().zip(&ys) {
                a.push(nf * model.tail(m.max(y - s)));
            }
        }
        acc
    });
    let mut curve = RatioCurve {
        xs: grid.xs.clone(),
        p_hat: Vec::with_capacity(k),
        target: Vec::with_capacity(k),
        ratio: Vec::with_capacity(k),
        ci_lo: Vec::with_capacity(k),
        ci_hi: Vec::with_capacity(k),
        reps,
        estimator: Estimator::Conditional,
        target_kind: Target::SubexpNbar,
        ess: Some(Vec::with_capacity(k)),
        rel_se: Vec::with_capacity(k),
    };
    let ess = curve.ess.as_mut().unwrap();
    for i in 0..k {
        let column: Vec<Moments> = parts.iter().map(|p| p[i]).collect();
        let mo = merge_tree(&column);
        let p = mo.mean;
        let se = mo.std_error();
        let t = nf * model.tail(grid.xs[i]);
        let second = mo.variance() + p * p;
        curve.p_hat.push(p);
        curve.target.push(t);
        curve.ratio.push(p / t);
        curve.ci_lo.push(((p - Z99 * se) / t).max(0.0));
        curve.ci_hi.push((p + Z99 * se) / t);
        curve.rel_se.push(if p > 0.0 { se / p } else { f64::INFINITY });
        ess.push(if second > 0.0 { reps as f64 * p * p / second } else { 0.0 });
    }
    Ok(curve)
}

/// Crude Monte Carlo ratio to `Φ̄(x / σ_n)` with the exact variance of the sum.
pub fn normal_regime_ratio(
    process: &ProcessModel,
    n: usize,
    xs: &[f64],
    reps: u64,
    seed: u64,
    exec: &Executor,
) -> Result<(RatioCurve, f64)> {
    let grid = ThresholdGrid::new(xs.to_vec(), None, n, 1.0)?;
    let var = process.sum_variance(n, seed, exec)?;
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::Unsupported(format!("sum variance unavailable ({var})")));
    }
    let sigma = var.sqrt();
    let counts = exceedance_counts(process, n, &grid.xs, reps, seed, "normal", exec);
    let target = grid.xs.iter().map(|&x| norm_sf(x / sigma)).collect();
    Ok((naive_curve(&grid.xs, &counts, target, reps, Target::Normal), sigma))
}

/// `exp(-(x / 2c) asinh(c x / (2 B)))` for independent centred summands with
/// `|X_i| <= c` and variance sum `B`.
pub fn prokhorov_bound(x: f64, c: f64, var_sum: f64) -> Result<f64> {
    if !(x > 0.0 && c > 0.0 && var_sum > 0.0) {
        return Err(Error::domain("Prokhorov bound needs positive x, c and variance"));
    }
    Ok((-(x / (2.0 * c)) * (c * x / (2.0 * var_sum)).asinh()).exp())
}

/// Constants of the two-term moment bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FukNagaevConstants {
    pub c_p: f64,
    pub d_p: f64,
}

impl FukNagaevConstants {
    /// `c_p = (1 + 2/p)^p`, `d_p = 2 e^{-p} (p + 2)^{-2}`.
    pub fn default_for(p: f64) -> Self {
        FukNagaevConstants { c_p: (1.0 + 2.0 / p).powf(p), d_p: 2.0 * (-p).exp() / ((p + 2.0) * (p + 2.0)) }
    }
}

/// `c_p m_p x^{-p} + exp(-d_p x^2 / σ_n^2)` where `m_p` is the sum of
/// `p`-th absolute moments.
pub fn fuk_nagaev_bound(x: f64, p: f64, m_p: f64, var_sum: f64, k: FukNagaevConstants) -> Result<f64> {
    if !(x > 0.0 && p >= 2.0 && m_p >= 0.0 && var_sum > 0.0) {
        return Err(Error::domain("moment bound needs x > 0, p >= 2, m_p >= 0 and positive variance"));
    }
    Ok(k.c_p * m_p * x.powf(-p) + (-k.d_p * x * x / var_sum).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub xs: Vec<f64>,
    pub empirical: Vec<f64>,
    pub std_error: Vec<f64>,
    pub prokhorov: Vec<f64>,
    pub fuk_nagaev: Vec<f64>,
    pub n: usize,
    pub truncation: f64,
    pub p: f64,
    pub constants: FukNagaevConstants,
    pub reps: u64,
}

impl BoundsReport {
    /// Both bounds at least the estimate minus three standard errors everywhere.
    pub fn dominated(&self) -> bool {
        (0..self.xs.len()).all(|i| {
            let floor = self.empirical[i] - 3.0 * self.std_error[i];
            self.prokhorov[i] >= floor && self.fuk_nagaev[i] >= floor
        })
    }
}

/// Evaluates both bounds for sums of `n` iid copies of `X 1{|X| <= c}` and
/// compares them with simulation. The truncated law must be centred; `p` must
/// be an even integer so the absolute moment is a plain truncated moment.
#[allow(clippy::too_many_arguments)]
pub fn bounds_check(
    model: &TailModel,
    n: usize,
    c: f64,
    p: u32,
    constants: FukNagaevConstants,
    xs: &[f64],
    reps: u64,
    seed: u64,
    exec: &Executor,
) -> Result<BoundsReport> {
    if p < 2 || p % 2 != 0 {
        return Err(Error::domain(format!("p must be an even integer >= 2, got {p}")));
    }
    if !(c > 0.0) || n == 0 || reps == 0 {
        return Err(Error::domain("truncation level, n and reps must be positive"));
    }
    let m1 = model.truncated_moment(1, c)?;
    let m2 = model.truncated_moment(2, c)?;
    if m1.abs() > 1e-10 * m2.sqrt().max(1.0) {
        return Err(Error::Unsupported(format!("truncated summands must be centred, mean is {m1:e}")));
    }
    let mp = model.truncated_moment(p as i32, c)?;
    let var_sum = n as f64 * m2;
    let m_p = n as f64 * mp;
    let k = xs.len();
    let parts = exec.run_batches(seed, domain("bounds"), reps, |rng, _, len| {
        let mut hist = vec![0u64; k + 1];
        for _ in 0..len {
            let mut s = 0.0;
            for _ in 0..n {
                let v = model.sample(rng);
                if v.abs() <= c {
                    s += v;
                }
            }
            hist[xs.partition_point(|&t| t < s)] += 1;
        }
        hist
    });
    let hist = parts.into_iter().fold(vec![0u64; k + 1], |mut acc, h| {
        acc.iter_mut().zip(h).for_each(|(a, b)| *a += b);
        acc
    });
    let mut empirical = vec![0.0; k];
    let mut std_error = vec![0.0; k];
    let mut acc = 0u64;
    for i in (0..k).rev() {
        acc += hist[i + 1];
        let q = acc as f64 / reps as f64;
        empirical[i] = q;
        std_error[i] = (q * (1.0 - q) / reps as f64).sqrt();
    }
    let prokhorov = xs.iter().map(|&x| prokhorov_bound(x, c, var_sum)).collect::<Result<Vec<_>>>()?;
    let fuk_nagaev = xs
        .iter()
        .map(|&x| fuk_nagaev_bound(x, p as f64, m_p, var_sum, constants))
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundsReport {
        xs: xs.to_vec(),
        empirical,
        std_error,
        prokhorov,
        fuk_nagaev,
        n,
        truncation: c,
        p: p as f64,
        constants,
        reps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupReport {
    /// `max |ratio - 1|`.
    pub sup: f64,
    pub index: usize,
    /// Half-width of the interval at the maximising point.
    pub ci_half_width: f64,
}

pub fn uniform_sup_report(curve: &RatioCurve) -> SupReport {
    let mut best = SupReport { sup: f64::NEG_INFINITY, index: 0, ci_half_width: f64::NAN };
    for (i, r) in curve.ratio.iter().enumerate() {
        let d = (r - 1.0).abs();
        if d > best.sup || d.is_nan() {
            best = SupReport { sup: d, index: i, ci_half_width: 0.5 * (curve.ci_hi[i] - curve.ci_lo[i]) };
            if d.is_nan() {
                break;
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditions::{boundary_catalogue, BoundaryRegime};
    use crate::dist::{make_lognormal, make_pareto, make_two_sided};
    use crate::numeric::integrate;
    use crate::procsim::{make_iid, make_stoch_vol};

    #[test]
    fn grid_validation() {
        let b = boundary_catalogue(BoundaryRegime::LognormalLn).unwrap();
        assert!(ThresholdGrid::new(vec![1.0, 1.0], None, 5, 1.0).is_err());
        assert!(ThresholdGrid::new(vec![1.0, 2.0], Some(b.clone()), 100, 1.0).is_err());
        let t = b.t(100.0);
        let g = ThresholdGrid::new(vec![t, 2.0 * t], Some(b), 100, 1.0).unwrap();
        assert_eq!(g.t_n, t);
        let xs = geometric(1.0, 100.0, 3).unwrap();
        assert!((xs[1] - 10.0).abs() < 1e-12 && xs[2] == 100.0);
    }

    #[test]
    fn default_grid_top_matches_reps() {
        let p = make_pareto(3.0, 1.0).unwrap();
        let b = boundary_catalogue(BoundaryRegime::NagaevRv { alpha: 3.0, sigma: 1.0 }).unwrap();
        let g = ThresholdGrid::default_for(&p, &b, 50, 1.0, 1_000_000).unwrap();
        assert_eq!(g.xs.len(), 16);
        let top = *g.xs.last().unwrap();
        assert!((50.0 * p.tail(top) * 1e6 - 10.0).abs() < 1e-6);
    }

    fn two_fold_pareto_tail(x: f64) -> f64 {
        // P(X1 + X2 > x) for Pareto(3) on [1, inf)
        let f = |y: f64| 3.0 * y.powi(-4);
        let sf = |z: f64| if z < 1.0 { 1.0 } else { z.powi(-3) };
        sf(x - 1.0) + integrate(|y| f(y) * sf(x - y), 1.0, x - 1.0, 1e-12).unwrap().value
    }

    #[test]
    fn conditional_estimator_matches_convolution() {
        let p = make_pareto(3.0, 1.0).unwrap();
        let xs = vec![10.0, 30.0, 100.0];
        let grid = ThresholdGrid::new(xs.clone(), None, 2, 1.0).unwrap();
        // uncentred: shift the grid back by the mean
        let mean = p.mean();
        let shifted = ThresholdGrid::new(xs.iter().map(|x| x - 2.0 * mean).collect(), None, 2, 1.0).unwrap();
        let c = estimate_reduced_iid(&p, 2, &shifted, 2_000_000, 9, &Executor::sequential()).unwrap();
        for (i, &x) in grid.xs.iter().enumerate() {
            let oracle = two_fold_pareto_tail(x);
            let err = (c.p_hat[i] - oracle).abs() / oracle;
            assert!(err < 4.0 * c.rel_se[i] + 1e-12, "x={x}: {} vs {oracle}", c.p_hat[i]);
            if x >= 30.0 {
                assert!(err < 1e-3, "x={x}: rel err {err}");
            }
        }
    }

    #[test]
    fn naive_and_conditional_agree() {
        let l = make_lognormal(0.0, 1.0).unwrap();
        let grid = ThresholdGrid::new(vec![15.0, 25.0, 40.0], None, 5, 1.0).unwrap();
        let ex = Executor::sequential();
        let a = estimate_naive(&make_iid(&l), 5, &grid, 500_000, 4, &ex).unwrap();
        let b = estimate_reduced_iid(&l, 5, &grid, 200_000, 4, &ex).unwrap();
        for i in 0..3 {
            assert!(a.ci_lo[i] <= b.ci_hi[i] && b.ci_lo[i] <= a.ci_hi[i], "{i}: {:?} {:?}", a.ratio, b.ratio);
        }
    }

    #[test]
    fn naive_refuses_unreachable_grid() {
        let p = make_pareto(3.0, 1.0).unwrap();
        let grid = ThresholdGrid::new(vec![100.0, 1e4], None, 10, 1.0).unwrap();
        match estimate_naive(&make_iid(&p), 10, &grid, 1000, 1, &Executor::sequential()) {
            Err(Error::Infeasible { required_reps, .. }) => assert!((required_reps - 5e12).abs() < 1.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_layout() {
        let p = make_pareto(3.0, 1.0).unwrap();
        let grid = ThresholdGrid::new(vec![5.0, 10.0], None, 2, 1.0).unwrap();
        let c = estimate_naive(&make_iid(&p), 2, &grid, 100_000, 1, &Executor::sequential()).unwrap();
        let csv = c.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x,p_hat,target,ratio,ci_lo,ci_hi,reps,estimator");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].ends_with(",100000,naive"));
    }

    #[test]
    fn normal_regime_matches_gaussian_tail() {
        let p = make_two_sided(&make_pareto(4.5, 1.0).unwrap(), 0.5, 0.5).unwrap();
        let n = 200;
        let sigma = (n as f64 * p.variance().unwrap()).sqrt();
        let (c, s) = normal_regime_ratio(&make_iid(&p), n, &[sigma], 200_000, 5, &Executor::sequential()).unwrap();
        assert!((s - sigma).abs() < 1e-9 * sigma);
        assert!((c.ratio[0] - 1.0).abs() < 0.1, "{:?}", c.ratio);
    }

    #[test]
    fn sum_variance_includes_dependence() {
        let p = make_two_sided(&make_pareto(4.5, 1.0).unwrap(), 0.5, 0.5).unwrap();
        let sv = make_stoch_vol(&[(0.5, 0.5), (2.0, 0.5)], 2, &p).unwrap();
        let (c, _) = normal_regime_ratio(&sv, 100, &[10.0, 20.0], 100_000, 6, &Executor::sequential()).unwrap();
        assert!(c.ratio.iter().all(|r| r.is_finite()));
    }

    #[test]
    fn bound_formulas() {
        assert!((prokhorov_bound(2.0, 1.0, 1.0).unwrap() - (-(1.0f64).asinh()).exp()).abs() < 1e-15);
        let k = FukNagaevConstants::default_for(4.0);
        assert!((k.c_p - 1.5f64.powi(4)).abs() < 1e-12);
        assert!((k.d_p - 2.0 * (-4.0f64).exp() / 36.0).abs() < 1e-15);
        let v = fuk_nagaev_bound(10.0, 4.0, 3.0, 5.0, k).unwrap();
        assert!((v - (k.c_p * 3.0 * 1e-4 + (-k.d_p * 20.0).exp())).abs() < 1e-15);
    }

    #[test]
    fn bounds_dominate_simulation() {
        let p = make_two_sided(&make_pareto(4.5, 1.0).unwrap(), 0.5, 0.5).unwrap();
        let n = 100;
        let c = (n as f64).sqrt();
        let xs: Vec<f64> = (1..=8).map(|i| 5.0 * i as f64).collect();
        let r = bounds_check(&p, n, c, 4, FukNagaevConstants::default_for(4.0), &xs, 50_000, 2, &Executor::sequential())
            .unwrap();
        assert!(r.dominated(), "{r:?}");
    }

    #[test]
    fn sup_report_picks_worst_point() {
        let c = RatioCurve {
            xs: vec![1.0, 2.0, 3.0],
            p_hat: vec![0.0; 3],
            target: vec![1.0; 3],
            ratio: vec![1.1, 0.7, 1.2],
            ci_lo: vec![1.0, 0.6, 1.1],
            ci_hi: vec![1.2, 0.8, 1.3],
            reps: 1,
            estimator: Estimator::Naive,
            target_kind: Target::SubexpNbar,
            ess: None,
            rel_se: vec![0.0; 3],
        };
        let s = uniform_sup_report(&c);
        assert_eq!(s.index, 1);
        assert!((s.sup - 0.3).abs() < 1e-12 && (s.ci_half_width - 0.1).abs() < 1e-12);
    }
}
