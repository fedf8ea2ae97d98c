//! Maxima of the entries of large sample covariance matrices.
//!
//! The data matrix has `p` iid rows, each a stationary path `(X_i1, ..., X_in)`
//! of a row process, and `S_ij = sum_t X_it X_jt`. Diagonal entries are
//! centred at `n E[X^2]`, off-diagonal ones at `n (E X)^2`, using the exact
//! moments of the marginal law.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dist::{ClassTag, TailModel};
use crate::error::{Error, Result};
use crate::exec::{domain, stream_rng, Executor};
use crate::numeric::{frechet_cdf, gumbel_cdf};
use crate::procsim::{ProcessModel, Scratch};
use crate::stats::ks_one_sample;

/// Above this dimension off-diagonal maxima are taken over a random subset of rows.
pub const FULL_PAIRS_MAX_P: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxLaw {
    Frechet,
    Gumbel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovMaxConstants {
    pub c_np: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_np: Option<f64>,
}

impl CovMaxConstants {
    fn normalize(&self, v: f64) -> f64 {
        (v - self.d_np.unwrap_or(0.0)) / self.c_np
    }
}

/// One replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovMaxSample {
    pub diag_max_normalized: f64,
    /// `None` when `p = 1`.
    pub offdiag_max_normalized: Option<f64>,
    pub p: usize,
    pub n: usize,
    pub constants: CovMaxConstants,
    /// Fraction of the `p(p-1)/2` off-diagonal pairs inspected.
    pub coverage: f64,
}

/// Work limits for [`simulate_covmax_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovMaxLimits {
    /// Row subset size for off-diagonal maxima when `p` exceeds it.
    pub full_pairs_max_p: usize,
    /// Upper bound on `reps * (p n + pairs n)` elementary operations.
    pub max_work: f64,
}

impl Default for CovMaxLimits {
    fn default() -> Self {
        CovMaxLimits { full_pairs_max_p: FULL_PAIRS_MAX_P, max_work: 2e11 }
    }
}

/// Gumbel normalization `(c_n, d_n)` for `X^2` with `X = e^N`.
pub fn gumbel_constants(n: f64) -> Result<(f64, f64)> {
    if !(n >= 3.0) || !n.is_finite() {
        return Err(Error::domain(format!("gumbel constants need n >= 3, got {n}")));
    }
    let l = n.ln();
    let r = (2.0 * l).sqrt();
    let d = (2.0 * (r - ((4.0 * std::f64::consts::PI).ln() + l.ln()) / (2.0 * r))).exp();
    Ok((2.0 / r * d, d))
}

/// `c_n` with `n P(X^2 > c_n) = 1`, for `X^2` regularly varying with index > 2.
pub fn frechet_constants(x2_tail: &TailModel, n: f64) -> Result<f64> {
    match x2_tail.class_tag().regvar_index() {
        Some(a) if a > 2.0 => {}
        Some(a) => {
            return Err(Error::Class(format!(
                "X^2 has tail index {a}; the Frechet normalization needs index > 2"
            )))
        }
        None => return Err(Error::Class("X^2 is not regularly varying".into())),
    }
    if !(n >= 1.0) {
        return Err(Error::domain(format!("n must be at least 1, got {n}")));
    }
    x2_tail.isf(1.0 / n)
}

/// Normalizing constants for a `p x n` experiment with the given marginal.
pub fn covmax_constants(marginal: &TailModel, p: usize, n: usize, law: MaxLaw) -> Result<CovMaxConstants> {
    let np = (n as f64) * (p as f64);
    match law {
        MaxLaw::Frechet => {
            let x2 = marginal.square()?;
            Ok(CovMaxConstants { c_np: frechet_constants(&x2, np)?, d_np: None })
        }
        MaxLaw::Gumbel => {
            if !matches!(marginal.class_tag().base(), ClassTag::LogNormalType) {
                return Err(Error::Class(format!(
                    "Gumbel normalization is for lognormal marginals, got {marginal}"
                )));
            }
            let (c, d) = gumbel_constants(np)?;
            Ok(CovMaxConstants { c_np: c, d_np: Some(d) })
        }
    }
}

/// Raw (unnormalized) entry maxima of one data matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryMaxima {
    /// `max_i (S_ii - n E[X^2])`.
    pub diag: f64,
    /// `max_{i<j} |S_ij - n (E X)^2|`, `-inf` with fewer than two rows.
    pub off_abs: f64,
    /// `max_{i<j} (S_ij - n (E X)^2)`.
    pub off_signed: f64,
}

fn sum_squares(row: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in row {
        s += x * x;
    }
    s
}

/// Running maxima of centred off-diagonal entries over all pairs of `rows`.
/// Every dot product is summed in time order; four pairs are advanced together.
fn offdiag_maxima(rows: &[f64], n: usize, centre: f64) -> (f64, f64) {
    let p = if n == 0 { 0 } else { rows.len() / n };
    let mut off_abs = f64::NEG_INFINITY;
    let mut off_signed = f64::NEG_INFINITY;
    let mut record = |s: f64| {
        let v = s - centre;
        off_abs = off_abs.max(v.abs());
        off_signed = off_signed.max(v);
    };
    for i in 0..p {
        let ri = &rows[i * n..(i + 1) * n];
        let mut j = i + 1;
        while j + 4 <= p {
            let (r0, r1, r2, r3) = (
                &rows[j * n..(j + 1) * n],
                &rows[(j + 1) * n..(j + 2) * n],
                &rows[(j + 2) * n..(j + 3) * n],
                &rows[(j + 3) * n..(j + 4) * n],
            );
            let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
            for t in 0..n {
                let x = ri[t];
                s0 += x * r0[t];
                s1 += x * r1[t];
                s2 += x * r2[t];
                s3 += x * r3[t];
            }
            record(s0);
            record(s1);
            record(s2);
            record(s3);
            j += 4;
        }
        for j in j..p {
            let rj = &rows[j * n..(j + 1) * n];
            let mut s = 0.0;
            for t in 0..n {
                s += ri[t] * rj[t];
            }
            record(s);
        }
    }
    (off_abs, off_signed)
}

/// Entry maxima of a row-major `p x n` data matrix.
pub fn entry_maxima(rows: &[f64], n: usize, second_moment: f64, mean: f64) -> EntryMaxima {
    let nf = n as f64;
    let diag = rows
        .chunks(n.max(1))
        .map(|r| sum_squares(r) - nf * second_moment)
        .fold(f64::NEG_INFINITY, f64::max);
    let (off_abs, off_signed) = offdiag_maxima(rows, n, nf * mean * mean);
    EntryMaxima { diag, off_abs, off_signed }
}

/// Estimated operation count of an experiment.
pub fn covmax_work(p: usize, n: usize, reps: u64, full_pairs_max_p: usize) -> f64 {
    let q = p.min(full_pairs_max_p) as f64;
    reps as f64 * (p as f64 * n as f64 + 0.5 * q * (q - 1.0) * n as f64)
}

/// [`simulate_covmax_with`] under the default limits.
pub fn simulate_covmax(
    row_process: &ProcessModel,
    p: usize,
    n: usize,
    reps: u64,
    law: MaxLaw,
    seed: u64,
    exec: &Executor,
) -> Result<Vec<CovMaxSample>> {
    simulate_covmax_with(row_process, p, n, reps, law, seed, exec, &CovMaxLimits::default())
}

/// Normalized diagonal and off-diagonal maxima for `reps` independent data matrices.
///
/// Rows are streamed: row `i` of replication `r` has its own RNG stream, the
/// diagonal maximum is accumulated on the fly and only the rows entering the
/// off-diagonal maximum are kept. For `p` above `limits.full_pairs_max_p` those
/// are a uniformly drawn row subset, so every pair is inspected with the same
/// probability and `coverage` reports the fraction.
#[allow(clippy::too_many_arguments)]
pub fn simulate_covmax_with(
    row_process: &ProcessModel,
    p: usize,
    n: usize,
    reps: u64,
    law: MaxLaw,
    seed: u64,
    exec: &Executor,
    limits: &CovMaxLimits,
) -> Result<Vec<CovMaxSample>> {
    if p == 0 || n == 0 || reps == 0 {
        return Err(Error::domain(format!("p, n and reps must be positive (p={p}, n={n}, reps={reps})")));
    }
    if limits.full_pairs_max_p < 2 {
        return Err(Error::domain("full_pairs_max_p must be at least 2"));
    }
    let work = covmax_work(p, n, reps, limits.full_pairs_max_p);
    if work > limits.max_work {
        return Err(Error::Budget {
            message: format!("covariance maxima with p={p}, n={n}, reps={reps}"),
            estimated: work,
            limit: limits.max_work,
        });
    }
    let marginal = row_process.marginal();
    let m2 = marginal
        .second_moment()
        .ok_or_else(|| Error::Class(format!("{marginal} has infinite second moment")))?;
    let mean = marginal.mean();
    let constants = covmax_constants(marginal, p, n, law)?;
    let q = p.min(limits.full_pairs_max_p);
    let coverage = if p < 2 { 0.0 } else { (q * (q - 1)) as f64 / (p * (p - 1)) as f64 };
    let row_dom = domain("covmax/rows");
    let pick_dom = domain("covmax/pairs");
    let nf = n as f64;

    let out = exec.map(reps, |rep| {
        let kept: Vec<usize> = if q == p {
            (0..p).collect()
        } else {
            let mut v = index::sample(&mut stream_rng(seed, pick_dom, rep), p, q).into_vec();
            v.sort_unstable();
            v
        };
        let mut rows = vec![0.0; q * n];
        let mut scratch = Scratch::default();
        let mut path = vec![0.0; n];
        let mut next = 0;
        let mut diag = f64::NEG_INFINITY;
        for i in 0..p {
            let mut rng = stream_rng(seed, row_dom, rep * p as u64 + i as u64);
            row_process.fill_path(&mut rng, &mut path, &mut scratch);
            diag = diag.max(sum_squares(&path) - nf * m2);
            if next < q && kept[next] == i {
                rows[next * n..(next + 1) * n].copy_from_slice(&path);
                next += 1;
            }
        }
        let offdiag = (p >= 2).then(|| {
            let (abs, signed) = offdiag_maxima(&rows, n, nf * mean * mean);
            match law {
                MaxLaw::Frechet => constants.normalize(abs),
                MaxLaw::Gumbel => constants.normalize(signed),
            }
        });
        CovMaxSample {
            diag_max_normalized: constants.normalize(diag),
            offdiag_max_normalized: offdiag,
            p,
            n,
            constants,
            coverage,
        }
    });
    Ok(out)
}

/// Dimension growth rule for a sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum DimensionRule {
    /// `p = ceil(n^beta)` with `beta > alpha/4 - 1`.
    Frechet { alpha: f64, beta: f64 },
    /// `p = ceil(K exp(C (ln n)^2) / n)` with `C > 1/16`.
    Gumbel {
        #[serde(rename = "K")]
        k: f64,
        #[serde(rename = "C")]
        c: f64,
    },
}

pub fn dimension_rule(rule: &DimensionRule, n: f64) -> Result<f64> {
    if !(n >= 1.0) {
        return Err(Error::domain(format!("n must be at least 1, got {n}")));
    }
    match *rule {
        DimensionRule::Frechet { alpha, beta } => {
            if !(alpha > 4.0) {
                return Err(Error::domain(format!("Frechet regime needs alpha > 4, got {alpha}")));
            }
            if !(beta > alpha / 4.0 - 1.0) {
                return Err(Error::domain(format!(
                    "beta = {beta} must exceed alpha/4 - 1 = {}",
                    alpha / 4.0 - 1.0
                )));
            }
            Ok(n.powf(beta).ceil())
        }
        DimensionRule::Gumbel { k, c } => {
            if !(c > 1.0 / 16.0) {
                return Err(Error::domain(format!("C = {c} must exceed 1/16")));
            }
            if !(k > 0.0) {
                return Err(Error::domain(format!("K must be positive, got {k}")));
            }
            let l = n.ln();
            Ok((k * (c * l * l - l).exp()).ceil())
        }
    }
}

/// Limit law of a normalized maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum LimitLaw {
    Gumbel,
    Frechet { alpha: f64 },
}

impl LimitLaw {
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            LimitLaw::Gumbel => gumbel_cdf(x),
            LimitLaw::Frechet { alpha } => frechet_cdf(alpha, x),
        }
    }
}

/// Sup-norm distance between the empirical CDF of `samples` and `limit`.
pub fn ks_distance(samples: &[f64], limit: LimitLaw) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::domain("ks_distance needs at least one sample"));
    }
    Ok(ks_one_sample(samples, |x| limit.cdf(x)))
}
