//! One-dimensional heavy-tailed laws: tails, hazard functions, quantiles,
//! samplers and the auxiliary (mean-excess) function.
//!
//! Tails are stored per side: `right(x) = P(X > x)` and `left(x) = P(X < -x)`
//! for `x >= 0`. Every law also evaluates `ln P(X > e^u)` directly so that
//! asymptotic checks can run far beyond the underflow point of `right`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::numeric::{self, log_norm_sf, norm_isf, norm_sf, solve_bracketed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum ClassTag {
    RegVarying { alpha: f64 },
    LogNormalType,
    LogWeibull { alpha: f64 },
    WeibullType { alpha: f64 },
    TwoSided { base: Box<ClassTag>, p_plus: f64, p_minus: f64 },
}

impl ClassTag {
    /// The tag with any two-sided wrapper removed.
    pub fn base(&self) -> &ClassTag {
        match self {
            ClassTag::TwoSided { base, .. } => base.base(),
            other => other,
        }
    }

    /// Index of regular variation, if the class has one.
    pub fn regvar_index(&self) -> Option<f64> {
        match self.base() {
            ClassTag::RegVarying { alpha } => Some(*alpha),
            _ => None,
        }
    }

    /// Subexponential classes with slowly varying hazard (lognormal-like).
    pub fn is_ln_class(&self) -> bool {
        matches!(self.base(), ClassTag::LogNormalType | ClassTag::LogWeibull { .. })
    }
}

#[derive(Debug, Clone)]
enum Law {
    Pareto { alpha: f64, scale: f64 },
    LogNormal { mu: f64, sigma: f64 },
    LogWeibull { alpha: f64 },
    WeibullType { alpha: f64 },
    /// `exp(sign(Y)|Y|^alpha)` with `Y` standard normal.
    GaussTransform { alpha: f64 },
    /// `min_i a_i Y_i` with `Y_i` iid copies of a positive base law.
    MinScaled { weights: Vec<f64>, base: Arc<TailModel> },
    /// `s * Y` where `s` is drawn from a finite law.
    ScaleMixture { atoms: Vec<(f64, f64)>, base: Arc<TailModel> },
    /// `sigma * Z` with `ln sigma ~ N(mu, s^2)`.
    LogNormalScale { mu: f64, sigma: f64, base: Arc<TailModel> },
    /// `B |V|` with `P(B = 1) = p_plus`.
    TwoSided { base: Arc<TailModel>, p_plus: f64, p_minus: f64 },
    /// `sum_j psi_j Z_j`; tails use the unit-coefficient approximation.
    Linear { psi: Vec<f64>, noise: Arc<TailModel>, c_plus: f64, c_minus: f64 },
}

/// A heavy-tailed law on the real line.
#[derive(Debug, Clone)]
pub struct TailModel {
    law: Law,
    class: ClassTag,
    mean: f64,
    second_moment: Option<f64>,
}

/// Nodes for the Gauss-Hermite style lognormal scale average.
const SCALE_NODES: usize = 96;

impl TailModel {
    fn build(law: Law, class: ClassTag) -> Result<Self> {
        let mut model = TailModel { law, class, mean: f64::NAN, second_moment: None };
        model.mean = model.raw_moment(1)?.unwrap_or(f64::INFINITY);
        model.second_moment = model.raw_moment(2)?;
        Ok(model)
    }

    pub fn class_tag(&self) -> &ClassTag {
        &self.class
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `E[X^2]`, `None` when infinite.
    pub fn second_moment(&self) -> Option<f64> {
        self.second_moment
    }

    /// Variance, `None` when infinite.
    pub fn variance(&self) -> Option<f64> {
        self.second_moment.map(|m2| (m2 - self.mean * self.mean).max(0.0))
    }

    /// `(p_plus, p_minus)` tail-balance weights.
    pub fn balance(&self) -> (f64, f64) {
        match &self.law {
            Law::TwoSided { p_plus, p_minus, .. } => (*p_plus, *p_minus),
            Law::ScaleMixture { base, .. } | Law::LogNormalScale { base, .. } => base.balance(),
            Law::Linear { c_plus, c_minus, .. } => {
                let t = c_plus + c_minus;
                (c_plus / t, c_minus / t)
            }
            _ => (1.0, 0.0),
        }
    }

    /// Left end of the support.
    pub fn support_lower(&self) -> f64 {
        match &self.law {
            Law::Pareto { scale, .. } => *scale,
            Law::LogWeibull { .. } => 1.0,
            Law::LogNormal { .. } | Law::WeibullType { .. } | Law::GaussTransform { .. } => 0.0,
            Law::MinScaled { weights, base } => {
                weights.iter().map(|a| a * base.support_lower()).fold(f64::INFINITY, f64::min)
            }
            Law::ScaleMixture { atoms, base } => {
                let lo = base.support_lower();
                if lo < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    atoms.iter().map(|(s, _)| s * lo).fold(f64::INFINITY, f64::min)
                }
            }
            Law::LogNormalScale { base, .. } => {
                if base.support_lower() < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    0.0
                }
            }
            Law::TwoSided { p_minus, base, .. } => {
                if *p_minus > 0.0 {
                    f64::NEG_INFINITY
                } else {
                    base.support_lower()
                }
            }
            Law::Linear { .. } => f64::NEG_INFINITY,
        }
    }

    /// Whether `tail` is the exact law of the sampler (false for the
    /// linear-process approximation).
    pub fn tail_is_exact(&self) -> bool {
        match &self.law {
            Law::Linear { psi, .. } => psi.len() == 1,
            Law::MinScaled { base, .. }
            | Law::ScaleMixture { base, .. }
            | Law::LogNormalScale { base, .. }
            | Law::TwoSided { base, .. } => base.tail_is_exact(),
            _ => true,
        }
    }

    /// `P(X > x)` for `x >= 0`.
    pub fn right(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        match &self.law {
            Law::Pareto { alpha, scale } => {
                if x <= *scale {
                    1.0
                } else {
                    (x / scale).powf(-alpha)
                }
            }
            Law::LogNormal { mu, sigma } => {
                if x <= 0.0 {
                    1.0
                } else {
                    norm_sf((x.ln() - mu) / sigma)
                }
            }
            Law::LogWeibull { alpha } => {
                if x <= 1.0 {
                    1.0
                } else {
                    (-x.ln().powf(*alpha)).exp()
                }
            }
            Law::WeibullType { alpha } => (-x.powf(*alpha)).exp(),
            Law::GaussTransform { alpha } => {
                if x <= 0.0 {
                    1.0
                } else {
                    let l = x.ln();
                    norm_sf(l.signum() * l.abs().powf(1.0 / alpha))
                }
            }
            Law::MinScaled { weights, base } => weights.iter().map(|a| base.right(x / a)).product(),
            Law::ScaleMixture { atoms, base } => atoms.iter().map(|(s, w)| w * base.right(x / s)).sum(),
            Law::LogNormalScale { mu, sigma, base } => {
                lognormal_scale_average(*mu, *sigma, |s| base.right(x / s))
            }
            Law::TwoSided { base, p_plus, .. } => p_plus * base.right(x),
            Law::Linear { noise, c_plus, .. } => (c_plus * noise.abs_tail(x)).min(1.0),
        }
    }

    /// `P(X < -x)` for `x >= 0`.
    pub fn left(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        match &self.law {
            Law::ScaleMixture { atoms, base } => atoms.iter().map(|(s, w)| w * base.left(x / s)).sum(),
            Law::LogNormalScale { mu, sigma, base } => {
                lognormal_scale_average(*mu, *sigma, |s| base.left(x / s))
            }
            Law::TwoSided { base, p_minus, .. } => p_minus * base.right(x),
            Law::Linear { noise, c_minus, .. } => (c_minus * noise.abs_tail(x)).min(1.0),
            _ => 0.0,
        }
    }

    /// `F̄(x) = P(X > x)`; equals 1 below the support.
    pub fn tail(&self, x: f64) -> f64 {
        if x >= 0.0 {
            self.right(x)
        } else {
            1.0 - self.left(-x)
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x >= 0.0 {
            1.0 - self.right(x)
        } else {
            self.left(-x)
        }
    }

    /// `P(|X| > x)` for `x >= 0`.
    pub fn abs_tail(&self, x: f64) -> f64 {
        self.right(x) + self.left(x)
    }

    /// `ln P(X > e^u)`.
    pub fn log_right(&self, u: f64) -> f64 {
        match &self.law {
            Law::Pareto { alpha, scale } => -(alpha * (u - scale.ln())).max(0.0),
            Law::LogNormal { mu, sigma } => log_norm_sf((u - mu) / sigma),
            Law::LogWeibull { alpha } => {
                if u <= 0.0 {
                    0.0
                } else {
                    -u.powf(*alpha)
                }
            }
            Law::WeibullType { alpha } => -(alpha * u).exp(),
            Law::GaussTransform { alpha } => log_norm_sf(u.signum() * u.abs().powf(1.0 / alpha)),
            Law::MinScaled { weights, base } => weights.iter().map(|a| base.log_right(u - a.ln())).sum(),
            Law::ScaleMixture { atoms, base } => numeric::log_sum_exp(
                atoms.iter().map(|(s, w)| w.ln() + base.log_right(u - s.ln())),
            ),
            Law::TwoSided { base, p_plus, .. } => p_plus.ln() + base.log_right(u),
            Law::Linear { noise, c_plus, .. } => (c_plus.ln() + noise.log_abs_tail(u)).min(0.0),
            Law::LogNormalScale { .. } => self.right(u.exp()).ln(),
        }
    }

    /// `ln P(X < -e^u)`.
    pub fn log_left(&self, u: f64) -> f64 {
        match &self.law {
            Law::ScaleMixture { atoms, base } => numeric::log_sum_exp(
                atoms.iter().map(|(s, w)| w.ln() + base.log_left(u - s.ln())),
            ),
            Law::TwoSided { base, p_minus, .. } => p_minus.ln() + base.log_right(u),
            Law::Linear { noise, c_minus, .. } => (c_minus.ln() + noise.log_abs_tail(u)).min(0.0),
            Law::LogNormalScale { .. } => self.left(u.exp()).ln(),
            _ => f64::NEG_INFINITY,
        }
    }

    /// `ln P(|X| > e^u)`.
    pub fn log_abs_tail(&self, u: f64) -> f64 {
        numeric::log_sum_exp([self.log_right(u), self.log_left(u)])
    }

    /// Hazard integral `S(x) = -ln F̄(x)`.
    pub fn hazard(&self, x: f64) -> f64 {
        if x > 0.0 {
            -self.log_right(x.ln())
        } else if x == 0.0 {
            -self.right(0.0).ln()
        } else {
            -(-self.left(-x)).ln_1p()
        }
    }

    /// `S(e^u)`, the hazard on the log scale.
    pub fn hazard_log(&self, u: f64) -> f64 {
        -self.log_right(u)
    }

    /// Inverse survival function: the smallest `x` with `F̄(x) <= p`.
    pub fn isf(&self, p: f64) -> Result<f64> {
        if !(p > 0.0) {
            return Err(Error::domain(format!("isf requires p in (0, 1], got {p}")));
        }
        if p >= 1.0 {
            return Ok(self.support_lower());
        }
        match &self.law {
            Law::Pareto { alpha, scale } => Ok(scale * p.powf(-1.0 / alpha)),
            Law::LogNormal { mu, sigma } => Ok((mu + sigma * norm_isf(p)).exp()),
            Law::LogWeibull { alpha } => Ok((-p.ln()).powf(1.0 / alpha).exp()),
            Law::WeibullType { alpha } => Ok((-p.ln()).powf(1.0 / alpha)),
            Law::GaussTransform { alpha } => {
                let z = norm_isf(p);
                Ok((z.signum() * z.abs().powf(*alpha)).exp())
            }
            Law::TwoSided { base, p_plus, p_minus } => {
                if p < *p_plus {
                    base.isf(p / p_plus)
                } else {
                    Ok(-base.isf(((1.0 - p) / p_minus).min(1.0))?)
                }
            }
            _ => self.isf_generic(p),
        }
    }

    /// Quantile `inf{x : F(x) >= u}`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&u) {
            return Err(Error::domain(format!("quantile requires u in [0, 1), got {u}")));
        }
        if u == 0.0 {
            return Ok(self.support_lower());
        }
        self.isf(1.0 - u)
    }

    /// Inverse survival function given `ln p`; valid far below `f64::MIN_POSITIVE`.
    /// Returns `ln x`.
    pub fn log_isf_log(&self, log_p: f64) -> Result<f64> {
        if log_p > -30.0 {
            let x = self.isf(log_p.exp())?;
            if x > 0.0 {
                return Ok(x.ln());
            }
        }
        let f = |u: f64| self.log_right(u) - log_p;
        let (lo, hi) = bracket_decreasing(&f, 0.0)?;
        solve_bracketed(f, lo, hi, 1e-14)
    }

    fn isf_generic(&self, p: f64) -> Result<f64> {
        let p0 = self.right(0.0);
        if p < p0 {
            let target = p.ln();
            let f = |u: f64| self.log_right(u) - target;
            let start = if self.support_lower() > 0.0 { self.support_lower().ln() } else { 0.0 };
            let (lo, hi) = bracket_decreasing(&f, start)?;
            Ok(solve_bracketed(f, lo, hi, 1e-13)?.exp())
        } else if self.left(0.0) == 0.0 {
            Ok(self.support_lower())
        } else if p == p0 {
            Ok(0.0)
        } else {
            // F̄(x) = 1 - P(X < x) = p for x < 0.
            let target = (1.0 - p).ln();
            let f = |v: f64| self.log_left(v) - target;
            let (lo, hi) = bracket_decreasing(&f, 0.0)?;
            Ok(-solve_bracketed(f, lo, hi, 1e-13)?.exp())
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.law {
            Law::Pareto { alpha, scale } => {
                let e: f64 = Exp1.sample(rng);
                scale * (e / alpha).exp()
            }
            Law::LogNormal { mu, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                (mu + sigma * z).exp()
            }
            Law::LogWeibull { alpha } => {
                let e: f64 = Exp1.sample(rng);
                if *alpha == 2.0 {
                    e.sqrt().exp()
                } else {
                    e.powf(1.0 / alpha).exp()
                }
            }
            Law::WeibullType { alpha } => {
                let e: f64 = Exp1.sample(rng);
                e.powf(1.0 / alpha)
            }
            Law::GaussTransform { alpha } => {
                let z: f64 = StandardNormal.sample(rng);
                gauss_transform(z, *alpha)
            }
            Law::MinScaled { weights, base } => {
                weights.iter().map(|a| a * base.sample(rng)).fold(f64::INFINITY, f64::min)
            }
            Law::ScaleMixture { atoms, base } => {
                let s = pick_atom(atoms, rng.random::<f64>());
                s * base.sample(rng)
            }
            Law::LogNormalScale { mu, sigma, base } => {
                let z: f64 = StandardNormal.sample(rng);
                (mu + sigma * z).exp() * base.sample(rng)
            }
            Law::TwoSided { base, p_plus, .. } => {
                let v = base.sample(rng);
                if rng.random::<f64>() < *p_plus {
                    v
                } else {
                    -v
                }
            }
            Law::Linear { psi, noise, .. } => psi.iter().map(|c| c * noise.sample(rng)).sum(),
        }
    }

    /// `E[X^k]` for `k` in {1, 2}; `None` when infinite.
    fn raw_moment(&self, k: i32) -> Result<Option<f64>> {
        let kf = k as f64;
        Ok(match &self.law {
            Law::Pareto { alpha, scale } => {
                (*alpha > kf).then(|| alpha * scale.powi(k) / (alpha - kf))
            }
            Law::LogNormal { mu, sigma } => Some((kf * mu + 0.5 * kf * kf * sigma * sigma).exp()),
            Law::WeibullType { alpha } => Some(gamma(1.0 + kf / alpha)),
            Law::LogWeibull { .. } | Law::GaussTransform { .. } | Law::MinScaled { .. } => {
                Some(self.positive_moment_quad(kf)?)
            }
            Law::ScaleMixture { atoms, base } => base
                .raw_moment(k)?
                .map(|m| atoms.iter().map(|(s, w)| w * s.powi(k)).sum::<f64>() * m),
            Law::LogNormalScale { mu, sigma, base } => base
                .raw_moment(k)?
                .map(|m| (kf * mu + 0.5 * kf * kf * sigma * sigma).exp() * m),
            Law::TwoSided { base, p_plus, p_minus } => base.raw_moment(k)?.map(|m| {
                if k % 2 == 1 {
                    (p_plus - p_minus) * m
                } else {
                    m
                }
            }),
            Law::Linear { psi, noise, .. } => match (noise.raw_moment(1)?, noise.raw_moment(2)?) {
                (Some(m1), _) if k == 1 => Some(psi.iter().sum::<f64>() * m1),
                (Some(m1), Some(m2)) => {
                    let s1: f64 = psi.iter().sum();
                    let s2: f64 = psi.iter().map(|c| c * c).sum();
                    Some(s2 * (m2 - m1 * m1) + (s1 * m1).powi(2))
                }
                _ => None,
            },
        })
    }

    /// `E[X^k]` for a positive law by integrating `k x^(k-1) F̄(x)` in log space.
    fn positive_moment_quad(&self, k: f64) -> Result<f64> {
        let log_integrand = |u: f64| k.ln() + k * u + self.log_right(u);
        let peak_search = upper_cutoff(&log_integrand, 0.0, 45.0)?;
        let lo = -40.0 / k;
        let kink = self.support_lower().ln();
        let mut total = (k * lo).exp();
        let mut a = lo;
        let mut breaks = [kink, 0.0, peak_search];
        breaks.sort_by(f64::total_cmp);
        for b in breaks {
            if b > a && b <= peak_search {
                total += numeric::integrate(|u| log_integrand(u).exp(), a, b, 1e-11)?.value;
                a = b;
            }
        }
        // The first term bounds the mass below e^lo.
        Ok(total)
    }

    /// `E[X^k 1{|X| <= c}]` for integer `k >= 1`, by quadrature of the tails.
    pub fn truncated_moment(&self, k: i32, c: f64) -> Result<f64> {
        if !(c > 0.0) {
            return Err(Error::domain("truncation level must be positive"));
        }
        let kf = k as f64;
        let mut breaks = vec![0.0, c];
        let lower = self.abs_base().support_lower();
        if lower > 0.0 && lower < c {
            breaks.insert(1, lower);
        }
        let piece = |tail: &dyn Fn(f64) -> f64| -> Result<f64> {
            let tc = tail(c);
            let mut total = 0.0;
            for w in breaks.windows(2) {
                let r = numeric::integrate(
                    |x| kf * x.powi(k - 1) * (tail(x) - tc),
                    w[0],
                    w[1],
                    1e-10,
                )?;
                total += r.value;
            }
            Ok(total)
        };
        let pos = piece(&|x| self.right(x))?;
        let neg = if self.left(0.0) > 0.0 { piece(&|x| self.left(x))? } else { 0.0 };
        Ok(pos + if k % 2 == 1 { -neg } else { neg })
    }

    /// Mean-excess function `a(x) = ∫_x^∞ F̄(y) dy / F̄(x)` by quadrature.
    ///
    /// The integral is cut where the conditional tail falls to `1e-14` and the
    /// remainder past the cut is added from the local power-law slope.
    pub fn mean_excess(&self, x: f64) -> Result<f64> {
        self.mean_excess_with_error(x).map(|(v, _)| v)
    }

    /// Mean-excess value together with its error bound.
    pub fn mean_excess_with_error(&self, x: f64) -> Result<(f64, f64)> {
        if !(x > 0.0) || x < self.support_lower() {
            return Err(Error::domain(format!("mean excess needs x above the support, got {x}")));
        }
        let u0 = x.ln();
        let l0 = self.log_right(u0);
        if !l0.is_finite() {
            return Err(Error::numeric(format!("tail vanishes at x = {x}")));
        }
        let cut = 1e-14f64.ln();
        let f = |u: f64| self.log_right(u) - l0 - cut;
        let (lo, hi) = bracket_decreasing(&f, u0)?;
        let u_max = solve_bracketed(f, lo, hi, 1e-12)?;
        let r = numeric::integrate(|u| (u + self.log_right(u) - l0).exp(), u0, u_max, 1e-9)?;
        // Local index at the cut.
        let h = 1e-4 * u_max.abs().max(1.0);
        let alpha_loc = (self.log_right(u_max - h) - self.log_right(u_max + h)) / (2.0 * h);
        if !(alpha_loc > 1.0) {
            return Err(Error::numeric(format!(
                "mean excess diverges at x = {x} (local index {alpha_loc:.3})"
            )));
        }
        let remainder = (u_max + cut).exp() / (alpha_loc - 1.0);
        Ok((r.value + remainder, r.error + remainder))
    }

    /// Law of `X^2` where it has a closed form.
    pub fn square(&self) -> Result<TailModel> {
        match &self.law {
            Law::Pareto { alpha, scale } => make_pareto(alpha / 2.0, scale * scale),
            Law::LogNormal { mu, sigma } => make_lognormal(2.0 * mu, 2.0 * sigma),
            Law::GaussTransform { alpha } if *alpha == 1.0 => make_lognormal(0.0, 2.0),
            Law::TwoSided { base, .. } => base.square(),
            _ => Err(Error::Unsupported(format!("no closed form for the square of {self}"))),
        }
    }

    /// The positive base law of a two-sided model (the model itself otherwise).
    pub fn abs_base(&self) -> &TailModel {
        match &self.law {
            Law::TwoSided { base, .. } => base.abs_base(),
            _ => self,
        }
    }
}

impl fmt::Display for TailModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.law {
            Law::Pareto { alpha, scale } => write!(f, "pareto(alpha={alpha}, scale={scale})"),
            Law::LogNormal { mu, sigma } => write!(f, "lognormal(mu={mu}, sigma={sigma})"),
            Law::LogWeibull { alpha } => write!(f, "logweibull(alpha={alpha})"),
            Law::WeibullType { alpha } => write!(f, "weibull_type(alpha={alpha})"),
            Law::GaussTransform { alpha } => write!(f, "gauss_transform(alpha={alpha})"),
            Law::MinScaled { weights, base } => write!(f, "min({weights:?} x {base})"),
            Law::ScaleMixture { atoms, base } => write!(f, "scale_mixture({atoms:?} x {base})"),
            Law::LogNormalScale { mu, sigma, base } => {
                write!(f, "lognormal_scale(mu={mu}, sigma={sigma}) x {base}")
            }
            Law::TwoSided { base, p_plus, p_minus } => {
                write!(f, "two_sided({base}, p+={p_plus}, p-={p_minus})")
            }
            Law::Linear { psi, noise, .. } => write!(f, "linear({psi:?}, {noise})"),
        }
    }
}

pub(crate) fn gauss_transform(z: f64, alpha: f64) -> f64 {
    if alpha == 1.0 {
        z.exp()
    } else {
        (z.signum() * z.abs().powf(alpha)).exp()
    }
}

fn pick_atom(atoms: &[(f64, f64)], u: f64) -> f64 {
    let mut acc = 0.0;
    for &(s, w) in atoms {
        acc += w;
        if u < acc {
            return s;
        }
    }
    atoms[atoms.len() - 1].0
}

/// `E[h(exp(mu + sigma N))]` on a fixed midpoint grid over `N in [-8.5, 8.5]`.
fn lognormal_scale_average(mu: f64, sigma: f64, h: impl Fn(f64) -> f64) -> f64 {
    let half = 8.5;
    let step = 2.0 * half / SCALE_NODES as f64;
    let mut acc = 0.0;
    let mut weight = 0.0;
    for i in 0..SCALE_NODES {
        let z = -half + (i as f64 + 0.5) * step;
        let w = numeric::norm_pdf(z);
        acc += w * h((mu + sigma * z).exp());
        weight += w;
    }
    acc / weight
}

/// Bracket the root of a decreasing function, starting the search at `start`.
fn bracket_decreasing(f: &impl Fn(f64) -> f64, start: f64) -> Result<(f64, f64)> {
    let mut lo = start;
    let mut step = 1.0;
    while f(lo) < 0.0 {
        lo -= step;
        step *= 2.0;
        if step > 1e6 {
            return Err(Error::numeric("could not bracket from below"));
        }
    }
    let mut hi = lo + 1.0;
    step = 1.0;
    while f(hi) > 0.0 {
        lo = hi;
        hi += step;
        step *= 2.0;
        if step > 1e8 {
            return Err(Error::numeric("could not bracket from above"));
        }
    }
    Ok((lo, hi))
}

/// Point past which a unimodal log-integrand stays `drop` below its peak.
fn upper_cutoff(log_f: &impl Fn(f64) -> f64, start: f64, drop: f64) -> Result<f64> {
    let mut u = start;
    let mut peak = log_f(u);
    let mut step = 0.5;
    for _ in 0..4000 {
        let next = log_f(u + step);
        if !next.is_finite() && next > 0.0 {
            return Err(Error::numeric("moment integrand overflows"));
        }
        peak = peak.max(next);
        u += step;
        if next < peak - drop && log_f(u + step) < next {
            return Ok(u);
        }
        step *= 1.05;
    }
    Err(Error::numeric("moment integral does not converge"))
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be positive and finite, got {v}")))
    }
}

pub fn make_pareto(alpha: f64, scale: f64) -> Result<TailModel> {
    check_positive("alpha", alpha)?;
    check_positive("scale", scale)?;
    TailModel::build(Law::Pareto { alpha, scale }, ClassTag::RegVarying { alpha })
}

pub fn make_lognormal(mu: f64, sigma: f64) -> Result<TailModel> {
    if !mu.is_finite() {
        return Err(Error::domain(format!("mu must be finite, got {mu}")));
    }
    check_positive("sigma", sigma)?;
    TailModel::build(Law::LogNormal { mu, sigma }, ClassTag::LogNormalType)
}

pub fn make_logweibull(alpha: f64) -> Result<TailModel> {
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(Error::domain(format!("logweibull needs alpha > 1, got {alpha}")));
    }
    TailModel::build(Law::LogWeibull { alpha }, ClassTag::LogWeibull { alpha })
}

pub fn make_weibull_type(alpha: f64) -> Result<TailModel> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("weibull_type needs alpha in (0, 1), got {alpha}")));
    }
    TailModel::build(Law::WeibullType { alpha }, ClassTag::WeibullType { alpha })
}

/// Law of `exp(sign(Y)|Y|^alpha)` for standard normal `Y`.
pub fn make_gauss_transform(alpha: f64) -> Result<TailModel> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::domain(format!("gaussian transform needs alpha in (0, 2), got {alpha}")));
    }
    TailModel::build(Law::GaussTransform { alpha }, ClassTag::LogNormalType)
}

pub fn make_two_sided(base: &TailModel, p_plus: f64, p_minus: f64) -> Result<TailModel> {
    if !(p_plus > 0.0 && p_minus >= 0.0) || ((p_plus + p_minus) - 1.0).abs() > 1e-12 {
        return Err(Error::domain(format!(
            "tail weights need p+ > 0, p- >= 0, p+ + p- = 1; got {p_plus}, {p_minus}"
        )));
    }
    if base.support_lower() < 0.0 {
        return Err(Error::domain("two-sided base must be a positive law"));
    }
    let class = ClassTag::TwoSided { base: Box::new(base.class.clone()), p_plus, p_minus };
    TailModel::build(Law::TwoSided { base: Arc::new(base.clone()), p_plus, p_minus }, class)
}

/// Law of `min_i a_i Y_i` for iid `Y_i ~ base`.
pub fn make_min_scaled(weights: &[f64], base: &TailModel) -> Result<TailModel> {
    if weights.is_empty() {
        return Err(Error::domain("min construction needs at least one weight"));
    }
    for &a in weights {
        check_positive("weight", a)?;
    }
    if base.support_lower() < 0.0 {
        return Err(Error::domain("min construction needs a positive noise law"));
    }
    TailModel::build(
        Law::MinScaled { weights: weights.to_vec(), base: Arc::new(base.clone()) },
        base.class.clone(),
    )
}

/// Law of `s Y` where `s` takes value `atoms[i].0` with probability `atoms[i].1`.
pub fn make_scale_mixture(atoms: &[(f64, f64)], base: &TailModel) -> Result<TailModel> {
    if atoms.is_empty() {
        return Err(Error::domain("scale law needs at least one atom"));
    }
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    for &(s, w) in atoms {
        check_positive("scale atom", s)?;
        if !(w > 0.0) {
            return Err(Error::domain(format!("atom probabilities must be positive, got {w}")));
        }
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::domain(format!("atom probabilities sum to {total}")));
    }
    TailModel::build(
        Law::ScaleMixture { atoms: atoms.to_vec(), base: Arc::new(base.clone()) },
        base.class.clone(),
    )
}

/// Law of `sigma Z` with lognormal `sigma` independent of `Z`.
pub fn make_lognormal_scale(mu: f64, sigma: f64, base: &TailModel) -> Result<TailModel> {
    check_positive("sigma", sigma)?;
    TailModel::build(
        Law::LogNormalScale { mu, sigma, base: Arc::new(base.clone()) },
        base.class.clone(),
    )
}

/// Marginal of `sum_j psi_j Z_j` with tails `c± P(|Z| > x)`,
/// `c+ = k+ p+ + k- p-` and `c- = k+ p- + k- p+`.
pub fn make_linear_marginal(psi: &[f64], noise: &TailModel) -> Result<TailModel> {
    if psi.is_empty() || psi.iter().any(|c| !c.is_finite()) {
        return Err(Error::domain("coefficients must be finite and nonempty"));
    }
    let (pp, pm) = noise.balance();
    let kp = psi.iter().filter(|&&c| c == 1.0).count() as f64;
    let km = psi.iter().filter(|&&c| c == -1.0).count() as f64;
    let c_plus = kp * pp + km * pm;
    let c_minus = kp * pm + km * pp;
    TailModel::build(
        Law::Linear { psi: psi.to_vec(), noise: Arc::new(noise.clone()), c_plus, c_minus },
        noise.class.clone(),
    )
}

/// Declarative description of a law, as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    #[serde(default)]
    pub params: std::collections::BTreeMap<String, f64>,
    #[serde(default)]
    pub two_sided: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_plus: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Pareto,
    Lognormal,
    Logweibull,
    WeibullType,
    GaussTransform,
}

impl Family {
    /// Parameter names with their defaults (`None` = required).
    fn params(&self) -> &'static [(&'static str, Option<f64>)] {
        match self {
            Family::Pareto => &[("alpha", None), ("scale", Some(1.0))],
            Family::Lognormal => &[("mu", Some(0.0)), ("sigma", Some(1.0))],
            Family::Logweibull | Family::WeibullType | Family::GaussTransform => &[("alpha", None)],
        }
    }
}

impl ModelSpec {
    pub fn new(family: Family, params: &[(&str, f64)]) -> Self {
        ModelSpec {
            family,
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            two_sided: false,
            p_plus: None,
        }
    }

    /// Symmetric or weighted two-sided version.
    pub fn two_sided(mut self, p_plus: f64) -> Self {
        self.two_sided = true;
        self.p_plus = Some(p_plus);
        self
    }

    /// Every problem with the record, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let known = self.family.params();
        let mut out: Vec<String> = self
            .params
            .keys()
            .filter(|k| !known.iter().any(|(n, _)| n == k))
            .map(|k| format!("unknown parameter '{k}' for {:?}", self.family))
            .collect();
        for (name, default) in known {
            if default.is_none() && !self.params.contains_key(*name) {
                out.push(format!("missing parameter '{name}' for {:?}", self.family));
            }
        }
        if let Some(p) = self.p_plus {
            if !self.two_sided {
                out.push("p_plus given for a one-sided model".into());
            } else if !(p > 0.0 && p <= 1.0) {
                out.push(format!("p_plus must lie in (0, 1], got {p}"));
            }
        }
        if out.is_empty() {
            if let Err(e) = self.build() {
                out.push(e.to_string());
            }
        }
        out
    }

    pub fn build(&self) -> Result<TailModel> {
        let get = |name: &str| -> Result<f64> {
            let default = self.family.params().iter().find(|(n, _)| *n == name).and_then(|(_, d)| *d);
            self.params
                .get(name)
                .copied()
                .or(default)
                .ok_or_else(|| Error::domain(format!("missing parameter '{name}'")))
        };
        let base = match self.family {
            Family::Pareto => make_pareto(get("alpha")?, get("scale")?)?,
            Family::Lognormal => make_lognormal(get("mu")?, get("sigma")?)?,
            Family::Logweibull => make_logweibull(get("alpha")?)?,
            Family::WeibullType => make_weibull_type(get("alpha")?)?,
            Family::GaussTransform => make_gauss_transform(get("alpha")?)?,
        };
        if self.two_sided {
            let p = self.p_plus.unwrap_or(0.5);
            make_two_sided(&base, p, 1.0 - p)
        } else {
            Ok(base)
        }
    }
}

/// `F̄(x - c g(x)) / F̄(x)`.
pub fn insensitivity_ratio(model: &TailModel, g: impl Fn(f64) -> f64, c: f64, x: f64) -> Result<f64> {
    if c == 0.0 {
        return Ok(1.0);
    }
    let y = x - c * g(x);
    if y < model.support_lower() || !(y > 0.0) || !(x > 0.0) {
        return Err(Error::domain(format!("x - c g(x) = {y} is below the support")));
    }
    Ok((model.hazard(x) - model.hazard(y)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    ClosedForm,
    NumericIntegral,
}

/// Auxiliary function `a(x)` of the Gumbel tail relation.
#[derive(Clone)]
pub struct AuxiliaryFunction {
    f: Arc<dyn Fn(f64) -> Result<f64> + Send + Sync>,
    pub provenance: Provenance,
}

impl fmt::Debug for AuxiliaryFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuxiliaryFunction").field("provenance", &self.provenance).finish()
    }
}

impl AuxiliaryFunction {
    pub fn closed_form(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        AuxiliaryFunction { f: Arc::new(move |x| Ok(f(x))), provenance: Provenance::ClosedForm }
    }

    /// The mean-excess function of `model`, evaluated by quadrature.
    pub fn mean_excess(model: &TailModel) -> Self {
        let m = model.clone();
        AuxiliaryFunction {
            f: Arc::new(move |x| m.mean_excess(x)),
            provenance: Provenance::NumericIntegral,
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let v = (self.f)(x)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(Error::numeric(format!("auxiliary function not positive at {x}: {v}")))
        }
    }
}

/// `F̄(x) exp(∫_z^x dt / a(t))`.
pub fn von_mises_reconstruct(model: &TailModel, a: &AuxiliaryFunction, z: f64, x: f64) -> Result<f64> {
    if !(z > 0.0) || z < model.support_lower() || x < z {
        return Err(Error::domain(format!("need support <= z <= x, got z={z}, x={x}")));
    }
    if x == z {
        return Ok(model.tail(z));
    }
    // Substitute t = e^v so the integrand varies slowly on wide ranges.
    let failure = std::cell::Cell::new(None);
    let r = numeric::integrate(
        |v| {
            let t = v.exp();
            match a.eval(t) {
                Ok(av) => t / av,
                Err(e) => {
                    failure.set(Some(e));
                    0.0
                }
            }
        },
        z.ln(),
        x.ln(),
        1e-8,
    )?;
    if let Some(e) = failure.take() {
        return Err(e);
    }
    Ok((model.log_right(x.ln()) + r.value).exp())
}
