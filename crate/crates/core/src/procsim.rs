//! Stationary m-dependent process constructions with exact windowed sampling.
//!
//! A path of length `n` is built from a noise window of length `n + m`, so
//! every path is an exact draw from the stationary law with no burn-in.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dist::{self, gauss_transform, ClassTag, ModelSpec, TailModel};
use crate::error::{Error, Result};
use crate::exec::{domain, Executor};
use crate::stats::Moments;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    Iid,
    GaussianTransform,
    MinConstruction,
    StochVol,
    LinearFinite,
    LinearTruncated,
    SvRegVar,
    /// `X_t = X_0` for all `t`; a fully dependent negative control.
    Comonotone,
}

/// Coefficient rule of a causal linear process `X_t = sum_j psi_j Z_{t-j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum CoefRule {
    Finite { psi: Vec<f64> },
    /// `psi_j = ratio^j`.
    Geometric { ratio: f64 },
    /// `psi_j = (1 + j)^(-exponent)`.
    PowerLaw { exponent: f64 },
}

/// Coefficients after truncation, with the bound on the discarded delta-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub psi: Vec<f64>,
    pub delta: f64,
    /// Bound on `sum_{j > order} |psi_j|^delta`; zero for finite rules.
    pub residual_bound: f64,
    pub truncated: bool,
}

impl CoefRule {
    /// A summability exponent in (0, 1) admissible for the rule.
    pub fn default_delta(&self) -> f64 {
        match self {
            CoefRule::Finite { .. } | CoefRule::Geometric { .. } => 0.5,
            CoefRule::PowerLaw { exponent } => 0.5 * (1.0 + 1.0 / exponent),
        }
    }

    /// `sum_{j > q} |psi_j|^delta`, bounded above; infinite if divergent.
    pub fn residual_bound(&self, q: usize, delta: f64) -> f64 {
        match self {
            CoefRule::Finite { psi } => psi.iter().skip(q + 1).map(|c| c.abs().powf(delta)).sum(),
            CoefRule::Geometric { ratio } => {
                let r = ratio.abs().powf(delta);
                if r >= 1.0 {
                    f64::INFINITY
                } else {
                    r.powi(q as i32 + 1) / (1.0 - r)
                }
            }
            CoefRule::PowerLaw { exponent } => {
                let e = exponent * delta;
                if e <= 1.0 {
                    f64::INFINITY
                } else {
                    // sum_{k >= q+2} k^-e <= ∫_{q+1}^∞ t^-e dt
                    (q as f64 + 1.0).powf(1.0 - e) / (e - 1.0)
                }
            }
        }
    }

    pub fn coefficient(&self, j: usize) -> f64 {
        match self {
            CoefRule::Finite { psi } => psi.get(j).copied().unwrap_or(0.0),
            CoefRule::Geometric { ratio } => ratio.powi(j as i32),
            CoefRule::PowerLaw { exponent } => (1.0 + j as f64).powf(-exponent),
        }
    }

    /// Truncates the rule where the residual delta-norm bound drops to `tol`.
    pub fn truncate(&self, tol: f64, delta: Option<f64>) -> Result<Coefficients> {
        let delta = delta.unwrap_or_else(|| self.default_delta());
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::domain(format!("delta must lie in (0, 1], got {delta}")));
        }
        match self {
            CoefRule::Finite { psi } => {
                if psi.is_empty() || psi.iter().any(|c| !c.is_finite()) {
                    return Err(Error::domain("finite coefficient list must be nonempty and finite"));
                }
                Ok(Coefficients { psi: psi.clone(), delta, residual_bound: 0.0, truncated: false })
            }
            CoefRule::Geometric { ratio } if !(ratio.abs() < 1.0) => {
                Err(Error::Class(format!("geometric ratio {ratio} is not summable")))
            }
            CoefRule::PowerLaw { exponent } if !(exponent * delta > 1.0) => Err(Error::Class(format!(
                "power-law exponent {exponent} is not delta-summable for delta = {delta}"
            ))),
            _ => {
                if !(tol > 0.0) {
                    return Err(Error::domain("truncation tolerance must be positive"));
                }
                let mut q = 0usize;
                while self.residual_bound(q, delta) > tol {
                    q += 1;
                    if q > 1_000_000 {
                        return Err(Error::numeric("truncation order exceeds 10^6"));
                    }
                }
                let psi = (0..=q).map(|j| self.coefficient(j)).collect();
                Ok(Coefficients { psi, delta, residual_bound: self.residual_bound(q, delta), truncated: true })
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Construction {
    Iid { model: TailModel },
    Gaussian { theta: Vec<f64>, alpha: f64 },
    Min { weights: Vec<f64>, noise: TailModel },
    StochVol { atoms: Vec<(f64, f64)>, noise: TailModel },
    Linear { psi: Vec<f64>, noise: TailModel },
    SvRegVar { mu: f64, sigma: f64, noise: TailModel },
    Comonotone { model: TailModel },
}

/// A stationary m-dependent sequence with known marginal law.
#[derive(Debug, Clone)]
pub struct ProcessModel {
    construction: Construction,
    kind: ProcessKind,
    m: usize,
    marginal: TailModel,
    coefficients: Option<Coefficients>,
}

/// Reusable noise buffer for path generation.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    noise: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Autocov {
    pub value: f64,
    /// Replications of the Monte Carlo pre-pass, zero when exact.
    pub mc_reps: u64,
}

/// Replications of the Monte Carlo autocovariance pre-pass.
pub const AUTOCOV_REPS: u64 = 1 << 20;

impl ProcessModel {
    pub fn kind(&self) -> ProcessKind {
        self.kind
    }

    /// Dependence range.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn marginal(&self) -> &TailModel {
        &self.marginal
    }

    pub fn mean(&self) -> f64 {
        self.marginal.mean()
    }

    pub fn coefficients(&self) -> Option<&Coefficients> {
        self.coefficients.as_ref()
    }

    /// Linear-process noise, if this is a linear process.
    pub fn linear_noise(&self) -> Option<&TailModel> {
        match &self.construction {
            Construction::Linear { noise, .. } => Some(noise),
            _ => None,
        }
    }

    pub fn is_iid(&self) -> bool {
        matches!(self.construction, Construction::Iid { .. } | Construction::SvRegVar { .. })
            || (self.kind == ProcessKind::LinearFinite && self.m == 0)
            || matches!(&self.construction, Construction::Gaussian { theta, .. } if theta.len() == 1)
    }

    /// Writes an exact stationary draw of `(X_1, ..., X_len)` into `out`.
    pub fn fill_path<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64], scratch: &mut Scratch) {
        let n = out.len();
        if n == 0 {
            return;
        }
        match &self.construction {
            Construction::Iid { model } => out.iter_mut().for_each(|x| *x = model.sample(rng)),
            Construction::Comonotone { model } => {
                let v = model.sample(rng);
                out.iter_mut().for_each(|x| *x = v);
            }
            Construction::SvRegVar { mu, sigma, noise } => out.iter_mut().for_each(|x| {
                let z: f64 = StandardNormal.sample(rng);
                *x = (mu + sigma * z).exp() * noise.sample(rng);
            }),
            Construction::Gaussian { theta, alpha } => {
                fill_noise(scratch, n + self.m, || StandardNormal.sample(rng));
                for (i, x) in out.iter_mut().enumerate() {
                    let y: f64 = theta.iter().zip(&scratch.noise[i..]).map(|(t, e)| t * e).sum();
                    *x = gauss_transform(y, *alpha);
                }
            }
            Construction::Min { weights, noise } => {
                fill_noise(scratch, n + self.m, || noise.sample(rng));
                for (i, x) in out.iter_mut().enumerate() {
                    *x = weights
                        .iter()
                        .zip(&scratch.noise[i..])
                        .map(|(a, y)| a * y)
                        .fold(f64::INFINITY, f64::min);
                }
            }
            Construction::StochVol { atoms, noise } => {
                let total = n + self.m;
                scratch.noise.clear();
                scratch.noise.extend((0..total).map(|_| pick(atoms, rng.random::<f64>())));
                for (i, x) in out.iter_mut().enumerate() {
                    let s = scratch.noise[i..=i + self.m].iter().copied().fold(0.0, f64::max);
                    *x = s * noise.sample(rng);
                }
            }
            Construction::Linear { psi, noise } => {
                let q = self.m;
                fill_noise(scratch, n + q, || noise.sample(rng));
                // X_i = sum_j psi_j Z_{i+q-j}
                for (i, x) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (j, c) in psi.iter().enumerate() {
                        acc += c * scratch.noise[i + q - j];
                    }
                    *x = acc;
                }
            }
        }
    }

    pub fn sample_path<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.fill_path(rng, &mut out, &mut Scratch::default());
        out
    }

    /// Exact draw of `(X_0, X_h)`.
    pub fn sample_pair<R: Rng + ?Sized>(&self, h: usize, rng: &mut R, scratch: &mut Scratch) -> (f64, f64) {
        let mut buf = [0.0f64; 64];
        if h < buf.len() {
            let path = &mut buf[..=h];
            self.fill_path(rng, path, scratch);
            (path[0], path[h])
        } else {
            let mut path = vec![0.0; h + 1];
            self.fill_path(rng, &mut path, scratch);
            (path[0], path[h])
        }
    }

    /// `Cov(X_0, X_h)`, exact where the construction allows, otherwise by a
    /// deterministic Monte Carlo pre-pass.
    pub fn autocov(&self, h: usize, seed: u64, exec: &Executor) -> Result<Autocov> {
        let var = self
            .marginal
            .variance()
            .ok_or_else(|| Error::Unsupported("marginal variance is infinite".into()))?;
        if h == 0 {
            return Ok(Autocov { value: var, mc_reps: 0 });
        }
        if h > self.m {
            return Ok(Autocov { value: 0.0, mc_reps: 0 });
        }
        match &self.construction {
            Construction::Iid { .. } | Construction::SvRegVar { .. } => Ok(Autocov { value: 0.0, mc_reps: 0 }),
            Construction::Comonotone { .. } => Ok(Autocov { value: var, mc_reps: 0 }),
            Construction::Linear { psi, noise } => {
                let vz = noise
                    .variance()
                    .ok_or_else(|| Error::Unsupported("noise variance is infinite".into()))?;
                let s: f64 = psi.iter().zip(&psi[h..]).map(|(a, b)| a * b).sum();
                Ok(Autocov { value: vz * s, mc_reps: 0 })
            }
            _ => {
                let mu = self.mean();
                let parts = exec.run_batches(seed, domain("autocov") ^ h as u64, AUTOCOV_REPS, |rng, _, len| {
                    let mut scratch = Scratch::default();
                    let mut m = Moments::default();
                    for _ in 0..len {
                        let (a, b) = self.sample_pair(h, rng, &mut scratch);
                        m.push((a - mu) * (b - mu));
                    }
                    m
                });
                let total = parts.iter().fold(Moments::default(), |acc, m| acc.merge(m));
                Ok(Autocov { value: total.mean, mc_reps: AUTOCOV_REPS })
            }
        }
    }

    /// `Var(X_1 + ... + X_n) = n gamma(0) + 2 sum_{h=1}^{min(m, n-1)} (n - h) gamma(h)`.
    pub fn sum_variance(&self, n: usize, seed: u64, exec: &Executor) -> Result<f64> {
        let mut v = n as f64 * self.autocov(0, seed, exec)?.value;
        for h in 1..=self.m.min(n.saturating_sub(1)) {
            v += 2.0 * (n - h) as f64 * self.autocov(h, seed, exec)?.value;
        }
        Ok(v)
    }
}

fn fill_noise(scratch: &mut Scratch, len: usize, mut draw: impl FnMut() -> f64) {
    scratch.noise.clear();
    scratch.noise.extend((0..len).map(|_| draw()));
}

fn pick(atoms: &[(f64, f64)], u: f64) -> f64 {
    let mut acc = 0.0;
    for &(s, w) in atoms {
        acc += w;
        if u < acc {
            return s;
        }
    }
    atoms[atoms.len() - 1].0
}

pub fn make_iid(model: &TailModel) -> ProcessModel {
    make_iid_with_range(model, 0)
}

/// Iid sequence reported with a nominal dependence range `m` (lags 1..m are
/// then checked by the lag-based estimators).
pub fn make_iid_with_range(model: &TailModel, m: usize) -> ProcessModel {
    ProcessModel {
        construction: Construction::Iid { model: model.clone() },
        kind: ProcessKind::Iid,
        m,
        marginal: model.clone(),
        coefficients: None,
    }
}

pub fn make_comonotone(model: &TailModel, m: usize) -> ProcessModel {
    ProcessModel {
        construction: Construction::Comonotone { model: model.clone() },
        kind: ProcessKind::Comonotone,
        m,
        marginal: model.clone(),
        coefficients: None,
    }
}

/// `X_i = exp(sign(Y_i)|Y_i|^alpha)` with `Y_i = sum_k theta_k N_{i+k}`.
/// `theta` is rescaled so that `Var(Y) = 1`.
pub fn make_gaussian_transform(theta: &[f64], alpha: f64) -> Result<ProcessModel> {
    if theta.is_empty() || theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::domain("theta must be nonempty and finite"));
    }
    let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::domain("theta must not vanish"));
    }
    let theta: Vec<f64> = theta.iter().map(|t| t / norm).collect();
    for h in 1..theta.len() {
        let rho: f64 = theta.iter().zip(&theta[h..]).map(|(a, b)| a * b).sum();
        if rho.abs() >= 1.0 - 1e-12 {
            return Err(Error::DegenerateDependence(format!("lag-{h} correlation {rho} is degenerate")));
        }
    }
    let marginal = dist::make_gauss_transform(alpha)?;
    Ok(ProcessModel {
        m: theta.len() - 1,
        construction: Construction::Gaussian { theta, alpha },
        kind: ProcessKind::GaussianTransform,
        marginal,
        coefficients: None,
    })
}

/// Lag correlations `rho(1..=m)` of the moving average with coefficients `theta`.
pub fn ma_correlations(theta: &[f64]) -> Vec<f64> {
    let c0: f64 = theta.iter().map(|t| t * t).sum();
    (1..theta.len())
        .map(|h| theta.iter().zip(&theta[h..]).map(|(a, b)| a * b).sum::<f64>() / c0)
        .collect()
}

/// Moving-average coefficients with unit variance and lag correlations `rho`,
/// by Wilson's Newton iteration for the spectral factor.
pub fn theta_from_rho(rho: &[f64]) -> Result<Vec<f64>> {
    let m = rho.len();
    let mut c = vec![1.0];
    c.extend_from_slice(rho);
    if rho.iter().any(|r| !r.is_finite() || r.abs() >= 1.0) {
        return Err(Error::DegenerateDependence("lag correlations must lie in (-1, 1)".into()));
    }
    // Spectral density 1 + 2 sum rho_h cos(h w) must be nonnegative.
    let grid = 4096;
    for k in 0..=grid {
        let w = std::f64::consts::PI * k as f64 / grid as f64;
        let f = 1.0 + 2.0 * rho.iter().enumerate().map(|(h, r)| r * ((h + 1) as f64 * w).cos()).sum::<f64>();
        if f < -1e-12 {
            return Err(Error::domain(format!(
                "correlations {rho:?} are not those of a moving average (spectral density {f:.3e} at {w:.4})"
            )));
        }
    }
    if m == 0 {
        return Ok(vec![1.0]);
    }
    let mut theta = vec![0.0; m + 1];
    theta[0] = 1.0;
    for _ in 0..200 {
        let mut f = DVector::zeros(m + 1);
        let mut jac = DMatrix::zeros(m + 1, m + 1);
        for h in 0..=m {
            let mut s = 0.0;
            for k in 0..=m - h {
                s += theta[k] * theta[k + h];
            }
            f[h] = s - c[h];
            for j in 0..=m {
                let mut d = 0.0;
                if j + h <= m {
                    d += theta[j + h];
                }
                if j >= h {
                    d += theta[j - h];
                }
                jac[(h, j)] = d;
            }
        }
        if f.amax() < 1e-14 {
            break;
        }
        let step = jac
            .lu()
            .solve(&f)
            .ok_or_else(|| Error::numeric("singular Jacobian in spectral factorization"))?;
        for j in 0..=m {
            theta[j] -= step[j];
        }
    }
    let got = ma_correlations(&theta);
    let err = got.iter().zip(rho).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if err > 1e-9 {
        return Err(Error::numeric(format!("spectral factorization did not converge (error {err:.2e})")));
    }
    Ok(theta)
}

/// `X_i = min(a_0 Y_i, ..., a_m Y_{i+m})` with iid positive noise `Y`.
pub fn make_min_construction(weights: &[f64], noise: &TailModel) -> Result<ProcessModel> {
    let marginal = dist::make_min_scaled(weights, noise)?;
    Ok(ProcessModel {
        construction: Construction::Min { weights: weights.to_vec(), noise: noise.clone() },
        kind: ProcessKind::MinConstruction,
        m: weights.len() - 1,
        marginal,
        coefficients: None,
    })
}

/// `X_i = sigma_i Y_i` with `sigma_i = max(eta_i, ..., eta_{i+window-1})` for
/// iid `eta` on the finite law `atoms`; `window = 1` gives iid volatility.
pub fn make_stoch_vol(atoms: &[(f64, f64)], window: usize, noise: &TailModel) -> Result<ProcessModel> {
    if window == 0 {
        return Err(Error::domain("volatility window must be at least 1"));
    }
    let mut sorted = atoms.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in sorted.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::domain("volatility atoms must be distinct"));
        }
    }
    // Law of the window maximum: P(max <= s) = F(s)^window.
    let mut cum = 0.0;
    let mut max_atoms = Vec::with_capacity(sorted.len());
    for &(s, w) in &sorted {
        let before = cum;
        cum += w;
        max_atoms.push((s, cum.powi(window as i32) - f64::powi(before, window as i32)));
    }
    max_atoms.retain(|a| a.1 > 0.0);
    // Renormalise round-off.
    let total: f64 = max_atoms.iter().map(|a| a.1).sum();
    max_atoms.iter_mut().for_each(|a| a.1 /= total);
    let marginal = dist::make_scale_mixture(&max_atoms, noise)?;
    dist::make_scale_mixture(&sorted, noise)?;
    Ok(ProcessModel {
        construction: Construction::StochVol { atoms: sorted, noise: noise.clone() },
        kind: ProcessKind::StochVol,
        m: window - 1,
        marginal,
        coefficients: None,
    })
}

/// Causal linear process `X_t = sum_j psi_j Z_{t-j}` with `max_j |psi_j| = 1`.
pub fn make_linear(rule: &CoefRule, noise: &TailModel, truncation_tol: f64) -> Result<ProcessModel> {
    let coefs = rule.truncate(truncation_tol, None)?;
    let max = coefs.psi.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    if (max - 1.0).abs() > 1e-12 {
        return Err(Error::domain(format!("coefficients must have max |psi_j| = 1, got {max}")));
    }
    let marginal = dist::make_linear_marginal(&coefs.psi, noise)?;
    let kind = if coefs.truncated { ProcessKind::LinearTruncated } else { ProcessKind::LinearFinite };
    Ok(ProcessModel {
        construction: Construction::Linear { psi: coefs.psi.clone(), noise: noise.clone() },
        kind,
        m: coefs.psi.len() - 1,
        marginal,
        coefficients: Some(coefs),
    })
}

/// `X_t = sigma_t Z_t` with iid lognormal `sigma_t` and regularly varying `Z`.
pub fn make_sv_regvar(mu: f64, sigma: f64, noise: &TailModel) -> Result<ProcessModel> {
    if noise.class_tag().regvar_index().is_none() {
        return Err(Error::Class("stochastic volatility noise must be regularly varying".into()));
    }
    let marginal = dist::make_lognormal_scale(mu, sigma, noise)?;
    Ok(ProcessModel {
        construction: Construction::SvRegVar { mu, sigma, noise: noise.clone() },
        kind: ProcessKind::SvRegVar,
        m: 0,
        marginal,
        coefficients: None,
    })
}

/// Breiman constant `E[sigma^alpha] = exp(alpha mu + alpha^2 s^2 / 2)` of an
/// [`make_sv_regvar`] process.
pub fn breiman_constant(process: &ProcessModel) -> Result<f64> {
    match &process.construction {
        Construction::SvRegVar { mu, sigma, noise } => {
            let alpha = match noise.class_tag().base() {
                ClassTag::RegVarying { alpha } => *alpha,
                _ => unreachable!(),
            };
            Ok((alpha * mu + 0.5 * alpha * alpha * sigma * sigma).exp())
        }
        _ => Err(Error::Unsupported("Breiman constant is defined for the lognormal volatility model".into())),
    }
}

/// Declarative description of a process, as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessSpec {
    Iid {
        marginal: ModelSpec,
        /// Nominal dependence range reported to lag-based checks.
        #[serde(default)]
        m: usize,
    },
    Comonotone { marginal: ModelSpec, m: usize },
    GaussianTransform { theta: Vec<f64>, alpha: f64 },
    MinConstruction { weights: Vec<f64>, noise: ModelSpec },
    /// `atoms` are `(scale, probability)` pairs.
    StochVol { atoms: Vec<(f64, f64)>, window: usize, noise: ModelSpec },
    Linear {
        coefficients: CoefRule,
        noise: ModelSpec,
        #[serde(default = "default_truncation")]
        truncation_tol: f64,
    },
    SvRegvar { mu: f64, sigma: f64, noise: ModelSpec },
}

fn default_truncation() -> f64 {
    1e-12
}

impl ProcessSpec {
    pub fn iid(marginal: ModelSpec) -> Self {
        ProcessSpec::Iid { marginal, m: 0 }
    }

    fn models(&self) -> Vec<(&'static str, &ModelSpec)> {
        match self {
            ProcessSpec::Iid { marginal, .. } | ProcessSpec::Comonotone { marginal, .. } => vec![("marginal", marginal)],
            ProcessSpec::GaussianTransform { .. } => vec![],
            ProcessSpec::MinConstruction { noise, .. }
            | ProcessSpec::StochVol { noise, .. }
            | ProcessSpec::Linear { noise, .. }
            | ProcessSpec::SvRegvar { noise, .. } => vec![("noise", noise)],
        }
    }

    /// Every problem with the record, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, spec) in self.models() {
            out.extend(spec.problems().into_iter().map(|p| format!("{name}: {p}")));
        }
        if out.is_empty() {
            if let Err(e) = self.build() {
                out.push(e.to_string());
            }
        }
        out
    }

    pub fn build(&self) -> Result<ProcessModel> {
        match self {
            ProcessSpec::Iid { marginal, m } => Ok(make_iid_with_range(&marginal.build()?, *m)),
            ProcessSpec::Comonotone { marginal, m } => Ok(make_comonotone(&marginal.build()?, *m)),
            ProcessSpec::GaussianTransform { theta, alpha } => make_gaussian_transform(theta, *alpha),
            ProcessSpec::MinConstruction { weights, noise } => make_min_construction(weights, &noise.build()?),
            ProcessSpec::StochVol { atoms, window, noise } => make_stoch_vol(atoms, *window, &noise.build()?),
            ProcessSpec::Linear { coefficients, noise, truncation_tol } => {
                make_linear(coefficients, &noise.build()?, *truncation_tol)
            }
            ProcessSpec::SvRegvar { mu, sigma, noise } => make_sv_regvar(*mu, *sigma, &noise.build()?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn process_spec_from_json() {
        let spec: ProcessSpec = serde_json::from_str(
            r#"{"kind":"min_construction","weights":[1,1],"noise":{"family":"logweibull","params":{"alpha":2}}}"#,
        )
        .unwrap();
        let p = spec.build().unwrap();
        assert_eq!(p.kind(), ProcessKind::MinConstruction);
        assert_eq!(p.m(), 1);
        let back: ProcessSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn process_spec_lists_every_problem() {
        let spec: ProcessSpec = serde_json::from_str(
            r#"{"kind":"linear","coefficients":{"rule":"finite","psi":[1,0.5]},
                "noise":{"family":"pareto","params":{"scale":2,"beta":1},"p_plus":0.5}}"#,
        )
        .unwrap();
        let problems = spec.problems();
        assert_eq!(problems.len(), 3, "{problems:?}");
        assert!(problems.iter().all(|p| p.starts_with("noise:")));
    }
    use crate::dist::{make_logweibull, make_pareto, make_two_sided};
    use crate::exec::stream_rng;
    use crate::stats::ks_two_sample;

    #[test]
    fn gaussian_theta_normalised_and_correlated() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let p = make_gaussian_transform(&[s, s], 1.0).unwrap();
        assert_eq!(p.m(), 1);
        let mut rng = stream_rng(3, 0, 0);
        let mut scratch = Scratch::default();
        let n = 1_000_000;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let (a, b) = p.sample_pair(1, &mut rng, &mut scratch);
            let (ya, yb) = (a.ln(), b.ln());
            sxy += ya * yb;
            sxx += ya * ya;
            syy += yb * yb;
        }
        let r = sxy / (sxx * syy).sqrt();
        assert!((r - 0.5).abs() < 0.005, "corr {r}");
        let tail = p.marginal().tail(3f64.exp());
        assert!((tail - 1.349_898_031_630_094_6e-3).abs() < 1e-15);
    }

    #[test]
    fn spectral_factorization_round_trip() {
        for rho in [vec![0.5], vec![0.3, -0.2], vec![0.4, 0.2, 0.1]] {
            let theta = theta_from_rho(&rho).unwrap();
            let got = ma_correlations(&theta);
            for (a, b) in got.iter().zip(&rho) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        // rho(1) above 1/2 is not an MA(1) correlation.
        assert!(theta_from_rho(&[0.6]).is_err());
        assert!(theta_from_rho(&[1.0]).is_err());
    }

    #[test]
    fn min_construction_tail_and_sampling() {
        let noise = make_logweibull(2.0).unwrap();
        let p = make_min_construction(&[1.0, 1.0], &noise).unwrap();
        assert!((p.marginal().tail(std::f64::consts::E.powi(2)) / (-8f64).exp() - 1.0).abs() < 1e-13);
        assert!(make_min_construction(&[1.0, 0.0], &noise).is_err());
        let q = p.marginal().isf(1e-3).unwrap();
        let mut rng = stream_rng(5, 0, 0);
        let mut scratch = Scratch::default();
        let mut path = vec![0.0; 1000];
        let mut hits = 0u64;
        for _ in 0..10_000 {
            p.fill_path(&mut rng, &mut path, &mut scratch);
            hits += path.iter().filter(|&&x| x > q).count() as u64;
        }
        let n: f64 = 1e7;
        let se = (1e-3 * n).sqrt();
        assert!((hits as f64 - 1e4).abs() <= 4.0 * se, "{hits}");
    }

    #[test]
    fn stoch_vol_mixture_tail() {
        let noise = make_pareto(3.0, 1.0).unwrap();
        let p = make_stoch_vol(&[(0.5, 0.5), (2.0, 0.5)], 1, &noise).unwrap();
        assert!((p.marginal().tail(10.0) - 0.0040625).abs() < 1e-15);
        let one = make_stoch_vol(&[(1.0, 1.0)], 1, &noise).unwrap();
        assert_eq!(one.marginal().tail(7.0), noise.tail(7.0));
        // Window 2: max of two draws is 2 with probability 3/4.
        let w = make_stoch_vol(&[(0.5, 0.5), (2.0, 0.5)], 2, &noise).unwrap();
        assert_eq!(w.m(), 1);
        assert!((w.marginal().tail(10.0) - (0.25 * 20f64.powi(-3) + 0.75 * 5f64.powi(-3))).abs() < 1e-15);
        assert!(make_stoch_vol(&[(-1.0, 1.0)], 1, &noise).is_err());
    }

    #[test]
    fn stoch_vol_preserves_balance() {
        let noise = make_two_sided(&make_pareto(3.0, 1.0).unwrap(), 0.7, 0.3).unwrap();
        let p = make_stoch_vol(&[(0.5, 0.5), (2.0, 0.5)], 1, &noise).unwrap();
        let x = 50.0;
        assert!((p.marginal().right(x) / p.marginal().abs_tail(x) - 0.7).abs() < 1e-12);
        let mut rng = stream_rng(8, 0, 0);
        let path = p.sample_path(2_000_000, &mut rng);
        let up = path.iter().filter(|&&v| v > 5.0).count() as f64;
        let all = path.iter().filter(|&&v| v.abs() > 5.0).count() as f64;
        let se = (0.21 / all).sqrt();
        assert!((up / all - 0.7).abs() < 4.0 * se);
    }

    #[test]
    fn linear_coefficients_and_truncation() {
        let noise = make_two_sided(&make_pareto(3.0, 1.0).unwrap(), 0.5, 0.5).unwrap();
        let p = make_linear(&CoefRule::Finite { psi: vec![1.0, 1.0, -1.0] }, &noise, 1e-6).unwrap();
        assert_eq!(p.kind(), ProcessKind::LinearFinite);
        assert_eq!(p.m(), 2);
        assert!(make_linear(&CoefRule::Finite { psi: vec![0.5, 0.25] }, &noise, 1e-6).is_err());
        let g = make_linear(&CoefRule::Geometric { ratio: 0.5 }, &noise, 1e-6).unwrap();
        assert_eq!(g.kind(), ProcessKind::LinearTruncated);
        let c = g.coefficients().unwrap();
        assert!(c.residual_bound <= 1e-6);
        assert!(CoefRule::Geometric { ratio: 0.5 }.residual_bound(c.psi.len() - 2, 0.5) > 1e-6);
        assert!(CoefRule::Geometric { ratio: 1.0 }.truncate(1e-6, None).is_err());
        assert!(CoefRule::PowerLaw { exponent: 1.5 }.truncate(1e-2, Some(0.5)).is_err());
        assert!(CoefRule::PowerLaw { exponent: 3.0 }.truncate(1e-2, None).is_ok());
    }

    #[test]
    fn sv_regvar_breiman_constant() {
        let z = make_two_sided(&make_pareto(3.0, 1.0).unwrap(), 0.5, 0.5).unwrap();
        let p = make_sv_regvar(0.0, 1.0, &z).unwrap();
        assert!((breiman_constant(&p).unwrap() - 4.5f64.exp()).abs() < 1e-12);
        let degenerate = make_sv_regvar(0.0, 1e-9, &z).unwrap();
        assert!((breiman_constant(&degenerate).unwrap() - 1.0).abs() < 1e-12);
        assert!(make_sv_regvar(0.0, 1.0, &make_logweibull(2.0).unwrap()).is_err());
    }

    #[test]
    fn sv_regvar_mc_tail_matches_breiman() {
        let z = make_two_sided(&make_pareto(3.0, 1.0).unwrap(), 0.5, 0.5).unwrap();
        let p = make_sv_regvar(0.0, 1.0, &z).unwrap();
        let c = breiman_constant(&p).unwrap();
        let x = p.marginal().isf(0.5e-4).unwrap().max(-p.marginal().quantile(0.5e-4).unwrap());
        let mut rng = stream_rng(21, 0, 0);
        let n = 4_000_000;
        let path = p.sample_path(n, &mut rng);
        let hits = path.iter().filter(|&&v| v.abs() > x).count() as f64;
        let ratio = hits / n as f64 / (c * z.abs_tail(x));
        assert!((ratio - 1.0).abs() < 0.25, "ratio {ratio}");
    }

    #[test]
    fn paths_are_stationary_and_lag_independent() {
        let noise = make_logweibull(2.0).unwrap();
        let p = make_min_construction(&[1.0, 2.0], &noise).unwrap();
        let mut rng = stream_rng(11, 0, 0);
        let mut scratch = Scratch::default();
        let mut path = vec![0.0; 8];
        let (mut first, mut last) = (Vec::new(), Vec::new());
        let mut lag = Moments::default();
        let (mut a_m, mut b_m) = (Moments::default(), Moments::default());
        for _ in 0..20_000 {
            p.fill_path(&mut rng, &mut path, &mut scratch);
            first.push(path[0]);
            last.push(path[7]);
            // bounded transform at lag m + 1 = 2
            let (a, b) = (path[0].ln().atan(), path[2].ln().atan());
            a_m.push(a);
            b_m.push(b);
            lag.push(a * b);
        }
        let (_, pval) = ks_two_sample(&first, &last);
        assert!(pval > 0.01, "p = {pval}");
        let cov = lag.mean - a_m.mean * b_m.mean;
        assert!(cov.abs() < 4.0 * lag.std_error(), "cov {cov}");
    }

    #[test]
    fn fixed_seed_paths_are_identical() {
        let z = make_two_sided(&make_pareto(3.0, 1.0).unwrap(), 0.5, 0.5).unwrap();
        let p = make_linear(&CoefRule::Finite { psi: vec![1.0, 0.5] }, &z, 1e-6).unwrap();
        let a = p.sample_path(100, &mut stream_rng(1, 2, 3));
        let b = p.sample_path(100, &mut stream_rng(1, 2, 3));
        assert_eq!(a, b);
    }

    #[test]
    fn centered_sample_mean() {
        let z = make_two_sided(&make_pareto(4.5, 1.0).unwrap(), 0.5, 0.5).unwrap();
        let p = make_linear(&CoefRule::Finite { psi: vec![1.0, 0.5] }, &z, 1e-6).unwrap();
        let path = p.sample_path(1_000_000, &mut stream_rng(4, 0, 0));
        let mut m = Moments::default();
        path.iter().for_each(|&x| m.push(x));
        // m-dependent: inflate the iid SE by the long-run variance factor.
        let lr = (1.0f64 + 0.5).powi(2) / 1.25;
        assert!(m.mean.abs() < 4.0 * m.std_error() * lr.sqrt());
    }

    #[test]
    fn autocovariances() {
        let z = make_two_sided(&make_pareto(4.5, 1.0).unwrap(), 0.5, 0.5).unwrap();
        let vz = z.variance().unwrap();
        let p = make_linear(&CoefRule::Finite { psi: vec![1.0, 0.5] }, &z, 1e-6).unwrap();
        let ex = Executor::sequential();
        assert!((p.autocov(1, 0, &ex).unwrap().value - 0.5 * vz).abs() < 1e-12);
        assert_eq!(p.autocov(2, 0, &ex).unwrap().value, 0.0);
        assert!((p.sum_variance(10, 0, &ex).unwrap() - (10.0 * 1.25 + 2.0 * 9.0 * 0.5) * vz).abs() < 1e-9);
    }
}
