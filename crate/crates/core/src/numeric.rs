//! Special functions, quadrature and root finding shared by the analytic layers.

use std::f64::consts::SQRT_2;

use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

/// `ln(sqrt(2*pi))`.
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

/// Upper tail of the standard normal, `P(N > z)`.
pub fn norm_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

pub fn norm_cdf(z: f64) -> f64 {
    norm_sf(-z)
}

/// Mills ratio `P(N > z) / phi(z)` for `z >= 5` by backward evaluation of the
/// Laplace continued fraction.
fn mills_ratio_cf(z: f64) -> f64 {
    let mut f = z;
    for k in (1..=200).rev() {
        f = z + k as f64 / f;
    }
    1.0 / f
}

/// `ln P(N > z)`, accurate far beyond the underflow point of `norm_sf`.
pub fn log_norm_sf(z: f64) -> f64 {
    if z < 8.0 {
        norm_sf(z).ln()
    } else {
        -0.5 * z * z - LN_SQRT_2PI + mills_ratio_cf(z).ln()
    }
}

/// Inverse of the normal upper tail: the `z` with `P(N > z) = p`.
pub fn norm_isf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::INFINITY;
    }
    if p >= 1.0 {
        return f64::NEG_INFINITY;
    }
    if p > 0.5 {
        return -norm_isf(1.0 - p);
    }
    let mut z = SQRT_2 * erfc_inv(2.0 * p);
    // Newton polish on ln P(N > z); derivative is -phi/Phibar.
    let target = p.ln();
    for _ in 0..3 {
        let lsf = log_norm_sf(z);
        let inv_mills = (-0.5 * z * z - LN_SQRT_2PI - lsf).exp();
        let step = (lsf - target) / inv_mills;
        if !step.is_finite() {
            break;
        }
        z += step;
        if step.abs() < 1e-15 * z.abs().max(1.0) {
            break;
        }
    }
    z
}

/// Inverse of the normal upper tail given `ln p`, usable for `p` below `f64::MIN_POSITIVE`.
pub fn norm_isf_log(log_p: f64) -> f64 {
    if log_p > -700.0 {
        return norm_isf(log_p.exp());
    }
    let mut z = (-2.0 * log_p).sqrt();
    for _ in 0..50 {
        let lsf = log_norm_sf(z);
        let step = (lsf - log_p) * mills_ratio_cf(z);
        z += step;
        if step.abs() < 1e-14 * z {
            break;
        }
    }
    z
}

/// `ln(sum(exp(v)))` without overflow.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Pairwise (tree) summation; the association order depends only on the length.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        len => {
            let mid = len / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub evaluations: u32,
}

/// Adaptive integration of a smooth integrand over a finite interval.
///
/// Each panel is integrated by the tanh-sinh rule; panels whose error
/// estimate exceeds their share of `rel_tol * |total|` are bisected, up to a
/// fixed depth. Non-convergence is reported as [`Error::Numeric`].
pub fn integrate<F>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<Integral>
where
    F: Fn(f64) -> f64,
{
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::numeric(format!("non-finite integration limits [{a}, {b}]")));
    }
    if a == b {
        return Ok(Integral { value: 0.0, error: 0.0, evaluations: 0 });
    }
    // Coarse pass to fix the absolute scale.
    let coarse = quadrature::double_exponential::integrate(&f, a, b, 1e-300);
    let scale = coarse.integral.abs().max(1e-300);
    let abs_tol = rel_tol * scale;

    let mut value = 0.0;
    let mut error = 0.0;
    let mut evaluations = coarse.num_function_evaluations;
    let mut stack = vec![(a, b, 0u32)];
    let width = b - a;
    while let Some((lo, hi, depth)) = stack.pop() {
        let out = quadrature::double_exponential::integrate(&f, lo, hi, abs_tol * 1e-3);
        evaluations += out.num_function_evaluations;
        // Round-off floor keeps kinks from forcing endless refinement.
        let share = (abs_tol * (hi - lo) / width).max(1e-14 * scale);
        if out.error_estimate <= share {
            value += out.integral;
            error += out.error_estimate;
        } else if depth >= 24 {
            return Err(Error::numeric(format!(
                "quadrature did not converge on [{lo}, {hi}] (error {:.3e})",
                out.error_estimate
            )));
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    Ok(Integral { value, error, evaluations })
}

/// Root of a monotone function on a bracket by bisection with secant steps.
///
/// `f(lo)` and `f(hi)` must have opposite signs. Terminates when the bracket
/// is below `rel_tol` relative width (or absolute width for brackets around 0).
pub fn solve_bracketed<F>(f: F, mut lo: f64, mut hi: f64, rel_tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let mut flo = f(lo);
    let mut fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() || flo.is_nan() || fhi.is_nan() {
        return Err(Error::numeric(format!(
            "root not bracketed on [{lo}, {hi}] (f = {flo}, {fhi})"
        )));
    }
    for iter in 0..400 {
        let width = hi - lo;
        if width.abs() <= rel_tol * lo.abs().max(hi.abs()).max(1e-300) {
            break;
        }
        // Alternate secant and bisection so that the bracket always shrinks.
        let mut mid = if iter % 2 == 0 && flo.is_finite() && fhi.is_finite() {
            lo - flo * width / (fhi - flo)
        } else {
            0.5 * (lo + hi)
        };
        if !(mid > lo.min(hi) && mid < lo.max(hi)) {
            mid = 0.5 * (lo + hi);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
            fhi = fm;
        }
    }
    Ok(if flo.abs() < fhi.abs() { lo } else { hi })
}

/// Standard Gumbel distribution function.
pub fn gumbel_cdf(x: f64) -> f64 {
    (-(-x).exp()).exp()
}

/// Frechet distribution function with index `alpha`.
pub fn frechet_cdf(alpha: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-x.powf(-alpha)).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_tail_reference_values() {
        assert!((norm_sf(1.0) - 0.158_655_253_931_457_05).abs() < 1e-15);
        assert!((norm_sf(3.0) - 1.349_898_031_630_094_6e-3).abs() < 1e-17);
        assert!((norm_sf(0.0) - 0.5).abs() < 1e-16);
    }

    #[test]
    fn log_tail_is_continuous_at_the_switch() {
        let a = norm_sf(8.0).ln();
        let b = -32.0 - LN_SQRT_2PI + mills_ratio_cf(8.0).ln();
        assert!((a - b).abs() < 1e-12 * a.abs(), "{a} vs {b}");
        // far tail: -z^2/2 dominates
        let z = 100.0;
        assert!((log_norm_sf(z) + 0.5 * z * z + LN_SQRT_2PI + z.ln()).abs() < 1e-3);
    }

    #[test]
    fn isf_inverts_sf() {
        for &p in &[0.9, 0.5, 0.1, 1e-3, 1e-8, 1e-14, 1e-200] {
            let z = norm_isf(p);
            let back = norm_sf(z);
            assert!(((back - p) / p).abs() < 1e-12, "p={p} z={z} back={back}");
        }
        let z = norm_isf_log(-2000.0);
        assert!((log_norm_sf(z) + 2000.0).abs() < 1e-9);
    }

    #[test]
    fn integrate_polynomial_and_exponential() {
        let r = integrate(|x| x * x, 0.0, 3.0, 1e-12).unwrap();
        assert!((r.value - 9.0).abs() < 1e-11);
        let r = integrate(|u: f64| (-u).exp(), 0.0, 700.0, 1e-10).unwrap();
        assert!((r.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn solver_finds_roots() {
        let r = solve_bracketed(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - SQRT_2).abs() < 1e-13);
        assert!(solve_bracketed(|x| x * x + 1.0, 0.0, 2.0, 1e-12).is_err());
    }

    #[test]
    fn pairwise_sum_matches_plain_sum_for_exact_values() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
    }
}
