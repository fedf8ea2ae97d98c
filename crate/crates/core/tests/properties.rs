use heavytail::conditions::{boundary_catalogue, BoundaryRegime};
use heavytail::covmax::{entry_maxima, frechet_constants};
use heavytail::dist::{
    make_gauss_transform, make_lognormal, make_logweibull, make_pareto, make_two_sided, make_weibull_type, TailModel,
};
use heavytail::exec::{stream_rng, Executor};
use heavytail::ldmc::{estimate_naive, ThresholdGrid};
use heavytail::linproc::{coef_stats, lambda_window, WindowVariant};
use heavytail::procsim::{make_iid, CoefRule};
use heavytail::stats::{spearman_vs_index, wilson, Moments};
use proptest::prelude::*;
use rand::Rng;

fn continuous_model() -> impl Strategy<Value = TailModel> {
    prop_oneof![
        (2.1f64..8.0, 0.5f64..3.0).prop_map(|(a, s)| make_pareto(a, s).unwrap()),
        (-1.0f64..1.0, 0.3f64..2.0).prop_map(|(m, s)| make_lognormal(m, s).unwrap()),
        (1.2f64..4.0).prop_map(|a| make_logweibull(a).unwrap()),
        (0.2f64..0.9).prop_map(|a| make_weibull_type(a).unwrap()),
        (0.5f64..1.9).prop_map(|a| make_gauss_transform(a).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantile_tail_round_trip(model in continuous_model(), u in 0.001f64..0.999) {
        let x = model.quantile(u).unwrap();
        prop_assert!((model.tail(x) - (1.0 - u)).abs() <= 1e-9);
    }

    #[test]
    fn tails_are_monotone(model in continuous_model(), a in 0.0f64..50.0, b in 0.0f64..50.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(model.right(lo) >= model.right(hi));
        prop_assert!(model.log_right(lo.max(1e-3).ln()) >= model.log_right(hi.max(1e-3).ln()));
    }

    #[test]
    fn pareto_mean_excess(alpha in 1.5f64..6.0, x in 1.0f64..1e4) {
        let m = make_pareto(alpha, 1.0).unwrap();
        let me = m.mean_excess(x).unwrap();
        let want = x / (alpha - 1.0);
        prop_assert!((me - want).abs() <= 1e-6 * want);
    }

    #[test]
    fn two_sided_tail_balance(alpha in 2.1f64..6.0, pp in 0.05f64..0.95, x in 1.0f64..100.0) {
        let base = make_pareto(alpha, 1.0).unwrap();
        let m = make_two_sided(&base, pp, 1.0 - pp).unwrap();
        prop_assert!((m.right(x) - pp * base.right(x)).abs() <= 1e-15);
        prop_assert!((m.left(x) - (1.0 - pp) * base.right(x)).abs() <= 1e-15);
    }

    #[test]
    fn boundaries_increase_in_n(
        alpha in 2.5f64..8.0,
        rz in 0.3f64..1.9,
        k in 2u32..6,
    ) {
        let n = 10f64.powi(k as i32);
        for regime in [
            BoundaryRegime::NagaevRv { alpha, sigma: 1.0 },
            BoundaryRegime::LognormalLn,
            BoundaryRegime::Rozovski { alpha: rz },
        ] {
            let b = boundary_catalogue(regime).unwrap();
            prop_assert!(b.t(2.0 * n) > b.t(n));
            prop_assert!(b.t(n) > n.sqrt());
            prop_assert!((b.log_t(n) - b.t(n).ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn moments_merge_matches_single_pass(xs in prop::collection::vec(-1e3f64..1e3, 2..200), cut in 0usize..200) {
        let cut = cut.min(xs.len());
        let mut all = Moments::default();
        let (mut a, mut b) = (Moments::default(), Moments::default());
        for (i, &x) in xs.iter().enumerate() {
            all.push(x);
            if i < cut { a.push(x) } else { b.push(x) }
        }
        let m = a.merge(&b);
        prop_assert_eq!(m.count, all.count);
        prop_assert!((m.mean - all.mean).abs() <= 1e-9 * (1.0 + all.mean.abs()));
        prop_assert!((m.variance() - all.variance()).abs() <= 1e-8 * (1.0 + all.variance()));
    }

    #[test]
    fn wilson_contains_point_estimate(n in 1u64..100_000, frac in 0.0f64..1.0) {
        let k = ((n as f64) * frac) as u64;
        let (lo, hi) = wilson(k, n, 2.576);
        let p = k as f64 / n as f64;
        prop_assert!(lo <= p + 1e-12 && p <= hi + 1e-12);
        prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
    }

    #[test]
    fn one_sign_coefficients_have_equal_norms(psi in prop::collection::vec(0.01f64..1.0, 1..12), neg in any::<bool>()) {
        let psi: Vec<f64> = psi.into_iter().map(|c| if neg { -c } else { c }).collect();
        let s = coef_stats(&CoefRule::Finite { psi: psi.clone() }, 1e-12, None).unwrap();
        prop_assert!((s.m0_prime - s.m0.abs()).abs() <= 1e-12 * s.m0_prime);
        prop_assert!((s.m0 - psi.iter().sum::<f64>()).abs() <= 1e-12 * s.m0_prime);
        prop_assert_eq!(s.order, psi.len() - 1);
    }

    #[test]
    fn mixed_sign_norms_dominate(psi in prop::collection::vec(-1.0f64..1.0, 1..12)) {
        let s = coef_stats(&CoefRule::Finite { psi }, 1e-12, None).unwrap();
        prop_assert!(s.m0_prime + 1e-12 >= s.m0.abs());
        prop_assert!(s.m0_prime + 1e-12 >= s.m1);
    }

    #[test]
    fn geometric_residual_bound_decreases(r in 0.05f64..0.95, q in 1usize..200) {
        let rule = CoefRule::Geometric { ratio: r };
        let d = rule.default_delta();
        prop_assert!(rule.residual_bound(q + 1, d) <= rule.residual_bound(q, d));
    }

    #[test]
    fn window_upper_end_increases(alpha in 1.05f64..1.95, delta in 0.05f64..0.95, k in 1u32..12) {
        let n = 10f64.powi(k as i32);
        for v in [WindowVariant::SingleJump, WindowVariant::PairJump] {
            let (m0, m0p) = (Some(1.0), Some(1.5));
            let a = lambda_window(v, alpha, n, delta, m0, m0p, 1.0).unwrap();
            let b = lambda_window(v, alpha, 10.0 * n, delta, m0, m0p, 1.0).unwrap();
            prop_assert!(b.log_b_n > a.log_b_n);
        }
    }

    #[test]
    fn streaming_covariance_matches_dense(p in 1usize..=20, n in 1usize..=20, seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 0, 0);
        let rows: Vec<f64> = (0..p * n).map(|_| rng.random::<f64>() * 4.0 - 1.0).collect();
        let got = entry_maxima(&rows, n, 1.5, 0.5);
        let nf = n as f64;
        let dot = |i: usize, j: usize| {
            let mut s = 0.0;
            for t in 0..n {
                s += rows[i * n + t] * rows[j * n + t];
            }
            s
        };
        let mut diag = f64::NEG_INFINITY;
        let mut off = f64::NEG_INFINITY;
        for i in 0..p {
            diag = diag.max(dot(i, i) - nf * 1.5);
            for j in 0..p {
                if i != j {
                    off = off.max((dot(j, i) - nf * 0.25).abs());
                }
            }
        }
        prop_assert_eq!(got.diag.to_bits(), diag.to_bits());
        prop_assert_eq!(got.off_abs.to_bits(), off.to_bits());
    }

    #[test]
    fn frechet_constant_ratio(alpha in 4.2f64..10.0, k in 1i32..10) {
        let x2 = make_pareto(alpha, 1.0).unwrap().square().unwrap();
        let n = 10f64.powi(k);
        let r = frechet_constants(&x2, 2.0 * n).unwrap() / frechet_constants(&x2, n).unwrap();
        prop_assert!((r - 2f64.powf(2.0 / alpha)).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn naive_estimate_monotone_and_worker_free(seed in any::<u64>(), workers in 2usize..5) {
        let model = make_pareto(2.5, 1.0).unwrap();
        let process = make_iid(&model);
        let grid = ThresholdGrid::new(vec![3.0, 6.0, 10.0, 15.0], None, 5, 0.1).unwrap();
        let a = estimate_naive(&process, 5, &grid, 20_000, seed, &Executor::sequential()).unwrap();
        let b = estimate_naive(&process, 5, &grid, 20_000, seed, &Executor::new(workers).unwrap()).unwrap();
        prop_assert_eq!(&a.p_hat, &b.p_hat);
        prop_assert!(a.p_hat.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn diagonal_entries_are_exchangeable_across_rows() {
    // S_ii for 4000 rows drawn from consecutive row streams: no rank trend in i.
    let model = make_pareto(4.5, 1.0).unwrap();
    let process = make_iid(&model);
    let s: Vec<f64> = (0..4000u64)
        .map(|i| process.sample_path(50, &mut stream_rng(9, 1, i)).iter().map(|x| x * x).sum())
        .collect();
    let rho = spearman_vs_index(&s).unwrap();
    assert!(rho.abs() < 4.0 / (4000f64).sqrt(), "{rho}");
}
