use msde_core::coupling::{
    chebyshev_bound, coupling_time_stats, girsanov_weight, irreducibility_check, simulate_coupled, strong_feller_gap,
    CouplingParams, TestFunction,
};
use msde_core::{zoo, SimConfig};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn coupled_pairs_stay_synchronized(x in -1.0..1.0f64, y in -1.0..1.0f64, seed in 0u64..1000) {
        // state-dependent noise so the meeting time is random
        let m = zoo::power_svi();
        let h = 1e-2;
        let cfg = SimConfig::new(h, 2.0, 40, seed);
        let params = CouplingParams::new(&m, &[x, 0.1], &[y, -0.1], 2.0, h).unwrap();
        let run = simulate_coupled(&m, &params, &cfg).unwrap();
        for p in 0..run.n_paths {
            let tau = run.coupling_time[p];
            for (ti, &t) in run.times.iter().enumerate() {
                if t >= tau {
                    prop_assert_eq!(run.x(p, ti), run.y(p, ti));
                }
            }
        }
        let g = girsanov_weight(&run, &params).unwrap();
        prop_assert!(g.weights.iter().all(|w| w.is_finite() && *w > 0.0));
    }
}

#[test]
fn girsanov_weight_is_a_martingale() {
    for (model, x0, y0) in [
        (zoo::ornstein_uhlenbeck(), vec![0.0], vec![0.4]),
        (zoo::power_svi(), vec![0.2, 0.0], vec![-0.2, 0.0]),
        (zoo::box_linear(), vec![1.0, 0.0], vec![0.7, 0.2]),
    ] {
        let h = 1e-2;
        let cfg = SimConfig::new(h, 1.0, 20_000, 21).with_stride(10);
        let params = CouplingParams::new(&model, &x0, &y0, 1.0, h).unwrap();
        let run = simulate_coupled(&model, &params, &cfg).unwrap();
        let g = girsanov_weight(&run, &params).unwrap();
        assert!(g.passed(), "{:?} {:?} bound {}", g.mean, g.second_moment, g.second_moment_bound);
    }
}

#[test]
fn ou_coupling_follows_the_deterministic_gap() {
    // X - Y solves r' = -r - δ^α with δ = |x0 - y0|
    let m = zoo::ornstein_uhlenbeck();
    let h = 1e-3;
    let cfg = SimConfig::new(h, 1.0, 50, 2).with_stride(50);
    let params = CouplingParams::new(&m, &[0.0], &[0.1], 1.0, h).unwrap();
    let run = simulate_coupled(&m, &params, &cfg).unwrap();
    let (d, da) = (0.1f64, 0.1f64.powf(params.alpha));
    let tau = ((d + da) / (params.eps_couple + da)).ln();
    for &t in &run.coupling_time {
        assert!((t - tau).abs() <= 2.0 * h, "{t} vs {tau}");
    }
    let report = coupling_time_stats(&run, &params, 0.0, 1.0).unwrap();
    assert!(report.passed());
    assert_eq!(report.prob_not_coupled.mean, 0.0);
}

/// `E tanh(N(mean, var))` by the trapezoid rule on ±12 sd.
fn expected_tanh(mean: f64, var: f64) -> f64 {
    let n = 20_001;
    let s = var.sqrt();
    let dz = 24.0 / (n - 1) as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let z = -12.0 + i as f64 * dz;
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        acc += w * (mean + s * z).tanh() * (-0.5 * z * z).exp();
    }
    acc * dz / (2.0 * std::f64::consts::PI).sqrt()
}

#[test]
fn ou_gap_matches_the_discrete_law() {
    let m = zoo::ornstein_uhlenbeck();
    let (h, t) = (1e-2f64, 0.5);
    let n = (t / h) as i32;
    // the Euler chain is Gaussian with these moments
    let a = (1.0 - h).powi(n);
    let var = 2.0 * h * (1.0 - (1.0 - h).powi(2 * n)) / (1.0 - (1.0 - h).powi(2));
    let cfg = SimConfig::new(h, t, 40_000, 6);
    for crn in [true, false] {
        let g = strong_feller_gap(&m, &[0.0], &[0.4], &TestFunction::TanhCoord { coord: 0 }, &cfg, crn).unwrap();
        let exact = (expected_tanh(0.0, var) - expected_tanh(0.4 * a, var)).abs();
        assert!((g.gap - exact).abs() <= 4.0 * g.se, "crn {crn}: {} ± {} vs {exact}", g.gap, g.se);
    }
}

#[test]
fn chebyshev_bound_for_the_box() {
    let m = zoo::box_linear();
    let (c, b) = chebyshev_bound(&m.operator, 10.0, m.constants.lambda1, &[1.0, 0.0], &[0.0, 0.0], 5.0, 1.0).unwrap();
    assert_eq!(c.c_m, 15.0);
    assert_eq!(c.c0, 2.0);
    assert!((b - (1.0 * (-75.0f64).exp() + 2.0 / 15.0)).abs() < 1e-15);
}

#[test]
fn box_target_is_reached() {
    let m = zoo::box_linear();
    let cfg = SimConfig::new(1e-2, 2.0, 4000, 9);
    let r = irreducibility_check(&m, &[1.0, 0.0], &[-0.5, 0.5], 1.0, 10.0, &cfg).unwrap();
    assert!(r.passed() && r.cp_lower > 0.0, "{r:?}");
    // a target outside the domain is rejected
    assert!(irreducibility_check(&m, &[1.0, 0.0], &[3.0, 0.0], 1.0, 10.0, &cfg).is_err());
}
