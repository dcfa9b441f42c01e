use msde_core::ergodicity::{
    comparison_ode, estimate_invariant, moment_domination_check, observable_decay, time_average_moment_check,
    tv_against, tv_distance, DecaySeries, EmpiricalMeasure, Grid, Observable, TvKind,
};
use msde_core::{zoo, SimConfig};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn measure(grid: &Grid, pts: &[f64]) -> EmpiricalMeasure {
    let v: Vec<[f64; 1]> = pts.iter().map(|&p| [p]).collect();
    EmpiricalMeasure::from_points(grid.clone(), v.iter().map(|p| &p[..]))
}

fn points() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5..1.5f64, 1..60)
}

proptest! {
    #[test]
    fn tv_is_a_metric_on_histograms(a in points(), b in points(), c in points()) {
        let g = Grid::uniform(&[-1.0], &[1.0], 7).unwrap();
        let (ma, mb, mc) = (measure(&g, &a), measure(&g, &b), measure(&g, &c));
        let ab = tv_distance(&ma, &mb).unwrap().tv;
        let ba = tv_distance(&mb, &ma).unwrap().tv;
        let ac = tv_distance(&ma, &mc).unwrap().tv;
        let cb = tv_distance(&mc, &mb).unwrap().tv;
        prop_assert_eq!(ab, ba);
        prop_assert!(ab <= ac + cb + 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab == 0.0, ma.frequencies() == mb.frequencies());
        prop_assert_eq!(tv_distance(&ma, &ma).unwrap().tv, 0.0);
    }

    #[test]
    fn merging_equals_pooling(a in points(), b in points()) {
        let g = Grid::uniform(&[-1.0], &[1.0], 5).unwrap();
        let mut m = measure(&g, &a);
        m.merge(&measure(&g, &b)).unwrap();
        let pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
        prop_assert_eq!(m, measure(&g, &pooled));
    }
}

#[test]
fn ou_occupation_measure_is_the_discrete_invariant_law() {
    let h = 1e-2;
    let cfg = SimConfig::new(h, 1.0, 200, 12).with_stride(10);
    let grid = Grid::uniform(&[-5.0], &[5.0], 40).unwrap();
    let est = estimate_invariant(&zoo::ornstein_uhlenbeck(), &[0.0], 2.0, 50.0, &cfg, &grid).unwrap();
    assert!(est.warnings.is_empty(), "{:?}", est.warnings);
    // Euler chain invariant law N(0, 1/(1 - h/2))
    let law = Normal::new(0.0, (1.0 / (1.0 - h / 2.0)).sqrt()).unwrap();
    let (probs, outside) = grid.probabilities_1d(|x| law.cdf(x)).unwrap();
    let tv = tv_against(&est.measure, &probs, outside).unwrap();
    assert!(tv.tv <= 0.02 + 3.0 * tv.se, "{tv:?}");
    let var = 1.0 / (1.0 - h / 2.0);
    assert!((est.second_moment.mean - var).abs() <= 3.0 * est.second_moment.se + 0.01);
}

#[test]
fn stationary_start_stays_stationary() {
    // histogram at t = 10 and at t = 10.5 from the same start agree up to sampling noise
    let m = zoo::ornstein_uhlenbeck();
    let grid = Grid::uniform(&[-4.0], &[4.0], 30).unwrap();
    let ens = msde_core::simulate::simulate_paths(&m, &[0.0], &SimConfig::new(1e-2, 10.5, 20_000, 13).with_stride(50))
        .unwrap();
    let at = |t: f64| EmpiricalMeasure::from_points(grid.clone(), ens.slice_at(ens.time_index(t)));
    let tv = tv_distance(&at(10.0), &at(10.5)).unwrap();
    assert!(tv.tv <= 0.02 + 3.0 * tv.se, "{tv:?}");
}

#[test]
fn moments_respect_their_bounds() {
    let cfg = SimConfig::new(1e-2, 10.0, 2000, 14).with_stride(5);
    for e in zoo::catalogue().into_iter().filter(|e| e.claims.contains(&msde_core::model::Hypothesis::H4)) {
        let r = time_average_moment_check(&e.model, &e.x0, &cfg).unwrap();
        assert!(r.passed(), "{}: {:?}", e.name, r.checks);
        let d = moment_domination_check(&e.model, &e.x0, &[0.5, 1.0, 2.0], &cfg).unwrap();
        assert!(d.passed(), "{}: {:?}", e.name, d.checks);
    }
}

#[test]
fn comparison_tail_is_algebraic_for_p_above_two() {
    let times: Vec<f64> = (0..=100).map(|i| i as f64 * 10.0).collect();
    let c = comparison_ode(2.0, 0.0, 4.0, 9.0, &times).unwrap();
    let env = c.envelope.expect("p > 2 has an envelope");
    assert!(env.bounded);
    // with λ4 = 0, f t^{2/(p-2)} tends to (2/(λ3(p-2)))^{2/(p-2)} = 0.5
    assert!((env.limit - 0.5).abs() < 1e-12);
    assert!((c.values[100] * 1000.0 - 0.5).abs() < 1e-3);
    assert!(c.monotone);
}

#[test]
fn decay_fit_recovers_a_clean_exponential() {
    let times = vec![0.5, 1.0, 1.5, 2.0];
    let values: Vec<f64> = times.iter().map(|t: &f64| 0.8 * (-1.3 * t).exp()).collect();
    let s = DecaySeries::fit(times, values, vec![1e-4; 4], TvKind::Full);
    assert!((s.alpha_hat.unwrap() - 1.3).abs() < 1e-12);
    assert!((s.predict(1.25).unwrap() - 0.8 * (-1.3f64 * 1.25).exp()).abs() < 1e-12);
    assert_eq!(s.predict(3.0), None);
}

#[test]
fn ou_linear_observable_decays_at_rate_one() {
    // P_t x = x e^{-t}, so the L²(μ) norm of the centred semigroup is e^{-t}
    let m = zoo::ornstein_uhlenbeck();
    let grid = Grid::uniform(&[-5.0], &[5.0], 60).unwrap();
    let mu = estimate_invariant(&m, &[0.0], 2.0, 40.0, &SimConfig::new(1e-2, 1.0, 100, 15).with_stride(10), &grid)
        .unwrap()
        .measure;
    let obs = Observable::ClippedPoly { coord: 0, degree: 1, clip: 10.0 };
    let r = observable_decay(&m, &obs, 2.0, &mu, &[0.25, 0.5, 1.0, 1.5], 300, &SimConfig::new(1e-2, 1.0, 1000, 16), None)
        .unwrap();
    let a = r.series.alpha_hat.unwrap();
    assert!((0.6..=1.4).contains(&a), "{a} {:?}", r.series.values);
}
