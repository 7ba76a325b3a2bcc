use proptest::prelude::*;
use zpolicy::cftp::*;
use zpolicy::costs::{finite_cost, uniform_grid, CostModel};
use zpolicy::*;

fn params() -> LoadParams {
    LoadParams::new(1.0, 1.1, vec![50.0, 100.0], 2).unwrap()
}

fn config(set_points: &[f64], coupling: ComfortCoupling, seed: u64) -> CftpConfig {
    CftpConfig::new(
        &params(),
        set_points,
        ChainRates::two_state(0.04, 0.04),
        ChainRates::two_state(0.02, 0.02),
        coupling,
        seed,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bottom_chain_never_passes_the_top(z in prop::collection::vec(0.0f64..=100.0, 1..4), seed in any::<u64>(), independent in any::<bool>()) {
        let coupling = if independent { ComfortCoupling::Independent } else { ComfortCoupling::Shared };
        let s = cftp_sample(&config(&z, coupling, seed)).unwrap();
        prop_assert_eq!(s.sandwich_violations, 0);
        for (x, &zi) in s.temperatures.iter().zip(&z) {
            prop_assert!((0.0..=zi.max(0.0)).contains(x));
        }
    }

    #[test]
    fn smoothing_keeps_a_distribution(z in prop::collection::vec(0.0f64..=100.0, 1..12), b in 0.1f64..30.0, triangular in any::<bool>()) {
        let kernel = if triangular { Kernel::Triangular } else { Kernel::Box };
        let u = smooth_distribution(&z, kernel, b, &uniform_grid(100.0, 200)).unwrap();
        prop_assert!(u.validate().is_ok());
        prop_assert!(u.u.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn coalescence_never_undoes_itself() {
    let z = [60.0, 90.0];
    let samples = cftp_samples(&config(&z, ComfortCoupling::Independent, 100), 200).unwrap();
    let deepest = samples.iter().map(|s| s.doublings).max().unwrap();
    let by_depth: Vec<f64> = (0..=deepest)
        .map(|k| samples.iter().filter(|s| s.doublings <= k).count() as f64 / samples.len() as f64)
        .collect();
    assert!(by_depth.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(*by_depth.last().unwrap(), 1.0);
    // a seed that needed doublings fails with fewer and returns the same draw with more
    let (k, s) = samples.iter().enumerate().find(|(_, s)| s.doublings >= 1).expect("some seed needs a doubling");
    let mut c = config(&z, ComfortCoupling::Independent, 100 + k as u64);
    c.max_doublings = s.doublings - 1;
    assert!(matches!(cftp_sample(&c), Err(Error::NoCoalescence { .. })));
    c.max_doublings = s.doublings + 3;
    assert_eq!(&cftp_sample(&c).unwrap(), s);
}

#[test]
fn single_load_samples_follow_the_stationary_law() {
    let env = build_environment(&ChainRates::two_state(0.04, 0.04), &ChainRates::two_state(0.02, 0.02)).unwrap();
    let d = solve_stationary(80.0, &env, &params(), 0.25).unwrap();
    let samples = cftp_samples(&config(&[80.0], ComfortCoupling::Shared, 7), 10_000).unwrap();
    let mut x: Vec<f64> = samples.iter().map(|s| s.temperatures[0]).collect();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut sup: f64 = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        // compare on both sides of each jump of the empirical CDF
        let below = i as f64 / n;
        let at = x.partition_point(|&y| y <= xi) as f64 / n;
        sup = sup.max((d.cdf(xi) - at).abs());
        if i == 0 || x[i - 1] < xi {
            sup = sup.max((d.cdf(xi - 1e-12) - below).abs());
        }
    }
    assert!(sup <= 0.03, "sup distance {sup}");
}

#[test]
fn shared_comfort_cost_matches_the_analytic_cost() {
    let env = build_environment(&ChainRates::two_state(0.04, 0.04), &ChainRates::two_state(0.02, 0.02)).unwrap();
    let z = [60.0, 90.0];
    let gamma = 1e-3;
    let c = config(&z, ComfortCoupling::Shared, 11);
    let samples = cftp_samples(&c, 10_000).unwrap();
    let est = estimate_joint_cost(&samples, &c.loads, gamma).unwrap();
    let analytic = finite_cost(&z, &env, &params(), CostModel::Refined, gamma, 0.25).unwrap();
    let gap = (est.report.total - analytic.total).abs();
    assert!(gap <= 2.0 * est.standard_error, "estimate {:?} vs {analytic:?}", est);
}

#[test]
fn independent_comfort_error_shrinks_like_root_n() {
    let z = [30.0, 50.0, 65.0, 80.0, 95.0];
    let c = config(&z, ComfortCoupling::Independent, 13);
    let samples = cftp_samples(&c, 4_000).unwrap();
    let small = estimate_joint_cost(&samples[..1_000], &c.loads, 1e-3).unwrap();
    let large = estimate_joint_cost(&samples, &c.loads, 1e-3).unwrap();
    assert!(large.report.total > 0.0 && large.report.total.is_finite());
    let ratio = large.standard_error / small.standard_error;
    assert!((0.4..=0.6).contains(&ratio), "ratio {ratio}");
}

#[test]
fn empty_sample_set_is_rejected() {
    assert!(matches!(estimate_joint_cost(&[], &config(&[50.0], ComfortCoupling::Shared, 0).loads, 0.0), Err(Error::EmptySamples)));
}
