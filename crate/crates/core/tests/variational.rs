use proptest::prelude::*;
use proptest::strategy::ValueTree;
use zpolicy::costs::*;
use zpolicy::variational::*;
use zpolicy::*;

const GAMMA: f64 = 1e-3;

/// Max-min formula for weighted isotonic regression, clipped to `[0, 1]`.
fn isotonic_oracle(y: &[f64], w: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut mean = vec![vec![f64::NEG_INFINITY; n]; n];
    for j in 0..n {
        let (mut sw, mut swy) = (0.0, 0.0);
        for k in j..n {
            sw += w[k];
            swy += w[k] * y[k];
            if sw > 0.0 {
                mean[j][k] = swy / sw;
            }
        }
    }
    (0..n)
        .map(|i| {
            (0..=i)
                .map(|j| (i..n).map(|k| mean[j][k]).fold(f64::INFINITY, f64::min))
                .fold(f64::NEG_INFINITY, f64::max)
                .clamp(0.0, 1.0)
        })
        .collect()
}

fn grid(n: usize) -> Vec<f64> {
    uniform_grid(100.0, n - 1)
}

fn objective(u: &[f64], y: &[f64], w: &[f64], z: &[f64]) -> f64 {
    let omega = trapezoid_weights(z);
    (0..u.len()).map(|l| omega[l] * w[l] * (u[l] - y[l]).powi(2)).sum()
}

fn candidate(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-0.3f64..1.3, n), prop::collection::vec(0.01f64..5.0, n))
}

fn monotone(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, n).prop_map(|mut v| {
        v.sort_by(f64::total_cmp);
        v
    })
}

proptest! {
    #[test]
    fn projection_beats_every_monotone_competitor((y, w) in candidate(40), u in monotone(40)) {
        let z = grid(40);
        let p = project(&z, &y, &w).unwrap();
        prop_assert!(objective(&p.distribution.u, &y, &w, &z) <= objective(&u, &y, &w, &z) + 1e-12);
    }

    #[test]
    fn projection_matches_the_max_min_oracle((y, w) in candidate(60)) {
        let z = grid(60);
        let p = project(&z, &y, &w).unwrap();
        let omega = trapezoid_weights(&z);
        let ww: Vec<f64> = omega.iter().zip(&w).map(|(o, w)| o * w).collect();
        let oracle = isotonic_oracle(&y, &ww);
        let gap = objective(&p.distribution.u, &y, &w, &z) - objective(&oracle, &y, &w, &z);
        prop_assert!(gap.abs() <= 1e-6, "objective gap {gap}");
        for (a, b) in p.distribution.u.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn pooled_blocks_balance_their_areas((y, w) in candidate(50)) {
        let z = grid(50);
        let p = project(&z, &y, &w).unwrap();
        for b in &p.blocks {
            prop_assert!(b.residual.abs() <= 1e-6 * b.weight, "{b:?}");
        }
    }

    #[test]
    fn projection_is_idempotent((y, w) in candidate(50)) {
        let z = grid(50);
        let once = project(&z, &y, &w).unwrap();
        let twice = project(&z, &once.distribution.u, &w).unwrap();
        prop_assert_eq!(&once.distribution.u, &twice.distribution.u);
    }

    #[test]
    fn unpooled_points_keep_their_candidate((y, w) in candidate(50)) {
        let z = grid(50);
        let p = project(&z, &y, &w).unwrap();
        for l in 0..z.len() {
            if !p.blocks.iter().any(|b| (b.start..=b.end).contains(&l)) {
                prop_assert_eq!(p.distribution.u[l], y[l].clamp(0.0, 1.0));
            }
        }
    }

    #[test]
    fn single_hump_pools_the_descent(peak in 0.2f64..0.8, top in 0.6f64..1.0, tail in 0.0f64..0.5) {
        // rises linearly to `top` at `peak`, then falls to `tail`
        let z = grid(60);
        let y: Vec<f64> = z
            .iter()
            .map(|&x| {
                let t = x / 100.0;
                if t <= peak { top * t / peak } else { top + (tail - top) * (t - peak) / (1.0 - peak) }
            })
            .collect();
        let w = vec![1.0; 60];
        let p = project(&z, &y, &w).unwrap();
        let omega = trapezoid_weights(&z);
        let oracle = isotonic_oracle(&y, &omega);
        prop_assert!((objective(&p.distribution.u, &y, &w, &z) - objective(&oracle, &y, &w, &z)).abs() <= 1e-6);
        // one pooled block reaching the right end; identical to the candidate before it
        prop_assert_eq!(p.blocks.len(), 1);
        let b = p.blocks[0];
        prop_assert_eq!(b.end, 59);
        prop_assert!((0..b.start).all(|l| p.distribution.u[l] == y[l]));
        prop_assert!(y[b.start] >= b.level - 1e-12);
    }
}

#[test]
fn candidate_on_the_reference_instance_needs_projection() {
    let env = build_environment(&ChainRates::two_state(0.04, 0.04), &ChainRates::two_state(0.02, 0.02)).unwrap();
    let params = LoadParams::new(1.0, 1.1, vec![50.0, 100.0], 2).unwrap();
    let curves = sensitivity_curves(&env, &params, &uniform_grid(100.0, 200), 0.5).unwrap();
    let el = euler_lagrange(&curves, GAMMA);
    assert_eq!(el.raw, multiwind_euler_lagrange(&curves, GAMMA, &[]).raw);
    assert!(el.clamped.iter().all(|u| (0.0..=1.0).contains(u)));
    assert!((el.clamped.last().unwrap() - 1.0).abs() > 1e-3);
    assert!(el.clamped.windows(2).any(|w| w[1] < w[0]));
    let p = optimal_distribution(&curves, GAMMA, &[]).unwrap();
    assert!(!p.blocks.is_empty());
    assert!(p.distribution.u.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn ternary_wind_projection_beats_random_distributions() {
    let wind = ChainRates::birth_death(&[0.04, 0.04], &[0.04, 0.04]);
    let env = build_environment(&wind, &ChainRates::two_state(0.02, 0.02)).unwrap();
    let params = LoadParams::new(1.0, 1.1, vec![50.0, 100.0], 3).unwrap();
    let curves = sensitivity_curves(&env, &params, &uniform_grid(100.0, 100), 0.5).unwrap();
    let best = optimal_distribution(&curves, GAMMA, &[]).unwrap().distribution;
    let j_best = continuum_cost(&best, &curves, GAMMA).unwrap().total;
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let strategy = monotone(curves.len());
    for _ in 0..500 {
        let u = strategy.new_tree(&mut runner).unwrap().current();
        let dist = ThresholdDistribution::from_grid(curves.z_grid.clone(), u).unwrap();
        let j = continuum_cost(&dist, &curves, GAMMA).unwrap().total;
        assert!(j_best <= j + 1e-12, "{j_best} > {j}");
    }
    let uniform = continuum_cost(&ThresholdDistribution::uniform(100.0, 100), &curves, GAMMA).unwrap().total;
    assert!(j_best < uniform);
}

#[test]
fn three_level_image_decreases_in_v_and_brackets_halve() {
    let comfort = ChainRates::birth_death(&[0.02, 0.02], &[0.02, 0.02]);
    let env = build_environment(&ChainRates::two_state(0.04, 0.04), &comfort).unwrap();
    let params = LoadParams::new(1.0, 1.1, vec![40.0, 70.0, 100.0], 2).unwrap();
    let curves = sensitivity_curves(&env, &params, &uniform_grid(100.0, 100), 0.5)
        .unwrap()
        .with_model(CostModel::Paper);
    let image: Vec<f64> = (0..=20)
        .map(|k| optimal_distribution(&curves, GAMMA, &[k as f64 / 20.0]).unwrap().value_at(70.0))
        .collect();
    assert!(image.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{image:?}");
    let fp = fixed_point(&curves, GAMMA, &[0.5], 1e-9, 40).unwrap();
    let mut width = 1.0;
    for step in &fp.trace {
        let next = step.upper - step.lower;
        assert!(next <= width / 2.0, "{next} after {width}");
        width = next;
    }
    assert!((fp.v[0] - fp.projection.value_at(70.0)).abs() <= 1e-9);
}
