use std::sync::Arc;

use levyfp::fpme::{bump_profile, refine_reference, sample_initial, solve, FpmeConfig, FpmeParams, FpmeSolution};
use levyfp::measure::Snapshot;
use levyfp::operators::PeriodicGrid;
use proptest::prelude::*;

fn run(m: f64, alpha: f64, radius: f64, n: usize, times: &[f64]) -> FpmeSolution<f64> {
    let grid = PeriodicGrid::centered(16.0, n).unwrap();
    let init = sample_initial(&grid, &bump_profile(radius)).unwrap();
    solve(&init, FpmeParams::new(m, alpha).unwrap(), &grid, times, &FpmeConfig::default()).unwrap()
}

fn mass(sol: &FpmeSolution<f64>, k: usize) -> f64 {
    sol.snapshots[k].iter().sum::<f64>() * sol.grid.dx()
}

fn sup(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn exponent_and_alpha_are_validated() {
    assert!(FpmeParams::new(1.0, 1.0).is_err());
    assert!(FpmeParams::new(0.5, 1.0).is_err());
    assert!(FpmeParams::new(2.0, 2.0).is_err());
    assert!(FpmeParams::new(2.0, 0.0).is_err());
    let err = FpmeParams::new(1.0, 1.0).unwrap_err().to_string();
    assert!(err.contains("porous media exponent"), "{err}");
}

#[test]
fn positivity_spreads_from_compact_data() {
    let sol = run(2.0, 1.0, 1.0, 256, &[0.0, 0.1, 0.3]);
    let init = &sol.snapshots[0];
    assert!(init.contains(&0.0));
    for k in 1..sol.times.len() {
        for (j, &v) in sol.snapshots[k].iter().enumerate() {
            let x = sol.grid.x(j);
            if x.abs() < 6.0 {
                assert!(v > 0.0, "u({}, {x}) = {v}", sol.times[k]);
            }
        }
    }
}

#[test]
fn solver_is_deterministic() {
    let a = run(3.0, 1.4, 1.0, 128, &[0.0, 0.05]);
    let b = run(3.0, 1.4, 1.0, 128, &[0.0, 0.05]);
    assert_eq!(a, b);
}

#[test]
fn refinement_reduces_the_error() {
    let phi = bump_profile(1.0);
    let params = FpmeParams::new(2.0, 1.0).unwrap();
    let times = [0.0, 0.1];
    let cfg = FpmeConfig { dt: 4e-3, ..FpmeConfig::default() };
    let coarse = PeriodicGrid::<f64>::centered(16.0, 128).unwrap();
    let reference = refine_reference(&phi, params, &coarse, &times, &cfg, 8).unwrap();
    let l1 = |factor: usize| {
        let sol = refine_reference(&phi, params, &coarse, &times, &cfg, factor).unwrap();
        let stride = 8 / factor;
        let fine = reference.final_state();
        sol.final_state()
            .iter()
            .enumerate()
            .map(|(j, &u)| (u - fine[j * stride]).abs())
            .sum::<f64>()
            * sol.grid.dx()
    };
    let (e1, e2) = (l1(1), l1(2));
    assert!(e2 <= 0.5 * e1, "{e1} → {e2}");
}

#[test]
fn packaged_curve_is_normalized_and_sigma_is_bounded() {
    let sol = Arc::new(run(2.5, 1.2, 1.0, 256, &[0.0, 0.1, 0.2]));
    let curve = sol.as_measure_curve().unwrap();
    for s in curve.snapshots() {
        match s {
            Snapshot::Grid(g) => assert!((g.grid_mass() + g.exterior_mass - 1.0).abs() < 1e-8),
            _ => panic!("expected grid snapshots"),
        }
    }
    let bound = sup(&sol.snapshots[0]).powf((2.5 - 1.0) / 1.2);
    let sigma = sol.sigma();
    for k in 0..=40 {
        let x = -4.0 + 0.2 * k as f64;
        for t in [0.0, 0.05, 0.2] {
            assert!(sigma(t, &[x]) <= bound * (1.0 + 1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn mass_positivity_and_contraction(m in 1.2f64..3.0, alpha in 0.5f64..1.9, radius in 0.5f64..2.0) {
        let sol = run(m, alpha, radius, 128, &[0.0, 0.05, 0.1]);
        let top = sup(&sol.snapshots[0]);
        for k in 0..sol.times.len() {
            prop_assert!((mass(&sol, k) - 1.0).abs() <= 1e-8);
            prop_assert!(sol.snapshots[k].iter().all(|&v| v >= 0.0));
            prop_assert!(sup(&sol.snapshots[k]) <= top + 1e-3);
        }
    }
}
