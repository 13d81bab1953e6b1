use std::sync::Arc;

use approx::assert_relative_eq;
use levyfp::coefficients::CoefficientField;
use levyfp::levy::{
    assumption_report, log_tail_full, log_tail_functional, shifted_log_tail, small_jump_moment, tail_mass,
    LevyKernel, ProbeGrid, RadialRestriction, StableLike, ZeroKernel, DEFAULT_TREND_THRESHOLD,
};
use levyfp::matrix::Matrix;
use levyfp::quadrature::QuadratureSpec;
use proptest::prelude::*;

fn quad() -> QuadratureSpec {
    QuadratureSpec::default()
}

fn iso(alpha: f64, ell: f64) -> StableLike<f64> {
    StableLike::isotropic(1, alpha, ell, 1.0).unwrap()
}

fn example_i(alpha: f64) -> StableLike<f64> {
    StableLike::state_dependent(
        1,
        alpha,
        0.5,
        Arc::new(move |_, x: &[f64]| {
            let r = x[0].abs();
            let log = if alpha == 1.0 { (1.0 + r).ln() } else { 0.0 };
            (1.0 + r).powf(alpha.min(1.0)) / (1.0 + log)
        }),
    )
    .unwrap()
}

#[test]
fn small_jump_moment_closed_forms() {
    let g = small_jump_moment(&iso(1.0, 0.5), 0.0, &[0.0], &quad()).unwrap();
    assert_relative_eq!(g.value, 1.0, max_relative = 1e-6);
    for alpha in [0.3, 0.8, 1.7] {
        let ell: f64 = 0.4;
        let exact = 2.0 * ell.powf(2.0 - alpha) / (2.0 - alpha);
        let g = small_jump_moment(&iso(alpha, ell), 0.0, &[3.0], &quad()).unwrap().value;
        assert_relative_eq!(g, exact, max_relative = 1e-6);
    }
    let scaled = StableLike::state_dependent(1, 1.0, 0.5, Arc::new(|_, x: &[f64]| 1.0 + x[0] * x[0])).unwrap();
    assert_relative_eq!(small_jump_moment(&scaled, 0.0, &[1.0], &quad()).unwrap().value, 2.0, max_relative = 1e-6);
}

#[test]
fn pure_big_jumps_have_no_small_moment() {
    let big = RadialRestriction::big_jumps(Arc::new(iso(1.2, 0.5)) as Arc<dyn LevyKernel<f64>>);
    assert_eq!(small_jump_moment(&big, 0.0, &[0.0], &quad()).unwrap().value, 0.0);
    let zero = ZeroKernel::<f64>::new(1, 0.5);
    assert_eq!(small_jump_moment(&zero, 0.0, &[0.0], &quad()).unwrap().value, 0.0);
    assert_eq!(log_tail_functional(&zero, 0.0, &[2.0], &quad()).unwrap().value, 0.0);
    assert_eq!(shifted_log_tail(&zero, 0.0, &[2.0], &[1.0], &quad()).unwrap().value, 0.0);
    assert_eq!(tail_mass(&zero, 0.0, &[2.0], 1.0, &quad()).unwrap().value, 0.0);
}

#[test]
fn log_tail_at_origin_matches_antiderivative() {
    // 2∫_{1/2}^∞ log(1+r)/r² dr = 4 log(3/2) + 2 log 3
    let exact = 4.0 * 1.5f64.ln() + 2.0 * 3.0f64.ln();
    let h = log_tail_full(&iso(1.0, 0.5), 0.0, &[0.0], &quad()).unwrap().value;
    assert_relative_eq!(h, exact, max_relative = 1e-6);
    // H(x, x) reduces to the shift-free integrand
    let k = example_i(0.7);
    let x = [4.0];
    let at_origin = log_tail_full(&StableLike::isotropic(1, 0.7, 0.5, k.kappa_at(0.0, &x, &[1.0])).unwrap(), 0.0, &[0.0], &quad())
        .unwrap()
        .value;
    assert_relative_eq!(shifted_log_tail(&k, 0.0, &x, &x, &quad()).unwrap().value, at_origin, max_relative = 1e-9);
}

#[test]
fn symmetric_log_tail_at_origin_matches_antiderivative() {
    // 2∫_1^∞ log(1+r)/r² dr = 4 log 2
    let h = log_tail_functional(&iso(1.0, 0.5), 0.0, &[0.0], &quad()).unwrap().value;
    assert_relative_eq!(h, 4.0 * 2f64.ln(), max_relative = 1e-6);
}

#[test]
fn tail_mass_closed_form() {
    assert_relative_eq!(tail_mass(&iso(1.0, 0.5), 0.0, &[0.0], 1.0, &quad()).unwrap().value, 2.0, max_relative = 1e-6);
    assert!(tail_mass(&iso(1.0, 0.5), 0.0, &[0.0], 0.3, &quad()).is_err());
}

#[test]
fn example_i_kernel_log_tail_is_bounded() {
    for alpha in [0.5, 1.0, 1.5] {
        let k = example_i(alpha);
        let sup = |lo: f64, hi: f64| {
            (0..=20)
                .map(|i| lo * (hi / lo).powf(i as f64 / 20.0))
                .map(|x| log_tail_full(&k, 0.0, &[x], &quad()).unwrap().value)
                .fold(0.0, f64::max)
        };
        let (inner, outer) = (sup(10.0, 100.0), sup(100.0, 1000.0));
        assert!(outer <= 1.1 * inner, "alpha {alpha}: {inner} vs {outer}");
    }
}

#[test]
fn assumption_report_examples() {
    let probes = ProbeGrid::uniform_1d(vec![0.0], -10.0, 10.0, 41);
    let identity = CoefficientField::constant_diffusion(1, 1.0);
    let zero = ZeroKernel::new(1, 0.5);
    let r = assumption_report(&zero, &identity, &probes, &quad(), DEFAULT_TREND_THRESHOLD).unwrap();
    assert_relative_eq!(r.total_sup, 1.0, max_relative = 1e-12);
    assert_eq!(r.argmax_probe.x, vec![0.0]);
    assert!(r.passes());

    // symmetric, κ ≤ (1+|x|)^α
    let alpha = 1.5;
    let ex2 = StableLike::general(
        1,
        alpha,
        0.5,
        Arc::new(move |_, x: &[f64], z: &[f64]| (1.0 + x[0].abs()).powf(alpha) / (1.0 + z[0] * z[0]).sqrt().min(2.0)),
        Arc::new(move |_, x: &[f64]| (1.0 + x[0].abs()).powf(alpha)),
        true,
    )
    .unwrap();
    assert!(ex2.check_symmetry(0.0, &[3.0]));
    let wide = ProbeGrid::log_symmetric_1d(vec![0.0], 0.1, 1000.0, 13);
    let r = assumption_report(&ex2, &CoefficientField::zero(1), &wide, &quad(), DEFAULT_TREND_THRESHOLD).unwrap();
    assert!(r.total_sup.is_finite() && !r.violated);
    assert!(r.per_term.log_tail < 10.0, "{}", r.per_term.log_tail);

    let square = CoefficientField::zero(1).with_drift(Arc::new(|_, x: &[f64]| vec![x[0] * x[0]]));
    let r = assumption_report(&zero, &square, &wide, &quad(), DEFAULT_TREND_THRESHOLD).unwrap();
    assert!(r.unbounded_trend && !r.passes());
    assert!(r.trend_ratio > 1.9);
}

#[test]
fn diffusion_term_uses_trace_norm() {
    let a = CoefficientField::zero(2).with_diffusion(Arc::new(|_, _: &[f64]| Matrix::from_rows(2, vec![2.0, 0.5, 0.5, 1.0])));
    let probes = ProbeGrid::new(vec![0.0], vec![vec![0.0, 0.0]]);
    let r = assumption_report(&ZeroKernel::new(2, 0.5), &a, &probes, &quad(), DEFAULT_TREND_THRESHOLD).unwrap();
    assert_relative_eq!(r.per_term.diffusion_and_small_jumps, 3.0, max_relative = 1e-12);
}

#[test]
fn invalid_kernels_are_rejected() {
    assert!(StableLike::isotropic(1, 2.0, 0.5, 1.0).is_err());
    assert!(StableLike::isotropic(1, 0.0, 0.5, 1.0).is_err());
    assert!(StableLike::isotropic(1, 1.0, 0.8, 1.0).is_err());
    assert!(StableLike::isotropic(0, 1.0, 0.5, 1.0).is_err());
}

#[test]
fn single_precision_agrees_with_double() {
    let k32 = StableLike::<f32>::isotropic(1, 1.3, 0.5, 1.0).unwrap();
    let g32 = small_jump_moment(&k32, 0.0, &[1.0f32], &quad()).unwrap().value;
    let g64 = small_jump_moment(&iso(1.3, 0.5), 0.0, &[1.0], &quad()).unwrap().value;
    assert_relative_eq!(g32 as f64, g64, max_relative = 1e-4);
}

#[test]
fn isotropic_functionals_in_two_dimensions() {
    // ν = dz/|z|^{2+α} in ℝ²: g = 2π ℓ^{2-α}/(2-α), ν(|z|>r) = 2π r^{-α}/α
    let (alpha, ell, r): (f64, f64, f64) = (1.2, 0.5, 1.7);
    let k = StableLike::isotropic(2, alpha, ell, 1.0).unwrap();
    let tau = 2.0 * std::f64::consts::PI;
    let g = small_jump_moment(&k, 0.0, &[0.3, -0.2], &quad()).unwrap().value;
    assert_relative_eq!(g, tau * ell.powf(2.0 - alpha) / (2.0 - alpha), max_relative = 1e-6);
    let m = tail_mass(&k, 0.0, &[0.3, -0.2], r, &quad()).unwrap().value;
    assert_relative_eq!(m, tau * r.powf(-alpha) / alpha, max_relative = 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn small_moment_grows_with_cutoff(alpha in 0.2f64..1.9, l1 in 0.05f64..0.7, frac in 0.1f64..0.95) {
        let l0 = l1 * frac;
        let g0 = small_jump_moment(&iso(alpha, l0), 0.0, &[0.0], &quad()).unwrap().value;
        let g1 = small_jump_moment(&iso(alpha, l1), 0.0, &[0.0], &quad()).unwrap().value;
        prop_assert!(g0 <= g1);
    }

    #[test]
    fn tail_mass_decreases(alpha in 0.2f64..1.9, r in 0.5f64..50.0, factor in 1.01f64..10.0, x in -20.0f64..20.0) {
        let k = example_i(alpha);
        let a = tail_mass(&k, 0.0, &[x], r, &quad()).unwrap().value;
        let b = tail_mass(&k, 0.0, &[x], r * factor, &quad()).unwrap().value;
        prop_assert!(b <= a);
    }

    #[test]
    fn symmetric_domain_is_smaller(alpha in 0.2f64..1.9, x in -100.0f64..100.0) {
        let k = example_i(alpha);
        let sym = log_tail_functional(&k, 0.0, &[x], &quad()).unwrap().value;
        let full = log_tail_full(&k, 0.0, &[x], &quad()).unwrap().value;
        prop_assert!(sym <= full * (1.0 + 1e-12));
    }

    #[test]
    fn shifted_tail_bound(alpha in 0.2f64..1.9, x in -50.0f64..50.0, y in -50.0f64..50.0) {
        let k = example_i(alpha);
        let h = shifted_log_tail(&k, 0.0, &[x], &[y], &quad()).unwrap().value;
        let hbar = log_tail_full(&k, 0.0, &[x], &quad()).unwrap().value;
        prop_assert!(h <= 2.0 * (1.0 + y.abs()) * hbar);
    }

    #[test]
    fn remark_tail_bound(alpha in 0.2f64..1.9, x in -50.0f64..50.0, big_r in 0.0f64..40.0) {
        let k = example_i(alpha);
        let ell: f64 = 0.5;
        let r = ell.max(x.abs() - big_r);
        let mass = tail_mass(&k, 0.0, &[x], r, &quad()).unwrap().value;
        let hbar = log_tail_full(&k, 0.0, &[x], &quad()).unwrap().value;
        prop_assert!(mass * (1.0 + ell / (1.0 + ell + big_r)).ln() <= hbar * (1.0 + 1e-9));
    }
}
