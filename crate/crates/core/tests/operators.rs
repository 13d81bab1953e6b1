use std::sync::Arc;

use approx::assert_relative_eq;
use levyfp::coefficients::CoefficientField;
use levyfp::levy::{small_jump_moment, LevyKernel, ProbeGrid, RadialRestriction, StableLike, ZeroKernel};
use levyfp::matrix::Matrix;
use levyfp::operators::{
    apply_a, apply_b, apply_n, apply_n_pi, frac_laplacian_spectral, lyapunov_bound_audit, lyapunov_sides,
    LogLyapunov, PeriodicGrid, Quadratic, TestFunction, TruncationPi,
};
use levyfp::quadrature::{QuadratureSpec, Rules};
use levyfp::sde::{StableNormalization, StableParams};
use proptest::prelude::*;

fn quad() -> QuadratureSpec {
    QuadratureSpec::default()
}

fn fd_hessian(f: &TestFunction<f64>, x: &[f64], h: f64) -> Matrix<f64> {
    let d = x.len();
    let mut m = Matrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            let at = |si: f64, sj: f64| {
                let mut y = x.to_vec();
                y[i] += si * h;
                y[j] += sj * h;
                f.value(&y)
            };
            m.set(i, j, (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h));
        }
    }
    m
}

fn fd_gradient(f: &TestFunction<f64>, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let (mut p, mut q) = (x.to_vec(), x.to_vec());
            p[i] += h;
            q[i] -= h;
            (f.value(&p) - f.value(&q)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn diffusion_part_examples() {
    let c = CoefficientField::constant_diffusion(2, 1.0);
    // ½xᵀQx with Q = diag(2, 0), cut off far away
    let q = Arc::new(Quadratic { q: Matrix::from_rows(2, vec![2.0, 0.0, 0.0, 0.0]), p: vec![0.0, 0.0], c: 0.0 });
    let f = TestFunction::cutoff_of(q, 3.0, 5.0, "x1^2");
    assert_relative_eq!(apply_a(&c, &f, 0.0, &[0.5, -1.0]), 2.0, max_relative = 1e-12);
    assert_eq!(apply_a(&c, &f, 0.0, &[5.5, 0.0]), 0.0);
}

#[test]
fn diffusion_part_matches_finite_differences() {
    let c = CoefficientField::zero(2).with_diffusion(Arc::new(|_, x: &[f64]| {
        Matrix::identity(2).scale(0.5 * (1.0 + x[0] * x[0] + x[1] * x[1]))
    }));
    let f = TestFunction::modulated_bump(vec![0.3, -0.2], 2.0, vec![1.0, 0.5], 0.4);
    for x in [[0.1, 0.2], [-1.0, 0.7], [1.2, -1.1]] {
        let exact = apply_a(&c, &f, 0.0, &x);
        let oracle = c.diffusion(0.0, &x).contract(&fd_hessian(&f, &x, 1e-4));
        assert!((exact - oracle).abs() < 1e-6, "{exact} vs {oracle}");
    }
}

#[test]
fn drift_part_examples() {
    let f = TestFunction::bump(vec![0.0, 0.0], 1.0);
    let x = [0.3, 0.4];
    assert_eq!(apply_b(&CoefficientField::zero(2), &f, 0.0, &x), 0.0);
    let e1 = CoefficientField::zero(2).with_drift(Arc::new(|_, _: &[f64]| vec![1.0, 0.0]));
    // ∂₁ exp(1 - 1/(1-r²)) = -2x₁/(1-r²)² · f
    let r2: f64 = 0.25;
    let exact = -2.0 * 0.3 / ((1.0 - r2) * (1.0 - r2)) * (1.0 - 1.0 / (1.0 - r2)).exp();
    assert_relative_eq!(apply_b(&e1, &f, 0.0, &x), exact, max_relative = 1e-12);
}

#[test]
fn quadratic_compensation_gives_small_moment() {
    let base: Arc<dyn LevyKernel<f64>> = Arc::new(StableLike::isotropic(1, 1.3, 0.5, 1.0).unwrap());
    let small = RadialRestriction::small_jumps(base);
    let q = Arc::new(Quadratic { q: Matrix::from_rows(1, vec![2.0]), p: vec![0.0], c: 0.0 });
    let f = TestFunction::cutoff_of(q, 3.0, 5.0, "x^2");
    let n = apply_n(&small, &f, 0.0, &[0.7], &quad()).unwrap().value;
    let g = small_jump_moment(&small, 0.0, &[0.7], &quad()).unwrap().value;
    assert_relative_eq!(n, g, max_relative = 1e-8);
    let zero = ZeroKernel::new(1, 0.5);
    assert_eq!(apply_n(&zero, &f, 0.0, &[0.7], &quad()).unwrap().value, 0.0);
}

#[test]
fn jump_part_matches_spectral_fractional_laplacian() {
    let alpha = 1.5;
    let k = StableParams::new(alpha, 1, StableNormalization::FractionalLaplacian).unwrap().kernel(0.5).unwrap();
    let f = TestFunction::smooth_bump(1, 0.4, 2.0, 3.0);
    let grid = PeriodicGrid::centered(128.0, 1024).unwrap();
    let u: Vec<f64> = grid.nodes().iter().map(|&x| f.value(&[x])).collect();
    let spectral = frac_laplacian_spectral(&u, 128.0, alpha).unwrap();
    for j in [512, 515, 520, 530, 560] {
        let x = grid.x(j);
        let n = apply_n(&k, &f, 0.0, &[x], &quad()).unwrap().value;
        assert!((n - spectral[j]).abs() < 1e-4, "x={x}: {n} vs {}", spectral[j]);
    }
}

#[test]
fn spectral_eigenfunctions() {
    let grid = PeriodicGrid::centered(2.0 * std::f64::consts::PI, 64).unwrap();
    let nodes = grid.nodes();
    let flat = frac_laplacian_spectral(&vec![3.0; 64], grid.width, 0.7).unwrap();
    assert!(flat.iter().all(|v| v.abs() < 1e-12));
    for (k, alpha) in [(1.0, 0.5), (3.0, 1.2), (5.0, 1.9)] {
        let u: Vec<f64> = nodes.iter().map(|&x| (k * x).cos()).collect();
        let v = frac_laplacian_spectral(&u, grid.width, alpha).unwrap();
        for (a, b) in v.iter().zip(&u) {
            assert!((a + k.powf(alpha) * b).abs() < 1e-10);
        }
    }
    assert!(frac_laplacian_spectral(&[1.0; 8], 1.0, 1.0).is_err());
}

#[test]
fn symmetric_kernels_have_no_drift_correction() {
    let k = StableLike::state_dependent(1, 0.9, 0.5, Arc::new(|_, x: &[f64]| 1.0 + x[0].abs())).unwrap();
    let f = TestFunction::modulated_bump(vec![0.2], 2.0, vec![1.5], 0.1);
    let pi = TruncationPi::new(0.5);
    let split = apply_n_pi(&k, &f, 0.0, &[0.4], &pi, &quad()).unwrap();
    assert!(split.drift_correction[0].abs() < 1e-12);
    // supported in B_ℓ: π(z) = z there
    let small = RadialRestriction::small_jumps(Arc::new(k.clone()) as Arc<dyn LevyKernel<f64>>);
    let split = apply_n_pi(&small, &f, 0.0, &[0.4], &pi, &quad()).unwrap();
    let plain = apply_n(&small, &f, 0.0, &[0.4], &quad()).unwrap().value;
    assert_eq!(split.projected, 0.0);
    assert_relative_eq!(split.value.value, plain, max_relative = 1e-10);
}

fn skewed_kernel() -> StableLike<f64> {
    StableLike::general(
        1,
        1.2,
        0.5,
        Arc::new(|_, x: &[f64], z: &[f64]| 1.0 + 0.5 * (z[0] + x[0]).tanh()),
        Arc::new(|_, _: &[f64]| 1.5),
        false,
    )
    .unwrap()
}

#[test]
fn lyapunov_audit_examples() {
    let probes = ProbeGrid::uniform_1d(vec![0.0], -20.0, 20.0, 81);
    let zero = ZeroKernel::new(1, 0.5);
    let rules = Rules::new(&quad(), 1).unwrap();
    let v = LogLyapunov::new(vec![0.0]);
    let c = CoefficientField::constant_diffusion(1, 1.0);
    for (_, x) in probes.iter() {
        let (lhs, _) = lyapunov_sides(&c, &zero, &v, 0.0, x, &rules).unwrap();
        assert!(lhs.value <= 2.0 / (1.0 + x[0] * x[0]) + 1e-14);
    }
    let r = lyapunov_bound_audit(&CoefficientField::zero(1), &zero, &[0.0], &probes, &quad(), 0.0).unwrap();
    assert_eq!(r.max_violation, 0.0);
    assert!(r.passed);
    let r = lyapunov_bound_audit(&c, &skewed_kernel(), &[0.7], &probes, &quad(), 1e-8).unwrap();
    assert!(r.passed, "{}", r.max_violation);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn drift_part_matches_finite_differences(b0 in -3.0f64..3.0, b1 in -3.0f64..3.0, x0 in -1.5f64..1.5, x1 in -1.5f64..1.5) {
        let c = CoefficientField::zero(2).with_drift(Arc::new(move |_, x: &[f64]| vec![b0 + x[1], b1 * x[0]]));
        let f = TestFunction::modulated_bump(vec![0.1, 0.1], 2.0, vec![0.7, -1.1], 0.2);
        let x = [x0, x1];
        let b = c.drift(0.0, &x);
        let g = fd_gradient(&f, &x, 1e-5);
        prop_assert!((apply_b(&c, &f, 0.0, &x) - (b[0] * g[0] + b[1] * g[1])).abs() < 1e-6);
    }

    #[test]
    fn operators_are_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, x in -3.0f64..3.0) {
        let k = skewed_kernel();
        let f = TestFunction::bump(vec![0.5], 1.5);
        let g = TestFunction::modulated_bump(vec![-0.5], 2.0, vec![1.3], 0.0);
        let h = TestFunction::linear_combination(a, &f, b, &g);
        let c = CoefficientField::zero(1)
            .with_diffusion(Arc::new(|_, x: &[f64]| Matrix::from_rows(1, vec![1.0 + x[0] * x[0]])))
            .with_drift(Arc::new(|_, x: &[f64]| vec![-x[0]]));
        let lin = |op: &dyn Fn(&TestFunction<f64>) -> f64| (op(&h) - a * op(&f) - b * op(&g)).abs();
        prop_assert!(lin(&|u| apply_a(&c, u, 0.0, &[x])) < 1e-12);
        prop_assert!(lin(&|u| apply_b(&c, u, 0.0, &[x])) < 1e-12);
        let n = |u: &TestFunction<f64>| apply_n(&k, u, 0.0, &[x], &quad().refined(4.0)).unwrap();
        let (nh, nf, ng) = (n(&h), n(&f), n(&g));
        let bound = nh.error + a.abs() * nf.error + b.abs() * ng.error + 1e-10;
        prop_assert!((nh.value - a * nf.value - b * ng.value).abs() <= bound);
    }

    #[test]
    fn translation_covariance(h in -2.0f64..2.0, x in -2.0f64..2.0) {
        let k = StableLike::isotropic(1, 0.8, 0.5, 1.0).unwrap();
        let f = TestFunction::modulated_bump(vec![0.0], 1.5, vec![2.0], 0.3);
        let shifted = f.translated(&[h]);
        let a = apply_n(&k, &shifted, 0.0, &[x], &quad()).unwrap();
        let b = apply_n(&k, &f, 0.0, &[x + h], &quad()).unwrap();
        prop_assert!((a.value - b.value).abs() <= 1e-8 + a.error + b.error);
    }

    #[test]
    fn inner_radius_halving_is_within_error(x in -2.0f64..2.0, alpha in 0.3f64..1.9) {
        let k = StableLike::general(
            1,
            alpha,
            0.5,
            Arc::new(|_, _: &[f64], z: &[f64]| 1.0 + 0.3 * z[0].sin()),
            Arc::new(|_, _: &[f64]| 1.3),
            false,
        )
        .unwrap();
        let f = TestFunction::modulated_bump(vec![0.0], 1.5, vec![1.0], 0.0);
        let q = quad();
        let finer = QuadratureSpec { inner_fraction: q.inner_fraction / 2.0, ..q.clone() };
        let a = apply_n(&k, &f, 0.0, &[x], &q).unwrap();
        let b = apply_n(&k, &f, 0.0, &[x], &finer).unwrap();
        prop_assert!((a.value - b.value).abs() <= a.error.max(b.error) + 1e-12, "{} vs {} (err {})", a.value, b.value, a.error);
    }

    #[test]
    fn pi_decomposition_identity(x in -3.0f64..3.0, y0 in -1.0f64..1.0) {
        let k = skewed_kernel();
        let f = TestFunction::modulated_bump(vec![y0], 2.0, vec![1.7], 0.5);
        let pi = TruncationPi::new(0.5);
        let b = CoefficientField::zero(1).with_drift(Arc::new(|_, x: &[f64]| vec![0.5 - x[0]]));
        let split = apply_n_pi(&k, &f, 0.0, &[x], &pi, &quad()).unwrap();
        let plain = apply_n(&k, &f, 0.0, &[x], &quad()).unwrap();
        let b_tilde = CoefficientField::zero(1)
            .with_drift(Arc::new(move |_, x: &[f64]| vec![0.5 - x[0] + split.drift_correction[0]]));
        let lhs = apply_b(&b, &f, 0.0, &[x]) + plain.value;
        let rhs = apply_b(&b_tilde, &f, 0.0, &[x]) + split.value.value;
        prop_assert!((lhs - rhs).abs() < 1e-6, "{lhs} vs {rhs}");
    }

    #[test]
    fn test_functions_vanish_outside_support(r in 1.0f64..5.0, dir in -1.0f64..1.0) {
        let f = TestFunction::modulated_bump(vec![0.3, -0.4], 1.2, vec![1.0, 2.0], 0.1);
        let theta = dir * std::f64::consts::PI;
        let rad = f.support_radius() + r;
        let x = [rad * theta.cos(), rad * theta.sin()];
        prop_assert_eq!(f.value(&x), 0.0);
        prop_assert!(f.gradient(&x).iter().all(|&g| g == 0.0));
        prop_assert!(f.hessian(&x).as_slice().iter().all(|&h| h == 0.0));
    }
}
