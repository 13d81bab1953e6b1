//! Pointwise audit of the Lyapunov bound for `V_y(x) = log(1 + |x - y|²)`:
//!
//! `𝓛_t V_y(x) ≤ 2[(|a| + ⟨x-y, b⟩⁺ + g^ν)/(1 + |x-y|²) + 2 H^ν(x, y)]`.

use serde::Serialize;

use crate::coefficients::CoefficientField;
use crate::error::Result;
use crate::levy::{log_tail_with, shell, shell_capped, small_jump_moment_with, LevyKernel, Probe, ProbeGrid};
use crate::matrix::Matrix;
use crate::quadrature::{inner_extrapolation, outer_doubling, Estimate, QuadratureSpec, Rules};
use crate::scalar::{distance, dot, lit, norm, to_f64, Real};

/// `V_y` with its closed-form gradient and Hessian.
#[derive(Clone, Debug)]
pub struct LogLyapunov<T> {
    pub y: Vec<T>,
}

impl<T: Real> LogLyapunov<T> {
    pub fn new(y: Vec<T>) -> Self {
        Self { y }
    }

    pub fn value(&self, x: &[T]) -> T {
        let r2 = x.iter().zip(&self.y).fold(T::zero(), |a, (&p, &q)| a + (p - q) * (p - q));
        r2.ln_1p()
    }

    pub fn jet(&self, x: &[T]) -> (T, Vec<T>, Matrix<T>) {
        let u: Vec<T> = x.iter().zip(&self.y).map(|(&p, &q)| p - q).collect();
        let q = T::one() + dot(&u, &u);
        let two: T = lit(2.0);
        let grad = u.iter().map(|&c| two * c / q).collect();
        let mut h = Matrix::outer(&u, &u).scale(-lit::<T>(4.0) / (q * q));
        h.add_assign_scaled(&Matrix::identity(u.len()), two / q);
        (q.ln(), grad, h)
    }
}

/// Largest violation of the Lyapunov bound over a probe grid.
#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub max_violation: f64,
    pub worst_probe: Probe,
    pub lhs_at_worst: f64,
    pub rhs_at_worst: f64,
    /// Largest quadrature error estimate among the probes.
    pub max_error: f64,
    pub probes: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// `𝓝_t V_y(x)`: inner second-moment surrogate, compensated shells on
/// `[δ, ℓ]`, and outer-radius doubling for the logarithmically growing part.
pub fn jump_part<T: Real, K: LevyKernel<T> + ?Sized>(
    k: &K,
    v: &LogLyapunov<T>,
    t: T,
    x: &[T],
    rules: &Rules<T>,
) -> Result<Estimate<T>> {
    if k.is_zero() {
        return Ok(Estimate::zero());
    }
    let ell = k.cutoff();
    let delta = ell * lit(rules.spec.inner_fraction);
    let (v0, g0, h0) = v.jet(x);
    let sep = distance(x, &v.y);
    let mut breaks = k.radial_breakpoints();
    breaks.push(sep);
    let mut y = vec![T::zero(); x.len()];
    let mut shift = |z: &[T]| {
        for ((b, &xi), &zi) in y.iter_mut().zip(x).zip(z) {
            *b = xi + zi;
        }
        v.value(&y) - v0
    };
    let inner = match k.inner_second_moment(t, x, delta) {
        Some(m) => Estimate::exact(h0.contract(&m) * lit(0.5)),
        None => inner_extrapolation(delta, |a, b| {
            shell(rules, a, b, &breaks, |z| (shift(z) - dot(z, &g0)) * k.density(t, x, z))
        })?,
    };
    let small = shell_capped(rules, delta, ell, &breaks, rules.linear_panel, |z| {
        (shift(z) - dot(z, &g0)) * k.density(t, x, z)
    });
    let fine_until = (sep + T::one()) * lit(2.0);
    let big = outer_doubling(
        ell,
        ell + ell,
        lit(rules.spec.outer_rel_tol),
        rules.spec.max_doublings,
        |a, b| {
            if a < fine_until {
                shell_capped(rules, a, b, &breaks, rules.linear_panel, |z| shift(z) * k.density(t, x, z))
            } else {
                shell(rules, a, b, &breaks, |z| shift(z) * k.density(t, x, z))
            }
        },
    )?;
    Ok(Estimate { value: inner.value + small + big.value, error: inner.error + big.error })
}

/// `(𝓛_t V_y(x), right-hand side)` at one point.
pub fn lyapunov_sides<T: Real, K: LevyKernel<T> + ?Sized>(
    c: &CoefficientField<T>,
    k: &K,
    v: &LogLyapunov<T>,
    t: T,
    x: &[T],
    rules: &Rules<T>,
) -> Result<(Estimate<T>, Estimate<T>)> {
    let (_, grad, hess) = v.jet(x);
    let u: Vec<T> = x.iter().zip(&v.y).map(|(&p, &q)| p - q).collect();
    let q = T::one() + dot(&u, &u);
    let (mut local, mut a_norm, mut ub) = (T::zero(), T::zero(), T::zero());
    if c.has_diffusion() {
        let a = c.diffusion(t, x);
        local = local + a.contract(&hess);
        a_norm = a.trace_norm();
    }
    if c.has_drift() {
        let b = c.drift(t, x);
        local = local + dot(&b, &grad);
        ub = dot(&u, &b).max(T::zero());
    }
    let lhs = jump_part(k, v, t, x, rules)?.plus(Estimate::exact(local));
    let (g, h) = if k.is_zero() {
        (Estimate::zero(), Estimate::zero())
    } else {
        (
            small_jump_moment_with(k, t, x, rules)?,
            log_tail_with(k, t, x, T::one() + norm(&u), k.cutoff(), rules)?,
        )
    };
    let two: T = lit(2.0);
    let rhs = Estimate {
        value: two * ((a_norm + ub + g.value) / q + two * h.value),
        error: two * (g.error / q + two * h.error),
    };
    Ok((lhs, rhs))
}

/// Maximum of `𝓛V_y - RHS` over the probes; passes when it is at most `tol`.
pub fn lyapunov_bound_audit<T: Real, K: LevyKernel<T> + ?Sized>(
    c: &CoefficientField<T>,
    k: &K,
    y: &[T],
    probes: &ProbeGrid<T>,
    quad: &QuadratureSpec,
    tol: f64,
) -> Result<AuditReport> {
    let rules = Rules::new(quad, y.len())?;
    let v = LogLyapunov::new(y.to_vec());
    let mut report = AuditReport {
        max_violation: f64::NEG_INFINITY,
        worst_probe: Probe { t: 0.0, x: vec![] },
        lhs_at_worst: 0.0,
        rhs_at_worst: 0.0,
        max_error: 0.0,
        probes: 0,
        tolerance: tol,
        passed: true,
    };
    for (t, x) in probes.iter() {
        let (lhs, rhs) = lyapunov_sides(c, k, &v, t, x, &rules)?;
        let gap = to_f64(lhs.value - rhs.value);
        report.probes += 1;
        report.max_error = report.max_error.max(to_f64(lhs.error + rhs.error));
        if gap > report.max_violation {
            report.max_violation = gap;
            report.worst_probe = Probe { t: to_f64(t), x: x.iter().map(|&c| to_f64(c)).collect() };
            report.lhs_at_worst = to_f64(lhs.value);
            report.rhs_at_worst = to_f64(rhs.value);
        }
    }
    report.passed = report.max_violation <= tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_derivatives() {
        let v = LogLyapunov::new(vec![0.3_f64, -0.2]);
        let x = [1.1_f64, 0.4];
        let (_, g, h) = v.jet(&x);
        let e = 1e-5;
        for i in 0..2 {
            let mut p = x;
            let mut m = x;
            p[i] += e;
            m[i] -= e;
            assert!(((v.value(&p) - v.value(&m)) / (2.0 * e) - g[i]).abs() < 1e-8);
            let (_, gp, _) = v.jet(&p);
            let (_, gm, _) = v.jet(&m);
            for j in 0..2 {
                assert!(((gp[j] - gm[j]) / (2.0 * e) - h.get(i, j)).abs() < 1e-7);
            }
        }
    }
}
