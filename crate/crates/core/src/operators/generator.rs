//! `𝓛_t f = 𝓐_t f + 𝓑_t f + 𝓝_t f` on compactly supported test functions.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::Serialize;

use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::levy::{shell, shell_capped, tail_mass_with, LevyKernel};
use crate::matrix::Matrix;
use crate::operators::testfn::TestFunction;
use crate::operators::truncation::TruncationPi;
use crate::quadrature::{inner_extrapolation, Estimate, QuadratureSpec, Rules};
use crate::scalar::{dot, lit, norm, to_f64, Real};

/// `𝓐_t f(x) = tr(a_t(x) ∇²f(x))`
pub fn apply_a<T: Real>(c: &CoefficientField<T>, f: &TestFunction<T>, t: T, x: &[T]) -> T {
    if !c.has_diffusion() {
        return T::zero();
    }
    c.diffusion(t, x).contract(&f.hessian(x))
}

/// `𝓑_t f(x) = b_t(x)·∇f(x)`
pub fn apply_b<T: Real>(c: &CoefficientField<T>, f: &TestFunction<T>, t: T, x: &[T]) -> T {
    if !c.has_drift() {
        return T::zero();
    }
    dot(&c.drift(t, x), &f.gradient(x))
}

/// `𝓝_t f(x) = ∫ [f(x+z) - f(x) - z·∇f(x) 1_{|z|≤ℓ}] ν_{t,x}(dz)`.
pub fn apply_n<T: Real, K: LevyKernel<T> + ?Sized>(
    k: &K,
    f: &TestFunction<T>,
    t: T,
    x: &[T],
    quad: &QuadratureSpec,
) -> Result<Estimate<T>> {
    JumpOperator::new(quad, f.dim())?.apply(k, f, t, x)
}

/// The `π`-compensated jump part; see [`PiSplit`].
pub fn apply_n_pi<T: Real, K: LevyKernel<T> + ?Sized>(
    k: &K,
    f: &TestFunction<T>,
    t: T,
    x: &[T],
    pi: &TruncationPi<T>,
    quad: &QuadratureSpec,
) -> Result<PiSplit<T>> {
    JumpOperator::new(quad, f.dim())?.apply_pi(k, f, t, x, pi)
}

/// `∫Θ^π_f dν` together with the drift correction
/// `∫(π(z) - z 1_{|z|≤ℓ}) ν(dz)` and its projection on `∇f(x)`, so that
/// `𝓝f = value + projected`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PiSplit<T> {
    pub value: Estimate<T>,
    pub drift_correction: Vec<T>,
    pub projected: T,
}

/// Prepared quadrature for repeated jump-operator evaluations.
#[derive(Clone, Debug)]
pub struct JumpOperator<T> {
    rules: Rules<T>,
    tolerance: Option<T>,
}

enum Compensator<'a, T> {
    Indicator,
    Smooth(&'a TruncationPi<T>),
}

impl<T: Real> JumpOperator<T> {
    pub fn new(quad: &QuadratureSpec, dim: usize) -> Result<Self> {
        Ok(Self { rules: Rules::new(quad, dim)?, tolerance: None })
    }

    /// Fail with `TailBoundTooLoose` whenever the error bound exceeds `tol`.
    pub fn with_tolerance(mut self, tol: T) -> Self {
        self.tolerance = Some(tol);
        self
    }

    pub fn rules(&self) -> &Rules<T> {
        &self.rules
    }

    pub fn apply<K: LevyKernel<T> + ?Sized>(&self, k: &K, f: &TestFunction<T>, t: T, x: &[T]) -> Result<Estimate<T>> {
        self.integrate(k, t, x, f, x, Compensator::Indicator)
    }

    /// `∫ Θ_f(x; z) ν_{s,y}(dz)`: the kernel is frozen at `(s, y)` while the
    /// integrand is taken at `x`.
    pub fn apply_frozen<K: LevyKernel<T> + ?Sized>(
        &self,
        k: &K,
        s: T,
        y: &[T],
        f: &TestFunction<T>,
        x: &[T],
    ) -> Result<Estimate<T>> {
        self.integrate(k, s, y, f, x, Compensator::Indicator)
    }

    pub fn apply_pi<K: LevyKernel<T> + ?Sized>(
        &self,
        k: &K,
        f: &TestFunction<T>,
        t: T,
        x: &[T],
        pi: &TruncationPi<T>,
    ) -> Result<PiSplit<T>> {
        let value = self.integrate(k, t, x, f, x, Compensator::Smooth(pi))?;
        let drift_correction = self.drift_correction(k, t, x, pi)?;
        let projected = dot(&drift_correction, &f.gradient(x));
        Ok(PiSplit { value, drift_correction, projected })
    }

    /// `∫_{ℓ<|z|<2ℓ} π(z) ν_{t,x}(dz)`, which equals `∫(π(z) - z 1_{|z|≤ℓ}) ν(dz)`.
    pub fn drift_correction<K: LevyKernel<T> + ?Sized>(
        &self,
        k: &K,
        t: T,
        x: &[T],
        pi: &TruncationPi<T>,
    ) -> Result<Vec<T>> {
        let d = k.dim();
        if k.is_zero() {
            return Ok(vec![T::zero(); d]);
        }
        let ell = k.cutoff();
        let hi = pi.ell() + pi.ell();
        let lo = ell.min(hi);
        let breaks = k.radial_breakpoints();
        Ok((0..d)
            .map(|i| {
                shell_capped(&self.rules, lo, hi, &breaks, self.rules.linear_panel, |z| {
                    let c = pi.profile(norm(z));
                    let comp = if norm(z) <= ell { T::one() } else { T::zero() };
                    (c - comp) * z[i] * k.density(t, x, z)
                })
            })
            .collect())
    }

    fn integrate<K: LevyKernel<T> + ?Sized>(
        &self,
        k: &K,
        s: T,
        y: &[T],
        f: &TestFunction<T>,
        x: &[T],
        comp: Compensator<'_, T>,
    ) -> Result<Estimate<T>> {
        let d = f.dim();
        if k.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: k.dim() });
        }
        if k.is_zero() {
            return Ok(Estimate::zero());
        }
        let ell = k.cutoff();
        let delta = ell * lit(self.rules.spec.inner_fraction);
        let (f0, g0, h0) = f.jet(x);
        let rx = norm(x);
        let support = f.support_radius();
        // below r_taylor the increment cancels to rounding; ½ zᵀ∇²f(x + z/3) z
        // agrees with it to third order
        let r_taylor = T::epsilon().powf(lit(0.25)) * support.min(ell);
        let mut y_buf = vec![T::zero(); d];
        let mut theta = |z: &[T]| {
            let r = norm(z);
            if r < r_taylor {
                for ((b, &xi), &zi) in y_buf.iter_mut().zip(x).zip(z) {
                    *b = xi + zi / lit(3.0);
                }
                let h = f.hessian(&y_buf);
                let mut q = T::zero();
                for i in 0..d {
                    for j in 0..d {
                        q = q + z[i] * h.get(i, j) * z[j];
                    }
                }
                return q * lit(0.5);
            }
            for ((b, &xi), &zi) in y_buf.iter_mut().zip(x).zip(z) {
                *b = xi + zi;
            }
            let comp = if r <= ell {
                dot(z, &g0)
            } else {
                match comp {
                    Compensator::Indicator => T::zero(),
                    Compensator::Smooth(pi) => pi.dot(z, &g0),
                }
            };
            f.value(&y_buf) - f0 - comp
        };

        let inner = match k.inner_second_moment(s, y, delta) {
            Some(m) => {
                let value = h0.contract(&m) * lit(0.5);
                let variation = hessian_variation(f, x, &h0, delta);
                Estimate { value, error: m.trace_norm() * variation * lit(0.5) }
            }
            None => {
                let breaks = k.radial_breakpoints();
                inner_extrapolation(delta, |a, b| {
                    shell(&self.rules, a, b, &breaks, |z| theta(z) * k.density(s, y, z))
                })?
            }
        };

        let mut breaks = k.radial_breakpoints();
        breaks.push(ell);
        let mut r_big = (rx + support).max(ell);
        if let Compensator::Smooth(pi) = comp {
            let two = pi.ell() + pi.ell();
            breaks.push(pi.ell());
            breaks.push(two);
            r_big = r_big.max(two);
        }
        breaks.push((support - rx).abs());
        // off the support only jumps landing in it contribute
        let lo = if rx >= support { (rx - support).max(delta) } else { delta };
        let body = shell_capped(&self.rules, lo, r_big, &breaks, self.rules.linear_panel, |z| {
            theta(z) * k.density(s, y, z)
        });
        let tail = if f0 != T::zero() {
            tail_mass_with(k, s, y, r_big, &self.rules)?.scaled(-f0)
        } else {
            Estimate::zero()
        };
        let total = inner.plus(Estimate::exact(body)).plus(tail);
        if !total.value.is_finite() {
            return Err(Error::NonIntegrable("jump integral is not finite".into()));
        }
        if let Some(tol) = self.tolerance {
            if total.error > tol {
                return Err(Error::TailBoundTooLoose {
                    bound: total.error.to_f64().unwrap_or(f64::NAN),
                    tol: tol.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(total)
    }
}

/// `max_{i,±} ‖∇²f(x ± δ e_i) - ∇²f(x)‖_F`, a proxy for the Hessian's
/// oscillation on the inner ball.
fn hessian_variation<T: Real>(f: &TestFunction<T>, x: &[T], h0: &Matrix<T>, delta: T) -> T {
    let mut worst = T::zero();
    let mut p = x.to_vec();
    for i in 0..x.len() {
        for sgn in [T::one(), -T::one()] {
            p[i] = x[i] + sgn * delta;
            let h = f.hessian(&p);
            let diff = h
                .as_slice()
                .iter()
                .zip(h0.as_slice())
                .fold(T::zero(), |a, (&u, &v)| a + (u - v) * (u - v))
                .sqrt();
            worst = worst.max(diff);
        }
        p[i] = x[i];
    }
    worst
}

/// `𝓛_t f(x)` for a coefficient field and kernel.
pub fn apply_generator<T: Real, K: LevyKernel<T> + ?Sized>(
    c: &CoefficientField<T>,
    k: &K,
    op: &JumpOperator<T>,
    f: &TestFunction<T>,
    t: T,
    x: &[T],
) -> Result<Estimate<T>> {
    let local = apply_a(c, f, t, x) + apply_b(c, f, t, x);
    Ok(op.apply(k, f, t, x)?.plus(Estimate::exact(local)))
}

/// Anything that can evaluate `𝓛_t f(x)` for test functions.
pub trait Generator<T: Real>: Send + Sync {
    fn dim(&self) -> usize;

    fn apply(&self, f: &TestFunction<T>, t: T, x: &[T]) -> Result<Estimate<T>>;
}

type CacheKey = (usize, Vec<u64>);

/// `𝓐 + 𝓑 + 𝓝` for a coefficient field and a kernel. For kernels of the
/// form `c(t,x) ν_ref` the reference jump integral is cached per point.
pub struct StandardGenerator<T: Real> {
    coeffs: CoefficientField<T>,
    kernel: Arc<dyn LevyKernel<T>>,
    reference: Option<Arc<dyn LevyKernel<T>>>,
    op: JumpOperator<T>,
    cache: Mutex<HashMap<CacheKey, Estimate<T>>>,
}

impl<T: Real> StandardGenerator<T> {
    pub fn new(coeffs: CoefficientField<T>, kernel: Arc<dyn LevyKernel<T>>, quad: &QuadratureSpec) -> Result<Self> {
        if coeffs.dim() != kernel.dim() {
            return Err(Error::DimensionMismatch { expected: coeffs.dim(), got: kernel.dim() });
        }
        let reference = kernel.reference_kernel();
        Ok(Self {
            op: JumpOperator::new(quad, coeffs.dim())?,
            coeffs,
            kernel,
            reference,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn coefficients(&self) -> &CoefficientField<T> {
        &self.coeffs
    }

    pub fn kernel(&self) -> &Arc<dyn LevyKernel<T>> {
        &self.kernel
    }

    pub fn operator(&self) -> &JumpOperator<T> {
        &self.op
    }

    /// `𝓝_ref f(x)`, memoized.
    pub fn reference_jump(&self, reference: &dyn LevyKernel<T>, f: &TestFunction<T>, x: &[T]) -> Result<Estimate<T>> {
        let key = (f.id(), x.iter().map(|c| to_f64(*c).to_bits()).collect());
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            return Ok(*v);
        }
        let v = self.op.apply(reference, f, T::zero(), x)?;
        self.cache.lock().unwrap().insert(key, v);
        Ok(v)
    }

    /// The jump part alone.
    pub fn jump(&self, f: &TestFunction<T>, t: T, x: &[T]) -> Result<Estimate<T>> {
        if self.kernel.is_zero() {
            return Ok(Estimate::zero());
        }
        match (&self.reference, self.kernel.state_factor(t, x)) {
            (Some(r), Some(c)) => {
                if c == T::zero() {
                    return Ok(Estimate::zero());
                }
                Ok(self.reference_jump(r.as_ref(), f, x)?.scaled(c))
            }
            _ => self.op.apply(self.kernel.as_ref(), f, t, x),
        }
    }
}

impl<T: Real> Generator<T> for StandardGenerator<T> {
    fn dim(&self) -> usize {
        self.coeffs.dim()
    }

    fn apply(&self, f: &TestFunction<T>, t: T, x: &[T]) -> Result<Estimate<T>> {
        let local = apply_a(&self.coeffs, f, t, x) + apply_b(&self.coeffs, f, t, x);
        Ok(self.jump(f, t, x)?.plus(Estimate::exact(local)))
    }
}
