//! Time-space indexed Lévy kernels `ν_{t,x}(dz)`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::quadrature::{sphere_area, SphereRule};
use crate::scalar::{lit, norm, to_f64, Real};

/// `(t, x) ↦ value`
pub type StateFn<T> = Arc<dyn Fn(T, &[T]) -> T + Send + Sync>;
/// `(t, x, z) ↦ value`
pub type JumpFn<T> = Arc<dyn Fn(T, &[T], &[T]) -> T + Send + Sync>;

/// A family of Lévy measures `ν_{t,x}` on `ℝ^d \ {0}` that is absolutely
/// continuous with respect to Lebesgue measure.
///
/// The small-jump part is the density restricted to `|z| < ℓ`; the tail
/// measure `ν_{t,x}(|z| > r)` is obtained by quadrature of the same
/// density (see [`crate::levy::tail_mass`]) and large jumps are drawn with
/// [`LevyKernel::sample_jumps`].
pub trait LevyKernel<T: Real>: Send + Sync {
    fn dim(&self) -> usize;

    /// Small-jump cutoff `ℓ`.
    fn cutoff(&self) -> T;

    /// `ν_{t,x}(A) = ν_{t,x}(-A)` for every `t, x, A`.
    fn is_symmetric(&self) -> bool;

    /// Lebesgue density of `ν_{t,x}` at `z ≠ 0`.
    fn density(&self, t: T, x: &[T], z: &[T]) -> T;

    fn is_zero(&self) -> bool {
        false
    }

    /// `ν_{t,x}` does not depend on `(t, x)`.
    fn is_state_independent(&self) -> bool {
        false
    }

    /// When `ν_{t,x} = c(t,x) ν_ref` for a state independent `ν_ref`,
    /// returns `c(t,x)`; [`LevyKernel::reference_kernel`] returns `ν_ref`.
    fn state_factor(&self, _t: T, _x: &[T]) -> Option<T> {
        None
    }

    fn reference_kernel(&self) -> Option<Arc<dyn LevyKernel<T>>> {
        None
    }

    /// `∫_{|z|<δ} z zᵀ ν_{t,x}(dz)` in closed form, when available.
    fn inner_second_moment(&self, _t: T, _x: &[T], _delta: T) -> Option<Matrix<T>> {
        None
    }

    /// `ν_{t,x}(|z| > r)` in closed form, when available.
    fn closed_tail_mass(&self, _t: T, _x: &[T], _r: T) -> Option<T> {
        None
    }

    /// Radii at which the radial profile has kinks or jumps.
    fn radial_breakpoints(&self) -> Vec<T> {
        Vec::new()
    }

    /// Draws the jumps with `|z| > r_min` arriving during `dt` at state
    /// `(t, x)` (a Poisson configuration, possibly empty).
    fn sample_jumps(&self, _t: T, _x: &[T], _r_min: T, _dt: T, _rng: &mut dyn RngCore) -> Result<Vec<Vec<T>>> {
        Err(Error::InvalidParameter("kernel provides no jump sampler".into()))
    }
}

impl<T: Real> fmt::Debug for dyn LevyKernel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevyKernel")
            .field("dim", &self.dim())
            .field("cutoff", &self.cutoff())
            .field("symmetric", &self.is_symmetric())
            .finish()
    }
}

/// `ν ≡ 0`.
#[derive(Clone, Debug)]
pub struct ZeroKernel<T> {
    dim: usize,
    ell: T,
}

impl<T: Real> ZeroKernel<T> {
    pub fn new(dim: usize, ell: T) -> Self {
        Self { dim, ell }
    }
}

impl<T: Real> LevyKernel<T> for ZeroKernel<T> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn cutoff(&self) -> T {
        self.ell
    }
    fn is_symmetric(&self) -> bool {
        true
    }
    fn density(&self, _t: T, _x: &[T], _z: &[T]) -> T {
        T::zero()
    }
    fn is_zero(&self) -> bool {
        true
    }
    fn is_state_independent(&self) -> bool {
        true
    }
    fn inner_second_moment(&self, _t: T, _x: &[T], _delta: T) -> Option<Matrix<T>> {
        Some(Matrix::zeros(self.dim))
    }
    fn sample_jumps(&self, _t: T, _x: &[T], _r_min: T, _dt: T, _rng: &mut dyn RngCore) -> Result<Vec<Vec<T>>> {
        Ok(Vec::new())
    }
}

/// Jump intensity `κ_t(x, z)` of a stable-like kernel.
#[derive(Clone)]
pub enum Kappa<T> {
    Constant(T),
    /// `κ_t(x)`, independent of the jump direction.
    State(StateFn<T>),
    /// Full `κ_t(x, z)` with a bound `sup_z κ_t(x, z)` used for thinning.
    General { kappa: JumpFn<T>, bound: StateFn<T> },
}

/// `ν_{t,x}(dz) = κ_t(x,z) dz / |z|^{d+α}`.
#[derive(Clone)]
pub struct StableLike<T> {
    dim: usize,
    alpha: T,
    ell: T,
    symmetric: bool,
    kappa: Kappa<T>,
}

impl<T: Real> fmt::Debug for StableLike<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StableLike")
            .field("dim", &self.dim)
            .field("alpha", &self.alpha)
            .field("ell", &self.ell)
            .field("symmetric", &self.symmetric)
            .finish()
    }
}

fn check_common<T: Real>(dim: usize, alpha: T, ell: T) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    if !(alpha > T::zero() && alpha < lit(2.0)) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0,2), got {alpha}")));
    }
    if !(ell > T::zero() && ell <= T::one() / lit::<T>(2.0).sqrt()) {
        return Err(Error::InvalidParameter(format!("cutoff must lie in (0, 1/sqrt 2], got {ell}")));
    }
    Ok(())
}

impl<T: Real> StableLike<T> {
    /// Isotropic `c dz/|z|^{d+α}`.
    pub fn isotropic(dim: usize, alpha: T, ell: T, c: T) -> Result<Self> {
        check_common(dim, alpha, ell)?;
        Ok(Self { dim, alpha, ell, symmetric: true, kappa: Kappa::Constant(c) })
    }

    /// `κ_t(x) dz/|z|^{d+α}`: symmetric, direction independent.
    pub fn state_dependent(dim: usize, alpha: T, ell: T, kappa: StateFn<T>) -> Result<Self> {
        check_common(dim, alpha, ell)?;
        Ok(Self { dim, alpha, ell, symmetric: true, kappa: Kappa::State(kappa) })
    }

    /// General `κ_t(x, z)`; `bound(t, x)` must dominate `κ_t(x, ·)`.
    /// `symmetric` asserts `κ_t(x, z) = κ_t(x, -z)`.
    pub fn general(dim: usize, alpha: T, ell: T, kappa: JumpFn<T>, bound: StateFn<T>, symmetric: bool) -> Result<Self> {
        check_common(dim, alpha, ell)?;
        Ok(Self { dim, alpha, ell, symmetric, kappa: Kappa::General { kappa, bound } })
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn kappa(&self) -> &Kappa<T> {
        &self.kappa
    }

    #[inline]
    pub fn kappa_at(&self, t: T, x: &[T], z: &[T]) -> T {
        match &self.kappa {
            Kappa::Constant(c) => *c,
            Kappa::State(f) => f(t, x),
            Kappa::General { kappa, .. } => kappa(t, x, z),
        }
    }

    fn kappa_bound(&self, t: T, x: &[T]) -> T {
        match &self.kappa {
            Kappa::Constant(c) => *c,
            Kappa::State(f) => f(t, x),
            Kappa::General { bound, .. } => bound(t, x),
        }
    }

    /// Checks `κ(z) = κ(-z)` on sampled directions when the kernel claims
    /// symmetry.
    pub fn check_symmetry(&self, t: T, x: &[T]) -> bool {
        if !self.symmetric {
            return true;
        }
        let Kappa::General { kappa, .. } = &self.kappa else {
            return true;
        };
        let Ok(rule) = SphereRule::<T>::new(self.dim, 8) else {
            return false;
        };
        [lit(0.1), lit(0.7), lit(3.0)].iter().all(|&r: &T| {
            rule.iter().all(|(th, _)| {
                let z: Vec<T> = th.iter().map(|&c| c * r).collect();
                let mz: Vec<T> = z.iter().map(|&c| -c).collect();
                let (a, b) = (kappa(t, x, &z), kappa(t, x, &mz));
                (a - b).abs() <= lit::<T>(1e-12) * (T::one() + a.abs())
            })
        })
    }
}

impl<T: Real> LevyKernel<T> for StableLike<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn cutoff(&self) -> T {
        self.ell
    }

    fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    #[inline]
    fn density(&self, t: T, x: &[T], z: &[T]) -> T {
        let r = norm(z);
        if r == T::zero() {
            return T::zero();
        }
        let d: T = lit(self.dim as f64);
        self.kappa_at(t, x, z) * r.powf(-(d + self.alpha))
    }

    fn is_state_independent(&self) -> bool {
        matches!(self.kappa, Kappa::Constant(_))
    }

    fn state_factor(&self, t: T, x: &[T]) -> Option<T> {
        match &self.kappa {
            Kappa::Constant(c) => Some(*c),
            Kappa::State(f) => Some(f(t, x)),
            Kappa::General { .. } => None,
        }
    }

    fn reference_kernel(&self) -> Option<Arc<dyn LevyKernel<T>>> {
        match self.kappa {
            Kappa::General { .. } => None,
            _ => Some(Arc::new(Self { kappa: Kappa::Constant(T::one()), ..self.clone() })),
        }
    }

    fn closed_tail_mass(&self, t: T, x: &[T], r: T) -> Option<T> {
        match self.kappa {
            Kappa::General { .. } => None,
            _ => Some(self.kappa_bound(t, x) * sphere_area::<T>(self.dim) * r.powf(-self.alpha) / self.alpha),
        }
    }

    fn inner_second_moment(&self, t: T, x: &[T], delta: T) -> Option<Matrix<T>> {
        // ∫_0^δ r^{1-α} dr = δ^{2-α}/(2-α)
        let radial = delta.powf(lit::<T>(2.0) - self.alpha) / (lit::<T>(2.0) - self.alpha);
        match &self.kappa {
            Kappa::General { kappa, .. } => {
                let rule = SphereRule::<T>::new(self.dim, 16).ok()?;
                let r_mid = delta * lit(0.5);
                let mut m = Matrix::zeros(self.dim);
                for (th, w) in rule.iter() {
                    let z: Vec<T> = th.iter().map(|&c| c * r_mid).collect();
                    let k = kappa(t, x, &z);
                    m.add_assign_scaled(&Matrix::outer(th, th), w * k * radial);
                }
                Some(m)
            }
            _ => {
                let k = self.kappa_bound(t, x);
                let per_axis = sphere_area::<T>(self.dim) / lit(self.dim as f64);
                Some(Matrix::scaled_identity(self.dim, k * per_axis * radial))
            }
        }
    }

    fn sample_jumps(&self, t: T, x: &[T], r_min: T, dt: T, rng: &mut dyn RngCore) -> Result<Vec<Vec<T>>> {
        let bound = self.kappa_bound(t, x);
        if !(bound > T::zero()) {
            return Ok(Vec::new());
        }
        let alpha = to_f64(self.alpha);
        let rate = to_f64(bound) * sphere_area::<f64>(self.dim) * to_f64(r_min).powf(-alpha) / alpha * to_f64(dt);
        if !rate.is_finite() {
            return Err(Error::InvalidParameter(format!("jump rate not finite: {rate}")));
        }
        let n = if rate > 0.0 {
            Poisson::new(rate).map_err(|e| Error::InvalidParameter(e.to_string()))?.sample(rng) as usize
        } else {
            0
        };
        let mut jumps = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = 1.0 - rng.random::<f64>();
            let r = to_f64(r_min) * u.powf(-1.0 / alpha);
            let dir = uniform_direction(self.dim, rng);
            let z: Vec<T> = dir.iter().map(|&c| lit(c * r)).collect();
            let accept = match &self.kappa {
                Kappa::General { kappa, .. } => to_f64(kappa(t, x, &z)) / to_f64(bound),
                _ => 1.0,
            };
            if accept >= 1.0 || rng.random::<f64>() < accept {
                jumps.push(z);
            }
        }
        Ok(jumps)
    }
}

/// Uniform point on `S^{d-1}`.
pub fn uniform_direction(dim: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    if dim == 1 {
        return vec![if rng.random::<bool>() { 1.0 } else { -1.0 }];
    }
    loop {
        let g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-300 {
            return g.into_iter().map(|v| v / n).collect();
        }
    }
}

/// The base kernel restricted to `lo <= |z| < hi`.
#[derive(Clone)]
pub struct RadialRestriction<T> {
    base: Arc<dyn LevyKernel<T>>,
    lo: T,
    hi: Option<T>,
}

impl<T: Real> RadialRestriction<T> {
    pub fn new(base: Arc<dyn LevyKernel<T>>, lo: T, hi: Option<T>) -> Self {
        Self { base, lo, hi }
    }

    /// Only the jumps with `|z| >= ℓ`.
    pub fn big_jumps(base: Arc<dyn LevyKernel<T>>) -> Self {
        let ell = base.cutoff();
        Self::new(base, ell, None)
    }

    /// Only the jumps with `|z| < ℓ`.
    pub fn small_jumps(base: Arc<dyn LevyKernel<T>>) -> Self {
        let ell = base.cutoff();
        Self::new(base, T::zero(), Some(ell))
    }

    #[inline]
    fn keeps(&self, r: T) -> bool {
        r >= self.lo && self.hi.is_none_or(|h| r < h)
    }
}

impl<T: Real> LevyKernel<T> for RadialRestriction<T> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn cutoff(&self) -> T {
        self.base.cutoff()
    }
    fn is_symmetric(&self) -> bool {
        self.base.is_symmetric()
    }
    fn density(&self, t: T, x: &[T], z: &[T]) -> T {
        if self.keeps(norm(z)) {
            self.base.density(t, x, z)
        } else {
            T::zero()
        }
    }
    fn is_zero(&self) -> bool {
        self.base.is_zero() || self.hi.is_some_and(|h| h <= self.lo)
    }
    fn is_state_independent(&self) -> bool {
        self.base.is_state_independent()
    }
    fn inner_second_moment(&self, t: T, x: &[T], delta: T) -> Option<Matrix<T>> {
        if self.lo >= delta {
            return Some(Matrix::zeros(self.dim()));
        }
        if self.lo == T::zero() && self.hi.is_none_or(|h| h >= delta) {
            return self.base.inner_second_moment(t, x, delta);
        }
        None
    }
    fn radial_breakpoints(&self) -> Vec<T> {
        let mut b = self.base.radial_breakpoints();
        if self.lo > T::zero() {
            b.push(self.lo);
        }
        if let Some(h) = self.hi {
            b.push(h);
        }
        b
    }
    fn sample_jumps(&self, t: T, x: &[T], r_min: T, dt: T, rng: &mut dyn RngCore) -> Result<Vec<Vec<T>>> {
        let jumps = self.base.sample_jumps(t, x, r_min.max(self.lo), dt, rng)?;
        Ok(jumps.into_iter().filter(|z| self.keeps(norm(z))).collect())
    }
}
