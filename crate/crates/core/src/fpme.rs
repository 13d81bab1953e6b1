//! Fractional porous medium equation `∂_t u = Δ^{α/2}(|u|^{m-1} u)` on a
//! periodic box: a linearly stabilized semi-implicit spectral scheme.

use std::io::Write;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftNum;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::{StableLike, StateFn};
use crate::measure::{GridDensity, MeasureCurve, Snapshot};
use crate::operators::{frac_laplacian_constant, PeriodicGrid, SpectralOperator};
use crate::scalar::{count, lit, to_f64, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpmeParams {
    /// Porous medium exponent, `m > 1`.
    pub m: f64,
    pub alpha: f64,
}

impl FpmeParams {
    pub fn new(m: f64, alpha: f64) -> Result<Self> {
        if !(m > 1.0) {
            return Err(Error::InvalidParameter(format!("porous media exponent must satisfy m > 1, got {m}")));
        }
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0,2), got {alpha}")));
        }
        Ok(Self { m, alpha })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpmeConfig {
    /// Nominal time step.
    pub dt: f64,
    /// Largest clipped mass per step, relative to the total, before the step is retried with half the step.
    pub reject_tol: f64,
    pub max_halvings: usize,
    /// Run flag threshold for the total clipped mass.
    pub clip_flag_tol: f64,
    /// Run flag threshold for the mass in the outer `boundary_fraction` of the box.
    pub boundary_tol: f64,
    pub boundary_fraction: f64,
}

impl Default for FpmeConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            reject_tol: 1e-6,
            max_halvings: 10,
            clip_flag_tol: 1e-4,
            boundary_tol: 1e-6,
            boundary_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FpmeMetadata {
    pub steps: usize,
    pub rejections: usize,
    pub clip_mass: f64,
    pub clip_flagged: bool,
    pub max_boundary_mass: f64,
    pub boundary_flagged: bool,
    /// Largest one-step increase of `max u`.
    pub max_sup_increase: f64,
    /// Largest `|∫u - 1|` over stored snapshots.
    pub mass_error: f64,
}

/// Stored snapshots `u(t_k, ·)` on a periodic grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FpmeSolution<T> {
    pub grid: PeriodicGrid<T>,
    pub params: FpmeParams,
    pub config: FpmeConfig,
    pub times: Vec<T>,
    pub snapshots: Vec<Vec<T>>,
    pub metadata: FpmeMetadata,
}

struct Stepper<T: FftNum> {
    op: SpectralOperator<T>,
    symbol: Vec<T>,
    params: FpmeParams,
    config: FpmeConfig,
    dx: T,
}

impl<T: Real + FftNum> Stepper<T> {
    /// One semi-implicit step; returns the clipped mass.
    fn try_step(&self, u: &[T], dt: T) -> (Vec<T>, T) {
        let m: T = lit(self.params.m);
        let umax = u.iter().copied().fold(T::zero(), T::max);
        let s = m * umax.powf(m - T::one());
        let uh = self.op.forward(u);
        let um: Vec<T> = u.iter().map(|&v| v.abs().powf(m - T::one()) * v).collect();
        let vh = self.op.forward(&um);
        let spec: Vec<Complex<T>> = uh
            .iter()
            .zip(&vh)
            .zip(&self.symbol)
            .map(|((&a, &b), &k)| (a - (b - a * s) * (dt * k)) / (T::one() + dt * s * k))
            .collect();
        let mut next = self.op.inverse(spec);
        let mut clipped = T::zero();
        for v in &mut next {
            if *v < T::zero() {
                clipped = clipped - *v;
                *v = T::zero();
            }
        }
        (next, clipped * self.dx)
    }

    fn advance(&self, u: &[T], dt: T, depth: usize, meta: &mut FpmeMetadata) -> Result<Vec<T>> {
        let mass: T = u.iter().copied().sum::<T>() * self.dx;
        let (mut next, clipped) = self.try_step(u, dt);
        let drift = to_f64(clipped / mass);
        if drift > self.config.reject_tol {
            if depth >= self.config.max_halvings {
                return Err(Error::StepRejected { retries: depth, drift });
            }
            meta.rejections += 1;
            let half = dt * lit(0.5);
            let mid = self.advance(u, half, depth + 1, meta)?;
            return self.advance(&mid, half, depth + 1, meta);
        }
        meta.steps += 1;
        meta.clip_mass += to_f64(clipped);
        let now: T = next.iter().copied().sum::<T>() * self.dx;
        if now > T::zero() {
            let scale = mass / now;
            next.iter_mut().for_each(|v| *v = *v * scale);
        }
        let before = u.iter().copied().fold(T::zero(), T::max);
        let after = next.iter().copied().fold(T::zero(), T::max);
        meta.max_sup_increase = meta.max_sup_increase.max(to_f64(after - before));
        Ok(next)
    }
}

fn boundary_mass<T: Real>(u: &[T], dx: T, fraction: f64) -> f64 {
    let n = u.len();
    let edge = ((n as f64) * fraction / 2.0).ceil() as usize;
    let s: T = u[..edge].iter().copied().sum::<T>() + u[n - edge..].iter().copied().sum::<T>();
    to_f64(s * dx)
}

/// Integrates from `times[0]` through every requested time.
pub fn solve<T: Real + FftNum>(
    init: &[T],
    params: FpmeParams,
    grid: &PeriodicGrid<T>,
    times: &[T],
    config: &FpmeConfig,
) -> Result<FpmeSolution<T>> {
    if init.len() != grid.n {
        return Err(Error::DimensionMismatch { expected: grid.n, got: init.len() });
    }
    if init.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
        return Err(Error::InvalidParameter("initial data must be finite and non-negative".into()));
    }
    if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("time grid must be non-empty and increasing".into()));
    }
    if !(config.dt > 0.0) {
        return Err(Error::InvalidParameter("time step must be positive".into()));
    }
    let dx = grid.dx();
    let mass: T = init.iter().copied().sum::<T>() * dx;
    if (to_f64(mass) - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidParameter(format!("initial data must have unit mass, got {mass}")));
    }
    let op = SpectralOperator::new(grid)?;
    let alpha: T = lit(params.alpha);
    let symbol = op.wavenumbers().iter().map(|&k| if k == T::zero() { T::zero() } else { k.powf(alpha) }).collect();
    let stepper = Stepper { op, symbol, params, config: *config, dx };
    let mut meta = FpmeMetadata::default();
    let mut u = init.to_vec();
    let mut snapshots = vec![u.clone()];
    meta.max_boundary_mass = boundary_mass(&u, dx, config.boundary_fraction);
    for w in times.windows(2) {
        let span = w[1] - w[0];
        let steps = (to_f64(span) / config.dt - 1e-9).ceil().max(1.0) as usize;
        let h = span / count(steps);
        for _ in 0..steps {
            u = stepper.advance(&u, h, 0, &mut meta)?;
            meta.max_boundary_mass = meta.max_boundary_mass.max(boundary_mass(&u, dx, config.boundary_fraction));
        }
        snapshots.push(u.clone());
    }
    meta.mass_error = snapshots
        .iter()
        .map(|s| (to_f64(s.iter().copied().sum::<T>() * dx) - 1.0).abs())
        .fold(0.0, f64::max);
    meta.clip_flagged = meta.clip_mass > config.clip_flag_tol;
    meta.boundary_flagged = meta.max_boundary_mass > config.boundary_tol;
    Ok(FpmeSolution { grid: *grid, params, config: *config, times: times.to_vec(), snapshots, metadata: meta })
}

/// Samples `phi` on the grid and rescales it to unit mass.
pub fn sample_initial<T: Real>(grid: &PeriodicGrid<T>, phi: &dyn Fn(f64) -> f64) -> Result<Vec<T>> {
    let raw: Vec<f64> = grid.nodes().into_iter().map(|x| phi(to_f64(x)).max(0.0)).collect();
    let mass: f64 = raw.iter().sum::<f64>() * to_f64(grid.dx());
    if !(mass > 0.0) {
        return Err(Error::InvalidParameter("initial data has no mass".into()));
    }
    Ok(raw.into_iter().map(|v| lit(v / mass)).collect())
}

/// The same solve with `factor` times as many nodes and a `factor` times smaller step.
pub fn refine_reference<T: Real + FftNum>(
    phi: &dyn Fn(f64) -> f64,
    params: FpmeParams,
    grid: &PeriodicGrid<T>,
    times: &[T],
    config: &FpmeConfig,
    factor: usize,
) -> Result<FpmeSolution<T>> {
    let fine = PeriodicGrid::new(grid.left, grid.width, grid.n * factor)?;
    let cfg = FpmeConfig { dt: config.dt / factor as f64, ..*config };
    solve(&sample_initial(&fine, phi)?, params, &fine, times, &cfg)
}

/// Smooth compactly supported initial density `exp(1 - 1/(1 - (x/r)²))`, unnormalized.
pub fn bump_profile(radius: f64) -> impl Fn(f64) -> f64 {
    move |x| {
        let q = (x / radius) * (x / radius);
        if q >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - q)).exp()
        }
    }
}

impl<T: Real + FftNum> FpmeSolution<T> {
    pub fn final_state(&self) -> &[T] {
        self.snapshots.last().expect("at least one snapshot")
    }

    /// `u(t, x)`: linear in time between snapshots and periodic linear in space.
    pub fn value(&self, t: T, x: T) -> T {
        let n = self.times.len();
        let (i, w) = if n == 1 || t <= self.times[0] {
            (0, T::zero())
        } else if t >= self.times[n - 1] {
            (n - 1, T::zero())
        } else {
            let i = self.times.partition_point(|&s| s <= t) - 1;
            (i, (t - self.times[i]) / (self.times[i + 1] - self.times[i]))
        };
        let a = self.space_value(i, x);
        if w == T::zero() {
            a
        } else {
            a * (T::one() - w) + self.space_value(i + 1, x) * w
        }
    }

    fn space_value(&self, k: usize, x: T) -> T {
        let u = &self.snapshots[k];
        let g = &self.grid;
        let pos = (g.wrap(x) - g.left) / g.dx();
        let j = pos.floor();
        let w = pos - j;
        let j = (to_f64(j) as usize) % g.n;
        u[j] * (T::one() - w) + u[(j + 1) % g.n] * w
    }

    /// `κ_t(x) = u(t,x)^{m-1}`.
    pub fn kappa(self: &Arc<Self>) -> StateFn<T> {
        let me = Arc::clone(self);
        let e: T = lit(self.params.m - 1.0);
        Arc::new(move |t, x| me.value(t, x[0]).max(T::zero()).powf(e))
    }

    /// `σ_t(x) = u(t,x)^{(m-1)/α}`.
    pub fn sigma(self: &Arc<Self>) -> StateFn<T> {
        let me = Arc::clone(self);
        let e: T = lit((self.params.m - 1.0) / self.params.alpha);
        Arc::new(move |t, x| me.value(t, x[0]).max(T::zero()).powf(e))
    }

    /// `κ_t(x) Δ^{α/2}` as a stable-like kernel `κ_t(x) C_{1,α} |z|^{-1-α}`.
    pub fn kernel(self: &Arc<Self>, ell: T) -> Result<StableLike<T>> {
        let c: T = lit(frac_laplacian_constant(1, self.params.alpha));
        let kappa = self.kappa();
        StableLike::state_dependent(1, lit(self.params.alpha), ell, Arc::new(move |t, x| c * kappa(t, x)))
    }

    /// Snapshots as grid densities on the box.
    pub fn as_measure_curve(&self) -> Result<MeasureCurve<T>> {
        let snaps = self
            .snapshots
            .iter()
            .map(|u| GridDensity::new(self.grid.left, self.grid.dx(), u.clone(), T::zero()).map(Snapshot::Grid))
            .collect::<Result<Vec<_>>>()?;
        MeasureCurve::new(self.times.clone(), snaps)
    }

    /// `Σ |u - v| dx` between the final states of two solutions, the finer one
    /// sampled at the coarser grid's nodes.
    pub fn l1_distance_final(&self, other: &Self) -> f64 {
        let dx = to_f64(self.grid.dx());
        let t = *self.times.last().expect("times");
        (0..self.grid.n)
            .map(|j| to_f64((self.final_state()[j] - other.value(t, self.grid.x(j))).abs()))
            .sum::<f64>()
            * dx
    }

    /// Rows `t,x,u`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "u"])?;
        for (t, u) in self.times.iter().zip(&self.snapshots) {
            for (j, v) in u.iter().enumerate() {
                w.write_record([to_f64(*t).to_string(), to_f64(self.grid.x(j)).to_string(), to_f64(*v).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
