//! Particle ensembles and the Euler scheme for jump diffusions.

use std::io::Write;
use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rng::stream;
use super::stable::{sample_stable, StableParams};
use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::levy::{LevyKernel, StateFn};
use crate::measure::{MeasureCurve, ParticleCloud, Snapshot};
use crate::scalar::{count, lit, norm, to_f64, Real};

/// Default guard radius.
pub const DEFAULT_GUARD: f64 = 1e6;

/// Jump part of the dynamics.
#[derive(Clone)]
pub enum JumpSpec<T: Real> {
    None,
    /// `X += σ_t(X_-) ΔL` with exact stable increments.
    MultiplicativeStable { params: StableParams<T>, sigma: StateFn<T> },
    /// Small jumps below the cutoff replaced by a Gaussian with their second
    /// moment; larger jumps sampled exactly.
    Kernel(Arc<dyn LevyKernel<T>>),
}

impl<T: Real> JumpSpec<T> {
    pub fn stable_flight(params: StableParams<T>) -> Self {
        JumpSpec::MultiplicativeStable { params, sigma: Arc::new(|_, _| T::one()) }
    }
}

/// What happens when a particle leaves the guard ball.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardPolicy {
    Error,
    /// The particle is projected onto the guard sphere and stops moving.
    Freeze,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Largest Euler step; grid intervals are subdivided to respect it.
    pub max_dt: f64,
    pub guard: f64,
    pub policy: GuardPolicy,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { seed: 0, max_dt: 0.01, guard: DEFAULT_GUARD, policy: GuardPolicy::Error }
    }
}

/// `N` particles with uniform weights and per-particle random streams.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble<T> {
    dim: usize,
    positions: Vec<T>,
    frozen: Vec<bool>,
    time: T,
    step: u64,
    seed: u64,
    guard: T,
    policy: GuardPolicy,
}

/// Initial law sampler.
pub type Sampler<T> = dyn Fn(&mut dyn RngCore) -> Vec<T> + Send + Sync;

impl<T: Real> ParticleEnsemble<T> {
    /// Draws `n` particles from `init`; particle `i` uses stream `(seed, i, 0)`.
    pub fn sample(dim: usize, n: usize, init: &Sampler<T>, t0: T, config: &SimConfig) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("ensemble needs at least one particle".into()));
        }
        let draws: Vec<Vec<T>> =
            (0..n).into_par_iter().map(|i| init(&mut stream(config.seed, i as u64, 0))).collect();
        let mut positions = Vec::with_capacity(n * dim);
        for d in draws {
            if d.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: d.len() });
            }
            positions.extend(d);
        }
        Self::from_positions(dim, positions, t0, config)
    }

    pub fn from_positions(dim: usize, positions: Vec<T>, t0: T, config: &SimConfig) -> Result<Self> {
        if dim == 0 || positions.is_empty() || !positions.len().is_multiple_of(dim) {
            return Err(Error::InvalidParameter("positions must be a non-empty multiple of dim".into()));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("initial positions must be finite".into()));
        }
        let n = positions.len() / dim;
        Ok(Self {
            dim,
            positions,
            frozen: vec![false; n],
            time: t0,
            step: 0,
            seed: config.seed,
            guard: lit(config.guard),
            policy: config.policy,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.frozen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frozen.is_empty()
    }

    pub fn time(&self) -> T {
        self.time
    }

    pub fn positions(&self) -> &[T] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> &[T] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    /// Number of particles stopped at the guard.
    pub fn exits(&self) -> usize {
        self.frozen.iter().filter(|&&f| f).count()
    }

    pub fn cloud(&self) -> Result<ParticleCloud<T>> {
        ParticleCloud::uniform(self.dim, self.positions.clone())
    }

    /// First coordinate of every particle.
    pub fn first_coordinates(&self) -> Vec<f64> {
        self.positions.chunks(self.dim).map(|p| to_f64(p[0])).collect()
    }
}

fn gaussian<T: Real>(dim: usize, rng: &mut dyn RngCore) -> Vec<T> {
    (0..dim)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            lit(g)
        })
        .collect()
}

/// One particle's increment over `[t, t + dt]`.
fn increment<T: Real>(
    x: &[T],
    t: T,
    dt: T,
    coeffs: &CoefficientField<T>,
    jumps: &JumpSpec<T>,
    rng: &mut dyn RngCore,
) -> Result<Vec<T>> {
    let d = x.len();
    let mut dx = vec![T::zero(); d];
    if coeffs.has_drift() {
        for (o, b) in dx.iter_mut().zip(coeffs.drift(t, x)) {
            *o = *o + b * dt;
        }
    }
    if coeffs.has_diffusion() {
        let root = coeffs.diffusion(t, x).scale(lit::<T>(2.0) * dt).sqrt_psd();
        let g = gaussian::<T>(d, rng);
        for (o, v) in dx.iter_mut().zip(root.mul_vec(&g)) {
            *o = *o + v;
        }
    }
    match jumps {
        JumpSpec::None => {}
        JumpSpec::MultiplicativeStable { params, sigma } => {
            let s = sigma(t, x);
            for (o, l) in dx.iter_mut().zip(sample_stable(params, dt, rng)) {
                *o = *o + s * l;
            }
        }
        JumpSpec::Kernel(k) => {
            let ell = k.cutoff();
            let m = k.inner_second_moment(t, x, ell).ok_or_else(|| {
                Error::InvalidParameter("kernel provides no small-jump second moment".into())
            })?;
            let root = m.scale(dt).sqrt_psd();
            let g = gaussian::<T>(d, rng);
            for (o, v) in dx.iter_mut().zip(root.mul_vec(&g)) {
                *o = *o + v;
            }
            for z in k.sample_jumps(t, x, ell, dt, rng)? {
                for (o, v) in dx.iter_mut().zip(z) {
                    *o = *o + v;
                }
            }
        }
    }
    Ok(dx)
}

/// Advances every particle by one Euler step of size `dt`.
pub fn euler_step<T: Real>(
    ens: &mut ParticleEnsemble<T>,
    coeffs: &CoefficientField<T>,
    jumps: &JumpSpec<T>,
    dt: T,
) -> Result<()> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidParameter("time step must be positive".into()));
    }
    if coeffs.dim() != ens.dim {
        return Err(Error::DimensionMismatch { expected: ens.dim, got: coeffs.dim() });
    }
    let (d, t, seed, step, guard, policy) = (ens.dim, ens.time, ens.seed, ens.step + 1, ens.guard, ens.policy);
    let outcome: Vec<Option<(usize, f64)>> = ens
        .positions
        .par_chunks_mut(d)
        .zip(ens.frozen.par_iter_mut())
        .enumerate()
        .map(|(i, (x, frozen))| -> Result<Option<(usize, f64)>> {
            if *frozen {
                return Ok(None);
            }
            let mut rng = stream(seed, i as u64, step);
            let dx = increment(x, t, dt, coeffs, jumps, &mut rng)?;
            for (p, v) in x.iter_mut().zip(dx) {
                *p = *p + v;
            }
            let r = norm(x);
            if r.is_finite() && r <= guard {
                return Ok(None);
            }
            if policy == GuardPolicy::Freeze {
                *frozen = true;
                if r.is_finite() && r > T::zero() {
                    x.iter_mut().for_each(|p| *p = *p * guard / r);
                } else {
                    x.iter_mut().for_each(|p| *p = T::zero());
                    x[0] = guard;
                }
            }
            Ok(Some((i, to_f64(r))))
        })
        .collect::<Result<_>>()?;
    ens.time = t + dt;
    ens.step = step;
    if policy == GuardPolicy::Error {
        if let Some((index, norm)) = outcome.into_iter().flatten().next() {
            return Err(Error::BlowUp { index, norm, time: to_f64(ens.time) });
        }
    }
    Ok(())
}

/// Steps from the current time to `t_end` in equal steps no larger than `max_dt`.
pub fn advance<T: Real>(
    ens: &mut ParticleEnsemble<T>,
    coeffs: &CoefficientField<T>,
    jumps: &JumpSpec<T>,
    t_end: T,
    max_dt: f64,
) -> Result<()> {
    let span = t_end - ens.time;
    if span < T::zero() {
        return Err(Error::InvalidParameter("cannot step backwards in time".into()));
    }
    if span == T::zero() {
        return Ok(());
    }
    let steps = (to_f64(span) / max_dt - 1e-9).ceil().max(1.0) as usize;
    let dt = span / count(steps);
    for _ in 0..steps {
        euler_step(ens, coeffs, jumps, dt)?;
    }
    ens.time = t_end;
    Ok(())
}

/// Particle positions at every time of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Paths<T> {
    pub dim: usize,
    pub n: usize,
    pub times: Vec<T>,
    /// `states[k]` holds all positions at `times[k]`, row-major.
    pub states: Vec<Vec<T>>,
    pub exits: usize,
}

impl<T: Real> Paths<T> {
    pub fn position(&self, k: usize, i: usize) -> &[T] {
        &self.states[k][i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_curve(&self) -> Result<MeasureCurve<T>> {
        let snaps = self
            .states
            .iter()
            .map(|s| ParticleCloud::uniform(self.dim, s.clone()).map(Snapshot::Particles))
            .collect::<Result<Vec<_>>>()?;
        MeasureCurve::new(self.times.clone(), snaps)
    }

    /// Keeps every `stride`-th grid time.
    pub fn thinned(&self, stride: usize) -> Self {
        let keep: Vec<usize> = (0..self.times.len()).step_by(stride.max(1)).collect();
        Self {
            dim: self.dim,
            n: self.n,
            times: keep.iter().map(|&k| self.times[k]).collect(),
            states: keep.iter().map(|&k| self.states[k].clone()).collect(),
            exits: self.exits,
        }
    }

    /// CSV with columns `particle_id,time,x1..xd`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["particle_id".to_string(), "time".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for i in 0..self.n {
            for (k, t) in self.times.iter().enumerate() {
                let mut row = vec![i.to_string(), format!("{}", to_f64(*t))];
                row.extend(self.position(k, i).iter().map(|v| format!("{}", to_f64(*v))));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn check_grid<T: Real>(times: &[T]) -> Result<()> {
    if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("time grid must be non-empty and increasing".into()));
    }
    Ok(())
}

/// Simulates `n` particles and stores positions at every grid time.
pub fn simulate_paths<T: Real>(
    init: &Sampler<T>,
    coeffs: &CoefficientField<T>,
    jumps: &JumpSpec<T>,
    times: &[T],
    n: usize,
    config: &SimConfig,
) -> Result<Paths<T>> {
    check_grid(times)?;
    let dim = coeffs.dim();
    let mut ens = ParticleEnsemble::sample(dim, n, init, times[0], config)?;
    let mut states = vec![ens.positions.clone()];
    for &t in &times[1..] {
        advance(&mut ens, coeffs, jumps, t, config.max_dt)?;
        states.push(ens.positions.clone());
    }
    Ok(Paths { dim, n, times: times.to_vec(), states, exits: ens.exits() })
}

/// Empirical marginal curve `t ↦ (1/N) Σ δ_{X_t^i}` on the grid.
pub fn simulate_marginals<T: Real>(
    init: &Sampler<T>,
    coeffs: &CoefficientField<T>,
    jumps: &JumpSpec<T>,
    times: &[T],
    n: usize,
    config: &SimConfig,
) -> Result<MeasureCurve<T>> {
    simulate_paths(init, coeffs, jumps, times, n, config)?.to_curve()
}

/// Sampler for a point mass.
pub fn dirac<T: Real>(x0: Vec<T>) -> Box<Sampler<T>> {
    Box::new(move |_| x0.clone())
}

/// Sampler for `N(m, v I)`.
pub fn gaussian_sampler<T: Real>(mean: Vec<T>, var: T) -> Box<Sampler<T>> {
    Box::new(move |rng| {
        let s = var.sqrt();
        mean.iter().map(|&m| m + s * gaussian::<T>(1, rng)[0]).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::stable::StableNormalization;

    #[test]
    fn zero_dynamics_leave_ensemble_unchanged() {
        let cfg = SimConfig::default();
        let init = gaussian_sampler(vec![0.0_f64, 1.0], 1.0);
        let mut e = ParticleEnsemble::sample(2, 50, init.as_ref(), 0.0, &cfg).unwrap();
        let before = e.positions().to_vec();
        euler_step(&mut e, &CoefficientField::zero(2), &JumpSpec::None, 0.1).unwrap();
        assert_eq!(before, e.positions());
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let cfg = SimConfig { seed: 9, ..SimConfig::default() };
        let p = StableParams::new(1.5, 1, StableNormalization::LevyMeasure).unwrap();
        let run = || {
            simulate_paths(dirac(vec![0.0_f64]).as_ref(), &CoefficientField::zero(1), &JumpSpec::stable_flight(p), &[0.0, 0.5, 1.0], 200, &cfg)
                .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn guard_reports_particle() {
        let cfg = SimConfig { guard: 1.0, ..SimConfig::default() };
        let coeffs = CoefficientField::zero(1).with_drift(Arc::new(|_, _| vec![10.0_f64]));
        let mut e = ParticleEnsemble::from_positions(1, vec![0.0, 0.5], 0.0, &cfg).unwrap();
        match euler_step(&mut e, &coeffs, &JumpSpec::None, 0.1) {
            Err(Error::BlowUp { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
        let cfg = SimConfig { guard: 1.0, policy: GuardPolicy::Freeze, ..SimConfig::default() };
        let mut e = ParticleEnsemble::from_positions(1, vec![0.0, 0.5], 0.0, &cfg).unwrap();
        euler_step(&mut e, &coeffs, &JumpSpec::None, 0.1).unwrap();
        assert_eq!(e.exits(), 1);
        assert_eq!(e.position(1)[0], 1.0);
    }
}
