//! Particle system for `dY_t = ρ_{Y_t}(Y_{t-})^{(m-1)/α} dL_t` on a periodic
//! box, density estimation, and comparison with the porous medium solver.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use rustfft::FftNum;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpe_residual::{residual_with, ResidualReport};
use crate::fpme::{sample_initial, solve, FpmeConfig, FpmeParams, FpmeSolution};
use crate::measure::{GridDensity, MeasureCurve, Snapshot};
use crate::operators::{PeriodicGrid, SpectralOperator, StandardGenerator, TestBank};
use crate::coefficients::CoefficientField;
use crate::quadrature::QuadratureSpec;
use crate::scalar::{count, lit, to_f64, Real};
use crate::sde::stats::skewness;
use crate::sde::{sample_stable, stream, StableNormalization, StableParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMethod {
    /// Gaussian kernel smoothing of the linearly binned particles.
    Kde,
    /// Cell counts.
    Histogram,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Silverman,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityEstimator {
    pub method: DensityMethod,
    pub bandwidth: Bandwidth,
}

impl Default for DensityEstimator {
    fn default() -> Self {
        Self { method: DensityMethod::Kde, bandwidth: Bandwidth::Silverman }
    }
}

/// Density on the nodes of a periodic grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityEstimate<T> {
    pub grid: PeriodicGrid<T>,
    pub values: Vec<T>,
    pub bandwidth: f64,
}

impl<T: Real> DensityEstimate<T> {
    /// Linear interpolation between nodes (periodic inside the box), 0 outside.
    pub fn eval(&self, x: T) -> T {
        let g = &self.grid;
        if x < g.left || x >= g.left + g.width {
            return T::zero();
        }
        let pos = (x - g.left) / g.dx();
        let j = pos.floor();
        let w = pos - j;
        let j = (to_f64(j) as usize).min(g.n - 1);
        self.values[j] * (T::one() - w) + self.values[(j + 1) % g.n] * w
    }

    pub fn mass(&self) -> T {
        self.values.iter().copied().sum::<T>() * self.grid.dx()
    }

    /// `Σ |ρ - u| dx` against values on the same grid.
    pub fn l1_distance(&self, u: &[T]) -> f64 {
        to_f64(self.values.iter().zip(u).map(|(&a, &b)| (a - b).abs()).sum::<T>() * self.grid.dx())
    }

    pub fn to_grid_density(&self) -> Result<GridDensity<T>> {
        GridDensity::new(self.grid.left, self.grid.dx(), self.values.clone(), T::zero())
    }
}

/// Silverman's rule `0.9 min(sd, IQR/1.34) N^{-1/5}`.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        let h = p * (s.len() - 1) as f64;
        let i = h.floor() as usize;
        let f = h - i as f64;
        s[i] + f * (s[(i + 1).min(s.len() - 1)] - s[i])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Density of particles (first coordinate) on a periodic grid; positions are
/// wrapped into the box.
pub fn estimate_density<T: Real + FftNum>(
    positions: &[T],
    grid: &PeriodicGrid<T>,
    est: &DensityEstimator,
) -> Result<DensityEstimate<T>> {
    if positions.is_empty() {
        return Err(Error::InvalidParameter("no particles".into()));
    }
    let n = grid.n;
    let dx = grid.dx();
    let weight = T::one() / (count::<T>(positions.len()) * dx);
    let mut values = vec![T::zero(); n];
    match est.method {
        DensityMethod::Histogram => {
            for &x in positions {
                let pos = (grid.wrap(x) - grid.left) / dx;
                let j = (to_f64(pos.floor()) as usize).min(n - 1);
                values[j] = values[j] + weight;
            }
            Ok(DensityEstimate { grid: *grid, values, bandwidth: to_f64(dx) })
        }
        DensityMethod::Kde => {
            let xs: Vec<f64> = positions.iter().map(|&x| to_f64(grid.wrap(x))).collect();
            let h = match est.bandwidth {
                Bandwidth::Fixed(h) => h,
                Bandwidth::Silverman => silverman_bandwidth(&xs),
            };
            if !(h > 0.0) {
                return Err(Error::DegenerateEnsemble);
            }
            for &x in &xs {
                let pos = (x - to_f64(grid.left)) / to_f64(dx);
                let j = pos.floor();
                let w: T = lit(pos - j);
                let j = (j as usize) % n;
                values[j] = values[j] + weight * (T::one() - w);
                values[(j + 1) % n] = values[(j + 1) % n] + weight * w;
            }
            let op = SpectralOperator::new(grid)?;
            let hh: T = lit(h * h * 0.5);
            let mut smooth = op.multiply(&values, |k| (-hh * k * k).exp());
            smooth.iter_mut().for_each(|v| *v = v.max(T::zero()));
            let mass = smooth.iter().copied().sum::<T>() * dx;
            smooth.iter_mut().for_each(|v| *v = *v / mass);
            Ok(DensityEstimate { grid: *grid, values: smooth, bandwidth: h })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdsdeConfig {
    /// Exponent used by the particles.
    pub m: f64,
    pub alpha: f64,
    pub dt: f64,
    pub particles: usize,
    pub seed: u64,
    /// Added to the estimated density before exponentiation.
    pub density_floor: f64,
    /// Steps between density refreshes.
    pub refresh: usize,
    pub estimator: DensityEstimator,
}

impl DdsdeConfig {
    pub fn new(m: f64, alpha: f64, dt: f64, particles: usize, seed: u64) -> Self {
        Self { m, alpha, dt, particles, seed, density_floor: 1e-8, refresh: 1, estimator: DensityEstimator::default() }
    }
}

/// Moves every particle by `σ̂(Y_-) ΔL` with `σ̂ = (ρ̂ + floor)^{(m-1)/α}` and
/// wraps it into the box; `ΔL` has characteristic function `exp(-dt|ξ|^α)`.
pub fn ddsde_step<T: Real + FftNum>(
    positions: &mut [T],
    density: &DensityEstimate<T>,
    config: &DdsdeConfig,
    step: u64,
) -> Result<()> {
    let params = StableParams::new(lit::<T>(config.alpha), 1, StableNormalization::FractionalLaplacian)?;
    let e: T = lit((config.m - 1.0) / config.alpha);
    let floor: T = lit(config.density_floor);
    let dt: T = lit(config.dt);
    let grid = density.grid;
    positions.par_iter_mut().enumerate().for_each(|(i, y)| {
        let sigma = (density.eval(grid.wrap(*y)) + floor).powf(e);
        let mut rng = stream(config.seed, i as u64, step);
        let dl = sample_stable(&params, dt, &mut rng)[0];
        *y = grid.wrap(*y + sigma * dl);
    });
    if positions.iter().any(|v| !v.is_finite()) {
        let index = positions.iter().position(|v| !v.is_finite()).unwrap_or(0);
        return Err(Error::BlowUp { index, norm: f64::INFINITY, time: step as f64 * config.dt });
    }
    Ok(())
}

/// Inverse-CDF draws from a grid density (piecewise constant on cells
/// centred at the nodes); particle `i` uses stream `(seed, i, 0)`.
pub fn sample_from_grid<T: Real>(grid: &PeriodicGrid<T>, density: &[T], n: usize, seed: u64) -> Vec<T> {
    let dx = to_f64(grid.dx());
    let mut cdf = Vec::with_capacity(density.len() + 1);
    cdf.push(0.0);
    for v in density {
        let last = *cdf.last().unwrap();
        cdf.push(last + to_f64(*v) * dx);
    }
    let total = *cdf.last().unwrap();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let u: f64 = stream(seed, i as u64, 0).random::<f64>() * total;
            let j = cdf.partition_point(|&c| c <= u).clamp(1, density.len()) - 1;
            let width = cdf[j + 1] - cdf[j];
            let frac = if width > 0.0 { (u - cdf[j]) / width } else { 0.5 };
            grid.wrap(lit(to_f64(grid.x(j)) + (frac - 0.5) * dx))
        })
        .collect()
}

/// One recorded particle snapshot.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DdsdeSnapshot<T> {
    pub time: f64,
    pub density: DensityEstimate<T>,
    pub skewness: (f64, f64),
}

/// Runs the particle system from `init` and records density estimates at
/// each requested time (which must be multiples of `dt`).
pub fn run_particles<T: Real + FftNum>(
    init: Vec<T>,
    grid: &PeriodicGrid<T>,
    config: &DdsdeConfig,
    record: &[f64],
) -> Result<(Vec<T>, Vec<DdsdeSnapshot<T>>)> {
    if config.particles == 0 || config.refresh == 0 || !(config.dt > 0.0) {
        return Err(Error::InvalidParameter("ddsde needs particles, refresh and dt positive".into()));
    }
    let mut y = init;
    let t_end = record.iter().copied().fold(0.0, f64::max);
    let steps = (t_end / config.dt).round() as u64;
    let mut out = Vec::new();
    let mut density = estimate_density(&y, grid, &config.estimator)?;
    let snap = |y: &[T], d: &DensityEstimate<T>, t: f64| DdsdeSnapshot {
        time: t,
        density: d.clone(),
        skewness: skewness(&y.iter().map(|v| to_f64(*v)).collect::<Vec<_>>()),
    };
    let on_grid = |t: f64, k: u64| (t - k as f64 * config.dt).abs() < 1e-9;
    if record.iter().any(|&t| on_grid(t, 0)) {
        out.push(snap(&y, &density, 0.0));
    }
    for k in 1..=steps {
        if (k - 1) % config.refresh as u64 == 0 && k > 1 {
            density = estimate_density(&y, grid, &config.estimator)?;
        }
        ddsde_step(&mut y, &density, config, k)?;
        let t = k as f64 * config.dt;
        if record.iter().any(|&r| on_grid(r, k)) {
            let d = estimate_density(&y, grid, &config.estimator)?;
            out.push(snap(&y, &d, t));
        }
    }
    Ok((y, out))
}

/// Outcome of comparing particle densities with the porous medium solution.
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub times: Vec<f64>,
    pub l1_distances: Vec<f64>,
    pub skewness: Vec<(f64, f64)>,
    pub bandwidths: Vec<f64>,
    /// Weak-form residual of the estimated particle densities against `κ_t = u^{m-1}`.
    pub residuals: Option<ResidualReport>,
    pub fpme: crate::fpme::FpmeMetadata,
    pub config: DdsdeConfig,
}

impl ComparisonReport {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Experiment settings besides the particle configuration.
#[derive(Clone, Debug)]
pub struct ExperimentSetup<T: Real> {
    pub grid: PeriodicGrid<T>,
    /// Times at which distances are reported.
    pub report_times: Vec<f64>,
    /// Spacing of the density curve used for the residual (a multiple of `dt`); `None` skips it.
    pub residual_spacing: Option<f64>,
    pub fpme: FpmeConfig,
    pub quad: QuadratureSpec,
    pub bank: TestBank<T>,
}

/// Report, solver output and recorded particle densities of one experiment.
pub struct Experiment<T> {
    pub report: ComparisonReport,
    pub solution: Arc<FpmeSolution<T>>,
    pub snapshots: Vec<DdsdeSnapshot<T>>,
}

/// Solves the porous medium equation with exponent `params.m` and runs the
/// particle system with exponent `config.m` from the same initial law.
pub fn representation_experiment<T: Real + FftNum>(
    phi: &dyn Fn(f64) -> f64,
    params: FpmeParams,
    config: &DdsdeConfig,
    setup: &ExperimentSetup<T>,
) -> Result<Experiment<T>> {
    let grid = &setup.grid;
    let init = sample_initial(grid, phi)?;
    let t_end = setup.report_times.iter().copied().fold(0.0, f64::max);
    let mut record: Vec<f64> = setup.report_times.clone();
    record.push(0.0);
    if let Some(h) = setup.residual_spacing {
        let k = (t_end / h).round() as usize;
        record.extend((0..=k).map(|i| i as f64 * h));
    }
    record.sort_by(|a, b| a.total_cmp(b));
    record.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let times: Vec<T> = record.iter().map(|&t| lit(t)).collect();
    let sol = Arc::new(solve(&init, params, grid, &times, &setup.fpme)?);
    let particles = sample_from_grid(grid, &init, config.particles, config.seed);
    let (_, snapshots) = run_particles(particles, grid, config, &record)?;
    let snaps = &snapshots;
    let mut l1 = Vec::new();
    let mut skew = Vec::new();
    let mut bw = Vec::new();
    for &t in &setup.report_times {
        let s = snaps
            .iter()
            .find(|s| (s.time - t).abs() < 1e-9)
            .ok_or_else(|| Error::InvalidParameter(format!("report time {t} is not a multiple of dt")))?;
        let k = record.iter().position(|&r| (r - t).abs() < 1e-9).expect("recorded");
        l1.push(s.density.l1_distance(&sol.snapshots[k]));
        skew.push(s.skewness);
        bw.push(s.density.bandwidth);
    }
    let residuals = match setup.residual_spacing {
        None => None,
        Some(_) => {
            let curve = MeasureCurve::new(
                snaps.iter().map(|s| lit(s.time)).collect(),
                snaps.iter().map(|s| s.density.to_grid_density().map(Snapshot::Grid)).collect::<Result<Vec<_>>>()?,
            )?;
            let kernel = sol.kernel(lit(0.5))?;
            let gen = StandardGenerator::new(CoefficientField::zero(1), Arc::new(kernel), &setup.quad)?;
            let at: Vec<T> = setup.report_times.iter().map(|&t| lit(t)).collect();
            Some(residual_with(&curve, &gen, &setup.bank, &at)?)
        }
    };
    let report = ComparisonReport {
        times: setup.report_times.clone(),
        l1_distances: l1,
        skewness: skew,
        bandwidths: bw,
        residuals,
        fpme: sol.metadata.clone(),
        config: *config,
    };
    Ok(Experiment { report, solution: sol, snapshots })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_histogram_fills_one_cell() {
        let grid = PeriodicGrid::<f64>::centered(4.0, 16).unwrap();
        let est = DensityEstimator { method: DensityMethod::Histogram, bandwidth: Bandwidth::Silverman };
        let d = estimate_density(&[0.1; 50], &grid, &est).unwrap();
        let nonzero: Vec<f64> = d.values.iter().copied().filter(|&v| v > 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert!((nonzero[0] * grid.dx() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coincident_particles_are_degenerate_for_silverman() {
        let grid = PeriodicGrid::<f64>::centered(4.0, 16).unwrap();
        assert_eq!(estimate_density(&[0.3; 10], &grid, &DensityEstimator::default()), Err(Error::DegenerateEnsemble));
    }

    #[test]
    fn unit_exponent_is_a_stable_flight() {
        let grid = PeriodicGrid::<f64>::centered(1e6, 64).unwrap();
        let cfg = DdsdeConfig::new(1.0, 1.5, 0.1, 100, 4);
        let est = DensityEstimate { grid, values: vec![0.3; 64], bandwidth: 1.0 };
        let mut y = vec![0.0; 100];
        ddsde_step(&mut y, &est, &cfg, 1).unwrap();
        let p = StableParams::new(1.5, 1, StableNormalization::FractionalLaplacian).unwrap();
        for (i, v) in y.iter().enumerate() {
            let expect = sample_stable(&p, 0.1, &mut stream(4, i as u64, 1))[0];
            assert!((v - grid.wrap(expect)).abs() < 1e-9);
        }
    }
}
