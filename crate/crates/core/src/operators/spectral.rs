//! Periodic spectral discretization of the fractional Laplacian.
//!
//! The whole-space operator is replaced by its periodization on a box of
//! width `W`; mass leaving one side re-enters on the other, so boxes should be
//! several times wider than the data support.

use std::io::Write;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftNum, FftPlanner};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::scalar::{count, lit, Real};

/// Smallest grid accepted by the spectral operator.
pub const MIN_NODES: usize = 16;

/// Uniform periodic grid `x_j = left + j·W/n`, `j = 0..n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicGrid<T> {
    pub left: T,
    pub width: T,
    pub n: usize,
}

impl<T: Real> PeriodicGrid<T> {
    pub fn new(left: T, width: T, n: usize) -> Result<Self> {
        if n < MIN_NODES {
            return Err(Error::GridTooCoarse { nodes: n, min: MIN_NODES });
        }
        if !(width > T::zero()) {
            return Err(Error::InvalidParameter("box width must be positive".into()));
        }
        Ok(Self { left, width, n })
    }

    /// Box `[-W/2, W/2)` centred at the origin.
    pub fn centered(width: T, n: usize) -> Result<Self> {
        Self::new(-width * lit(0.5), width, n)
    }

    pub fn dx(&self) -> T {
        self.width / count(self.n)
    }

    pub fn x(&self, j: usize) -> T {
        self.left + self.dx() * count(j)
    }

    pub fn nodes(&self) -> Vec<T> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<T> {
        let base = (T::PI() + T::PI()) / self.width;
        (0..self.n)
            .map(|j| {
                let m = if j <= self.n / 2 { j as f64 } else { j as f64 - self.n as f64 };
                base * lit(m)
            })
            .collect()
    }

    /// `x` wrapped periodically into the box.
    pub fn wrap(&self, x: T) -> T {
        let shifted = (x - self.left) / self.width;
        self.left + (shifted - shifted.floor()) * self.width
    }

    /// Writes `x,value` rows with a header.
    pub fn write_csv<W: Write>(&self, out: W, values: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "value"])?;
        for (j, v) in values.iter().enumerate() {
            w.write_record([self.x(j).to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `C_{d,α}` such that `Δ^{α/2} f = C_{d,α} PV∫ (f(x+z) - f(x)) |z|^{-d-α} dz`,
/// `C_{d,α} = α 2^{α-1} Γ((d+α)/2) / (π^{d/2} Γ(1-α/2))`.
pub fn frac_laplacian_constant(dim: usize, alpha: f64) -> f64 {
    let d = dim as f64;
    alpha * 2f64.powf(alpha - 1.0) * gamma((d + alpha) / 2.0)
        / (std::f64::consts::PI.powf(d / 2.0) * gamma(1.0 - alpha / 2.0))
}

/// Reusable FFT plans and the multiplier `-|k|^α` for one grid.
#[derive(Clone)]
pub struct SpectralOperator<T: FftNum> {
    n: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    k_abs: Vec<T>,
}

impl<T: Real + FftNum> SpectralOperator<T> {
    pub fn new(grid: &PeriodicGrid<T>) -> Result<Self> {
        if grid.n < MIN_NODES {
            return Err(Error::GridTooCoarse { nodes: grid.n, min: MIN_NODES });
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n: grid.n,
            forward: planner.plan_fft_forward(grid.n),
            inverse: planner.plan_fft_inverse(grid.n),
            k_abs: grid.wavenumbers().into_iter().map(|k| k.abs()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `|k_j|` in FFT order.
    pub fn wavenumbers(&self) -> &[T] {
        &self.k_abs
    }

    pub fn forward(&self, u: &[T]) -> Vec<Complex<T>> {
        let mut buf: Vec<Complex<T>> = u.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// Inverse transform including the `1/n` factor; returns the real part.
    pub fn inverse(&self, mut spec: Vec<Complex<T>>) -> Vec<T> {
        self.inverse.process(&mut spec);
        let s = T::one() / count(self.n);
        spec.into_iter().map(|c| c.re * s).collect()
    }

    /// Applies the Fourier multiplier `m(|k|)`.
    pub fn multiply<F: Fn(T) -> T>(&self, u: &[T], m: F) -> Vec<T> {
        let mut spec = self.forward(u);
        for (c, &k) in spec.iter_mut().zip(&self.k_abs) {
            *c = *c * m(k);
        }
        self.inverse(spec)
    }

    /// `Δ^{α/2} u` with symbol `-|k|^α`.
    pub fn frac_laplacian(&self, u: &[T], alpha: T) -> Vec<T> {
        self.multiply(u, |k| if k == T::zero() { T::zero() } else { -k.powf(alpha) })
    }
}

/// `Δ^{α/2} u` on a periodic grid of width `width`.
pub fn frac_laplacian_spectral<T: Real + FftNum>(u: &[T], width: T, alpha: T) -> Result<Vec<T>> {
    if !(alpha > T::zero() && alpha < lit(2.0)) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0,2), got {alpha}")));
    }
    let grid = PeriodicGrid::new(T::zero(), width, u.len())?;
    Ok(SpectralOperator::new(&grid)?.frac_laplacian(u, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_are_annihilated() {
        let u = vec![0.3f64; 64];
        let v = frac_laplacian_spectral(&u, 10.0, 1.2).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn cosines_are_eigenfunctions() {
        let grid = PeriodicGrid::<f64>::new(0.0, 2.0 * std::f64::consts::PI, 128).unwrap();
        for (k, alpha) in [(1.0, 0.5), (3.0, 1.0), (7.0, 1.7)] {
            let u: Vec<f64> = grid.nodes().iter().map(|x| (k * x).cos()).collect();
            let v = frac_laplacian_spectral(&u, grid.width, alpha).unwrap();
            let factor = -f64::powf(k, alpha);
            for (a, b) in v.iter().zip(&u) {
                assert!((a - factor * b).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn coarse_grids_are_rejected() {
        assert!(matches!(
            frac_laplacian_spectral(&[1.0f64; 8], 1.0, 1.0),
            Err(Error::GridTooCoarse { nodes: 8, .. })
        ));
    }

    #[test]
    fn single_precision_runs() {
        let u: Vec<f32> = (0..32).map(|j| (j as f32 * 0.2).sin()).collect();
        let v = frac_laplacian_spectral(&u, 6.4f32, 1.0).unwrap();
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn cauchy_constant() {
        assert!((frac_laplacian_constant(1, 1.0) - 1.0 / std::f64::consts::PI).abs() < 1e-14);
    }
}
