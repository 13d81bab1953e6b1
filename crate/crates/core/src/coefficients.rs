//! Diffusion matrix `a_t(x)` and drift `b_t(x)` of the local part of the generator.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Real;

pub type MatrixFn<T> = Arc<dyn Fn(T, &[T]) -> Matrix<T> + Send + Sync>;
pub type VectorFn<T> = Arc<dyn Fn(T, &[T]) -> Vec<T> + Send + Sync>;

/// Declared growth class of the coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Growth {
    Bounded,
    Linear,
    Quadratic,
}

#[derive(Clone)]
pub struct CoefficientField<T> {
    dim: usize,
    diffusion: Option<MatrixFn<T>>,
    drift: Option<VectorFn<T>>,
    growth: Growth,
}

impl<T: Real> fmt::Debug for CoefficientField<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("dim", &self.dim)
            .field("has_diffusion", &self.diffusion.is_some())
            .field("has_drift", &self.drift.is_some())
            .field("growth", &self.growth)
            .finish()
    }
}

impl<T: Real> CoefficientField<T> {
    /// `a ≡ 0`, `b ≡ 0`.
    pub fn zero(dim: usize) -> Self {
        Self { dim, diffusion: None, drift: None, growth: Growth::Bounded }
    }

    pub fn new(dim: usize, diffusion: MatrixFn<T>, drift: VectorFn<T>, growth: Growth) -> Self {
        Self { dim, diffusion: Some(diffusion), drift: Some(drift), growth }
    }

    pub fn with_diffusion(mut self, diffusion: MatrixFn<T>) -> Self {
        self.diffusion = Some(diffusion);
        self
    }

    pub fn with_drift(mut self, drift: VectorFn<T>) -> Self {
        self.drift = Some(drift);
        self
    }

    pub fn with_growth(mut self, growth: Growth) -> Self {
        self.growth = growth;
        self
    }

    /// Constant `a = s I`.
    pub fn constant_diffusion(dim: usize, s: T) -> Self {
        Self::zero(dim).with_diffusion(Arc::new(move |_, _| Matrix::scaled_identity(dim, s)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn growth(&self) -> Growth {
        self.growth
    }

    pub fn has_diffusion(&self) -> bool {
        self.diffusion.is_some()
    }

    pub fn has_drift(&self) -> bool {
        self.drift.is_some()
    }

    pub fn diffusion(&self, t: T, x: &[T]) -> Matrix<T> {
        match &self.diffusion {
            Some(a) => a(t, x),
            None => Matrix::zeros(self.dim),
        }
    }

    pub fn drift(&self, t: T, x: &[T]) -> Vec<T> {
        match &self.drift {
            Some(b) => b(t, x),
            None => vec![T::zero(); self.dim],
        }
    }

    /// Checks symmetry and positive semi-definiteness of `a` at `(t, x)`.
    pub fn check_at(&self, t: T, x: &[T]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let a = self.diffusion(t, x);
        if a.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: a.dim() });
        }
        if !a.is_symmetric_psd() {
            return Err(Error::InvalidParameter(format!(
                "diffusion matrix is not symmetric positive semi-definite at t={t}, x={x:?}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_and_checks() {
        let c = CoefficientField::<f64>::zero(2);
        assert_eq!(c.drift(0.0, &[1.0, 2.0]), vec![0.0, 0.0]);
        assert!(c.check_at(0.0, &[0.0, 0.0]).is_ok());
        assert!(c.check_at(0.0, &[0.0]).is_err());
        let bad = CoefficientField::zero(1).with_diffusion(Arc::new(|_, _| Matrix::from_rows(1, vec![-1.0])));
        assert!(bad.check_at(0.0, &[0.0]).is_err());
    }
}
