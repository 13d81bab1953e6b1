//! Small dense square matrices for diffusion coefficients and Hessians.

use serde::Serialize;

use crate::scalar::{to_f64, Real};

/// Row-major `d x d` matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Matrix<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![T::zero(); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, T::one())
    }

    pub fn scaled_identity(dim: usize, s: T) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = s;
        }
        m
    }

    pub fn from_rows(dim: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), dim * dim, "matrix data length");
        Self { dim, data }
    }

    /// `u vᵀ`
    pub fn outer(u: &[T], v: &[T]) -> Self {
        let dim = u.len();
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m.data[i * dim + j] = u[i] * v[j];
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.dim + j] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn trace(&self) -> T {
        (0..self.dim).fold(T::zero(), |acc, i| acc + self.get(i, i))
    }

    /// Frobenius inner product `tr(Aᵀ B)`.
    pub fn contract(&self, other: &Self) -> T {
        self.data.iter().zip(&other.data).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|&v| v * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn add_assign_scaled(&mut self, other: &Self, s: T) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b * s;
        }
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.dim)
            .map(|i| (0..self.dim).fold(T::zero(), |acc, j| acc + self.get(i, j) * v[j]))
            .collect()
    }

    /// Largest asymmetry `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.dim {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn symmetric_eigenvalues(&self) -> Vec<T> {
        let d = self.dim;
        let m = nalgebra::DMatrix::from_fn(d, d, |i, j| {
            0.5 * (to_f64(self.get(i, j)) + to_f64(self.get(j, i)))
        });
        let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev.into_iter().map(|v| T::from_f64(v).unwrap_or_else(T::nan)).collect()
    }

    /// Trace norm `Σ|λ_i|` of the symmetric part; equals the trace for
    /// positive semi-definite matrices. This is the `|a|` used in every
    /// growth functional, since `tr(a M) <= |a| λ_max(M)` for PSD `a`.
    pub fn trace_norm(&self) -> T {
        if self.dim == 1 {
            return self.data[0].abs();
        }
        self.symmetric_eigenvalues().into_iter().fold(T::zero(), |acc, l| acc + l.abs())
    }

    /// Symmetric square root `S` with `S S = A` of the symmetric part; negative
    /// eigenvalues are clipped to zero.
    pub fn sqrt_psd(&self) -> Self {
        let d = self.dim;
        if d == 1 {
            return Self { dim: 1, data: vec![self.data[0].max(T::zero()).sqrt()] };
        }
        let m = nalgebra::DMatrix::from_fn(d, d, |i, j| {
            0.5 * (to_f64(self.get(i, j)) + to_f64(self.get(j, i)))
        });
        let eig = m.symmetric_eigen();
        let root = nalgebra::DVector::from_iterator(d, eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()));
        let s = &eig.eigenvectors * nalgebra::DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose();
        Self { dim: d, data: (0..d * d).map(|k| T::from_f64(s[(k / d, k % d)]).unwrap_or_else(T::nan)).collect() }
    }

    /// Symmetric within `1e-12` and no eigenvalue below `-1e-12`.
    pub fn is_symmetric_psd(&self) -> bool {
        let tol = T::from_f64(1e-12).unwrap();
        if self.asymmetry() > tol * (T::one() + self.trace().abs()) {
            return false;
        }
        self.symmetric_eigenvalues().first().is_none_or(|&l| l >= -tol)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
