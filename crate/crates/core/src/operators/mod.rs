//! Generator application: local parts, compensated jump integrals, the
//! `π`-truncated form, the spectral fractional Laplacian and the Lyapunov audit.

mod generator;
mod lyapunov;
mod spectral;
mod testfn;
mod truncation;

pub use generator::{
    apply_a, apply_b, apply_generator, apply_n, apply_n_pi, Generator, JumpOperator, PiSplit, StandardGenerator,
};
pub use lyapunov::{jump_part as lyapunov_jump_part, lyapunov_bound_audit, lyapunov_sides, AuditReport, LogLyapunov};
pub use spectral::{frac_laplacian_constant, frac_laplacian_spectral, PeriodicGrid, SpectralOperator, MIN_NODES};
pub use testfn::{Bump, Combination, Gaussian, Plateau, Product, Quadratic, SmoothFn, TestBank, TestFunction, Wave};
pub use truncation::TruncationPi;
