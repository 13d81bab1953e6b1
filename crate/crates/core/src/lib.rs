#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coefficients;
pub mod ddsde;
pub mod error;
pub mod fpe_residual;
pub mod fpme;
pub mod levy;
pub mod matrix;
pub mod measure;
pub mod mollifier;
pub mod operators;
pub mod quadrature;
pub mod scalar;
pub mod sde;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision instances of the generic types.
pub type CoefficientField64 = coefficients::CoefficientField<f64>;
pub type StableLike64 = levy::StableLike<f64>;
pub type MeasureCurve64 = measure::MeasureCurve<f64>;
pub type GridDensity64 = measure::GridDensity<f64>;
pub type ParticleCloud64 = measure::ParticleCloud<f64>;
pub type TestFunction64 = operators::TestFunction<f64>;
pub type TestBank64 = operators::TestBank<f64>;
pub type PeriodicGrid64 = operators::PeriodicGrid<f64>;
pub type MollifiedFamily64 = mollifier::MollifiedFamily<f64>;
pub type StableParams64 = sde::StableParams<f64>;
pub type FpmeSolution64 = fpme::FpmeSolution<f64>;

/// Single-precision instances of the generic types.
pub type CoefficientField32 = coefficients::CoefficientField<f32>;
pub type StableLike32 = levy::StableLike<f32>;
pub type MeasureCurve32 = measure::MeasureCurve<f32>;
pub type TestFunction32 = operators::TestFunction<f32>;
pub type PeriodicGrid32 = operators::PeriodicGrid<f32>;
