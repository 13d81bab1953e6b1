//! Lévy kernels `ν_{t,x}` and their growth functionals.

mod functionals;
mod kernel;

pub use functionals::{
    assumption_report, log_tail_full, log_tail_functional, shifted_log_tail, small_jump_moment, tail_mass,
    ConditionReport, PerTerm, Probe, ProbeGrid, DEFAULT_TREND_THRESHOLD,
};
pub(crate) use functionals::{log_tail_with, shell, shell_capped, small_jump_moment_with, tail_mass_with};
pub use kernel::{
    uniform_direction, JumpFn, Kappa, LevyKernel, RadialRestriction, StableLike, StateFn, ZeroKernel,
};
