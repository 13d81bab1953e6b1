//! Simulation of jump diffusions: stable increments, Euler ensembles and
//! path audits.

mod audit;
mod ensemble;
mod rng;
mod stable;
pub mod stats;

pub use audit::{
    lyapunov_moment_audit, martingale_audit, refinement_check, GeneratorTable, MartingaleAudit, MartingaleEntry,
    MomentReport, Psi, RefinementCheck, XiStat,
};
pub use ensemble::{
    advance, dirac, euler_step, gaussian_sampler, simulate_marginals, simulate_paths, GuardPolicy, JumpSpec,
    ParticleEnsemble, Paths, Sampler, SimConfig, DEFAULT_GUARD,
};
pub use rng::stream;
pub use stable::{
    positive_stable, sample_stable, standard_symmetric_stable, StableNormalization, StableOracle, StableParams,
};
