//! Experiment configuration files (TOML). Unknown keys are rejected and
//! every default is written back into the resolved configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use levyfp::coefficients::CoefficientField;
use levyfp::ddsde::DensityEstimator;
use levyfp::fpme::FpmeConfig;
use levyfp::levy::{LevyKernel, StableLike, StateFn, ZeroKernel};
use levyfp::matrix::Matrix;
use levyfp::quadrature::QuadratureSpec;
use levyfp::sde::{GuardPolicy, XiStat};

use crate::expr::Expr;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub coefficients: CoefficientConfig,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<ResidualConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fpme: Option<FpmeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ddsde: Option<DdsdeSection>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    None,
    StableLike,
}

/// `ν_{t,x}(dz) = κ dz/|z|^{d+α}` with `κ` an expression in `t`, `x_i`
/// and optionally `z_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelFamily,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_ell")]
    pub ell: f64,
    #[serde(default = "default_one")]
    pub kappa: String,
    /// Required when `kappa` depends on `z`: a bound of `κ` over `z`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_bound: Option<String>,
    /// Whether `κ_t(x, z) = κ_t(x, -z)`; ignored unless `kappa` depends on `z`.
    #[serde(default = "default_true")]
    pub symmetric: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::None,
            alpha: default_alpha(),
            ell: default_ell(),
            kappa: default_one(),
            kappa_bound: None,
            symmetric: true,
        }
    }
}

fn default_alpha() -> f64 {
    1.5
}
fn default_ell() -> f64 {
    0.5
}
fn default_one() -> String {
    "1".into()
}
fn default_true() -> bool {
    true
}

/// `a` as `d×d` row-major expressions (empty for zero) and `b` as `d` expressions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    #[serde(default)]
    pub diffusion: Vec<String>,
    #[serde(default)]
    pub drift: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    pub times: Vec<f64>,
    /// Probes at `±r e_1` for `per_side` log-spaced `r` in `[probe_min, probe_max]`, plus the origin.
    pub probe_min: f64,
    pub probe_max: f64,
    pub per_side: usize,
    pub trend_threshold: f64,
    pub radii: Vec<f64>,
    pub horizon: f64,
    /// Curve for the integrability report; a static standard normal when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve: Option<PathBuf>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            times: vec![0.0],
            probe_min: 1e-2,
            probe_max: 1e3,
            per_side: 25,
            trend_threshold: levyfp::levy::DEFAULT_TREND_THRESHOLD,
            radii: vec![1.0, 2.0, 4.0, 8.0],
            horizon: 1.0,
            curve: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualConfig {
    /// Curve CSV with columns `time,kind,x1..xd,value`.
    pub curve: PathBuf,
    /// Report times; every curve time when empty.
    #[serde(default)]
    pub times: Vec<f64>,
    /// Pass threshold for `|R(f,t)|/‖f‖_{C²}`.
    #[serde(default = "default_residual_tol")]
    pub tolerance: f64,
}

fn default_residual_tol() -> f64 {
    1e-2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpMode {
    /// No jumps.
    None,
    /// Small jumps as a Gaussian surrogate, large jumps sampled from the kernel.
    Kernel,
    /// Exact stable increments `κ(t,x)^{1/α} ΔL` with `L` of Lévy measure `dz/|z|^{d+α}`.
    Stable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum InitConfig {
    Dirac { point: Vec<f64> },
    Gaussian { mean: Vec<f64>, variance: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub particles: usize,
    pub t_end: f64,
    /// Number of recorded intervals on `[0, t_end]`.
    pub steps: usize,
    #[serde(default = "default_max_dt")]
    pub max_dt: f64,
    #[serde(default = "default_guard")]
    pub guard: f64,
    #[serde(default = "default_policy")]
    pub policy: GuardPolicy,
    pub jumps: JumpMode,
    pub init: InitConfig,
    /// Write every particle position at every recorded time.
    #[serde(default = "default_true")]
    pub write_marginals: bool,
    #[serde(default)]
    pub martingale: Option<MartingaleConfig>,
    #[serde(default)]
    pub moment: Option<MomentConfig>,
    #[serde(default)]
    pub ks: Option<KsConfig>,
}

fn default_max_dt() -> f64 {
    0.01
}
fn default_guard() -> f64 {
    levyfp::sde::DEFAULT_GUARD
}
fn default_policy() -> GuardPolicy {
    GuardPolicy::Error
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleConfig {
    pub pairs: Vec<(f64, f64)>,
    #[serde(default = "default_xis")]
    pub xis: Vec<XiStat>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_table_half_width")]
    pub table_half_width: f64,
    #[serde(default = "default_table_nodes")]
    pub table_nodes: usize,
}

fn default_xis() -> Vec<XiStat> {
    XiStat::ALL.to_vec()
}
fn default_threshold() -> f64 {
    3.0
}
fn default_table_half_width() -> f64 {
    12.0
}
fn default_table_nodes() -> usize {
    1201
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentConfig {
    #[serde(default = "default_psi")]
    pub psi: levyfp::sde::Psi,
}

fn default_psi() -> levyfp::sde::Psi {
    levyfp::sde::Psi::Identity
}

/// One-sample KS test of the final marginal against the pure stable law
/// started from the initial point (stable jumps, constant `κ`, no `a` or `b`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KsConfig {
    /// The audit passes when the p-value is at least this.
    #[serde(default = "default_significance")]
    pub significance: f64,
}

fn default_significance() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum ProfileConfig {
    /// `exp(1 - 1/(1 - (x/r)²))` on `|x| < r`.
    Bump { radius: f64 },
    /// Expression in `x1`; negative values are clipped.
    Expression { expr: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpmeSection {
    pub m: f64,
    pub alpha: f64,
    pub width: f64,
    pub nodes: usize,
    pub times: Vec<f64>,
    pub init: ProfileConfig,
    #[serde(default)]
    pub solver: FpmeConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdsdeSection {
    /// Exponent used by the particles; the solver's `m` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    pub particles: usize,
    pub dt: f64,
    #[serde(default = "default_floor")]
    pub density_floor: f64,
    #[serde(default = "default_refresh")]
    pub refresh: usize,
    #[serde(default)]
    pub estimator: DensityEstimator,
    pub report_times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_spacing: Option<f64>,
}

fn default_floor() -> f64 {
    1e-8
}
fn default_refresh() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| anyhow!("invalid configuration: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            bail!("dim must be positive");
        }
        self.quadrature.validate()?;
        let c = &self.coefficients;
        if !c.diffusion.is_empty() && c.diffusion.len() != self.dim * self.dim {
            bail!("coefficients.diffusion needs {} entries, got {}", self.dim * self.dim, c.diffusion.len());
        }
        if !c.drift.is_empty() && c.drift.len() != self.dim {
            bail!("coefficients.drift needs {} entries, got {}", self.dim, c.drift.len());
        }
        self.coefficient_field()?;
        self.kernel()?;
        Ok(())
    }

    fn parse(&self, s: &str, what: &str, allow_z: bool) -> Result<Expr> {
        let e = Expr::parse(s, self.dim).map_err(|e| anyhow!("{what} = {s:?}: {e}"))?;
        if !allow_z && e.uses_jump() {
            bail!("{what} = {s:?} may not depend on z");
        }
        Ok(e)
    }

    pub fn coefficient_field(&self) -> Result<CoefficientField<f64>> {
        let d = self.dim;
        let mut field = CoefficientField::zero(d);
        let c = &self.coefficients;
        if !c.diffusion.is_empty() {
            let a: Vec<Expr> = c
                .diffusion
                .iter()
                .enumerate()
                .map(|(i, s)| self.parse(s, &format!("coefficients.diffusion[{i}]"), false))
                .collect::<Result<_>>()?;
            field = field.with_diffusion(Arc::new(move |t, x: &[f64]| {
                Matrix::from_rows(d, a.iter().map(|e| e.eval(t, x, &[])).collect())
            }));
        }
        if !c.drift.is_empty() {
            let b: Vec<Expr> = c
                .drift
                .iter()
                .enumerate()
                .map(|(i, s)| self.parse(s, &format!("coefficients.drift[{i}]"), false))
                .collect::<Result<_>>()?;
            field = field.with_drift(Arc::new(move |t, x: &[f64]| b.iter().map(|e| e.eval(t, x, &[])).collect()));
        }
        Ok(field)
    }

    /// The configured kernel; `None` for the zero kernel.
    pub fn stable_kernel(&self) -> Result<Option<StableLike<f64>>> {
        let k = &self.kernel;
        if k.family == KernelFamily::None {
            return Ok(None);
        }
        let kappa = self.parse(&k.kappa, "kernel.kappa", true)?;
        let kernel = if kappa.uses_jump() {
            let bound_src = k
                .kappa_bound
                .as_deref()
                .ok_or_else(|| anyhow!("kernel.kappa depends on z, so kernel.kappa_bound is required"))?;
            let bound = self.parse(bound_src, "kernel.kappa_bound", false)?;
            StableLike::general(
                self.dim,
                k.alpha,
                k.ell,
                Arc::new(move |t, x: &[f64], z: &[f64]| kappa.eval(t, x, z)),
                Arc::new(move |t, x: &[f64]| bound.eval(t, x, &[])),
                k.symmetric,
            )?
        } else {
            let f: StateFn<f64> = Arc::new(move |t, x: &[f64]| kappa.eval(t, x, &[]));
            StableLike::state_dependent(self.dim, k.alpha, k.ell, f)?
        };
        Ok(Some(kernel))
    }

    pub fn kernel(&self) -> Result<Arc<dyn LevyKernel<f64>>> {
        Ok(match self.stable_kernel()? {
            Some(k) => Arc::new(k),
            None => Arc::new(ZeroKernel::new(self.dim, self.kernel.ell)),
        })
    }

    /// `κ(t,x)^{1/α}` for exact stable increments.
    pub fn stable_sigma(&self) -> Result<StateFn<f64>> {
        if self.kernel.family != KernelFamily::StableLike {
            bail!("jumps = \"stable\" needs kernel.family = \"stable_like\"");
        }
        let kappa = self.parse(&self.kernel.kappa, "kernel.kappa", false)?;
        let inv = 1.0 / self.kernel.alpha;
        Ok(Arc::new(move |t, x: &[f64]| kappa.eval(t, x, &[]).max(0.0).powf(inv)))
    }

}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_round_trips_with_defaults() {
        let cfg = ExperimentConfig::from_toml("dim = 1\n").unwrap();
        let text = cfg.to_toml().unwrap();
        let again = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, again);
        assert!(text.contains("inner_fraction"));
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let err = ExperimentConfig::from_toml("dim = 1\n\n[kernel]\nfamily = \"none\"\nalpah = 1.0\n").unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("alpah"), "{msg}");
        assert!(msg.contains("line 5"), "{msg}");
    }

    #[test]
    fn empty_config_is_a_parse_error() {
        assert!(ExperimentConfig::from_toml("").is_err());
    }

    #[test]
    fn expressions_are_checked_at_load() {
        let bad = "dim = 1\n[coefficients]\ndrift = [\"x2\"]\n";
        assert!(ExperimentConfig::from_toml(bad).is_err());
        let z_in_drift = "dim = 1\n[coefficients]\ndrift = [\"z1\"]\n";
        assert!(ExperimentConfig::from_toml(z_in_drift).is_err());
        let no_bound = "dim = 1\n[kernel]\nfamily = \"stable_like\"\nkappa = \"1 + z1^2\"\n";
        assert!(ExperimentConfig::from_toml(no_bound).is_err());
    }
}
