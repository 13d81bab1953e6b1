//! Monte-Carlo audits on simulated paths: the martingale property of
//! `M^f_t = f(X_t) - f(X_0) - ∫_0^t 𝓛f(X_r) dr` and moments of the
//! Lyapunov function `V = ψ(log(1+|x|²))`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ensemble::Paths;
use super::stats::mean_se;
use crate::error::{Error, Result};
use crate::operators::{Generator, TestFunction};
use crate::scalar::{lit, norm, to_f64, Real};

/// Conditioning statistic `ξ(X_s)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiStat {
    One,
    Tanh,
    Cos,
    Positive,
}

impl XiStat {
    pub const ALL: [XiStat; 4] = [XiStat::One, XiStat::Tanh, XiStat::Cos, XiStat::Positive];

    pub fn eval(self, x: f64) -> f64 {
        match self {
            XiStat::One => 1.0,
            XiStat::Tanh => x.tanh(),
            XiStat::Cos => x.cos(),
            XiStat::Positive => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Catmull-Rom interpolation of equispaced samples at fractional index `u`,
/// or `None` outside the interior cells.
fn catmull_rom(values: &[f64], u: f64) -> Option<f64> {
    let j = u.floor();
    if !(j >= 1.0 && (j as usize) + 2 < values.len()) {
        return None;
    }
    let j = j as usize;
    let s = u - j as f64;
    let (p0, p1, p2, p3) = (values[j - 1], values[j], values[j + 1], values[j + 2]);
    Some(p1 + 0.5 * s * (p2 - p0 + s * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + s * (3.0 * (p1 - p2) + p3 - p0))))
}

/// Spacing in `ln|x|` of the outer tables.
const WING_STEP: f64 = 0.01;
/// Outer tables reach `|x| = WING_REACH · max(|lo|, |hi|)`.
const WING_REACH: f64 = 1e7;

/// `x ↦ 𝓛f(x)` for a time-homogeneous generator: Catmull-Rom interpolation
/// of a one-dimensional table on `[lo, hi]`, of tables equispaced in `ln|x|`
/// beyond it, and direct evaluation past their reach.
pub struct GeneratorTable<T: Real> {
    gen: Arc<dyn Generator<T>>,
    f: TestFunction<T>,
    left: f64,
    dx: f64,
    values: Vec<f64>,
    /// `(ln r_0, values at ±r_0 e^{k·WING_STEP})` for the right and left wings.
    right: (f64, Vec<f64>),
    left_wing: (f64, Vec<f64>),
}

impl<T: Real> GeneratorTable<T> {
    pub fn new(gen: Arc<dyn Generator<T>>, f: TestFunction<T>, lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        if gen.dim() != 1 || f.dim() != 1 {
            return Err(Error::InvalidParameter("generator tables are one-dimensional".into()));
        }
        if !(hi > lo) || nodes < 4 {
            return Err(Error::InvalidParameter("table needs hi > lo and at least four nodes".into()));
        }
        let dx = (hi - lo) / (nodes - 1) as f64;
        let apply = |x: f64| gen.apply(&f, T::zero(), &[lit(x)]).map(|e| to_f64(e.value));
        let values = (0..nodes).into_par_iter().map(|j| apply(lo + j as f64 * dx)).collect::<Result<Vec<_>>>()?;
        // the wings start one cell inside the table so interpolation is seamless
        let reach = (WING_REACH * lo.abs().max(hi.abs())).ln();
        let wing = |edge: f64, sign: f64| -> Result<(f64, Vec<f64>)> {
            if !(sign * edge > 2.0 * dx) {
                return Ok((f64::INFINITY, Vec::new()));
            }
            let l0 = (sign * edge - 2.0 * dx).ln();
            let n = ((reach - l0) / WING_STEP).ceil() as usize + 3;
            let v = (0..n).into_par_iter().map(|k| apply(sign * (l0 + k as f64 * WING_STEP).exp())).collect::<Result<_>>()?;
            Ok((l0, v))
        };
        let right = wing(hi, 1.0)?;
        let left_wing = wing(lo, -1.0)?;
        Ok(Self { gen, f, left: lo, dx, values, right, left_wing })
    }

    pub fn function(&self) -> &TestFunction<T> {
        &self.f
    }

    pub fn eval(&self, x: f64) -> f64 {
        if let Some(v) = catmull_rom(&self.values, (x - self.left) / self.dx) {
            return v;
        }
        let (l0, wing) = if x > 0.0 { &self.right } else { &self.left_wing };
        if x != 0.0 {
            if let Some(v) = catmull_rom(wing, (x.abs().ln() - l0) / WING_STEP) {
                return v;
            }
        }
        self.gen.apply(&self.f, T::zero(), &[lit(x)]).map(|e| to_f64(e.value)).unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MartingaleEntry {
    pub function: String,
    pub xi: XiStat,
    pub s: f64,
    pub t: f64,
    /// Estimate of `E[(M^f_t - M^f_s) ξ(X_s)]`.
    pub estimate: f64,
    pub std_error: f64,
    pub z_score: f64,
    /// Richardson estimate of the time-quadrature error, from the path grid
    /// and its every-other-point subgrid.
    pub discretization: f64,
    pub resolved: bool,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MartingaleAudit {
    pub threshold: f64,
    pub entries: Vec<MartingaleEntry>,
    pub passed: bool,
    /// Every entry's discretization error is below its standard error.
    pub resolved: bool,
}

impl MartingaleAudit {
    /// Fraction of entries with `z ≥ z0`.
    pub fn fraction_above(&self, z0: f64) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().filter(|e| e.z_score >= z0).count() as f64 / self.entries.len() as f64
    }
}

fn trapezoid(values: &[f64], times: &[f64], stride: usize) -> f64 {
    let mut acc = 0.0;
    let mut k = 0;
    while k + stride < values.len() {
        acc += 0.5 * (values[k] + values[k + stride]) * (times[k + stride] - times[k]);
        k += stride;
    }
    acc
}

/// Estimates `E[(M^f_t - M^f_s) ξ(X_s)]` for every function, statistic and
/// time pair. `(s, t)` must be grid times; `ξ` and the table use the first
/// coordinate. An entry passes when it lies within `threshold` standard errors of 0.
pub fn martingale_audit<T: Real>(
    paths: &Paths<T>,
    functions: &[GeneratorTable<T>],
    pairs: &[(f64, f64)],
    xis: &[XiStat],
    threshold: f64,
) -> Result<MartingaleAudit> {
    let times: Vec<f64> = paths.times.iter().map(|&t| to_f64(t)).collect();
    let find = |t: f64| {
        times
            .iter()
            .position(|&g| (g - t).abs() <= 1e-9 * (1.0 + t.abs()))
            .ok_or_else(|| Error::InvalidParameter(format!("audit time {t} is not on the path grid")))
    };
    let mut index_pairs = Vec::with_capacity(pairs.len());
    for &(s, t) in pairs {
        let (ks, kt) = (find(s)?, find(t)?);
        if kt <= ks {
            return Err(Error::InvalidParameter(format!("audit pair needs s < t, got ({s}, {t})")));
        }
        index_pairs.push((ks, kt));
    }
    let mut entries = Vec::new();
    for table in functions {
        let f = table.function();
        // values[k][i] and generator values per grid time
        let fv: Vec<Vec<f64>> = paths
            .states
            .iter()
            .map(|s| s.par_chunks(paths.dim).map(|x| to_f64(f.value(x))).collect())
            .collect();
        let lv: Vec<Vec<f64>> = paths
            .states
            .iter()
            .map(|s| s.par_chunks(paths.dim).map(|x| table.eval(to_f64(x[0]))).collect())
            .collect();
        for &(ks, kt) in &index_pairs {
            let span = &times[ks..=kt];
            let per_particle: Vec<(f64, f64, f64)> = (0..paths.n)
                .into_par_iter()
                .map(|i| {
                    let l: Vec<f64> = (ks..=kt).map(|k| lv[k][i]).collect();
                    let fine = fv[kt][i] - fv[ks][i] - trapezoid(&l, span, 1);
                    let coarse = if (kt - ks) % 2 == 0 { fv[kt][i] - fv[ks][i] - trapezoid(&l, span, 2) } else { fine };
                    (fine, coarse, to_f64(paths.position(ks, i)[0]))
                })
                .collect();
            for &xi in xis {
                let fine: Vec<f64> = per_particle.iter().map(|&(m, _, x)| m * xi.eval(x)).collect();
                let coarse: f64 =
                    per_particle.iter().map(|&(_, m, x)| m * xi.eval(x)).sum::<f64>() / paths.n as f64;
                let (estimate, std_error) = mean_se(&fine);
                let z_score = if std_error > 0.0 {
                    estimate.abs() / std_error
                } else if estimate == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
                let discretization = (estimate - coarse).abs() / 3.0;
                entries.push(MartingaleEntry {
                    function: f.label().to_string(),
                    xi,
                    s: times[ks],
                    t: times[kt],
                    estimate,
                    std_error,
                    z_score,
                    discretization,
                    resolved: discretization <= std_error || discretization == 0.0,
                    passed: z_score <= threshold,
                });
            }
        }
    }
    let passed = entries.iter().all(|e| e.passed);
    let resolved = entries.iter().all(|e| e.resolved);
    Ok(MartingaleAudit { threshold, entries, passed, resolved })
}

/// Concave increasing `ψ` with `ψ' ≤ 1` in `V = ψ(log(1+|x|²))`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Psi {
    #[default]
    Identity,
    /// `ψ(r) = log(1 + r)`.
    Log1p,
}

impl Psi {
    pub fn eval(self, r: f64) -> f64 {
        match self {
            Psi::Identity => r,
            Psi::Log1p => r.ln_1p(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentReport {
    /// Monte-Carlo estimate of `E[sup_t V^{1/2}(X_t)]` over the path grid.
    pub estimate: f64,
    pub std_error: f64,
    /// `(R, P(sup V > R), E[sup V^{1/2}]/√R)`: empirical exceedance against
    /// the Markov bound used for non-explosion.
    pub tail: Vec<(f64, f64, f64)>,
    pub exits: usize,
}

pub fn lyapunov_moment_audit<T: Real>(paths: &Paths<T>, psi: Psi) -> MomentReport {
    let sups: Vec<f64> = (0..paths.n)
        .into_par_iter()
        .map(|i| {
            (0..paths.times.len())
                .map(|k| {
                    let r = to_f64(norm(paths.position(k, i)));
                    psi.eval((r * r).ln_1p())
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let roots: Vec<f64> = sups.iter().map(|v| v.sqrt()).collect();
    let (estimate, std_error) = mean_se(&roots);
    let tail = [1.0, 4.0, 16.0, 64.0]
        .iter()
        .map(|&r| {
            let frac = sups.iter().filter(|&&v| v > r).count() as f64 / sups.len() as f64;
            (r, frac, estimate / r.sqrt())
        })
        .collect();
    MomentReport { estimate, std_error, tail, exits: paths.exits }
}

/// Largest relative change between consecutive estimates of a refinement
/// sequence, and whether it stays within `tol`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefinementCheck {
    pub estimates: Vec<f64>,
    pub max_relative_change: f64,
    pub stable: bool,
}

pub fn refinement_check(reports: &[MomentReport], tol: f64) -> RefinementCheck {
    let estimates: Vec<f64> = reports.iter().map(|r| r.estimate).collect();
    let max_relative_change = estimates
        .windows(2)
        .map(|w| (w[1] - w[0]).abs() / w[0].abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    RefinementCheck { estimates, max_relative_change, stable: max_relative_change <= tol }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientField;
    use crate::levy::ZeroKernel;
    use crate::operators::StandardGenerator;
    use crate::quadrature::QuadratureSpec;
    use crate::sde::ensemble::{dirac, simulate_paths, JumpSpec, SimConfig};

    #[test]
    fn zero_dynamics_give_exact_zero() {
        let coeffs = CoefficientField::<f64>::zero(1);
        let times: Vec<f64> = (0..=4).map(|k| k as f64 * 0.25).collect();
        let paths =
            simulate_paths(dirac(vec![0.3]).as_ref(), &coeffs, &JumpSpec::None, &times, 100, &SimConfig::default())
                .unwrap();
        let gen: Arc<dyn Generator<f64>> = Arc::new(
            StandardGenerator::new(coeffs, Arc::new(ZeroKernel::new(1, 1.0)), &QuadratureSpec::default()).unwrap(),
        );
        let table = GeneratorTable::new(gen, TestFunction::bump(vec![0.0], 1.0), -2.0, 2.0, 41).unwrap();
        let audit = martingale_audit(&paths, &[table], &[(0.0, 1.0), (0.25, 0.75)], &XiStat::ALL, 3.0).unwrap();
        assert!(audit.passed);
        assert!(audit.entries.iter().all(|e| e.estimate == 0.0 && e.z_score == 0.0));
        let m = lyapunov_moment_audit(&paths, Psi::Identity);
        assert!((m.estimate - (0.09_f64).ln_1p().sqrt()).abs() < 1e-15);
    }

    #[test]
    fn catmull_rom_reproduces_cubics() {
        let coeffs = CoefficientField::<f64>::zero(1);
        let gen: Arc<dyn Generator<f64>> = Arc::new(
            StandardGenerator::new(coeffs, Arc::new(ZeroKernel::new(1, 1.0)), &QuadratureSpec::default()).unwrap(),
        );
        let mut table = GeneratorTable::new(gen, TestFunction::bump(vec![0.0], 1.0), 0.0, 1.0, 11).unwrap();
        table.values = (0..11).map(|j| (j as f64 * 0.1).powi(2)).collect();
        assert!((table.eval(0.55) - 0.3025).abs() < 1e-12);
    }

    #[test]
    fn wings_match_direct_evaluation() {
        let k = crate::sde::StableParams::new(1.5, 1, crate::sde::StableNormalization::LevyMeasure)
            .unwrap()
            .kernel(0.5)
            .unwrap();
        let gen: Arc<dyn Generator<f64>> = Arc::new(
            StandardGenerator::new(CoefficientField::zero(1), Arc::new(k), &QuadratureSpec::default()).unwrap(),
        );
        let f = TestFunction::modulated_bump(vec![0.5], 1.5, vec![2.0], 0.3);
        let table = GeneratorTable::new(gen.clone(), f.clone(), -3.0, 3.0, 121).unwrap();
        for x in [2.99, 3.02, 4.3, -7.7, 55.0, -1234.5, 8.0e5] {
            let direct = gen.apply(&f, 0.0, &[x]).unwrap().value;
            assert!((table.eval(x) - direct).abs() <= 1e-4 * direct.abs() + 1e-6, "x={x}: {} vs {direct}", table.eval(x));
        }
    }
}
