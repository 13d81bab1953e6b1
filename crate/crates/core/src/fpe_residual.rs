//! Weak-form residual of a measure curve against the non-local
//! Fokker-Planck equation, and the integrability conditions that make the
//! weak form meaningful.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::levy::{small_jump_moment_with, tail_mass_with, LevyKernel};
use crate::measure::MeasureCurve;
use crate::operators::{Generator, StandardGenerator, TestBank, TestFunction};
use crate::quadrature::{QuadratureSpec, Rules};
use crate::scalar::{lit, norm, to_f64, Real};

/// Residuals `R(f, t) = μ_t(f) - μ_0(f) - ∫_0^t μ_s(𝓛_s f) ds`, rows per test
/// function and columns per reported time.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub functions: Vec<String>,
    pub times: Vec<f64>,
    pub residuals: Vec<Vec<f64>>,
    /// Quadrature plus time-discretization error estimates, same layout.
    pub errors: Vec<Vec<f64>>,
    /// Sampled `‖f‖_{C²}` per function.
    pub c2_norms: Vec<f64>,
    /// `max_i |μ_{t_{i+1}}(f) - μ_{t_i}(f)|` per function (diagnostic only).
    pub continuity_modulus: Vec<f64>,
}

impl ResidualReport {
    /// `max |R(f,t)| / ‖f‖_{C²}`.
    pub fn max_relative(&self) -> f64 {
        self.residuals
            .iter()
            .zip(&self.c2_norms)
            .flat_map(|(row, n)| row.iter().map(move |r| r.abs() / n))
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.residuals.iter().flatten().fold(0.0, |a, r| a.max(r.abs()))
    }

    /// CSV matrix with one row per function and one column per time.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["function".to_string()];
        header.extend(self.times.iter().map(|t| format!("t={t}")));
        w.write_record(&header)?;
        for (name, row) in self.functions.iter().zip(&self.residuals) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|r| r.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Residuals for `(a, b, ν)` with the default generator.
pub fn residual<T: Real>(
    curve: &MeasureCurve<T>,
    coeffs: &CoefficientField<T>,
    k: Arc<dyn LevyKernel<T>>,
    bank: &TestBank<T>,
    times: &[T],
    quad: &QuadratureSpec,
) -> Result<ResidualReport> {
    let gen = StandardGenerator::new(coeffs.clone(), k, quad)?;
    residual_with(curve, &gen, bank, times)
}

/// `μ_{t_i}(𝓛_{t_i} f)` at every curve time with an error estimate.
fn generator_pairing<T: Real, G: Generator<T> + ?Sized>(
    curve: &MeasureCurve<T>,
    gen: &G,
    f: &TestFunction<T>,
) -> Result<Vec<(T, T)>> {
    curve
        .times()
        .iter()
        .zip(curve.snapshots())
        .map(|(&t, snap)| {
            let mut acc = T::zero();
            let mut err = T::zero();
            let mut first: Option<Error> = None;
            let mut edge = T::zero();
            let mut last_x = T::zero();
            let mut n = 0usize;
            snap.for_each_atom(|x, w| {
                if first.is_some() {
                    return;
                }
                match gen.apply(f, t, x) {
                    Ok(v) => {
                        acc = acc + w * v.value;
                        err = err + w * v.error;
                        if n == 0 {
                            edge = v.value.abs();
                        }
                        last_x = v.value.abs();
                        n += 1;
                    }
                    Err(e) => first = Some(e),
                }
            });
            if let Some(e) = first {
                return Err(e);
            }
            // mass outside a grid sees at most the generator's size at the grid ends
            err = err + snap.exterior_mass() * edge.max(last_x);
            Ok((acc, err))
        })
        .collect()
}

/// Residuals for an arbitrary generator; `times` must lie on the curve grid.
pub fn residual_with<T: Real, G: Generator<T> + ?Sized>(
    curve: &MeasureCurve<T>,
    gen: &G,
    bank: &TestBank<T>,
    times: &[T],
) -> Result<ResidualReport> {
    if curve.dim() != gen.dim() {
        return Err(Error::DimensionMismatch { expected: gen.dim(), got: curve.dim() });
    }
    let idx: Vec<usize> = times
        .iter()
        .map(|&t| {
            curve
                .index_of(t)
                .ok_or_else(|| Error::InvalidParameter(format!("time {t} is not on the curve grid")))
        })
        .collect::<Result<_>>()?;
    let ts = curve.times();
    let mut report = ResidualReport {
        functions: bank.iter().map(|f| f.label().to_string()).collect(),
        times: times.iter().map(|&t| to_f64(t)).collect(),
        residuals: Vec::with_capacity(bank.len()),
        errors: Vec::with_capacity(bank.len()),
        c2_norms: bank.iter().map(|f| to_f64(f.c2_norm())).collect(),
        continuity_modulus: Vec::with_capacity(bank.len()),
    };
    for f in bank.iter() {
        let masses: Vec<T> = curve.snapshots().iter().map(|s| s.integrate(|x| f.value(x))).collect();
        let pairing = generator_pairing(curve, gen, f)?;
        // cumulative trapezoid and its quadrature error
        let mut integral = vec![T::zero(); ts.len()];
        let mut qerr = vec![T::zero(); ts.len()];
        for i in 1..ts.len() {
            let h = ts[i] - ts[i - 1];
            integral[i] = integral[i - 1] + (pairing[i].0 + pairing[i - 1].0) * h * lit(0.5);
            qerr[i] = qerr[i - 1] + (pairing[i].1 + pairing[i - 1].1) * h * lit(0.5);
        }
        let mut row = Vec::with_capacity(idx.len());
        let mut erow = Vec::with_capacity(idx.len());
        for &k in &idx {
            let r = masses[k] - masses[0] - integral[k];
            row.push(to_f64(r));
            erow.push(to_f64(qerr[k] + time_error(ts, &pairing, k)));
        }
        report.residuals.push(row);
        report.errors.push(erow);
        let modulus = masses.windows(2).map(|w| (w[1] - w[0]).abs()).fold(T::zero(), T::max);
        report.continuity_modulus.push(to_f64(modulus));
    }
    Ok(report)
}

/// `|trap(h) - trap(2h)| / 3` on `[t_0, t_k]` using every other node when `k`
/// is even; zero otherwise.
fn time_error<T: Real>(ts: &[T], pairing: &[(T, T)], k: usize) -> T {
    if k < 2 || k % 2 == 1 {
        return T::zero();
    }
    let mut fine = T::zero();
    let mut coarse = T::zero();
    for i in 1..=k {
        fine = fine + (pairing[i].0 + pairing[i - 1].0) * (ts[i] - ts[i - 1]) * lit(0.5);
    }
    for i in (2..=k).step_by(2) {
        coarse = coarse + (pairing[i].0 + pairing[i - 2].0) * (ts[i] - ts[i - 2]) * lit(0.5);
    }
    (fine - coarse).abs() / lit(3.0)
}

/// Sampled values of both integrability conditions for one radius.
#[derive(Clone, Debug, Serialize)]
pub struct IntegrabilityEntry {
    pub radius: f64,
    /// `∫_0^T ∫ 1_{B_R}(|a| + |b| + g^ν) dμ_s ds`
    pub local: f64,
    /// `∫_0^T ∫ [ν(B^c_{ℓ∨(|x|-R)}) + 1_{B_R} ν(B^c_ℓ)] dμ_s ds`
    pub jumps: f64,
    /// Same integrals with refined quadrature.
    pub local_refined: f64,
    pub jumps_refined: f64,
    pub finite: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct IntegrabilityReport {
    pub horizon: f64,
    pub entries: Vec<IntegrabilityEntry>,
}

impl IntegrabilityReport {
    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.finite)
    }
}

/// Relative change under refinement above which an integral is flagged.
pub const STABILITY_TOL: f64 = 1e-2;

fn condition_integrals<T: Real>(
    curve: &MeasureCurve<T>,
    coeffs: &CoefficientField<T>,
    k: &dyn LevyKernel<T>,
    radius: T,
    horizon: T,
    rules: &Rules<T>,
) -> Result<(f64, f64)> {
    let ell = k.cutoff();
    let tail = |t: T, x: &[T], r: T| -> Result<T> {
        match k.closed_tail_mass(t, x, r) {
            Some(v) => Ok(v),
            None => Ok(tail_mass_with(k, t, x, r, rules)?.value),
        }
    };
    let mut prev: Option<(T, T, T)> = None;
    let (mut local, mut jumps) = (T::zero(), T::zero());
    for (&t, snap) in curve.times().iter().zip(curve.snapshots()) {
        if t > horizon {
            break;
        }
        let mut l = T::zero();
        let mut j = T::zero();
        let mut failure: Option<Error> = None;
        snap.for_each_atom(|x, w| {
            if failure.is_some() {
                return;
            }
            let inside = norm(x) <= radius;
            let res = (|| -> Result<()> {
                if inside {
                    let mut v = T::zero();
                    if coeffs.has_diffusion() {
                        v = v + coeffs.diffusion(t, x).trace_norm();
                    }
                    if coeffs.has_drift() {
                        v = v + norm(&coeffs.drift(t, x));
                    }
                    if !k.is_zero() {
                        v = v + small_jump_moment_with(k, t, x, rules)?.value;
                    }
                    l = l + w * v;
                }
                if !k.is_zero() {
                    let mut v = tail(t, x, ell.max(norm(x) - radius))?;
                    if inside {
                        v = v + tail(t, x, ell)?;
                    }
                    j = j + w * v;
                }
                Ok(())
            })();
            if let Err(e) = res {
                failure = Some(e);
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if let Some((t0, l0, j0)) = prev {
            let h = (t - t0) * lit(0.5);
            local = local + (l + l0) * h;
            jumps = jumps + (j + j0) * h;
        }
        prev = Some((t, l, j));
    }
    Ok((to_f64(local), to_f64(jumps)))
}

/// Both integrability conditions on `[t_0, T]` for each radius in `radii`;
/// divergence shows up as a non-finite value or instability under
/// quadrature refinement.
pub fn integrability_report<T: Real>(
    curve: &MeasureCurve<T>,
    coeffs: &CoefficientField<T>,
    k: &dyn LevyKernel<T>,
    radii: &[T],
    horizon: T,
    quad: &QuadratureSpec,
) -> Result<IntegrabilityReport> {
    let rules = Rules::new(quad, curve.dim())?;
    let fine = Rules::new(&quad.refined(2.0), curve.dim())?;
    let mut entries = Vec::with_capacity(radii.len());
    for &r in radii {
        let (local, jumps, local_refined, jumps_refined, finite) =
            match (condition_integrals(curve, coeffs, k, r, horizon, &rules), condition_integrals(curve, coeffs, k, r, horizon, &fine)) {
                (Ok((l, j)), Ok((lf, jf))) => {
                    let stable = |a: f64, b: f64| (a - b).abs() <= STABILITY_TOL * a.abs().max(b.abs()).max(1e-300);
                    let ok = [l, j, lf, jf].iter().all(|v| v.is_finite()) && stable(l, lf) && stable(j, jf);
                    (l, j, lf, jf, ok)
                }
                _ => (f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY, false),
            };
        entries.push(IntegrabilityEntry { radius: to_f64(r), local, jumps, local_refined, jumps_refined, finite });
    }
    Ok(IntegrabilityReport { horizon: to_f64(horizon), entries })
}
