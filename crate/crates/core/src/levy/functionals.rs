//! Growth functionals of a Lévy kernel and the standing growth assumption.

use serde::Serialize;

use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::levy::LevyKernel;
use crate::quadrature::{inner_extrapolation, outer_doubling, Estimate, QuadratureSpec, Rules};
use crate::scalar::{distance, lit, norm, to_f64, Real};

/// `∫_{a<|z|<b} F(z) dz` in polar coordinates with log-spaced radial panels;
/// `breaks` are extra radial panel boundaries.
pub(crate) fn shell<T: Real, F: FnMut(&[T]) -> T>(rules: &Rules<T>, a: T, b: T, breaks: &[T], f: F) -> T {
    shell_capped(rules, a, b, breaks, T::infinity(), f)
}

/// As [`shell`], with every radial panel additionally at most `max_width`
/// wide in `r`.
pub(crate) fn shell_capped<T: Real, F: FnMut(&[T]) -> T>(
    rules: &Rules<T>,
    a: T,
    b: T,
    breaks: &[T],
    max_width: T,
    mut f: F,
) -> T {
    if !(b > a) {
        return T::zero();
    }
    let dim = rules.sphere.dim();
    let mut cuts: Vec<T> = breaks.iter().copied().filter(|&c| c > a && c < b).collect();
    cuts.sort_by(|p, q| p.partial_cmp(q).unwrap());
    cuts.dedup();
    let ratio = rules.log_panel.exp();
    let mut z = vec![T::zero(); dim];
    let mut lo = a;
    let mut acc = T::zero();
    for stop in cuts.into_iter().chain(std::iter::once(b)) {
        while lo < stop {
            let hi = (lo * ratio).min(lo + max_width).min(stop);
            let hi = if (stop - hi) < (hi - lo) * lit(1e-9) { stop } else { hi };
            acc = acc
                + rules.line.integrate(lo.ln(), hi.ln(), |s| {
                    let r = s.exp();
                    let jac = r.powi(dim as i32);
                    let mut v = T::zero();
                    for (th, w) in rules.sphere.iter() {
                        for (zi, &ti) in z.iter_mut().zip(th) {
                            *zi = ti * r;
                        }
                        v = v + w * f(&z);
                    }
                    v * jac
                });
            lo = hi;
        }
    }
    acc
}

fn rules_for<T: Real, K: LevyKernel<T> + ?Sized>(k: &K, quad: &QuadratureSpec) -> Result<Rules<T>> {
    Rules::new(quad, k.dim())
}

/// `g^ν_t(x) = ∫_{|z|<ℓ} |z|² ν_{t,x}(dz)`.
///
/// Shell quadrature on `[δ_in, ℓ]` plus the kernel's closed-form inner-ball
/// moment; kernels without one get a geometric extrapolation of halved
/// shells, which fails with `NonIntegrable` when the shells do not shrink.
pub fn small_jump_moment<T: Real, K: LevyKernel<T> + ?Sized>(
    k: &K,
    t: T,
    x: &[T],
    quad: &QuadratureSpec,
) -> Result<Estimate<T>> {
    if k.is_zero() {
        return Ok(Estimate::zero());
    }
    let rules = rules_for(k, quad)?;
    small_jump_moment_with(k, t, x, &rules)
}

pub(crate) fn small_jump_moment_with<T: Real, K: LevyKernel<T> + ?Sized>(
    k: &K,
    t: T,
    x: &[T],
    rules: &Rules<T>,
) -> Result<Estimate<T>> {
    let ell = k.cutoff();
    let delta = ell * lit(rules.spec.inner_fraction);
    let breaks = k.radial_breakpoints();
    let integrand = |z: &[T]| {
        let r2 = z.iter().fold(T::zero(), |a, &c| a + c * c);
        r2 * k.density(t, x, z)
    };
    let outer = shell(rules, delta, ell, &breaks, integrand);
    let coarse = {
        let mut r = rules.clone();
        r.log_panel = r.log_panel * lit(2.0);
        shell(&r, delta, ell, &breaks, integrand)
    };
    let inner = match k.inner_second_moment(t, x, delta) {
        Some(m) => Estimate::exact(m.trace()),
        None => inner_extrapolation(delta, |a, b| shell(rules, a, b, &breaks, integrand))?,
    };
    let value = outer + inner.value;
    if !value.is_finite() {
        return Err(Error::NonIntegrable("small-jump second moment is not finite".into()));
    }
    Ok(Estimate { value, error: inner.error + (outer - coarse).abs() })
}

/// `∫_{|z| > r_min} log(1 + |z|/scale) ν_{t,x}(dz)`.
pub(crate) fn log_tail_with<T: Real, K: LevyKernel<T> + ?Sized>(
    k: &K,
    t: T,
    x: &[T],
    scale: T,
    r_min: T,
    rules: &Rules<T>,
) -> Result<Estimate<T>> {
    if k.is_zero() {
        return Ok(Estimate::zero());
    }
    let breaks = k.radial_breakpoints();
    outer_doubling(
        r_min,
        r_min * lit(2.0),
        lit(rules.spec.outer_rel_tol),
        rules.spec.max_doublings,
        |a, b| shell(rules, a, b, &breaks, |z| (T::one() + norm(z) / scale).ln() * k.density(t, x, z)),
    )
}

/// `ħ^ν_t(x)`: integrated over `|z| > ℓ` with weight `log(1 + |z|/(1+|x|))`;
/// symmetric kernels integrate over `|z| > 1 + |x|` only.
pub fn log_tail_functional<T: Real, K: LevyKernel<T> + ?Sized>(
    k: &K,
    t: T,
    x: &[T],
    quad: &QuadratureSpec,
) -> Result<Estimate<T>> {
    let rules = rules_for(k, quad)?;
    log_tail_functional_with(k, t, x, &rules)
}

pub(crate) fn log_tail_functional_with<T: Real, K: LevyKernel<T> + ?Sized>(
    k: &K,
    t: T,
    x: &[T],
    rules: &Rules<T>,
) -> Result<Estimate<T>> {
    let scale = T::one() + norm(x);
    let r_min = if k.is_symmetric() { scale.max(k.cutoff()) } else { k.cutoff() };
    log_tail_with(k, t, x, scale, r_min, rules)
}

/// `ħ^ν_t(x)` over `|z| > ℓ` regardless of the symmetry flag.
pub fn log_tail_full<T: Real, K: LevyKernel<T> + ?Sized>(
    k: &K,
    t: T,
    x: &[T],
    quad: &QuadratureSpec,
) -> Result<Estimate<T>> {
    let rules = rules_for(k, quad)?;
    log_tail_with(k, t, x, T::one() + norm(x), k.cutoff(), &rules)
}

/// `H^ν_t(x, y) = ∫_{|z|>ℓ} log(1 + |z|/(1+|x-y|)) ν_{t,x}(dz)`.
pub fn shifted_log_tail<T: Real, K: LevyKernel<T> + ?Sized>(
    k: &K,
    t: T,
    x: &[T],
    y: &[T],
    quad: &QuadratureSpec,
) -> Result<Estimate<T>> {
    let rules = rules_for(k, quad)?;
    log_tail_with(k, t, x, T::one() + distance(x, y), k.cutoff(), &rules)
}

/// `ν_{t,x}(|z| > r)` for `r >= ℓ`.
pub fn tail_mass<T: Real, K: LevyKernel<T> + ?Sized>(
    k: &K,
    t: T,
    x: &[T],
    r: T,
    quad: &QuadratureSpec,
) -> Result<Estimate<T>> {
    if !(r >= k.cutoff()) {
        return Err(Error::InvalidParameter(format!("tail radius {r} below the cutoff {}", k.cutoff())));
    }
    let rules = rules_for(k, quad)?;
    tail_mass_with(k, t, x, r, &rules)
}

pub(crate) fn tail_mass_with<T: Real, K: LevyKernel<T> + ?Sized>(
    k: &K,
    t: T,
    x: &[T],
    r: T,
    rules: &Rules<T>,
) -> Result<Estimate<T>> {
    if k.is_zero() {
        return Ok(Estimate::zero());
    }
    let breaks = k.radial_breakpoints();
    outer_doubling(
        r,
        r * lit(2.0),
        lit(rules.spec.outer_rel_tol),
        rules.spec.max_doublings,
        |a, b| shell(rules, a, b, &breaks, |z| k.density(t, x, z)),
    )
}

/// Finite set of `(t, x)` probes standing in for the supremum over `ℝ_+ × ℝ^d`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeGrid<T> {
    pub times: Vec<T>,
    pub points: Vec<Vec<T>>,
}

impl<T: Real> ProbeGrid<T> {
    pub fn new(times: Vec<T>, points: Vec<Vec<T>>) -> Self {
        Self { times, points }
    }

    /// `n` equispaced 1-D points on `[lo, hi]` at the given times.
    pub fn uniform_1d(times: Vec<T>, lo: T, hi: T, n: usize) -> Self {
        let n = n.max(2);
        let h = (hi - lo) / lit((n - 1) as f64);
        let points = (0..n).map(|i| vec![lo + h * lit(i as f64)]).collect();
        Self { times, points }
    }

    /// `0` and `±` log-spaced magnitudes in `[min_abs, max_abs]`.
    pub fn log_symmetric_1d(times: Vec<T>, min_abs: T, max_abs: T, per_side: usize) -> Self {
        let per_side = per_side.max(2);
        let (a, b) = (min_abs.ln(), max_abs.ln());
        let mut points = vec![vec![T::zero()]];
        for i in 0..per_side {
            let v = (a + (b - a) * lit(i as f64 / (per_side - 1) as f64)).exp();
            points.push(vec![v]);
            points.push(vec![-v]);
        }
        Self { times, points }
    }

    pub fn iter(&self) -> impl Iterator<Item = (T, &[T])> + '_ {
        self.times.iter().flat_map(move |&t| self.points.iter().map(move |p| (t, p.as_slice())))
    }

    pub fn max_abs(&self) -> T {
        self.points.iter().map(|p| norm(p)).fold(T::zero(), T::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Probe {
    pub t: f64,
    pub x: Vec<f64>,
}

impl Probe {
    fn of<T: Real>(t: T, x: &[T]) -> Self {
        Self { t: to_f64(t), x: x.iter().map(|&v| to_f64(v)).collect() }
    }
}

/// Per-term suprema of the standing growth assumption.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerTerm {
    /// `(|a| + g^ν)/(1+|x|²)`
    pub diffusion_and_small_jumps: f64,
    /// `|b|/(1+|x|)`
    pub drift: f64,
    /// `ħ^ν`
    pub log_tail: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub total_sup: f64,
    pub per_term: PerTerm,
    pub argmax_probe: Probe,
    pub violated: bool,
    /// Ratio of the sampled supremum over the full probe box to the
    /// supremum over its inner half; large values indicate growth.
    pub trend_ratio: f64,
    pub unbounded_trend: bool,
    pub probes: usize,
    pub caveat: String,
}

impl ConditionReport {
    /// Exit status used by the command line: no violation, no growth trend.
    pub fn passes(&self) -> bool {
        !self.violated && !self.unbounded_trend
    }
}

/// Trend ratio above which the sampled supremum is flagged as growing.
pub const DEFAULT_TREND_THRESHOLD: f64 = 1.25;

/// Sampled supremum over `probes` of
/// `(|a|+g^ν)/(1+|x|²) + |b|/(1+|x|) + ħ^ν`.
pub fn assumption_report<T: Real, K: LevyKernel<T> + ?Sized>(
    k: &K,
    coeffs: &CoefficientField<T>,
    probes: &ProbeGrid<T>,
    quad: &QuadratureSpec,
    trend_threshold: f64,
) -> Result<ConditionReport> {
    let rules = rules_for(k, quad)?;
    let half_radius = to_f64(probes.max_abs()) * 0.5;
    let mut best: Option<(f64, Probe)> = None;
    let mut inner_best = f64::NEG_INFINITY;
    let mut per = PerTerm { diffusion_and_small_jumps: 0.0, drift: 0.0, log_tail: 0.0 };
    let mut violated = false;
    let mut count = 0usize;
    for (t, x) in probes.iter() {
        count += 1;
        let attach = |e: Error| match e {
            Error::NonIntegrable(m) => Error::NonIntegrable(format!("{m} at probe t={t}, x={x:?}")),
            other => other,
        };
        let r = to_f64(norm(x));
        let a = to_f64(coeffs.diffusion(t, x).trace_norm());
        let b = to_f64(norm(&coeffs.drift(t, x)));
        let g = to_f64(small_jump_moment_with(k, t, x, &rules).map_err(attach)?.value);
        let h = to_f64(log_tail_functional_with(k, t, x, &rules).map_err(attach)?.value);
        let terms = [(a + g) / (1.0 + r * r), b / (1.0 + r), h];
        if terms.iter().any(|v| !v.is_finite()) {
            violated = true;
        }
        let total: f64 = terms.iter().sum();
        per.diffusion_and_small_jumps = per.diffusion_and_small_jumps.max(terms[0]);
        per.drift = per.drift.max(terms[1]);
        per.log_tail = per.log_tail.max(terms[2]);
        if r <= half_radius + 1e-12 {
            inner_best = inner_best.max(total);
        }
        if best.as_ref().is_none_or(|(v, _)| total > *v || total.is_nan()) {
            best = Some((total, Probe::of(t, x)));
        }
    }
    let (total_sup, argmax_probe) = best.ok_or_else(|| Error::InvalidParameter("empty probe grid".into()))?;
    let trend_ratio = if inner_best > 0.0 { total_sup / inner_best } else if total_sup > 0.0 { f64::INFINITY } else { 1.0 };
    Ok(ConditionReport {
        total_sup,
        per_term: per,
        argmax_probe,
        violated: violated || !total_sup.is_finite(),
        trend_ratio,
        unbounded_trend: trend_ratio > trend_threshold,
        probes: count,
        caveat: "supremum sampled on a finite probe grid; it is a lower bound for the supremum over all (t, x)"
            .into(),
    })
}
