//! Space-time mollification of a measure curve with a Gaussian floor,
//! the regularized coefficients and mixture kernel, and numerical checks of
//! their uniform bounds.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::RngCore;
use serde::Serialize;
use statrs::function::beta::beta;

use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::fpe_residual::{residual_with, ResidualReport};
use crate::levy::{log_tail_with, small_jump_moment_with, LevyKernel, ProbeGrid};
use crate::matrix::Matrix;
use crate::measure::{GridDensity, MeasureCurve, Snapshot};
use crate::operators::{Generator, StandardGenerator, TestBank, TestFunction};
use crate::quadrature::{gl8, sphere_area, Estimate, QuadratureSpec, Rules, SphereRule};
use crate::scalar::{count, distance, dot, lit, norm, to_f64, Real};

/// Time mollifier `630 s⁴(1-s)⁴` on `[0, 1]`.
pub fn rho_time(s: f64) -> f64 {
    if !(0.0..=1.0).contains(&s) {
        return 0.0;
    }
    630.0 * (s * (1.0 - s)).powi(4)
}

/// `c_d` with `∫_{B_1} c_d (1-|u|²)⁴ du = 1`.
pub fn rho_space_constant(dim: usize) -> f64 {
    1.0 / (sphere_area::<f64>(dim) * 0.5 * beta(dim as f64 / 2.0, 5.0))
}

/// Space mollifier `c_d (1-|u|²)⁴` on the unit ball.
pub fn rho_space<T: Real>(u: &[T]) -> T {
    let q = dot(u, u);
    if q >= T::one() {
        return T::zero();
    }
    lit::<T>(rho_space_constant(u.len())) * (T::one() - q).powi(4)
}

/// Standard normal density `(2π)^{-d/2} e^{-|x|²/2}`.
pub fn gaussian_floor<T: Real>(x: &[T]) -> T {
    let d = x.len() as f64;
    lit::<T>((2.0 * std::f64::consts::PI).powf(-d / 2.0)) * (-dot(x, x) * lit(0.5)).exp()
}

/// Atoms of one snapshot sorted by first coordinate.
#[derive(Clone, Debug)]
struct AtomIndex<T> {
    dim: usize,
    keys: Vec<T>,
    pos: Vec<T>,
    mass: Vec<T>,
}

impl<T: Real> AtomIndex<T> {
    fn new(snap: &Snapshot<T>) -> Self {
        let dim = snap.dim();
        let mut atoms: Vec<(Vec<T>, T)> = Vec::with_capacity(snap.atom_count());
        snap.for_each_atom(|x, w| {
            if w > T::zero() {
                atoms.push((x.to_vec(), w));
            }
        });
        atoms.sort_by(|a, b| a.0[0].partial_cmp(&b.0[0]).unwrap_or(std::cmp::Ordering::Equal));
        Self {
            dim,
            keys: atoms.iter().map(|a| a.0[0]).collect(),
            pos: atoms.iter().flat_map(|a| a.0.iter().copied()).collect(),
            mass: atoms.iter().map(|a| a.1).collect(),
        }
    }

    /// Atoms with `|y - x| < r`.
    fn near<F: FnMut(&[T], T)>(&self, x: &[T], r: T, mut f: F) {
        let lo = self.keys.partition_point(|&k| k <= x[0] - r);
        let hi = self.keys.partition_point(|&k| k < x[0] + r);
        for j in lo..hi {
            let y = &self.pos[j * self.dim..(j + 1) * self.dim];
            if distance(x, y) < r {
                f(y, self.mass[j]);
            }
        }
    }
}

/// Time quadrature node `s` with snapshot weights `(i, w)`.
type TimeNode<T> = (T, Vec<(usize, T)>);

/// `μ^ε_t = (1-ε) ρ_ε * μ + ε φ` for a measure curve frozen outside its
/// time window, with `ρ_ε(t,x) = ε^{-1-d} ρ^t(t/ε) ρ^x(x/ε)`.
#[derive(Clone, Debug)]
pub struct MollifiedFamily<T: Real> {
    curve: MeasureCurve<T>,
    eps: T,
    atoms: Vec<AtomIndex<T>>,
}

impl<T: Real> MollifiedFamily<T> {
    /// `ε` must lie in `(0, ℓ)`.
    pub fn new(curve: MeasureCurve<T>, eps: T, ell: T) -> Result<Self> {
        if curve.is_empty() {
            return Err(Error::EmptyCurve);
        }
        if !(eps > T::zero() && eps < ell) {
            return Err(Error::InvalidParameter(format!("epsilon {eps} must lie in (0, {ell})")));
        }
        let atoms = curve.snapshots().iter().map(AtomIndex::new).collect();
        Ok(Self { curve, eps, atoms })
    }

    pub fn epsilon(&self) -> T {
        self.eps
    }

    pub fn curve(&self) -> &MeasureCurve<T> {
        &self.curve
    }

    pub fn dim(&self) -> usize {
        self.curve.dim()
    }

    /// Gauss nodes for `∫ ρ^t_ε(t-s) μ_s ds` on `[t-ε, t]`, split at the
    /// curve's grid times; snapshots are interpolated linearly in time.
    fn time_nodes(&self, t: T) -> Vec<TimeNode<T>> {
        let (a, b) = (t - self.eps, t);
        let mut cuts = vec![a];
        cuts.extend(self.curve.times().iter().copied().filter(|&s| s > a && s < b));
        cuts.push(b);
        let mut nodes = Vec::new();
        for w in cuts.windows(2) {
            let (lo, hi) = (to_f64(w[0]), to_f64(w[1]));
            for (s, wq) in gl8().mapped(lo, hi) {
                let weight = wq * rho_time((to_f64(t) - s) / to_f64(self.eps)) / to_f64(self.eps);
                let s: T = lit(s);
                let (i, lam) = self.curve.bracket(s);
                let mut snaps = vec![(i, lit::<T>(weight) * (T::one() - lam))];
                if lam > T::zero() {
                    snaps.push((i + 1, lit::<T>(weight) * lam));
                }
                nodes.push((s, snaps));
            }
        }
        nodes
    }

    /// Snapshot weights of the time convolution, merged over nodes.
    pub fn snapshot_weights(&self, t: T) -> Vec<(usize, T)> {
        let mut acc: Vec<(usize, T)> = Vec::new();
        for (_, snaps) in self.time_nodes(t) {
            for (i, w) in snaps {
                match acc.iter_mut().find(|e| e.0 == i) {
                    Some(e) => e.1 = e.1 + w,
                    None => acc.push((i, w)),
                }
            }
        }
        acc
    }

    /// Calls `f(s, y, w)` with `w = ρ_ε(t-s, x-y) μ_s(dy) ds` for every
    /// contributing quadrature atom. Coefficients vanish before the curve
    /// starts, so those nodes are skipped; past its end they are frozen.
    pub fn for_each_weighted_atom<F: FnMut(T, &[T], T)>(&self, t: T, x: &[T], mut f: F) {
        let scale = self.eps.powi(-(self.dim() as i32));
        for (s, snaps) in self.time_nodes(t) {
            if s < self.curve.start() {
                continue;
            }
            let sc = s.min(self.curve.end());
            for (i, wt) in snaps {
                self.atoms[i].near(x, self.eps, |y, m| {
                    let u: Vec<T> = x.iter().zip(y).map(|(&a, &b)| (a - b) / self.eps).collect();
                    f(sc, y, wt * m * scale * rho_space(&u));
                });
            }
        }
    }

    /// `(ρ_ε * μ)(t, x)`.
    pub fn convolved(&self, t: T, x: &[T]) -> T {
        let scale = self.eps.powi(-(self.dim() as i32));
        let mut acc = T::zero();
        for (i, wt) in self.snapshot_weights(t) {
            self.atoms[i].near(x, self.eps, |y, m| {
                let u: Vec<T> = x.iter().zip(y).map(|(&a, &b)| (a - b) / self.eps).collect();
                acc = acc + wt * m * scale * rho_space(&u);
            });
        }
        acc
    }

    /// `μ^ε_t(x)`.
    pub fn density(&self, t: T, x: &[T]) -> T {
        (T::one() - self.eps) * self.convolved(t, x) + self.eps * gaussian_floor(x)
    }

    /// Mass not seen by the atoms, `(1-ε) × exterior mass` of the convolved snapshots.
    pub fn exterior_mass(&self, t: T) -> T {
        let m = self
            .snapshot_weights(t)
            .into_iter()
            .fold(T::zero(), |acc, (i, w)| acc + w * self.curve.snapshot(i).exterior_mass());
        (T::one() - self.eps) * m
    }

    /// `∫ μ^ε_t dx` in one dimension: piecewise Gauss-Legendre between the
    /// edges `y ± ε` of every atom (exact for the polynomial pieces) plus a
    /// composite rule for the Gaussian floor on `[-14, 14]`.
    pub fn total_mass_1d(&self, t: T) -> Result<f64> {
        if self.dim() != 1 {
            return Err(Error::InvalidParameter("mass quadrature is one-dimensional".into()));
        }
        let eps = to_f64(self.eps);
        let mut cuts: Vec<f64> = Vec::new();
        for (i, _) in self.snapshot_weights(t) {
            for &k in &self.atoms[i].keys {
                cuts.push(to_f64(k) - eps);
                cuts.push(to_f64(k) + eps);
            }
        }
        cuts.sort_by(|a, b| a.total_cmp(b));
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        let mut conv = 0.0;
        for w in cuts.windows(2) {
            conv += gl8().integrate(w[0], w[1], |x| to_f64(self.convolved(t, &[lit(x)])));
        }
        let floor = gl8().composite(-14.0, 14.0, 112, |x| to_f64(gaussian_floor(&[x])));
        Ok((1.0 - eps) * conv + eps * floor)
    }

    /// `μ^ε_t` sampled on a grid: node values are the density; atoms outside
    /// the grid are reported as exterior mass. A node sum above one (the
    /// quadrature error of the mollifier bumps) is scaled back to one.
    pub fn grid_snapshot(&self, t: T, left: T, dx: T, n: usize) -> Result<GridDensity<T>> {
        if self.dim() != 1 {
            return Err(Error::InvalidParameter("grid snapshots are one-dimensional".into()));
        }
        let mut values: Vec<T> = (0..n).map(|j| self.density(t, &[left + dx * count(j)])).collect();
        let inside = values.iter().copied().sum::<T>() * dx;
        if inside > T::one() {
            values.iter_mut().for_each(|v| *v = *v / inside);
        }
        let exterior = (T::one() - inside).max(T::zero());
        GridDensity::new(left, dx, values, exterior)
    }

    /// The curve `t ↦ μ^ε_t` on the base curve's time grid as grid densities.
    pub fn grid_curve(&self, left: T, dx: T, n: usize) -> Result<MeasureCurve<T>> {
        let snaps = self
            .curve
            .times()
            .iter()
            .map(|&t| self.grid_snapshot(t, left, dx, n).map(Snapshot::Grid))
            .collect::<Result<Vec<_>>>()?;
        MeasureCurve::new(self.curve.times().to_vec(), snaps)
    }

    /// `∫ f dμ^ε_t`: each atom contributes `∫ ρ^x(u) f(y + εu) du`, computed with
    /// a radial Gauss rule times the sphere rule; the floor term uses the same
    /// rule on the support ball of `f`.
    pub fn integrate(&self, t: T, f: &TestFunction<T>, quad: &QuadratureSpec) -> Result<T> {
        let d = self.dim();
        let sphere = SphereRule::<T>::new(d, quad.angular_nodes)?;
        let radial = |r_max: T, g: &mut dyn FnMut(&[T]) -> T| -> T {
            let mut z = vec![T::zero(); d];
            let mut acc = T::zero();
            let panels = 8;
            for p in 0..panels {
                let lo = r_max * count(p) / count(panels);
                let hi = r_max * count(p + 1) / count(panels);
                for (r, wr) in gl8().mapped(to_f64(lo), to_f64(hi)) {
                    let r: T = lit(r);
                    let jac = r.powi(d as i32 - 1);
                    for (th, w) in sphere.iter() {
                        for (zi, &c) in z.iter_mut().zip(th) {
                            *zi = c * r;
                        }
                        acc = acc + lit::<T>(wr) * w * jac * g(&z);
                    }
                }
            }
            acc
        };
        let mut conv = T::zero();
        for (i, wt) in self.snapshot_weights(t) {
            let idx = &self.atoms[i];
            for j in 0..idx.mass.len() {
                let y = &idx.pos[j * d..(j + 1) * d];
                let mut g = |u: &[T]| {
                    let x: Vec<T> = y.iter().zip(u).map(|(&a, &b)| a + self.eps * b).collect();
                    rho_space(u) * f.value(&x)
                };
                conv = conv + wt * idx.mass[j] * radial(T::one(), &mut g);
            }
        }
        let mut g = |x: &[T]| gaussian_floor(x) * f.value(x);
        let floor = radial(f.support_radius(), &mut g);
        Ok((T::one() - self.eps) * conv + self.eps * floor)
    }
}

/// `a^ε`, `b^ε` and the quantities they are built from at one point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MollifiedCoefficients<T> {
    pub a: Matrix<T>,
    pub b: Vec<T>,
    /// `μ^ε_t(x)`
    pub density: T,
    /// `(ρ_ε * μ)(t, x)`
    pub convolved: T,
    /// `ρ_ε * (aμ)` and `ρ_ε * (bμ)`
    pub a_conv: Matrix<T>,
    pub b_conv: Vec<T>,
}

/// `a^ε = [(1-ε) ρ_ε*(aμ) + εφ I]/μ^ε` and `b^ε = [(1-ε) ρ_ε*(bμ) - εφ x]/μ^ε`.
/// The floor drift `-x` makes `φ` stationary for `Δ - x·∇`.
pub fn mollify_coeffs<T: Real>(
    fam: &MollifiedFamily<T>,
    coeffs: &CoefficientField<T>,
    t: T,
    x: &[T],
) -> Result<MollifiedCoefficients<T>> {
    let d = fam.dim();
    if coeffs.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: coeffs.dim() });
    }
    let mut a_conv = Matrix::zeros(d);
    let mut b_conv = vec![T::zero(); d];
    fam.for_each_weighted_atom(t, x, |s, y, w| {
        if coeffs.has_diffusion() {
            a_conv.add_assign_scaled(&coeffs.diffusion(s, y), w);
        }
        if coeffs.has_drift() {
            for (o, v) in b_conv.iter_mut().zip(coeffs.drift(s, y)) {
                *o = *o + v * w;
            }
        }
    });
    let eps = fam.epsilon();
    let floor = eps * gaussian_floor(x);
    let convolved = fam.convolved(t, x);
    let density = (T::one() - eps) * convolved + floor;
    let mut a = a_conv.scale(T::one() - eps);
    a.add_assign_scaled(&Matrix::identity(d), floor);
    let a = a.scale(T::one() / density);
    let b = b_conv
        .iter()
        .zip(x)
        .map(|(&bc, &xi)| ((T::one() - eps) * bc - floor * xi) / density)
        .collect();
    Ok(MollifiedCoefficients { a, b, density, convolved, a_conv, b_conv })
}

/// `g^{ν^ε}_t(x)` and `H^{ν^ε}_t(x, y)` for each `y`, by integrating the base
/// functionals against the mollification weight.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MollifiedFunctionals<T> {
    pub g: T,
    pub h: Vec<T>,
    /// Same sums before division by `μ^ε` and without `(1-ε)`: the functionals of `ν̄^ε`.
    pub g_bar: T,
    pub h_bar: Vec<T>,
    pub density: T,
    pub convolved: T,
}

type FunctionalKey = (u64, Vec<u64>, Vec<u64>);

/// Memo for base functionals at atoms, shared across probes.
#[derive(Default)]
struct FunctionalCache<T> {
    g: HashMap<FunctionalKey, T>,
    h: HashMap<FunctionalKey, T>,
}

fn key<T: Real>(s: T, y: &[T], extra: &[T]) -> FunctionalKey {
    (
        to_f64(s).to_bits(),
        y.iter().map(|v| to_f64(*v).to_bits()).collect(),
        extra.iter().map(|v| to_f64(*v).to_bits()).collect(),
    )
}

/// `g^ν_{s,y}`; kernels of the form `c(s,y) ν_ref` reuse one reference value.
fn base_g<T: Real>(
    k: &dyn LevyKernel<T>,
    s: T,
    y: &[T],
    rules: &Rules<T>,
    cache: &mut FunctionalCache<T>,
) -> Result<T> {
    if k.is_zero() {
        return Ok(T::zero());
    }
    let (kern, factor, ks, ky): (Arc<dyn LevyKernel<T>>, T, T, Vec<T>) = match (k.reference_kernel(), k.state_factor(s, y)) {
        (Some(r), Some(c)) => (r, c, T::zero(), vec![T::zero(); y.len()]),
        _ => return small_jump_moment_with(k, s, y, rules).map(|e| e.value),
    };
    let kk = key(ks, &ky, &[]);
    if let Some(v) = cache.g.get(&kk) {
        return Ok(*v * factor);
    }
    let v = small_jump_moment_with(kern.as_ref(), ks, &ky, rules)?.value;
    cache.g.insert(kk, v);
    Ok(v * factor)
}

/// `∫_{B_ℓ^c} log(1 + |z|/scale) ν_{s,y'}(dz)`.
fn base_h<T: Real>(
    k: &dyn LevyKernel<T>,
    s: T,
    y: &[T],
    scale: T,
    rules: &Rules<T>,
    cache: &mut FunctionalCache<T>,
) -> Result<T> {
    if k.is_zero() {
        return Ok(T::zero());
    }
    let ell = k.cutoff();
    let (kern, factor, ks, ky): (Option<Arc<dyn LevyKernel<T>>>, T, T, Vec<T>) =
        match (k.reference_kernel(), k.state_factor(s, y)) {
            (Some(r), Some(c)) => (Some(r), c, T::zero(), vec![T::zero(); y.len()]),
            _ => (None, T::one(), s, y.to_vec()),
        };
    let kk = key(ks, &ky, &[scale]);
    if let Some(v) = cache.h.get(&kk) {
        return Ok(*v * factor);
    }
    let v = match &kern {
        Some(r) => log_tail_with(r.as_ref(), ks, &ky, scale, ell, rules)?.value,
        None => log_tail_with(k, ks, &ky, scale, ell, rules)?.value,
    };
    cache.h.insert(kk, v);
    Ok(v * factor)
}

fn functionals_cached<T: Real>(
    fam: &MollifiedFamily<T>,
    k: &dyn LevyKernel<T>,
    t: T,
    x: &[T],
    ys: &[Vec<T>],
    rules: &Rules<T>,
    cache: &mut FunctionalCache<T>,
) -> Result<MollifiedFunctionals<T>> {
    let mut g_bar = T::zero();
    let mut h_bar = vec![T::zero(); ys.len()];
    let mut err = None;
    fam.for_each_weighted_atom(t, x, |s, y, w| {
        if err.is_some() {
            return;
        }
        match base_g(k, s, y, rules, cache) {
            Ok(g) => g_bar = g_bar + w * g,
            Err(e) => err = Some(e),
        }
        for (hb, yy) in h_bar.iter_mut().zip(ys) {
            match base_h(k, s, y, T::one() + distance(x, yy), rules, cache) {
                Ok(h) => *hb = *hb + w * h,
                Err(e) => err = Some(e),
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let eps = fam.epsilon();
    let convolved = fam.convolved(t, x);
    let density = (T::one() - eps) * convolved + eps * gaussian_floor(x);
    let c = (T::one() - eps) / density;
    Ok(MollifiedFunctionals {
        g: g_bar * c,
        h: h_bar.iter().map(|&v| v * c).collect(),
        g_bar,
        h_bar,
        density,
        convolved,
    })
}

/// Functionals of `ν^ε_{t,x} = (1-ε)/μ^ε ∫ ρ_ε(t-s, x-y) ν_{s,y} μ_s(dy) ds`
/// without forming `ν^ε`.
pub fn mollified_kernel_functionals<T: Real>(
    fam: &MollifiedFamily<T>,
    k: &dyn LevyKernel<T>,
    t: T,
    x: &[T],
    ys: &[Vec<T>],
    quad: &QuadratureSpec,
) -> Result<MollifiedFunctionals<T>> {
    let rules = Rules::new(quad, fam.dim())?;
    functionals_cached(fam, k, t, x, ys, &rules, &mut FunctionalCache::default())
}

/// The four regularization inequalities at one probe; right-hand sides use
/// the supremum over the atoms contributing at that probe.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularizationProbe {
    pub t: f64,
    pub x: Vec<f64>,
    pub density: f64,
    pub floor: f64,
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub g: (f64, f64),
    /// Per `y`: `(H^{ν̄^ε}(x,y), 2 sup H^ν(·,y) (ρ_ε*μ)(t,x))`.
    pub h: Vec<(f64, f64)>,
    /// Left side of the uniform growth bound at this probe.
    pub growth: f64,
    /// Per `y`: `H^{ν^ε}_t(x,y)`.
    pub h_eps: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularizationReport {
    pub epsilon: f64,
    pub probes: Vec<RegularizationProbe>,
    /// Whether each of the `a`, `b`, `g`, `H` inequalities holds at every probe.
    pub le41: [bool; 4],
    /// `sup` of the mollified growth functional over probes.
    pub growth_sup: f64,
    /// `1 + 2 sup` of the base growth functional over all contributing atoms and probes.
    pub growth_bound: f64,
    pub growth_ok: bool,
    /// Per `y`: `(sup_{t,x} H^{ν^ε}(x,y), sup H^ν(·,y))` over probes and atoms.
    pub h_sup: Vec<(f64, f64)>,
    pub h_ok: bool,
    /// `min μ^ε/(εφ)` over probes; at least 1.
    pub floor_ratio: f64,
}

impl RegularizationReport {
    pub fn all_hold(&self) -> bool {
        self.le41.iter().all(|&b| b) && self.growth_ok && self.h_ok && self.floor_ratio >= 1.0
    }
}

const REL_SLACK: f64 = 1e-10;

fn holds(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs * (1.0 + REL_SLACK) + 1e-300
}

/// Checks the regularization inequalities for `a`, `b`, `g^ν`, `H^ν` and
/// the uniform bounds for `(a^ε, b^ε, ν^ε)` at every probe.
pub fn regularization_check<T: Real>(
    fam: &MollifiedFamily<T>,
    coeffs: &CoefficientField<T>,
    k: &dyn LevyKernel<T>,
    probes: &ProbeGrid<T>,
    ys: &[Vec<T>],
    quad: &QuadratureSpec,
) -> Result<RegularizationReport> {
    let d = fam.dim();
    let rules = Rules::new(quad, d)?;
    let mut cache = FunctionalCache::default();
    let eps = fam.epsilon();
    let mut out = Vec::new();
    let mut le41 = [true; 4];
    let mut base_growth_sup = 0.0_f64;
    let mut h_base_sup = vec![0.0_f64; ys.len()];
    let mut h_eps_sup = vec![0.0_f64; ys.len()];
    let mut floor_ratio = f64::INFINITY;
    for (t, x) in probes.iter() {
        // base quantities at every contributing atom
        let mut sup_a = 0.0_f64;
        let mut sup_b = 0.0_f64;
        let mut sup_g = 0.0_f64;
        let mut sup_h = vec![0.0_f64; ys.len()];
        let mut err = None;
        fam.for_each_weighted_atom(t, x, |s, y, _| {
            if err.is_some() {
                return;
            }
            let q2 = to_f64(T::one() + dot(y, y));
            let q1 = to_f64(T::one() + norm(y));
            let a = to_f64(coeffs.diffusion(s, y).trace_norm());
            let b = to_f64(norm(&coeffs.drift(s, y)));
            let g = match base_g(k, s, y, &rules, &mut cache) {
                Ok(v) => to_f64(v),
                Err(e) => {
                    err = Some(e);
                    return;
                }
            };
            sup_a = sup_a.max(2.0 * a / q2);
            sup_b = sup_b.max(2.0 * b / q1);
            sup_g = sup_g.max(2.0 * g / q2);
            base_growth_sup = base_growth_sup.max((a + g) / q2 + b / q1);
            for (j, yy) in ys.iter().enumerate() {
                match base_h(k, s, y, T::one() + distance(y, yy), &rules, &mut cache) {
                    Ok(h) => {
                        sup_h[j] = sup_h[j].max(to_f64(h));
                        h_base_sup[j] = h_base_sup[j].max(to_f64(h));
                    }
                    Err(e) => err = Some(e),
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let mc = mollify_coeffs(fam, coeffs, t, x)?;
        let fun = functionals_cached(fam, k, t, x, ys, &rules, &mut cache)?;
        let conv = to_f64(mc.convolved);
        let q2 = to_f64(T::one() + dot(x, x));
        let q1 = to_f64(T::one() + norm(x));
        let a = (to_f64(mc.a_conv.trace_norm()) / q2, sup_a * conv);
        let b = (to_f64(norm(&mc.b_conv)) / q1, sup_b * conv);
        let g = (to_f64(fun.g_bar) / q2, sup_g * conv);
        let h: Vec<(f64, f64)> =
            fun.h_bar.iter().zip(&sup_h).map(|(&hb, &s)| (to_f64(hb), 2.0 * s * conv)).collect();
        le41[0] &= holds(a.0, a.1);
        le41[1] &= holds(b.0, b.1);
        le41[2] &= holds(g.0, g.1);
        le41[3] &= h.iter().all(|&(l, r)| holds(l, r));
        let growth = (to_f64(mc.a.trace_norm()) + to_f64(fun.g)) / q2 + to_f64(norm(&mc.b)) / q1;
        let h_eps: Vec<f64> = fun.h.iter().map(|&v| to_f64(v)).collect();
        for (s, &v) in h_eps_sup.iter_mut().zip(&h_eps) {
            *s = s.max(v);
        }
        let floor = to_f64(eps * gaussian_floor(x));
        floor_ratio = floor_ratio.min(to_f64(mc.density) / floor);
        out.push(RegularizationProbe {
            t: to_f64(t),
            x: x.iter().map(|v| to_f64(*v)).collect(),
            density: to_f64(mc.density),
            floor,
            a,
            b,
            g,
            h,
            growth,
            h_eps,
        });
    }
    // base H at the probes themselves also enters the supremum over x
    for (t, x) in probes.iter() {
        for (j, yy) in ys.iter().enumerate() {
            let v = base_h(k, t, x, T::one() + distance(x, yy), &rules, &mut cache)?;
            h_base_sup[j] = h_base_sup[j].max(to_f64(v));
        }
        let q2 = to_f64(T::one() + dot(x, x));
        let q1 = to_f64(T::one() + norm(x));
        let a = to_f64(coeffs.diffusion(t, x).trace_norm());
        let b = to_f64(norm(&coeffs.drift(t, x)));
        let g = to_f64(base_g(k, t, x, &rules, &mut cache)?);
        base_growth_sup = base_growth_sup.max((a + g) / q2 + b / q1);
    }
    let growth_sup = out.iter().map(|p| p.growth).fold(0.0, f64::max);
    let growth_bound = 1.0 + 2.0 * base_growth_sup;
    let h_sup: Vec<(f64, f64)> = h_eps_sup.into_iter().zip(h_base_sup).collect();
    Ok(RegularizationReport {
        epsilon: to_f64(eps),
        probes: out,
        le41,
        growth_sup,
        growth_bound,
        growth_ok: holds(growth_sup, growth_bound),
        h_ok: h_sup.iter().all(|&(l, r)| holds(l, r)),
        h_sup,
        floor_ratio,
    })
}

/// `∫ φ (Δf - x·∇f) dx`, which vanishes for every `f ∈ C²_c`.
pub fn gaussian_stationarity<T: Real>(f: &TestFunction<T>, quad: &QuadratureSpec) -> Result<f64> {
    let d = f.dim();
    let sphere = SphereRule::<T>::new(d, quad.angular_nodes)?;
    let r_max = to_f64(f.support_radius());
    let panels = 64;
    let mut acc = 0.0;
    let mut x = vec![T::zero(); d];
    for p in 0..panels {
        let lo = r_max * p as f64 / panels as f64;
        let hi = r_max * (p + 1) as f64 / panels as f64;
        for (r, wr) in gl8().mapped(lo, hi) {
            for (th, w) in sphere.iter() {
                for (xi, &c) in x.iter_mut().zip(th) {
                    *xi = c * lit(r);
                }
                let (_, g, h) = f.jet(&x);
                let v = gaussian_floor(&x) * (h.trace() - dot(&x, &g));
                acc += wr * to_f64(w) * r.powi(d as i32 - 1) * to_f64(v);
            }
        }
    }
    Ok(acc)
}

/// `|μ^ε_t(f) - μ_t(f)|` for each bank function.
pub fn weak_gap<T: Real>(fam: &MollifiedFamily<T>, t: T, bank: &TestBank<T>, quad: &QuadratureSpec) -> Result<Vec<f64>> {
    bank.iter()
        .map(|f| {
            let m = fam.integrate(t, f, quad)?;
            let base = fam.curve().integrate_at(t, |x| f.value(x));
            Ok(to_f64((m - base).abs()))
        })
        .collect()
}

/// `𝓛^ε = 𝓐^ε + 𝓑^ε + 𝓝^ε` built from the mollified objects.
pub struct MollifiedGenerator<T: Real> {
    fam: Arc<MollifiedFamily<T>>,
    base: StandardGenerator<T>,
    frozen_cache: Mutex<HashMap<(usize, u64, Vec<u64>, Vec<u64>), Estimate<T>>>,
}

impl<T: Real> MollifiedGenerator<T> {
    pub fn new(
        fam: Arc<MollifiedFamily<T>>,
        coeffs: CoefficientField<T>,
        kernel: Arc<dyn LevyKernel<T>>,
        quad: &QuadratureSpec,
    ) -> Result<Self> {
        if fam.dim() != coeffs.dim() {
            return Err(Error::DimensionMismatch { expected: fam.dim(), got: coeffs.dim() });
        }
        Ok(Self { base: StandardGenerator::new(coeffs, kernel, quad)?, fam, frozen_cache: Mutex::new(HashMap::new()) })
    }

    pub fn family(&self) -> &MollifiedFamily<T> {
        &self.fam
    }

    /// `∫ ρ_ε(t-s, x-y) 𝓝_{s,y} f(x) μ_s(dy) ds` where `𝓝_{s,y}` uses the kernel frozen at `(s, y)`.
    fn jump_sum(&self, f: &TestFunction<T>, t: T, x: &[T]) -> Result<Estimate<T>> {
        let k = self.base.kernel().clone();
        if k.is_zero() {
            return Ok(Estimate::zero());
        }
        if k.is_state_independent() {
            let mut c = T::zero();
            self.fam.for_each_weighted_atom(t, x, |_, _, w| c = c + w);
            return Ok(self.base.reference_jump(k.as_ref(), f, x)?.scaled(c));
        }
        if let Some(r) = k.reference_kernel() {
            let mut c = T::zero();
            let mut separable = true;
            self.fam.for_each_weighted_atom(t, x, |s, y, w| match k.state_factor(s, y) {
                Some(v) => c = c + w * v,
                None => separable = false,
            });
            if separable {
                return Ok(self.base.reference_jump(r.as_ref(), f, x)?.scaled(c));
            }
        }
        let mut acc = Estimate::zero();
        let mut err = None;
        self.fam.for_each_weighted_atom(t, x, |s, y, w| {
            if err.is_some() {
                return;
            }
            let key = (
                f.id(),
                to_f64(s).to_bits(),
                y.iter().map(|v| to_f64(*v).to_bits()).collect(),
                x.iter().map(|v| to_f64(*v).to_bits()).collect(),
            );
            let cached = self.frozen_cache.lock().unwrap().get(&key).copied();
            let v = match cached {
                Some(v) => v,
                None => match self.base.operator().apply_frozen(k.as_ref(), s, y, f, x) {
                    Ok(v) => {
                        self.frozen_cache.lock().unwrap().insert(key, v);
                        v
                    }
                    Err(e) => {
                        err = Some(e);
                        return;
                    }
                },
            };
            acc = acc.plus(v.scaled(w));
        });
        match err {
            Some(e) => Err(e),
            None => Ok(acc),
        }
    }
}

impl<T: Real> Generator<T> for MollifiedGenerator<T> {
    fn dim(&self) -> usize {
        self.fam.dim()
    }

    fn apply(&self, f: &TestFunction<T>, t: T, x: &[T]) -> Result<Estimate<T>> {
        let mc = mollify_coeffs(&self.fam, self.base.coefficients(), t, x)?;
        let (_, g, h) = f.jet(x);
        let local = mc.a.contract(&h) + dot(&mc.b, &g);
        let eps = self.fam.epsilon();
        let jump = self.jump_sum(f, t, x)?.scaled((T::one() - eps) / mc.density);
        Ok(jump.plus(Estimate::exact(local)))
    }
}

/// Residual of the weak identity for `μ^ε` against `𝓛^ε`, with `μ^ε`
/// sampled on a one-dimensional grid.
#[allow(clippy::too_many_arguments)]
pub fn verify_mollified_fpe<T: Real>(
    fam: Arc<MollifiedFamily<T>>,
    coeffs: CoefficientField<T>,
    kernel: Arc<dyn LevyKernel<T>>,
    bank: &TestBank<T>,
    times: &[T],
    grid: (T, T, usize),
    quad: &QuadratureSpec,
) -> Result<ResidualReport> {
    let curve = fam.grid_curve(grid.0, grid.1, grid.2)?;
    let gen = MollifiedGenerator::new(fam, coeffs, kernel, quad)?;
    residual_with(&curve, &gen, bank, times)
}

/// Draws jumps of `ν^ε_{t,x}` with `|z| > r_min` over `dt`: the mixture is a
/// superposition of independent Poisson configurations, one per atom, each
/// with intensity scaled by its weight.
pub fn sample_mixture_jumps<T: Real>(
    fam: &MollifiedFamily<T>,
    k: &dyn LevyKernel<T>,
    t: T,
    x: &[T],
    r_min: T,
    dt: T,
    rng: &mut dyn RngCore,
) -> Result<Vec<Vec<T>>> {
    let eps = fam.epsilon();
    let c = (T::one() - eps) / fam.density(t, x);
    let mut atoms = Vec::new();
    fam.for_each_weighted_atom(t, x, |s, y, w| atoms.push((s, y.to_vec(), w)));
    let mut out = Vec::new();
    for (s, y, w) in atoms {
        out.extend(k.sample_jumps(s, &y, r_min, dt * w * c, rng)?);
    }
    Ok(out)
}

/// `ν^ε` as a kernel: the mixture density, for direct quadrature and simulation.
pub struct MollifiedKernel<T: Real> {
    fam: Arc<MollifiedFamily<T>>,
    base: Arc<dyn LevyKernel<T>>,
}

impl<T: Real> MollifiedKernel<T> {
    pub fn new(fam: Arc<MollifiedFamily<T>>, base: Arc<dyn LevyKernel<T>>) -> Result<Self> {
        if fam.dim() != base.dim() {
            return Err(Error::DimensionMismatch { expected: fam.dim(), got: base.dim() });
        }
        Ok(Self { fam, base })
    }

    fn factor(&self, t: T, x: &[T]) -> T {
        (T::one() - self.fam.epsilon()) / self.fam.density(t, x)
    }
}

impl<T: Real> LevyKernel<T> for MollifiedKernel<T> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn cutoff(&self) -> T {
        self.base.cutoff()
    }

    fn is_symmetric(&self) -> bool {
        self.base.is_symmetric()
    }

    fn is_zero(&self) -> bool {
        self.base.is_zero()
    }

    fn density(&self, t: T, x: &[T], z: &[T]) -> T {
        let mut acc = T::zero();
        self.fam.for_each_weighted_atom(t, x, |s, y, w| acc = acc + w * self.base.density(s, y, z));
        acc * self.factor(t, x)
    }

    fn inner_second_moment(&self, t: T, x: &[T], delta: T) -> Option<Matrix<T>> {
        let mut m = Matrix::zeros(self.dim());
        let mut ok = true;
        self.fam.for_each_weighted_atom(t, x, |s, y, w| match self.base.inner_second_moment(s, y, delta) {
            Some(v) => m.add_assign_scaled(&v, w),
            None => ok = false,
        });
        ok.then(|| m.scale(self.factor(t, x)))
    }

    fn closed_tail_mass(&self, t: T, x: &[T], r: T) -> Option<T> {
        let mut acc = T::zero();
        let mut ok = true;
        self.fam.for_each_weighted_atom(t, x, |s, y, w| match self.base.closed_tail_mass(s, y, r) {
            Some(v) => acc = acc + w * v,
            None => ok = false,
        });
        ok.then(|| acc * self.factor(t, x))
    }

    fn radial_breakpoints(&self) -> Vec<T> {
        self.base.radial_breakpoints()
    }

    fn sample_jumps(&self, t: T, x: &[T], r_min: T, dt: T, rng: &mut dyn RngCore) -> Result<Vec<Vec<T>>> {
        sample_mixture_jumps(&self.fam, self.base.as_ref(), t, x, r_min, dt, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::ParticleCloud;

    fn point_curve() -> MeasureCurve<f64> {
        let snap = Snapshot::Particles(ParticleCloud::uniform(1, vec![0.0]).unwrap());
        MeasureCurve::constant(vec![0.0, 1.0], snap).unwrap()
    }

    #[test]
    fn mollifiers_have_unit_mass() {
        let m = gl8().composite(0.0, 1.0, 4, rho_time);
        assert!((m - 1.0).abs() < 1e-14);
        assert!((rho_space_constant(1) - 315.0 / 256.0).abs() < 1e-14);
        let m = gl8().composite(-1.0, 1.0, 4, |u| rho_space(&[u]));
        assert!((m - 1.0).abs() < 1e-14);
        // d = 2 radial: 2π ∫ r (1-r²)⁴ c_2 dr = 1 ⇒ c_2 = 5/π
        assert!((rho_space_constant(2) - 5.0 / std::f64::consts::PI).abs() < 1e-13);
    }

    #[test]
    fn far_from_a_point_mass_only_the_floor_remains() {
        let fam = MollifiedFamily::new(point_curve(), 0.2, 0.5).unwrap();
        let x = [0.7];
        assert_eq!(fam.density(0.5, &x), 0.2 * gaussian_floor(&x));
    }

    #[test]
    fn constant_diffusion_passes_through() {
        let fam = MollifiedFamily::new(point_curve(), 0.2, 0.5).unwrap();
        let c = CoefficientField::constant_diffusion(1, 1.0);
        for x in [0.0, 0.1, 0.9] {
            let m = mollify_coeffs(&fam, &c, 0.5, &[x]).unwrap();
            assert!((m.a.get(0, 0) - 1.0).abs() < 1e-14);
            let zero = mollify_coeffs(&fam, &CoefficientField::zero(1), 0.5, &[x]).unwrap();
            let expect = -0.2 * gaussian_floor(&[x]) * x / zero.density;
            assert!((zero.b[0] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn time_weights_sum_to_one() {
        let snaps = (0..5)
            .map(|i| Snapshot::Particles(ParticleCloud::uniform(1, vec![i as f64 * 0.1]).unwrap()))
            .collect();
        let curve = MeasureCurve::new(vec![0.0, 0.05, 0.1, 0.15, 0.2], snaps).unwrap();
        let fam = MollifiedFamily::new(curve, 0.12, 0.5).unwrap();
        for t in [0.0, 0.03, 0.1, 0.17, 0.3] {
            let s: f64 = fam.snapshot_weights(t).iter().map(|e| e.1).sum();
            assert!((s - 1.0).abs() < 1e-13, "t={t}: {s}");
        }
    }

    #[test]
    fn mass_is_one() {
        let fam = MollifiedFamily::new(point_curve(), 0.1, 0.5).unwrap();
        assert!((fam.total_mass_1d(0.5).unwrap() - 1.0).abs() < 1e-10);
    }
}
