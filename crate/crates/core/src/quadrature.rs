//! Gauss-Legendre product rules used by the singular-integral machinery.
//!
//! Radial integrals are taken in the logarithmic variable `s = ln r`, which
//! turns the `|z|^{-d-α}` singularity at the origin and the power-law decay
//! at infinity into smooth, exponentially varying integrands.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{count, lit, Real};

/// Nodes and weights of the n-point Gauss-Legendre rule on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre<T> {
    nodes: Vec<T>,
    weights: Vec<T>,
}

fn legendre_f64(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

impl<T: Real> GaussLegendre<T> {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre order must be positive");
        let (x, w) = legendre_f64(n);
        Self {
            nodes: x.into_iter().map(lit).collect(),
            weights: w.into_iter().map(lit).collect(),
        }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes mapped to `[a, b]` with their weights.
    pub fn mapped(&self, a: T, b: T) -> impl Iterator<Item = (T, T)> + '_ {
        let half = (b - a) * lit(0.5);
        let mid = (a + b) * lit(0.5);
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| (mid + half * x, half * w))
    }

    /// `∫_a^b f`
    pub fn integrate<F: FnMut(T) -> T>(&self, a: T, b: T, mut f: F) -> T {
        self.mapped(a, b).fold(T::zero(), |acc, (x, w)| acc + w * f(x))
    }

    /// Composite rule with `panels` equal panels.
    pub fn composite<F: FnMut(T) -> T>(&self, a: T, b: T, panels: usize, mut f: F) -> T {
        let h = (b - a) / count(panels.max(1));
        let mut acc = T::zero();
        for p in 0..panels.max(1) {
            let lo = a + h * count(p);
            acc = acc + self.integrate(lo, lo + h, &mut f);
        }
        acc
    }

    /// `∫_a^b f(r) dr` for `0 < a < b`, integrated in `s = ln r` with panels
    /// of width at most `log_width`.
    pub fn log_radial<F: FnMut(T) -> T>(&self, a: T, b: T, log_width: T, mut f: F) -> T {
        if !(b > a) {
            return T::zero();
        }
        let (sa, sb) = (a.ln(), b.ln());
        let panels = ((sb - sa) / log_width).ceil().to_usize().unwrap_or(1).max(1);
        self.composite(sa, sb, panels, |s| {
            let r = s.exp();
            f(r) * r
        })
    }
}

/// Shared 8-point rule in `f64`.
pub fn gl8() -> &'static GaussLegendre<f64> {
    static RULE: OnceLock<GaussLegendre<f64>> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(8))
}

/// Directions and weights on the unit sphere `S^{d-1}`; weights sum to the
/// sphere area. Supported for `d ∈ {1, 2, 3}`.
#[derive(Clone, Debug)]
pub struct SphereRule<T> {
    dim: usize,
    directions: Vec<Vec<T>>,
    weights: Vec<T>,
}

impl<T: Real> SphereRule<T> {
    pub fn new(dim: usize, angular_nodes: usize) -> Result<Self> {
        let two_pi = T::PI() + T::PI();
        let (directions, weights) = match dim {
            1 => (vec![vec![T::one()], vec![-T::one()]], vec![T::one(), T::one()]),
            2 => {
                let m = angular_nodes.max(4);
                let w = two_pi / count(m);
                let dirs = (0..m)
                    .map(|k| {
                        let th = two_pi * (count::<T>(k) + lit(0.5)) / count(m);
                        vec![th.cos(), th.sin()]
                    })
                    .collect();
                (dirs, vec![w; m])
            }
            3 => {
                let m = angular_nodes.max(4);
                let gl = GaussLegendre::<T>::new(m);
                let nphi = 2 * m;
                let wphi = two_pi / count(nphi);
                let mut dirs = Vec::with_capacity(m * nphi);
                let mut ws = Vec::with_capacity(m * nphi);
                for (c, wc) in gl.mapped(-T::one(), T::one()) {
                    let s = (T::one() - c * c).max(T::zero()).sqrt();
                    for k in 0..nphi {
                        let ph = two_pi * (count::<T>(k) + lit(0.5)) / count(nphi);
                        dirs.push(vec![s * ph.cos(), s * ph.sin(), c]);
                        ws.push(wc * wphi);
                    }
                }
                (dirs, ws)
            }
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "angular quadrature supports d in {{1,2,3}}, got {dim}"
                )))
            }
        };
        Ok(Self { dim, directions, weights })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[T], T)> + '_ {
        self.directions.iter().map(Vec::as_slice).zip(self.weights.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Surface area of `S^{d-1}`: `2 π^{d/2} / Γ(d/2)`.
pub fn sphere_area<T: Real>(dim: usize) -> T {
    let d = dim as f64;
    lit(2.0 * std::f64::consts::PI.powf(d / 2.0) / statrs::function::gamma::gamma(d / 2.0))
}

/// Controls for the radial-angular product rules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSpec {
    /// Inner radius as a fraction of the cutoff `ℓ`.
    pub inner_fraction: f64,
    /// Maximum panel width in `ln r`.
    pub log_panel: f64,
    /// Gauss-Legendre points per panel.
    pub order: usize,
    /// Angular nodes (circle points for d = 2, polar points for d = 3).
    pub angular_nodes: usize,
    /// Relative change below which outer-radius doubling stops.
    pub outer_rel_tol: f64,
    pub max_doublings: usize,
    /// Maximum panel width in `r` for integrands carrying a test function.
    pub linear_panel: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            inner_fraction: 2f64.powi(-20),
            log_panel: 0.5,
            order: 8,
            angular_nodes: 16,
            outer_rel_tol: 1e-8,
            max_doublings: 400,
            linear_panel: 0.125,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_fraction > 0.0 && self.inner_fraction < 1.0) {
            return Err(Error::InvalidParameter("inner_fraction must lie in (0,1)".into()));
        }
        if !(self.log_panel > 0.0) || !(self.linear_panel > 0.0) || self.order == 0 {
            return Err(Error::InvalidParameter("panel widths and order must be positive".into()));
        }
        if !(self.outer_rel_tol > 0.0) {
            return Err(Error::InvalidParameter("outer_rel_tol must be positive".into()));
        }
        Ok(())
    }

    /// Same spec with every resolution parameter refined by `factor`.
    pub fn refined(&self, factor: f64) -> Self {
        Self {
            inner_fraction: self.inner_fraction,
            log_panel: self.log_panel / factor,
            order: self.order,
            angular_nodes: ((self.angular_nodes as f64) * factor).ceil() as usize,
            outer_rel_tol: self.outer_rel_tol,
            max_doublings: self.max_doublings,
            linear_panel: self.linear_panel / factor,
        }
    }
}

/// Prepared rules for a given spec and dimension.
#[derive(Clone, Debug)]
pub struct Rules<T> {
    pub spec: QuadratureSpec,
    pub line: GaussLegendre<T>,
    pub sphere: SphereRule<T>,
    pub log_panel: T,
    pub linear_panel: T,
}

impl<T: Real> Rules<T> {
    pub fn new(spec: &QuadratureSpec, dim: usize) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec: spec.clone(),
            line: GaussLegendre::new(spec.order),
            sphere: SphereRule::new(dim, spec.angular_nodes)?,
            log_panel: lit(spec.log_panel),
            linear_panel: lit(spec.linear_panel),
        })
    }
}

/// Value with an error estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate<T> {
    pub value: T,
    pub error: T,
}

impl<T: Real> Estimate<T> {
    pub fn exact(value: T) -> Self {
        Self { value, error: T::zero() }
    }

    pub fn zero() -> Self {
        Self::exact(T::zero())
    }

    pub fn plus(self, other: Self) -> Self {
        Self { value: self.value + other.value, error: self.error + other.error }
    }

    pub fn scaled(self, s: T) -> Self {
        Self { value: self.value * s, error: self.error * s.abs() }
    }
}

/// `∫_{r0}^∞ g(r) dr` by doubling the outer radius until the relative
/// change drops below `rel_tol`; the remainder is extrapolated from the
/// geometric decay of the last increments and reported as the error.
pub fn outer_doubling<T: Real, G: FnMut(T, T) -> T>(
    r0: T,
    r_start: T,
    rel_tol: T,
    max_doublings: usize,
    mut piece: G,
) -> Result<Estimate<T>> {
    let two: T = lit(2.0);
    let mut r = r_start.max(r0 * two);
    let mut total = piece(r0, r);
    let mut prev_inc: Option<T> = None;
    let mut calm = 0;
    for _ in 0..max_doublings {
        let inc = piece(r, r * two);
        total = total + inc;
        r = r * two;
        let scale = total.abs().max(T::min_positive_value());
        if !inc.is_finite() || !total.is_finite() {
            return Err(Error::NonIntegrable("non-finite tail increment".into()));
        }
        if inc.abs() <= rel_tol * scale {
            calm += 1;
            if calm >= 2 {
                let q = match prev_inc {
                    Some(p) if p.abs() > T::zero() => (inc / p).abs(),
                    _ => T::zero(),
                };
                let tail = if q < lit(0.999) { inc.abs() * q / (T::one() - q) } else { inc.abs() };
                let signed = if inc < T::zero() { -tail } else { tail };
                return Ok(Estimate { value: total + signed, error: tail + rel_tol * scale });
            }
        } else {
            calm = 0;
        }
        prev_inc = Some(inc);
    }
    Err(Error::NonIntegrable(format!(
        "outer radius doubled {max_doublings} times without relative change below {}",
        rel_tol
    )))
}

/// Estimate of `∫_{0}^{δ}` from shells `[δ/2^{k+1}, δ/2^k]`: the shells
/// must shrink geometrically, otherwise the integrand is declared
/// non-integrable at the origin.
pub fn inner_extrapolation<T: Real, G: FnMut(T, T) -> T>(delta: T, mut shell: G) -> Result<Estimate<T>> {
    let half: T = lit(0.5);
    let mut hi = delta;
    let mut shells = Vec::with_capacity(8);
    for _ in 0..8 {
        let lo = hi * half;
        shells.push(shell(lo, hi));
        hi = lo;
    }
    let mut ratios = shells.windows(2).map(|w| {
        if w[0].abs() > T::zero() {
            (w[1] / w[0]).abs()
        } else {
            T::zero()
        }
    });
    let q = ratios.next_back().unwrap_or(T::zero());
    if !(q < lit(0.98)) || shells.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonIntegrable(format!(
            "shell contributions near the origin do not decay (ratio {q})"
        )));
    }
    let sum: T = shells.iter().copied().sum();
    let last = *shells.last().unwrap();
    let tail = last.abs() * q / (T::one() - q);
    let signed = if last < T::zero() { -tail } else { tail };
    Ok(Estimate { value: sum + signed, error: tail })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let gl = GaussLegendre::<f64>::new(6);
        let v = gl.integrate(-1.0, 2.0, |x| x.powi(11) - 3.0 * x.powi(4) + 1.0);
        let exact = (2f64.powi(12) - 1.0) / 12.0 - 3.0 * (32.0 + 1.0) / 5.0 + 3.0;
        assert!((v - exact).abs() < 1e-10, "{v} vs {exact}");
        let total: f64 = gl.mapped(-1.0, 1.0).map(|(_, w)| w).sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn sphere_weights_sum_to_area() {
        for d in 1..=3 {
            let rule = SphereRule::<f64>::new(d, 12).unwrap();
            let s: f64 = rule.iter().map(|(_, w)| w).sum();
            assert!((s - sphere_area::<f64>(d)).abs() < 1e-12, "d={d}");
        }
        assert!(SphereRule::<f64>::new(4, 8).is_err());
    }

    #[test]
    fn sphere_rule_second_moments_are_isotropic() {
        let rule = SphereRule::<f64>::new(3, 10).unwrap();
        let m: f64 = rule.iter().map(|(th, w)| th[0] * th[1] * w).sum();
        let diag: f64 = rule.iter().map(|(th, w)| th[2] * th[2] * w).sum();
        assert!(m.abs() < 1e-12);
        assert!((diag - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn doubling_matches_power_tail() {
        let gl = GaussLegendre::<f64>::new(8);
        let est = outer_doubling(0.5, 1.0, 1e-10, 400, |a, b| gl.log_radial(a, b, 0.5, |r| r.powf(-1.5)))
            .unwrap();
        let exact = 2.0 / 0.5f64.sqrt();
        assert!((est.value - exact).abs() < 1e-8 * exact, "{} vs {exact}", est.value);
    }

    #[test]
    fn divergent_tail_is_rejected() {
        let gl = GaussLegendre::<f64>::new(8);
        let r = outer_doubling(1.0, 2.0, 1e-8, 60, |a, b| gl.log_radial(a, b, 0.5, |r| 1.0 / r));
        assert!(matches!(r, Err(Error::NonIntegrable(_))));
    }

    #[test]
    fn inner_extrapolation_rejects_nonintegrable_origin() {
        let gl = GaussLegendre::<f64>::new(8);
        let ok = inner_extrapolation(0.5, |a, b| gl.log_radial(a, b, 0.5, |r| r.powf(-0.5))).unwrap();
        assert!((ok.value - 2.0 * 0.5f64.sqrt()).abs() < 1e-6);
        let bad = inner_extrapolation(0.5, |a, b| gl.log_radial(a, b, 0.5, |r| 1.0 / (r * r)));
        assert!(bad.is_err());
    }
}
