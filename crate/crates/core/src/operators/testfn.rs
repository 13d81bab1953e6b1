//! Compactly supported `C²` test functions with exact derivatives.

use std::fmt;
use std::sync::Arc;

use crate::matrix::Matrix;
use crate::scalar::{distance, dot, lit, norm, Real};

/// A smooth scalar function with exact gradient and Hessian.
pub trait SmoothFn<T: Real>: Send + Sync {
    fn dim(&self) -> usize;

    /// `(f(x), ∇f(x), ∇²f(x))`
    fn jet(&self, x: &[T]) -> (T, Vec<T>, Matrix<T>);

    fn value(&self, x: &[T]) -> T {
        self.jet(x).0
    }
}

/// `exp(1 - 1/(1 - |x-c|²/R²))` inside the ball `B_R(c)`, zero outside;
/// equal to 1 at the centre.
#[derive(Clone, Debug)]
pub struct Bump<T> {
    pub center: Vec<T>,
    pub radius: T,
}

impl<T: Real> SmoothFn<T> for Bump<T> {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn jet(&self, x: &[T]) -> (T, Vec<T>, Matrix<T>) {
        let d = self.center.len();
        let u: Vec<T> = x.iter().zip(&self.center).map(|(&a, &c)| a - c).collect();
        let r2 = self.radius * self.radius;
        let q = dot(&u, &u) / r2;
        if q >= T::one() {
            return (T::zero(), vec![T::zero(); d], Matrix::zeros(d));
        }
        let one = T::one();
        let s = one - q;
        let g = (one - one / s).exp();
        let g1 = -g / (s * s);
        let g2 = g * (one / (s * s * s * s) - lit::<T>(2.0) / (s * s * s));
        // ∇q = 2u/R², ∇²q = 2I/R²
        let dq: Vec<T> = u.iter().map(|&c| lit::<T>(2.0) * c / r2).collect();
        let mut h = Matrix::outer(&dq, &dq).scale(g2);
        h.add_assign_scaled(&Matrix::identity(d), g1 * lit(2.0) / r2);
        (g, dq.iter().map(|&c| g1 * c).collect(), h)
    }
}

/// `χ(|x - c|)` with `χ = 1` on `[0, inner]`, `χ = 0` beyond `outer`, and a
/// `C^∞` transition in between.
#[derive(Clone, Debug)]
pub struct Plateau<T> {
    pub center: Vec<T>,
    pub inner: T,
    pub outer: T,
}

/// `e^{-1/s}` and its first two derivatives, zero for `s <= 0`.
fn psi<T: Real>(s: T) -> (T, T, T) {
    if s <= T::zero() {
        return (T::zero(), T::zero(), T::zero());
    }
    let e = (-T::one() / s).exp();
    let d1 = e / (s * s);
    let d2 = e * (T::one() - lit::<T>(2.0) * s) / (s * s * s * s);
    (e, d1, d2)
}

impl<T: Real> Plateau<T> {
    /// `χ(r)` and its first two radial derivatives.
    fn profile(&self, r: T) -> (T, T, T) {
        if r <= self.inner {
            return (T::one(), T::zero(), T::zero());
        }
        if r >= self.outer {
            return (T::zero(), T::zero(), T::zero());
        }
        let w = self.outer - self.inner;
        let s = (r - self.inner) / w;
        let (a, a1, a2) = psi(T::one() - s);
        let (b, b1, b2) = psi(s);
        // χ = a / (a + b) with a = ψ(1-s), b = ψ(s); derivatives in s, then /w
        let den = a + b;
        let da = -a1;
        let db = b1;
        let dda = a2;
        let ddb = b2;
        let dden = da + db;
        let ddden = dda + ddb;
        let chi = a / den;
        let chi1 = (da * den - a * dden) / (den * den);
        let chi2 = (dda * den - a * ddden) / (den * den) - lit::<T>(2.0) * dden * chi1 / den;
        (chi, chi1 / w, chi2 / (w * w))
    }
}

impl<T: Real> SmoothFn<T> for Plateau<T> {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn jet(&self, x: &[T]) -> (T, Vec<T>, Matrix<T>) {
        let d = self.center.len();
        let u: Vec<T> = x.iter().zip(&self.center).map(|(&a, &c)| a - c).collect();
        let r = norm(&u);
        let (chi, c1, c2) = self.profile(r);
        if r <= self.inner || r >= self.outer {
            return (chi, vec![T::zero(); d], Matrix::zeros(d));
        }
        let e: Vec<T> = u.iter().map(|&c| c / r).collect();
        let grad = e.iter().map(|&c| c1 * c).collect();
        // ∇²χ(r) = χ'' e eᵀ + χ'/r (I - e eᵀ)
        let eet = Matrix::outer(&e, &e);
        let mut h = Matrix::identity(d).scale(c1 / r);
        h.add_assign_scaled(&eet, c2 - c1 / r);
        (chi, grad, h)
    }
}

/// `exp(-|x - c|²/(2σ²))`
#[derive(Clone, Debug)]
pub struct Gaussian<T> {
    pub center: Vec<T>,
    pub sigma: T,
}

impl<T: Real> SmoothFn<T> for Gaussian<T> {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn jet(&self, x: &[T]) -> (T, Vec<T>, Matrix<T>) {
        let d = self.center.len();
        let s2 = self.sigma * self.sigma;
        let u: Vec<T> = x.iter().zip(&self.center).map(|(&a, &c)| a - c).collect();
        let v = (-dot(&u, &u) / (s2 + s2)).exp();
        let grad: Vec<T> = u.iter().map(|&c| -v * c / s2).collect();
        let mut h = Matrix::outer(&u, &u).scale(v / (s2 * s2));
        h.add_assign_scaled(&Matrix::identity(d), -v / s2);
        (v, grad, h)
    }
}

/// `cos(ω·x + φ)`
#[derive(Clone, Debug)]
pub struct Wave<T> {
    pub freq: Vec<T>,
    pub phase: T,
}

impl<T: Real> SmoothFn<T> for Wave<T> {
    fn dim(&self) -> usize {
        self.freq.len()
    }

    fn jet(&self, x: &[T]) -> (T, Vec<T>, Matrix<T>) {
        let arg = dot(&self.freq, x) + self.phase;
        let (s, c) = arg.sin_cos();
        let grad = self.freq.iter().map(|&w| -s * w).collect();
        (c, grad, Matrix::outer(&self.freq, &self.freq).scale(-c))
    }
}

/// `½ xᵀQx + p·x + c`
#[derive(Clone, Debug)]
pub struct Quadratic<T> {
    pub q: Matrix<T>,
    pub p: Vec<T>,
    pub c: T,
}

impl<T: Real> SmoothFn<T> for Quadratic<T> {
    fn dim(&self) -> usize {
        self.p.len()
    }

    fn jet(&self, x: &[T]) -> (T, Vec<T>, Matrix<T>) {
        let qx = self.q.mul_vec(x);
        let v = dot(x, &qx) * lit(0.5) + dot(&self.p, x) + self.c;
        let grad = qx.iter().zip(&self.p).map(|(&a, &b)| a + b).collect();
        (v, grad, self.q.clone())
    }
}

/// Pointwise product `u v`.
pub struct Product<T> {
    pub a: Arc<dyn SmoothFn<T>>,
    pub b: Arc<dyn SmoothFn<T>>,
}

impl<T: Real> SmoothFn<T> for Product<T> {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn jet(&self, x: &[T]) -> (T, Vec<T>, Matrix<T>) {
        let (u, gu, hu) = self.a.jet(x);
        if u == T::zero() && gu.iter().all(|&g| g == T::zero()) && hu.as_slice().iter().all(|&h| h == T::zero()) {
            let d = x.len();
            return (T::zero(), vec![T::zero(); d], Matrix::zeros(d));
        }
        let (v, gv, hv) = self.b.jet(x);
        let grad = gu.iter().zip(&gv).map(|(&p, &q)| p * v + q * u).collect();
        let mut h = hu.scale(v);
        h.add_assign_scaled(&hv, u);
        h.add_assign_scaled(&Matrix::outer(&gu, &gv), T::one());
        h.add_assign_scaled(&Matrix::outer(&gv, &gu), T::one());
        (u * v, grad, h)
    }
}

/// `Σ c_i f_i`
pub struct Combination<T> {
    pub terms: Vec<(T, Arc<dyn SmoothFn<T>>)>,
}

impl<T: Real> SmoothFn<T> for Combination<T> {
    fn dim(&self) -> usize {
        self.terms.first().map_or(0, |(_, f)| f.dim())
    }

    fn jet(&self, x: &[T]) -> (T, Vec<T>, Matrix<T>) {
        let d = x.len();
        let mut v = T::zero();
        let mut g = vec![T::zero(); d];
        let mut h = Matrix::zeros(d);
        for (c, f) in &self.terms {
            let (fv, fg, fh) = f.jet(x);
            v = v + *c * fv;
            for (gi, &fi) in g.iter_mut().zip(&fg) {
                *gi = *gi + *c * fi;
            }
            h.add_assign_scaled(&fh, *c);
        }
        (v, g, h)
    }
}

/// `f ∈ C²_c(ℝ^d)` supported in the ball `B_R(0)`.
#[derive(Clone)]
pub struct TestFunction<T> {
    f: Arc<dyn SmoothFn<T>>,
    support_radius: T,
    label: String,
}

impl<T: Real> fmt::Debug for TestFunction<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TestFunction({}, R={})", self.label, self.support_radius)
    }
}

impl<T: Real> TestFunction<T> {
    /// `support_radius` must bound the support of `f`; see [`TestFunction::check_support`].
    pub fn new(f: Arc<dyn SmoothFn<T>>, support_radius: T, label: impl Into<String>) -> Self {
        Self { f, support_radius, label: label.into() }
    }

    pub fn bump(center: Vec<T>, radius: T) -> Self {
        let r = norm(&center) + radius;
        let label = format!("bump(c={:?}, r={})", center, radius);
        Self::new(Arc::new(Bump { center, radius }), r, label)
    }

    /// `bump(c, r) · cos(ω·x + φ)`
    pub fn modulated_bump(center: Vec<T>, radius: T, freq: Vec<T>, phase: T) -> Self {
        let r = norm(&center) + radius;
        let label = format!("bump(c={:?}, r={})*cos({:?}x+{})", center, radius, freq, phase);
        let f = Product { a: Arc::new(Bump { center, radius }), b: Arc::new(Wave { freq, phase }) };
        Self::new(Arc::new(f), r, label)
    }

    /// Gaussian of width `sigma` centred at the origin, cut off smoothly
    /// between radii `inner` and `outer`.
    pub fn smooth_bump(dim: usize, sigma: T, inner: T, outer: T) -> Self {
        let g = Arc::new(Gaussian { center: vec![T::zero(); dim], sigma });
        Self::cutoff_of(g, inner, outer, format!("gauss(s={sigma})*cut({inner},{outer})"))
    }

    /// `g · χ` with `χ` a plateau equal to one on `B_inner(0)`; `g` need not
    /// have compact support.
    pub fn cutoff_of(g: Arc<dyn SmoothFn<T>>, inner: T, outer: T, label: impl Into<String>) -> Self {
        let d = g.dim();
        let chi = Arc::new(Plateau { center: vec![T::zero(); d], inner, outer });
        Self::new(Arc::new(Product { a: chi, b: g }), outer, label)
    }

    /// `a f + b g`
    pub fn linear_combination(a: T, f: &Self, b: T, g: &Self) -> Self {
        let comb = Combination { terms: vec![(a, f.f.clone()), (b, g.f.clone())] };
        let r = f.support_radius.max(g.support_radius);
        Self::new(Arc::new(comb), r, format!("{a}*{} + {b}*{}", f.label, g.label))
    }

    /// `x ↦ f(x + h)`
    pub fn translated(&self, h: &[T]) -> Self {
        struct Shift<T> {
            f: Arc<dyn SmoothFn<T>>,
            h: Vec<T>,
        }
        impl<T: Real> SmoothFn<T> for Shift<T> {
            fn dim(&self) -> usize {
                self.f.dim()
            }
            fn jet(&self, x: &[T]) -> (T, Vec<T>, Matrix<T>) {
                let y: Vec<T> = x.iter().zip(&self.h).map(|(&a, &b)| a + b).collect();
                self.f.jet(&y)
            }
        }
        Self::new(
            Arc::new(Shift { f: self.f.clone(), h: h.to_vec() }),
            self.support_radius + norm(h),
            format!("{}(.+{:?})", self.label, h),
        )
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }

    /// Identity of the underlying function, stable across clones.
    pub fn id(&self) -> usize {
        Arc::as_ptr(&self.f) as *const () as usize
    }

    pub fn support_radius(&self) -> T {
        self.support_radius
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn value(&self, x: &[T]) -> T {
        if norm(x) >= self.support_radius {
            return T::zero();
        }
        self.f.value(x)
    }

    #[inline]
    pub fn jet(&self, x: &[T]) -> (T, Vec<T>, Matrix<T>) {
        if norm(x) >= self.support_radius {
            let d = x.len();
            return (T::zero(), vec![T::zero(); d], Matrix::zeros(d));
        }
        self.f.jet(x)
    }

    pub fn gradient(&self, x: &[T]) -> Vec<T> {
        self.jet(x).1
    }

    pub fn hessian(&self, x: &[T]) -> Matrix<T> {
        self.jet(x).2
    }

    /// Evaluates the underlying function (ignoring the declared support) at
    /// `samples` points on spheres outside `B_R` and checks it vanishes.
    pub fn check_support(&self, samples: usize) -> bool {
        let d = self.dim();
        (0..samples).all(|i| {
            let r = self.support_radius * (T::one() + lit(0.37 * (i % 7) as f64 + 1e-9));
            let mut x = vec![T::zero(); d];
            let th = lit::<T>(2.399_963 * i as f64);
            if d > 1 {
                x[0] = r * th.cos();
                x[1] = r * th.sin();
            } else {
                x[0] = if i % 2 == 1 { -r } else { r };
            }
            let (v, g, h) = self.f.jet(&x);
            v == T::zero() && g.iter().all(|&c| c == T::zero()) && h.as_slice().iter().all(|&c| c == T::zero())
        })
    }

    /// Sampled `sup|f| + sup|∇f| + sup|∇²f|` over the support (1-D grid
    /// for `d = 1`, coordinate lines otherwise).
    pub fn c2_norm(&self) -> T {
        let d = self.dim();
        let n = 4001;
        let r = self.support_radius;
        let (mut s0, mut s1, mut s2) = (T::zero(), T::zero(), T::zero());
        for axis in 0..d {
            for i in 0..n {
                let mut x = vec![T::zero(); d];
                x[axis] = -r + (r + r) * lit(i as f64 / (n - 1) as f64);
                let (v, g, h) = self.jet(&x);
                s0 = s0.max(v.abs());
                s1 = s1.max(norm(&g));
                s2 = s2.max(h.as_slice().iter().fold(T::zero(), |a, &c| a + c * c).sqrt());
            }
        }
        s0 + s1 + s2
    }

    /// Distance from `x` to the complement of the support ball.
    pub fn depth(&self, x: &[T]) -> T {
        self.support_radius - distance(x, &vec![T::zero(); x.len()])
    }
}

/// Finite bank of test functions standing in for `C²_c(ℝ^d)`.
#[derive(Clone)]
pub struct TestBank<T> {
    pub functions: Vec<TestFunction<T>>,
}

impl<T: Real> fmt::Debug for TestBank<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.functions).finish()
    }
}

impl<T: Real> TestBank<T> {
    pub fn new(functions: Vec<TestFunction<T>>) -> Self {
        Self { functions }
    }

    /// Radial and coordinate-modulated bumps with support radii 1, 2, 4, 8.
    pub fn standard(dim: usize) -> Self {
        let e1 = |v: f64| {
            let mut c = vec![T::zero(); dim];
            c[0] = lit(v);
            c
        };
        let functions = vec![
            TestFunction::bump(e1(0.0), lit(1.0)),
            TestFunction::bump(e1(0.5), lit(1.5)),
            TestFunction::modulated_bump(e1(-0.5), lit(1.5), e1(2.0), lit(0.3)),
            TestFunction::bump(e1(0.0), lit(4.0)),
            TestFunction::modulated_bump(e1(1.0), lit(3.0), e1(1.5), lit(0.0)),
            TestFunction::modulated_bump(e1(-2.0), lit(6.0), e1(0.5), lit(0.7)),
        ];
        Self { functions }
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TestFunction<T>> {
        self.functions.iter()
    }

    pub fn max_support(&self) -> T {
        self.functions.iter().map(|f| f.support_radius()).fold(T::zero(), T::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: &TestFunction<f64>, x: &[f64]) {
        let h = 1e-5;
        let d = x.len();
        let (_, g, hs) = f.jet(x);
        for i in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let fd = (f.value(&xp) - f.value(&xm)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "grad {i}: {fd} vs {}", g[i]);
            let (_, gp, _) = f.jet(&xp);
            let (_, gm, _) = f.jet(&xm);
            for j in 0..d {
                let fdh = (gp[j] - gm[j]) / (2.0 * h);
                assert!((fdh - hs.get(j, i)).abs() < 1e-5, "hess {i}{j}: {fdh} vs {}", hs.get(j, i));
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let fs = [
            TestFunction::bump(vec![0.2, -0.1], 1.3),
            TestFunction::modulated_bump(vec![0.0], 2.0, vec![1.7], 0.4),
            TestFunction::cutoff_of(
                Arc::new(Quadratic { q: Matrix::identity(2).scale(2.0), p: vec![0.0, 1.0], c: 0.0 }),
                1.0,
                2.0,
                "quad",
            ),
            TestFunction::smooth_bump(1, 0.4, 1.0, 2.0),
        ];
        for f in &fs {
            let d = f.dim();
            for k in 0..9 {
                let mut x = vec![0.0; d];
                x[0] = -1.7 + 0.41 * k as f64;
                if d > 1 {
                    x[1] = 0.3 - 0.13 * k as f64;
                }
                fd_check(f, &x);
            }
        }
    }

    #[test]
    fn supports_are_respected() {
        for f in TestBank::<f64>::standard(1).iter().chain(TestBank::<f64>::standard(2).iter()) {
            assert!(f.check_support(40), "{f:?}");
        }
    }

    #[test]
    fn standard_bank_radii() {
        let radii: Vec<f64> = TestBank::<f64>::standard(1).iter().map(|f| f.support_radius()).collect();
        for r in [1.0, 2.0, 4.0, 8.0] {
            assert!(radii.iter().any(|&q| (q - r).abs() < 1e-12), "{r} in {radii:?}");
        }
    }
}
