//! Isotropic α-stable increments and a Fourier-inversion oracle for the
//! one-dimensional marginal law.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp1, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::levy::StableLike;
use crate::measure::GridDensity;
use crate::operators::frac_laplacian_constant;
use crate::quadrature::gl8;
use crate::scalar::{lit, to_f64, Real};

/// How the jump intensity of the driving process is normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StableNormalization {
    /// Lévy measure `κ dz/|z|^{d+α}`.
    LevyMeasure,
    /// Generator `κ Δ^{α/2}`, characteristic function `exp(-κ t |ξ|^α)`.
    FractionalLaplacian,
}

/// Isotropic α-stable process in `ℝ^d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableParams<T> {
    pub alpha: T,
    pub dim: usize,
    pub normalization: StableNormalization,
    pub intensity: T,
}

impl<T: Real> StableParams<T> {
    pub fn new(alpha: T, dim: usize, normalization: StableNormalization) -> Result<Self> {
        if !(alpha > T::zero() && alpha < lit(2.0)) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0,2), got {alpha}")));
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        Ok(Self { alpha, dim, normalization, intensity: T::one() })
    }

    pub fn with_intensity(mut self, intensity: T) -> Self {
        self.intensity = intensity;
        self
    }

    /// `γ` with `E exp(i ξ·L_t) = exp(-γ t |ξ|^α)`.
    pub fn exponent(&self) -> T {
        match self.normalization {
            StableNormalization::FractionalLaplacian => self.intensity,
            StableNormalization::LevyMeasure => {
                self.intensity / lit(frac_laplacian_constant(self.dim, to_f64(self.alpha)))
            }
        }
    }

    /// `(γ dt)^{1/α}`, the factor multiplying a standard increment.
    pub fn increment_scale(&self, dt: T) -> T {
        (self.exponent() * dt).powf(T::one() / self.alpha)
    }

    /// The Lévy kernel `κ' dz/|z|^{d+α}` of this process.
    pub fn kernel(&self, ell: T) -> Result<StableLike<T>> {
        let kappa = match self.normalization {
            StableNormalization::LevyMeasure => self.intensity,
            StableNormalization::FractionalLaplacian => {
                self.intensity * lit(frac_laplacian_constant(self.dim, to_f64(self.alpha)))
            }
        };
        StableLike::isotropic(self.dim, self.alpha, ell, kappa)
    }
}

/// Chambers-Mallows-Stuck draw with characteristic function `exp(-|ξ|^α)`.
pub fn standard_symmetric_stable(alpha: f64, rng: &mut dyn RngCore) -> f64 {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let v = (rng.random::<f64>() - 0.5) * std::f64::consts::PI;
    let w: f64 = Exp1.sample(rng);
    if (alpha - 1.0).abs() < 1e-12 {
        return v.tan();
    }
    let v = v.clamp(-half_pi + 1e-300, half_pi - 1e-300);
    (alpha * v).sin() / v.cos().powf(1.0 / alpha) * ((v - alpha * v).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Kanter draw of a positive `β`-stable variable with Laplace transform
/// `exp(-λ^β)`, `β ∈ (0,1)`.
pub fn positive_stable(beta: f64, rng: &mut dyn RngCore) -> f64 {
    let u = rng.random::<f64>() * std::f64::consts::PI;
    let u = u.max(1e-300);
    let w: f64 = Exp1.sample(rng);
    let a = (beta * u).sin() / u.sin().powf(1.0 / beta);
    let b = (((1.0 - beta) * u).sin() / w).powf((1.0 - beta) / beta);
    a * b
}

/// Increment `L_{t+dt} - L_t`. In one dimension this is the CMS transform;
/// in higher dimension the sub-Gaussian representation `√A · G` with `A`
/// positive `α/2`-stable and `G ~ N(0, 2I)`, which is exactly isotropic.
pub fn sample_stable<T: Real>(p: &StableParams<T>, dt: T, rng: &mut dyn RngCore) -> Vec<T> {
    let alpha = to_f64(p.alpha);
    let scale = to_f64(p.increment_scale(dt));
    if p.dim == 1 {
        return vec![lit(scale * standard_symmetric_stable(alpha, rng))];
    }
    let a = positive_stable(alpha / 2.0, rng);
    let s = scale * (2.0 * a).sqrt();
    (0..p.dim)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            lit(s * g)
        })
        .collect()
}

/// Symmetric one-dimensional law with characteristic function
/// `exp(-γ|ξ|^α - v ξ²/2)`: the stable marginal at time `t` (with `γ`
/// proportional to `t`) started from a centred Gaussian of variance `v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StableOracle {
    pub alpha: f64,
    pub gamma: f64,
    pub gauss_var: f64,
}

impl StableOracle {
    pub fn new(alpha: f64, gamma: f64, gauss_var: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) || !(gamma >= 0.0) || !(gauss_var >= 0.0) || gamma + gauss_var == 0.0 {
            return Err(Error::InvalidParameter("stable oracle needs α∈(0,2), γ,v ≥ 0, not both 0".into()));
        }
        Ok(Self { alpha, gamma, gauss_var })
    }

    /// Marginal at time `t` of `params` started from `N(0, v)`.
    pub fn at_time<T: Real>(params: &StableParams<T>, t: f64, gauss_var: f64) -> Result<Self> {
        if params.dim != 1 {
            return Err(Error::InvalidParameter("the oracle is one-dimensional".into()));
        }
        Self::new(to_f64(params.alpha), to_f64(params.exponent()) * t, gauss_var)
    }

    pub fn char_fn(&self, xi: f64) -> f64 {
        let a = xi.abs();
        (-self.gamma * a.powf(self.alpha) - 0.5 * self.gauss_var * a * a).exp()
    }

    /// Frequency beyond which the characteristic function is below `e^{-46}`.
    pub fn xi_max(&self) -> f64 {
        let target = 46.0;
        let mut hi = 1.0;
        while self.gamma * f64::powf(hi, self.alpha) + 0.5 * self.gauss_var * hi * hi < target {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.gamma * f64::powf(mid, self.alpha) + 0.5 * self.gauss_var * mid * mid < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// `∫_0^Ξ g(ξ) dξ` with geometric panels at the origin and panels
    /// of width at most `1/(1+|x|)` elsewhere.
    fn transform<G: Fn(f64) -> f64>(&self, x: f64, g: G) -> f64 {
        let rule = gl8();
        let xi_max = self.xi_max();
        let width = 1.0 / (1.0 + x.abs());
        let first = xi_max.min(width);
        let mut acc = 0.0;
        let mut hi = first;
        for _ in 0..60 {
            let lo = hi * 0.5;
            acc += rule.integrate(lo, hi, &g);
            hi = lo;
        }
        let panels = ((xi_max - first) / width).ceil() as usize;
        if panels > 0 {
            acc += rule.composite(first, xi_max, panels, &g);
        }
        acc
    }

    /// Density by direct quadrature of `(1/π)∫_0^∞ cos(ξx) φ(ξ) dξ`.
    pub fn density(&self, x: f64) -> f64 {
        self.transform(x, |xi| (xi * x).cos() * self.char_fn(xi)) / std::f64::consts::PI
    }

    /// Distribution function `½ + (1/π)∫_0^∞ sin(ξx) φ(ξ)/ξ dξ`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.5;
        }
        let v = self.transform(x, |xi| {
            let s = if xi == 0.0 { x } else { (xi * x).sin() / xi };
            s * self.char_fn(xi)
        });
        (0.5 + v / std::f64::consts::PI).clamp(0.0, 1.0)
    }

    /// `P(X > x)` for large `x` from the leading power tail
    /// `γ Γ(α) sin(πα/2) / (π x^α)`.
    pub fn tail_asymptotic(&self, x: f64) -> f64 {
        self.gamma * gamma(self.alpha) * (std::f64::consts::FRAC_PI_2 * self.alpha).sin()
            / (std::f64::consts::PI * x.abs().powf(self.alpha))
    }

    /// Density on `x_j = (j - n/2) dx`, `j = 0..n`, by one FFT of the
    /// sampled characteristic function; the result is the periodization of
    /// the density with period `n dx`.
    pub fn density_fft(&self, dx: f64, n: usize) -> Vec<f64> {
        let h = 2.0 * std::f64::consts::PI / (n as f64 * dx);
        let mut buf: Vec<Complex<f64>> = (0..n)
            .map(|k| {
                let m = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                Complex::new(sign * self.char_fn(m * h), 0.0)
            })
            .collect();
        FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
        buf.into_iter().map(|c| c.re * h / (2.0 * std::f64::consts::PI)).collect()
    }

    /// Grid density on `[-half_width, half_width]` with spacing `dx`; mass
    /// beyond the window is reported as exterior mass.
    pub fn grid_density(&self, dx: f64, half_width: f64) -> Result<GridDensity<f64>> {
        let m = (half_width / dx).round() as usize;
        let span = 2.0 * half_width + 2.0 * self.xi_max().recip();
        let mut n = 1usize;
        while (n as f64) * dx < 40.0 * span.max(1.0) || n < 4 * m + 4 {
            n *= 2;
        }
        let full = self.density_fft(dx, n);
        let mid = n / 2;
        let values: Vec<f64> = (mid - m..=mid + m).map(|j| full[j].max(0.0)).collect();
        let inside: f64 = values.iter().sum::<f64>() * dx;
        let exterior = (1.0 - inside).max(0.0);
        let scale = if inside > 1.0 { 1.0 / inside } else { 1.0 };
        let values = values.into_iter().map(|v| v * scale).collect();
        GridDensity::new(-(m as f64) * dx, dx, values, exterior)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cauchy_closed_form() {
        let o = StableOracle::new(1.0, 1.0, 0.0).unwrap();
        for x in [-7.0, -1.0, 0.0, 0.3, 2.5, 20.0] {
            let p = 1.0 / (std::f64::consts::PI * (1.0 + x * x));
            assert!((o.density(x) - p).abs() < 1e-10, "x={x}");
            let c = 0.5 + f64::atan(x) / std::f64::consts::PI;
            assert!((o.cdf(x) - c).abs() < 1e-10, "x={x}");
        }
    }

    #[test]
    fn gaussian_limit_of_the_oracle() {
        let o = StableOracle::new(1.5, 0.0, 0.49).unwrap();
        for x in [0.0_f64, 0.4, 1.3] {
            let p = (-x * x / (2.0 * 0.49)).exp() / (2.0 * std::f64::consts::PI * 0.49).sqrt();
            assert!((o.density(x) - p).abs() < 1e-10);
        }
    }

    #[test]
    fn fft_and_direct_quadrature_agree() {
        let o = StableOracle::new(1.5, 0.7, 0.01).unwrap();
        let dx = 0.05;
        let n = 1 << 16;
        let p = o.density_fft(dx, n);
        for j in [n / 2, n / 2 + 7, n / 2 - 40, n / 2 + 300] {
            let x = (j as f64 - (n / 2) as f64) * dx;
            assert!((p[j] - o.density(x)).abs() < 1e-8, "x={x}: {} vs {}", p[j], o.density(x));
        }
    }

    #[test]
    fn cms_at_alpha_two_limit_scale() {
        // α close to 2: exp(-|ξ|^α) is close to N(0, 2)
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20000;
        let v: f64 = (0..n).map(|_| standard_symmetric_stable(1.999, &mut rng).powi(2).min(100.0)).sum::<f64>()
            / n as f64;
        assert!((v - 2.0).abs() < 0.15, "{v}");
    }

    #[test]
    fn positive_stable_laplace_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let beta = 0.6;
        let n = 40000;
        for lambda in [0.5, 1.0, 2.0] {
            let m: f64 = (0..n).map(|_| (-lambda * positive_stable(beta, &mut rng)).exp()).sum::<f64>() / n as f64;
            let exact = (-f64::powf(lambda, beta)).exp();
            assert!((m - exact).abs() < 0.01, "λ={lambda}: {m} vs {exact}");
        }
    }
}
