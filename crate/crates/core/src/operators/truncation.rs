//! Smooth truncation `π` of the identity used to rewrite the compensator.

use crate::scalar::{lit, norm, Real};

/// `π(z) = z χ(|z|)` with `χ = 1` on `[0, ℓ]`, `χ = 0` beyond `2ℓ` and the
/// quintic blend `1 - S((r - ℓ)/ℓ)`, `S(s) = 6s⁵ - 15s⁴ + 10s³`, in between.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationPi<T> {
    ell: T,
}

impl<T: Real> TruncationPi<T> {
    pub fn new(ell: T) -> Self {
        assert!(ell > T::zero(), "truncation radius must be positive");
        Self { ell }
    }

    pub fn ell(&self) -> T {
        self.ell
    }

    /// Radial profile `χ(r)`.
    pub fn profile(&self, r: T) -> T {
        if r <= self.ell {
            return T::one();
        }
        if r >= self.ell + self.ell {
            return T::zero();
        }
        let s = (r - self.ell) / self.ell;
        let s3 = s * s * s;
        T::one() - s3 * (lit::<T>(10.0) + s * (lit::<T>(-15.0) + s * lit(6.0)))
    }

    pub fn apply(&self, z: &[T]) -> Vec<T> {
        let c = self.profile(norm(z));
        z.iter().map(|&v| v * c).collect()
    }

    /// `π(z)·g` without allocating.
    pub fn dot(&self, z: &[T], g: &[T]) -> T {
        let c = self.profile(norm(z));
        if c == T::zero() {
            return T::zero();
        }
        z.iter().zip(g).fold(T::zero(), |a, (&zi, &gi)| a + zi * gi) * c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn odd_identity_inside_zero_outside(z0 in -2.0f64..2.0, z1 in -2.0f64..2.0) {
            let pi = TruncationPi::new(0.5_f64);
            let z = [z0, z1];
            let p = pi.apply(&z);
            let m = pi.apply(&[-z0, -z1]);
            prop_assert_eq!(p[0], -m[0]);
            prop_assert_eq!(p[1], -m[1]);
            let r = norm(&z);
            if r <= 0.5 {
                prop_assert_eq!(p.clone(), z.to_vec());
            }
            if r >= 1.0 {
                prop_assert_eq!(p, vec![0.0, 0.0]);
            }
        }
    }

    #[test]
    fn blend_is_c2_at_the_seams() {
        let pi = TruncationPi::new(0.5_f64);
        let h = 1e-4;
        for r in [0.5, 1.0] {
            let d1 = (pi.profile(r + h) - pi.profile(r - h)) / (2.0 * h);
            let d2 = (pi.profile(r + h) - 2.0 * pi.profile(r) + pi.profile(r - h)) / (h * h);
            assert!(d1.abs() < 1e-6 && d2.abs() < 1e-2, "r={r}: {d1} {d2}");
        }
    }
}
