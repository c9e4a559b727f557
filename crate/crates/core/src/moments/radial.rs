//! Pseudo-Zernike radial polynomials.
//!
//! The coefficient of `r^(n-k)` in ρ_n^m is the multinomial
//! `(2n+1-k)! / (k! (n+|m|+1-k)! (n-|m|-k)!)`, which is built exactly in
//! `u128` from two binomials and split into a double-double pair. Evaluation
//! runs Horner's rule in double-double arithmetic, so the alternating-sign
//! cancellation near `r = 1` costs roughly 106 bits instead of 53.

use crate::error::{Error, Result};

/// Highest supported polynomial degree.
pub const MAX_DEGREE: usize = 25;

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) at every step.
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Exact integer magnitude of the `k`-th coefficient of ρ_n^m.
pub(crate) fn coefficient_magnitude(n: usize, m_abs: usize, k: usize) -> u128 {
    debug_assert!(k <= n - m_abs);
    let top = (2 * n + 1 - k) as u128;
    // (2n+1-k)! / (k! (n+|m|+1-k)! (n-|m|-k)!) = C(top, k) * C(top - k, n-|m|-k)
    binomial(top, k as u128) * binomial(top - k as u128, (n - m_abs - k) as u128)
}

#[derive(Debug, Clone, Copy)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl DoubleDouble {
    const ZERO: Self = Self { hi: 0.0, lo: 0.0 };

    fn from_i128(v: i128) -> Self {
        let hi = v as f64;
        let lo = (v - hi as i128) as f64;
        Self { hi, lo }
    }

    #[inline]
    fn mul_f64(self, r: f64) -> Self {
        let p = self.hi * r;
        let e = self.hi.mul_add(r, -p) + self.lo * r;
        let (hi, lo) = quick_two_sum(p, e);
        Self { hi, lo }
    }

    #[inline]
    fn add(self, other: Self) -> Self {
        let (s, e) = two_sum(self.hi, other.hi);
        let (hi, lo) = quick_two_sum(s, e + self.lo + other.lo);
        Self { hi, lo }
    }
}

/// Precomputed radial polynomial ρ_n^m for one `(n, |m|)` pair.
#[derive(Debug, Clone)]
pub struct RadialPoly {
    n: usize,
    m_abs: usize,
    // Signed coefficients, highest power first: r^n, r^(n-1), ..., r^|m|.
    coeffs: Vec<DoubleDouble>,
}

impl RadialPoly {
    pub fn new(n: usize, m: i64) -> Result<Self> {
        let m_abs = m.unsigned_abs() as usize;
        if m_abs > n {
            return Err(Error::InvalidArgument(format!(
                "|m| = {m_abs} exceeds degree n = {n}"
            )));
        }
        if n > MAX_DEGREE {
            return Err(Error::DegreeCap {
                n_max: n,
                max: MAX_DEGREE,
            });
        }
        let coeffs = (0..=n - m_abs)
            .map(|k| {
                let mag = coefficient_magnitude(n, m_abs, k) as i128;
                DoubleDouble::from_i128(if k % 2 == 0 { mag } else { -mag })
            })
            .collect();
        Ok(Self { n, m_abs, coeffs })
    }

    pub fn degree(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.m_abs
    }

    /// Evaluates the polynomial; `r` is not range-checked here.
    pub fn eval(&self, r: f64) -> f64 {
        let mut acc = DoubleDouble::ZERO;
        for &c in &self.coeffs {
            acc = acc.mul_f64(r).add(c);
        }
        (acc.hi + acc.lo) * r.powi(self.m_abs as i32)
    }
}

/// ρ_n^m(r) for `|m| <= n` and `r` in `[0, 1]`.
pub fn radial_poly(n: usize, m: i64, r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidArgument(format!(
            "radius {r} outside the unit interval"
        )));
    }
    Ok(RadialPoly::new(n, m)?.eval(r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u128) -> u128 {
        (1..=n).product()
    }

    #[test]
    fn coefficients_match_factorial_form() {
        for n in 0..=12usize {
            for m in 0..=n {
                for k in 0..=n - m {
                    let direct = factorial((2 * n + 1 - k) as u128)
                        / (factorial(k as u128)
                            * factorial((n + m + 1 - k) as u128)
                            * factorial((n - m - k) as u128));
                    assert_eq!(coefficient_magnitude(n, m, k), direct, "n={n} m={m} k={k}");
                }
            }
        }
    }

    #[test]
    fn low_order_closed_forms() {
        assert_eq!(radial_poly(0, 0, 0.7).unwrap(), 1.0);
        assert_eq!(radial_poly(1, 1, 0.5).unwrap(), 0.5);
        assert!((radial_poly(1, 0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        // rho_1^0 = 3r - 2
        assert!((radial_poly(1, 0, 0.25).unwrap() - (-1.25)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(radial_poly(2, 3, 0.5).is_err());
        assert!(radial_poly(2, -3, 0.5).is_err());
        assert!(radial_poly(2, 1, 1.5).is_err());
        assert!(radial_poly(2, 1, -0.1).is_err());
        assert!(radial_poly(2, 1, f64::NAN).is_err());
        assert!(matches!(
            RadialPoly::new(26, 0),
            Err(Error::DegreeCap { n_max: 26, .. })
        ));
    }

    #[test]
    fn sign_of_m_is_irrelevant() {
        for i in 0..=20 {
            let r = i as f64 / 20.0;
            assert_eq!(
                radial_poly(5, -3, r).unwrap(),
                radial_poly(5, 3, r).unwrap()
            );
        }
    }

    #[test]
    fn diagonal_polynomials_are_one_at_the_rim() {
        for n in 0..=10 {
            let v = radial_poly(n, n as i64, 1.0).unwrap();
            assert!((v - 1.0).abs() < 1e-9, "n={n}: {v}");
        }
    }
}
