//! Radial polynomials against exact rational evaluation of the closed form.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use pzsrc::moments::{radial_poly, MAX_DEGREE};

fn factorial(n: usize) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

fn exact_radial(n: usize, m: usize, r: &BigRational) -> BigRational {
    let mut acc = BigRational::zero();
    for s in 0..=n - m {
        let num = factorial(2 * n + 1 - s);
        let den = factorial(s) * factorial(n + m + 1 - s) * factorial(n - m - s);
        let mut term = BigRational::new(num, den) * num_traits::pow(r.clone(), n - s);
        if s % 2 == 1 {
            term = -term;
        }
        acc += term;
    }
    acc
}

#[test]
fn matches_exact_rational_values() {
    // Dyadic radii are exact in binary, so only the evaluation error shows.
    let radii: Vec<(i64, i64)> = vec![(0, 1), (1, 64), (1, 4), (1, 2), (45, 64), (7, 8), (63, 64), (1, 1)];
    let mut worst = 0.0f64;
    for n in 0..=MAX_DEGREE {
        for m in 0..=n {
            for &(p, q) in &radii {
                let r = BigRational::new(p.into(), q.into());
                let want = exact_radial(n, m, &r).to_f64().unwrap();
                let got = radial_poly(n, m as i64, p as f64 / q as f64).unwrap();
                let err = (got - want).abs() / want.abs().max(1.0);
                worst = worst.max(err);
                assert!(err <= 1e-12, "R({n},{m})({p}/{q}): got {got}, want {want}");
            }
        }
    }
    assert!(worst <= 1e-12);
}

#[test]
fn negative_order_mirrors_positive() {
    for n in 0..=MAX_DEGREE {
        for m in 0..=n as i64 {
            for r in [0.1, 0.5, 0.93] {
                assert_eq!(radial_poly(n, m, r).unwrap(), radial_poly(n, -m, r).unwrap());
            }
        }
    }
}

#[test]
fn value_at_rim_is_one() {
    for n in 0..=MAX_DEGREE {
        for m in 0..=n as i64 {
            let v = radial_poly(n, m, 1.0).unwrap();
            assert!((v - 1.0).abs() <= 1e-12, "R({n},{m})(1) = {v}");
        }
    }
}

#[test]
fn degree_cap_is_enforced() {
    assert!(radial_poly(MAX_DEGREE + 1, 0, 0.5).is_err());
    assert!(radial_poly(4, 5, 0.5).is_err());
}
