//! Closed-form values for the catalog problems that have them.

use std::f64::consts::SQRT_2;

/// Number of series terms used for the disc.
pub const DISC_TERMS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleValue {
    pub value: f64,
    /// Bound on the error from truncating a series (zero for exact forms).
    pub truncation_bound: f64,
}

/// `sinh(√2 x) / sinh(√2)`, the solution of `v = ½v″`, `v(0) = 0`, `v(1) = 1`.
pub fn bm_1d(x: f64) -> f64 {
    (SQRT_2 * x).sinh() / SQRT_2.sinh()
}

/// `Σ_{k<K} (c/2)^{2k+1} r^{2k} / (k!(k+1)!)`, the series of `I₁(c r)/r`,
/// with a bound on the dropped tail.
fn i1_over_r(c: f64, r: f64) -> (f64, f64) {
    let half = 0.5 * c;
    let q = half * half * r * r;
    let mut term = half;
    let mut sum = 0.0;
    for k in 0..DISC_TERMS {
        sum += term;
        term *= q / ((k + 1) as f64 * (k + 2) as f64);
    }
    let ratio = q / ((DISC_TERMS + 1) as f64 * (DISC_TERMS + 2) as f64);
    (sum, term / (1.0 - ratio))
}

/// `x₁ I₁(√2 r) / (r I₁(√2))` on the unit disc: the solution of
/// `v = ½Δv` with `v = cos θ` on the circle.
pub fn disc_2d(x: &[f64]) -> OracleValue {
    let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
    let (num, dn) = i1_over_r(SQRT_2, r);
    let (den, dd) = i1_over_r(SQRT_2, 1.0);
    let ratio = num / den;
    OracleValue {
        value: x[0] * ratio,
        truncation_bound: x[0].abs() * (dn + ratio * dd) / den,
    }
}

/// The oracle for a catalog problem, if one is registered.
pub fn for_problem(name: &str) -> Option<fn(&[f64]) -> OracleValue> {
    match name {
        "bm-1d" => Some(|x| OracleValue { value: bm_1d(x[0]), truncation_bound: 0.0 }),
        "disc-2d" => Some(disc_2d),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bm_values() {
        assert_eq!(bm_1d(0.0), 0.0);
        assert!((bm_1d(1.0) - 1.0).abs() < 1e-15);
        assert!((bm_1d(0.5) - (SQRT_2 / 2.0).sinh() / SQRT_2.sinh()).abs() < 1e-16);
        assert!((bm_1d(0.5) - 0.39664).abs() < 1e-5);
    }

    #[test]
    fn disc_matches_boundary_data_and_pde() {
        for k in 0..16 {
            let th = k as f64 * 0.4;
            let v = disc_2d(&[th.cos(), th.sin()]);
            assert!((v.value - th.cos()).abs() < 1e-15);
            assert!(v.truncation_bound < 1e-15);
        }
        let h = 1e-3;
        let x = [0.3, -0.2];
        let f = |a: f64, b: f64| disc_2d(&[a, b]).value;
        let lap = (f(x[0] + h, x[1]) + f(x[0] - h, x[1]) + f(x[0], x[1] + h) + f(x[0], x[1] - h)
            - 4.0 * f(x[0], x[1]))
            / (h * h);
        assert!((f(x[0], x[1]) - 0.5 * lap).abs() < 1e-6);
        assert_eq!(disc_2d(&[0.0, 0.0]).value, 0.0);
    }

    #[test]
    fn registry() {
        assert!(for_problem("bm-1d").is_some());
        assert!(for_problem("disc-2d").is_some());
        assert!(for_problem("drift-control-1d").is_none());
    }
}
