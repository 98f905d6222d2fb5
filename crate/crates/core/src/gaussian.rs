//! Standard normal density and upper tail.

use libm::erfc;
use std::f64::consts::{PI, SQRT_2};

/// Standard normal pdf.
pub fn pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

/// Upper tail Q(mu) = P(N(0,1) > mu), via the complementary error function.
pub fn upper_tail(mu: f64) -> f64 {
    0.5 * erfc(mu / SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_reference_values() {
        assert_eq!(upper_tail(0.0), 0.5);
        // Q(1.96) = 0.024997895148220435
        let rel = upper_tail(1.96) / 0.024_997_895_148_220_436 - 1.0;
        assert!(rel.abs() < 1e-13, "{rel:e}");
        assert!((upper_tail(2.0) / 0.022_750_131_948_179_207 - 1.0).abs() < 1e-13);
        assert!((upper_tail(-1.0) - (1.0 - upper_tail(1.0))).abs() < 1e-15);
    }

    #[test]
    fn pdf_peak() {
        assert!((pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-16);
    }
}
