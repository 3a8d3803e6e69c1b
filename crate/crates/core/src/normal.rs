//! Standard normal helpers.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

fn standard() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

pub fn quantile(p: f64) -> f64 {
    standard().inverse_cdf(p)
}

pub fn cdf(x: f64) -> f64 {
    standard().cdf(x)
}

/// `P(|Z| > |z|)`, accurate in the far tail.
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn familiar_values() {
        assert!((quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-9);
        let p = two_sided_p(1.959_963_984_540_054);
        assert!((p - 0.05).abs() < 1e-9, "{p}");
        assert_eq!(two_sided_p(0.0), 1.0);
    }
}
