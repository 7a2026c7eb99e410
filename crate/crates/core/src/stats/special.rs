//! Log-gamma, digamma and trigamma for positive arguments.

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Trigamma ψ′(x) for x > 0.
///
/// Shifts the argument up to 12 with ψ′(x) = ψ′(x + 1) + 1/x², then sums the
/// asymptotic series in 1/x through the x⁻¹¹ term.
pub fn trigamma(x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    if x.is_infinite() {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < 12.0 {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let r = 1.0 / z;
    let r2 = r * r;
    // 1/z + 1/(2z²) + Σ B_2k / z^(2k+1)
    let series = r
        + 0.5 * r2
        + r * r2
            * (1.0 / 6.0
                - r2 * (1.0 / 30.0 - r2 * (1.0 / 42.0 - r2 * (1.0 / 30.0 - r2 * (5.0 / 66.0)))));
    acc + series
}
