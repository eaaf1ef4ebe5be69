use std::f64::consts::{FRAC_PI_4, PI};

/// Zero-order Bessel function of the first kind.
///
/// Power series below |x| = 12, Hankel asymptotic expansion above; both are
/// accurate to ~1e-12 absolute in their range.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x <= 12.0 {
        let q = -0.25 * x * x;
        let mut term: f64 = 1.0;
        let mut sum: f64 = 1.0;
        let mut k = 1.0;
        while term.abs() > 1e-17 * sum.abs().max(1e-300) || k < 3.0 {
            term *= q / (k * k);
            sum += term;
            k += 1.0;
            if k > 200.0 {
                break;
            }
        }
        sum
    } else {
        // P ~ sum (-1)^k a_{2k} / x^{2k}, Q ~ sum (-1)^k a_{2k+1} / x^{2k+1},
        // a_k = ((1)(9)(25)...((2k-1)^2)) / (k! 8^k).
        let mut a = 1.0;
        let mut p = 1.0;
        let mut q = 0.0;
        let mut prev = f64::INFINITY;
        for k in 1..40 {
            let kf = k as f64;
            a *= (2.0 * kf - 1.0).powi(2) / (kf * 8.0 * x);
            if a > prev {
                break;
            }
            prev = a;
            match k % 4 {
                1 => q += a,
                2 => p -= a,
                3 => q -= a,
                _ => p += a,
            }
        }
        let chi = x - FRAC_PI_4;
        (2.0 / (PI * x)).sqrt() * (p * chi.cos() + q * chi.sin())
    }
}
