//! Smooth cutoff used throughout the domain decompositions.
//!
//! `chi` is non-increasing, identically 1 on `s <= 1`, identically 0 on
//! `s >= 2`, and C-infinity in between (mollifier quotient).

/// sigma(t) = exp(-1/t) for t > 0, else 0.
fn sigma(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// chi(s) = sigma(2-s) / (sigma(2-s) + sigma(s-1)).
pub fn chi(s: f64) -> f64 {
    let a = sigma(2.0 - s);
    let b = sigma(s - 1.0);
    if a == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// chi_R(s) = chi(s / R).
pub fn chi_r(s: f64, r: f64) -> f64 {
    chi(s / r)
}

/// Derivative of chi by central differencing; chi' vanishes outside (1, 2).
pub fn chi_prime(s: f64) -> f64 {
    if !(1.0..=2.0).contains(&s) {
        return 0.0;
    }
    let h = 1e-6;
    (chi(s + h) - chi(s - h)) / (2.0 * h)
}
