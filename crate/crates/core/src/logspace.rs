//! Log-domain helpers.

/// `log Σ exp(x_i)`, `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Normalizes log weights into probabilities in place. Returns the log
/// normalizer.
pub fn normalize_log(xs: &mut [f64]) -> f64 {
    let z = log_sum_exp(xs);
    if z == f64::NEG_INFINITY {
        return z;
    }
    for x in xs.iter_mut() {
        *x = (*x - z).exp();
    }
    z
}

/// `ln` that maps zero to `-inf` without a warning-worthy NaN path.
#[inline]
pub fn ln(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}
