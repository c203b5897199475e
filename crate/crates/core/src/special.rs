//! Small numerical helpers shared by the model builders.


pub(crate) fn ln_factorial(k: u64) -> f64 {
    libm::lgamma(k as f64 + 1.0)
}

/// Binomial pmf `C(m, k) p^k (1-p)^(m-k)` for `k = 0..=m`.
pub(crate) fn binomial_row(m: usize, p: f64) -> Vec<f64> {
    binomial_head(m, p, m)
}

/// The first `min(m, k_max) + 1` entries of [`binomial_row`].
pub(crate) fn binomial_head(m: usize, p: f64, k_max: usize) -> Vec<f64> {
    let len = m.min(k_max) + 1;
    let mut row = vec![0.0; len];
    if p <= 0.0 {
        row[0] = 1.0;
        return row;
    }
    if p >= 1.0 {
        if m < len {
            row[m] = 1.0;
        }
        return row;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let lm = ln_factorial(m as u64);
    for (k, v) in row.iter_mut().enumerate() {
        let lc = lm - ln_factorial(k as u64) - ln_factorial((m - k) as u64);
        *v = (lc + k as f64 * lp + (m - k) as f64 * lq).exp();
    }
    row
}

/// Standard normal cumulative distribution.
pub(crate) fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub(crate) fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_row_edges() {
        assert_eq!(binomial_row(3, 0.0), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(binomial_row(3, 1.0), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(binomial_head(5, 1.0, 2), vec![0.0; 3]);
        assert_eq!(binomial_head(4, 0.3, 2), binomial_row(4, 0.3)[..3].to_vec());
        let r = binomial_row(2, 0.5);
        for (a, b) in r.iter().zip([0.25, 0.5, 0.25]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn normal_tail() {
        let v = norm_cdf(-1.0);
        assert!((v - 0.158_655_253_931_457).abs() < 1e-12, "{v}");
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-15);
    }
}
