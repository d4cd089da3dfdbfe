//! Log-domain numerics shared by the samplers and estimators.

/// ln(2π) / 2
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub use statrs::function::gamma::ln_gamma;

/// `ln Σ exp(xs)` with the maximum shifted out and a compensated sum.
///
/// Returns `-inf` for an empty slice or when every entry is `-inf`; a NaN
/// entry propagates.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return if xs.iter().any(|x| x.is_nan()) {
            f64::NAN
        } else {
            f64::NEG_INFINITY
        };
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let mut sum = 0.0_f64;
    let mut carry = 0.0_f64;
    for &x in xs {
        let term = (x - max).exp();
        let t = sum + term;
        // Neumaier
        if sum.abs() >= term.abs() {
            carry += (sum - t) + term;
        } else {
            carry += (term - t) + sum;
        }
        sum = t;
    }
    max + (sum + carry).ln()
}

/// `ln((1/n) Σ exp(xs))`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

/// `ln k!`, exact summation for the small k used here.
pub fn ln_factorial(k: usize) -> f64 {
    (2..=k).fold(0.0, |acc, i| acc + (i as f64).ln())
}

/// `k!` saturating at `u64::MAX`.
pub fn factorial(k: usize) -> u64 {
    (2..=k as u64).fold(1u64, |acc, i| acc.saturating_mul(i))
}

#[inline]
pub fn ln_normal(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -LN_SQRT_2PI - 0.5 * variance.ln() - d * d / (2.0 * variance)
}

/// Inverse-Gamma log density in the (shape, scale) parameterization,
/// density ∝ x^(-shape-1) exp(-scale/x).
#[inline]
pub fn ln_inv_gamma(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

/// Dirichlet log density on the simplex, relative to Lebesgue measure on
/// the first k-1 coordinates.
pub fn ln_dirichlet(weights: &[f64], concentration: &[f64]) -> f64 {
    debug_assert_eq!(weights.len(), concentration.len());
    let total: f64 = concentration.iter().sum();
    let mut out = ln_gamma(total);
    for (&w, &c) in weights.iter().zip(concentration) {
        out += (c - 1.0) * w.ln() - ln_gamma(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn log_sum_exp_edge_cases() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[-3.5]), -3.5);
        assert!(log_sum_exp(&[0.0, f64::NAN]).is_nan());
        // terms hundreds of log units apart must not underflow to -inf
        let v = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        for k in 1..20usize {
            let rel = (ln_gamma(k as f64 + 1.0) - ln_factorial(k)).abs() / ln_factorial(k).max(1.0);
            assert!(rel < 1e-13, "k={k} rel={rel}");
        }
        assert_eq!(factorial(5), 120);
        assert!(ln_factorial(1) == 0.0 && ln_factorial(1).is_sign_positive());
        assert_eq!(factorial(0), 1);
        assert_eq!(factorial(30), u64::MAX);
    }

    #[test]
    fn ln_gamma_half_integer() {
        let expected = 0.5 * std::f64::consts::PI.ln();
        assert!((ln_gamma(0.5) - expected).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn log_sum_exp_matches_direct(xs in prop::collection::vec(-30.0f64..30.0, 1..20)) {
            let direct = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
            prop_assert!((log_sum_exp(&xs) - direct).abs() < 1e-12);
        }

        #[test]
        fn log_sum_exp_shift_equivariant(
            xs in prop::collection::vec(-5.0f64..5.0, 1..20),
            shift in -800.0f64..800.0,
        ) {
            let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
            prop_assert!((log_sum_exp(&shifted) - log_sum_exp(&xs) - shift).abs() < 1e-9);
        }
    }
}
