//! Ground-truth evidence for validating the Chib estimates.
//!
//! * [`prior_mc_log_marginal`] averages the likelihood over draws from the
//!   prior. Unbiased on the natural scale but very noisy when the posterior
//!   is concentrated; fine for small n.
//! * [`exact_log_marginal`] sums `p(z) p(x|z)` over all k^n allocations,
//!   using the closed-form Dirichlet-multinomial and Normal-Inverse-Gamma
//!   marginals. Exact, and only feasible for tiny datasets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chib::{EvidenceEstimate, Variant};
use crate::conjugate::{
    component_posterior, posterior_hyperparams, sample_posterior, ComponentStats, Hyperparams,
    SufficientStats,
};
use crate::error::{Error, Result};
use crate::math::{ln_gamma, log_sum_exp, LN_SQRT_2PI};
use crate::model::{log_likelihood, Dataset};

/// Default cap on the number of enumerated allocations.
pub const DEFAULT_ENUMERATION_BUDGET: u64 = 1_000_000;

/// Prior draws per RNG stream / reduction chunk.
const MC_CHUNK: usize = 1 << 14;
/// Allocations per reduction chunk.
const ENUM_CHUNK: u64 = 1 << 12;
/// Stream ids for prior MC start here, clear of the Gibbs chain streams.
const MC_STREAM_BASE: u64 = 1 << 40;

/// `log (1/N) Σ_i f(x | θ_i)`, θ_i ~ π. The standard error is the delta
/// method on the log scale, `sd(w) / (sqrt(N) mean(w))` with w the
/// likelihoods; it is absent for N = 1.
pub fn prior_mc_log_marginal(
    data: &Dataset,
    k: usize,
    hyper: &Hyperparams,
    draws: usize,
    seed: u64,
) -> Result<EvidenceEstimate> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if draws == 0 {
        return Err(Error::InvalidArgument(
            "need at least one prior draw".into(),
        ));
    }
    let prior = posterior_hyperparams(&SufficientStats::empty(k), hyper);
    let n_chunks = draws.div_ceil(MC_CHUNK);
    let partial: Vec<(f64, f64)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(MC_STREAM_BASE + c as u64);
            let len = MC_CHUNK.min(draws - c * MC_CHUNK);
            let ll: Vec<f64> = (0..len)
                .map(|_| log_likelihood(data, &sample_posterior(&prior, &mut rng)))
                .collect();
            let ll2: Vec<f64> = ll.iter().map(|l| 2.0 * l).collect();
            (log_sum_exp(&ll), log_sum_exp(&ll2))
        })
        .collect();
    let (first, second): (Vec<f64>, Vec<f64>) = partial.into_iter().unzip();
    let ln_n = (draws as f64).ln();
    let log_mean = log_sum_exp(&first) - ln_n;
    if !log_mean.is_finite() {
        return Err(Error::Numeric(format!(
            "prior Monte Carlo average underflowed ({log_mean})"
        )));
    }
    let std_error = (draws > 1).then(|| {
        let log_second = log_sum_exp(&second) - ln_n;
        // Var(w) / E[w]^2 with the unbiased correction
        let rel_var = ((log_second - 2.0 * log_mean).exp() - 1.0).max(0.0) * draws as f64
            / (draws - 1) as f64;
        (rel_var / draws as f64).sqrt()
    });
    Ok(EvidenceEstimate {
        k,
        log_evidence: log_mean,
        variant: Variant::PriorMc,
        iterations: draws,
        n_perms: None,
        log_rb_density: None,
        diagnostic_delta: None,
        std_error,
    })
}

/// `ln p(x_j)` for the points of one component under the Normal-Inverse-Gamma
/// prior; 0 for an empty component.
pub fn log_component_marginal(stats: &ComponentStats, hyper: &Hyperparams) -> f64 {
    if stats.count == 0 {
        return 0.0;
    }
    let post = component_posterior(stats, hyper);
    -(stats.count as f64) * LN_SQRT_2PI
        + 0.5 * (hyper.lambda().ln() - post.lambda.ln())
        + ln_gamma(post.a)
        - ln_gamma(hyper.a())
        + hyper.a() * hyper.b().ln()
        - post.a * post.b.ln()
}

/// Dirichlet-multinomial mass of one allocation with the given counts
/// (not the multinomial coefficient: a specific labeled sequence).
pub fn log_allocation_prior(counts: &[usize], alpha: f64) -> f64 {
    let k = counts.len() as f64;
    let n: usize = counts.iter().sum();
    let mut out = ln_gamma(k * alpha) - ln_gamma(k * alpha + n as f64);
    for &c in counts {
        out += ln_gamma(alpha + c as f64) - ln_gamma(alpha);
    }
    out
}

/// Number of allocations, or `None` if it overflows.
fn allocation_count(k: usize, n: usize) -> Option<u64> {
    u32::try_from(n)
        .ok()
        .and_then(|n| (k as u64).checked_pow(n))
}

/// Exact `ln m_k(x)` by enumerating every allocation. Refuses when k^n
/// exceeds `budget`.
pub fn exact_log_marginal(
    data: &Dataset,
    k: usize,
    hyper: &Hyperparams,
    budget: u64,
) -> Result<EvidenceEstimate> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let n = data.n();
    let total = match allocation_count(k, n) {
        Some(t) if t <= budget => t,
        _ => return Err(Error::BudgetExceeded { k, n, budget }),
    };
    let xs = data.values();
    let n_chunks = total.div_ceil(ENUM_CHUNK);
    let chunk_lse: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * ENUM_CHUNK;
            let end = (start + ENUM_CHUNK).min(total);
            let mut counts = vec![0usize; k];
            let mut stats = vec![ComponentStats::default(); k];
            let mut terms = Vec::with_capacity((end - start) as usize);
            for index in start..end {
                counts.iter_mut().for_each(|c| *c = 0);
                stats
                    .iter_mut()
                    .for_each(|s| *s = ComponentStats::default());
                // base-k digits of the index, first observation least significant
                let mut rest = index;
                for &x in xs {
                    let label = (rest % k as u64) as usize;
                    rest /= k as u64;
                    counts[label] += 1;
                    stats[label].push(x);
                }
                let mut term = log_allocation_prior(&counts, hyper.alpha());
                for s in &stats {
                    term += log_component_marginal(s, hyper);
                }
                terms.push(term);
            }
            log_sum_exp(&terms)
        })
        .collect();
    Ok(EvidenceEstimate {
        k,
        log_evidence: log_sum_exp(&chunk_lse),
        variant: Variant::ExactEnumeration,
        iterations: total as usize,
        n_perms: None,
        log_rb_density: None,
        diagnostic_delta: None,
        std_error: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugate::sample_full_conditional;
    use crate::math::{ln_inv_gamma, ln_normal};

    fn data5() -> Dataset {
        Dataset::new(vec![-2.1, -1.6, -2.4, 2.0, 2.7]).unwrap()
    }

    /// Closed-form single-observation predictive, written independently
    /// from the update formulas: Student-t with 2a degrees of freedom.
    fn student_t_predictive(x: f64, h: &Hyperparams) -> f64 {
        let nu = 2.0 * h.a();
        let scale2 = h.b() * (1.0 + 1.0 / h.lambda()) / h.a();
        let z2 = (x - h.xi()).powi(2) / scale2;
        ln_gamma((nu + 1.0) / 2.0)
            - ln_gamma(nu / 2.0)
            - 0.5 * (nu * std::f64::consts::PI * scale2).ln()
            - (nu + 1.0) / 2.0 * (1.0 + z2 / nu).ln()
    }

    #[test]
    fn single_observation_is_student_t() {
        let h = Hyperparams::new(1.0, 0.3, 1.7, 2.5, 1.2).unwrap();
        let d = Dataset::new(vec![1.1]).unwrap();
        let exact = exact_log_marginal(&d, 1, &h, DEFAULT_ENUMERATION_BUDGET).unwrap();
        assert!((exact.log_evidence - student_t_predictive(1.1, &h)).abs() < 1e-12);
        assert_eq!(exact.iterations, 1);
    }

    #[test]
    fn single_component_is_one_allocation() {
        // k = 1 marginal from Bayes' rule at an arbitrary θ: prior × likelihood / posterior
        let d = data5();
        let h = Hyperparams::from_data(&d);
        let exact = exact_log_marginal(&d, 1, &h, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let mut all = ComponentStats::default();
        d.values().iter().for_each(|&x| all.push(x));
        let post = component_posterior(&all, &h);
        let (mu, v) = (0.1, 3.0);
        let like: f64 = d.values().iter().map(|&x| ln_normal(x, mu, v)).sum();
        let prior = ln_inv_gamma(v, h.a(), h.b()) + ln_normal(mu, h.xi(), v / h.lambda());
        let posterior = ln_inv_gamma(v, post.a, post.b) + ln_normal(mu, post.xi, v / post.lambda);
        assert!((exact.log_evidence - (like + prior - posterior)).abs() < 1e-10);
    }

    #[test]
    fn matches_extended_precision_enumeration() {
        // tests/oracles/gen_oracles.py: exact_n5_k{1,2,3}
        let d = data5();
        let h = Hyperparams::from_data(&d);
        for (k, expected) in [
            (1, -12.420_936_349_614_188),
            (2, -12.061_853_859_791_804),
            (3, -11.918_304_248_673_403),
        ] {
            let got = exact_log_marginal(&d, k, &h, DEFAULT_ENUMERATION_BUDGET)
                .unwrap()
                .log_evidence;
            assert!((got - expected).abs() < 1e-11, "k={k}: {got}");
        }
    }

    #[test]
    fn allocation_masses_sum_to_one() {
        for (k, n, alpha) in [(2, 10, 1.0), (3, 7, 0.5), (4, 6, 2.5), (1, 5, 1.0)] {
            let total = (k as u64).pow(n as u32);
            let terms: Vec<f64> = (0..total)
                .map(|mut idx| {
                    let mut counts = vec![0; k];
                    for _ in 0..n {
                        counts[(idx % k as u64) as usize] += 1;
                        idx /= k as u64;
                    }
                    log_allocation_prior(&counts, alpha)
                })
                .collect();
            assert!(log_sum_exp(&terms).abs() < 1e-12, "k={k} n={n}");
        }
    }

    #[test]
    fn data_order_does_not_matter() {
        let d = data5();
        let h = Hyperparams::from_data(&d);
        let mut rev = d.values().to_vec();
        rev.reverse();
        let a = exact_log_marginal(&d, 3, &h, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let b = exact_log_marginal(
            &Dataset::new(rev).unwrap(),
            3,
            &h,
            DEFAULT_ENUMERATION_BUDGET,
        )
        .unwrap();
        assert!((a.log_evidence - b.log_evidence).abs() < 1e-12);
    }

    #[test]
    fn budget_guard() {
        let d = Dataset::new((0..30).map(|i| i as f64).collect()).unwrap();
        let h = Hyperparams::from_data(&d);
        let err = exact_log_marginal(&d, 4, &h, DEFAULT_ENUMERATION_BUDGET).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { k: 4, n: 30, .. }));
        assert!(err.to_string().contains("4^30"));
        let big = Dataset::new(vec![0.0; 200]).unwrap();
        assert!(exact_log_marginal(&big, 3, &h, u64::MAX).is_err());
    }

    #[test]
    fn one_prior_draw() {
        let d = data5();
        let h = Hyperparams::from_data(&d);
        let est = prior_mc_log_marginal(&d, 2, &h, 1, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        rng.set_stream(MC_STREAM_BASE);
        let theta = sample_full_conditional(&SufficientStats::empty(2), &h, &mut rng);
        assert!((est.log_evidence - log_likelihood(&d, &theta)).abs() < 1e-12);
        assert!(est.std_error.is_none());
    }

    #[test]
    fn prior_mc_single_observation() {
        let h = Hyperparams::new(1.0, 0.0, 1.0, 2.0, 1.0).unwrap();
        let d = Dataset::new(vec![0.8]).unwrap();
        let est = prior_mc_log_marginal(&d, 1, &h, 200_000, 6).unwrap();
        let se = est.std_error.unwrap();
        assert!((est.log_evidence - student_t_predictive(0.8, &h)).abs() < 4.0 * se);
    }

    #[test]
    fn prior_mc_is_deterministic() {
        let d = data5();
        let h = Hyperparams::from_data(&d);
        let a = prior_mc_log_marginal(&d, 2, &h, 50_000, 2).unwrap();
        let b = prior_mc_log_marginal(&d, 2, &h, 50_000, 2).unwrap();
        assert_eq!(a, b);
    }
}
