//! Two-step data-augmentation Gibbs sampler.
//!
//! Each sweep draws the allocations z given θ, then θ given z in one block
//! from the conjugate full conditional. No ordering constraint is put on the
//! component labels. Kept iterations store the allocation only through its
//! sufficient statistics.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conjugate::{sample_full_conditional, Allocation, Hyperparams, SufficientStats};
use crate::error::{Error, Result};
use crate::model::{log_likelihood, log_prior, Dataset, MixtureParams};

pub const TRACE_FORMAT: &str = "mixevidence-trace";
pub const TRACE_VERSION: u32 = 1;

/// RNG stream for a chain. The stream id is the component count, so a
/// k-component run and the k row of a sweep see the same draws.
pub fn chain_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

/// Stored Gibbs output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub k: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub stats_seq: Vec<SufficientStats>,
    pub params_seq: Vec<MixtureParams>,
    /// `log f(x | θ) + log π(θ)` for every kept draw.
    pub log_post_seq: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TraceFile {
    format: String,
    version: u32,
    hyperparams: Option<Hyperparams>,
    trace: Trace,
}

impl Trace {
    fn validate(&self) -> Result<()> {
        let t = self.iterations;
        if t == 0 {
            return Err(Error::Format("trace has no iterations".into()));
        }
        if self.stats_seq.len() != t || self.params_seq.len() != t || self.log_post_seq.len() != t {
            return Err(Error::Format(format!(
                "trace sequences disagree with iterations = {t}"
            )));
        }
        let n = self.stats_seq[0].n();
        for (i, (s, p)) in self.stats_seq.iter().zip(&self.params_seq).enumerate() {
            if s.k() != self.k || p.k() != self.k {
                return Err(Error::Format(format!(
                    "iteration {i} has the wrong component count"
                )));
            }
            if s.n() != n {
                return Err(Error::Format(format!(
                    "iteration {i} allocates {} points, not {n}",
                    s.n()
                )));
            }
        }
        Ok(())
    }

    /// Writes the trace as versioned JSON. Floats use shortest round-trip
    /// formatting, so a reload is bit-exact.
    pub fn save(&self, path: &Path, hyper: Option<&Hyperparams>) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let doc = TraceFileRef {
            format: TRACE_FORMAT,
            version: TRACE_VERSION,
            hyperparams: hyper,
            trace: self,
        };
        serde_json::to_writer(&mut w, &doc).map_err(|e| Error::Format(e.to_string()))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Loads a trace and the hyperparameters it was recorded with, if any.
    pub fn load(path: &Path) -> Result<(Trace, Option<Hyperparams>)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let doc: TraceFile = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if doc.format != TRACE_FORMAT {
            return Err(Error::Format(format!(
                "unexpected format tag {:?}",
                doc.format
            )));
        }
        if doc.version != TRACE_VERSION {
            return Err(Error::Format(format!(
                "trace version {} is not supported (expected {TRACE_VERSION})",
                doc.version
            )));
        }
        doc.trace.validate()?;
        Ok((doc.trace, doc.hyperparams))
    }
}

#[derive(Serialize)]
struct TraceFileRef<'a> {
    format: &'a str,
    version: u32,
    hyperparams: Option<&'a Hyperparams>,
    trace: &'a Trace,
}

/// Draws z_i independently with P(z_i = j) ∝ w_j N(x_i | μ_j, σ²_j).
pub fn sample_allocations<R: Rng + ?Sized>(
    data: &Dataset,
    params: &MixtureParams,
    rng: &mut R,
) -> Allocation {
    let mut labels = vec![0; data.n()];
    let mut sampler = AllocationSampler::new(params.k());
    sampler.fill(data, params, rng, &mut labels);
    Allocation::from_labels_unchecked(labels)
}

/// Scratch buffers reused across sweeps.
struct AllocationSampler {
    offset: Vec<f64>,
    inv_two_var: Vec<f64>,
    logp: Vec<f64>,
}

impl AllocationSampler {
    fn new(k: usize) -> Self {
        Self {
            offset: vec![0.0; k],
            inv_two_var: vec![0.0; k],
            logp: vec![0.0; k],
        }
    }

    fn fill<R: Rng + ?Sized>(
        &mut self,
        data: &Dataset,
        params: &MixtureParams,
        rng: &mut R,
        labels: &mut [usize],
    ) {
        let k = params.k();
        for j in 0..k {
            let v = params.variances()[j];
            self.offset[j] = params.weights()[j].ln() - 0.5 * v.ln();
            self.inv_two_var[j] = 0.5 / v;
        }
        for (label, &x) in labels.iter_mut().zip(data.values()) {
            if k == 1 {
                *label = 0;
                continue;
            }
            let mut max = f64::NEG_INFINITY;
            for j in 0..k {
                let d = x - params.means()[j];
                let lp = self.offset[j] - d * d * self.inv_two_var[j];
                self.logp[j] = lp;
                max = max.max(lp);
            }
            let mut total = 0.0;
            for lp in &mut self.logp[..k] {
                *lp = (*lp - max).exp();
                total += *lp;
            }
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            // falls through to the last positive-probability component on roundoff
            let mut chosen = k - 1;
            for j in 0..k {
                acc += self.logp[j];
                if u < acc {
                    chosen = j;
                    break;
                }
            }
            while self.logp[chosen] == 0.0 {
                chosen -= 1;
            }
            *label = chosen;
        }
    }
}

fn stats_from_labels(data: &Dataset, labels: &[usize], k: usize) -> SufficientStats {
    let mut stats = SufficientStats::empty(k);
    let comps = stats.components_mut();
    for (&x, &l) in data.values().iter().zip(labels) {
        comps[l].push(x);
    }
    stats
}

/// Runs the sampler for `burn_in + iterations` sweeps from a uniformly
/// random initial allocation and keeps the last `iterations`.
pub fn run_chain(
    data: &Dataset,
    k: usize,
    hyper: &Hyperparams,
    iterations: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Trace> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if iterations == 0 {
        return Err(Error::InvalidArgument(
            "need at least one kept iteration".into(),
        ));
    }
    let mut rng = chain_rng(seed, k);
    let mut labels: Vec<usize> = (0..data.n()).map(|_| rng.random_range(0..k)).collect();
    let mut stats = stats_from_labels(data, &labels, k);
    let mut params = sample_full_conditional(&stats, hyper, &mut rng);
    let mut sampler = AllocationSampler::new(k);

    let mut trace = Trace {
        k,
        iterations,
        burn_in,
        seed,
        stats_seq: Vec::with_capacity(iterations),
        params_seq: Vec::with_capacity(iterations),
        log_post_seq: Vec::with_capacity(iterations),
    };
    for sweep in 0..burn_in + iterations {
        sampler.fill(data, &params, &mut rng, &mut labels);
        stats = stats_from_labels(data, &labels, k);
        params = sample_full_conditional(&stats, hyper, &mut rng);
        if sweep >= burn_in {
            trace
                .log_post_seq
                .push(log_likelihood(data, &params) + log_prior(&params, hyper));
            trace.stats_seq.push(stats.clone());
            trace.params_seq.push(params.clone());
        }
    }
    Ok(trace)
}

/// Index of the highest log-posterior draw, earliest on ties.
pub fn map_index(trace: &Trace) -> usize {
    let mut best = 0;
    for (i, &lp) in trace.log_post_seq.iter().enumerate() {
        if lp > trace.log_post_seq[best] {
            best = i;
        }
    }
    best
}

/// The MCMC approximation to the MAP: the stored draw with the largest
/// `log f(x|θ) + log π(θ)`.
pub fn select_map(trace: &Trace) -> MixtureParams {
    trace.params_seq[map_index(trace)].clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugate::{posterior_hyperparams, suff_stats};
    use crate::math::log_sum_exp;

    fn separated_data() -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut xs = Vec::new();
        for i in 0..40 {
            let center = if i < 20 { -10.0 } else { 10.0 };
            let eps: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            xs.push(center + eps);
        }
        Dataset::new(xs).unwrap()
    }

    #[test]
    fn single_component_allocations() {
        let d = Dataset::new(vec![1.0, -2.0, 3.0]).unwrap();
        let p = MixtureParams::new(vec![1.0], vec![0.0], vec![1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_allocations(&d, &p, &mut rng).labels(), &[0, 0, 0]);
    }

    #[test]
    fn zero_density_component_never_drawn() {
        // component 2 sits ~1e4 standard deviations away: exp underflows to 0
        let d = Dataset::new(vec![0.0, 0.1, -0.1]).unwrap();
        let p = MixtureParams::new(vec![0.5, 0.5], vec![0.0, 100.0], vec![1.0, 1e-4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert!(sample_allocations(&d, &p, &mut rng)
                .labels()
                .iter()
                .all(|&l| l == 0));
        }
    }

    #[test]
    fn allocation_frequencies_match_analytic() {
        let d = Dataset::new(vec![0.4]).unwrap();
        let p = MixtureParams::new(
            vec![0.2, 0.5, 0.3],
            vec![-1.0, 0.0, 1.5],
            vec![1.0, 2.0, 0.5],
        )
        .unwrap();
        let logs: Vec<f64> = (0..3)
            .map(|j| {
                p.weights()[j].ln() + crate::math::ln_normal(0.4, p.means()[j], p.variances()[j])
            })
            .collect();
        let lse = log_sum_exp(&logs);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_allocations(&d, &p, &mut rng).labels()[0]] += 1;
        }
        for j in 0..3 {
            let prob = (logs[j] - lse).exp();
            let se = (prob * (1.0 - prob) / n as f64).sqrt();
            let freq = counts[j] as f64 / n as f64;
            assert!(
                (freq - prob).abs() < 4.0 * se,
                "component {j}: {freq} vs {prob}"
            );
        }
    }

    #[test]
    fn trace_shape_and_log_posterior() {
        let d = separated_data();
        let h = Hyperparams::from_data(&d);
        let trace = run_chain(&d, 3, &h, 200, 20, 4).unwrap();
        assert_eq!(trace.stats_seq.len(), 200);
        assert_eq!(trace.params_seq.len(), 200);
        for t in 0..200 {
            assert_eq!(trace.stats_seq[t].n(), d.n());
            let p = &trace.params_seq[t];
            let recomputed = log_likelihood(&d, p) + log_prior(p, &h);
            assert!((recomputed - trace.log_post_seq[t]).abs() < 1e-10);
        }
    }

    #[test]
    fn determinism_contract() {
        let d = separated_data();
        let h = Hyperparams::from_data(&d);
        let a = run_chain(&d, 2, &h, 100, 10, 9).unwrap();
        let b = run_chain(&d, 2, &h, 100, 10, 9).unwrap();
        let c = run_chain(&d, 2, &h, 100, 10, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn single_component_chain_draws_from_exact_posterior() {
        let d = Dataset::new(vec![1.2, 0.7, 2.9, 1.8, 1.1]).unwrap();
        let h = Hyperparams::from_data(&d);
        let trace = run_chain(&d, 1, &h, 20_000, 10, 2).unwrap();
        let full = suff_stats(&d, &Allocation::new(vec![0; 5], 1).unwrap(), 1).unwrap();
        assert!(trace.stats_seq.iter().all(|s| *s == full));
        let post = posterior_hyperparams(&full, &h).components[0];
        let n = trace.iterations as f64;
        let mus: Vec<f64> = trace.params_seq.iter().map(|p| p.means()[0]).collect();
        let m = mus.iter().sum::<f64>() / n;
        let sd = (mus.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((m - post.xi).abs() < 4.0 * sd / n.sqrt());
    }

    #[test]
    fn well_separated_chain_stays_in_one_mode() {
        let d = separated_data();
        let h = Hyperparams::from_data(&d);
        let trace = run_chain(&d, 2, &h, 2000, 200, 3).unwrap();
        // which component holds the left cluster is fixed for the whole run
        let left_label = usize::from(trace.stats_seq[0].components()[0].sum > 0.0);
        let mut exact_partition = 0;
        for s in &trace.stats_seq {
            let left = s.components()[left_label];
            let right = s.components()[1 - left_label];
            assert!(left.sum / (left.count as f64) < -5.0);
            assert!(right.sum / (right.count as f64) > 5.0);
            exact_partition += usize::from(left.count == 20 && right.count == 20);
        }
        // the generating partition itself is the typical state
        assert!(exact_partition > trace.iterations / 2, "{exact_partition}");
    }

    #[test]
    fn select_map_rules() {
        let d = Dataset::new(vec![0.0, 1.0]).unwrap();
        let h = Hyperparams::from_data(&d);
        let mut trace = run_chain(&d, 2, &h, 1, 0, 1).unwrap();
        assert_eq!(select_map(&trace), trace.params_seq[0]);

        trace = run_chain(&d, 2, &h, 5, 0, 1).unwrap();
        trace.log_post_seq = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(map_index(&trace), 4);
        trace.log_post_seq = vec![1.0, 7.0, 3.0, 7.0, 5.0];
        assert_eq!(map_index(&trace), 1);
    }

    #[test]
    fn map_beats_every_draw_on_reevaluation() {
        let d = separated_data();
        let h = Hyperparams::from_data(&d);
        let trace = run_chain(&d, 2, &h, 300, 30, 8).unwrap();
        let star = select_map(&trace);
        let best = log_likelihood(&d, &star) + log_prior(&star, &h);
        for p in &trace.params_seq {
            assert!(best >= log_likelihood(&d, p) + log_prior(p, &h));
        }
    }

    #[test]
    fn rejects_degenerate_runs() {
        let d = Dataset::new(vec![0.0, 1.0]).unwrap();
        let h = Hyperparams::from_data(&d);
        assert!(run_chain(&d, 0, &h, 10, 0, 1).is_err());
        assert!(run_chain(&d, 2, &h, 0, 0, 1).is_err());
    }
}
