//! Chib candidate-formula evidence estimates.
//!
//! `log m(x) = log f(x|θ*) + log π(θ*) - log π(θ*|x)`, where the posterior
//! ordinate is the Rao-Blackwell average of the closed-form full
//! conditionals over the stored allocations. A chain that never switches
//! labels only sees one of the k! symmetric posterior modes, so its plain
//! average misses most of the mass at θ*. Averaging additionally over
//! relabelings σ(θ*) restores the symmetry.
//!
//! Every average is taken in the log domain. Terms are reduced in fixed
//! chunks of iterations and the per-chunk results combined in index order,
//! so the value does not depend on the number of worker threads.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conjugate::{FullConditional, Hyperparams, ParamPoint, SufficientStats};
use crate::error::{Error, Result};
use crate::gibbs::{select_map, Trace};
use crate::math::{factorial, ln_factorial, log_sum_exp};
use crate::model::{log_likelihood, log_prior, Dataset, MixtureParams, Permutation};

/// Iterations per reduction chunk.
const CHUNK: usize = 256;

/// Default largest k for which every relabeling is used.
pub const DEFAULT_FULL_PERMS_MAX_K: usize = 6;
/// Default subsample size beyond that.
pub const DEFAULT_PERM_SUBSAMPLE: usize = 100;
/// Default tolerance of the mixing verdict.
pub const DEFAULT_TOL_DIAG: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ChibRaw,
    ChibSymmetrized,
    PriorMc,
    ExactEnumeration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEstimate {
    pub k: usize,
    pub log_evidence: f64,
    pub variant: Variant,
    /// Gibbs iterations (Chib variants) or prior draws (prior MC).
    pub iterations: usize,
    pub n_perms: Option<usize>,
    /// The posterior ordinate `log π̂(θ*|x)` used as denominator.
    pub log_rb_density: Option<f64>,
    /// Symmetrized minus raw log evidence on the same trace.
    pub diagnostic_delta: Option<f64>,
    pub std_error: Option<f64>,
}

/// How many relabelings enter the symmetrized average.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermutationPlan {
    All,
    Subsample(usize),
}

impl PermutationPlan {
    /// All of S_k up to `full_max_k` components, otherwise a random
    /// subsample of `subsample` relabelings.
    pub fn default_for(k: usize, full_max_k: usize, subsample: usize) -> Self {
        if k <= full_max_k {
            PermutationPlan::All
        } else {
            PermutationPlan::Subsample(subsample)
        }
    }

    pub fn resolve<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<Permutation>> {
        match *self {
            PermutationPlan::All => {
                if factorial(k) > 40_320 {
                    return Err(Error::InvalidArgument(format!(
                        "refusing to enumerate all {k}! relabelings; use a subsample"
                    )));
                }
                Ok(Permutation::lexicographic(k))
            }
            PermutationPlan::Subsample(m) => {
                let m = (m as u64).min(factorial(k)) as usize;
                sample_permutations(k, m, rng)
            }
        }
    }
}

/// `m` distinct relabelings of k labels, identity included. The other m-1
/// are uniform without replacement over the non-identity permutations.
/// When `m = k!` the whole group is returned in lexicographic order.
pub fn sample_permutations<R: Rng + ?Sized>(
    k: usize,
    m: usize,
    rng: &mut R,
) -> Result<Vec<Permutation>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let group = factorial(k);
    if m == 0 || m as u64 > group {
        return Err(Error::InvalidArgument(format!(
            "cannot pick {m} distinct permutations out of {k}! = {group}"
        )));
    }
    if m as u64 == group {
        return Ok(Permutation::lexicographic(k));
    }
    let identity = Permutation::identity(k);
    let mut seen = HashSet::with_capacity(m);
    seen.insert(identity.clone());
    let mut out = vec![identity];
    let mut buf: Vec<usize> = (0..k).collect();
    while out.len() < m {
        buf.shuffle(rng);
        let p = Permutation::new(buf.clone())?;
        if seen.insert(p.clone()) {
            out.push(p);
        }
    }
    Ok(out)
}

fn validate_perms(k: usize, perms: &[Permutation]) -> Result<()> {
    if perms.is_empty() {
        return Err(Error::InvalidArgument("empty permutation set".into()));
    }
    let mut seen = HashSet::with_capacity(perms.len());
    for p in perms {
        if p.len() != k {
            return Err(Error::InvalidPermutation(format!(
                "permutation {p} does not act on {k} components"
            )));
        }
        if !seen.insert(p) {
            return Err(Error::InvalidArgument(format!(
                "permutation {p} appears twice"
            )));
        }
    }
    Ok(())
}

/// `ln [ (1 / (T·m)) Σ_t Σ_σ π(σ(θ*) | x, z_t) ]`.
fn log_ordinate(
    theta: &MixtureParams,
    stats_seq: &[SufficientStats],
    hyper: &Hyperparams,
    perms: &[Permutation],
) -> f64 {
    let k = theta.k();
    let point = ParamPoint::new(theta);
    let chunk_lse: Vec<f64> = stats_seq
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut terms = Vec::with_capacity(chunk.len() * perms.len());
            let mut table = vec![0.0; k * k];
            for stats in chunk {
                let cond = FullConditional::new(stats, hyper);
                for j in 0..k {
                    for c in 0..k {
                        table[j * k + c] = cond.entry(j, c, &point);
                    }
                }
                for sigma in perms {
                    // same accumulation order as FullConditional::log_density_permuted
                    let mut s = cond.constant();
                    for (j, &c) in sigma.as_slice().iter().enumerate() {
                        s += table[j * k + c];
                    }
                    terms.push(s);
                }
            }
            log_sum_exp(&terms)
        })
        .collect();
    log_sum_exp(&chunk_lse) - ((stats_seq.len() * perms.len()) as f64).ln()
}

fn check_trace(theta: &MixtureParams, trace: &Trace) -> Result<()> {
    if trace.k != theta.k() {
        return Err(Error::InvalidArgument(format!(
            "θ* has {} components but the trace has {}",
            theta.k(),
            trace.k
        )));
    }
    if trace.stats_seq.is_empty() {
        return Err(Error::InvalidArgument("empty trace".into()));
    }
    Ok(())
}

/// `ln π̂(θ*|x) = ln (1/T) Σ_t π(θ* | x, z_t)`.
pub fn rao_blackwell_log_density(
    theta_star: &MixtureParams,
    trace: &Trace,
    hyper: &Hyperparams,
) -> Result<f64> {
    check_trace(theta_star, trace)?;
    Ok(log_ordinate(
        theta_star,
        &trace.stats_seq,
        hyper,
        &[Permutation::identity(theta_star.k())],
    ))
}

/// The Rao-Blackwell ordinate averaged over the given relabelings of θ*.
/// With a proper subsample of S_k this is the subsample average.
pub fn symmetrized_log_density(
    theta_star: &MixtureParams,
    trace: &Trace,
    hyper: &Hyperparams,
    perms: &[Permutation],
) -> Result<f64> {
    check_trace(theta_star, trace)?;
    validate_perms(theta_star.k(), perms)?;
    Ok(log_ordinate(theta_star, &trace.stats_seq, hyper, perms))
}

/// Candidate's formula on the log scale.
pub fn chib_log_marginal(
    data: &Dataset,
    theta_star: &MixtureParams,
    log_denominator: f64,
    hyper: &Hyperparams,
) -> Result<f64> {
    if !log_denominator.is_finite() {
        return Err(Error::Numeric(format!(
            "posterior ordinate is not finite ({log_denominator})"
        )));
    }
    Ok(log_likelihood(data, theta_star) + log_prior(theta_star, hyper) - log_denominator)
}

/// Raw and symmetrized estimates evaluated at the MAP draw of one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ChibPair {
    pub theta_star: MixtureParams,
    pub raw: EvidenceEstimate,
    pub symmetrized: EvidenceEstimate,
}

pub fn chib_pair(
    data: &Dataset,
    trace: &Trace,
    hyper: &Hyperparams,
    perms: &[Permutation],
) -> Result<ChibPair> {
    let theta_star = select_map(trace);
    let raw_den = rao_blackwell_log_density(&theta_star, trace, hyper)?;
    let sym_den = symmetrized_log_density(&theta_star, trace, hyper, perms)?;
    let raw_ev = chib_log_marginal(data, &theta_star, raw_den, hyper)?;
    let sym_ev = chib_log_marginal(data, &theta_star, sym_den, hyper)?;
    let delta = sym_ev - raw_ev;
    let k = trace.k;
    Ok(ChibPair {
        theta_star,
        raw: EvidenceEstimate {
            k,
            log_evidence: raw_ev,
            variant: Variant::ChibRaw,
            iterations: trace.iterations,
            n_perms: None,
            log_rb_density: Some(raw_den),
            diagnostic_delta: Some(delta),
            std_error: None,
        },
        symmetrized: EvidenceEstimate {
            k,
            log_evidence: sym_ev,
            variant: Variant::ChibSymmetrized,
            iterations: trace.iterations,
            n_perms: Some(perms.len()),
            log_rb_density: Some(sym_den),
            diagnostic_delta: Some(delta),
            std_error: None,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// The chain stayed in one labeling: the gap is the full ln(#relabelings).
    SingleMode,
    /// Some label switching, but not symmetric.
    PartialMixing,
    /// Raw and symmetrized agree.
    FullSymmetry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingReport {
    pub delta: f64,
    pub log_k_factorial: f64,
    /// Gap expected from a chain trapped in one labeling: ln of the number
    /// of relabelings averaged over (ln k! when all are used).
    pub single_mode_delta: f64,
    pub tol: f64,
    pub verdict: Verdict,
}

pub fn mixing_diagnostic(
    raw: &EvidenceEstimate,
    symmetrized: &EvidenceEstimate,
    tol: f64,
) -> Result<MixingReport> {
    if raw.k != symmetrized.k {
        return Err(Error::InvalidArgument(format!(
            "raw estimate has k = {} but symmetrized has k = {}",
            raw.k, symmetrized.k
        )));
    }
    let delta = symmetrized.log_evidence - raw.log_evidence;
    let log_k_factorial = ln_factorial(raw.k);
    let single_mode_delta = match symmetrized.n_perms {
        Some(m) if (m as u64) < factorial(raw.k) => (m as f64).ln(),
        _ => log_k_factorial,
    };
    let verdict = if delta.abs() < tol {
        Verdict::FullSymmetry
    } else if (delta - single_mode_delta).abs() < tol {
        Verdict::SingleMode
    } else {
        Verdict::PartialMixing
    };
    Ok(MixingReport {
        delta,
        log_k_factorial,
        single_mode_delta,
        tol,
        verdict,
    })
}

/// `log B_{k,k'} = log m_k - log m_k'`.
pub fn bayes_factor(est_k: &EvidenceEstimate, est_k1: &EvidenceEstimate) -> f64 {
    est_k.log_evidence - est_k1.log_evidence
}
