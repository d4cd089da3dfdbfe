//! The univariate Gaussian mixture: data, parameters, likelihood and prior.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::conjugate::Hyperparams;
use crate::error::{Error, Result};
use crate::math::{ln_gamma, ln_inv_gamma, ln_normal, LN_SQRT_2PI};

/// Weights must sum to one within this absolute tolerance.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Observations x_1, ..., x_n. Non-empty, all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDataset("no observations".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "observation {} is not finite ({})",
                i + 1,
                values[i]
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.n() as f64
    }

    /// Unbiased sample variance; 0 for a single observation.
    pub fn variance(&self) -> f64 {
        if self.n() < 2 {
            return 0.0;
        }
        let m = self.mean();
        self.values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (self.n() - 1) as f64
    }
}

/// Parameters of a k-component mixture: weights on the simplex, component
/// means and (positive) variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct MixtureParams {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

#[derive(Deserialize)]
struct RawParams {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl TryFrom<RawParams> for MixtureParams {
    type Error = Error;

    /// Stored values are kept bit for bit; only validation applies.
    fn try_from(raw: RawParams) -> Result<Self> {
        Self::check(&raw.weights, &raw.means, &raw.variances)?;
        Ok(Self {
            weights: raw.weights,
            means: raw.means,
            variances: raw.variances,
        })
    }
}

impl MixtureParams {
    /// Validates the parameter triple. Weights whose sum is off by at most
    /// [`SIMPLEX_TOL`] are rescaled; anything further off is rejected.
    pub fn new(mut weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let total = Self::check(&weights, &means, &variances)?;
        if total != 1.0 {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    /// Returns the weight sum.
    fn check(weights: &[f64], means: &[f64], variances: &[f64]) -> Result<f64> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidParams("need at least one component".into()));
        }
        if means.len() != k || variances.len() != k {
            return Err(Error::InvalidParams(format!(
                "length mismatch: {} weights, {} means, {} variances",
                k,
                means.len(),
                variances.len()
            )));
        }
        for j in 0..k {
            let (w, m, v) = (weights[j], means[j], variances[j]);
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "weight {} = {w} is not positive",
                    j + 1
                )));
            }
            if !m.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "mean {} = {m} is not finite",
                    j + 1
                )));
            }
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "variance {} = {v} is not positive",
                    j + 1
                )));
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidParams(format!(
                "weights sum to {total}, off the simplex by more than {SIMPLEX_TOL}"
            )));
        }
        Ok(total)
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }
}

/// A bijection on component labels, stored 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let k = mapping.len();
        if k == 0 {
            return Err(Error::InvalidPermutation("empty mapping".into()));
        }
        let mut seen = vec![false; k];
        for &m in &mapping {
            if m >= k || seen[m] {
                return Err(Error::InvalidPermutation(format!(
                    "{mapping:?} is not a bijection on 0..{k}"
                )));
            }
            seen[m] = true;
        }
        Ok(Self { mapping })
    }

    /// Builds from 1-based labels, e.g. `(2, 3, 1)`.
    pub fn from_one_based(labels: &[usize]) -> Result<Self> {
        let mapping = labels
            .iter()
            .map(|&l| {
                l.checked_sub(1)
                    .ok_or_else(|| Error::InvalidPermutation("labels are 1-based".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(mapping)
    }

    pub fn identity(k: usize) -> Self {
        Self {
            mapping: (0..k).collect(),
        }
    }

    /// All k! permutations in lexicographic order, identity first.
    pub fn lexicographic(k: usize) -> Vec<Self> {
        let mut current: Vec<usize> = (0..k).collect();
        let mut out = vec![Self {
            mapping: current.clone(),
        }];
        while next_permutation(&mut current) {
            out.push(Self {
                mapping: current.clone(),
            });
        }
        out
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.mapping
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        Self { mapping: inv }
    }

    /// `(self ∘ other)(j) = self(other(j))`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            mapping: other.mapping.iter().map(|&j| self.mapping[j]).collect(),
        }
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, m) in self.mapping.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{}", m + 1)?;
        }
        write!(f, ")")
    }
}

fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Per-component terms are summed in sorted order so relabeling the
/// components cannot change the result, not even in the last bit.
fn sum_canonical(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

fn with_scratch<R>(k: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    let mut stack = [0.0; 16];
    if k <= stack.len() {
        f(&mut stack[..k])
    } else {
        f(&mut vec![0.0; k])
    }
}

/// `ln Σ_j w_j N(x | μ_j, σ²_j)`, max-shifted.
pub fn log_mixture_density(x: f64, params: &MixtureParams) -> f64 {
    with_scratch(params.k(), |offsets| {
        fill_offsets(params, offsets);
        with_scratch(params.k(), |terms| mixture_term(x, params, offsets, terms))
    })
}

/// `ln w_j - ln(σ²_j)/2`, shared by every point.
fn fill_offsets(params: &MixtureParams, offsets: &mut [f64]) {
    for (j, o) in offsets.iter_mut().enumerate() {
        *o = params.weights[j].ln() - 0.5 * params.variances[j].ln();
    }
}

fn mixture_term(x: f64, params: &MixtureParams, offsets: &[f64], terms: &mut [f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (j, t) in terms.iter_mut().enumerate() {
        let v = params.variances[j];
        let d = x - params.means[j];
        *t = offsets[j] - d * d / (2.0 * v);
        max = max.max(*t);
    }
    for t in terms.iter_mut() {
        *t = (*t - max).exp();
    }
    max + sum_canonical(terms).ln() - LN_SQRT_2PI
}

pub fn log_likelihood(data: &Dataset, params: &MixtureParams) -> f64 {
    with_scratch(params.k(), |offsets| {
        fill_offsets(params, offsets);
        with_scratch(params.k(), |terms| {
            data.values
                .iter()
                .map(|&x| mixture_term(x, params, offsets, terms))
                .sum()
        })
    })
}

/// Log density of the conjugate prior: Dirichlet(α, ..., α) on the weights
/// and, per component, σ² ~ InvGamma(a, b), μ | σ² ~ N(ξ, σ²/λ).
pub fn log_prior(params: &MixtureParams, hyper: &Hyperparams) -> f64 {
    let k = params.k();
    let alpha = hyper.alpha();
    let normalizer = ln_gamma(k as f64 * alpha) - k as f64 * ln_gamma(alpha);
    with_scratch(k, |terms| {
        for (j, t) in terms.iter_mut().enumerate() {
            let v = params.variances[j];
            *t = (alpha - 1.0) * params.weights[j].ln()
                + ln_inv_gamma(v, hyper.a(), hyper.b())
                + ln_normal(params.means[j], hyper.xi(), v / hyper.lambda());
        }
        normalizer + sum_canonical(terms)
    })
}

/// Relabels components: output component j is input component `sigma(j)`.
pub fn permute_params(params: &MixtureParams, sigma: &Permutation) -> Result<MixtureParams> {
    if sigma.len() != params.k() {
        return Err(Error::InvalidPermutation(format!(
            "permutation of length {} applied to {} components",
            sigma.len(),
            params.k()
        )));
    }
    let pick = |src: &[f64]| sigma.as_slice().iter().map(|&i| src[i]).collect::<Vec<_>>();
    Ok(MixtureParams {
        weights: pick(&params.weights),
        means: pick(&params.means),
        variances: pick(&params.variances),
    })
}
