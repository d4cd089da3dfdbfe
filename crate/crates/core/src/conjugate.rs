//! Conjugate Dirichlet / Normal-Inverse-Gamma machinery.
//!
//! Given an allocation of the observations to components, the full
//! conditional of the mixture parameters factorizes into a Dirichlet on the
//! weights and independent Normal-Inverse-Gamma blocks per component. Both
//! the density (with every normalizing constant) and a sampler are provided.
//!
//! The Inverse-Gamma is parameterized by (shape, scale):
//! `p(v) ∝ v^(-shape-1) exp(-scale / v)`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{ln_gamma, LN_SQRT_2PI};
use crate::model::{Dataset, MixtureParams};

/// Prior settings: weights ~ Dirichlet(α, ..., α); per component
/// σ² ~ InvGamma(a, b) and μ | σ² ~ N(ξ, σ²/λ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHyper")]
pub struct Hyperparams {
    alpha: f64,
    xi: f64,
    lambda: f64,
    a: f64,
    b: f64,
}

#[derive(Deserialize)]
struct RawHyper {
    alpha: f64,
    xi: f64,
    lambda: f64,
    a: f64,
    b: f64,
}

impl TryFrom<RawHyper> for Hyperparams {
    type Error = Error;

    fn try_from(r: RawHyper) -> Result<Self> {
        Hyperparams::new(r.alpha, r.xi, r.lambda, r.a, r.b)
    }
}

impl Hyperparams {
    pub fn new(alpha: f64, xi: f64, lambda: f64, a: f64, b: f64) -> Result<Self> {
        let positive = [("alpha", alpha), ("lambda", lambda), ("a", a), ("b", b)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidHyperparams(format!(
                    "{name} = {v} must be positive"
                )));
            }
        }
        if !xi.is_finite() {
            return Err(Error::InvalidHyperparams(format!(
                "xi = {xi} must be finite"
            )));
        }
        Ok(Self {
            alpha,
            xi,
            lambda,
            a,
            b,
        })
    }

    /// Data-located defaults: α = 1, ξ = sample mean, λ = 1, a = 2,
    /// b = sample variance (1 when the data have no spread).
    pub fn from_data(data: &Dataset) -> Self {
        let var = data.variance();
        let b = if var > 0.0 { var } else { 1.0 };
        Self::new(1.0, data.mean(), 1.0, 2.0, b).expect("defaults derived from finite data")
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

/// Component labels z_1..z_n, 0-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    labels: Vec<usize>,
}

impl Allocation {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(i) = labels.iter().position(|&l| l >= k) {
            return Err(Error::InvalidAllocation(format!(
                "label {} of observation {} is outside 0..{k}",
                labels[i],
                i + 1
            )));
        }
        Ok(Self { labels })
    }

    pub(crate) fn from_labels_unchecked(labels: Vec<usize>) -> Self {
        Self { labels }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub count: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl ComponentStats {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    /// Within-component sum of squares, clamped at zero against roundoff.
    pub fn scatter(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.sum_sq - self.sum * self.sum / self.count as f64).max(0.0)
        }
    }
}

/// Per-component (count, sum, sum of squares): everything the conjugate
/// updates need from an allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SufficientStats {
    components: Vec<ComponentStats>,
}

impl SufficientStats {
    pub fn empty(k: usize) -> Self {
        Self {
            components: vec![ComponentStats::default(); k],
        }
    }

    pub fn from_components(components: Vec<ComponentStats>) -> Self {
        Self { components }
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn n(&self) -> usize {
        self.components.iter().map(|c| c.count).sum()
    }

    pub fn components(&self) -> &[ComponentStats] {
        &self.components
    }

    pub(crate) fn components_mut(&mut self) -> &mut [ComponentStats] {
        &mut self.components
    }

    /// Relabels like [`crate::model::permute_params`]: component j of the
    /// output is component `sigma(j)` of the input.
    pub fn permuted(&self, sigma: &crate::model::Permutation) -> Result<Self> {
        if sigma.len() != self.k() {
            return Err(Error::InvalidPermutation(format!(
                "permutation of length {} applied to {} components",
                sigma.len(),
                self.k()
            )));
        }
        Ok(Self {
            components: sigma
                .as_slice()
                .iter()
                .map(|&i| self.components[i])
                .collect(),
        })
    }
}

pub fn suff_stats(data: &Dataset, z: &Allocation, k: usize) -> Result<SufficientStats> {
    if z.len() != data.n() {
        return Err(Error::InvalidAllocation(format!(
            "{} labels for {} observations",
            z.len(),
            data.n()
        )));
    }
    let mut stats = SufficientStats::empty(k);
    for (&x, &label) in data.values().iter().zip(z.labels()) {
        let c = stats
            .components
            .get_mut(label)
            .ok_or_else(|| Error::InvalidAllocation(format!("label {label} is outside 0..{k}")))?;
        c.push(x);
    }
    Ok(stats)
}

/// Normal-Inverse-Gamma parameters of one component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NigParams {
    pub xi: f64,
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub dirichlet: Vec<f64>,
    pub components: Vec<NigParams>,
}

pub fn component_posterior(c: &ComponentStats, hyper: &Hyperparams) -> NigParams {
    if c.count == 0 {
        return NigParams {
            xi: hyper.xi,
            lambda: hyper.lambda,
            a: hyper.a,
            b: hyper.b,
        };
    }
    let n = c.count as f64;
    let xbar = c.sum / n;
    let lambda = hyper.lambda + n;
    let d = xbar - hyper.xi;
    NigParams {
        xi: (hyper.lambda * hyper.xi + c.sum) / lambda,
        lambda,
        a: hyper.a + 0.5 * n,
        b: hyper.b + 0.5 * c.scatter() + hyper.lambda * n * d * d / (2.0 * lambda),
    }
}

pub fn posterior_hyperparams(stats: &SufficientStats, hyper: &Hyperparams) -> PosteriorParams {
    PosteriorParams {
        dirichlet: stats
            .components
            .iter()
            .map(|c| hyper.alpha + c.count as f64)
            .collect(),
        components: stats
            .components
            .iter()
            .map(|c| component_posterior(c, hyper))
            .collect(),
    }
}

/// Logs and reciprocals of a parameter point, computed once and reused
/// across every allocation and relabeling it is evaluated against.
#[derive(Debug, Clone)]
pub struct ParamPoint {
    ln_weight: Vec<f64>,
    ln_var: Vec<f64>,
    inv_var: Vec<f64>,
    mean: Vec<f64>,
}

impl ParamPoint {
    pub fn new(params: &MixtureParams) -> Self {
        Self {
            ln_weight: params.weights().iter().map(|w| w.ln()).collect(),
            ln_var: params.variances().iter().map(|v| v.ln()).collect(),
            inv_var: params.variances().iter().map(|v| v.recip()).collect(),
            mean: params.means().to_vec(),
        }
    }

    pub fn k(&self) -> usize {
        self.mean.len()
    }
}

/// The full conditional π(θ | x, z) for one allocation, reduced to a
/// constant plus a k×k table of (stats component, parameter component)
/// contributions. A relabeled evaluation just reads a different diagonal.
#[derive(Debug, Clone)]
pub struct FullConditional {
    constant: f64,
    weight_exp: Vec<f64>,
    var_exp: Vec<f64>,
    scale: Vec<f64>,
    xi: Vec<f64>,
    half_lambda: Vec<f64>,
}

impl FullConditional {
    pub fn new(stats: &SufficientStats, hyper: &Hyperparams) -> Self {
        let k = stats.k();
        let post = posterior_hyperparams(stats, hyper);
        let conc_total: f64 = post.dirichlet.iter().sum();
        let mut constant = ln_gamma(conc_total);
        for &c in &post.dirichlet {
            constant -= ln_gamma(c);
        }
        let mut out = Self {
            constant: 0.0,
            weight_exp: Vec::with_capacity(k),
            var_exp: Vec::with_capacity(k),
            scale: Vec::with_capacity(k),
            xi: Vec::with_capacity(k),
            half_lambda: Vec::with_capacity(k),
        };
        for (conc, nig) in post.dirichlet.iter().zip(&post.components) {
            constant += nig.a * nig.b.ln() - ln_gamma(nig.a) + 0.5 * nig.lambda.ln() - LN_SQRT_2PI;
            out.weight_exp.push(conc - 1.0);
            // InvGamma exponent (a+1) plus 1/2 from the N(ξ, σ²/λ) normalizer
            out.var_exp.push(nig.a + 1.5);
            out.scale.push(nig.b);
            out.xi.push(nig.xi);
            out.half_lambda.push(0.5 * nig.lambda);
        }
        out.constant = constant;
        out
    }

    pub fn k(&self) -> usize {
        self.xi.len()
    }

    /// Contribution of stats component `j` evaluated at parameter component `c`.
    #[inline]
    pub fn entry(&self, j: usize, c: usize, point: &ParamPoint) -> f64 {
        let d = point.mean[c] - self.xi[j];
        self.weight_exp[j] * point.ln_weight[c]
            - self.var_exp[j] * point.ln_var[c]
            - (self.scale[j] + self.half_lambda[j] * d * d) * point.inv_var[c]
    }

    #[inline]
    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// `ln π(σ(θ) | x, z)` where `mapping[j] = σ(j)`.
    #[inline]
    pub fn log_density_permuted(&self, point: &ParamPoint, mapping: &[usize]) -> f64 {
        let mut s = self.constant;
        for (j, &c) in mapping.iter().enumerate() {
            s += self.entry(j, c, point);
        }
        s
    }

    pub fn log_density(&self, point: &ParamPoint) -> f64 {
        let mut s = self.constant;
        for j in 0..self.k() {
            s += self.entry(j, j, point);
        }
        s
    }
}

/// `ln π(θ | x, z)` with all normalizing constants; depends on z only
/// through its sufficient statistics.
pub fn log_full_conditional_density(
    params: &MixtureParams,
    stats: &SufficientStats,
    hyper: &Hyperparams,
) -> f64 {
    FullConditional::new(stats, hyper).log_density(&ParamPoint::new(params))
}

/// Draws θ from the full conditional: weights ~ Dirichlet(α + n_·), then per
/// component σ² ~ InvGamma(a_j, b_j) and μ ~ N(ξ_j, σ²/λ_j).
pub fn sample_full_conditional<R: Rng + ?Sized>(
    stats: &SufficientStats,
    hyper: &Hyperparams,
    rng: &mut R,
) -> MixtureParams {
    sample_posterior(&posterior_hyperparams(stats, hyper), rng)
}

/// Draws from an already computed posterior; same stream use as
/// [`sample_full_conditional`].
pub fn sample_posterior<R: Rng + ?Sized>(post: &PosteriorParams, rng: &mut R) -> MixtureParams {
    let k = post.components.len();
    let ln_gammas: Vec<f64> = post
        .dirichlet
        .iter()
        .map(|&c| ln_gamma_draw(c, rng))
        .collect();
    let max = ln_gammas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = ln_gammas.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w = (*w / total).max(f64::MIN_POSITIVE);
    }

    let mut means = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for nig in &post.components {
        let g = Gamma::new(nig.a, 1.0)
            .expect("positive shape")
            .sample(rng)
            .max(f64::MIN_POSITIVE);
        let v = nig.b / g;
        let eps: f64 = StandardNormal.sample(rng);
        means.push(nig.xi + (v / nig.lambda).sqrt() * eps);
        variances.push(v);
    }
    MixtureParams::new(weights, means, variances)
        .expect("conjugate draw lies in the parameter space")
}

/// Log of a Gamma(shape, 1) draw. Small shapes go through
/// G(s) = G(s + 1) · U^(1/s) on the log scale so the draw never underflows.
fn ln_gamma_draw<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0)
            .expect("positive shape")
            .sample(rng)
            .ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0)
            .expect("positive shape")
            .sample(rng);
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        g.ln() + u.ln() / shape
    }
}
