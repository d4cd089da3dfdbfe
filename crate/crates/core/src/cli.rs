//! Command-line front end: `run`, `sweep` and `oracle`.
//!
//! Settings resolve as flags > `--config` TOML file > built-in defaults.
//! Structured output is a single JSON document whose floats are printed
//! with shortest round-trip precision; the table format rounds to two
//! decimals. Nothing time- or thread-dependent goes into either.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chib::{
    chib_pair, mixing_diagnostic, PermutationPlan, Verdict, DEFAULT_FULL_PERMS_MAX_K,
    DEFAULT_PERM_SUBSAMPLE, DEFAULT_TOL_DIAG,
};
use crate::conjugate::Hyperparams;
use crate::data::{
    galaxy_fixture, load_dataset, GALAXY_REFERENCE_LOG_EVIDENCE, GALAXY_SOURCE_NAME,
};
use crate::error::{Error, Result};
use crate::gibbs::{run_chain, Trace};
use crate::math::factorial;
use crate::model::{log_likelihood, log_prior, Dataset, MixtureParams};
use crate::oracle::{exact_log_marginal, prior_mc_log_marginal, DEFAULT_ENUMERATION_BUDGET};

pub const RUN_SCHEMA: &str = "mixevidence.run/1";
pub const SWEEP_SCHEMA: &str = "mixevidence.sweep/1";
pub const ORACLE_SCHEMA: &str = "mixevidence.oracle/1";

const DEFAULT_ITERS: usize = 100_000;
const DEFAULT_SEED: u64 = 1;
const DEFAULT_DRAWS: usize = 1_000_000;

#[derive(Debug, Parser)]
#[command(
    name = "mixevidence",
    version,
    about = "Evidence of Gaussian mixtures by label-switching corrected Chib estimates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gibbs chain, MAP point, raw and symmetrized Chib estimates for one k.
    Run(RunArgs),
    /// Symmetrized evidence over a range of k, with log Bayes factors.
    Sweep(SweepArgs),
    /// Reference evidence by prior Monte Carlo or exact enumeration.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false)]
pub struct DataArgs {
    /// One observation per line; `#` comments allowed.
    #[arg(long, value_name = "PATH", group = "source")]
    pub data: Option<PathBuf>,
    /// Use the bundled 82-point galaxy velocities (1000 km/s).
    #[arg(long, group = "source")]
    pub galaxy: bool,
}

#[derive(Debug, Args, Default)]
pub struct HyperArgs {
    /// Dirichlet concentration [default: 1]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Prior location of the means [default: sample mean]
    #[arg(long)]
    pub xi: Option<f64>,
    /// Prior precision scale of the means [default: 1]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Inverse-Gamma shape [default: 2]
    #[arg(long)]
    pub a: Option<f64>,
    /// Inverse-Gamma scale [default: sample variance]
    #[arg(long)]
    pub b: Option<f64>,
}

impl HyperArgs {
    fn any(&self) -> bool {
        self.alpha.is_some()
            || self.xi.is_some()
            || self.lambda.is_some()
            || self.a.is_some()
            || self.b.is_some()
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// RNG seed [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// TOML file with default settings; flags take precedence.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ChainArgs {
    /// Kept Gibbs iterations [default: 100000]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Discarded iterations [default: iters / 10]
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// `all`, or the number of relabelings to average over
    /// [default: all up to k = 6, else 100]
    #[arg(long)]
    pub perms: Option<PermsArg>,
    /// Largest k for which the default uses every relabeling.
    #[arg(long)]
    pub full_perms_max_k: Option<usize>,
    /// Tolerance of the mixing verdict [default: 0.01]
    #[arg(long)]
    pub tol_diag: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: DataArgs,
    /// Number of components
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Save the Gibbs trace for later re-estimation.
    #[arg(long, value_name = "PATH")]
    pub save_trace: Option<PathBuf>,
    /// Estimate from a saved trace instead of sampling.
    #[arg(long, value_name = "PATH", conflicts_with = "save_trace")]
    pub load_trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: DataArgs,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub k_min: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k_max: u64,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub source: DataArgs,
    /// Number of components
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[arg(long, value_enum)]
    pub mode: OracleMode,
    /// Prior draws for prior-mc [default: 1000000]
    #[arg(long)]
    pub draws: Option<usize>,
    /// Largest number of allocations exact mode will enumerate.
    #[arg(long)]
    pub budget: Option<u64>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    PriorMc,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermsArg {
    All,
    Count(usize),
}

impl FromStr for PermsArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(PermsArg::All);
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("expected `all` or a positive integer, got {s:?}")),
            Ok(m) => Ok(PermsArg::Count(m)),
        }
    }
}

/// Optional settings read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub iters: Option<usize>,
    pub burn_in: Option<usize>,
    pub seed: Option<u64>,
    pub perms: Option<ConfigPerms>,
    pub full_perms_max_k: Option<usize>,
    pub tol_diag: Option<f64>,
    pub draws: Option<usize>,
    pub budget: Option<u64>,
    #[serde(default)]
    pub hyperparams: ConfigHyper,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum ConfigPerms {
    Count(usize),
    Text(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigHyper {
    pub alpha: Option<f64>,
    pub xi: Option<f64>,
    pub lambda: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    fn perms(&self) -> Result<Option<PermsArg>> {
        match &self.perms {
            None => Ok(None),
            Some(ConfigPerms::Count(m)) => format!("{m}")
                .parse()
                .map(Some)
                .map_err(Error::InvalidArgument),
            Some(ConfigPerms::Text(s)) => s.parse().map(Some).map_err(Error::InvalidArgument),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    path.map(ConfigFile::load)
        .transpose()
        .map(Option::unwrap_or_default)
}

fn load_source(args: &DataArgs) -> Result<(Dataset, String)> {
    match (&args.data, args.galaxy) {
        (_, true) => Ok((galaxy_fixture(), GALAXY_SOURCE_NAME.to_string())),
        (Some(path), false) => Ok((load_dataset(path)?, path.display().to_string())),
        (None, false) => Err(Error::InvalidArgument(
            "either --data or --galaxy is required".into(),
        )),
    }
}

fn resolve_hyper(data: &Dataset, flags: &HyperArgs, config: &ConfigHyper) -> Result<Hyperparams> {
    let d = Hyperparams::from_data(data);
    Hyperparams::new(
        flags.alpha.or(config.alpha).unwrap_or(d.alpha()),
        flags.xi.or(config.xi).unwrap_or(d.xi()),
        flags.lambda.or(config.lambda).unwrap_or(d.lambda()),
        flags.a.or(config.a).unwrap_or(d.a()),
        flags.b.or(config.b).unwrap_or(d.b()),
    )
}

#[derive(Debug, Clone)]
struct ChainSettings {
    iters: usize,
    burn_in: usize,
    seed: u64,
    perms: Option<PermsArg>,
    full_perms_max_k: usize,
    tol_diag: f64,
}

impl ChainSettings {
    fn resolve(flags: &ChainArgs, seed: Option<u64>, config: &ConfigFile) -> Result<Self> {
        let iters = flags.iters.or(config.iters).unwrap_or(DEFAULT_ITERS);
        if iters == 0 {
            return Err(Error::InvalidArgument("--iters must be at least 1".into()));
        }
        let tol_diag = flags
            .tol_diag
            .or(config.tol_diag)
            .unwrap_or(DEFAULT_TOL_DIAG);
        if !(tol_diag.is_finite() && tol_diag > 0.0) {
            return Err(Error::InvalidArgument("--tol-diag must be positive".into()));
        }
        Ok(Self {
            iters,
            burn_in: flags.burn_in.or(config.burn_in).unwrap_or(iters / 10),
            seed: seed.or(config.seed).unwrap_or(DEFAULT_SEED),
            perms: flags.perms.or(config.perms()?),
            full_perms_max_k: flags
                .full_perms_max_k
                .or(config.full_perms_max_k)
                .unwrap_or(DEFAULT_FULL_PERMS_MAX_K),
            tol_diag,
        })
    }

    fn plan(&self, k: usize) -> PermutationPlan {
        match self.perms {
            Some(PermsArg::All) => PermutationPlan::All,
            Some(PermsArg::Count(m)) => PermutationPlan::Subsample(m),
            None => PermutationPlan::default_for(k, self.full_perms_max_k, DEFAULT_PERM_SUBSAMPLE),
        }
    }
}

/// RNG for drawing relabeling subsamples, independent of the chain stream.
pub fn permutation_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 32) + k as u64);
    rng
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetInfo {
    pub source: String,
    pub n: usize,
}

/// One k: everything the table shows, plus θ*.
#[derive(Debug, Clone, Serialize)]
pub struct EvidenceRow {
    pub k: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub perm_mode: &'static str,
    pub n_perms: usize,
    pub log_evidence_raw: f64,
    pub log_evidence_symmetrized: f64,
    pub log_ordinate_raw: f64,
    pub log_ordinate_symmetrized: f64,
    pub delta: f64,
    pub log_k_factorial: f64,
    pub single_mode_delta: f64,
    pub tol_diag: f64,
    pub verdict: Verdict,
    pub map_log_posterior: f64,
    pub theta_star: MixtureParams,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema: &'static str,
    pub dataset: DatasetInfo,
    pub hyperparams: Hyperparams,
    #[serde(flatten)]
    pub row: EvidenceRow,
}

#[derive(Debug, Clone, Serialize)]
pub struct BayesFactorRow {
    pub k: usize,
    pub k_next: usize,
    pub log_bayes_factor: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferenceRow {
    pub k: usize,
    pub log_evidence: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub schema: &'static str,
    pub dataset: DatasetInfo,
    pub hyperparams: Hyperparams,
    pub seed: u64,
    pub rows: Vec<EvidenceRow>,
    pub best_k: usize,
    pub log_bayes_factors: Vec<BayesFactorRow>,
    /// Published values for the galaxy data, for side-by-side comparison only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<ReferenceRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_best_k: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub schema: &'static str,
    pub dataset: DatasetInfo,
    pub hyperparams: Hyperparams,
    pub k: usize,
    pub mode: OracleMode,
    pub seed: Option<u64>,
    /// Prior draws (prior-mc) or enumerated allocations (exact).
    pub terms: usize,
    pub log_evidence: f64,
    pub std_error: Option<f64>,
}

/// Chain (or a loaded trace) → MAP → raw and symmetrized estimates.
fn analyze(
    data: &Dataset,
    k: usize,
    hyper: &Hyperparams,
    loaded: Option<Trace>,
    settings: &ChainSettings,
) -> Result<(EvidenceRow, Trace)> {
    let tol_diag = settings.tol_diag;
    let trace = match loaded {
        Some(t) => t,
        None => run_chain(
            data,
            k,
            hyper,
            settings.iters,
            settings.burn_in,
            settings.seed,
        )?,
    };
    let perms = settings
        .plan(k)
        .resolve(k, &mut permutation_rng(trace.seed, k))?;
    let pair = chib_pair(data, &trace, hyper, &perms)?;
    let diag = mixing_diagnostic(&pair.raw, &pair.symmetrized, tol_diag)?;
    let full = perms.len() as u64 == factorial(k);
    let row = EvidenceRow {
        k,
        iterations: trace.iterations,
        burn_in: trace.burn_in,
        seed: trace.seed,
        perm_mode: if full { "all" } else { "subsample" },
        n_perms: perms.len(),
        log_evidence_raw: pair.raw.log_evidence,
        log_evidence_symmetrized: pair.symmetrized.log_evidence,
        log_ordinate_raw: pair.raw.log_rb_density.unwrap_or(f64::NAN),
        log_ordinate_symmetrized: pair.symmetrized.log_rb_density.unwrap_or(f64::NAN),
        delta: diag.delta,
        log_k_factorial: diag.log_k_factorial,
        single_mode_delta: diag.single_mode_delta,
        tol_diag,
        verdict: diag.verdict,
        map_log_posterior: log_likelihood(data, &pair.theta_star)
            + log_prior(&pair.theta_star, hyper),
        theta_star: pair.theta_star,
    };
    Ok((row, trace))
}

fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> Result<T> + Send,
) -> Result<T> {
    match threads {
        None => f(),
        Some(0) => Err(Error::InvalidArgument(
            "--threads must be at least 1".into(),
        )),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(f),
    }
}

fn to_structured<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn hyper_line(h: &Hyperparams) -> String {
    format!(
        "alpha = {}, xi = {:.4}, lambda = {}, a = {}, b = {:.4}",
        h.alpha(),
        h.xi(),
        h.lambda(),
        h.a(),
        h.b()
    )
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::SingleMode => "single_mode",
        Verdict::PartialMixing => "partial_mixing",
        Verdict::FullSymmetry => "full_symmetry",
    }
}

const ROW_HEADER: &str =
    "  k        T  burn-in  perms   log m raw   log m sym   delta  log k!  verdict";

fn row_line(r: &EvidenceRow) -> String {
    format!(
        "{:>3} {:>8} {:>8} {:>6} {:>11.2} {:>11.2} {:>7.2} {:>7.2}  {}",
        r.k,
        r.iterations,
        r.burn_in,
        r.n_perms,
        r.log_evidence_raw,
        r.log_evidence_symmetrized,
        r.delta,
        r.log_k_factorial,
        verdict_name(r.verdict)
    )
}

fn render_run(report: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "dataset      {} (n = {})",
        report.dataset.source, report.dataset.n
    );
    let _ = writeln!(s, "prior        {}", hyper_line(&report.hyperparams));
    let _ = writeln!(s, "seed         {}", report.row.seed);
    let _ = writeln!(s);
    let _ = writeln!(s, "{ROW_HEADER}");
    let _ = writeln!(s, "{}", row_line(&report.row));
    s
}

fn render_sweep(report: &SweepReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "dataset      {} (n = {})",
        report.dataset.source, report.dataset.n
    );
    let _ = writeln!(s, "prior        {}", hyper_line(&report.hyperparams));
    let _ = writeln!(s, "seed         {}", report.seed);
    let _ = writeln!(s);
    let mut header = ROW_HEADER.to_string();
    if report.reference.is_some() {
        header.push_str("        published");
    }
    let _ = writeln!(s, "{header}");
    for r in &report.rows {
        let mut line = row_line(r);
        if let Some(reference) = &report.reference {
            if let Some(p) = reference.iter().find(|p| p.k == r.k) {
                let pad = 15usize.saturating_sub(verdict_name(r.verdict).len());
                let _ = write!(line, "{:>w$.2}", p.log_evidence, w = pad + 9);
            }
        }
        let _ = writeln!(s, "{line}");
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "best k       {}", report.best_k);
    if let Some(k) = report.reference_best_k {
        let _ = writeln!(
            s,
            "published    best k = {k} (different, unpublished prior)"
        );
    }
    if !report.log_bayes_factors.is_empty() {
        let _ = writeln!(s, "log Bayes factors");
        for b in &report.log_bayes_factors {
            let _ = writeln!(s, "  B({}, {}) = {:.2}", b.k, b.k_next, b.log_bayes_factor);
        }
    }
    s
}

fn render_oracle(report: &OracleReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "dataset      {} (n = {})",
        report.dataset.source, report.dataset.n
    );
    let _ = writeln!(s, "prior        {}", hyper_line(&report.hyperparams));
    let mode = match report.mode {
        OracleMode::PriorMc => "prior-mc",
        OracleMode::Exact => "exact",
    };
    let _ = writeln!(s, "mode         {mode}");
    if let Some(seed) = report.seed {
        let _ = writeln!(s, "seed         {seed}");
    }
    let _ = writeln!(s, "k            {}", report.k);
    let _ = writeln!(s, "terms        {}", report.terms);
    let _ = write!(s, "log m        {:.4}", report.log_evidence);
    if let Some(se) = report.std_error {
        let _ = write!(s, " (se {se:.2e})");
    }
    let _ = writeln!(s);
    s
}

fn cmd_run(args: &RunArgs) -> Result<String> {
    let config = load_config(args.output.config.as_deref())?;
    let (data, source) = load_source(&args.source)?;
    let settings = ChainSettings::resolve(&args.chain, args.output.seed, &config)?;
    let k = args.k as usize;

    let (loaded, hyper) = match &args.load_trace {
        Some(path) => {
            let (trace, stored) = Trace::load(path)?;
            if trace.k != k {
                return Err(Error::InvalidArgument(format!(
                    "--k {k} does not match the trace (k = {})",
                    trace.k
                )));
            }
            if trace.stats_seq[0].n() != data.n() {
                return Err(Error::InvalidArgument(format!(
                    "trace was recorded on {} observations, dataset has {}",
                    trace.stats_seq[0].n(),
                    data.n()
                )));
            }
            let hyper = match stored {
                Some(h) if args.hyper.any() => {
                    let requested = resolve_hyper(&data, &args.hyper, &config.hyperparams)?;
                    if requested != h {
                        return Err(Error::InvalidArgument(
                            "hyperparameters are fixed by the loaded trace".into(),
                        ));
                    }
                    h
                }
                Some(h) => h,
                None => resolve_hyper(&data, &args.hyper, &config.hyperparams)?,
            };
            (Some(trace), hyper)
        }
        None => (
            None,
            resolve_hyper(&data, &args.hyper, &config.hyperparams)?,
        ),
    };

    let (row, trace) = with_threads(args.output.threads, || {
        analyze(&data, k, &hyper, loaded, &settings)
    })?;
    if let Some(path) = &args.save_trace {
        trace.save(path, Some(&hyper))?;
    }
    let report = RunReport {
        schema: RUN_SCHEMA,
        dataset: DatasetInfo {
            source,
            n: data.n(),
        },
        hyperparams: hyper,
        row,
    };
    match args.output.format {
        Format::Structured => to_structured(&report),
        Format::Table => Ok(render_run(&report)),
    }
}

fn cmd_sweep(args: &SweepArgs) -> Result<String> {
    if args.k_min > args.k_max {
        return Err(Error::InvalidArgument(format!(
            "empty k-range {}..={}",
            args.k_min, args.k_max
        )));
    }
    let config = load_config(args.output.config.as_deref())?;
    let (data, source) = load_source(&args.source)?;
    let settings = ChainSettings::resolve(&args.chain, args.output.seed, &config)?;
    let hyper = resolve_hyper(&data, &args.hyper, &config.hyperparams)?;
    let ks: Vec<usize> = (args.k_min as usize..=args.k_max as usize).collect();

    let rows = with_threads(args.output.threads, || {
        ks.par_iter()
            .map(|&k| analyze(&data, k, &hyper, None, &settings).map(|(row, _)| row))
            .collect::<Result<Vec<_>>>()
    })?;

    let best_k = rows
        .iter()
        .fold(None::<&EvidenceRow>, |best, r| match best {
            Some(b) if b.log_evidence_symmetrized >= r.log_evidence_symmetrized => Some(b),
            _ => Some(r),
        })
        .map(|r| r.k)
        .expect("non-empty k-range");
    let log_bayes_factors = rows
        .windows(2)
        .map(|w| BayesFactorRow {
            k: w[0].k,
            k_next: w[1].k,
            log_bayes_factor: w[0].log_evidence_symmetrized - w[1].log_evidence_symmetrized,
        })
        .collect();
    let (reference, reference_best_k) = if source == GALAXY_SOURCE_NAME {
        let refs: Vec<ReferenceRow> = GALAXY_REFERENCE_LOG_EVIDENCE
            .iter()
            .map(|&(k, log_evidence)| ReferenceRow { k, log_evidence })
            .collect();
        let best = refs
            .iter()
            .max_by(|a, b| a.log_evidence.total_cmp(&b.log_evidence))
            .map(|r| r.k);
        (Some(refs), best)
    } else {
        (None, None)
    };
    let report = SweepReport {
        schema: SWEEP_SCHEMA,
        dataset: DatasetInfo {
            source,
            n: data.n(),
        },
        hyperparams: hyper,
        seed: settings.seed,
        rows,
        best_k,
        log_bayes_factors,
        reference,
        reference_best_k,
    };
    match args.output.format {
        Format::Structured => to_structured(&report),
        Format::Table => Ok(render_sweep(&report)),
    }
}

fn cmd_oracle(args: &OracleArgs) -> Result<String> {
    let config = load_config(args.output.config.as_deref())?;
    let (data, source) = load_source(&args.source)?;
    let hyper = resolve_hyper(&data, &args.hyper, &config.hyperparams)?;
    let k = args.k as usize;
    let (est, seed) = with_threads(args.output.threads, || match args.mode {
        OracleMode::Exact => {
            let budget = args
                .budget
                .or(config.budget)
                .unwrap_or(DEFAULT_ENUMERATION_BUDGET);
            Ok((exact_log_marginal(&data, k, &hyper, budget)?, None))
        }
        OracleMode::PriorMc => {
            let draws = args.draws.or(config.draws).unwrap_or(DEFAULT_DRAWS);
            let seed = args.output.seed.or(config.seed).unwrap_or(DEFAULT_SEED);
            Ok((
                prior_mc_log_marginal(&data, k, &hyper, draws, seed)?,
                Some(seed),
            ))
        }
    })?;
    let report = OracleReport {
        schema: ORACLE_SCHEMA,
        dataset: DatasetInfo {
            source,
            n: data.n(),
        },
        hyperparams: hyper,
        k,
        mode: args.mode,
        seed,
        terms: est.iterations,
        log_evidence: est.log_evidence,
        std_error: est.std_error,
    };
    match args.output.format {
        Format::Structured => to_structured(&report),
        Format::Table => Ok(render_oracle(&report)),
    }
}

/// Runs a parsed command and returns the rendered report. With `--out`
/// the report is written to that file and the returned string is empty.
pub fn execute(cli: &Cli) -> Result<String> {
    let (text, out) = match &cli.command {
        Command::Run(a) => (cmd_run(a)?, &a.output.out),
        Command::Sweep(a) => (cmd_sweep(a)?, &a.output.out),
        Command::Oracle(a) => (cmd_oracle(a)?, &a.output.out),
    };
    match out {
        Some(path) => {
            std::fs::write(path, &text).map_err(|e| Error::io(path, e))?;
            Ok(String::new())
        }
        None => Ok(text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("mixevidence").chain(args.iter().copied()))
    }

    #[test]
    fn k_zero_is_a_usage_error() {
        assert!(parse(&["run", "--galaxy", "--k", "0"]).is_err());
        assert!(parse(&["run", "--galaxy", "--k", "2"]).is_ok());
    }

    #[test]
    fn exactly_one_data_source() {
        assert!(parse(&["run", "--k", "2"]).is_err());
        assert!(parse(&["run", "--galaxy", "--data", "x.txt", "--k", "2"]).is_err());
    }

    #[test]
    fn perms_flag_values() {
        assert_eq!("all".parse::<PermsArg>(), Ok(PermsArg::All));
        assert_eq!("100".parse::<PermsArg>(), Ok(PermsArg::Count(100)));
        assert!("0".parse::<PermsArg>().is_err());
        assert!("some".parse::<PermsArg>().is_err());
        assert!(parse(&["sweep", "--galaxy", "--k-max", "3", "--perms", "bogus"]).is_err());
    }

    #[test]
    fn flags_override_config_which_overrides_defaults() {
        let config: ConfigFile = toml::from_str(
            "iters = 500\nseed = 9\nperms = 3\n[hyperparams]\nalpha = 2.0\nb = 4.0\n",
        )
        .unwrap();
        let flags = ChainArgs {
            iters: Some(50),
            burn_in: None,
            perms: None,
            full_perms_max_k: None,
            tol_diag: None,
        };
        let s = ChainSettings::resolve(&flags, None, &config).unwrap();
        assert_eq!((s.iters, s.burn_in, s.seed), (50, 5, 9));
        assert_eq!(s.perms, Some(PermsArg::Count(3)));

        let data = Dataset::new(vec![1.0, 2.0, 4.0]).unwrap();
        let hyper_flags = HyperArgs {
            b: Some(0.5),
            ..Default::default()
        };
        let h = resolve_hyper(&data, &hyper_flags, &config.hyperparams).unwrap();
        assert_eq!((h.alpha(), h.b(), h.lambda()), (2.0, 0.5, 1.0));
        assert!((h.xi() - 7.0 / 3.0).abs() < 1e-15);

        assert!(toml::from_str::<ConfigFile>("unknown = 1\n").is_err());
        let text: ConfigFile = toml::from_str("perms = \"all\"\n").unwrap();
        assert_eq!(text.perms().unwrap(), Some(PermsArg::All));
    }
}
