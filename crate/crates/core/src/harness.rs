//! Monte Carlo study runner.
//!
//! For every `n` in the grid and every scenario, the data are generated once
//! (or subsampled from a dataset file), per-scenario state such as the
//! covariate ordering or re-randomization propensities is computed once, and
//! then each method is replicated. Every replication draws from its own
//! stream keyed by `(n, scenario, method, replication)`, so results do not
//! depend on thread count or scheduling.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    bernoulli_assign, rejection_budget_assign, srs_assign, RerandConfig, Rerandomizer,
    DEFAULT_MAX_TRIES,
};
use crate::datagen::{
    generate_synthetic, load_dataset, normalize_budget, Dataset, LoadOptions, Regime,
    SyntheticConfig,
};
use crate::design::{sate, validate_design, AssignmentDraw, DesignSpec, Mechanism, OutcomeTable};
use crate::error::{Error, Result};
use crate::estimators::{
    confidence_interval, ipw_estimate, self_normalized_ipw, self_normalized_variance,
    variance_estimate_with, ObservedStudy, PairTerm, RhoSource, VarianceOptions,
};
use crate::ordering::{order_covariates, OrderingConfig};
use crate::rng::{SeedStream, StreamRng};
use crate::rounding::{swap_round_ordered, PairingStrategy};
use crate::stats::{mean, mean_ci95, sample_variance};

/// Assignment mechanism plus estimator compared in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Swap,
    CovariateSwap,
    IpwIndependent,
    RejectionBudget,
    Srs,
    Rerandomized,
    SelfNormalized,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Swap,
        Method::CovariateSwap,
        Method::IpwIndependent,
        Method::RejectionBudget,
        Method::Srs,
        Method::Rerandomized,
        Method::SelfNormalized,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Swap => "swap",
            Method::CovariateSwap => "covariate_swap",
            Method::IpwIndependent => "ipw_independent",
            Method::RejectionBudget => "rejection_budget",
            Method::Srs => "srs",
            Method::Rerandomized => "rerandomized",
            Method::SelfNormalized => "self_normalized",
        }
    }

    fn needs_covariates(self) -> bool {
        matches!(self, Method::CovariateSwap | Method::Rerandomized)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Study configuration. Parsed from flat `key = value` text; every key can
/// be overridden individually with [`ExperimentConfig::set`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_grid: Vec<usize>,
    pub scenarios: usize,
    pub replications: usize,
    pub regime: Regime,
    /// Dataset file; replaces synthetic generation when set.
    pub dataset: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub master_seed: u64,
    pub tau_true: f64,
    pub noise_sd: f64,
    pub covariate_dim: usize,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub shift_nonnegative: bool,
    pub pair_term: PairTerm,
    pub rho_source: RhoSource,
    pub ordering_standardize: bool,
    pub two_opt_max_passes: usize,
    pub rerand_candidates: usize,
    pub rerand_replications: usize,
    pub max_tries: usize,
    /// Record failing cells and continue instead of aborting.
    pub skip_errors: bool,
    pub threads: Option<usize>,
    pub aggregate_csv: Option<PathBuf>,
    pub raw_csv: Option<PathBuf>,
    pub summary_json: Option<PathBuf>,
    pub error_log: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_grid: vec![100],
            scenarios: 100,
            replications: 100,
            regime: Regime::Uniform,
            dataset: None,
            methods: vec![Method::Swap, Method::CovariateSwap, Method::IpwIndependent],
            alpha: 0.05,
            master_seed: 0,
            tau_true: 2.0,
            noise_sd: 1.0,
            covariate_dim: 3,
            clip_lo: 0.01,
            clip_hi: 0.99,
            shift_nonnegative: false,
            pair_term: PairTerm::PlugIn,
            rho_source: RhoSource::Target,
            ordering_standardize: false,
            two_opt_max_passes: 50,
            rerand_candidates: 100,
            rerand_replications: 1000,
            max_tries: DEFAULT_MAX_TRIES,
            skip_errors: false,
            threads: None,
            aggregate_csv: None,
            raw_csv: None,
            summary_json: None,
            error_log: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("bad boolean `{value}` for `{key}`"))),
    }
}

fn optional(value: &str) -> Option<&str> {
    match value {
        "" | "none" => None,
        v => Some(v),
    }
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 27] = [
        "n_grid",
        "scenarios",
        "replications",
        "regime",
        "dataset",
        "methods",
        "alpha",
        "master_seed",
        "tau_true",
        "noise_sd",
        "covariate_dim",
        "clip_lo",
        "clip_hi",
        "shift_nonnegative",
        "pair_term",
        "rho_source",
        "ordering_standardize",
        "two_opt_max_passes",
        "rerand_candidates",
        "rerand_replications",
        "max_tries",
        "skip_errors",
        "threads",
        "aggregate_csv",
        "raw_csv",
        "summary_json",
        "error_log",
    ];

    /// Parse `key = value` lines over the defaults. `#` starts a comment.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn from_kv_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv_str(&std::fs::read_to_string(path)?)
    }

    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n_grid" => {
                self.n_grid = value
                    .split(',')
                    .map(|v| parse(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "scenarios" => self.scenarios = parse(key, value)?,
            "replications" => self.replications = parse(key, value)?,
            "regime" => self.regime = value.parse()?,
            "dataset" => self.dataset = optional(value).map(PathBuf::from),
            "methods" => {
                self.methods = value
                    .split(',')
                    .map(|v| v.trim().parse())
                    .collect::<Result<_>>()?
            }
            "alpha" => self.alpha = parse(key, value)?,
            "master_seed" => self.master_seed = parse(key, value)?,
            "tau_true" => self.tau_true = parse(key, value)?,
            "noise_sd" => self.noise_sd = parse(key, value)?,
            "covariate_dim" => self.covariate_dim = parse(key, value)?,
            "clip_lo" => self.clip_lo = parse(key, value)?,
            "clip_hi" => self.clip_hi = parse(key, value)?,
            "shift_nonnegative" => self.shift_nonnegative = parse_bool(key, value)?,
            "pair_term" => {
                self.pair_term = match value {
                    "plug_in" => PairTerm::PlugIn,
                    "observed" => PairTerm::Observed,
                    _ => return Err(Error::InvalidConfig(format!("bad pair_term `{value}`"))),
                }
            }
            "rho_source" => {
                self.rho_source = match value {
                    "target" => RhoSource::Target,
                    "swap_time" => RhoSource::SwapTime,
                    _ => return Err(Error::InvalidConfig(format!("bad rho_source `{value}`"))),
                }
            }
            "ordering_standardize" => self.ordering_standardize = parse_bool(key, value)?,
            "two_opt_max_passes" => self.two_opt_max_passes = parse(key, value)?,
            "rerand_candidates" => self.rerand_candidates = parse(key, value)?,
            "rerand_replications" => self.rerand_replications = parse(key, value)?,
            "max_tries" => self.max_tries = parse(key, value)?,
            "skip_errors" => self.skip_errors = parse_bool(key, value)?,
            "threads" => self.threads = optional(value).map(|v| parse(key, v)).transpose()?,
            "aggregate_csv" => self.aggregate_csv = optional(value).map(PathBuf::from),
            "raw_csv" => self.raw_csv = optional(value).map(PathBuf::from),
            "summary_json" => self.summary_json = optional(value).map(PathBuf::from),
            "error_log" => self.error_log = optional(value).map(PathBuf::from),
            other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Inverse of [`from_kv_str`](Self::from_kv_str).
    pub fn to_kv_string(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let mut out = String::new();
        for key in Self::KEYS {
            let value = match key {
                "n_grid" => join(&self.n_grid),
                "scenarios" => self.scenarios.to_string(),
                "replications" => self.replications.to_string(),
                "regime" => self.regime.as_str().to_string(),
                "dataset" => path(&self.dataset),
                "methods" => join(&self.methods),
                "alpha" => self.alpha.to_string(),
                "master_seed" => self.master_seed.to_string(),
                "tau_true" => self.tau_true.to_string(),
                "noise_sd" => self.noise_sd.to_string(),
                "covariate_dim" => self.covariate_dim.to_string(),
                "clip_lo" => self.clip_lo.to_string(),
                "clip_hi" => self.clip_hi.to_string(),
                "shift_nonnegative" => self.shift_nonnegative.to_string(),
                "pair_term" => match self.pair_term {
                    PairTerm::PlugIn => "plug_in".into(),
                    PairTerm::Observed => "observed".into(),
                },
                "rho_source" => match self.rho_source {
                    RhoSource::Target => "target".into(),
                    RhoSource::SwapTime => "swap_time".into(),
                },
                "ordering_standardize" => self.ordering_standardize.to_string(),
                "two_opt_max_passes" => self.two_opt_max_passes.to_string(),
                "rerand_candidates" => self.rerand_candidates.to_string(),
                "rerand_replications" => self.rerand_replications.to_string(),
                "max_tries" => self.max_tries.to_string(),
                "skip_errors" => self.skip_errors.to_string(),
                "threads" => self.threads.map_or("none".into(), |t| t.to_string()),
                "aggregate_csv" => path(&self.aggregate_csv),
                "raw_csv" => path(&self.raw_csv),
                "summary_json" => path(&self.summary_json),
                "error_log" => path(&self.error_log),
                _ => unreachable!(),
            };
            writeln!(out, "{key} = {value}").expect("string write");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return bad("n_grid must list positive sizes");
        }
        if self.scenarios == 0 || self.replications < 2 {
            return bad("need scenarios >= 1 and replications >= 2");
        }
        if self.methods.is_empty() {
            return bad("no methods selected");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidLevel(self.alpha));
        }
        if self.threads == Some(0) {
            return bad("threads must be positive");
        }
        if self.methods.contains(&Method::Rerandomized) {
            self.rerand_config().validate()?;
        }
        if self.dataset.is_none() {
            self.synthetic(self.n_grid[0], 0).validate()?;
        }
        Ok(())
    }

    /// Methods deduplicated in canonical order.
    pub fn method_order(&self) -> Vec<Method> {
        let mut m = self.methods.clone();
        m.sort();
        m.dedup();
        m
    }

    pub fn variance_options(&self) -> VarianceOptions {
        VarianceOptions {
            pair_term: self.pair_term,
            rho_source: self.rho_source,
        }
    }

    pub fn rerand_config(&self) -> RerandConfig {
        RerandConfig {
            candidates: self.rerand_candidates,
            effective_p_replications: self.rerand_replications,
            ..Default::default()
        }
    }

    pub fn ordering_config(&self) -> OrderingConfig {
        OrderingConfig {
            standardize: self.ordering_standardize,
            two_opt_max_passes: self.two_opt_max_passes,
            ..Default::default()
        }
    }

    fn synthetic(&self, n: usize, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n,
            regime: self.regime,
            tau_true: self.tau_true,
            noise_sd: self.noise_sd,
            covariate_dim: self.covariate_dim,
            clip: (self.clip_lo, self.clip_hi),
            scenario_seed: seed,
            shift_nonnegative: self.shift_nonnegative,
        }
    }
}

/// Per-scenario state shared by all replications of all methods.
#[derive(Debug, Clone)]
pub struct MethodContext {
    pub design: DesignSpec,
    pub outcomes: OutcomeTable,
    pub ordering: Option<Vec<usize>>,
    pub rerandomizer: Option<(Rerandomizer, Vec<f64>)>,
    pub max_tries: usize,
}

impl MethodContext {
    /// Compute what `methods` need: the covariate ordering and the
    /// re-randomization propensities (drawn from `stream`).
    pub fn prepare(
        design: DesignSpec,
        outcomes: OutcomeTable,
        methods: &[Method],
        config: &ExperimentConfig,
        stream: &SeedStream,
    ) -> Result<Self> {
        if methods.iter().any(|m| m.needs_covariates()) && design.covariates.is_none() {
            return Err(Error::InvalidConfig(
                "covariate_swap and rerandomized need covariates".into(),
            ));
        }
        let ordering = if methods.contains(&Method::CovariateSwap) {
            let v = design.covariates.as_ref().expect("checked");
            Some(order_covariates(v, &config.ordering_config())?.permutation)
        } else {
            None
        };
        let rerandomizer = if methods.contains(&Method::Rerandomized) {
            let rr = Rerandomizer::new(&design, config.rerand_config())?;
            let eff = rr.effective_propensities(&mut stream.named("effective_p").rng());
            Some((rr, eff))
        } else {
            None
        };
        Ok(MethodContext {
            design,
            outcomes,
            ordering,
            rerandomizer,
            max_tries: config.max_tries,
        })
    }

    /// One assignment under `method`.
    pub fn draw(&self, method: Method, rng: &mut StreamRng) -> Result<AssignmentDraw> {
        let p0 = &self.design.p0;
        match method {
            Method::Swap => {
                let order = PairingStrategy::RandomChain.order(p0.len(), rng)?;
                Ok(swap_round_ordered(p0, &order, Mechanism::Swap, rng))
            }
            Method::CovariateSwap => {
                let order = self.ordering.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("covariate ordering was not prepared".into())
                })?;
                Ok(swap_round_ordered(p0, order, Mechanism::CovariateSwap, rng))
            }
            Method::IpwIndependent | Method::SelfNormalized => bernoulli_assign(p0, rng),
            Method::RejectionBudget => {
                rejection_budget_assign(p0, self.design.budget, self.max_tries, rng)
            }
            Method::Srs => srs_assign(p0.len(), self.design.budget, rng),
            Method::Rerandomized => {
                let (rr, eff) = self.rerandomizer.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("re-randomization was not prepared".into())
                })?;
                Ok(rr.assign_with(eff, rng))
            }
        }
    }

    /// Weighting probabilities the estimator uses for `method`.
    pub fn weights(&self, method: Method, draw: &AssignmentDraw) -> Vec<f64> {
        match method {
            Method::Srs => {
                let n = self.design.n();
                vec![self.design.budget as f64 / n as f64; n]
            }
            _ => draw.effective_p.clone().unwrap_or_else(|| self.design.p0.clone()),
        }
    }

    /// Draw, estimate and interval for one replication.
    pub fn replicate(
        &self,
        method: Method,
        alpha: f64,
        opts: &VarianceOptions,
        rng: &mut StreamRng,
    ) -> Result<Replicate> {
        let draw = self.draw(method, rng)?;
        let weights = self.weights(method, &draw);
        let study = ObservedStudy::with_weights(&draw, &self.outcomes, weights)?;
        let (tau_hat, sigma_hat_sq, clamped) = if method == Method::SelfNormalized {
            (self_normalized_ipw(&study)?, self_normalized_variance(&study)?, false)
        } else {
            let v = variance_estimate_with(&study, opts)?;
            (ipw_estimate(&study)?, v.value, v.clamped)
        };
        let (ci_lo, ci_hi) = confidence_interval(tau_hat, sigma_hat_sq, alpha)?;
        Ok(Replicate {
            tau_hat,
            sigma_hat_sq,
            ci_lo,
            ci_hi,
            clamped,
            treated: draw.treated(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replicate {
    pub tau_hat: f64,
    pub sigma_hat_sq: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub clamped: bool,
    pub treated: usize,
}

/// One replication of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub n: usize,
    pub scenario: usize,
    pub budget: usize,
    pub method: Method,
    pub replication: usize,
    pub tau_hat: f64,
    pub sigma_hat_sq: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub sate: f64,
    pub covered: bool,
    pub clamped: bool,
    pub treated: usize,
}

/// Summary of one `(method, n)` cell of the study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub n: usize,
    /// Mean over scenarios of the empirical variance of `tau_hat` across replications.
    pub mean_emp_var: f64,
    pub var_ci_lo: f64,
    pub var_ci_hi: f64,
    /// Mean of `tau_hat - SATE`.
    pub mean_bias: f64,
    pub coverage: f64,
    pub mean_sigma_hat: f64,
    pub clamp_rate: f64,
    pub wall_time_s: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub n: usize,
    pub scenario: usize,
    pub method: Option<Method>,
    pub replication: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub aggregates: Vec<AggregateRow>,
    pub raw: Vec<RawRow>,
    pub failures: Vec<CellFailure>,
}

pub const AGGREGATE_COLUMNS: [&str; 10] = [
    "method",
    "n",
    "mean_emp_var",
    "var_ci_lo",
    "var_ci_hi",
    "mean_bias",
    "coverage",
    "mean_sigma_hat",
    "clamp_rate",
    "wall_time_s",
];

pub const RAW_COLUMNS: [&str; 13] = [
    "n",
    "scenario",
    "budget",
    "method",
    "replication",
    "tau_hat",
    "sigma_hat_sq",
    "ci_lo",
    "ci_hi",
    "sate",
    "covered",
    "clamped",
    "treated",
];

struct ScenarioResult {
    rows: Vec<RawRow>,
    times: Vec<(Method, f64)>,
    failures: Vec<CellFailure>,
    error: Option<Error>,
}

fn cell_error(n: usize, scenario: usize, method: Option<Method>, replication: usize, e: Error) -> Error {
    Error::Cell {
        n,
        scenario,
        method: method.map_or("setup".into(), |m| m.as_str().into()),
        replication,
        source: Box::new(e),
    }
}

/// Data for scenario `s` at size `n`.
fn scenario_data(
    config: &ExperimentConfig,
    dataset: Option<&Dataset>,
    n: usize,
    stream: &SeedStream,
) -> Result<(DesignSpec, OutcomeTable)> {
    let Some(data) = dataset else {
        return generate_synthetic(&config.synthetic(n, stream.named("data").key()));
    };
    let total = data.design.n();
    if n == total {
        return Ok((data.design.clone(), data.outcomes.clone()));
    }
    let mut idx = sample(&mut stream.named("subsample").rng(), total, n).into_vec();
    idx.sort_unstable();
    let p: Vec<f64> = idx.iter().map(|&i| data.design.p0[i]).collect();
    let sum: f64 = p.iter().sum();
    let (p0, budget) = if (sum - sum.round()).abs() <= crate::design::BUDGET_TOL {
        (p, sum.round() as usize)
    } else {
        normalize_budget(&p)?
    };
    let mut design = DesignSpec::new(p0, budget);
    design.covariates = data.design.covariates.as_ref().map(|v| v.select(&idx));
    design.unit_ids = data
        .design
        .unit_ids
        .as_ref()
        .map(|ids| idx.iter().map(|&i| ids[i].clone()).collect());
    Ok((validate_design(design)?, data.outcomes.select(&idx)))
}

fn run_scenario(
    config: &ExperimentConfig,
    dataset: Option<&Dataset>,
    methods: &[Method],
    n: usize,
    scenario: usize,
) -> ScenarioResult {
    let root = SeedStream::new(config.master_seed).child(n as u64).child(scenario as u64);
    let mut out = ScenarioResult {
        rows: Vec::new(),
        times: Vec::new(),
        failures: Vec::new(),
        error: None,
    };
    let opts = config.variance_options();
    let setup_start = Instant::now();
    let ctx = scenario_data(config, dataset, n, &root)
        .and_then(|(d, o)| MethodContext::prepare(d, o, methods, config, &root));
    let setup_time = setup_start.elapsed().as_secs_f64();
    let ctx = match ctx {
        Ok(c) => c,
        Err(e) => {
            let e = cell_error(n, scenario, None, 0, e);
            if config.skip_errors {
                out.failures.push(CellFailure {
                    n,
                    scenario,
                    method: None,
                    replication: None,
                    message: e.to_string(),
                });
            } else {
                out.error = Some(e);
            }
            return out;
        }
    };
    let truth = sate(&ctx.outcomes);
    for &method in methods {
        let start = Instant::now();
        let method_stream = root.named(method.as_str());
        for rep in 0..config.replications {
            let mut rng = method_stream.child(rep as u64).rng();
            match ctx.replicate(method, config.alpha, &opts, &mut rng) {
                Ok(r) => out.rows.push(RawRow {
                    n,
                    scenario,
                    budget: ctx.design.budget,
                    method,
                    replication: rep,
                    tau_hat: r.tau_hat,
                    sigma_hat_sq: r.sigma_hat_sq,
                    ci_lo: r.ci_lo,
                    ci_hi: r.ci_hi,
                    sate: truth,
                    covered: r.ci_lo <= truth && truth <= r.ci_hi,
                    clamped: r.clamped,
                    treated: r.treated,
                }),
                Err(e) => {
                    let e = cell_error(n, scenario, Some(method), rep, e);
                    if !config.skip_errors {
                        out.error = Some(e);
                        return out;
                    }
                    log::warn!("{e}");
                    out.failures.push(CellFailure {
                        n,
                        scenario,
                        method: Some(method),
                        replication: Some(rep),
                        message: e.to_string(),
                    });
                }
            }
        }
        let mut elapsed = start.elapsed().as_secs_f64();
        if method.needs_covariates() {
            elapsed += setup_time;
        }
        out.times.push((method, elapsed));
    }
    out
}

/// Aggregate raw rows (any order) into one row per `(method, n)`.
pub fn aggregate(raw: &[RawRow], times: &[(Method, usize, f64)]) -> Vec<AggregateRow> {
    let mut keys: Vec<(Method, usize)> = raw.iter().map(|r| (r.method, r.n)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(method, n)| {
            let rows: Vec<&RawRow> = raw.iter().filter(|r| r.method == method && r.n == n).collect();
            let mut scenarios: Vec<usize> = rows.iter().map(|r| r.scenario).collect();
            scenarios.sort_unstable();
            scenarios.dedup();
            let per_scenario: Vec<f64> = scenarios
                .iter()
                .map(|&s| {
                    let taus: Vec<f64> =
                        rows.iter().filter(|r| r.scenario == s).map(|r| r.tau_hat).collect();
                    sample_variance(&taus)
                })
                .filter(|v| v.is_finite())
                .collect();
            let ci = mean_ci95(&per_scenario);
            let frac = |f: fn(&RawRow) -> bool| {
                rows.iter().filter(|r| f(r)).count() as f64 / rows.len() as f64
            };
            AggregateRow {
                method,
                n,
                mean_emp_var: ci.mean,
                var_ci_lo: ci.low.max(0.0),
                var_ci_hi: ci.high,
                mean_bias: mean(&rows.iter().map(|r| r.tau_hat - r.sate).collect::<Vec<_>>()),
                coverage: frac(|r| r.covered),
                mean_sigma_hat: mean(&rows.iter().map(|r| r.sigma_hat_sq).collect::<Vec<_>>()),
                clamp_rate: frac(|r| r.clamped),
                wall_time_s: times
                    .iter()
                    .filter(|(m, tn, _)| *m == method && *tn == n)
                    .map(|t| t.2)
                    .sum(),
                replicates: rows.len(),
            }
        })
        .collect()
}

/// Run the study described by `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let dataset = match &config.dataset {
        Some(path) => Some(load_dataset(path, &LoadOptions::default())?),
        None => None,
    };
    if let Some(d) = &dataset {
        if let Some(&n) = config.n_grid.iter().find(|&&n| n > d.design.n()) {
            return Err(Error::InvalidConfig(format!(
                "n = {n} exceeds the {} units in the dataset",
                d.design.n()
            )));
        }
    }
    let methods = config.method_order();
    let cells: Vec<(usize, usize)> = config
        .n_grid
        .iter()
        .flat_map(|&n| (0..config.scenarios).map(move |s| (n, s)))
        .collect();
    let work = || -> Vec<ScenarioResult> {
        cells
            .par_iter()
            .map(|&(n, s)| run_scenario(config, dataset.as_ref(), &methods, n, s))
            .collect()
    };
    let results = match config.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(work),
        None => work(),
    };
    let mut raw = Vec::new();
    let mut failures = Vec::new();
    let mut times = Vec::new();
    for ((n, _), r) in cells.iter().zip(results) {
        if let Some(e) = r.error {
            return Err(e);
        }
        raw.extend(r.rows);
        failures.extend(r.failures);
        times.extend(r.times.into_iter().map(|(m, t)| (m, *n, t)));
    }
    Ok(ExperimentOutput {
        aggregates: aggregate(&raw, &times),
        raw,
        failures,
    })
}

pub fn write_aggregate_csv(path: impl AsRef<Path>, rows: &[AggregateRow]) -> Result<()> {
    write_aggregate(std::fs::File::create(path)?, rows)
}

/// Aggregate rows as CSV in the fixed column order.
pub fn write_aggregate<W: std::io::Write>(out: W, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.method.as_str().to_string(),
            r.n.to_string(),
            r.mean_emp_var.to_string(),
            r.var_ci_lo.to_string(),
            r.var_ci_hi.to_string(),
            r.mean_bias.to_string(),
            r.coverage.to_string(),
            r.mean_sigma_hat.to_string(),
            r.clamp_rate.to_string(),
            r.wall_time_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_raw_csv(path: impl AsRef<Path>, rows: &[RawRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RAW_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.scenario.to_string(),
            r.budget.to_string(),
            r.method.as_str().to_string(),
            r.replication.to_string(),
            r.tau_hat.to_string(),
            r.sigma_hat_sq.to_string(),
            r.ci_lo.to_string(),
            r.ci_hi.to_string(),
            r.sate.to_string(),
            u8::from(r.covered).to_string(),
            u8::from(r.clamped).to_string(),
            r.treated.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Summary file contents: the configuration echo plus the aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: String,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    pub aggregates: Vec<AggregateRow>,
    pub failures: usize,
}

/// Write every output path set in `config`.
pub fn emit_results(config: &ExperimentConfig, output: &ExperimentOutput) -> Result<()> {
    if let Some(p) = &config.aggregate_csv {
        write_aggregate_csv(p, &output.aggregates)?;
    }
    if let Some(p) = &config.raw_csv {
        write_raw_csv(p, &output.raw)?;
    }
    if let Some(p) = &config.summary_json {
        let summary = RunSummary {
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: config.master_seed,
            config: config.clone(),
            aggregates: output.aggregates.clone(),
            failures: output.failures.len(),
        };
        std::fs::write(p, serde_json::to_string_pretty(&summary)?)?;
    }
    if !output.failures.is_empty() {
        let log_path = config.error_log.clone().or_else(|| {
            config
                .aggregate_csv
                .as_ref()
                .map(|p| PathBuf::from(format!("{}.errors.log", p.display())))
        });
        if let Some(p) = log_path {
            let mut text = String::new();
            for f in &output.failures {
                writeln!(text, "{}", serde_json::to_string(f)?).expect("string write");
            }
            std::fs::write(p, text)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            n_grid: vec![20],
            scenarios: 3,
            replications: 10,
            methods: Method::ALL.to_vec(),
            rerand_candidates: 5,
            rerand_replications: 100,
            ..Default::default()
        }
    }

    #[test]
    fn kv_round_trip() {
        let mut c = small();
        c.dataset = Some("data.csv".into());
        c.threads = Some(2);
        c.pair_term = PairTerm::Observed;
        let back = ExperimentConfig::from_kv_str(&c.to_kv_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn kv_rejects_unknown_key() {
        let err = ExperimentConfig::from_kv_str("bogus = 1").unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn every_key_is_settable() {
        let c = ExperimentConfig::default();
        for line in c.to_kv_string().lines() {
            let (k, v) = line.split_once(" = ").unwrap();
            let mut d = ExperimentConfig::default();
            d.set(k, v).unwrap();
        }
    }

    #[test]
    fn run_is_deterministic_across_thread_counts() {
        let mut a = small();
        a.threads = Some(1);
        let mut b = small();
        b.threads = Some(4);
        let ra = run_experiment(&a).unwrap();
        let rb = run_experiment(&b).unwrap();
        assert_eq!(ra.raw, rb.raw);
        assert_eq!(ra.raw.len(), 3 * 10 * 7);
        assert_eq!(ra.aggregates.len(), 7);
    }

    #[test]
    fn budget_exact_methods_treat_budget() {
        let out = run_experiment(&small()).unwrap();
        for r in &out.raw {
            if matches!(
                r.method,
                Method::Swap | Method::CovariateSwap | Method::RejectionBudget | Method::Srs
            ) {
                assert_eq!(r.treated, r.budget);
            }
        }
    }
}
