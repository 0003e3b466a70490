//! Scenario generation and dataset ingestion.
//!
//! * Synthetic scenarios: standard-normal covariates, a linear baseline, a
//!   constant effect plus noise, and target probabilities from one of three
//!   regimes.
//! * Dataset files: CSV with `id,y0,y1,p0` and `v_*` covariate columns.
//! * Lipschitz scenarios: one-dimensional covariates planted in tight pairs,
//!   used to check that covariate-ordered pairing lowers variance.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::{validate_design, Covariates, DesignSpec, OutcomeTable, BUDGET_TOL};
use crate::error::{Error, Result};
use crate::rng::{SeedStream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `p ~ Uniform(lo, hi)` over the clip bounds.
    Uniform,
    /// `p ~ N(0.5, 0.25^2)`, clipped.
    Gaussian,
    /// `p = sigmoid(gamma0 + V gamma)`, clipped.
    CovariateLogistic,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Uniform => "uniform",
            Regime::Gaussian => "gaussian",
            Regime::CovariateLogistic => "covariate_logistic",
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Regime::Uniform),
            "gaussian" => Ok(Regime::Gaussian),
            "covariate_logistic" | "covariate" | "logistic" => Ok(Regime::CovariateLogistic),
            other => Err(Error::InvalidConfig(format!("unknown regime `{other}`"))),
        }
    }
}

/// Standard deviation of the Gaussian regime.
pub const GAUSSIAN_REGIME_SD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub regime: Regime,
    pub tau_true: f64,
    pub noise_sd: f64,
    pub covariate_dim: usize,
    pub clip: (f64, f64),
    pub scenario_seed: u64,
    /// Shift outcomes so the smallest is zero (effects unchanged).
    pub shift_nonnegative: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n: 100,
            regime: Regime::Uniform,
            tau_true: 2.0,
            noise_sd: 1.0,
            covariate_dim: 3,
            clip: (0.01, 0.99),
            scenario_seed: 0,
            shift_nonnegative: false,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.clip;
        if !(lo > 0.0 && lo < hi && hi < 1.0) {
            return Err(Error::InvalidParams(format!(
                "clip bounds ({lo}, {hi}) must satisfy 0 < lo < hi < 1"
            )));
        }
        if self.n < 2 {
            return Err(Error::InvalidParams("synthetic scenarios need n >= 2".into()));
        }
        if self.covariate_dim == 0 {
            return Err(Error::InvalidParams("covariate_dim must be positive".into()));
        }
        if !(self.noise_sd >= 0.0) || !self.tau_true.is_finite() {
            return Err(Error::InvalidParams("noise_sd must be >= 0 and tau_true finite".into()));
        }
        Ok(())
    }

    /// Population average treatment effect of the generating model.
    pub fn pate(&self) -> f64 {
        self.tau_true
    }
}

/// The fixed coefficients of one synthetic population: baseline intercept
/// and slopes, and (for the logistic regime) propensity intercept and slopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPopulation {
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub gamma0: f64,
    pub gamma: Vec<f64>,
}

impl SyntheticPopulation {
    pub fn draw<R: Rng + ?Sized>(covariate_dim: usize, rng: &mut R) -> Self {
        let mut normal = || -> f64 { StandardNormal.sample(rng) };
        let beta0 = normal();
        let beta = (0..covariate_dim).map(|_| normal()).collect();
        let gamma0 = normal();
        let gamma = (0..covariate_dim).map(|_| normal()).collect();
        SyntheticPopulation {
            beta0,
            beta,
            gamma0,
            gamma,
        }
    }

    /// Draw `config.n` iid units from this population.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        config: &SyntheticConfig,
        rng: &mut R,
    ) -> Result<(DesignSpec, OutcomeTable)> {
        config.validate()?;
        let (n, k) = (config.n, config.covariate_dim);
        if self.beta.len() != k || self.gamma.len() != k {
            return Err(Error::DimensionMismatch {
                what: "population coefficients",
                expected: k,
                found: self.beta.len(),
            });
        }
        let v: Vec<f64> = (0..n * k).map(|_| StandardNormal.sample(rng)).collect();
        let noise = Normal::new(0.0, config.noise_sd).expect("sd checked");
        let mut y0 = Vec::with_capacity(n);
        let mut y1 = Vec::with_capacity(n);
        for i in 0..n {
            let row = &v[i * k..(i + 1) * k];
            let base = self.beta0 + dot(row, &self.beta);
            y0.push(base);
            y1.push(base + config.tau_true + noise.sample(rng));
        }
        let (lo, hi) = config.clip;
        let p_raw: Vec<f64> = match config.regime {
            Regime::Uniform => (0..n).map(|_| rng.random_range(lo..hi)).collect(),
            Regime::Gaussian => {
                let g = Normal::new(0.5, GAUSSIAN_REGIME_SD).expect("valid sd");
                (0..n).map(|_| g.sample(rng).clamp(lo, hi)).collect()
            }
            Regime::CovariateLogistic => (0..n)
                .map(|i| {
                    let z = self.gamma0 + dot(&v[i * k..(i + 1) * k], &self.gamma);
                    (1.0 / (1.0 + (-z).exp())).clamp(lo, hi)
                })
                .collect(),
        };
        let (p0, budget) = normalize_budget_within(&p_raw, lo, hi)?;
        let design = validate_design(
            DesignSpec::new(p0, budget).with_covariates(Covariates::new(n, k, v)?),
        )?;
        let mut outcomes = OutcomeTable::new(y0, y1)?;
        if config.shift_nonnegative {
            outcomes = outcomes.shifted_nonnegative();
        }
        Ok((design, outcomes))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One synthetic scenario, fully determined by `config.scenario_seed`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<(DesignSpec, OutcomeTable)> {
    config.validate()?;
    let root = SeedStream::new(config.scenario_seed);
    let population = SyntheticPopulation::draw(config.covariate_dim, &mut root.named("population").rng());
    let mut rng: StreamRng = root.named("units").rng();
    population.sample(config, &mut rng)
}

/// Scale raw probabilities so they sum to `B = floor(sum)`.
pub fn normalize_budget(p_raw: &[f64]) -> Result<(Vec<f64>, usize)> {
    if let Some(&p) = p_raw.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::OutOfRange {
            what: "raw probability",
            value: p,
        });
    }
    let sum: f64 = p_raw.iter().sum();
    let budget = sum.floor();
    if budget < 1.0 {
        return Err(Error::DegenerateBudget);
    }
    let scale = budget / sum;
    Ok((p_raw.iter().map(|p| p * scale).collect(), budget as usize))
}

/// Like [`normalize_budget`], but keeps every entry inside `[lo, hi]`:
/// entries pushed below `lo` are pinned there and the rest rescaled until
/// the sum is back at the budget.
pub fn normalize_budget_within(p_raw: &[f64], lo: f64, hi: f64) -> Result<(Vec<f64>, usize)> {
    let (mut p, budget) = normalize_budget(p_raw)?;
    let target = budget as f64;
    if (p.len() as f64) * lo > target + BUDGET_TOL {
        return Err(Error::InvalidParams(format!(
            "budget {budget} cannot keep {} units above {lo}",
            p.len()
        )));
    }
    for _ in 0..p.len() + 1 {
        let mut pinned = 0.0;
        let mut free = 0.0;
        for x in p.iter_mut() {
            if *x <= lo {
                *x = lo;
                pinned += lo;
            } else {
                free += *x;
            }
        }
        if free <= 0.0 || (pinned + free - target).abs() <= 1e-13 * target.max(1.0) {
            break;
        }
        let scale = (target - pinned) / free;
        for x in p.iter_mut().filter(|x| **x > lo) {
            *x = (*x * scale).min(hi);
        }
    }
    Ok((p, budget))
}

/// A loaded dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub design: DesignSpec,
    pub outcomes: OutcomeTable,
    pub covariate_names: Vec<String>,
    /// True when `p0` was rescaled because its sum was not integral.
    pub normalized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Rescale `p0` to `floor(sum)` when the file's sum is not integral;
    /// otherwise a non-integral sum is a budget error.
    pub normalize: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { normalize: true }
    }
}

const REQUIRED_COLUMNS: [&str; 4] = ["id", "y0", "y1", "p0"];
pub const COVARIATE_PREFIX: &str = "v_";

/// Read a dataset CSV (`id,y0,y1,p0,v_*`).
pub fn load_dataset(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = find(name).ok_or_else(|| Error::Schema {
            path: path.to_path_buf(),
            message: format!("missing required column `{name}`"),
        })?;
    }
    let cov_idx: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with(COVARIATE_PREFIX))
        .map(|(i, _)| i)
        .collect();
    let covariate_names: Vec<String> = cov_idx.iter().map(|&i| headers[i].to_string()).collect();

    let mut ids = Vec::new();
    let mut y0 = Vec::new();
    let mut y1 = Vec::new();
    let mut p0 = Vec::new();
    let mut v = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 2; // 1-based, header is row 1
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let field = |i: usize| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                row,
                column: headers[i].to_string(),
                message,
            };
            if raw.is_empty() {
                return Err(parse_err("missing value".into()));
            }
            let x: f64 = raw
                .parse()
                .map_err(|_| parse_err(format!("`{raw}` is not a number")))?;
            if !x.is_finite() {
                return Err(parse_err(format!("`{raw}` is not finite")));
            }
            Ok(x)
        };
        let id = record.get(idx[0]).unwrap_or("");
        if id.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                column: "id".into(),
                message: "missing value".into(),
            });
        }
        ids.push(id.to_string());
        y0.push(field(idx[1])?);
        y1.push(field(idx[2])?);
        let p = field(idx[3])?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                column: "p0".into(),
                message: format!("probability {p} outside [0, 1]"),
            });
        }
        p0.push(p);
        for &c in &cov_idx {
            v.push(field(c)?);
        }
    }
    let n = ids.len();
    if n == 0 {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    let sum: f64 = p0.iter().sum();
    let rounded = sum.round();
    let (p0, budget, normalized) = if (sum - rounded).abs() <= BUDGET_TOL {
        (p0, rounded as usize, false)
    } else if options.normalize {
        let (p, b) = normalize_budget(&p0)?;
        (p, b, true)
    } else {
        return Err(Error::BudgetMismatch {
            sum,
            budget: rounded as usize,
        });
    };
    let mut design = DesignSpec::new(p0, budget);
    if !cov_idx.is_empty() {
        design.covariates = Some(Covariates::new(n, cov_idx.len(), v)?);
    }
    design.unit_ids = Some(ids);
    Ok(Dataset {
        design: validate_design(design)?,
        outcomes: OutcomeTable::new(y0, y1)?,
        covariate_names,
        normalized,
    })
}

/// Write a dataset in the format [`load_dataset`] reads. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_dataset(
    path: impl AsRef<Path>,
    design: &DesignSpec,
    outcomes: &OutcomeTable,
    covariate_names: &[String],
) -> Result<()> {
    let n = design.n();
    if outcomes.n() != n {
        return Err(Error::DimensionMismatch {
            what: "outcome rows",
            expected: n,
            found: outcomes.n(),
        });
    }
    let k = design.covariates.as_ref().map_or(0, Covariates::cols);
    let names: Vec<String> = if covariate_names.len() == k {
        covariate_names.to_vec()
    } else {
        (1..=k).map(|c| format!("{COVARIATE_PREFIX}{c}")).collect()
    };
    let mut out = String::from("id,y0,y1,p0");
    for name in &names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..n {
        let id = design
            .unit_ids
            .as_ref()
            .map_or_else(|| i.to_string(), |ids| ids[i].clone());
        write!(out, "{id},{},{},{}", outcomes.y0()[i], outcomes.y1()[i], design.p0[i]).expect("string write");
        if let Some(v) = &design.covariates {
            for x in v.row(i) {
                write!(out, ",{x}").expect("string write");
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parameters of the planted-pairs construction. Covariates are one
/// dimensional; baseline, effect and propensity are affine in the covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzParams {
    pub pairs: usize,
    /// Distance between the two members of a pair.
    pub delta: f64,
    /// Gap between consecutive pairs.
    pub spacing: f64,
    pub f_intercept: f64,
    pub f_slope: f64,
    pub tau_intercept: f64,
    pub tau_slope: f64,
    pub p_intercept: f64,
    pub p_slope: f64,
}

impl Default for LipschitzParams {
    fn default() -> Self {
        LipschitzParams {
            pairs: 10,
            delta: 0.05,
            spacing: 1.0,
            f_intercept: 1.0,
            f_slope: 1.0,
            tau_intercept: 1.0,
            tau_slope: 0.5,
            p_intercept: 0.3,
            p_slope: 0.02,
        }
    }
}

impl LipschitzParams {
    /// Everything constant: ordering cannot matter.
    pub fn constant() -> Self {
        LipschitzParams {
            f_slope: 0.0,
            tau_slope: 0.0,
            p_intercept: 0.5,
            p_slope: 0.0,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzScenario {
    pub design: DesignSpec,
    pub outcomes: OutcomeTable,
    /// Units sorted by covariate: planted pairs are adjacent.
    pub planted_order: Vec<usize>,
    /// `M_i = (f + tau)/p + f/(1 - p)` at each unit.
    pub effective_weights: Vec<f64>,
    /// Smallest and largest |dM/dV| over the covariate range.
    pub weight_lipschitz: (f64, f64),
}

/// Build the planted-pairs scenario.
pub fn generate_lipschitz_scenario(params: &LipschitzParams) -> Result<LipschitzScenario> {
    let LipschitzParams {
        pairs,
        delta,
        spacing,
        ..
    } = *params;
    if pairs < 1 || !(delta >= 0.0) || !(spacing > 0.0) {
        return Err(Error::InvalidParams(
            "need at least one pair, delta >= 0 and spacing > 0".into(),
        ));
    }
    if delta >= spacing {
        return Err(Error::InvalidParams(format!(
            "intra-pair gap {delta} must be smaller than the inter-pair gap {spacing}"
        )));
    }
    let n = 2 * pairs;
    let positions: Vec<f64> = (0..n)
        .map(|u| (u / 2) as f64 * (spacing + delta) + (u % 2) as f64 * delta)
        .collect();
    let f = |x: f64| params.f_intercept + params.f_slope * x;
    let tau = |x: f64| params.tau_intercept + params.tau_slope * x;
    let raw_p: Vec<f64> = positions
        .iter()
        .map(|&x| params.p_intercept + params.p_slope * x)
        .collect();
    // shift the intercept so the targets sum to an integer budget
    let sum: f64 = raw_p.iter().sum();
    let budget = sum.round().max(1.0);
    let shift = (budget - sum) / n as f64;
    let p0: Vec<f64> = raw_p.iter().map(|p| p + shift).collect();
    if let Some(&bad) = p0.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::InvalidParams(format!(
            "propensity {bad} leaves (0, 1); reduce p_slope or move p_intercept"
        )));
    }
    let p_at = |x: f64| params.p_intercept + shift + params.p_slope * x;
    let weight = |x: f64| {
        let p = p_at(x);
        (f(x) + tau(x)) / p + f(x) / (1.0 - p)
    };
    let y0: Vec<f64> = positions.iter().map(|&x| f(x)).collect();
    let y1: Vec<f64> = positions.iter().map(|&x| f(x) + tau(x)).collect();
    if y0.iter().chain(&y1).any(|&y| y < 0.0) {
        return Err(Error::InvalidParams("outcomes must be nonnegative".into()));
    }
    let effective_weights: Vec<f64> = positions.iter().map(|&x| weight(x)).collect();

    // |dM/dV| over the covariate range, by central differences on a grid
    let (lo, hi) = (positions[0], positions[n - 1]);
    let steps = 2000;
    let h = ((hi - lo) / steps as f64).max(1e-6) * 1e-3;
    let mut min_slope = f64::INFINITY;
    let mut max_slope: f64 = 0.0;
    let mut signs = (false, false);
    for s in 0..=steps {
        let x = lo + (hi - lo) * s as f64 / steps as f64;
        let d = (weight(x + h) - weight(x - h)) / (2.0 * h);
        if d > 1e-12 {
            signs.0 = true;
        } else if d < -1e-12 {
            signs.1 = true;
        }
        min_slope = min_slope.min(d.abs());
        max_slope = max_slope.max(d.abs());
    }
    if max_slope > 1e-9 {
        if signs.0 && signs.1 {
            return Err(Error::InvalidParams(
                "effective weight is not monotone in the covariate (not bi-Lipschitz)".into(),
            ));
        }
        if max_slope * delta >= min_slope * spacing {
            return Err(Error::InvalidParams(format!(
                "pairing condition fails: L_M * delta = {} >= l_M * c = {}",
                max_slope * delta,
                min_slope * spacing
            )));
        }
    } else {
        min_slope = 0.0;
        max_slope = 0.0;
    }
    let design = validate_design(
        DesignSpec::new(p0, budget as usize).with_covariates(Covariates::from_column(&positions)),
    )?;
    Ok(LipschitzScenario {
        design,
        outcomes: OutcomeTable::new(y0, y1)?,
        planted_order: (0..n).collect(),
        effective_weights,
        weight_lipschitz: (min_slope, max_slope),
    })
}
