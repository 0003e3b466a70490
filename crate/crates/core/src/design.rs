//! Shared domain types: designs, assignment draws and their swap traces,
//! potential-outcome tables, and estimate reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sum(p0) - B|`.
pub const BUDGET_TOL: f64 = 1e-9;
/// Entries this close to 0 or 1 are snapped exactly.
pub const SNAP_TOL: f64 = 1e-12;

/// Row-major `n x k` covariate matrix; row `i` is unit `i`'s covariate vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Covariates {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "covariate entries",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Covariates { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    what: "covariate columns",
                    expected: cols,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Covariates {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// One covariate per unit.
    pub fn from_column(values: &[f64]) -> Self {
        Covariates {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, idx: &[usize]) -> Covariates {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Covariates {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Target treatment probabilities, the exact budget, and optional covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub p0: Vec<f64>,
    pub budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Covariates>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_ids: Option<Vec<String>>,
}

impl DesignSpec {
    pub fn new(p0: Vec<f64>, budget: usize) -> Self {
        DesignSpec {
            p0,
            budget,
            covariates: None,
            unit_ids: None,
        }
    }

    pub fn with_covariates(mut self, covariates: Covariates) -> Self {
        self.covariates = Some(covariates);
        self
    }

    pub fn n(&self) -> usize {
        self.p0.len()
    }
}

fn snap(p: f64) -> f64 {
    if p.abs() <= SNAP_TOL + f64::EPSILON {
        0.0
    } else if (1.0 - p).abs() <= SNAP_TOL + f64::EPSILON {
        1.0
    } else {
        p
    }
}

/// Check a design and snap near-integral entries.
///
/// Entries within `SNAP_TOL` of 0 or 1 become exactly 0 or 1; the snapped
/// vector must sum to the budget within `BUDGET_TOL`.
pub fn validate_design(spec: DesignSpec) -> Result<DesignSpec> {
    let n = spec.p0.len();
    if n == 0 {
        return Err(Error::DimensionMismatch {
            what: "units",
            expected: 1,
            found: 0,
        });
    }
    if let Some(v) = &spec.covariates {
        if v.rows() != n {
            return Err(Error::DimensionMismatch {
                what: "covariate rows",
                expected: n,
                found: v.rows(),
            });
        }
        if let Some(bad) = v.as_slice().iter().find(|x| !x.is_finite()) {
            return Err(Error::OutOfRange {
                what: "covariate",
                value: *bad,
            });
        }
    }
    if let Some(ids) = &spec.unit_ids {
        if ids.len() != n {
            return Err(Error::DimensionMismatch {
                what: "unit ids",
                expected: n,
                found: ids.len(),
            });
        }
    }
    let mut p0 = Vec::with_capacity(n);
    for &p in &spec.p0 {
        if !p.is_finite() || !(-SNAP_TOL..=1.0 + SNAP_TOL).contains(&p) {
            return Err(Error::OutOfRange {
                what: "target probability",
                value: p,
            });
        }
        p0.push(snap(p));
    }
    let sum: f64 = p0.iter().sum();
    if (sum - spec.budget as f64).abs() > BUDGET_TOL {
        return Err(Error::BudgetMismatch {
            sum,
            budget: spec.budget,
        });
    }
    Ok(DesignSpec { p0, ..spec })
}

/// Covariance of the two final indicators produced by one swap of `(p_i, p_j)`.
///
/// `-p_i p_j` when `p_i + p_j <= 1`, otherwise `-(1 - p_i)(1 - p_j)`.
pub fn pair_covariance(p_i: f64, p_j: f64) -> Result<f64> {
    for p in [p_i, p_j] {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::OutOfRange {
                what: "fractional probability",
                value: p,
            });
        }
    }
    Ok(pair_covariance_unchecked(p_i, p_j))
}

#[inline]
pub(crate) fn pair_covariance_unchecked(p_i: f64, p_j: f64) -> f64 {
    if p_i + p_j <= 1.0 {
        -p_i * p_j
    } else {
        -(1.0 - p_i) * (1.0 - p_j)
    }
}

/// Which assignment mechanism produced a draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Swap,
    CovariateSwap,
    Bernoulli,
    RejectionBudget,
    Srs,
    Rerandomized,
}

impl Mechanism {
    /// Whether every draw treats exactly `B` units.
    pub fn is_budget_exact(self) -> bool {
        matches!(
            self,
            Mechanism::Swap | Mechanism::CovariateSwap | Mechanism::RejectionBudget | Mechanism::Srs
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapCase {
    SumLe1,
    SumGt1,
}

/// Which unit received the mass (`sum <= 1`) or was rounded up to 1 (`sum > 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapBranch {
    IWon,
    JWon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwapRecord {
    pub step: usize,
    pub i: usize,
    pub j: usize,
    pub p_i: f64,
    pub p_j: f64,
    pub case: SwapCase,
    pub branch: SwapBranch,
}

/// Ordered list of the swaps executed while rounding one draw.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SwapTrace {
    pub records: Vec<SwapRecord>,
}

impl SwapTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The swapped index pairs, in execution order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.records.iter().map(|r| (r.i, r.j))
    }
}

/// A binary assignment together with what is needed to analyse it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentDraw {
    pub assignment: Vec<u8>,
    pub trace: SwapTrace,
    pub mechanism: Mechanism,
    /// Estimated realized propensities (re-randomization only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effective_p: Option<Vec<f64>>,
    /// Bernoulli draws consumed (rejection sampling only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tries: Option<usize>,
}

impl AssignmentDraw {
    pub fn treated(&self) -> usize {
        self.assignment.iter().map(|&a| a as usize).sum()
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }
}

/// Potential outcomes for every unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTable {
    y0: Vec<f64>,
    y1: Vec<f64>,
}

impl OutcomeTable {
    pub fn new(y0: Vec<f64>, y1: Vec<f64>) -> Result<Self> {
        if y0.len() != y1.len() {
            return Err(Error::DimensionMismatch {
                what: "treated outcomes",
                expected: y0.len(),
                found: y1.len(),
            });
        }
        if let Some(bad) = y0.iter().chain(&y1).find(|y| !y.is_finite()) {
            return Err(Error::OutOfRange {
                what: "outcome",
                value: *bad,
            });
        }
        Ok(OutcomeTable { y0, y1 })
    }

    pub fn y0(&self) -> &[f64] {
        &self.y0
    }

    pub fn y1(&self) -> &[f64] {
        &self.y1
    }

    pub fn n(&self) -> usize {
        self.y0.len()
    }

    /// True iff every potential outcome is nonnegative.
    pub fn nonnegative(&self) -> bool {
        self.y0.iter().chain(&self.y1).all(|&y| y >= 0.0)
    }

    /// Fraction of potential outcomes (over both arms) that are negative.
    pub fn negative_fraction(&self) -> f64 {
        let neg = self.y0.iter().chain(&self.y1).filter(|&&y| y < 0.0).count();
        neg as f64 / (2 * self.n()).max(1) as f64
    }

    /// Observed outcomes `Y_i = Y_i(A_i)`.
    pub fn observed(&self, assignment: &[u8]) -> Result<Vec<f64>> {
        if assignment.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "assignments",
                expected: self.n(),
                found: assignment.len(),
            });
        }
        Ok(assignment
            .iter()
            .zip(self.y0.iter().zip(&self.y1))
            .map(|(&a, (&y0, &y1))| if a == 1 { y1 } else { y0 })
            .collect())
    }

    /// Shift both arms by the same constant so the minimum outcome is zero.
    /// Treatment effects are unchanged.
    pub fn shifted_nonnegative(&self) -> OutcomeTable {
        let min = self
            .y0
            .iter()
            .chain(&self.y1)
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min >= 0.0 {
            return self.clone();
        }
        OutcomeTable {
            y0: self.y0.iter().map(|y| y - min).collect(),
            y1: self.y1.iter().map(|y| y - min).collect(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> OutcomeTable {
        OutcomeTable {
            y0: idx.iter().map(|&i| self.y0[i]).collect(),
            y1: idx.iter().map(|&i| self.y1[i]).collect(),
        }
    }
}

/// Sample average treatment effect, `mean(Y(1) - Y(0))`.
pub fn sate(outcomes: &OutcomeTable) -> f64 {
    let n = outcomes.n();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = outcomes
        .y1
        .iter()
        .zip(&outcomes.y0)
        .map(|(y1, y0)| y1 - y0)
        .sum();
    total / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub tau_hat: f64,
    pub sigma_hat_sq: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    pub n: usize,
    pub method: String,
    /// Set when the raw variance estimate was negative and clamped to zero.
    pub clamped: bool,
}
