//! Comparison assignment mechanisms: independent Bernoulli, budget-limited
//! rejection Bernoulli, simple random sampling, and best-of-K
//! re-randomization on Mahalanobis balance.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{validate_design, AssignmentDraw, DesignSpec, Mechanism, SwapTrace};
use crate::error::{Error, Result};

fn draw(assignment: Vec<u8>, mechanism: Mechanism) -> AssignmentDraw {
    AssignmentDraw {
        assignment,
        trace: SwapTrace::default(),
        mechanism,
        effective_p: None,
        tries: None,
    }
}

fn coin_flips<R: Rng + ?Sized>(p0: &[f64], rng: &mut R) -> Vec<u8> {
    p0.iter()
        .map(|&p| u8::from(rng.random::<f64>() < p))
        .collect()
}

fn check_probabilities(p0: &[f64]) -> Result<()> {
    match p0.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        Some(&p) => Err(Error::OutOfRange {
            what: "target probability",
            value: p,
        }),
        None => Ok(()),
    }
}

/// Independent coin per unit; the budget is not enforced.
pub fn bernoulli_assign<R: Rng + ?Sized>(p0: &[f64], rng: &mut R) -> Result<AssignmentDraw> {
    check_probabilities(p0)?;
    Ok(draw(coin_flips(p0, rng), Mechanism::Bernoulli))
}

pub const DEFAULT_MAX_TRIES: usize = 100_000;

/// Redraw independent Bernoulli assignments until exactly `budget` are treated.
pub fn rejection_budget_assign<R: Rng + ?Sized>(
    p0: &[f64],
    budget: usize,
    max_tries: usize,
    rng: &mut R,
) -> Result<AssignmentDraw> {
    check_probabilities(p0)?;
    if budget > p0.len() {
        return Err(Error::OutOfRange {
            what: "budget",
            value: budget as f64,
        });
    }
    for tries in 1..=max_tries {
        let a = coin_flips(p0, rng);
        if a.iter().map(|&x| x as usize).sum::<usize>() == budget {
            let mut d = draw(a, Mechanism::RejectionBudget);
            d.tries = Some(tries);
            return Ok(d);
        }
    }
    Err(Error::RejectionLimitExceeded { tries: max_tries })
}

/// Treat a uniformly random subset of exactly `budget` units.
pub fn srs_assign<R: Rng + ?Sized>(n: usize, budget: usize, rng: &mut R) -> Result<AssignmentDraw> {
    if budget > n {
        return Err(Error::OutOfRange {
            what: "budget",
            value: budget as f64,
        });
    }
    let mut a = vec![0u8; n];
    for i in rand::seq::index::sample(rng, n, budget) {
        a[i] = 1;
    }
    Ok(draw(a, Mechanism::Srs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    MinMahalanobis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerandConfig {
    /// Bernoulli candidates drawn per assignment (K).
    pub candidates: usize,
    /// Replays of the whole selection used to estimate effective propensities (R).
    pub effective_p_replications: usize,
    pub selection: Selection,
}

impl Default for RerandConfig {
    fn default() -> Self {
        RerandConfig {
            candidates: 100,
            effective_p_replications: 1000,
            selection: Selection::MinMahalanobis,
        }
    }
}

impl RerandConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates < 1 {
            return Err(Error::InvalidParams("re-randomization needs K >= 1".into()));
        }
        if self.effective_p_replications < 100 {
            return Err(Error::InvalidParams(
                "effective propensities need R >= 100 replays".into(),
            ));
        }
        Ok(())
    }
}

const EMPTY_ARM_REDRAWS: usize = 100;

/// Best-of-K re-randomization for one design.
///
/// Holds the Cholesky factor of the (possibly ridge-regularized) covariate
/// covariance so repeated selections only pay for the candidate draws.
#[derive(Debug, Clone)]
pub struct Rerandomizer {
    p0: Vec<f64>,
    covariates: DMatrix<f64>,
    cov_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    config: RerandConfig,
}

impl Rerandomizer {
    pub fn new(spec: &DesignSpec, config: RerandConfig) -> Result<Self> {
        config.validate()?;
        let spec = validate_design(spec.clone())?;
        let v = spec.covariates.as_ref().ok_or_else(|| {
            Error::InvalidParams("re-randomization needs covariates".into())
        })?;
        let (n, k) = (v.rows(), v.cols());
        if k == 0 {
            return Err(Error::InvalidParams("re-randomization needs at least one covariate".into()));
        }
        let covariates = DMatrix::from_row_slice(n, k, v.as_slice());
        let means = covariates.row_mean();
        let mut centered = covariates.clone();
        for mut row in centered.row_iter_mut() {
            row -= &means;
        }
        let denom = (n.max(2) - 1) as f64;
        let cov = centered.transpose() * &centered / denom;
        let cov_chol = match cov.clone().cholesky() {
            Some(c) if c.l().diagonal().iter().all(|d| *d > 1e-12 * cov.trace().max(1e-300).sqrt()) => c,
            _ => {
                let trace = cov.trace();
                let lambda = if trace > 0.0 { 1e-8 * trace / k as f64 } else { 1e-8 };
                let ridge = cov + DMatrix::identity(k, k) * lambda;
                ridge.cholesky().ok_or(Error::SingularCovariance)?
            }
        };
        Ok(Rerandomizer {
            p0: spec.p0,
            covariates,
            cov_chol,
            config,
        })
    }

    /// Morgan-Rubin balance `n_t n_c / n * d' S^-1 d` of treated-minus-control
    /// covariate means; infinite when an arm is empty.
    pub fn mahalanobis(&self, assignment: &[u8]) -> f64 {
        let (n, k) = self.covariates.shape();
        let mut sum_t = DVector::zeros(k);
        let mut sum_c = DVector::zeros(k);
        let mut n_t = 0usize;
        for (i, &a) in assignment.iter().enumerate() {
            let row = self.covariates.row(i).transpose();
            if a == 1 {
                sum_t += row;
                n_t += 1;
            } else {
                sum_c += row;
            }
        }
        let n_c = n - n_t;
        if n_t == 0 || n_c == 0 {
            return f64::INFINITY;
        }
        let d = sum_t / n_t as f64 - sum_c / n_c as f64;
        let solved = self.cov_chol.solve(&d);
        (n_t as f64 * n_c as f64 / n as f64) * d.dot(&solved)
    }

    fn candidate<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<u8>, f64) {
        let mut a = coin_flips(&self.p0, rng);
        let mut dist = self.mahalanobis(&a);
        let mut redraws = 0;
        while dist.is_infinite() && redraws < EMPTY_ARM_REDRAWS {
            a = coin_flips(&self.p0, rng);
            dist = self.mahalanobis(&a);
            redraws += 1;
        }
        if dist.is_infinite() {
            warn!("re-randomization candidate kept with an empty arm after {EMPTY_ARM_REDRAWS} redraws");
        }
        (a, dist)
    }

    /// Draw K candidates and keep the best balanced one. Returns the
    /// selected assignment, its balance, and every candidate's balance.
    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<u8>, f64, Vec<f64>) {
        let mut best: Option<(Vec<u8>, f64)> = None;
        let mut all = Vec::with_capacity(self.config.candidates);
        for _ in 0..self.config.candidates {
            let (a, d) = self.candidate(rng);
            all.push(d);
            if best.as_ref().is_none_or(|(_, bd)| d < *bd) {
                best = Some((a, d));
            }
        }
        let (a, d) = best.expect("K >= 1");
        (a, d, all)
    }

    /// Frequency of treatment for each unit over R replays of the selection,
    /// clipped to `[1/(2R), 1 - 1/(2R)]`.
    pub fn effective_propensities<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let reps = self.config.effective_p_replications;
        let mut counts = vec![0usize; self.p0.len()];
        for _ in 0..reps {
            let (a, _, _) = self.select(rng);
            for (c, &x) in counts.iter_mut().zip(&a) {
                *c += x as usize;
            }
        }
        let floor = 1.0 / (2.0 * reps as f64);
        counts
            .into_iter()
            .map(|c| (c as f64 / reps as f64).clamp(floor, 1.0 - floor))
            .collect()
    }

    /// One selected assignment tagged with previously estimated effective propensities.
    pub fn assign_with<R: Rng + ?Sized>(&self, effective_p: &[f64], rng: &mut R) -> AssignmentDraw {
        let (a, _, _) = self.select(rng);
        let mut d = draw(a, Mechanism::Rerandomized);
        d.effective_p = Some(effective_p.to_vec());
        d
    }
}

/// Re-randomized assignment with effective propensities estimated on the fly.
pub fn rerandomize_assign<R: Rng + ?Sized>(
    spec: &DesignSpec,
    config: &RerandConfig,
    rng: &mut R,
) -> Result<AssignmentDraw> {
    let rr = Rerandomizer::new(spec, *config)?;
    let effective = rr.effective_propensities(rng);
    Ok(rr.assign_with(&effective, rng))
}
