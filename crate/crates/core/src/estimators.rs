//! Inverse-propensity-weighted effect estimators, the trace-aware variance
//! estimator, and normal-approximation confidence intervals.

use serde::{Deserialize, Serialize};

use crate::design::{
    pair_covariance_unchecked, AssignmentDraw, DesignSpec, EstimateReport, OutcomeTable, SwapTrace,
};
use crate::error::{Error, Result};

/// What an analyst sees after one assignment: who was treated, the observed
/// outcomes, the probabilities used for weighting, and the swap trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedStudy {
    pub assignment: Vec<u8>,
    pub outcomes: Vec<f64>,
    pub weights: Vec<f64>,
    pub trace: SwapTrace,
}

impl ObservedStudy {
    pub fn new(
        assignment: Vec<u8>,
        outcomes: Vec<f64>,
        weights: Vec<f64>,
        trace: SwapTrace,
    ) -> Result<Self> {
        let n = assignment.len();
        for (what, len) in [("observed outcomes", outcomes.len()), ("weights", weights.len())] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    found: len,
                });
            }
        }
        if let Some(&a) = assignment.iter().find(|&&a| a > 1) {
            return Err(Error::OutOfRange {
                what: "assignment indicator",
                value: f64::from(a),
            });
        }
        if let Some(&w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::OutOfRange {
                what: "weighting probability",
                value: w,
            });
        }
        for r in &trace.records {
            if r.i >= n || r.j >= n {
                return Err(Error::DimensionMismatch {
                    what: "units referenced by trace",
                    expected: n,
                    found: r.i.max(r.j) + 1,
                });
            }
        }
        Ok(ObservedStudy {
            assignment,
            outcomes,
            weights,
            trace,
        })
    }

    /// Observe `draw` on `outcomes`, weighting by the draw's effective
    /// propensities when it carries them and by the design's targets otherwise.
    pub fn from_draw(draw: &AssignmentDraw, outcomes: &OutcomeTable, design: &DesignSpec) -> Result<Self> {
        let weights = draw.effective_p.clone().unwrap_or_else(|| design.p0.clone());
        Self::with_weights(draw, outcomes, weights)
    }

    pub fn with_weights(draw: &AssignmentDraw, outcomes: &OutcomeTable, weights: Vec<f64>) -> Result<Self> {
        let observed = outcomes.observed(&draw.assignment)?;
        Self::new(draw.assignment.clone(), observed, weights, draw.trace.clone())
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    /// Inverse weight on the realized branch of unit `i`.
    fn realized_inverse(&self, i: usize) -> Result<f64> {
        let p = self.weights[i];
        let q = if self.assignment[i] == 1 { p } else { 1.0 - p };
        if q <= 0.0 {
            return Err(Error::DegenerateWeight { unit: i, p });
        }
        Ok(1.0 / q)
    }
}

/// Horvitz-Thompson style IPW estimate of the average treatment effect.
pub fn ipw_estimate(study: &ObservedStudy) -> Result<f64> {
    let n = study.n();
    let mut total = 0.0;
    for i in 0..n {
        let w = study.realized_inverse(i)?;
        let y = study.outcomes[i];
        if study.assignment[i] == 1 {
            total += y * w;
        } else {
            total -= y * w;
        }
    }
    Ok(total / n as f64)
}

/// Hájek (self-normalized) IPW estimate: difference of weighted arm means.
pub fn self_normalized_ipw(study: &ObservedStudy) -> Result<f64> {
    let (mut num1, mut den1, mut num0, mut den0) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..study.n() {
        let w = study.realized_inverse(i)?;
        if study.assignment[i] == 1 {
            num1 += w * study.outcomes[i];
            den1 += w;
        } else {
            num0 += w * study.outcomes[i];
            den0 += w;
        }
    }
    if den1 == 0.0 {
        return Err(Error::EmptyArm { arm: "treated" });
    }
    if den0 == 0.0 {
        return Err(Error::EmptyArm { arm: "control" });
    }
    Ok(num1 / den1 - num0 / den0)
}

/// Linearized variance of [`self_normalized_ipw`] under independent
/// assignment: weighted squared residuals from each arm mean.
pub fn self_normalized_variance(study: &ObservedStudy) -> Result<f64> {
    let mut arms = [(0.0, 0.0); 2]; // (sum w y, sum w) per arm
    let mut inv = Vec::with_capacity(study.n());
    for i in 0..study.n() {
        let w = study.realized_inverse(i)?;
        inv.push(w);
        let a = study.assignment[i] as usize;
        arms[a].0 += w * study.outcomes[i];
        arms[a].1 += w;
    }
    if arms[1].1 == 0.0 {
        return Err(Error::EmptyArm { arm: "treated" });
    }
    if arms[0].1 == 0.0 {
        return Err(Error::EmptyArm { arm: "control" });
    }
    let means = [arms[0].0 / arms[0].1, arms[1].0 / arms[1].1];
    let mut ss = [0.0; 2];
    for i in 0..study.n() {
        let a = study.assignment[i] as usize;
        let r = inv[i] * (study.outcomes[i] - means[a]);
        ss[a] += r * r;
    }
    Ok(ss[1] / (arms[1].1 * arms[1].1) + ss[0] / (arms[0].1 * arms[0].1))
}

/// How the pairwise term of the variance estimator weights each swapped pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairTerm {
    /// `rho_ij * M_i * M_j` with `M_i = mu1/p_i + mu0/(1 - p_i)` and the arm
    /// means `mu1`, `mu0` estimated by inverse weighting over all units.
    #[default]
    PlugIn,
    /// `rho_ij * u_i * u_j` with `u_i = A_i Y_i / p_i + (1 - A_i) Y_i / (1 - p_i)`.
    /// Overstates the variance whenever weights differ from 1/2.
    Observed,
}

/// Which probabilities feed `rho_ij` for a swapped pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoSource {
    /// The pair's weighting (target) probabilities.
    #[default]
    Target,
    /// The live values the pair had when it was swapped.
    SwapTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VarianceOptions {
    pub pair_term: PairTerm,
    pub rho_source: RhoSource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceEstimate {
    /// Clamped at zero.
    pub value: f64,
    pub raw: f64,
    pub clamped: bool,
}

/// Variance estimate of the IPW effect estimate with default options.
pub fn variance_estimate(study: &ObservedStudy) -> Result<f64> {
    variance_estimate_with(study, &VarianceOptions::default()).map(|v| v.value)
}

/// Estimate `Var(tau_hat)`: the independent-assignment part minus `n tau_hat^2`,
/// plus twice the pairwise covariance term summed over the swap trace, all over `n^2`.
pub fn variance_estimate_with(study: &ObservedStudy, opts: &VarianceOptions) -> Result<VarianceEstimate> {
    let n = study.n();
    let nf = n as f64;
    let mut squares = 0.0;
    let mut signed = 0.0;
    let mut mu1 = 0.0;
    let mut mu0 = 0.0;
    let mut unsigned = vec![0.0; n];
    for i in 0..n {
        let w = study.realized_inverse(i)?;
        let y = study.outcomes[i];
        squares += (y * w) * (y * w);
        unsigned[i] = y * w;
        if study.assignment[i] == 1 {
            signed += y * w;
            mu1 += y * w;
        } else {
            signed -= y * w;
            mu0 += y * w;
        }
    }
    let tau = signed / nf;
    mu1 /= nf;
    mu0 /= nf;

    let mut pairwise = 0.0;
    for r in &study.trace.records {
        let (p_i, p_j) = (study.weights[r.i], study.weights[r.j]);
        let rho = match opts.rho_source {
            RhoSource::Target => {
                if !(p_i > 0.0 && p_i < 1.0 && p_j > 0.0 && p_j < 1.0) {
                    return Err(Error::DegenerateWeight {
                        unit: if p_i > 0.0 && p_i < 1.0 { r.j } else { r.i },
                        p: if p_i > 0.0 && p_i < 1.0 { p_j } else { p_i },
                    });
                }
                pair_covariance_unchecked(p_i, p_j)
            }
            RhoSource::SwapTime => pair_covariance_unchecked(r.p_i, r.p_j),
        };
        let product = match opts.pair_term {
            PairTerm::PlugIn => {
                let m_i = mu1 / p_i + mu0 / (1.0 - p_i);
                let m_j = mu1 / p_j + mu0 / (1.0 - p_j);
                m_i * m_j
            }
            PairTerm::Observed => unsigned[r.i] * unsigned[r.j],
        };
        pairwise += rho * product;
    }
    let raw = (squares - nf * tau * tau + 2.0 * pairwise) / (nf * nf);
    Ok(VarianceEstimate {
        value: raw.max(0.0),
        raw,
        clamped: raw < 0.0,
    })
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal quantile: Acklam's rational approximation polished by
/// one Halley step against [`normal_cdf`].
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let low = 0.024_25;
    let x = if p < low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let density = (-0.5 * x * x - 0.918_938_533_204_672_8).exp();
    let e = normal_cdf(x) - p;
    let u = e / density;
    x - u / (1.0 + 0.5 * x * u)
}

/// `tau_hat +/- z_{1 - alpha/2} * sqrt(sigma_hat_sq)`.
pub fn confidence_interval(tau_hat: f64, sigma_hat_sq: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidLevel(alpha));
    }
    if !(sigma_hat_sq >= 0.0) {
        return Err(Error::OutOfRange {
            what: "variance estimate",
            value: sigma_hat_sq,
        });
    }
    let half = normal_quantile(1.0 - alpha / 2.0) * sigma_hat_sq.sqrt();
    Ok((tau_hat - half, tau_hat + half))
}

/// IPW estimate with every unit weighted by the simple-random-sampling
/// inclusion probability `B / n`.
pub fn ht_uniform_estimate(outcomes: &[f64], assignment: &[u8], budget: usize) -> Result<f64> {
    let n = assignment.len();
    if outcomes.len() != n {
        return Err(Error::DimensionMismatch {
            what: "observed outcomes",
            expected: n,
            found: outcomes.len(),
        });
    }
    let treated: usize = assignment.iter().map(|&a| a as usize).sum();
    if treated != budget {
        return Err(Error::BudgetMismatch {
            sum: treated as f64,
            budget,
        });
    }
    if budget == 0 || budget == n {
        return Err(Error::DegenerateWeight {
            unit: 0,
            p: budget as f64 / n.max(1) as f64,
        });
    }
    let p = budget as f64 / n as f64;
    let study = ObservedStudy::new(
        assignment.to_vec(),
        outcomes.to_vec(),
        vec![p; n],
        SwapTrace::default(),
    )?;
    ipw_estimate(&study)
}

/// Point estimate, variance estimate and interval in one report.
pub fn estimate_report(
    study: &ObservedStudy,
    alpha: f64,
    opts: &VarianceOptions,
    method: &str,
) -> Result<EstimateReport> {
    let tau_hat = ipw_estimate(study)?;
    let var = variance_estimate_with(study, opts)?;
    let (ci_low, ci_high) = confidence_interval(tau_hat, var.value, alpha)?;
    Ok(EstimateReport {
        tau_hat,
        sigma_hat_sq: var.value,
        ci_low,
        ci_high,
        alpha,
        n: study.n(),
        method: method.to_string(),
        clamped: var.clamped,
    })
}
