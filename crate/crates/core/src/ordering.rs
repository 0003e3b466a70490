//! Covariate ordering: a short open Hamiltonian path through covariate space.
//!
//! Built greedily by nearest neighbour and then improved with 2-opt segment
//! reversals. Feeding the resulting permutation to
//! [`PairingStrategy::OrderedChain`](crate::rounding::PairingStrategy)
//! makes swap rounding pair units with similar covariates.

use serde::{Deserialize, Serialize};

use crate::design::Covariates;
use crate::error::{Error, Result};
use crate::rounding::check_permutation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartRule {
    /// The unit closest to the covariate centroid (lowest index on ties).
    CentroidNearest,
    Index(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderingConfig {
    pub start_rule: StartRule,
    pub two_opt_max_passes: usize,
    /// Scale each covariate column to unit variance before measuring distances.
    pub standardize: bool,
}

impl Default for OrderingConfig {
    fn default() -> Self {
        OrderingConfig {
            start_rule: StartRule::CentroidNearest,
            two_opt_max_passes: 50,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingResult {
    pub permutation: Vec<usize>,
    pub path_length: f64,
    /// Full 2-opt sweeps performed (the last one finds no improvement unless
    /// the pass limit was hit).
    pub improvement_passes: usize,
    /// Length of the nearest-neighbour path before 2-opt.
    pub greedy_length: f64,
}

#[inline]
fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Sum of Euclidean distances between consecutive units along `perm`.
pub fn path_length(v: &Covariates, perm: &[usize]) -> Result<f64> {
    check_permutation(perm, v.rows())?;
    Ok(perm
        .windows(2)
        .map(|w| dist(v.row(w[0]), v.row(w[1])))
        .sum())
}

fn standardized(v: &Covariates) -> Covariates {
    let (n, k) = (v.rows(), v.cols());
    let mut data = v.as_slice().to_vec();
    for c in 0..k {
        let mean = (0..n).map(|i| v.row(i)[c]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (v.row(i)[c] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for i in 0..n {
            let x = &mut data[i * k + c];
            *x = if sd > 0.0 { (*x - mean) / sd } else { 0.0 };
        }
    }
    Covariates::new(n, k, data).expect("same shape")
}

fn centroid_nearest(v: &Covariates) -> usize {
    let (n, k) = (v.rows(), v.cols());
    let mut centroid = vec![0.0; k];
    for i in 0..n {
        for (c, x) in centroid.iter_mut().zip(v.row(i)) {
            *c += x;
        }
    }
    centroid.iter_mut().for_each(|c| *c /= n as f64);
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for i in 0..n {
        let d = dist(v.row(i), &centroid);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn nearest_neighbor_path(v: &Covariates, start: usize) -> Vec<usize> {
    let n = v.rows();
    let mut visited = vec![false; n];
    let mut path = Vec::with_capacity(n);
    let mut cur = start;
    visited[cur] = true;
    path.push(cur);
    for _ in 1..n {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for j in 0..n {
            if !visited[j] {
                let d = dist(v.row(cur), v.row(j));
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
        }
        visited[best] = true;
        path.push(best);
        cur = best;
    }
    path
}

/// Length change from reversing `path[i..=j]` in an open path.
#[inline]
fn reversal_gain(v: &Covariates, path: &[usize], i: usize, j: usize) -> f64 {
    let n = path.len();
    let mut before = 0.0;
    let mut after = 0.0;
    if i > 0 {
        before += dist(v.row(path[i - 1]), v.row(path[i]));
        after += dist(v.row(path[i - 1]), v.row(path[j]));
    }
    if j + 1 < n {
        before += dist(v.row(path[j]), v.row(path[j + 1]));
        after += dist(v.row(path[i]), v.row(path[j + 1]));
    }
    before - after
}

fn improves(gain: f64, scale: f64) -> bool {
    gain > 1e-12 * scale.max(1.0)
}

/// Run 2-opt sweeps until no reversal shortens the path or `max_passes` is hit.
pub fn two_opt(v: &Covariates, path: &mut [usize], max_passes: usize) -> usize {
    let n = path.len();
    let mut passes = 0;
    while passes < max_passes {
        passes += 1;
        let scale: f64 = path.windows(2).map(|w| dist(v.row(w[0]), v.row(w[1]))).sum();
        let mut improved = false;
        for i in 0..n.saturating_sub(1) {
            for j in i + 1..n {
                if improves(reversal_gain(v, path, i, j), scale) {
                    path[i..=j].reverse();
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    passes
}

/// Whether some single segment reversal would still shorten the path.
pub fn has_improving_reversal(v: &Covariates, path: &[usize]) -> bool {
    let scale: f64 = path.windows(2).map(|w| dist(v.row(w[0]), v.row(w[1]))).sum();
    let n = path.len();
    (0..n).any(|i| (i + 1..n).any(|j| improves(reversal_gain(v, path, i, j), scale)))
}

/// Order units along a short path through covariate space.
pub fn order_covariates(v: &Covariates, config: &OrderingConfig) -> Result<OrderingResult> {
    let n = v.rows();
    if n == 0 {
        return Err(Error::DimensionMismatch {
            what: "units",
            expected: 1,
            found: 0,
        });
    }
    if let Some(bad) = v.as_slice().iter().find(|x| !x.is_finite()) {
        return Err(Error::OutOfRange {
            what: "covariate",
            value: *bad,
        });
    }
    let scaled;
    let metric = if config.standardize {
        scaled = standardized(v);
        &scaled
    } else {
        v
    };
    let start = match config.start_rule {
        StartRule::CentroidNearest => centroid_nearest(metric),
        StartRule::Index(i) if i < n => i,
        StartRule::Index(i) => {
            return Err(Error::InvalidParams(format!(
                "start index {i} out of range for {n} units"
            )))
        }
    };
    let mut permutation = nearest_neighbor_path(metric, start);
    let greedy_length = path_length(metric, &permutation)?;
    let improvement_passes = two_opt(metric, &mut permutation, config.two_opt_max_passes);
    let path_length = path_length(metric, &permutation)?;
    Ok(OrderingResult {
        permutation,
        path_length,
        improvement_passes,
        greedy_length,
    })
}
