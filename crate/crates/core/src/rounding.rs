//! Swap rounding for the budget (B-uniform) constraint.
//!
//! Each swap takes two fractional coordinates and drives at least one of
//! them to 0 or 1 while keeping their sum fixed. The branch probabilities
//! make every step a martingale, so the final indicator of each unit is
//! treated with exactly its target probability, and the total stays at `B`.
//!
//! Pairs are chosen by walking a unit order: the one coordinate still
//! fractional after a swap (the carrier) meets the next fractional unit in
//! the order. The strategies differ only in the order walked.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{
    validate_design, AssignmentDraw, DesignSpec, Mechanism, SwapBranch, SwapCase, SwapRecord,
    SwapTrace, SNAP_TOL,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingStrategy {
    /// Walk units in index order.
    SequentialChain,
    /// Walk a fresh uniform permutation drawn from the draw's stream.
    RandomChain,
    /// Walk an explicit permutation (e.g. a covariate ordering).
    OrderedChain(Vec<usize>),
}

impl PairingStrategy {
    /// The unit order walked for one draw.
    pub fn order<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        match self {
            PairingStrategy::SequentialChain => Ok((0..n).collect()),
            PairingStrategy::RandomChain => {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(rng);
                Ok(order)
            }
            PairingStrategy::OrderedChain(perm) => {
                check_permutation(perm, n)?;
                Ok(perm.clone())
            }
        }
    }

    fn mechanism(&self) -> Mechanism {
        match self {
            PairingStrategy::OrderedChain(_) => Mechanism::CovariateSwap,
            _ => Mechanism::Swap,
        }
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::DimensionMismatch {
            what: "permutation entries",
            expected: n,
            found: perm.len(),
        });
    }
    let mut seen = vec![false; n];
    for &k in perm {
        if k >= n || seen[k] {
            return Err(Error::InvalidParams(format!(
                "ordering is not a permutation of 0..{n} (entry {k})"
            )));
        }
        seen[k] = true;
    }
    Ok(())
}

/// Result of one swap between two fractional coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwapOutcome {
    pub new_i: f64,
    pub new_j: f64,
    pub case: SwapCase,
    pub branch: SwapBranch,
}

#[inline]
fn snap_unit(x: f64) -> f64 {
    if x.abs() <= SNAP_TOL {
        0.0
    } else if (1.0 - x).abs() <= SNAP_TOL {
        1.0
    } else {
        x
    }
}

#[inline]
fn is_fractional(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

#[inline]
fn swap_step(p_i: f64, p_j: f64, u: f64) -> SwapOutcome {
    let sum = p_i + p_j;
    if sum <= 1.0 {
        // all mass moves to one side
        let (new_i, new_j, branch) = if u * sum < p_i {
            (sum, 0.0, SwapBranch::IWon)
        } else {
            (0.0, sum, SwapBranch::JWon)
        };
        SwapOutcome {
            new_i: snap_unit(new_i),
            new_j: snap_unit(new_j),
            case: SwapCase::SumLe1,
            branch,
        }
    } else {
        // one side rounds up to 1, the other keeps sum - 1
        let rest = sum - 1.0;
        let (new_i, new_j, branch) = if u * (2.0 - sum) < 1.0 - p_j {
            (1.0, rest, SwapBranch::IWon)
        } else {
            (rest, 1.0, SwapBranch::JWon)
        };
        SwapOutcome {
            new_i: snap_unit(new_i),
            new_j: snap_unit(new_j),
            case: SwapCase::SumGt1,
            branch,
        }
    }
}

/// One randomized swap of `(p_i, p_j)`; both inputs must lie strictly in (0, 1).
pub fn single_swap<R: Rng + ?Sized>(p_i: f64, p_j: f64, rng: &mut R) -> Result<SwapOutcome> {
    for p in [p_i, p_j] {
        if !is_fractional(p) {
            return Err(Error::OutOfRange {
                what: "fractional probability",
                value: p,
            });
        }
    }
    Ok(swap_step(p_i, p_j, rng.random::<f64>()))
}

/// Walks a unit order and hands out the next `(carrier, next fractional)` pair.
#[derive(Debug, Clone)]
pub struct ChainCursor {
    order: Vec<usize>,
    pos: usize,
    carrier: Option<usize>,
    last_partner: Option<usize>,
}

impl ChainCursor {
    pub fn new(order: Vec<usize>) -> Self {
        ChainCursor {
            order,
            pos: 0,
            carrier: None,
            last_partner: None,
        }
    }

    /// Next pair to swap given which units are currently fractional, or
    /// `None` once fewer than two fractional units remain along the walk.
    pub fn next_pair(&mut self, fractional: &[bool]) -> Option<(usize, usize)> {
        match self.carrier {
            Some(c) if fractional[c] => {}
            _ => self.carrier = self.last_partner.filter(|&k| fractional[k]),
        }
        self.last_partner = None;
        while self.pos < self.order.len() {
            let k = self.order[self.pos];
            self.pos += 1;
            if !fractional[k] {
                continue;
            }
            match self.carrier {
                None => self.carrier = Some(k),
                Some(c) => {
                    self.last_partner = Some(k);
                    return Some((c, k));
                }
            }
        }
        None
    }

    /// The fractional unit left over when the walk ends, if any.
    pub fn carrier(&self) -> Option<usize> {
        self.carrier
    }
}

/// The pair sequence a strategy would produce for a fixed fractional mask,
/// assuming the earlier unit of each pair keeps carrying. Mostly useful to
/// inspect what a strategy does; rounding itself uses [`ChainCursor`].
pub fn chain_pairs(order: &[usize], fractional_mask: &[bool]) -> Vec<(usize, usize)> {
    let frac: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&k| fractional_mask[k])
        .collect();
    match frac.split_first() {
        Some((&first, rest)) => rest.iter().map(|&k| (first, k)).collect(),
        None => Vec::new(),
    }
}

/// Round `p` in place along `order`; returns the executed swaps when `record`.
pub(crate) fn round_in_place<R: Rng + ?Sized>(
    p: &mut [f64],
    order: &[usize],
    rng: &mut R,
    record: bool,
) -> Vec<SwapRecord> {
    let mut fractional: Vec<bool> = p.iter().map(|&x| is_fractional(x)).collect();
    let mut cursor = ChainCursor::new(order.to_vec());
    let mut records = Vec::new();
    let mut step = 0;
    while let Some((i, j)) = cursor.next_pair(&fractional) {
        let (p_i, p_j) = (p[i], p[j]);
        let out = swap_step(p_i, p_j, rng.random::<f64>());
        p[i] = out.new_i;
        p[j] = out.new_j;
        fractional[i] = is_fractional(out.new_i);
        fractional[j] = is_fractional(out.new_j);
        if record {
            records.push(SwapRecord {
                step,
                i,
                j,
                p_i,
                p_j,
                case: out.case,
                branch: out.branch,
            });
        }
        step += 1;
    }
    // Only floating-point residue can remain; the budget is integral.
    for x in p.iter_mut() {
        *x = x.round();
    }
    records
}

/// Round a design to a binary assignment treating exactly `budget` units.
pub fn swap_round<R: Rng + ?Sized>(
    spec: &DesignSpec,
    strategy: &PairingStrategy,
    rng: &mut R,
) -> Result<AssignmentDraw> {
    let spec = validate_design(spec.clone())?;
    let order = strategy.order(spec.n(), rng)?;
    Ok(swap_round_ordered(&spec.p0, &order, strategy.mechanism(), rng))
}

/// Fast path for an already validated target vector and a fixed order.
pub fn swap_round_ordered<R: Rng + ?Sized>(
    p0: &[f64],
    order: &[usize],
    mechanism: Mechanism,
    rng: &mut R,
) -> AssignmentDraw {
    let mut p = p0.to_vec();
    let records = round_in_place(&mut p, order, rng, true);
    AssignmentDraw {
        assignment: p.iter().map(|&x| x as u8).collect(),
        trace: SwapTrace { records },
        mechanism,
        effective_p: None,
        tries: None,
    }
}
