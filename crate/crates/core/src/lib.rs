//! Budget-exact randomized treatment assignment by swap rounding.
//!
//! Start from per-unit target treatment probabilities `p0` summing to an
//! integer budget `B`. [`rounding::swap_round`] returns a binary assignment
//! that treats exactly `B` units, treats each unit with probability exactly
//! `p0_i`, and induces negative correlation between swapped units. The
//! [`estimators`] module turns the draw into an IPW effect estimate, a
//! variance estimate that uses the recorded swap trace, and a confidence
//! interval. [`ordering`] builds covariate orderings so swaps pair similar
//! units, [`baselines`] holds the comparison mechanisms, [`datagen`] the
//! synthetic and file-based scenarios, and [`harness`] the Monte Carlo
//! study runner.
//!
//! ```
//! use swapround::prelude::*;
//!
//! let design = DesignSpec::new(vec![0.3, 0.7, 0.6, 0.4], 2);
//! let mut rng = SeedStream::new(42).rng();
//! let draw = swap_round(&design, &PairingStrategy::SequentialChain, &mut rng).unwrap();
//! assert_eq!(draw.treated(), 2);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod datagen;
pub mod design;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod ordering;
pub mod rng;
pub mod rounding;
pub mod stats;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::baselines::{
        bernoulli_assign, rejection_budget_assign, rerandomize_assign, srs_assign, RerandConfig,
    };
    pub use crate::datagen::{
        generate_lipschitz_scenario, generate_synthetic, load_dataset, normalize_budget,
        LipschitzParams, Regime, SyntheticConfig,
    };
    pub use crate::design::{
        pair_covariance, sate, validate_design, AssignmentDraw, Covariates, DesignSpec,
        EstimateReport, Mechanism, OutcomeTable, SwapTrace,
    };
    pub use crate::error::{Error, Result};
    pub use crate::estimators::{
        confidence_interval, estimate_report, ht_uniform_estimate, ipw_estimate,
        self_normalized_ipw, variance_estimate, variance_estimate_with, ObservedStudy, PairTerm,
        RhoSource, VarianceOptions,
    };
    pub use crate::harness::{run_experiment, ExperimentConfig, Method};
    pub use crate::ordering::{order_covariates, path_length, OrderingConfig, OrderingResult};
    pub use crate::rng::SeedStream;
    pub use crate::rounding::{single_swap, swap_round, PairingStrategy};
}
