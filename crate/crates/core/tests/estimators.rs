use approx::assert_abs_diff_eq;
use statrs::distribution::{ContinuousCDF, Normal};

use swapround::design::{
    pair_covariance, sate, DesignSpec, OutcomeTable, SwapBranch, SwapCase, SwapRecord, SwapTrace,
};
use swapround::estimators::*;
use swapround::rng::SeedStream;
use swapround::rounding::{swap_round, PairingStrategy};

fn study(a: &[u8], y: &[f64], p: &[f64], trace: SwapTrace) -> ObservedStudy {
    ObservedStudy::new(a.to_vec(), y.to_vec(), p.to_vec(), trace).unwrap()
}

fn plain(a: &[u8], y: &[f64], p: &[f64]) -> ObservedStudy {
    study(a, y, p, SwapTrace::default())
}

#[test]
fn pair_covariance_examples() {
    assert_abs_diff_eq!(pair_covariance(0.3, 0.4).unwrap(), -0.12, epsilon = 1e-15);
    assert_abs_diff_eq!(pair_covariance(0.7, 0.6).unwrap(), -0.12, epsilon = 1e-15);
    assert_abs_diff_eq!(pair_covariance(0.5, 0.5).unwrap(), -0.25, epsilon = 1e-15);
    for k in 1..20 {
        let p = k as f64 / 20.0;
        // both branches agree on the boundary p_i + p_j = 1
        assert_abs_diff_eq!(pair_covariance(p, 1.0 - p).unwrap(), -(1.0 - p) * p, epsilon = 1e-15);
        for m in 1..20 {
            let q = m as f64 / 20.0;
            assert_eq!(pair_covariance(p, q).unwrap(), pair_covariance(q, p).unwrap());
        }
    }
    assert!(pair_covariance(1.5, 0.2).is_err());
}

#[test]
fn sate_examples() {
    let t = |y0: Vec<f64>, y1: Vec<f64>| sate(&OutcomeTable::new(y0, y1).unwrap());
    assert_eq!(t(vec![0.0, 0.0], vec![2.0, 2.0]), 2.0);
    assert_eq!(t(vec![1.5, -2.0], vec![1.5, -2.0]), 0.0);
    assert_eq!(t(vec![1.0, 1.0, 1.0], vec![3.0, 1.0, 2.0]), 1.0);
}

#[test]
fn ipw_and_hajek_examples() {
    assert_eq!(ipw_estimate(&plain(&[1, 0], &[2.0, 0.0], &[0.5, 0.5])).unwrap(), 2.0);
    assert_eq!(ipw_estimate(&plain(&[1, 0, 1], &[0.0; 3], &[0.2, 0.5, 0.3])).unwrap(), 0.0);
    assert_abs_diff_eq!(
        ipw_estimate(&plain(&[1, 0, 0], &[1.0, 2.0, 3.0], &[0.25, 0.5, 0.25])).unwrap(),
        -4.0 / 3.0,
        epsilon = 1e-15
    );
    assert_abs_diff_eq!(self_normalized_ipw(&plain(&[1, 0], &[3.0, 1.0], &[0.5, 0.5])).unwrap(), 2.0);
    assert_abs_diff_eq!(
        self_normalized_ipw(&plain(&[0, 1, 1, 0], &[4.0; 4], &[0.1, 0.4, 0.8, 0.6])).unwrap(),
        0.0,
        epsilon = 1e-14
    );
    assert_abs_diff_eq!(
        self_normalized_ipw(&plain(&[1, 1, 0], &[1.0, 2.0, 3.0], &[0.25, 0.5, 0.25])).unwrap(),
        -5.0 / 3.0,
        epsilon = 1e-14
    );
}

#[test]
fn variance_examples() {
    assert_eq!(variance_estimate(&plain(&[1], &[2.0], &[0.5])).unwrap(), 0.0);
    let zero = plain(&[1, 0, 1, 0], &[0.0; 4], &[0.5, 0.4, 0.6, 0.5]);
    assert_eq!(variance_estimate(&zero).unwrap(), 0.0);
}

fn record(i: usize, j: usize, p_i: f64, p_j: f64) -> SwapRecord {
    SwapRecord {
        step: 0,
        i,
        j,
        p_i,
        p_j,
        case: if p_i + p_j > 1.0 { SwapCase::SumGt1 } else { SwapCase::SumLe1 },
        branch: SwapBranch::IWon,
    }
}

#[test]
fn pairwise_term_by_hand() {
    // A = (1, 0), Y = (2, 1), p = (0.4, 0.6), one recorded swap of (0, 1)
    let trace = SwapTrace {
        records: vec![record(0, 1, 0.4, 0.6)],
    };
    let s = study(&[1, 0], &[2.0, 1.0], &[0.4, 0.6], trace);
    // u = (2/0.4, 1/0.4) = (5, 2.5); tau = (5 - 2.5)/2 = 1.25
    // independent part: 25 + 6.25 - 2 * 1.25^2 = 28.125
    // mu1 = 5/2, mu0 = 2.5/2; M_0 = 2.5/0.4 + 1.25/0.6, M_1 = 2.5/0.6 + 1.25/0.4
    // rho(0.4, 0.6) = -0.24
    let m0 = 2.5 / 0.4 + 1.25 / 0.6;
    let m1 = 2.5 / 0.6 + 1.25 / 0.4;
    let plug_in = (28.125 + 2.0 * -0.24 * m0 * m1) / 4.0;
    let v = variance_estimate_with(&s, &VarianceOptions::default()).unwrap();
    assert_abs_diff_eq!(v.raw, plug_in, epsilon = 1e-12);
    assert_eq!(v.value, plug_in.max(0.0));
    assert_eq!(v.clamped, plug_in < 0.0);

    let observed = (28.125 + 2.0 * -0.24 * 5.0 * 2.5) / 4.0;
    let opts = VarianceOptions {
        pair_term: PairTerm::Observed,
        ..Default::default()
    };
    assert_abs_diff_eq!(variance_estimate_with(&s, &opts).unwrap().raw, observed, epsilon = 1e-12);
}

#[test]
fn swap_time_rho_uses_recorded_values() {
    let trace = SwapTrace {
        records: vec![record(0, 1, 0.3, 0.4)],
    };
    let s = study(&[1, 0], &[1.0, 1.0], &[0.5, 0.5], trace);
    let opts = |rho_source| VarianceOptions {
        pair_term: PairTerm::Observed,
        rho_source,
    };
    let target = variance_estimate_with(&s, &opts(RhoSource::Target)).unwrap().raw;
    let live = variance_estimate_with(&s, &opts(RhoSource::SwapTime)).unwrap().raw;
    // u = (2, 2): pairwise parts 2 * rho * 4 with rho = -0.25 vs -0.12
    assert_abs_diff_eq!(target - live, 2.0 * 4.0 * (-0.25 + 0.12) / 4.0, epsilon = 1e-12);
}

#[test]
fn negative_variance_is_clamped_and_flagged() {
    // constant outcomes, three recorded pairs: u_i = 2, tau = 0, M_i = 4,
    // raw = (16 + 2 * 3 * (-0.25) * 16) / 16 = -0.5
    let trace = SwapTrace {
        records: vec![record(0, 1, 0.5, 0.5), record(2, 3, 0.5, 0.5), record(1, 2, 0.5, 0.5)],
    };
    let s = study(&[1, 0, 1, 0], &[1.0; 4], &[0.5; 4], trace);
    let v = variance_estimate_with(&s, &VarianceOptions::default()).unwrap();
    assert_abs_diff_eq!(v.raw, -0.5, epsilon = 1e-12);
    assert!(v.clamped);
    assert_eq!(v.value, 0.0);
}

#[test]
fn interval_examples() {
    assert_eq!(confidence_interval(1.5, 0.0, 0.05).unwrap(), (1.5, 1.5));
    let (lo, hi) = confidence_interval(0.0, 1.0, 0.05).unwrap();
    assert_abs_diff_eq!(lo, -1.959964, epsilon = 1e-5);
    assert_abs_diff_eq!(hi, 1.959964, epsilon = 1e-5);
    let (lo, hi) = confidence_interval(2.0, 4.0, 0.32).unwrap();
    assert_abs_diff_eq!(lo, 0.0110, epsilon = 1e-3);
    assert_abs_diff_eq!(hi, 3.9890, epsilon = 1e-3);
    assert!(matches!(confidence_interval(0.0, 1.0, 0.0), Err(swapround::Error::InvalidLevel(_))));
    assert!(confidence_interval(0.0, 1.0, 1.0).is_err());
    assert!(confidence_interval(0.0, -1.0, 0.05).is_err());
}

#[test]
fn quantile_matches_reference_distribution() {
    let reference = Normal::new(0.0, 1.0).unwrap();
    for k in 1..1000 {
        let p = k as f64 / 1000.0;
        assert_abs_diff_eq!(normal_quantile(p), reference.inverse_cdf(p), epsilon = 1e-9);
    }
    // high-precision reference values
    for (x, phi) in [
        (-8.0, 6.220_960_574_271_784e-16),
        (-6.5, 4.016_000_583_859_118e-11),
        (-3.66, 1.261_076_241_384_866_7e-4),
        (-1.2, 0.115_069_670_221_708_28),
        (0.0, 0.5),
        (0.7, 0.758_036_347_776_927),
        (2.5, 0.993_790_334_674_224),
        (5.0, 0.999_999_713_348_428_1),
    ] {
        assert!((normal_cdf(x) - phi).abs() <= 1e-14 * phi, "{x}");
    }
    assert_abs_diff_eq!(normal_quantile(0.975), 1.959_963_984_540_054, epsilon = 1e-12);
    assert_abs_diff_eq!(normal_quantile(1e-10), -6.361_340_902_404_056, epsilon = 1e-9);
}

#[test]
fn uniform_weight_examples() {
    assert_eq!(ht_uniform_estimate(&[2.0, 0.0], &[1, 0], 1).unwrap(), 2.0);
    assert_abs_diff_eq!(ht_uniform_estimate(&[3.0; 5], &[1, 0, 1, 0, 0], 2).unwrap(), 0.0, epsilon = 1e-14);
    assert_eq!(ht_uniform_estimate(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 0, 0], 2).unwrap(), -2.0);
    assert!(ht_uniform_estimate(&[1.0, 2.0], &[1, 1], 1).is_err());
}

#[test]
fn degenerate_weight_on_realized_branch() {
    let err = ipw_estimate(&plain(&[0, 1], &[1.0, 1.0], &[1.0, 0.5])).unwrap_err();
    assert!(matches!(err, swapround::Error::DegenerateWeight { unit: 0, .. }));
    assert!(!err.is_validation());
}

#[test]
fn report_over_a_real_draw() {
    let design = DesignSpec::new(vec![0.2, 0.5, 0.8, 0.5, 0.3, 0.7], 3);
    let outcomes = OutcomeTable::new(vec![1.0, 2.0, 0.5, 1.5, 3.0, 2.0], vec![2.0, 3.5, 1.0, 2.0, 4.0, 2.5]).unwrap();
    let mut rng = SeedStream::new(5).rng();
    let draw = swap_round(&design, &PairingStrategy::RandomChain, &mut rng).unwrap();
    let s = ObservedStudy::from_draw(&draw, &outcomes, &design).unwrap();
    let r = estimate_report(&s, 0.05, &VarianceOptions::default(), "swap").unwrap();
    assert_eq!(r.tau_hat, ipw_estimate(&s).unwrap());
    assert!(r.ci_low <= r.tau_hat && r.tau_hat <= r.ci_high);
    assert_abs_diff_eq!(r.ci_high - r.tau_hat, 1.959_963_984_540_054 * r.sigma_hat_sq.sqrt(), epsilon = 1e-9);
}
