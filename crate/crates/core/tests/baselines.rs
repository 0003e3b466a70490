use std::collections::HashMap;

use swapround::baselines::*;
use swapround::design::{Covariates, DesignSpec, Mechanism};
use swapround::rng::SeedStream;
use swapround::Error;

const REPS: usize = 100_000;

#[test]
fn bernoulli_fixed_and_mean() {
    let mut rng = SeedStream::new(1).rng();
    for _ in 0..100 {
        assert_eq!(bernoulli_assign(&[1.0, 1.0, 0.0], &mut rng).unwrap().assignment, vec![1, 1, 0]);
    }
    let n = 10;
    let total: usize = (0..REPS)
        .map(|_| bernoulli_assign(&vec![0.5; n], &mut rng).unwrap().treated())
        .sum();
    let mean = total as f64 / REPS as f64;
    assert!((mean - n as f64 / 2.0).abs() <= 3.0 * (n as f64 / 4.0 / REPS as f64).sqrt());
}

#[test]
fn bernoulli_units_independent() {
    let mut rng = SeedStream::new(2).rng();
    let (mut s1, mut s2, mut s12) = (0.0, 0.0, 0.0);
    for _ in 0..REPS {
        let a = bernoulli_assign(&[0.3, 0.7], &mut rng).unwrap().assignment;
        let (x, y) = (a[0] as f64, a[1] as f64);
        s1 += x;
        s2 += y;
        s12 += x * y;
    }
    let r = REPS as f64;
    let cov = s12 / r - (s1 / r) * (s2 / r);
    // sd of the product estimator is about sqrt(0.21 * 0.21 / R)
    assert!(cov.abs() < 4.0 * 0.21 / r.sqrt(), "cov {cov}");
    assert!((s1 / r - 0.3).abs() < 0.005 && (s2 / r - 0.7).abs() < 0.005);
}

#[test]
fn rejection_conditional_marginals() {
    let mut rng = SeedStream::new(3).rng();
    let mut first = 0;
    for _ in 0..REPS {
        let d = rejection_budget_assign(&[0.5, 0.5], 1, 1000, &mut rng).unwrap();
        assert!(d.assignment == vec![1, 0] || d.assignment == vec![0, 1]);
        assert_eq!(d.mechanism, Mechanism::RejectionBudget);
        assert!(d.tries.unwrap() >= 1);
        first += d.assignment[0] as usize;
    }
    assert!((first as f64 / REPS as f64 - 0.5).abs() < 0.005);
}

#[test]
fn rejection_impossible_budget() {
    let mut rng = SeedStream::new(4).rng();
    let err = rejection_budget_assign(&[0.5, 0.0, 0.5], 3, 500, &mut rng).unwrap_err();
    assert!(matches!(err, Error::RejectionLimitExceeded { tries: 500 }));
}

#[test]
fn srs_extremes_and_uniformity() {
    let mut rng = SeedStream::new(5).rng();
    assert_eq!(srs_assign(4, 0, &mut rng).unwrap().assignment, vec![0; 4]);
    assert_eq!(srs_assign(4, 4, &mut rng).unwrap().assignment, vec![1; 4]);
    let mut counts: HashMap<Vec<u8>, usize> = HashMap::new();
    for _ in 0..REPS {
        *counts.entry(srs_assign(4, 2, &mut rng).unwrap().assignment).or_default() += 1;
    }
    assert_eq!(counts.len(), 6);
    let sd = (1.0 / 6.0 * 5.0 / 6.0 / REPS as f64).sqrt();
    for (subset, c) in counts {
        assert_eq!(subset.iter().map(|&x| x as usize).sum::<usize>(), 2);
        assert!((c as f64 / REPS as f64 - 1.0 / 6.0).abs() < 4.0 * sd);
    }
    assert!(srs_assign(3, 4, &mut rng).is_err());
}

fn covariates(n: usize, seed: u64) -> Covariates {
    use rand::Rng;
    let mut rng = SeedStream::new(seed).rng();
    let data: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    Covariates::new(n, 2, data).unwrap()
}

#[test]
fn single_candidate_is_plain_bernoulli() {
    let p0 = vec![0.2, 0.4, 0.6, 0.8, 0.5, 0.5];
    let design = DesignSpec::new(p0.clone(), 3).with_covariates(covariates(6, 6));
    let config = RerandConfig {
        candidates: 1,
        effective_p_replications: 20_000,
        ..Default::default()
    };
    let rr = Rerandomizer::new(&design, config).unwrap();
    let eff = rr.effective_propensities(&mut SeedStream::new(7).rng());
    for (e, p) in eff.iter().zip(&p0) {
        assert!((e - p).abs() < 4.0 * (p * (1.0 - p) / 20_000.0).sqrt(), "{e} vs {p}");
    }
}

#[test]
fn antisymmetric_pair_stays_symmetric() {
    let design = DesignSpec::new(vec![0.5, 0.5], 1)
        .with_covariates(Covariates::from_rows(&[vec![1.0], vec![-1.0]]).unwrap());
    let config = RerandConfig {
        candidates: 50,
        effective_p_replications: 10_000,
        ..Default::default()
    };
    let rr = Rerandomizer::new(&design, config).unwrap();
    let mut rng = SeedStream::new(8).rng();
    // balanced draws treat exactly one unit
    for _ in 0..200 {
        let (a, _, _) = rr.select(&mut rng);
        assert_eq!(a.iter().map(|&x| x as usize).sum::<usize>(), 1);
    }
    let eff = rr.effective_propensities(&mut rng);
    assert!((eff[0] - 0.5).abs() < 0.02 && (eff[1] - 0.5).abs() < 0.02, "{eff:?}");
}

#[test]
fn selection_improves_balance() {
    let n = 20;
    let design = DesignSpec::new(vec![0.5; n], 10).with_covariates(covariates(n, 9));
    let rr = Rerandomizer::new(&design, RerandConfig::default()).unwrap();
    let mut rng = SeedStream::new(10).rng();
    let (mut chosen, mut others, mut count) = (0.0, 0.0, 0usize);
    for _ in 0..200 {
        let (_, best, all) = rr.select(&mut rng);
        chosen += best;
        let finite: Vec<f64> = all.iter().copied().filter(|d| d.is_finite() && *d != best).collect();
        others += finite.iter().sum::<f64>();
        count += finite.len();
    }
    assert!(chosen / 200.0 < others / count as f64);
}

#[test]
fn rerandomize_draw_carries_effective_propensities() {
    let n = 12;
    let design = DesignSpec::new(vec![0.5; n], 6).with_covariates(covariates(n, 11));
    let config = RerandConfig {
        candidates: 10,
        effective_p_replications: 200,
        ..Default::default()
    };
    let d = rerandomize_assign(&design, &config, &mut SeedStream::new(12).rng()).unwrap();
    assert_eq!(d.mechanism, Mechanism::Rerandomized);
    let eff = d.effective_p.unwrap();
    assert_eq!(eff.len(), n);
    assert!(eff.iter().all(|&e| (1.0 / 400.0..=1.0 - 1.0 / 400.0).contains(&e)));
}

#[test]
fn rerandomizer_validates_inputs() {
    let design = DesignSpec::new(vec![0.5, 0.5], 1);
    assert!(Rerandomizer::new(&design, RerandConfig::default()).is_err());
    let design = design.with_covariates(Covariates::from_column(&[0.0, 1.0]));
    let bad = RerandConfig {
        candidates: 0,
        ..Default::default()
    };
    assert!(matches!(Rerandomizer::new(&design, bad), Err(Error::InvalidParams(_))));
}

#[test]
fn constant_covariates_fall_back_to_ridge() {
    let design = DesignSpec::new(vec![0.5; 4], 2)
        .with_covariates(Covariates::from_column(&[1.0, 1.0, 1.0, 1.0]));
    let config = RerandConfig {
        candidates: 5,
        effective_p_replications: 100,
        ..Default::default()
    };
    let rr = Rerandomizer::new(&design, config).unwrap();
    let (_, d, _) = rr.select(&mut SeedStream::new(13).rng());
    assert!(d.is_finite());
}
