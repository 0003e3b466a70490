use proptest::prelude::*;

use swapround::design::Covariates;
use swapround::ordering::*;

fn brute_force(v: &Covariates) -> f64 {
    fn rec(v: &Covariates, path: &mut Vec<usize>, used: &mut [bool], best: &mut f64) {
        if path.len() == used.len() {
            *best = best.min(path_length(v, path).unwrap());
            return;
        }
        for u in 0..used.len() {
            if !used[u] {
                used[u] = true;
                path.push(u);
                rec(v, path, used, best);
                path.pop();
                used[u] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(v, &mut Vec::new(), &mut vec![false; v.rows()], &mut best);
    best
}

#[test]
fn monotone_example_matches_brute_force() {
    let v = Covariates::from_column(&[5.0, 1.0, 3.0]);
    let r = order_covariates(&v, &OrderingConfig::default()).unwrap();
    assert_eq!(r.path_length, brute_force(&v));
    assert_eq!(r.path_length, 4.0);
}

#[test]
fn result_is_a_permutation() {
    let v = Covariates::from_rows(&[vec![0.0, 1.0], vec![2.0, 2.0], vec![1.0, 0.0], vec![3.0, 3.0]]).unwrap();
    let r = order_covariates(&v, &OrderingConfig::default()).unwrap();
    let mut p = r.permutation.clone();
    p.sort_unstable();
    assert_eq!(p, vec![0, 1, 2, 3]);
    assert!(r.path_length <= r.greedy_length + 1e-12);
}

#[test]
fn rejects_non_finite_and_empty() {
    let v = Covariates::from_column(&[1.0, f64::NAN]);
    assert!(order_covariates(&v, &OrderingConfig::default()).is_err());
    let empty = Covariates::new(0, 1, vec![]).unwrap();
    assert!(order_covariates(&empty, &OrderingConfig::default()).is_err());
}

#[test]
fn pass_limit_is_respected() {
    let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![((i * 7) % 30) as f64, ((i * 11) % 30) as f64]).collect();
    let v = Covariates::from_rows(&rows).unwrap();
    let cfg = OrderingConfig {
        two_opt_max_passes: 1,
        ..Default::default()
    };
    assert_eq!(order_covariates(&v, &cfg).unwrap().improvement_passes, 1);
}

fn points(max_n: usize, dims: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, dims), 1..=max_n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn converged_path_is_two_opt_optimal(rows in points(25, 3)) {
        let v = Covariates::from_rows(&rows).unwrap();
        let r = order_covariates(&v, &OrderingConfig::default()).unwrap();
        if r.improvement_passes < 50 {
            prop_assert!(!has_improving_reversal(&v, &r.permutation));
        }
        prop_assert!((path_length(&v, &r.permutation).unwrap() - r.path_length).abs() < 1e-9);
    }

    #[test]
    fn one_dimensional_is_sorted_optimal(xs in prop::collection::vec(-100.0f64..100.0, 1..80)) {
        let v = Covariates::from_column(&xs);
        let r = order_covariates(&v, &OrderingConfig::default()).unwrap();
        let span = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - xs.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!((r.path_length - span).abs() <= 1e-9 * span.max(1.0));
    }

    #[test]
    fn small_instances_near_optimal(rows in points(7, 2)) {
        let v = Covariates::from_rows(&rows).unwrap();
        let r = order_covariates(&v, &OrderingConfig::default()).unwrap();
        let best = brute_force(&v);
        prop_assert!(r.path_length >= best - 1e-9);
        // 2-opt local optima can exceed the optimum; the bound here is loose
        prop_assert!(r.path_length <= 1.5 * best + 1e-9);
    }
}
