use proptest::prelude::*;

use swapround::design::{validate_design, DesignSpec, SwapBranch, SwapCase};
use swapround::rng::SeedStream;
use swapround::rounding::{chain_pairs, single_swap, swap_round, ChainCursor, PairingStrategy};

#[test]
fn two_unit_design_marginal() {
    let design = DesignSpec::new(vec![0.3, 0.7], 1);
    let mut rng = SeedStream::new(1).rng();
    let reps = 100_000;
    let first = (0..reps)
        .filter(|_| {
            let d = swap_round(&design, &PairingStrategy::RandomChain, &mut rng).unwrap();
            d.assignment == vec![1, 0]
        })
        .count();
    assert!((first as f64 / reps as f64 - 0.3).abs() < 0.005);
}

#[test]
fn sequential_chain_case_two_first_swap() {
    let design = DesignSpec::new(vec![0.7, 0.6, 0.7], 2);
    let mut rng = SeedStream::new(2).rng();
    let reps = 100_000;
    let mut counts = [0usize; 3];
    for _ in 0..reps {
        let d = swap_round(&design, &PairingStrategy::SequentialChain, &mut rng).unwrap();
        assert_eq!(d.trace.records[0].case, SwapCase::SumGt1);
        for (c, a) in counts.iter_mut().zip(&d.assignment) {
            *c += *a as usize;
        }
    }
    for (c, p) in counts.iter().zip([0.7, 0.6, 0.7]) {
        assert!((*c as f64 / reps as f64 - p).abs() < 0.005, "{c} vs {p}");
    }
}

#[test]
fn single_swap_half_half() {
    let mut rng = SeedStream::new(3).rng();
    let reps = 100_000;
    let mut i_won = 0;
    for _ in 0..reps {
        let s = single_swap(0.5, 0.5, &mut rng).unwrap();
        assert!((s.new_i, s.new_j) == (1.0, 0.0) || (s.new_i, s.new_j) == (0.0, 1.0));
        i_won += (s.new_i == 1.0) as usize;
    }
    assert!((i_won as f64 / reps as f64 - 0.5).abs() < 0.005);
}

#[test]
fn single_swap_branch_probabilities() {
    let reps = 100_000;
    // (0.3, 0.4): i takes 0.7 w.p. 3/7
    let mut rng = SeedStream::new(4).rng();
    let (mut up, mut mean_i) = (0usize, 0.0);
    for _ in 0..reps {
        let s = single_swap(0.3, 0.4, &mut rng).unwrap();
        assert_eq!(s.case, SwapCase::SumLe1);
        if s.branch == SwapBranch::IWon {
            assert!((s.new_i - 0.7).abs() < 1e-15 && s.new_j == 0.0);
            up += 1;
        }
        mean_i += s.new_i;
    }
    assert!((up as f64 / reps as f64 - 3.0 / 7.0).abs() < 0.005);
    assert!((mean_i / reps as f64 - 0.3).abs() < 0.003);

    // (0.7, 0.6): i rounds up to 1 w.p. 4/7, leaving j at 0.3
    let mut rng = SeedStream::new(5).rng();
    let (mut up, mut mean_i) = (0usize, 0.0);
    for _ in 0..reps {
        let s = single_swap(0.7, 0.6, &mut rng).unwrap();
        assert_eq!(s.case, SwapCase::SumGt1);
        if s.new_i == 1.0 {
            assert!((s.new_j - 0.3).abs() < 1e-12);
            up += 1;
        }
        mean_i += s.new_i;
    }
    assert!((up as f64 / reps as f64 - 4.0 / 7.0).abs() < 0.005);
    assert!((mean_i / reps as f64 - 0.7).abs() < 0.003);
}

#[test]
fn single_swap_rejects_out_of_range() {
    let mut rng = SeedStream::new(6).rng();
    assert!(single_swap(1.2, 0.3, &mut rng).is_err());
    assert!(single_swap(0.3, -0.1, &mut rng).is_err());
}

#[test]
fn chain_pair_examples() {
    // chains are 0-based here: pair (1, 2) in 1-based terms is (0, 1)
    let mut c = ChainCursor::new(vec![0, 1, 2]);
    assert_eq!(c.next_pair(&[true, true, true]), Some((0, 1)));
    assert_eq!(chain_pairs(&[2, 0, 3, 1], &[true; 4])[0], (2, 0));
    assert_eq!(chain_pairs(&[0, 1], &[true, true]), vec![(0, 1)]);
}

#[test]
fn carrier_meets_next_unit() {
    let design = DesignSpec::new(vec![0.4, 0.3, 0.3], 1);
    let mut rng = SeedStream::new(7).rng();
    for _ in 0..200 {
        let d = swap_round(&design, &PairingStrategy::SequentialChain, &mut rng).unwrap();
        let pairs: Vec<_> = d.trace.pairs().collect();
        assert_eq!(pairs[0], (0, 1));
        if let Some(&(i, j)) = pairs.get(1) {
            // the survivor of the first swap carries on to unit 2
            assert!(i == 0 || i == 1);
            assert_eq!(j, 2);
        }
    }
}

#[test]
fn integral_design_has_empty_trace() {
    let design = DesignSpec::new(vec![1.0, 0.0, 1.0], 2);
    let mut rng = SeedStream::new(8).rng();
    for strategy in [
        PairingStrategy::SequentialChain,
        PairingStrategy::RandomChain,
        PairingStrategy::OrderedChain(vec![2, 0, 1]),
    ] {
        let d = swap_round(&design, &strategy, &mut rng).unwrap();
        assert_eq!(d.assignment, vec![1, 0, 1]);
        assert!(d.trace.is_empty());
    }
}

#[test]
fn invalid_ordering_rejected() {
    let design = DesignSpec::new(vec![0.5, 0.5], 1);
    let mut rng = SeedStream::new(9).rng();
    assert!(swap_round(&design, &PairingStrategy::OrderedChain(vec![0, 0]), &mut rng).is_err());
    assert!(swap_round(&design, &PairingStrategy::OrderedChain(vec![0]), &mut rng).is_err());
}

fn design_strategy() -> impl Strategy<Value = DesignSpec> {
    (2usize..40)
        .prop_flat_map(|n| prop::collection::vec(0.01f64..0.99, n))
        .prop_filter_map("needs a positive budget", |raw| {
            let sum: f64 = raw.iter().sum();
            let b = sum.floor();
            if b < 1.0 {
                return None;
            }
            let p: Vec<f64> = raw.iter().map(|x| x * b / sum).collect();
            validate_design(DesignSpec::new(p, b as usize)).ok()
        })
}

proptest! {
    #[test]
    fn every_draw_meets_budget(design in design_strategy(), seed in any::<u64>(), kind in 0u8..3) {
        let n = design.n();
        let strategy = match kind {
            0 => PairingStrategy::SequentialChain,
            1 => PairingStrategy::RandomChain,
            _ => PairingStrategy::OrderedChain((0..n).rev().collect()),
        };
        let mut rng = SeedStream::new(seed).rng();
        let d = swap_round(&design, &strategy, &mut rng).unwrap();
        prop_assert_eq!(d.treated(), design.budget);
        prop_assert!(d.assignment.iter().all(|&a| a <= 1));
        // each swap makes at least one unit integral, so at most n - 1 swaps
        prop_assert!(d.trace.len() < n);
        for r in &d.trace.records {
            prop_assert!(r.i != r.j && r.p_i > 0.0 && r.p_i < 1.0 && r.p_j > 0.0 && r.p_j < 1.0);
            prop_assert_eq!(r.case == SwapCase::SumGt1, r.p_i + r.p_j > 1.0);
        }
    }
}
