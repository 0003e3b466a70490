//! Round a fractional design to an exact-budget assignment and check the
//! marginals by repetition.

use swapround::prelude::*;

fn main() -> Result<()> {
    let design = DesignSpec::new(vec![0.3, 0.7, 0.6, 0.4, 0.5, 0.5], 3);
    let mut rng = SeedStream::new(7).rng();

    let draw = swap_round(&design, &PairingStrategy::SequentialChain, &mut rng)?;
    println!("assignment {:?} treats {}", draw.assignment, draw.treated());
    for r in &draw.trace.records {
        println!(
            "  step {}: units ({}, {}) at ({:.3}, {:.3}) {:?} {:?}",
            r.step, r.i, r.j, r.p_i, r.p_j, r.case, r.branch
        );
    }

    // One isolated swap: 0.3 + 0.7 sums to 1, so one of the pair gets it all.
    let s = single_swap(0.3, 0.7, &mut rng)?;
    println!("single swap -> ({}, {})", s.new_i, s.new_j);

    let reps = 50_000;
    let mut counts = vec![0usize; design.n()];
    for _ in 0..reps {
        let d = swap_round(&design, &PairingStrategy::RandomChain, &mut rng)?;
        assert_eq!(d.treated(), design.budget);
        for (c, a) in counts.iter_mut().zip(&d.assignment) {
            *c += *a as usize;
        }
    }
    println!("unit  target  empirical");
    for (i, c) in counts.iter().enumerate() {
        println!("{i:>4}  {:>6.3}  {:>9.4}", design.p0[i], *c as f64 / reps as f64);
    }

    // Pairs that are swapped directly are negatively correlated.
    println!("rho(0.3, 0.4) = {:.3}", pair_covariance(0.3, 0.4)?);
    println!("rho(0.7, 0.6) = {:.3}", pair_covariance(0.7, 0.6)?);
    Ok(())
}
