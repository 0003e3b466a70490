//! Draw from every comparison mechanism on the same design and compare the
//! spread of the treated count and of the effect estimate.

use swapround::baselines::Rerandomizer;
use swapround::prelude::*;

fn main() -> Result<()> {
    let cfg = SyntheticConfig {
        n: 60,
        regime: Regime::CovariateLogistic,
        scenario_seed: 21,
        ..Default::default()
    };
    let (design, outcomes) = generate_synthetic(&cfg)?;
    let mut rng = SeedStream::new(5).rng();

    let rr = Rerandomizer::new(
        &design,
        RerandConfig {
            candidates: 50,
            effective_p_replications: 300,
            ..Default::default()
        },
    )?;
    let eff = rr.effective_propensities(&mut rng);

    let reps = 1000;
    println!("{:<18} {:>10} {:>10} {:>12}", "mechanism", "mean B", "sd B", "var tau_hat");
    for name in ["swap", "bernoulli", "rejection", "srs", "rerandomized"] {
        let (mut counts, mut taus) = (Vec::new(), Vec::new());
        for _ in 0..reps {
            let (draw, weights) = match name {
                "swap" => (swap_round(&design, &PairingStrategy::RandomChain, &mut rng)?, design.p0.clone()),
                "bernoulli" => (bernoulli_assign(&design.p0, &mut rng)?, design.p0.clone()),
                "rejection" => (
                    rejection_budget_assign(&design.p0, design.budget, 100_000, &mut rng)?,
                    design.p0.clone(),
                ),
                "srs" => (
                    srs_assign(design.n(), design.budget, &mut rng)?,
                    vec![design.budget as f64 / design.n() as f64; design.n()],
                ),
                _ => (rr.assign_with(&eff, &mut rng), eff.clone()),
            };
            counts.push(draw.treated() as f64);
            let study = ObservedStudy::with_weights(&draw, &outcomes, weights)?;
            taus.push(ipw_estimate(&study)?);
        }
        let (m, v) = moments(&counts);
        println!("{name:<18} {m:>10.2} {:>10.3} {:>12.4}", v.sqrt(), moments(&taus).1);
    }
    println!("target budget {}, SATE {:.3}", design.budget, sate(&outcomes));
    Ok(())
}

fn moments(x: &[f64]) -> (f64, f64) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let v = x.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / (x.len() - 1) as f64;
    (m, v)
}
