//! Estimate a treatment effect from one swap-rounded draw, with the
//! trace-based variance and a normal interval.

use swapround::prelude::*;

fn main() -> Result<()> {
    let cfg = SyntheticConfig {
        n: 400,
        scenario_seed: 3,
        ..Default::default()
    };
    let (design, outcomes) = generate_synthetic(&cfg)?;
    println!("n = {}, budget = {}, SATE = {:.4}", design.n(), design.budget, sate(&outcomes));

    let mut rng = SeedStream::new(11).rng();
    let draw = swap_round(&design, &PairingStrategy::RandomChain, &mut rng)?;
    let study = ObservedStudy::from_draw(&draw, &outcomes, &design)?;

    let report = estimate_report(&study, 0.05, &VarianceOptions::default(), "swap")?;
    println!(
        "tau_hat = {:.4}  sigma_hat^2 = {:.5}  95% CI [{:.4}, {:.4}]",
        report.tau_hat, report.sigma_hat_sq, report.ci_low, report.ci_high
    );

    for (label, opts) in [
        ("plug-in / target rho", VarianceOptions::default()),
        (
            "plug-in / swap-time rho",
            VarianceOptions {
                rho_source: RhoSource::SwapTime,
                ..Default::default()
            },
        ),
        (
            "observed pair term",
            VarianceOptions {
                pair_term: PairTerm::Observed,
                ..Default::default()
            },
        ),
    ] {
        let v = variance_estimate_with(&study, &opts)?;
        println!("  {label:<24} {:.5}{}", v.value, if v.clamped { " (clamped)" } else { "" });
    }

    println!("self-normalized estimate = {:.4}", self_normalized_ipw(&study)?);
    let (lo, hi) = confidence_interval(report.tau_hat, report.sigma_hat_sq, 0.10)?;
    println!("90% CI [{lo:.4}, {hi:.4}]");
    Ok(())
}
