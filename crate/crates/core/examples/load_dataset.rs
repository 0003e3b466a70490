//! Write a small dataset file, load it back, and analyse one draw.

use swapround::datagen::{load_dataset, LoadOptions};
use swapround::prelude::*;

fn main() -> Result<()> {
    let path = std::env::temp_dir().join("swapround_example.csv");
    let text = "\
id,y0,y1,p0,v_age,v_score
a,1.2,2.9,0.40,34,0.7
b,0.4,1.1,0.55,51,1.3
c,2.0,3.5,0.35,29,0.2
d,1.1,1.8,0.50,45,0.9
e,0.7,2.6,0.45,38,1.1
f,1.5,2.2,0.75,60,0.4
";
    std::fs::write(&path, text)?;

    let ds = load_dataset(&path, &LoadOptions::default())?;
    println!(
        "loaded n={} budget={} covariates={:?} normalized={}",
        ds.design.n(),
        ds.design.budget,
        ds.covariate_names,
        ds.normalized
    );
    println!("p0 = {:?}", ds.design.p0);

    let order = order_covariates(
        ds.design.covariates.as_ref().unwrap(),
        &OrderingConfig {
            standardize: true,
            ..Default::default()
        },
    )?;
    let mut rng = SeedStream::new(3).rng();
    let draw = swap_round(&ds.design, &PairingStrategy::OrderedChain(order.permutation), &mut rng)?;
    let study = ObservedStudy::from_draw(&draw, &ds.outcomes, &ds.design)?;
    let report = estimate_report(&study, 0.05, &VarianceOptions::default(), "covariate_swap")?;
    println!("{}", serde_json::to_string_pretty(&report).unwrap());

    // A file whose p0 does not sum to an integer is rescaled on load.
    std::fs::write(&path, "id,y0,y1,p0\nx,0,1,0.5\ny,0,1,0.7\nz,1,1,0.6\n")?;
    let ds = load_dataset(&path, &LoadOptions::default())?;
    println!("rescaled p0 = {:?} (budget {})", ds.design.p0, ds.design.budget);
    std::fs::remove_file(&path)?;
    Ok(())
}
