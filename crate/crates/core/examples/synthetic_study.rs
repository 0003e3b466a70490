//! A small Monte Carlo study through the harness, printed as the aggregate
//! CSV. Pass `key=value` arguments to override any config key.

use swapround::harness::{write_aggregate, ExperimentConfig, Method};
use swapround::prelude::*;

fn main() -> Result<()> {
    let mut config = ExperimentConfig {
        n_grid: vec![50, 200],
        scenarios: 20,
        replications: 20,
        methods: vec![Method::Swap, Method::CovariateSwap, Method::IpwIndependent, Method::Srs],
        regime: Regime::CovariateLogistic,
        ..Default::default()
    };
    for arg in std::env::args().skip(1) {
        let (k, v) = arg
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got `{arg}`")))?;
        config.set(k, v)?;
    }
    let out = run_experiment(&config)?;
    write_aggregate(std::io::stdout().lock(), &out.aggregates)?;
    eprintln!("{} replicate rows, {} failures", out.raw.len(), out.failures.len());
    Ok(())
}
