//! Command-line front end.
//!
//! Exit status: 0 on success, 2 for invalid input or configuration, 3 when a
//! computation fails.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::json;

use swapround::datagen::{load_dataset, Dataset, LoadOptions};
use swapround::design::AssignmentDraw;
use swapround::estimators::{
    estimate_report, self_normalized_ipw, ObservedStudy, PairTerm, RhoSource, VarianceOptions,
};
use swapround::harness::{
    emit_results, run_experiment, write_aggregate, ExperimentConfig, Method, MethodContext,
};
use swapround::ordering::{order_covariates, OrderingConfig};
use swapround::rng::SeedStream;
use swapround::rounding::{swap_round, PairingStrategy};
use swapround::{Error, Result};

#[derive(Parser)]
#[command(name = "swapround", version, about = "Budget-exact randomized assignment by swap rounding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset file and report its design.
    Validate {
        data: PathBuf,
        /// Fail instead of rescaling when p0 does not sum to an integer.
        #[arg(long)]
        no_normalize: bool,
    },
    /// Draw one assignment and print it (with its swap trace) as JSON.
    Assign {
        data: PathBuf,
        #[arg(long, default_value = "swap")]
        method: String,
        /// Pairing order for `swap`.
        #[arg(long, value_enum, default_value_t = Strategy::Random)]
        strategy: Strategy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Estimate the effect from a dataset and an assignment file.
    Estimate {
        data: PathBuf,
        #[arg(long)]
        assignment: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = PairTermArg::PlugIn)]
        pair_term: PairTermArg,
        #[arg(long, value_enum, default_value_t = RhoArg::Target)]
        rho_source: RhoArg,
    },
    /// Order units along a short path through covariate space.
    Order {
        data: PathBuf,
        #[arg(long)]
        standardize: bool,
        #[arg(long, default_value_t = 50)]
        max_passes: usize,
    },
    /// Run a Monte Carlo study. Every configuration key is also a flag.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Sequential,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum PairTermArg {
    PlugIn,
    Observed,
}

#[derive(Clone, Copy, ValueEnum)]
enum RhoArg {
    Target,
    SwapTime,
}

fn load(path: &Path) -> Result<Dataset> {
    load_dataset(path, &LoadOptions::default())
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn assign(data: &Path, method: &str, strategy: Strategy, seed: u64, output: Option<&Path>) -> Result<()> {
    let ds = load(data)?;
    let method: Method = method.parse()?;
    let stream = SeedStream::new(seed);
    let draw = if method == Method::Swap {
        let strategy = match strategy {
            Strategy::Sequential => PairingStrategy::SequentialChain,
            Strategy::Random => PairingStrategy::RandomChain,
        };
        swap_round(&ds.design, &strategy, &mut stream.rng())?
    } else {
        let config = ExperimentConfig::default();
        let ctx = MethodContext::prepare(ds.design, ds.outcomes, &[method], &config, &stream)?;
        ctx.draw(method, &mut stream.rng())?
    };
    match output {
        Some(p) => std::fs::write(p, serde_json::to_string_pretty(&draw)?)?,
        None => print_json(&draw)?,
    }
    Ok(())
}

fn estimate(data: &Path, assignment: &Path, alpha: f64, opts: VarianceOptions) -> Result<()> {
    let ds = load(data)?;
    let draw: AssignmentDraw = serde_json::from_str(&std::fs::read_to_string(assignment)?)?;
    if draw.n() != ds.design.n() {
        return Err(Error::DimensionMismatch {
            what: "assignment entries",
            expected: ds.design.n(),
            found: draw.n(),
        });
    }
    let method = match draw.mechanism {
        swapround::design::Mechanism::Srs => Method::Srs,
        _ => Method::Swap,
    };
    let ctx = MethodContext {
        design: ds.design,
        outcomes: ds.outcomes,
        ordering: None,
        rerandomizer: None,
        max_tries: 0,
    };
    let study = ObservedStudy::with_weights(&draw, &ctx.outcomes, ctx.weights(method, &draw))?;
    let name = serde_json::to_value(draw.mechanism)?;
    let report = estimate_report(&study, alpha, &opts, name.as_str().unwrap_or("unknown"))?;
    let hajek = self_normalized_ipw(&study).ok();
    print_json(&json!({ "report": report, "self_normalized": hajek }))
}

fn order(data: &Path, standardize: bool, max_passes: usize) -> Result<()> {
    let ds = load(data)?;
    let v = ds
        .design
        .covariates
        .as_ref()
        .ok_or_else(|| Error::InvalidParams("dataset has no v_* covariate columns".into()))?;
    let config = OrderingConfig {
        standardize,
        two_opt_max_passes: max_passes,
        ..Default::default()
    };
    let r = order_covariates(v, &config)?;
    let ids: Vec<&String> = match &ds.design.unit_ids {
        Some(ids) => r.permutation.iter().map(|&i| &ids[i]).collect(),
        None => Vec::new(),
    };
    print_json(&json!({
        "permutation": r.permutation,
        "ids": ids,
        "path_length": r.path_length,
        "greedy_length": r.greedy_length,
        "improvement_passes": r.improvement_passes,
    }))
}

fn simulate(config_path: Option<&Path>, matches: &ArgMatches) -> Result<()> {
    let mut config = match config_path {
        Some(p) => ExperimentConfig::from_kv_file(p)?,
        None => ExperimentConfig::default(),
    };
    for key in ExperimentConfig::KEYS {
        if let Some(v) = matches.get_one::<String>(key) {
            config.set(key, v)?;
        }
    }
    let output = run_experiment(&config)?;
    emit_results(&config, &output)?;
    if config.aggregate_csv.is_none() {
        write_aggregate(std::io::stdout().lock(), &output.aggregates)?;
    }
    if !output.failures.is_empty() {
        eprintln!("{} cells failed and were skipped", output.failures.len());
    }
    Ok(())
}

fn run(cli: Cli, matches: &ArgMatches) -> Result<()> {
    match cli.command {
        Command::Validate { data, no_normalize } => {
            let ds = load_dataset(&data, &LoadOptions { normalize: !no_normalize })?;
            print_json(&json!({
                "n": ds.design.n(),
                "budget": ds.design.budget,
                "covariates": ds.covariate_names,
                "normalized": ds.normalized,
                "nonnegative_outcomes": ds.outcomes.nonnegative(),
                "negative_fraction": ds.outcomes.negative_fraction(),
            }))
        }
        Command::Assign {
            data,
            method,
            strategy,
            seed,
            output,
        } => assign(&data, &method, strategy, seed, output.as_deref()),
        Command::Estimate {
            data,
            assignment,
            alpha,
            pair_term,
            rho_source,
        } => {
            let opts = VarianceOptions {
                pair_term: match pair_term {
                    PairTermArg::PlugIn => PairTerm::PlugIn,
                    PairTermArg::Observed => PairTerm::Observed,
                },
                rho_source: match rho_source {
                    RhoArg::Target => RhoSource::Target,
                    RhoArg::SwapTime => RhoSource::SwapTime,
                },
            };
            estimate(&data, &assignment, alpha, opts)
        }
        Command::Order {
            data,
            standardize,
            max_passes,
        } => order(&data, standardize, max_passes),
        Command::Simulate { config } => {
            let sub = matches.subcommand_matches("simulate").expect("simulate matches");
            simulate(config.as_deref(), sub)
        }
    }
}

fn main() -> ExitCode {
    let command = Cli::command().mut_subcommand("simulate", |mut c| {
        for key in ExperimentConfig::KEYS {
            c = c.arg(
                Arg::new(key)
                    .long(key)
                    .value_name("VALUE")
                    .action(ArgAction::Set),
            );
        }
        c
    });
    let matches = command.get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
