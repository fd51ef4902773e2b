//! A small learning-curve experiment: risk of each algorithm as the
//! training set grows, written as long-format CSV to stdout.

use std::error::Error;
use std::path::Path;

use perstree::cli::{run_experiment, write_rows, ExperimentConfig};

const CONFIG: &str = r#"{
    "version": 1,
    "algorithms": [
        {"name": "pt", "params": {"n_min_leaf": 10}},
        {"name": "pf", "params": {"trees": 50}},
        {"name": "rc-ols"}
    ],
    "n_grid": [100, 200, 400],
    "replications": 3,
    "data": {"kind": "preset", "name": "warfarin-like", "population": 2000},
    "protocol": {"kind": "greedy", "n_test": 300},
    "seed": 2024
}"#;

fn main() -> Result<(), Box<dyn Error>> {
    let config = ExperimentConfig::from_json(CONFIG)?;
    let rows = run_experiment(&config, Path::new("."))?;
    write_rows(&rows, std::io::stdout().lock())?;
    Ok(())
}
