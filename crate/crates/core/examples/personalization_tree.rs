//! Fit a greedy personalization tree and score it with known
//! counterfactuals.

use std::error::Error;

use perstree::dataset::{generate_synthetic, SyntheticSpec};
use perstree::pt::{self, PtConfig};
use perstree::risk::{oracle_metrics, partition_risk_estimate};

fn main() -> Result<(), Box<dyn Error>> {
    let train = generate_synthetic(&SyntheticSpec::smooth(800, 1))?;
    let test = generate_synthetic(&SyntheticSpec::smooth(2000, 2))?;

    let config = PtConfig {
        n_min_leaf: 15,
        max_depth: Some(4),
        ..PtConfig::default()
    };
    let tree = pt::fit(&train, &config)?;
    println!("depth {}, {} leaves", tree.depth(), tree.leaf_count());

    let in_sample = partition_risk_estimate(&train, &tree.partition(&train), &tree)?;
    let m = oracle_metrics(&test, &tree)?;
    println!("in-sample risk estimate {in_sample:.4}");
    println!(
        "out-of-sample risk {:.4}, P1 {:.3}, P2 {:.3}",
        m.risk,
        m.p1.value(),
        m.p2.value()
    );
    println!("{}", tree.to_json());
    Ok(())
}
