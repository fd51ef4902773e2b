//! Bag personalization trees into a forest and compare it with a single
//! tree on the warfarin-like benchmark.

use std::error::Error;

use perstree::dataset::{generate_synthetic, SyntheticSpec};
use perstree::pf::{self, PfConfig};
use perstree::pt::{self, PtConfig};
use perstree::risk::oracle_metrics;

fn main() -> Result<(), Box<dyn Error>> {
    let train = generate_synthetic(&SyntheticSpec::warfarin_like(400, 10, 3))?;
    let test = generate_synthetic(&SyntheticSpec::warfarin_like(3000, 10, 4))?;

    let tree = pt::fit(&train, &PtConfig::default())?;
    let forest = pf::fit(
        &train,
        &PfConfig {
            trees: 100,
            master_seed: 9,
            ..PfConfig::default()
        },
    )?;

    let x = test.row(0);
    println!("votes for the first test subject: {:?}", forest.votes(x)?);
    println!("tree risk   {:.4}", oracle_metrics(&test, &tree)?.risk);
    println!("forest risk {:.4}", oracle_metrics(&test, &forest)?.risk);
    Ok(())
}
