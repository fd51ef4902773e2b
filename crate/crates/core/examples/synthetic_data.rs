//! Draw a confounded synthetic dataset, write it as CSV and read it back.

use std::error::Error;

use perstree::dataset::{generate_synthetic, load_csv, write_csv, CsvOptions, SyntheticSpec};

fn main() -> Result<(), Box<dyn Error>> {
    let spec = SyntheticSpec::warfarin_like(500, 10, 7);
    let ds = generate_synthetic(&spec)?;
    println!("n = {}, d = {}, m = {}", ds.n(), ds.d(), ds.m());
    println!("treatment counts: {:?}", ds.treatment_counts());

    let dir = std::env::temp_dir().join(format!("perstree-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("warfarin_like.csv");
    write_csv(&ds, &path)?;
    let back = load_csv(&path, &CsvOptions::default())?;
    assert_eq!(back.outcomes(), ds.outcomes());
    assert!(back.has_counterfactuals() && back.propensities().is_some());
    println!("round trip through {} ok", path.display());

    // The same spec always yields the same data.
    let again = generate_synthetic(&spec)?;
    assert_eq!(again.treatments(), ds.treatments());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
