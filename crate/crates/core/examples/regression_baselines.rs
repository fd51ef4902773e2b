//! Regress-and-compare and the CATE meta-strategies (one versus all, one
//! versus one) with least squares and nearest neighbors.

use std::error::Error;

use perstree::baselines::{fit_1v1, fit_1va, fit_rc, PairRule, RegressorFamily};
use perstree::dataset::{generate_synthetic, SyntheticSpec};
use perstree::risk::{oracle_metrics, Policy};

fn report(name: &str, test: &perstree::dataset::Dataset, pol: &dyn Policy) -> Result<(), Box<dyn Error>> {
    let m = oracle_metrics(test, pol)?;
    println!("{name:<10} risk {:.4}  P1 {:.3}", m.risk, m.p1.value());
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    let train = generate_synthetic(&SyntheticSpec::smooth(600, 11))?;
    let test = generate_synthetic(&SyntheticSpec::smooth(2000, 12))?;

    for (label, family) in [
        ("ols", RegressorFamily::Ols),
        ("knn", RegressorFamily::Knn { k: None }),
    ] {
        report(&format!("rc-{label}"), &test, &fit_rc(&train, family)?)?;
        report(&format!("1va-{label}"), &test, &fit_1va(&train, &family)?)?;
        report(
            &format!("1v1a-{label}"),
            &test,
            &fit_1v1(&train, &family, PairRule::A)?,
        )?;
        report(
            &format!("1v1b-{label}"),
            &test,
            &fit_1v1(&train, &family, PairRule::B)?,
        )?;
    }
    Ok(())
}
