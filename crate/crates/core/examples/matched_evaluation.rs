//! Evaluate policies without counterfactuals: inverse propensity weighting
//! and submatched test sets, next to the oracle value they estimate.

use std::error::Error;

use perstree::dataset::{generate_synthetic, SyntheticSpec};
use perstree::eval::{greedy_submatch, mahalanobis_metric, matched_metrics, optimal_submatch};
use perstree::risk::{ipw_risk, oracle_metrics, FnPolicy};

fn main() -> Result<(), Box<dyn Error>> {
    let ds = generate_synthetic(&SyntheticSpec::smooth(1500, 21))?;
    // Treat 3 when x1 is high, otherwise pick by the sign of x0.
    let pol = FnPolicy::new(3, |x: &[f64]| {
        if x[1] > 0.5 {
            3
        } else if x[0] > 0.0 {
            2
        } else {
            1
        }
    });

    let oracle = oracle_metrics(&ds, &pol)?;
    println!(
        "oracle risk {:.4}, P1 {:.3}, P2 {:.3}",
        oracle.risk,
        oracle.p1.value(),
        oracle.p2.value()
    );
    println!("IPW risk    {:.4}", ipw_risk(&ds, &pol)?);

    let metric = mahalanobis_metric(&ds)?;
    let mts = greedy_submatch(&ds, 300, &metric, 5)?;
    let m = matched_metrics(&mts, &pol)?;
    println!(
        "greedy submatch: {} test rows, {} subjects held out, risk {:.4}, P1 {:.3}",
        mts.len(),
        mts.removed.len(),
        m.risk,
        m.p1.value()
    );

    // Optimal submatching pairs two arms; keep treatments 1 and 2.
    let idx: Vec<usize> = (0..ds.n()).filter(|&i| ds.treatment(i) <= 2).collect();
    let two = ds.split(&idx)?;
    let two = perstree::dataset::Dataset::new(
        two.rows().map(<[f64]>::to_vec).collect(),
        two.treatments().to_vec(),
        two.outcomes().to_vec(),
        2,
    )?;
    let pairs = optimal_submatch(&two, 100, &mahalanobis_metric(&two)?)?;
    println!(
        "optimal submatch: {} rows, total distance {:.3}",
        pairs.len(),
        pairs.total_distance
    );
    Ok(())
}
