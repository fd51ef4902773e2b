//! Solve for a globally optimal depth-2 tree over a cut menu, export the
//! equivalent mixed-integer program, and check the solver's answer against
//! every constraint of that program.

use std::error::Error;

use perstree::dataset::{generate_synthetic, SyntheticSpec};
use perstree::opt::{
    build_cut_menu, build_mip, check_solution, export_mps, induced_solution, solve_exact, warm_start_from_pt,
    OptConfig, TreeSkeleton,
};
use perstree::risk::oracle_metrics;

fn main() -> Result<(), Box<dyn Error>> {
    let train = generate_synthetic(&SyntheticSpec::smooth(120, 5))?;
    let test = generate_synthetic(&SyntheticSpec::smooth(2000, 6))?;
    let config = OptConfig {
        delta: 2,
        n_min_leaf: 4,
        n_cuts: 6,
        seed: 1,
        ..OptConfig::default()
    };

    let skeleton = TreeSkeleton::new(config.delta)?;
    let menu = build_cut_menu(&train, &skeleton, &config)?;
    let warm = warm_start_from_pt(&train, &skeleton, &menu, &config);
    let sol = solve_exact(&train, &skeleton, &menu, &config, warm.as_ref())?;
    println!(
        "objective {:.4} (proven optimal: {}), cuts {:?}, leaf treatments {:?}",
        sol.unshifted_objective(train.n()),
        sol.proven,
        sol.tree.cuts,
        sol.tree.treatments
    );
    println!("out-of-sample risk {:.4}", oracle_metrics(&test, &sol.tree)?.risk);

    let mip = build_mip(&train, &skeleton, &menu, &config)?;
    println!(
        "MIP: {} variables ({} binary), {} rows, big-M {}",
        mip.variables.len(),
        mip.binary_count(),
        mip.constraints.len(),
        mip.big_m
    );
    let values = induced_solution(&train, &skeleton, &menu, &sol.assignment, &mip);
    let violations = check_solution(&mip, &values, 1e-9);
    println!("rows violated by the solver's tree: {}", violations.len());
    for v in violations.iter().take(5) {
        println!("  {} by {:.3e}", v.name, v.excess);
    }

    let path = std::env::temp_dir().join(format!("perstree-opt-{}.mps", std::process::id()));
    export_mps(&mip, &path)?;
    println!("wrote {} and its .names.json map", path.display());
    std::fs::remove_file(&path)?;
    let mut names = path.into_os_string();
    names.push(".names.json");
    std::fs::remove_file(names)?;
    Ok(())
}
