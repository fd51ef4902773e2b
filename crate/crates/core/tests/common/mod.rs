//! Fixtures shared by the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use perstree::dataset::{generate_synthetic, Dataset, SyntheticSpec};
use perstree::opt::{build_cut_menu, build_mip, name_map_json, write_mps, MipModel, OptConfig, TreeSkeleton};

/// Set to `1` to rewrite the golden files instead of comparing.
pub const BLESS_ENV: &str = "PERSTREE_BLESS";

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("golden")
}

/// Two fixed MIP instances: a hand-written depth-1 problem and a seeded
/// synthetic depth-2 problem.
pub fn golden_models() -> Vec<(&'static str, MipModel)> {
    let small = Dataset::new(
        vec![
            vec![0.5, 3.0],
            vec![1.5, 1.0],
            vec![2.5, 4.0],
            vec![3.5, 2.0],
            vec![4.5, 0.0],
            vec![5.5, 5.0],
            vec![6.5, 6.0],
            vec![7.5, 7.0],
        ],
        vec![1, 2, 1, 2, 1, 2, 1, 2],
        vec![3.0, 1.0, 2.5, 0.5, 0.0, 2.0, 1.0, 4.0],
        2,
    )
    .expect("valid fixture");
    let small_cfg = OptConfig {
        delta: 1,
        n_min_leaf: 1,
        n_cuts: 3,
        seed: 0,
        ..OptConfig::default()
    };

    let synthetic = generate_synthetic(&SyntheticSpec::smooth(24, 5)).expect("valid spec");
    let synthetic_cfg = OptConfig {
        delta: 2,
        n_min_leaf: 1,
        n_cuts: 2,
        seed: 3,
        ..OptConfig::default()
    };

    [
        ("depth1_small", small, small_cfg),
        ("depth2_smooth", synthetic, synthetic_cfg),
    ]
    .into_iter()
    .map(|(name, ds, cfg)| {
        let sk = TreeSkeleton::new(cfg.delta).expect("depth");
        let menu = build_cut_menu(&ds, &sk, &cfg).expect("menu");
        (name, build_mip(&ds, &sk, &menu, &cfg).expect("model"))
    })
    .collect()
}

/// MPS text and name map of a model.
pub fn render(model: &MipModel) -> (Vec<u8>, String) {
    let mut mps = Vec::new();
    write_mps(model, &mut mps).expect("in-memory write");
    (mps, name_map_json(model))
}
