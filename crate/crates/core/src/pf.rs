//! Personalization forests: bootstrap-aggregated personalization trees with
//! a majority vote over prescriptions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{bootstrap_indices, Dataset, DatasetError};
use crate::pt::{self, FeatureSubset, PersonalizationTree, PtConfig, PtError};
use crate::risk::Policy;
use crate::rng::derive_seed;

/// Retries allowed per tree when a bootstrap replicate misses a treatment.
pub const MAX_REDRAWS: u64 = 100;

#[derive(Debug, Error)]
pub enum PfError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("tree {tree}: every bootstrap replicate missed a treatment after {MAX_REDRAWS} redraws")]
    Redraws { tree: usize },
    #[error(transparent)]
    Tree(#[from] PtError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("covariate vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

/// How each tree's training sample is drawn.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Resample {
    #[default]
    Bootstrap,
    /// Every tree sees the data as is. Test hook for degenerate forests.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PfConfig {
    pub trees: usize,
    /// Per-tree settings; the per-tree seed replaces `base.seed`.
    pub base: PtConfig,
    pub master_seed: u64,
    #[doc(hidden)]
    #[serde(skip)]
    pub resample: Resample,
}

impl Default for PfConfig {
    fn default() -> Self {
        PfConfig {
            trees: 500,
            base: PtConfig {
                n_min_leaf: 10,
                n_features: FeatureSubset::Sqrt,
                ..PtConfig::default()
            },
            master_seed: 0,
            resample: Resample::Bootstrap,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonalizationForest {
    pub trees: Vec<PersonalizationTree>,
    pub m: usize,
    pub d: usize,
}

fn covers_all_arms(ds: &Dataset, idx: &[usize]) -> bool {
    let mut seen = vec![false; ds.m()];
    for &i in idx {
        seen[ds.treatment(i) - 1] = true;
    }
    seen.into_iter().all(|s| s)
}

fn fit_one(ds: &Dataset, config: &PfConfig, j: usize) -> Result<PersonalizationTree, PfError> {
    let seed = derive_seed(config.master_seed, j as u64);
    let tree_config = PtConfig { seed, ..config.base };
    let idx = match config.resample {
        Resample::Identity => (0..ds.n()).collect(),
        Resample::Bootstrap => {
            let mut draw = seed;
            let mut attempt = 0;
            loop {
                let idx = bootstrap_indices(ds.n(), draw);
                if covers_all_arms(ds, &idx) {
                    break idx;
                }
                attempt += 1;
                if attempt > MAX_REDRAWS {
                    return Err(PfError::Redraws { tree: j });
                }
                draw = derive_seed(seed, attempt);
            }
        }
    };
    Ok(pt::fit(&ds.split(&idx)?, &tree_config)?)
}

/// Fits `config.trees` trees, tree `j` on a bootstrap replicate drawn with
/// `derive_seed(master_seed, j)`. Replicates missing a treatment are redrawn
/// with `derive_seed(tree_seed, attempt)`. Trees are fitted in parallel; the
/// result does not depend on scheduling.
pub fn fit(ds: &Dataset, config: &PfConfig) -> Result<PersonalizationForest, PfError> {
    if config.trees < 1 {
        return Err(PfError::Config("trees must be >= 1".into()));
    }
    if ds.is_empty() {
        return Err(PtError::Empty.into());
    }
    let trees = (0..config.trees)
        .into_par_iter()
        .map(|j| fit_one(ds, config, j))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PersonalizationForest {
        trees,
        m: ds.m(),
        d: ds.d(),
    })
}

impl PersonalizationForest {
    /// Histogram of tree prescriptions, indexed by `t - 1`.
    pub fn votes(&self, x: &[f64]) -> Result<Vec<usize>, PfError> {
        self.check(x)?;
        Ok(self.tally(x))
    }

    /// Majority prescription; ties go to the lowest treatment.
    pub fn predict(&self, x: &[f64]) -> Result<usize, PfError> {
        self.check(x)?;
        Ok(mode(&self.tally(x)))
    }

    fn check(&self, x: &[f64]) -> Result<(), PfError> {
        if x.len() != self.d {
            return Err(PfError::Dimension {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn tally(&self, x: &[f64]) -> Vec<usize> {
        let mut votes = vec![0; self.m];
        for tree in &self.trees {
            votes[tree.prescribe(x) - 1] += 1;
        }
        votes
    }

    pub fn to_json(&self) -> String {
        let raw = RawForest {
            kind: "pf".into(),
            trees: self.trees.iter().map(pt::RawTree::from_tree).collect(),
        };
        serde_json::to_string(&raw).expect("forest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PfError> {
        let raw: RawForest = pt::parse_doc(text)?;
        if raw.kind != "pf" {
            return Err(PtError::Validation {
                path: "kind".into(),
                message: format!("expected \"pf\", got \"{}\"", raw.kind),
            }
            .into());
        }
        let trees = raw
            .trees
            .into_iter()
            .enumerate()
            .map(|(j, t)| t.into_tree(&format!("trees[{j}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let first = trees.first().ok_or_else(|| PtError::Validation {
            path: "trees".into(),
            message: "forest has no trees".into(),
        })?;
        let (m, d) = (first.m, first.d);
        if let Some(j) = trees.iter().position(|t| t.m != m || t.d != d) {
            return Err(PtError::Validation {
                path: format!("trees[{j}]"),
                message: "all trees must share m and d".into(),
            }
            .into());
        }
        Ok(PersonalizationForest { trees, m, d })
    }
}

#[derive(Serialize, Deserialize)]
struct RawForest {
    kind: String,
    trees: Vec<pt::RawTree>,
}

/// Index (1-based) of the largest count; ties go to the lowest index.
pub fn mode(votes: &[usize]) -> usize {
    let mut best = 0;
    for (k, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = k;
        }
    }
    best + 1
}

impl Policy for PersonalizationForest {
    fn treatments(&self) -> usize {
        self.m
    }

    fn prescribe(&self, x: &[f64]) -> usize {
        mode(&self.tally(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d() -> Dataset {
        Dataset::new(
            vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
            vec![1, 2, 1, 2],
            vec![0.0, 5.0, 5.0, 0.0],
            2,
        )
        .unwrap()
    }

    #[test]
    fn mode_ties_go_low() {
        assert_eq!(mode(&[2, 1]), 1);
        assert_eq!(mode(&[1, 1]), 1);
        assert_eq!(mode(&[0, 1, 1]), 2);
    }

    #[test]
    fn degenerate_forest_equals_tree() {
        let ds = one_d();
        let base = PtConfig {
            n_min_leaf: 1,
            n_features: FeatureSubset::All,
            ..PtConfig::default()
        };
        let config = PfConfig {
            trees: 1,
            base,
            master_seed: 5,
            resample: Resample::Identity,
        };
        let forest = fit(&ds, &config).unwrap();
        let tree = pt::fit(
            &ds,
            &PtConfig {
                seed: derive_seed(5, 0),
                ..base
            },
        )
        .unwrap();
        assert_eq!(forest.trees[0], tree);
        for x in ds.rows() {
            assert_eq!(forest.predict(x).unwrap(), tree.predict(x).unwrap());
        }
    }

    #[test]
    fn votes_conserve_tree_count() {
        let ds = one_d();
        let config = PfConfig {
            trees: 5,
            base: PtConfig {
                n_min_leaf: 1,
                ..PtConfig::default()
            },
            ..PfConfig::default()
        };
        let forest = fit(&ds, &config).unwrap();
        for x in [0.0, 2.5, 3.7] {
            assert_eq!(forest.votes(&[x]).unwrap().iter().sum::<usize>(), 5);
        }
        assert!(forest.votes(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let ds = one_d();
        let config = PfConfig {
            trees: 3,
            base: PtConfig {
                n_min_leaf: 1,
                ..PtConfig::default()
            },
            ..PfConfig::default()
        };
        let forest = fit(&ds, &config).unwrap();
        let text = forest.to_json();
        assert!(text.starts_with(r#"{"kind":"pf","trees":[{"kind":"pt""#));
        assert_eq!(PersonalizationForest::from_json(&text).unwrap(), forest);
    }

    #[test]
    fn missing_arm_everywhere_fails_after_redraws() {
        let ds = Dataset::new(vec![vec![0.0], vec![1.0]], vec![1, 1], vec![0.0, 1.0], 2).unwrap();
        let config = PfConfig {
            trees: 1,
            ..PfConfig::default()
        };
        assert!(matches!(fit(&ds, &config), Err(PfError::Redraws { tree: 0 })));
    }
}
