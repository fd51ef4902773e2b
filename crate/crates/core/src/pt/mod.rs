//! Personalization trees: greedy recursive partitioning that minimizes the
//! sum of within-leaf personalization impurities.

mod json;
mod split;

pub(crate) use json::{parse_doc, RawTree};
pub use split::{best_split, SplitCandidate, SplitRule};

use rand::seq::index::sample;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::risk::{ArmStats, Partition, Policy, RiskError};
use crate::rng::{rng_from_seed, Rng};

#[derive(Debug, Error)]
pub enum PtError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot fit on an empty dataset")]
    Empty,
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("covariate vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("malformed model at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid model at `{path}`: {message}")]
    Validation { path: String, message: String },
}

/// How many candidate features to draw at each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureSubset {
    #[default]
    All,
    /// `ceil(sqrt(d))`.
    Sqrt,
    Count(usize),
}

impl FeatureSubset {
    pub fn resolve(self, d: usize) -> Result<usize, PtError> {
        match self {
            FeatureSubset::All => Ok(d),
            FeatureSubset::Sqrt => Ok(((d as f64).sqrt().ceil() as usize).min(d)),
            FeatureSubset::Count(k) if k >= 1 && k <= d => Ok(k),
            FeatureSubset::Count(k) => Err(PtError::Config(format!("n_features = {k} outside 1..={d}"))),
        }
    }
}

impl Serialize for FeatureSubset {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            FeatureSubset::All => s.serialize_str("all"),
            FeatureSubset::Sqrt => s.serialize_str("sqrt"),
            FeatureSubset::Count(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for FeatureSubset {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(k) => Ok(FeatureSubset::Count(k)),
            Raw::Name(n) if n == "all" => Ok(FeatureSubset::All),
            Raw::Name(n) if n == "sqrt" => Ok(FeatureSubset::Sqrt),
            Raw::Name(n) => Err(serde::de::Error::custom(format!(
                "expected \"all\", \"sqrt\" or a count, got \"{n}\""
            ))),
        }
    }
}

/// Tuning parameters of a personalization tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PtConfig {
    /// Minimum samples of each treatment on both sides of a cut (strict
    /// mode), or the eligibility floor for prescriptions (scarce mode).
    pub n_min_leaf: usize,
    /// `None` means unbounded depth.
    pub max_depth: Option<usize>,
    pub n_features: FeatureSubset,
    pub seed: u64,
    pub scarce: bool,
}

impl Default for PtConfig {
    fn default() -> Self {
        PtConfig {
            n_min_leaf: 20,
            max_depth: None,
            n_features: FeatureSubset::All,
            seed: 0,
            scarce: false,
        }
    }
}

impl PtConfig {
    pub fn rule(&self) -> SplitRule {
        SplitRule {
            n_min_leaf: self.n_min_leaf,
            scarce: self.scarce,
        }
    }
}

/// Leaf payload: prescription plus the arm statistics it was chosen from.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub treatment: usize,
    pub counts: Vec<usize>,
    /// Mean outcome per arm; `None` for arms without samples.
    pub means: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf(Leaf),
}

impl TreeNode {
    fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 1,
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }
}

/// A fitted personalization tree.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonalizationTree {
    pub root: TreeNode,
    pub m: usize,
    pub d: usize,
    pub config: PtConfig,
}

impl PersonalizationTree {
    /// Routes `x` left when `x[feature] <= threshold`.
    pub fn predict(&self, x: &[f64]) -> Result<usize, PtError> {
        if x.len() != self.d {
            return Err(PtError::Dimension {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(self.leaf(x).treatment)
    }

    pub fn leaf(&self, x: &[f64]) -> &Leaf {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf(leaf) => return leaf,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    /// Leaf id of `x`, numbering leaves left to right from 0.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut node = &self.root;
        let mut offset = 0;
        loop {
            match node {
                TreeNode::Leaf(_) => return offset,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if x[*feature] <= *threshold {
                        node = left;
                    } else {
                        offset += left.leaf_count();
                        node = right;
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn leaf_count(&self) -> usize {
        self.root.leaf_count()
    }

    /// The partition this tree induces on the rows of `ds`.
    pub fn partition(&self, ds: &Dataset) -> Partition {
        let leaf_of = ds.rows().map(|x| self.leaf_index(x)).collect();
        Partition::new(leaf_of, self.leaf_count()).expect("leaf ids are in range")
    }
}

impl Policy for PersonalizationTree {
    fn treatments(&self) -> usize {
        self.m
    }

    fn prescribe(&self, x: &[f64]) -> usize {
        debug_assert_eq!(x.len(), self.d);
        self.leaf(x).treatment
    }
}

struct Grower<'a> {
    ds: &'a Dataset,
    config: PtConfig,
    n_features: usize,
    rng: Rng,
}

impl Grower<'_> {
    fn leaf(&self, indices: &[usize]) -> Result<TreeNode, PtError> {
        let mut stats = ArmStats::new(self.ds.m());
        for &i in indices {
            stats.add(self.ds.treatment(i), self.ds.outcome(i));
        }
        let (treatment, _) = stats.best_arm(self.config.rule().mode())?;
        let means = (1..=self.ds.m())
            .map(|t| (stats.counts[t - 1] > 0).then(|| stats.mean(t)))
            .collect();
        Ok(TreeNode::Leaf(Leaf {
            treatment,
            counts: stats.counts,
            means,
        }))
    }

    fn grow(&mut self, indices: Vec<usize>, depth: usize) -> Result<TreeNode, PtError> {
        if self.config.max_depth.is_some_and(|max| depth >= max) {
            return self.leaf(&indices);
        }
        let features = sample(&mut self.rng, self.ds.d(), self.n_features).into_vec();
        let Some(cut) = best_split(self.ds, &indices, &features, self.config.rule()) else {
            return self.leaf(&indices);
        };
        let (left, right): (Vec<usize>, Vec<usize>) = indices
            .into_iter()
            .partition(|&i| self.ds.value(i, cut.feature) <= cut.threshold);
        debug_assert_eq!(left.len(), cut.position);
        let left = self.grow(left, depth + 1)?;
        let right = self.grow(right, depth + 1)?;
        Ok(TreeNode::Split {
            feature: cut.feature,
            threshold: cut.threshold,
            left: Box::new(left),
            right: Box::new(right),
        })
    }
}

/// Grows a personalization tree on all of `ds`.
///
/// At every node a fresh set of candidate features is drawn without
/// replacement; recursion stops at `max_depth` or when no feasible cut
/// remains. Splits are taken even when they do not lower the impurity.
/// Each leaf prescribes its lowest-mean eligible treatment.
pub fn fit(ds: &Dataset, config: &PtConfig) -> Result<PersonalizationTree, PtError> {
    if ds.is_empty() {
        return Err(PtError::Empty);
    }
    if config.n_min_leaf < 1 {
        return Err(PtError::Config("n_min_leaf must be >= 1".into()));
    }
    let n_features = config.n_features.resolve(ds.d())?;
    if !config.scarce {
        if let Some(t) = ds.treatment_counts().iter().position(|&c| c == 0) {
            return Err(RiskError::MissingTreatment(t + 1).into());
        }
    }
    let mut grower = Grower {
        ds,
        config: *config,
        n_features,
        rng: rng_from_seed(config.seed),
    };
    let root = grower.grow((0..ds.n()).collect(), 0)?;
    Ok(PersonalizationTree {
        root,
        m: ds.m(),
        d: ds.d(),
        config: *config,
    })
}
