//! Optimal personalization trees of fixed depth.
//!
//! A complete binary tree of depth `delta` is laid out in heap order:
//! internal nodes `1..2^delta`, leaves `2^delta..2^(delta+1)`, children of
//! `q` at `2q` (left) and `2q + 1` (right). Each internal node picks one cut
//! from a finite menu and each leaf one treatment. [`solve_exact`] finds the
//! assignment minimizing the summed leaf impurities subject to every leaf
//! holding at least `n_min_leaf` samples of every treatment; [`build_mip`]
//! emits the same problem as a mixed-integer program.

mod cache;
mod mip;
mod mps;
mod solver;

pub use cache::LruCache;
pub use mip::{
    build_mip, check_solution, induced_solution, values_from_names, Constraint, MipModel, Sense, VarKind,
    VarMeaning, Variable, Violation,
};
pub use mps::{export_mps, name_map_json, write_mps};
pub use solver::{solve_exact, warm_start_from_pt, OptSolution};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::pt::{FeatureSubset, PtError};
use crate::risk::Policy;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Error)]
pub enum OptError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no usable cut at node {node}: every candidate feature is constant")]
    EmptyMenu { node: usize },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("time limit reached before any feasible tree was found")]
    Timeout,
    #[error("covariate vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] PtError),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("missing value for variable `{0}`")]
    MissingVariable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptConfig {
    /// Tree depth.
    pub delta: usize,
    pub n_min_leaf: usize,
    /// Candidate features per internal node.
    pub n_features: FeatureSubset,
    /// Grid resolution along each sorted feature.
    pub n_cuts: usize,
    /// Seconds; `None` runs to proven optimality.
    pub time_limit: Option<f64>,
    pub seed: u64,
    /// Memory cap for the solver's memo table, in MiB.
    pub cache_mb: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            delta: 2,
            n_min_leaf: 20,
            n_features: FeatureSubset::All,
            n_cuts: 10,
            time_limit: None,
            seed: 0,
            cache_mb: 256,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<(), OptError> {
        if self.delta < 1 || self.delta > 16 {
            return Err(OptError::Config(format!("delta = {} outside 1..=16", self.delta)));
        }
        if self.n_cuts < 1 {
            return Err(OptError::Config("n_cuts must be >= 1".into()));
        }
        if self.n_min_leaf < 1 {
            return Err(OptError::Config("n_min_leaf must be >= 1".into()));
        }
        if self.time_limit.is_some_and(|t| !(t >= 0.0)) {
            return Err(OptError::Config("time_limit must be >= 0".into()));
        }
        Ok(())
    }
}

/// Shape of a complete binary tree in heap order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeSkeleton {
    depth: usize,
}

impl TreeSkeleton {
    pub fn new(depth: usize) -> Result<Self, OptError> {
        if !(1..=16).contains(&depth) {
            return Err(OptError::Config(format!("depth = {depth} outside 1..=16")));
        }
        Ok(TreeSkeleton { depth })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn internal_count(&self) -> usize {
        (1 << self.depth) - 1
    }

    pub fn leaf_count(&self) -> usize {
        1 << self.depth
    }

    pub fn internal(&self) -> std::ops::Range<usize> {
        1..1 << self.depth
    }

    pub fn leaves(&self) -> std::ops::Range<usize> {
        1 << self.depth..2 << self.depth
    }

    pub fn is_leaf(&self, p: usize) -> bool {
        self.leaves().contains(&p)
    }

    /// Ancestors of leaf `p` from the root down, each with the branch taken:
    /// `+1` right, `-1` left.
    pub fn ancestors(&self, p: usize) -> Vec<(usize, i8)> {
        debug_assert!(self.is_leaf(p));
        let mut path = Vec::with_capacity(self.depth);
        let mut c = p;
        while c > 1 {
            path.push((c / 2, if c % 2 == 1 { 1 } else { -1 }));
            c /= 2;
        }
        path.reverse();
        path
    }

    /// Number of leaves below node `p` (1 for a leaf).
    pub fn leaves_below(&self, p: usize) -> usize {
        let level = usize::BITS as usize - 1 - p.leading_zeros() as usize;
        1 << (self.depth - level)
    }
}

/// Axis-aligned cut: go left when `x[feature] <= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub feature: usize,
    pub threshold: f64,
}

impl Cut {
    pub fn goes_left(&self, x: &[f64]) -> bool {
        x[self.feature] <= self.threshold
    }
}

/// Candidate cuts per internal node; `cuts(p)` for `p` in heap order.
#[derive(Debug, Clone, PartialEq)]
pub struct CutMenu {
    per_node: Vec<Vec<Cut>>,
}

impl CutMenu {
    /// `per_node[p - 1]` lists the cuts of internal node `p`.
    pub fn new(per_node: Vec<Vec<Cut>>) -> Result<Self, OptError> {
        for (k, cuts) in per_node.iter().enumerate() {
            if cuts.is_empty() {
                return Err(OptError::EmptyMenu { node: k + 1 });
            }
            for (a, c) in cuts.iter().enumerate() {
                if !c.threshold.is_finite() {
                    return Err(OptError::Config(format!(
                        "non-finite threshold at node {}",
                        k + 1
                    )));
                }
                if cuts[..a].contains(c) {
                    return Err(OptError::Config(format!("duplicate cut at node {}", k + 1)));
                }
            }
        }
        Ok(CutMenu { per_node })
    }

    pub fn cuts(&self, p: usize) -> &[Cut] {
        &self.per_node[p - 1]
    }

    pub fn nodes(&self) -> usize {
        self.per_node.len()
    }
}

/// Grid positions `{1, s, 2s, ...}` below `n`, with `s = ceil((n - 1) / n_cuts)`.
pub fn grid_positions(n: usize, n_cuts: usize) -> Vec<usize> {
    if n < 2 {
        return Vec::new();
    }
    let s = (n - 1).div_ceil(n_cuts);
    let mut j: Vec<usize> = std::iter::once(1)
        .chain((1..).map(|k| k * s).take_while(|&p| p < n))
        .collect();
    j.dedup();
    j
}

/// Thresholds along one feature: at each grid position `j` of the sorted
/// column, the midpoint between the `j`-th value and the next strictly
/// larger one. Ascending and duplicate-free.
pub fn feature_thresholds(ds: &Dataset, feature: usize, n_cuts: usize) -> Vec<f64> {
    let mut col: Vec<f64> = (0..ds.n()).map(|i| ds.value(i, feature)).collect();
    col.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::new();
    for j in grid_positions(col.len(), n_cuts) {
        let lo = col[j - 1];
        if let Some(&hi) = col[j..].iter().find(|&&v| v > lo) {
            let t = 0.5 * (lo + hi);
            if out.last() != Some(&t) {
                out.push(t);
            }
        }
    }
    out
}

/// Draws `n_features` features per internal node (seeded, in node order) and
/// collects their grid thresholds, sorted by feature then threshold.
pub fn build_cut_menu(
    ds: &Dataset,
    skeleton: &TreeSkeleton,
    config: &OptConfig,
) -> Result<CutMenu, OptError> {
    config.validate()?;
    if ds.n() < 2 {
        return Err(OptError::Config("a cut menu needs n >= 2".into()));
    }
    let k = config.n_features.resolve(ds.d())?;
    let columns: Vec<Vec<f64>> = (0..ds.d())
        .map(|f| feature_thresholds(ds, f, config.n_cuts))
        .collect();
    let mut rng = rng_from_seed(config.seed);
    let mut per_node = Vec::with_capacity(skeleton.internal_count());
    for p in skeleton.internal() {
        let mut features = sample(&mut rng, ds.d(), k).into_vec();
        features.sort_unstable();
        let cuts: Vec<Cut> = features
            .iter()
            .flat_map(|&f| {
                columns[f].iter().map(move |&threshold| Cut {
                    feature: f,
                    threshold,
                })
            })
            .collect();
        if cuts.is_empty() {
            return Err(OptError::EmptyMenu { node: p });
        }
        per_node.push(cuts);
    }
    CutMenu::new(per_node)
}

/// Menu indices per internal node and treatments (1-based) per leaf, both
/// in heap order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub cuts: Vec<usize>,
    pub treatments: Vec<usize>,
}

/// Outcomes shifted so the smallest is zero.
pub fn shifted_outcomes(ds: &Dataset) -> (Vec<f64>, f64) {
    let min = ds.outcomes().iter().copied().fold(f64::INFINITY, f64::min);
    (ds.outcomes().iter().map(|y| y - min).collect(), min)
}

/// Leaf (heap id) reached by `x` under the chosen cuts.
pub fn route(skeleton: &TreeSkeleton, menu: &CutMenu, cuts: &[usize], x: &[f64]) -> usize {
    let mut p = 1;
    for _ in 0..skeleton.depth() {
        let cut = menu.cuts(p)[cuts[p - 1]];
        p = 2 * p + usize::from(!cut.goes_left(x));
    }
    p
}

/// Leaf term `count * mean` of arm `t` over `members` (ascending), or `None`
/// when some arm has fewer than `n_min` samples.
pub(crate) fn leaf_value(
    ds: &Dataset,
    ybar: &[f64],
    members: impl Iterator<Item = usize>,
    t: usize,
    n_min: usize,
) -> Option<f64> {
    let m = ds.m();
    let mut counts = vec![0usize; m];
    let mut sums = vec![0.0; m];
    let mut total = 0usize;
    for i in members {
        let a = ds.treatment(i) - 1;
        counts[a] += 1;
        sums[a] += ybar[i];
        total += 1;
    }
    if counts.iter().any(|&c| c < n_min) {
        return None;
    }
    Some(total as f64 * (sums[t - 1] / counts[t - 1] as f64))
}

/// Objective (in shifted outcomes) of a full assignment, or `None` if some
/// leaf holds fewer than `n_min_leaf` samples of some treatment. Leaf terms
/// are summed pairwise up the tree.
pub fn evaluate_assignment(
    ds: &Dataset,
    skeleton: &TreeSkeleton,
    menu: &CutMenu,
    assignment: &Assignment,
    config: &OptConfig,
) -> Option<f64> {
    let (ybar, _) = shifted_outcomes(ds);
    let mut members = vec![Vec::new(); skeleton.leaf_count()];
    let base = skeleton.leaf_count();
    for (i, x) in ds.rows().enumerate() {
        members[route(skeleton, menu, &assignment.cuts, x) - base].push(i);
    }
    let n_min = config.n_min_leaf.max(1);
    let mut level: Vec<f64> = Vec::with_capacity(base);
    for (k, rows) in members.iter().enumerate() {
        level.push(leaf_value(
            ds,
            &ybar,
            rows.iter().copied(),
            assignment.treatments[k],
            n_min,
        )?);
    }
    while level.len() > 1 {
        level = level.chunks(2).map(|c| c[0] + c[1]).collect();
    }
    Some(level[0])
}

/// A solved tree: one cut per internal node, one treatment per leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalTree {
    pub depth: usize,
    /// `cuts[p - 1]` for internal node `p`.
    pub cuts: Vec<Cut>,
    /// `treatments[p - 2^depth]` for leaf `p`.
    pub treatments: Vec<usize>,
    pub m: usize,
    pub d: usize,
}

impl OptimalTree {
    pub fn from_assignment(
        ds: &Dataset,
        skeleton: &TreeSkeleton,
        menu: &CutMenu,
        assignment: &Assignment,
    ) -> Self {
        OptimalTree {
            depth: skeleton.depth(),
            cuts: skeleton
                .internal()
                .map(|p| menu.cuts(p)[assignment.cuts[p - 1]])
                .collect(),
            treatments: assignment.treatments.clone(),
            m: ds.m(),
            d: ds.d(),
        }
    }

    /// Heap id of the leaf reached by `x`.
    pub fn leaf(&self, x: &[f64]) -> usize {
        let mut p = 1;
        for _ in 0..self.depth {
            p = 2 * p + usize::from(!self.cuts[p - 1].goes_left(x));
        }
        p
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize, OptError> {
        if x.len() != self.d {
            return Err(OptError::Dimension {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(self.prescribe(x))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&RawOpt {
            kind: "opt".into(),
            m: self.m,
            d: self.d,
            depth: self.depth,
            cuts: self.cuts.clone(),
            treatments: self.treatments.clone(),
        })
        .expect("tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, OptError> {
        let raw: RawOpt = crate::pt::parse_doc(text)?;
        let invalid = |path: &str, message: String| {
            OptError::Model(PtError::Validation {
                path: path.into(),
                message,
            })
        };
        if raw.kind != "opt" {
            return Err(invalid("kind", format!("expected \"opt\", got \"{}\"", raw.kind)));
        }
        let skeleton = TreeSkeleton::new(raw.depth)?;
        if raw.cuts.len() != skeleton.internal_count() {
            return Err(invalid(
                "cuts",
                format!("expected {} cuts", skeleton.internal_count()),
            ));
        }
        if raw.treatments.len() != skeleton.leaf_count() {
            return Err(invalid(
                "treatments",
                format!("expected {} treatments", skeleton.leaf_count()),
            ));
        }
        for (k, c) in raw.cuts.iter().enumerate() {
            if c.feature >= raw.d || !c.threshold.is_finite() {
                return Err(invalid(&format!("cuts[{k}]"), "bad feature or threshold".into()));
            }
        }
        if let Some(k) = raw.treatments.iter().position(|&t| t < 1 || t > raw.m) {
            return Err(invalid(
                &format!("treatments[{k}]"),
                format!("treatment outside 1..={}", raw.m),
            ));
        }
        Ok(OptimalTree {
            depth: raw.depth,
            cuts: raw.cuts,
            treatments: raw.treatments,
            m: raw.m,
            d: raw.d,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct RawOpt {
    kind: String,
    m: usize,
    d: usize,
    depth: usize,
    cuts: Vec<Cut>,
    treatments: Vec<usize>,
}

impl Policy for OptimalTree {
    fn treatments(&self) -> usize {
        self.m
    }

    fn prescribe(&self, x: &[f64]) -> usize {
        self.treatments[self.leaf(x) - (1 << self.depth)]
    }
}

/// Builds the menu, seeds the solver from a greedy tree, and solves.
pub fn fit(ds: &Dataset, config: &OptConfig) -> Result<OptSolution, OptError> {
    config.validate()?;
    let skeleton = TreeSkeleton::new(config.delta)?;
    let menu = build_cut_menu(ds, &skeleton, config)?;
    let warm = warm_start_from_pt(ds, &skeleton, &menu, config);
    solve_exact(ds, &skeleton, &menu, config, warm.as_ref())
}

/// Seed for the padding cuts of the warm start.
pub(crate) fn padding_seed(seed: u64) -> u64 {
    derive_seed(seed, 2)
}
