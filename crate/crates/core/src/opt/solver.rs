use std::rc::Rc;
use std::time::{Duration, Instant};

use rand::Rng as _;

use super::cache::LruCache;
use super::{
    evaluate_assignment, leaf_value, padding_seed, shifted_outcomes, Assignment, CutMenu, OptConfig,
    OptError, OptimalTree, TreeSkeleton,
};
use crate::dataset::Dataset;
use crate::pt::{self, PtConfig, TreeNode};
use crate::rng::{derive_seed, rng_from_seed};

/// Result of [`solve_exact`].
#[derive(Debug, Clone)]
pub struct OptSolution {
    pub tree: OptimalTree,
    pub assignment: Assignment,
    /// Objective in shifted outcomes (`Y - min Y`).
    pub objective: f64,
    /// `min Y`, so `objective + n * shift` is in original units.
    pub shift: f64,
    /// `false` when the time limit cut the search short.
    pub proven: bool,
}

impl OptSolution {
    pub fn unshifted_objective(&self, n: usize) -> f64 {
        self.objective + n as f64 * self.shift
    }
}

type Bits = Box<[u64]>;

#[derive(Debug)]
enum Sub {
    Leaf(usize),
    Node(usize, Rc<Sub>, Rc<Sub>),
}

#[derive(Debug, Clone)]
enum Memo {
    Exact(f64, Rc<Sub>),
    /// The subproblem's optimum exceeds this value.
    Above(f64),
    Infeasible,
}

struct TimedOut;

struct Search<'a> {
    ds: &'a Dataset,
    skeleton: &'a TreeSkeleton,
    ybar: Vec<f64>,
    n_min: usize,
    /// `left[p - 1][c]`: rows sent left by cut `c` of node `p`.
    left: Vec<Vec<Bits>>,
    /// `arms[t - 1]`: rows with treatment `t`.
    arms: Vec<Bits>,
    memo: LruCache<(usize, Bits), Memo>,
    deadline: Option<Instant>,
}

fn popcount(b: &[u64]) -> usize {
    b.iter().map(|w| w.count_ones() as usize).sum()
}

fn ones(b: &[u64]) -> impl Iterator<Item = usize> + '_ {
    b.iter().enumerate().flat_map(|(k, &w)| {
        let mut w = w;
        std::iter::from_fn(move || {
            (w != 0).then(|| {
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                64 * k + bit
            })
        })
    })
}

fn slack(budget: f64) -> f64 {
    1e-9 * (1.0 + budget.abs())
}

impl Search<'_> {
    fn feasible_counts(&self, set: &[u64], p: usize) -> bool {
        let need = self.skeleton.leaves_below(p) * self.n_min;
        self.arms.iter().all(|arm| {
            set.iter()
                .zip(arm.iter())
                .map(|(a, b)| (a & b).count_ones() as usize)
                .sum::<usize>()
                >= need
        })
    }

    fn leaf(&self, set: &[u64]) -> Memo {
        let mut best: Option<(f64, usize)> = None;
        for t in 1..=self.ds.m() {
            match leaf_value(self.ds, &self.ybar, ones(set), t, self.n_min) {
                None => return Memo::Infeasible,
                Some(v) if best.is_none_or(|(b, _)| v < b) => best = Some((v, t)),
                Some(_) => {}
            }
        }
        match best {
            Some((v, t)) => Memo::Exact(v, Rc::new(Sub::Leaf(t))),
            None => Memo::Infeasible,
        }
    }

    /// Optimum of the subtree at `p` over rows `set`, if it is at most
    /// `budget`. Among equal optima the smallest cut indices (heap order)
    /// win.
    fn solve(&mut self, p: usize, set: Bits, budget: f64) -> Result<Option<(f64, Rc<Sub>)>, TimedOut> {
        if self.deadline.is_some_and(|d| Instant::now() >= d) {
            return Err(TimedOut);
        }
        let key = (p, set);
        if let Some(hit) = self.memo.get(&key) {
            match hit {
                Memo::Exact(v, sub) => return Ok((*v <= budget).then(|| (*v, sub.clone()))),
                Memo::Infeasible => return Ok(None),
                Memo::Above(b) if budget <= *b => return Ok(None),
                Memo::Above(_) => {}
            }
        }
        let set = key.1;
        let result = if !self.feasible_counts(&set, p) {
            Memo::Infeasible
        } else if self.skeleton.is_leaf(p) {
            self.leaf(&set)
        } else {
            self.internal(p, &set, budget)?
        };
        let answer = match &result {
            Memo::Exact(v, sub) if *v <= budget => Some((*v, sub.clone())),
            _ => None,
        };
        self.memo.insert((p, set), result);
        Ok(answer)
    }

    fn internal(&mut self, p: usize, set: &[u64], budget: f64) -> Result<Memo, TimedOut> {
        let mut best = budget;
        let mut found: Option<(f64, Rc<Sub>)> = None;
        let mut any_feasible = false;
        for c in 0..self.left[p - 1].len() {
            let mask = &self.left[p - 1][c];
            let l: Bits = set.iter().zip(mask.iter()).map(|(a, b)| a & b).collect();
            let r: Bits = set.iter().zip(mask.iter()).map(|(a, b)| a & !b).collect();
            if popcount(&l) == 0 || popcount(&r) == 0 {
                continue;
            }
            if !self.feasible_counts(&l, 2 * p) || !self.feasible_counts(&r, 2 * p + 1) {
                continue;
            }
            any_feasible = true;
            let Some((lv, ls)) = self.solve(2 * p, l, best)? else {
                continue;
            };
            let rb = best - lv + slack(best);
            let Some((rv, rs)) = self.solve(2 * p + 1, r, rb)? else {
                continue;
            };
            let total = lv + rv;
            let accept = match found {
                None => total <= best,
                Some(_) => total < best,
            };
            if accept {
                best = total;
                found = Some((total, Rc::new(Sub::Node(c, ls, rs))));
            }
        }
        Ok(match found {
            Some((v, sub)) => Memo::Exact(v, sub),
            None if any_feasible => Memo::Above(budget),
            None => Memo::Infeasible,
        })
    }
}

fn flatten(sub: &Sub, p: usize, skeleton: &TreeSkeleton, out: &mut Assignment) {
    match sub {
        Sub::Leaf(t) => out.treatments[p - skeleton.leaf_count()] = *t,
        Sub::Node(c, l, r) => {
            out.cuts[p - 1] = *c;
            flatten(l, 2 * p, skeleton, out);
            flatten(r, 2 * p + 1, skeleton, out);
        }
    }
}

fn bits_of(n: usize, pred: impl Fn(usize) -> bool) -> Bits {
    let mut b = vec![0u64; n.div_ceil(64)].into_boxed_slice();
    for i in (0..n).filter(|&i| pred(i)) {
        b[i / 64] |= 1 << (i % 64);
    }
    b
}

/// Exact minimization over the menu by recursive decomposition: the value
/// of node `p` on a row set is the best cut's left value plus right value;
/// a leaf's value is `count * mean` of its best arm, provided every arm has
/// `n_min_leaf` samples.
///
/// Subproblems are memoized on `(node, row set)` in an LRU table capped at
/// `config.cache_mb`. A feasible `warm` assignment bounds the search. Ties
/// go to the smallest cut indices in heap order, then the lowest treatment,
/// whether or not a warm start is given. If `config.time_limit` expires the
/// best complete tree found so far (or `warm`) comes back with
/// `proven = false`.
pub fn solve_exact(
    ds: &Dataset,
    skeleton: &TreeSkeleton,
    menu: &CutMenu,
    config: &OptConfig,
    warm: Option<&Assignment>,
) -> Result<OptSolution, OptError> {
    config.validate()?;
    if menu.nodes() != skeleton.internal_count() {
        return Err(OptError::Config(format!(
            "menu covers {} nodes, skeleton has {}",
            menu.nodes(),
            skeleton.internal_count()
        )));
    }
    let n = ds.n();
    let (ybar, shift) = shifted_outcomes(ds);
    let need = skeleton.leaf_count() * config.n_min_leaf;
    if let Some(t) = ds.treatment_counts().iter().position(|&c| c < need) {
        return Err(OptError::Infeasible(format!(
            "treatment {} has fewer than {need} samples ({} leaves x n_min_leaf)",
            t + 1,
            skeleton.leaf_count()
        )));
    }

    let warm_value = warm.and_then(|a| evaluate_assignment(ds, skeleton, menu, a, config));
    let words = n.div_ceil(64);
    let entry_bytes = 8 * words + 128;
    let capacity = (config.cache_mb << 20) / entry_bytes;
    let mut search = Search {
        ds,
        skeleton,
        ybar,
        n_min: config.n_min_leaf,
        left: skeleton
            .internal()
            .map(|p| {
                menu.cuts(p)
                    .iter()
                    .map(|cut| bits_of(n, |i| cut.goes_left(ds.row(i))))
                    .collect()
            })
            .collect(),
        arms: (1..=ds.m())
            .map(|t| bits_of(n, |i| ds.treatment(i) == t))
            .collect(),
        memo: LruCache::new(capacity),
        deadline: config
            .time_limit
            .map(|s| Instant::now() + Duration::from_secs_f64(s)),
    };
    let all = bits_of(n, |_| true);

    let finish = |assignment: Assignment, objective: f64, proven: bool| OptSolution {
        tree: OptimalTree::from_assignment(ds, skeleton, menu, &assignment),
        assignment,
        objective,
        shift,
        proven,
    };
    let empty = || Assignment {
        cuts: vec![0; skeleton.internal_count()],
        treatments: vec![1; skeleton.leaf_count()],
    };

    // Root level unrolled so a timeout can fall back to the best full tree.
    let mut best = warm_value.unwrap_or(f64::INFINITY);
    let mut found: Option<(f64, Rc<Sub>)> = None;
    for c in 0..menu.cuts(1).len() {
        let mask = search.left[0][c].clone();
        let l: Bits = all.iter().zip(mask.iter()).map(|(a, b)| a & b).collect();
        let r: Bits = all.iter().zip(mask.iter()).map(|(a, b)| a & !b).collect();
        let step = (|| {
            let Some((lv, ls)) = search.solve(2, l, best)? else {
                return Ok(None);
            };
            let rb = best - lv + slack(best);
            let Some((rv, rs)) = search.solve(3, r, rb)? else {
                return Ok(None);
            };
            Ok(Some((lv + rv, ls, rs)))
        })();
        match step {
            Ok(Some((total, ls, rs))) => {
                let accept = match found {
                    None => total <= best,
                    Some(_) => total < best,
                };
                if accept {
                    best = total;
                    found = Some((total, Rc::new(Sub::Node(c, ls, rs))));
                }
            }
            Ok(None) => {}
            Err(TimedOut) => {
                log::warn!("time limit reached after {c} root cuts");
                return match (found, warm, warm_value) {
                    (Some((v, sub)), _, _) => {
                        let mut a = empty();
                        flatten(&sub, 1, skeleton, &mut a);
                        Ok(finish(a, v, false))
                    }
                    (None, Some(a), Some(v)) => Ok(finish(a.clone(), v, false)),
                    _ => Err(OptError::Timeout),
                };
            }
        }
    }
    match (found, warm, warm_value) {
        (Some((v, sub)), _, _) => {
            let mut a = empty();
            flatten(&sub, 1, skeleton, &mut a);
            Ok(finish(a, v, true))
        }
        (None, Some(a), Some(v)) => Ok(finish(a.clone(), v, true)),
        _ => Err(OptError::Infeasible(
            "no assignment of menu cuts meets n_min_leaf in every leaf".into(),
        )),
    }
}

/// Index of the menu cut on `feature` nearest to `threshold` (lowest index
/// on ties).
fn snap(menu: &CutMenu, p: usize, feature: usize, threshold: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (c, cut) in menu.cuts(p).iter().enumerate() {
        if cut.feature != feature {
            continue;
        }
        let gap = (cut.threshold - threshold).abs();
        if best.is_none_or(|(_, g)| gap < g) {
            best = Some((c, gap));
        }
    }
    best.map(|(c, _)| c)
}

/// Warm start from a greedy tree grown to depth `delta`: its cuts are
/// snapped to the nearest menu threshold on the same feature, and leaves
/// shallower than `delta` are padded with cuts drawn uniformly among those
/// that keep enough samples of every treatment below, the new children
/// inheriting the leaf's prescription. Returns `None` if the greedy tree
/// cannot be fitted or the padded tree is infeasible.
pub fn warm_start_from_pt(
    ds: &Dataset,
    skeleton: &TreeSkeleton,
    menu: &CutMenu,
    config: &OptConfig,
) -> Option<Assignment> {
    let pt_config = PtConfig {
        n_min_leaf: config.n_min_leaf,
        max_depth: Some(skeleton.depth()),
        n_features: config.n_features,
        seed: derive_seed(config.seed, 1),
        scarce: false,
    };
    let tree = pt::fit(ds, &pt_config).ok()?;
    let mut assignment = Assignment {
        cuts: vec![0; skeleton.internal_count()],
        treatments: vec![1; skeleton.leaf_count()],
    };
    let mut rng = rng_from_seed(padding_seed(config.seed));
    let rows: Vec<usize> = (0..ds.n()).collect();
    let ok = place(
        ds,
        skeleton,
        menu,
        config,
        Some(&tree.root),
        1,
        rows,
        1,
        &mut assignment,
        &mut rng,
    );
    if !ok {
        return None;
    }
    evaluate_assignment(ds, skeleton, menu, &assignment, config).map(|_| assignment)
}

fn arms_ok(ds: &Dataset, rows: &[usize], need: usize) -> bool {
    let mut counts = vec![0; ds.m()];
    for &i in rows {
        counts[ds.treatment(i) - 1] += 1;
    }
    counts.iter().all(|&c| c >= need)
}

#[allow(clippy::too_many_arguments)]
fn place(
    ds: &Dataset,
    skeleton: &TreeSkeleton,
    menu: &CutMenu,
    config: &OptConfig,
    node: Option<&TreeNode>,
    p: usize,
    rows: Vec<usize>,
    inherited: usize,
    out: &mut Assignment,
    rng: &mut crate::rng::Rng,
) -> bool {
    if skeleton.is_leaf(p) {
        out.treatments[p - skeleton.leaf_count()] = match node {
            Some(TreeNode::Leaf(leaf)) => leaf.treatment,
            _ => inherited,
        };
        return true;
    }
    let split = |c: usize| -> (Vec<usize>, Vec<usize>) {
        let cut = menu.cuts(p)[c];
        rows.iter().partition(|&&i| cut.goes_left(ds.row(i)))
    };
    let (c, children, treatment) = match node {
        Some(TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        }) => {
            let c = match snap(menu, p, *feature, *threshold) {
                Some(c) => c,
                None => return false,
            };
            (c, [Some(&**left), Some(&**right)], inherited)
        }
        _ => {
            let treatment = match node {
                Some(TreeNode::Leaf(leaf)) => leaf.treatment,
                _ => inherited,
            };
            let need = skeleton.leaves_below(2 * p) * config.n_min_leaf;
            let feasible: Vec<usize> = (0..menu.cuts(p).len())
                .filter(|&c| {
                    let (l, r) = split(c);
                    arms_ok(ds, &l, need) && arms_ok(ds, &r, need)
                })
                .collect();
            if feasible.is_empty() {
                return false;
            }
            (
                feasible[rng.random_range(0..feasible.len())],
                [None, None],
                treatment,
            )
        }
    };
    out.cuts[p - 1] = c;
    let (l, r) = split(c);
    place(
        ds,
        skeleton,
        menu,
        config,
        children[0],
        2 * p,
        l,
        treatment,
        out,
        rng,
    ) && place(
        ds,
        skeleton,
        menu,
        config,
        children[1],
        2 * p + 1,
        r,
        treatment,
        out,
        rng,
    )
}
