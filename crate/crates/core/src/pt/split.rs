use crate::dataset::Dataset;
use crate::risk::{ArmStats, ImpurityMode};

/// The best axis-aligned cut of a subsample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    /// Sum of the two children's impurities.
    pub impurity: f64,
    /// Number of samples sent left.
    pub position: usize,
}

/// Feasibility rule shared by the sweep and its callers.
#[derive(Debug, Clone, Copy)]
pub struct SplitRule {
    pub n_min_leaf: usize,
    pub scarce: bool,
}

impl SplitRule {
    pub fn mode(&self) -> ImpurityMode {
        if self.scarce {
            ImpurityMode::Scarce {
                n_min_leaf: self.n_min_leaf,
            }
        } else {
            ImpurityMode::Strict
        }
    }

    /// Sum of child impurities if the cut is feasible.
    pub fn score(&self, left: &ArmStats, right: &ArmStats) -> Option<f64> {
        if !self.scarce {
            let k_min = left
                .counts
                .iter()
                .chain(&right.counts)
                .copied()
                .min()
                .unwrap_or(0);
            if k_min < self.n_min_leaf.max(1) {
                return None;
            }
        }
        let mode = self.mode();
        Some(left.impurity(mode).ok()? + right.impurity(mode).ok()?)
    }
}

/// Scans every allowed feature in sorted order, moving one sample at a time
/// from the right child to the left and keeping per-treatment counts and
/// outcome sums of both sides up to date.
///
/// Only positions between strictly increasing values are candidates, and the
/// threshold is the midpoint of the two straddling values. The first cut
/// with the smallest impurity sum wins (features in the given order, then
/// ascending position). Returns `None` when no feasible cut exists.
pub fn best_split(
    ds: &Dataset,
    indices: &[usize],
    features: &[usize],
    rule: SplitRule,
) -> Option<SplitCandidate> {
    let k = indices.len();
    if k < 2 {
        return None;
    }
    let m = ds.m();
    let mut parent = ArmStats::new(m);
    for &i in indices {
        parent.add(ds.treatment(i), ds.outcome(i));
    }

    let mut best: Option<SplitCandidate> = None;
    let mut order = indices.to_vec();
    for &feature in features {
        order.copy_from_slice(indices);
        order.sort_by(|&a, &b| ds.value(a, feature).total_cmp(&ds.value(b, feature)));

        let mut left = ArmStats::new(m);
        let mut right = parent.clone();
        for j in 0..k - 1 {
            let i = order[j];
            let (t, y) = (ds.treatment(i), ds.outcome(i));
            left.add(t, y);
            right.remove(t, y);
            debug_assert!(left
                .counts
                .iter()
                .zip(&right.counts)
                .zip(&parent.counts)
                .all(|((l, r), p)| l + r == *p));

            let lo = ds.value(i, feature);
            let hi = ds.value(order[j + 1], feature);
            if !(lo < hi) {
                continue;
            }
            let Some(score) = rule.score(&left, &right) else {
                continue;
            };
            if best.is_none_or(|b| score < b.impurity) {
                best = Some(SplitCandidate {
                    feature,
                    threshold: 0.5 * (lo + hi),
                    impurity: score,
                    position: j + 1,
                });
            }
        }
    }
    best
}
