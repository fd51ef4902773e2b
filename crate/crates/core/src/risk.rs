//! Personalization risk: the impurity measure, the partition-based risk
//! estimate, inverse-propensity weighting, and oracle metrics on data with
//! known counterfactuals.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::dataset::Dataset;

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("impurity undefined: no eligible treatment in the subsample")]
    UndefinedImpurity,
    #[error("impurity undefined: treatment {0} is absent from the subsample")]
    MissingTreatment(usize),
    #[error("estimate undefined in leaf {leaf}: no sample received prescribed treatment {treatment}")]
    UndefinedEstimate { leaf: usize, treatment: usize },
    #[error("dataset has no propensities")]
    MissingPropensity,
    #[error("dataset has no counterfactuals")]
    MissingCounterfactuals,
    #[error("empty input")]
    Empty,
    #[error("{0}")]
    Mismatch(String),
}

/// A treatment-personalization rule: covariates in, 1-based treatment out.
pub trait Policy: Sync {
    /// Number of treatments `m`.
    fn treatments(&self) -> usize;
    /// Prescribed treatment in `1..=m`. `x` must have the policy's covariate
    /// dimension.
    fn prescribe(&self, x: &[f64]) -> usize;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn treatments(&self) -> usize {
        (**self).treatments()
    }
    fn prescribe(&self, x: &[f64]) -> usize {
        (**self).prescribe(x)
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn treatments(&self) -> usize {
        (**self).treatments()
    }
    fn prescribe(&self, x: &[f64]) -> usize {
        (**self).prescribe(x)
    }
}

/// Always prescribes the same treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstantPolicy {
    pub treatment: usize,
    pub m: usize,
}

impl Policy for ConstantPolicy {
    fn treatments(&self) -> usize {
        self.m
    }
    fn prescribe(&self, _x: &[f64]) -> usize {
        self.treatment
    }
}

/// Wraps a closure as a policy.
pub struct FnPolicy<F> {
    f: F,
    m: usize,
}

impl<F: Fn(&[f64]) -> usize + Sync> FnPolicy<F> {
    pub fn new(m: usize, f: F) -> Self {
        FnPolicy { f, m }
    }
}

impl<F: Fn(&[f64]) -> usize + Sync> Policy for FnPolicy<F> {
    fn treatments(&self) -> usize {
        self.m
    }
    fn prescribe(&self, x: &[f64]) -> usize {
        (self.f)(x)
    }
}

/// Prescriptions for every row of `ds`.
pub fn prescriptions<P: Policy + ?Sized>(ds: &Dataset, pol: &P) -> Vec<usize> {
    ds.rows().map(|x| pol.prescribe(x)).collect()
}

/// Which treatments may be prescribed inside a subsample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImpurityMode {
    /// Every treatment must be present; the minimum runs over all of them.
    Strict,
    /// Any composition is allowed; the minimum runs over treatments with at
    /// least `n_min_leaf` samples.
    Scarce { n_min_leaf: usize },
}

/// Per-treatment counts and outcome sums of a subsample.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmStats {
    pub counts: Vec<usize>,
    pub sums: Vec<f64>,
}

impl ArmStats {
    pub fn new(m: usize) -> Self {
        ArmStats {
            counts: vec![0; m],
            sums: vec![0.0; m],
        }
    }

    pub fn from_samples(samples: &[(usize, f64)], m: usize) -> Self {
        let mut s = ArmStats::new(m);
        for &(t, y) in samples {
            s.add(t, y);
        }
        s
    }

    pub fn add(&mut self, t: usize, y: f64) {
        self.counts[t - 1] += 1;
        self.sums[t - 1] += y;
    }

    pub fn remove(&mut self, t: usize, y: f64) {
        self.counts[t - 1] -= 1;
        self.sums[t - 1] -= y;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Mean outcome of arm `t`, `NaN` if the arm is empty.
    pub fn mean(&self, t: usize) -> f64 {
        let c = self.counts[t - 1];
        if c == 0 {
            f64::NAN
        } else {
            self.sums[t - 1] / c as f64
        }
    }

    /// The eligible treatment with the smallest mean outcome (ties to the
    /// lowest index) together with that mean.
    pub fn best_arm(&self, mode: ImpurityMode) -> Result<(usize, f64), RiskError> {
        let floor = match mode {
            ImpurityMode::Strict => {
                if let Some(t) = self.counts.iter().position(|&c| c == 0) {
                    return Err(RiskError::MissingTreatment(t + 1));
                }
                1
            }
            ImpurityMode::Scarce { n_min_leaf } => n_min_leaf.max(1),
        };
        let mut best: Option<(usize, f64)> = None;
        for t in 1..=self.counts.len() {
            if self.counts[t - 1] < floor {
                continue;
            }
            let mean = self.mean(t);
            if best.is_none_or(|(_, b)| mean < b) {
                best = Some((t, mean));
            }
        }
        best.ok_or(RiskError::UndefinedImpurity)
    }

    /// `k * min_t mean_t` over eligible treatments.
    pub fn impurity(&self, mode: ImpurityMode) -> Result<f64, RiskError> {
        let (_, mean) = self.best_arm(mode)?;
        Ok(self.total() as f64 * mean)
    }
}

/// Personalization impurity of a subsample of `(treatment, outcome)` pairs:
/// the subsample size times the smallest per-treatment mean outcome.
pub fn impurity(samples: &[(usize, f64)], m: usize, mode: ImpurityMode) -> Result<f64, RiskError> {
    if samples.is_empty() {
        return Err(RiskError::Empty);
    }
    if let Some(&(t, _)) = samples.iter().find(|(t, _)| *t < 1 || *t > m) {
        return Err(RiskError::Mismatch(format!("treatment {t} outside 1..={m}")));
    }
    ArmStats::from_samples(samples, m).impurity(mode)
}

/// Assignment of sample indices to leaves `0..leaves`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    leaf_of: Vec<usize>,
    leaves: usize,
}

impl Partition {
    pub fn new(leaf_of: Vec<usize>, leaves: usize) -> Result<Self, RiskError> {
        if let Some(&l) = leaf_of.iter().find(|&&l| l >= leaves) {
            return Err(RiskError::Mismatch(format!("leaf id {l} >= leaf count {leaves}")));
        }
        Ok(Partition { leaf_of, leaves })
    }

    pub fn leaf_of(&self) -> &[usize] {
        &self.leaf_of
    }

    pub fn leaves(&self) -> usize {
        self.leaves
    }

    /// Sample indices of each leaf.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.leaves];
        for (i, &l) in self.leaf_of.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// Partition-based risk estimate `sum_l R_l`, where
///
/// `R_l = (n_l / n) * sum_{i in l, T_i = pol(X_i)} Y_i / #{i' in l : T_i' = pol(X_i)}`.
///
/// For a policy that is constant inside each leaf this is the leaf fraction
/// times the mean outcome of the prescribed arm in the leaf.
pub fn partition_risk_estimate<P: Policy + ?Sized>(
    ds: &Dataset,
    part: &Partition,
    pol: &P,
) -> Result<f64, RiskError> {
    let n = ds.n();
    if part.leaf_of.len() != n {
        return Err(RiskError::Mismatch(format!(
            "partition covers {} samples, dataset has {n}",
            part.leaf_of.len()
        )));
    }
    if n == 0 {
        return Err(RiskError::Empty);
    }
    let m = ds.m();
    let mut total = 0.0;
    for (leaf, members) in part.members().into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mut counts = vec![0usize; m];
        for &i in &members {
            counts[ds.treatment(i) - 1] += 1;
        }
        let mut acc = 0.0;
        for &i in &members {
            let t = pol.prescribe(ds.row(i));
            if counts[t - 1] == 0 {
                return Err(RiskError::UndefinedEstimate { leaf, treatment: t });
            }
            if ds.treatment(i) == t {
                acc += ds.outcome(i) / counts[t - 1] as f64;
            }
        }
        total += members.len() as f64 / n as f64 * acc;
    }
    Ok(total)
}

/// Inverse-propensity-weighted risk `(1/n) sum_i 1[T_i = pol(X_i)] Y_i / Q_i`.
pub fn ipw_risk<P: Policy + ?Sized>(ds: &Dataset, pol: &P) -> Result<f64, RiskError> {
    let q = ds.propensities().ok_or(RiskError::MissingPropensity)?;
    if ds.is_empty() {
        return Err(RiskError::Empty);
    }
    let sum: f64 = (0..ds.n())
        .filter(|&i| pol.prescribe(ds.row(i)) == ds.treatment(i))
        .map(|i| ds.outcome(i) / q[i])
        .sum();
    Ok(sum / ds.n() as f64)
}

/// A coefficient of personalization, or the marker for a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coefficient {
    Defined(f64),
    Undefined,
}

impl Coefficient {
    /// `1 - (policy - prescient) / (baseline - prescient)`; undefined when
    /// the baseline equals the prescient value.
    pub fn from_sums(policy: f64, prescient: f64, baseline: f64) -> Self {
        let den = baseline - prescient;
        let scale = 1.0 + baseline.abs().max(prescient.abs());
        if den.abs() <= 1e-12 * scale {
            Coefficient::Undefined
        } else {
            Coefficient::Defined(1.0 - (policy - prescient) / den)
        }
    }

    /// The value, or `NaN` when undefined.
    pub fn value(self) -> f64 {
        match self {
            Coefficient::Defined(v) => v,
            Coefficient::Undefined => f64::NAN,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Coefficient::Defined(_))
    }
}

impl Serialize for Coefficient {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Coefficient::Defined(v) => s.serialize_f64(*v),
            Coefficient::Undefined => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for Coefficient {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match Option::<f64>::deserialize(d)? {
            Some(v) => Coefficient::Defined(v),
            None => Coefficient::Undefined,
        })
    }
}

/// Risk and coefficients of personalization computed from known
/// counterfactuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleMetrics {
    pub risk: f64,
    pub p1: Coefficient,
    pub p2: Coefficient,
}

pub fn oracle_metrics<P: Policy + ?Sized>(ds: &Dataset, pol: &P) -> Result<OracleMetrics, RiskError> {
    if !ds.has_counterfactuals() {
        return Err(RiskError::MissingCounterfactuals);
    }
    if ds.is_empty() {
        return Err(RiskError::Empty);
    }
    let n = ds.n() as f64;
    let m = ds.m();
    let mut risk = 0.0;
    let mut prescient = 0.0;
    let mut column = vec![0.0; m];
    let mut factual = 0.0;
    for i in 0..ds.n() {
        let cf = ds.counterfactual(i).expect("checked above");
        risk += cf[pol.prescribe(ds.row(i)) - 1];
        prescient += cf.iter().cloned().fold(f64::INFINITY, f64::min);
        for (c, v) in column.iter_mut().zip(cf) {
            *c += v;
        }
        factual += ds.outcome(i);
    }
    let (risk, prescient, factual) = (risk / n, prescient / n, factual / n);
    let best_constant = column.iter().map(|c| c / n).fold(f64::INFINITY, f64::min);
    Ok(OracleMetrics {
        risk,
        p1: Coefficient::from_sums(risk, prescient, best_constant),
        p2: Coefficient::from_sums(risk, prescient, factual),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impurity_hand_values() {
        let strict = ImpurityMode::Strict;
        assert_eq!(impurity(&[(1, 2.0), (2, 4.0)], 2, strict).unwrap(), 4.0);
        assert_eq!(impurity(&[(1, 5.0)], 1, strict).unwrap(), 5.0);
        assert_eq!(
            impurity(&[(1, 1.0), (1, 3.0), (2, 10.0)], 2, strict).unwrap(),
            6.0
        );
    }

    #[test]
    fn impurity_modes() {
        let s = [(1, 1.0), (1, 3.0), (2, 10.0)];
        assert_eq!(
            impurity(&s, 3, ImpurityMode::Strict),
            Err(RiskError::MissingTreatment(3))
        );
        // Scarce: only arm 1 has two samples.
        assert_eq!(
            impurity(&s, 3, ImpurityMode::Scarce { n_min_leaf: 2 }).unwrap(),
            6.0
        );
        assert_eq!(
            impurity(&s, 3, ImpurityMode::Scarce { n_min_leaf: 3 }),
            Err(RiskError::UndefinedImpurity)
        );
    }

    #[test]
    fn impurity_shift() {
        let s = [(1, 1.0), (1, 3.0), (2, 10.0), (2, -4.0)];
        let shifted: Vec<_> = s.iter().map(|&(t, y)| (t, y + 2.0)).collect();
        let a = impurity(&s, 2, ImpurityMode::Strict).unwrap();
        let b = impurity(&shifted, 2, ImpurityMode::Strict).unwrap();
        assert_eq!(b, a + 4.0 * 2.0);
    }

    #[test]
    fn best_arm_ties_go_low() {
        let st = ArmStats::from_samples(&[(1, 2.0), (2, 2.0)], 2);
        assert_eq!(st.best_arm(ImpurityMode::Strict).unwrap().0, 1);
    }

    fn one_d(ts: &[usize], ys: &[f64], xs: &[f64], m: usize) -> Dataset {
        Dataset::new(xs.iter().map(|&v| vec![v]).collect(), ts.to_vec(), ys.to_vec(), m).unwrap()
    }

    #[test]
    fn partition_estimate_single_leaf() {
        let ds = one_d(&[1, 1, 2, 2], &[1.0, 3.0, 0.0, 10.0], &[0.0, 1.0, 2.0, 3.0], 2);
        let part = Partition::new(vec![0; 4], 1).unwrap();
        let pol = ConstantPolicy { treatment: 1, m: 2 };
        assert_eq!(partition_risk_estimate(&ds, &part, &pol).unwrap(), 2.0);
    }

    #[test]
    fn partition_estimate_two_leaves() {
        // Leaf A = rows 0,1 at x=0; leaf B = rows 2,3 at x=1.
        let ds = one_d(&[1, 2, 1, 2], &[0.0, 2.0, 4.0, 2.0], &[0.0, 0.0, 1.0, 1.0], 2);
        let part = Partition::new(vec![0, 0, 1, 1], 2).unwrap();
        let pol = FnPolicy::new(2, |x: &[f64]| if x[0] < 0.5 { 1 } else { 2 });
        assert_eq!(partition_risk_estimate(&ds, &part, &pol).unwrap(), 1.0);
    }

    #[test]
    fn partition_estimate_missing_arm() {
        let ds = one_d(&[1, 1], &[0.0, 2.0], &[0.0, 1.0], 2);
        let part = Partition::new(vec![0, 0], 1).unwrap();
        let pol = ConstantPolicy { treatment: 2, m: 2 };
        assert_eq!(
            partition_risk_estimate(&ds, &part, &pol),
            Err(RiskError::UndefinedEstimate {
                leaf: 0,
                treatment: 2
            })
        );
    }

    #[test]
    fn ipw_hand_values() {
        let ds = one_d(&[1, 2], &[2.0, 6.0], &[0.0, 1.0], 2)
            .with_propensities(vec![0.5, 0.5])
            .unwrap();
        assert_eq!(
            ipw_risk(&ds, &ConstantPolicy { treatment: 1, m: 2 }).unwrap(),
            2.0
        );
        let never = FnPolicy::new(2, |x: &[f64]| if x[0] < 0.5 { 2 } else { 1 });
        assert_eq!(ipw_risk(&ds, &never).unwrap(), 0.0);
        let plain = one_d(&[1], &[1.0], &[0.0], 2);
        assert_eq!(
            ipw_risk(&plain, &ConstantPolicy { treatment: 1, m: 2 }),
            Err(RiskError::MissingPropensity)
        );
    }

    #[test]
    fn ipw_unit_propensity_matching_policy_is_mean() {
        let ds = one_d(&[1, 2, 2], &[1.0, 2.0, 6.0], &[0.0, 1.0, 2.0], 2)
            .with_propensities(vec![1.0; 3])
            .unwrap();
        let matching = FnPolicy::new(2, |x: &[f64]| if x[0] < 0.5 { 1 } else { 2 });
        assert_eq!(ipw_risk(&ds, &matching).unwrap(), 3.0);
    }

    #[test]
    fn oracle_hand_values() {
        let ds = one_d(&[1, 2], &[1.0, 2.0], &[0.0, 1.0], 2)
            .with_counterfactuals(vec![vec![1.0, 3.0], vec![4.0, 2.0]])
            .unwrap();
        let om = oracle_metrics(&ds, &ConstantPolicy { treatment: 1, m: 2 }).unwrap();
        assert_eq!(om.risk, 2.5);
        assert_eq!(om.p1, Coefficient::Defined(0.0));
        assert_eq!(om.p2, Coefficient::Undefined);
        assert!(om.p2.value().is_nan());

        let prescient = FnPolicy::new(2, |x: &[f64]| if x[0] < 0.5 { 1 } else { 2 });
        let om = oracle_metrics(&ds, &prescient).unwrap();
        assert_eq!(om.p1, Coefficient::Defined(1.0));
    }

    #[test]
    fn coefficient_json() {
        let v = serde_json::to_string(&[Coefficient::Defined(0.5), Coefficient::Undefined]).unwrap();
        assert_eq!(v, "[0.5,null]");
    }
}
