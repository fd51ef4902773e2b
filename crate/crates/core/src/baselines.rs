//! Regress-and-compare policies and the one-vs-all / one-vs-one CATE
//! meta-strategies.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError};
use crate::risk::Policy;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("treatment {0} has no samples")]
    EmptyArm(usize),
    #[error("treatment {0} has no complement samples")]
    EmptyComplement(usize),
    #[error("treatments {0} and {1} are not both populated")]
    EmptyPair(usize, usize),
    #[error("need at least one sample to fit a regressor")]
    NoSamples,
    #[error("covariate vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// A fitted outcome regression.
pub trait Regressor {
    fn predict(&self, x: &[f64]) -> f64;
}

/// How to fit an outcome regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum RegressorFamily {
    /// Least squares with intercept.
    #[default]
    Ols,
    /// `k` nearest neighbors on standardized features; `None` uses
    /// `floor(sqrt(n))` of the fitting sample.
    Knn { k: Option<usize> },
}

impl RegressorFamily {
    pub fn fit(&self, rows: &[&[f64]], y: &[f64]) -> Result<FittedRegressor, BaselineError> {
        if rows.is_empty() {
            return Err(BaselineError::NoSamples);
        }
        Ok(match *self {
            RegressorFamily::Ols => FittedRegressor::Ols(Ols::fit(rows, y)),
            RegressorFamily::Knn { k } => FittedRegressor::Knn(Knn::fit(rows, y, k)),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            RegressorFamily::Ols => "ols",
            RegressorFamily::Knn { .. } => "knn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ols {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl Ols {
    /// Solves the centered normal equations by Cholesky. A singular or badly
    /// conditioned system gets a ridge of `1e-8 * trace / d` on the diagonal.
    pub fn fit(rows: &[&[f64]], y: &[f64]) -> Self {
        let n = rows.len();
        let d = rows[0].len();
        let nf = n as f64;
        let ybar = y.iter().sum::<f64>() / nf;
        let xbar: Vec<f64> = (0..d)
            .map(|f| rows.iter().map(|r| r[f]).sum::<f64>() / nf)
            .collect();
        if d == 0 {
            return Ols {
                intercept: ybar,
                coef: Vec::new(),
            };
        }
        let xc = DMatrix::from_fn(n, d, |i, f| rows[i][f] - xbar[f]);
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - ybar));
        let mut gram = xc.transpose() * &xc;
        let rhs = xc.transpose() * yc;
        let solved = nalgebra::Cholesky::new(gram.clone()).filter(|ch| {
            let diag = ch.l_dirty().diagonal();
            let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
                (lo.min(v * v), hi.max(v * v))
            });
            lo > 1e-12 * hi
        });
        let beta = match solved {
            Some(ch) => ch.solve(&rhs),
            None => {
                let ridge = (1e-8 * gram.trace() / d as f64).max(f64::MIN_POSITIVE);
                for f in 0..d {
                    gram[(f, f)] += ridge;
                }
                match nalgebra::Cholesky::new(gram) {
                    Some(ch) => ch.solve(&rhs),
                    // Every feature is constant: intercept only.
                    None => DVector::zeros(d),
                }
            }
        };
        let coef: Vec<f64> = beta.iter().copied().collect();
        let intercept = ybar - coef.iter().zip(&xbar).map(|(b, m)| b * m).sum::<f64>();
        Ols { intercept, coef }
    }
}

impl Regressor for Ols {
    fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Standardized training rows.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Knn {
    pub fn fit(rows: &[&[f64]], y: &[f64], k: Option<usize>) -> Self {
        let n = rows.len();
        let d = rows[0].len();
        let nf = n as f64;
        let mean: Vec<f64> = (0..d)
            .map(|f| rows.iter().map(|r| r[f]).sum::<f64>() / nf)
            .collect();
        let scale: Vec<f64> = (0..d)
            .map(|f| {
                let ss: f64 = rows.iter().map(|r| (r[f] - mean[f]).powi(2)).sum();
                let sd = if n > 1 { (ss / (nf - 1.0)).sqrt() } else { 0.0 };
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        let mut k = k.unwrap_or_else(|| (nf.sqrt().floor() as usize).max(1));
        if k > n {
            log::warn!("k = {k} exceeds the {n} fitting samples; using k = {n}");
            k = n;
        }
        let x = rows
            .iter()
            .map(|r| (0..d).map(|f| (r[f] - mean[f]) / scale[f]).collect())
            .collect();
        Knn {
            k: k.max(1),
            mean,
            scale,
            x,
            y: y.to_vec(),
        }
    }
}

impl Regressor for Knn {
    /// Mean outcome of the `k` nearest rows, plus every row tied with the
    /// `k`-th distance.
    fn predict(&self, x: &[f64]) -> f64 {
        let z: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(f, v)| (v - self.mean[f]) / self.scale[f])
            .collect();
        let mut dist: Vec<(f64, usize)> = self
            .x
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let cutoff = dist[self.k - 1].0;
        let (sum, count) = dist
            .iter()
            .take_while(|(d, _)| *d <= cutoff)
            .fold((0.0, 0usize), |(s, c), &(_, i)| (s + self.y[i], c + 1));
        sum / count as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FittedRegressor {
    Ols(Ols),
    Knn(Knn),
}

impl Regressor for FittedRegressor {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            FittedRegressor::Ols(r) => r.predict(x),
            FittedRegressor::Knn(r) => r.predict(x),
        }
    }
}

/// First index of the smallest value, 1-based.
fn argmin(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, v) in values.into_iter().enumerate() {
        if k == 0 || v < best.1 {
            best = (k, v);
        }
    }
    best.0 + 1
}

fn rows_where(ds: &Dataset, keep: impl Fn(usize) -> bool) -> (Vec<&[f64]>, Vec<f64>) {
    (0..ds.n())
        .filter(|&i| keep(i))
        .map(|i| (ds.row(i), ds.outcome(i)))
        .unzip()
}

/// One regression per treatment arm; prescribes the smallest prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcPolicy {
    pub regressors: Vec<FittedRegressor>,
    pub d: usize,
}

pub fn fit_rc(ds: &Dataset, family: RegressorFamily) -> Result<RcPolicy, BaselineError> {
    let regressors = (1..=ds.m())
        .map(|t| {
            let (rows, y) = rows_where(ds, |i| ds.treatment(i) == t);
            if rows.is_empty() {
                return Err(BaselineError::EmptyArm(t));
            }
            family.fit(&rows, &y)
        })
        .collect::<Result<_, _>>()?;
    Ok(RcPolicy {
        regressors,
        d: ds.d(),
    })
}

impl RcPolicy {
    pub fn predict(&self, x: &[f64]) -> Result<usize, BaselineError> {
        check(self.d, x)?;
        Ok(self.prescribe(x))
    }

    pub fn predictions(&self, x: &[f64]) -> Vec<f64> {
        self.regressors.iter().map(|r| r.predict(x)).collect()
    }
}

impl Policy for RcPolicy {
    fn treatments(&self) -> usize {
        self.regressors.len()
    }

    fn prescribe(&self, x: &[f64]) -> usize {
        argmin(self.predictions(x))
    }
}

fn check(d: usize, x: &[f64]) -> Result<(), BaselineError> {
    if x.len() != d {
        return Err(BaselineError::Dimension {
            expected: d,
            got: x.len(),
        });
    }
    Ok(())
}

/// Which contrast a CATE estimator targets. Negative values favor `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CateTarget {
    /// `E[Y | x, T = t] - E[Y | x, T != t]`.
    OneVsAll { t: usize },
    /// `E[Y | x, T = t] - E[Y | x, T = s]`.
    OneVsOne { t: usize, s: usize },
}

/// A fitted contrast `delta(x)`.
pub trait CateModel {
    fn delta(&self, x: &[f64]) -> f64;
}

/// Fits a contrast on a relabeled two-arm dataset in which arm 2 is the
/// target treatment and arm 1 its comparison group.
pub trait CateFamily {
    type Model: CateModel;
    fn fit(&self, relabeled: &Dataset, target: CateTarget) -> Result<Self::Model, BaselineError>;
}

/// Rows of the contrast with `T' = 1 + 1[T = t]`.
pub fn relabel(ds: &Dataset, target: CateTarget) -> Result<Dataset, BaselineError> {
    let (t, keep): (usize, Box<dyn Fn(usize) -> bool>) = match target {
        CateTarget::OneVsAll { t } => (t, Box::new(|_| true)),
        CateTarget::OneVsOne { t, s } => (t, Box::new(move |a| a == t || a == s)),
    };
    let idx: Vec<usize> = (0..ds.n()).filter(|&i| keep(ds.treatment(i))).collect();
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| ds.row(i).to_vec()).collect();
    let arms: Vec<usize> = idx
        .iter()
        .map(|&i| 1 + usize::from(ds.treatment(i) == t))
        .collect();
    let y: Vec<f64> = idx.iter().map(|&i| ds.outcome(i)).collect();
    let counts = [
        arms.iter().filter(|&&a| a == 1).count(),
        arms.iter().filter(|&&a| a == 2).count(),
    ];
    match target {
        CateTarget::OneVsAll { t } if counts[1] == 0 => return Err(BaselineError::EmptyArm(t)),
        CateTarget::OneVsAll { t } if counts[0] == 0 => return Err(BaselineError::EmptyComplement(t)),
        CateTarget::OneVsOne { t, s } if counts.contains(&0) => return Err(BaselineError::EmptyPair(t, s)),
        _ => {}
    }
    if idx.is_empty() {
        return Err(BaselineError::NoSamples);
    }
    Ok(Dataset::new(rows, arms, y, 2)?)
}

/// Difference of two per-arm regressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionDifference {
    pub treated: FittedRegressor,
    pub rest: FittedRegressor,
}

impl CateModel for RegressionDifference {
    fn delta(&self, x: &[f64]) -> f64 {
        self.treated.predict(x) - self.rest.predict(x)
    }
}

impl CateFamily for RegressorFamily {
    type Model = RegressionDifference;

    fn fit(&self, relabeled: &Dataset, _target: CateTarget) -> Result<RegressionDifference, BaselineError> {
        let (r2, y2) = rows_where(relabeled, |i| relabeled.treatment(i) == 2);
        let (r1, y1) = rows_where(relabeled, |i| relabeled.treatment(i) == 1);
        Ok(RegressionDifference {
            treated: RegressorFamily::fit(self, &r2, &y2)?,
            rest: RegressorFamily::fit(self, &r1, &y1)?,
        })
    }
}

/// One contrast per treatment against the pooled rest; prescribes the
/// smallest contrast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneVsAll<M> {
    pub models: Vec<M>,
    pub d: usize,
}

pub fn fit_1va<F: CateFamily>(ds: &Dataset, family: &F) -> Result<OneVsAll<F::Model>, BaselineError> {
    let models = (1..=ds.m())
        .map(|t| {
            let target = CateTarget::OneVsAll { t };
            family.fit(&relabel(ds, target)?, target)
        })
        .collect::<Result<_, _>>()?;
    Ok(OneVsAll { models, d: ds.d() })
}

impl<M: CateModel + Sync> Policy for OneVsAll<M> {
    fn treatments(&self) -> usize {
        self.models.len()
    }

    fn prescribe(&self, x: &[f64]) -> usize {
        argmin(self.models.iter().map(|c| c.delta(x)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairRule {
    /// Smallest contrast against the least favorable rival.
    A,
    /// Most pairwise wins.
    B,
}

/// Contrasts for every ordered pair `(t, s)`, `t != s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneVsOne<M> {
    /// `models[t - 1][k]` contrasts `t` with the `k`-th other treatment in
    /// ascending order.
    pub models: Vec<Vec<M>>,
    pub rule: PairRule,
    pub d: usize,
}

pub fn fit_1v1<F: CateFamily>(
    ds: &Dataset,
    family: &F,
    rule: PairRule,
) -> Result<OneVsOne<F::Model>, BaselineError> {
    let m = ds.m();
    let models = (1..=m)
        .map(|t| {
            (1..=m)
                .filter(|&s| s != t)
                .map(|s| {
                    let target = CateTarget::OneVsOne { t, s };
                    family.fit(&relabel(ds, target)?, target)
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(OneVsOne {
        models,
        rule,
        d: ds.d(),
    })
}

impl<M: CateModel + Sync> Policy for OneVsOne<M> {
    fn treatments(&self) -> usize {
        self.models.len()
    }

    fn prescribe(&self, x: &[f64]) -> usize {
        let deltas: Vec<Vec<f64>> = self
            .models
            .iter()
            .map(|row| row.iter().map(|c| c.delta(x)).collect())
            .collect();
        match self.rule {
            PairRule::A => argmin(
                deltas
                    .iter()
                    .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min)),
            ),
            PairRule::B => argmin(
                deltas
                    .iter()
                    .map(|row| -(row.iter().filter(|&&v| v < 0.0).count() as f64)),
            ),
        }
    }
}
