//! Out-of-sample evaluation by submatching: test subjects get their missing
//! arms imputed from nearest cross-arm neighbors under a Mahalanobis metric.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::risk::{Coefficient, Policy};
use crate::rng::rng_from_seed;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("treatment {0} has no samples to match against")]
    EmptyArm(usize),
    #[error("n_test = {n_test} exceeds n = {n}")]
    TooManyTests { n_test: usize, n: usize },
    #[error("n_pair = {n_pair} exceeds the smaller arm ({smaller})")]
    TooManyPairs { n_pair: usize, smaller: usize },
    #[error("optimal submatching needs exactly 2 treatments, got {0}")]
    Unsupported(usize),
    #[error("need at least 2 samples to estimate a covariance")]
    TooFewSamples,
    #[error("policy has {got} treatments, test set has {expected}")]
    TreatmentMismatch { expected: usize, got: usize },
    #[error("malformed matched test set: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Mahalanobis metric from a (regularized) inverse covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    inv: DMatrix<f64>,
}

impl Metric {
    /// Inverts `cov + eps I` with `eps = 1e-8 * trace / d` (or 1 if the trace
    /// is zero).
    pub fn from_covariance(cov: DMatrix<f64>) -> Self {
        let d = cov.nrows();
        let trace = cov.trace();
        let eps = if trace > 0.0 { 1e-8 * trace / d as f64 } else { 1.0 };
        let reg = cov + DMatrix::identity(d, d) * eps;
        let inv = reg
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .or_else(|| reg.try_inverse())
            .unwrap_or_else(|| DMatrix::identity(d, d));
        Metric { inv }
    }

    pub fn identity(d: usize) -> Self {
        Metric {
            inv: DMatrix::identity(d, d),
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let diff = DVector::from_iterator(a.len(), a.iter().zip(b).map(|(x, y)| x - y));
        (diff.dot(&(&self.inv * &diff))).max(0.0).sqrt()
    }
}

/// Metric from the sample covariance of `ds`'s covariates.
pub fn mahalanobis_metric(ds: &Dataset) -> Result<Metric, EvalError> {
    let n = ds.n();
    if n < 2 {
        return Err(EvalError::TooFewSamples);
    }
    let d = ds.d();
    let mean: Vec<f64> = (0..d)
        .map(|f| (0..n).map(|i| ds.value(i, f)).sum::<f64>() / n as f64)
        .collect();
    let mut cov = DMatrix::zeros(d, d);
    for x in ds.rows() {
        for a in 0..d {
            for b in 0..=a {
                cov[(a, b)] += (x[a] - mean[a]) * (x[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            cov[(a, b)] /= (n - 1) as f64;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    Ok(Metric::from_covariance(cov))
}

/// Test subjects with a full row of observed or imputed outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedTestSet {
    /// Subject indices into the source dataset, one per test row.
    pub drawn: Vec<usize>,
    /// Covariates of the test rows.
    pub x: Vec<Vec<f64>>,
    pub factual_t: Vec<usize>,
    pub factual_y: Vec<f64>,
    /// `yhat[j][t - 1]`; the factual column holds the observed outcome.
    pub yhat: Vec<Vec<f64>>,
    /// Sorted subjects to keep out of any later training.
    pub removed: Vec<usize>,
    /// Sum of distances of the imputing matches.
    pub total_distance: f64,
}

impl MatchedTestSet {
    pub fn len(&self) -> usize {
        self.drawn.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drawn.is_empty()
    }

    pub fn m(&self) -> usize {
        self.yhat.first().map_or(0, Vec::len)
    }

    /// The complement of `removed` in `0..n`.
    pub fn training_indices(&self, n: usize) -> Vec<usize> {
        let mut keep = vec![true; n];
        for &i in &self.removed {
            keep[i] = false;
        }
        (0..n).filter(|&i| keep[i]).collect()
    }

    /// CSV with `subject_index,factual_t,factual_y,yhat_1..yhat_m`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "subject_index".to_string(),
            "factual_t".into(),
            "factual_y".into(),
        ];
        header.extend((1..=self.m()).map(|t| format!("yhat_{t}")));
        w.write_record(&header)?;
        for j in 0..self.len() {
            let mut rec = vec![
                self.drawn[j].to_string(),
                self.factual_t[j].to_string(),
                self.factual_y[j].to_string(),
            ];
            rec.extend(self.yhat[j].iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads rows written by [`write_csv`](Self::write_csv), taking
    /// covariates from `ds`. `removed` becomes the listed subjects.
    pub fn read_csv<R: Read>(input: R, ds: &Dataset) -> Result<Self, EvalError> {
        let mut r = csv::Reader::from_reader(input);
        let m = r.headers()?.len().saturating_sub(3);
        let mut mts = MatchedTestSet {
            drawn: Vec::new(),
            x: Vec::new(),
            factual_t: Vec::new(),
            factual_y: Vec::new(),
            yhat: Vec::new(),
            removed: Vec::new(),
            total_distance: 0.0,
        };
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| -> Result<&str, EvalError> {
                rec.get(k)
                    .ok_or_else(|| EvalError::Format(format!("row {}: missing column {k}", line + 1)))
            };
            let bad = |what: &str| EvalError::Format(format!("row {}: bad {what}", line + 1));
            let i: usize = field(0)?.parse().map_err(|_| bad("subject_index"))?;
            if i >= ds.n() {
                return Err(bad("subject_index"));
            }
            mts.drawn.push(i);
            mts.x.push(ds.row(i).to_vec());
            mts.factual_t
                .push(field(1)?.parse().map_err(|_| bad("factual_t"))?);
            mts.factual_y
                .push(field(2)?.parse().map_err(|_| bad("factual_y"))?);
            mts.yhat.push(
                (0..m)
                    .map(|t| field(3 + t)?.parse().map_err(|_| bad("yhat")))
                    .collect::<Result<_, _>>()?,
            );
        }
        let mut removed = mts.drawn.clone();
        removed.sort_unstable();
        removed.dedup();
        mts.removed = removed;
        Ok(mts)
    }
}

fn arm_members(ds: &Dataset) -> Result<Vec<Vec<usize>>, EvalError> {
    let mut arms = vec![Vec::new(); ds.m()];
    for i in 0..ds.n() {
        arms[ds.treatment(i) - 1].push(i);
    }
    if let Some(t) = arms.iter().position(Vec::is_empty) {
        return Err(EvalError::EmptyArm(t + 1));
    }
    Ok(arms)
}

/// Draws `n_test` distinct subjects; each missing arm `t` is imputed from
/// the nearest subject with `T = t` anywhere in the data (lowest index on
/// ties, reuse allowed). Drawn and matched subjects are all removed.
pub fn greedy_submatch(
    ds: &Dataset,
    n_test: usize,
    metric: &Metric,
    seed: u64,
) -> Result<MatchedTestSet, EvalError> {
    if n_test > ds.n() {
        return Err(EvalError::TooManyTests { n_test, n: ds.n() });
    }
    let arms = arm_members(ds)?;
    let mut rng = rng_from_seed(seed);
    let drawn = sample(&mut rng, ds.n(), n_test).into_vec();
    let mut removed = vec![false; ds.n()];
    let mut yhat = Vec::with_capacity(n_test);
    let mut total = 0.0;
    for &i in &drawn {
        removed[i] = true;
        let x = ds.row(i);
        let row = (1..=ds.m())
            .map(|t| {
                if t == ds.treatment(i) {
                    return ds.outcome(i);
                }
                let mut best = (f64::INFINITY, usize::MAX);
                for &k in &arms[t - 1] {
                    let dist = metric.distance(x, ds.row(k));
                    if dist < best.0 {
                        best = (dist, k);
                    }
                }
                removed[best.1] = true;
                total += best.0;
                ds.outcome(best.1)
            })
            .collect();
        yhat.push(row);
    }
    Ok(MatchedTestSet {
        x: drawn.iter().map(|&i| ds.row(i).to_vec()).collect(),
        factual_t: drawn.iter().map(|&i| ds.treatment(i)).collect(),
        factual_y: drawn.iter().map(|&i| ds.outcome(i)).collect(),
        drawn,
        yhat,
        removed: (0..ds.n()).filter(|&i| removed[i]).collect(),
        total_distance: total,
    })
}

/// Minimum-cost perfect assignment on a square cost matrix (rows to
/// columns) by the shortest augmenting path method with potentials.
/// Returns `col_of_row`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based internals; row/column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for r in 1..=n {
        row_of[0] = r;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0; n];
    for j in 1..=n {
        col_of[row_of[j] - 1] = j - 1;
    }
    col_of
}

/// Picks `n_pair` disjoint cross-arm pairs of minimum total distance (two
/// treatments only). Arm-1 subjects face arm-2 subjects plus `n_1 - n_pair`
/// zero-cost dummies; `n_2 - n_pair` dummy rows absorb the unmatched arm-2
/// subjects, so a perfect assignment selects exactly `n_pair` real pairs.
/// Each pair yields two test rows, each imputing its partner's outcome.
pub fn optimal_submatch(ds: &Dataset, n_pair: usize, metric: &Metric) -> Result<MatchedTestSet, EvalError> {
    if ds.m() != 2 {
        return Err(EvalError::Unsupported(ds.m()));
    }
    let arms = arm_members(ds)?;
    let (a, b) = (&arms[0], &arms[1]);
    let smaller = a.len().min(b.len());
    if n_pair > smaller {
        return Err(EvalError::TooManyPairs { n_pair, smaller });
    }
    let (n1, n2) = (a.len(), b.len());
    let size = n1 + n2 - n_pair;
    let dist: Vec<Vec<f64>> = a
        .iter()
        .map(|&i| b.iter().map(|&k| metric.distance(ds.row(i), ds.row(k))).collect())
        .collect();
    // Dummy rows may not take dummy columns; this cost exceeds any
    // assignment that avoids them.
    let forbidden = 1.0 + dist.iter().flatten().sum::<f64>();
    let cost: Vec<Vec<f64>> = (0..size)
        .map(|r| {
            (0..size)
                .map(|c| match (r < n1, c < n2) {
                    (true, true) => dist[r][c],
                    (false, false) => forbidden,
                    _ => 0.0,
                })
                .collect()
        })
        .collect();
    let col_of = min_cost_assignment(&cost);
    let mut pairs: Vec<(usize, usize, f64)> = (0..n1)
        .filter(|&r| col_of[r] < n2)
        .map(|r| (a[r], b[col_of[r]], dist[r][col_of[r]]))
        .collect();
    pairs.sort_by_key(|p| p.0);
    debug_assert_eq!(pairs.len(), n_pair);

    let mut mts = MatchedTestSet {
        drawn: Vec::new(),
        x: Vec::new(),
        factual_t: Vec::new(),
        factual_y: Vec::new(),
        yhat: Vec::new(),
        removed: Vec::new(),
        total_distance: pairs.iter().map(|p| p.2).sum(),
    };
    for &(i, k, _) in &pairs {
        let (yi, yk) = (ds.outcome(i), ds.outcome(k));
        for (s, row) in [(i, vec![yi, yk]), (k, vec![yi, yk])] {
            mts.drawn.push(s);
            mts.x.push(ds.row(s).to_vec());
            mts.factual_t.push(ds.treatment(s));
            mts.factual_y.push(ds.outcome(s));
            mts.yhat.push(row);
        }
        mts.removed.extend([i, k]);
    }
    mts.removed.sort_unstable();
    Ok(mts)
}

fn prescriptions<P: Policy + ?Sized>(mts: &MatchedTestSet, pol: &P) -> Result<Vec<usize>, EvalError> {
    if pol.treatments() != mts.m() {
        return Err(EvalError::TreatmentMismatch {
            expected: mts.m(),
            got: pol.treatments(),
        });
    }
    Ok(mts.x.iter().map(|x| pol.prescribe(x)).collect())
}

/// Mean imputed outcome of the prescribed treatments.
pub fn matched_risk<P: Policy + ?Sized>(mts: &MatchedTestSet, pol: &P) -> Result<f64, EvalError> {
    let taus = prescriptions(mts, pol)?;
    let sum: f64 = mts.yhat.iter().zip(&taus).map(|(row, &t)| row[t - 1]).sum();
    Ok(sum / mts.len() as f64)
}

/// Sums the coefficients are built from: policy, prescient (row minima),
/// best constant column, and factual.
struct Sums {
    policy: f64,
    prescient: f64,
    constant: f64,
    factual: f64,
}

fn sums<P: Policy + ?Sized>(mts: &MatchedTestSet, pol: &P) -> Result<Sums, EvalError> {
    let taus = prescriptions(mts, pol)?;
    let mut columns = vec![0.0; mts.m()];
    let mut s = Sums {
        policy: 0.0,
        prescient: 0.0,
        constant: 0.0,
        factual: mts.factual_y.iter().sum(),
    };
    for (row, &t) in mts.yhat.iter().zip(&taus) {
        s.policy += row[t - 1];
        s.prescient += row.iter().copied().fold(f64::INFINITY, f64::min);
        for (c, v) in columns.iter_mut().zip(row) {
            *c += v;
        }
    }
    s.constant = columns.into_iter().fold(f64::INFINITY, f64::min);
    Ok(s)
}

/// Share of the gap between the best constant treatment and prescient
/// personalization that the policy closes, on imputed outcomes.
pub fn p1_hat<P: Policy + ?Sized>(mts: &MatchedTestSet, pol: &P) -> Result<Coefficient, EvalError> {
    let s = sums(mts, pol)?;
    Ok(Coefficient::from_sums(s.policy, s.prescient, s.constant))
}

/// As [`p1_hat`], against the observed outcomes instead of the best
/// constant treatment.
pub fn p2_hat<P: Policy + ?Sized>(mts: &MatchedTestSet, pol: &P) -> Result<Coefficient, EvalError> {
    let s = sums(mts, pol)?;
    Ok(Coefficient::from_sums(s.policy, s.prescient, s.factual))
}

/// Risk and both coefficients on a matched test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedMetrics {
    pub risk: f64,
    pub p1: Coefficient,
    pub p2: Coefficient,
}

pub fn matched_metrics<P: Policy + ?Sized>(
    mts: &MatchedTestSet,
    pol: &P,
) -> Result<MatchedMetrics, EvalError> {
    Ok(MatchedMetrics {
        risk: matched_risk(mts, pol)?,
        p1: p1_hat(mts, pol)?,
        p2: p2_hat(mts, pol)?,
    })
}
