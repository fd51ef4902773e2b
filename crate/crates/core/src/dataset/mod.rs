//! Personalization datasets: covariates, assigned treatments, observed
//! outcomes, and (for synthetic data) full counterfactuals and true
//! propensities.
//!
//! Treatment labels are 1-based (`1..=m`) everywhere in the public API and in
//! files. Outcomes follow the "smaller is better" convention.

mod csv_io;
mod synthetic;

pub use csv_io::{load_csv, write_csv, CsvOptions};
pub use synthetic::{
    clinical, generate_synthetic, group_of_sqrt_dose, sqrt_dose, CovariateModel, OutcomeModel,
    PropensityModel, SyntheticSpec,
};

use std::collections::HashSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_from_seed;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("cannot parse `{value}` at row {row}, column `{column}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("treatment label {label} at row {row} is below 1")]
    TreatmentDomain { row: usize, label: i64 },
    #[error("invalid dataset: {0}")]
    Invariant(String),
    #[error("propensity family supports m = 3 only, got m = {0}")]
    UnsupportedFamily(usize),
    #[error("non-finite value: {0}")]
    NonFinite(f64),
    #[error("config error: {0}")]
    Config(String),
    #[error("index {index} out of range for dataset of size {len}")]
    OutOfBounds { index: usize, len: usize },
    #[error("cannot bootstrap an empty dataset")]
    EmptyBootstrap,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Kind of a raw (pre-encoding) feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
}

/// Raw feature names and kinds. Categorical features expand to one
/// indicator column per level (all levels kept), in level order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureSchema {
    features: Vec<Feature>,
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(DatasetError::Invariant(format!(
                    "duplicate feature name `{}`",
                    f.name
                )));
            }
            if let FeatureKind::Categorical { levels } = &f.kind {
                if levels.is_empty() {
                    return Err(DatasetError::Invariant(format!(
                        "categorical feature `{}` has no levels",
                        f.name
                    )));
                }
                let distinct: HashSet<_> = levels.iter().collect();
                if distinct.len() != levels.len() {
                    return Err(DatasetError::Invariant(format!(
                        "categorical feature `{}` has duplicate levels",
                        f.name
                    )));
                }
            }
        }
        Ok(FeatureSchema { features })
    }

    /// `d` numeric features named `x1..xd`.
    pub fn numeric(d: usize) -> Self {
        FeatureSchema {
            features: (1..=d)
                .map(|j| Feature {
                    name: format!("x{j}"),
                    kind: FeatureKind::Numeric,
                })
                .collect(),
        }
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    /// Covariate dimension after one-hot encoding.
    pub fn encoded_dim(&self) -> usize {
        self.features
            .iter()
            .map(|f| match &f.kind {
                FeatureKind::Numeric => 1,
                FeatureKind::Categorical { levels } => levels.len(),
            })
            .sum()
    }

    /// Column names after encoding; categorical levels become `name=level`.
    pub fn encoded_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.encoded_dim());
        for f in &self.features {
            match &f.kind {
                FeatureKind::Numeric => out.push(f.name.clone()),
                FeatureKind::Categorical { levels } => {
                    out.extend(levels.iter().map(|l| format!("{}={}", f.name, l)))
                }
            }
        }
        out
    }
}

/// An observational dataset with `n` rows, `d` encoded covariates and `m`
/// treatments. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    d: usize,
    treatments: Vec<usize>,
    outcomes: Vec<f64>,
    m: usize,
    counterfactuals: Option<Vec<f64>>,
    propensities: Option<Vec<f64>>,
    schema: FeatureSchema,
}

impl Dataset {
    /// Builds a dataset from covariate rows, 1-based treatments and outcomes.
    /// The schema defaults to `d` numeric features.
    pub fn new(
        rows: Vec<Vec<f64>>,
        treatments: Vec<usize>,
        outcomes: Vec<f64>,
        m: usize,
    ) -> Result<Self, DatasetError> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(DatasetError::Invariant("ragged covariate rows".into()));
        }
        Self::from_flat(rows.concat(), d, treatments, outcomes, m)
    }

    /// Builds a dataset from a row-major `n x d` covariate buffer.
    pub fn from_flat(
        x: Vec<f64>,
        d: usize,
        treatments: Vec<usize>,
        outcomes: Vec<f64>,
        m: usize,
    ) -> Result<Self, DatasetError> {
        let ds = Dataset {
            x,
            d,
            treatments,
            outcomes,
            m,
            counterfactuals: None,
            propensities: None,
            schema: FeatureSchema::numeric(d),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Attaches the full `n x m` counterfactual matrix. Requires
    /// `Y_i = CF[i][T_i]` exactly.
    pub fn with_counterfactuals(mut self, cf: Vec<Vec<f64>>) -> Result<Self, DatasetError> {
        if cf.len() != self.n() || cf.iter().any(|r| r.len() != self.m) {
            return Err(DatasetError::Invariant(format!(
                "counterfactual matrix must be {} x {}",
                self.n(),
                self.m
            )));
        }
        self.counterfactuals = Some(cf.concat());
        self.validate()?;
        Ok(self)
    }

    /// Attaches true propensities `Q_i = P(T = T_i | X = X_i)`.
    pub fn with_propensities(mut self, q: Vec<f64>) -> Result<Self, DatasetError> {
        self.propensities = Some(q);
        self.validate()?;
        Ok(self)
    }

    pub fn with_schema(mut self, schema: FeatureSchema) -> Result<Self, DatasetError> {
        self.schema = schema;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let n = self.treatments.len();
        if self.m == 0 {
            return Err(DatasetError::Invariant("treatment count m must be >= 1".into()));
        }
        if self.outcomes.len() != n {
            return Err(DatasetError::Invariant(format!(
                "{} outcomes for {} treatments",
                self.outcomes.len(),
                n
            )));
        }
        if self.x.len() != n * self.d {
            return Err(DatasetError::Invariant(format!(
                "covariate buffer has {} entries, expected {} x {}",
                self.x.len(),
                n,
                self.d
            )));
        }
        if self.schema.encoded_dim() != self.d {
            return Err(DatasetError::Invariant(format!(
                "schema encodes {} columns but d = {}",
                self.schema.encoded_dim(),
                self.d
            )));
        }
        if let Some((row, &t)) = self
            .treatments
            .iter()
            .enumerate()
            .find(|(_, &t)| t < 1 || t > self.m)
        {
            return Err(DatasetError::Invariant(format!(
                "treatment {t} at row {row} outside 1..={}",
                self.m
            )));
        }
        if let Some(cf) = &self.counterfactuals {
            if cf.len() != n * self.m {
                return Err(DatasetError::Invariant("counterfactual shape mismatch".into()));
            }
            for i in 0..n {
                if cf[i * self.m + self.treatments[i] - 1] != self.outcomes[i] {
                    return Err(DatasetError::Invariant(format!(
                        "row {i}: outcome differs from counterfactual of the received treatment"
                    )));
                }
            }
        }
        if let Some(q) = &self.propensities {
            if q.len() != n {
                return Err(DatasetError::Invariant("propensity length mismatch".into()));
            }
            if let Some((row, p)) = q.iter().enumerate().find(|(_, &p)| !(p > 0.0 && p <= 1.0)) {
                return Err(DatasetError::Invariant(format!(
                    "propensity {p} at row {row} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.treatments.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.treatments.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.n()).map(move |i| self.row(i))
    }

    /// Covariate `feature` of row `i`.
    pub fn value(&self, i: usize, feature: usize) -> f64 {
        self.x[i * self.d + feature]
    }

    pub fn treatment(&self, i: usize) -> usize {
        self.treatments[i]
    }

    pub fn treatments(&self) -> &[usize] {
        &self.treatments
    }

    pub fn outcome(&self, i: usize) -> f64 {
        self.outcomes[i]
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn has_counterfactuals(&self) -> bool {
        self.counterfactuals.is_some()
    }

    /// Row `i` of the counterfactual matrix, indexed by `t - 1`.
    pub fn counterfactual(&self, i: usize) -> Option<&[f64]> {
        self.counterfactuals
            .as_ref()
            .map(|cf| &cf[i * self.m..(i + 1) * self.m])
    }

    pub fn propensities(&self) -> Option<&[f64]> {
        self.propensities.as_deref()
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    /// Number of rows per treatment, indexed by `t - 1`.
    pub fn treatment_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.m];
        for &t in &self.treatments {
            counts[t - 1] += 1;
        }
        counts
    }

    /// Row subset in the given order; `m` and schema are preserved.
    pub fn split(&self, idx: &[usize]) -> Result<Dataset, DatasetError> {
        let n = self.n();
        if let Some(&index) = idx.iter().find(|&&i| i >= n) {
            return Err(DatasetError::OutOfBounds { index, len: n });
        }
        let mut x = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        let pick_rows = |buf: &Vec<f64>, width: usize| {
            let mut out = Vec::with_capacity(idx.len() * width);
            for &i in idx {
                out.extend_from_slice(&buf[i * width..(i + 1) * width]);
            }
            out
        };
        Ok(Dataset {
            x,
            d: self.d,
            treatments: idx.iter().map(|&i| self.treatments[i]).collect(),
            outcomes: idx.iter().map(|&i| self.outcomes[i]).collect(),
            m: self.m,
            counterfactuals: self.counterfactuals.as_ref().map(|cf| pick_rows(cf, self.m)),
            propensities: self
                .propensities
                .as_ref()
                .map(|q| idx.iter().map(|&i| q[i]).collect()),
            schema: self.schema.clone(),
        })
    }

    /// Draws `n` rows uniformly with replacement. Returns the replicate and
    /// the drawn indices.
    pub fn bootstrap(&self, seed: u64) -> Result<(Dataset, Vec<usize>), DatasetError> {
        let n = self.n();
        if n == 0 {
            return Err(DatasetError::EmptyBootstrap);
        }
        let idx = bootstrap_indices(n, seed);
        Ok((self.split(&idx)?, idx))
    }
}

/// The index multiset drawn by [`Dataset::bootstrap`].
pub fn bootstrap_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Assignment probabilities of the single-feature logistic mechanism with
/// three treatments: component `t` is proportional to `exp((t - 2) z)`,
/// where `z` is the standardized value of the designated feature.
pub fn confounded_propensity(z: f64, m: usize) -> Result<Vec<f64>, DatasetError> {
    if m != 3 {
        return Err(DatasetError::UnsupportedFamily(m));
    }
    if !z.is_finite() {
        return Err(DatasetError::NonFinite(z));
    }
    Ok(logistic_family(z, m))
}

/// Centered generalization used by synthetic generators: component `t` is
/// proportional to `exp((t - (m + 1) / 2) z)`. Equals
/// [`confounded_propensity`] for `m = 3`.
pub(crate) fn logistic_family(z: f64, m: usize) -> Vec<f64> {
    let center = (m as f64 + 1.0) / 2.0;
    let logits: Vec<f64> = (1..=m).map(|t| (t as f64 - center) * z).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
