//! Algorithm names, training dispatch, and model documents.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{
    fit_1v1, fit_1va, fit_rc, BaselineError, FittedRegressor, OneVsAll, OneVsOne, PairRule, RcPolicy,
    RegressionDifference, RegressorFamily,
};
use crate::dataset::Dataset;
use crate::opt::{self, OptConfig, OptError, OptimalTree};
use crate::pf::{self, PersonalizationForest, PfConfig, PfError};
use crate::pt::{self, PersonalizationTree, PtConfig, PtError};
use crate::risk::Policy;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown algorithm `{0}`; valid names: {names}", names = Algorithm::NAMES.join(", "))]
    UnknownAlgorithm(String),
    #[error("bad parameters for {algo}: {message}")]
    Params { algo: Algorithm, message: String },
    #[error(transparent)]
    Pt(#[from] PtError),
    #[error(transparent)]
    Pf(#[from] PfError),
    #[error(transparent)]
    Opt(#[from] OptError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Pt,
    Pf,
    Opt,
    Rc(Regression),
    OneVsAll(Regression),
    OneVsOne(PairRule, Regression),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regression {
    Ols,
    Knn,
}

impl Algorithm {
    pub const NAMES: [&'static str; 11] = [
        "pt", "pf", "opt", "rc-ols", "rc-knn", "1va-ols", "1va-knn", "1v1a-ols", "1v1a-knn", "1v1b-ols",
        "1v1b-knn",
    ];

    pub fn name(&self) -> &'static str {
        let index = match *self {
            Algorithm::Pt => 0,
            Algorithm::Pf => 1,
            Algorithm::Opt => 2,
            Algorithm::Rc(r) => 3 + r as usize,
            Algorithm::OneVsAll(r) => 5 + r as usize,
            Algorithm::OneVsOne(PairRule::A, r) => 7 + r as usize,
            Algorithm::OneVsOne(PairRule::B, r) => 9 + r as usize,
        };
        Self::NAMES[index]
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        let reg = |tail: &str| match tail {
            "ols" => Some(Regression::Ols),
            "knn" => Some(Regression::Knn),
            _ => None,
        };
        let algo = match s {
            "pt" => Some(Algorithm::Pt),
            "pf" => Some(Algorithm::Pf),
            "opt" => Some(Algorithm::Opt),
            _ => s.split_once('-').and_then(|(head, tail)| {
                let r = reg(tail)?;
                match head {
                    "rc" => Some(Algorithm::Rc(r)),
                    "1va" => Some(Algorithm::OneVsAll(r)),
                    "1v1a" => Some(Algorithm::OneVsOne(PairRule::A, r)),
                    "1v1b" => Some(Algorithm::OneVsOne(PairRule::B, r)),
                    _ => None,
                }
            }),
        };
        algo.ok_or_else(|| ModelError::UnknownAlgorithm(s.to_string()))
    }
}

impl Serialize for Algorithm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Algorithm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Regression settings for the baseline algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionParams {
    /// Neighbors per fit; `None` uses `floor(sqrt(n))` of each fitting sample.
    pub k: Option<usize>,
}

/// Tuning parameters, shaped by the algorithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Params {
    Pt(PtConfig),
    Pf(PfConfig),
    Opt(OptConfig),
    Regression(RegressionParams),
}

impl Params {
    pub fn defaults(algo: Algorithm) -> Self {
        match algo {
            Algorithm::Pt => Params::Pt(PtConfig::default()),
            Algorithm::Pf => Params::Pf(PfConfig::default()),
            Algorithm::Opt => Params::Opt(OptConfig::default()),
            _ => Params::Regression(RegressionParams::default()),
        }
    }

    /// Reads parameters from a JSON object; missing keys take defaults.
    pub fn from_value(algo: Algorithm, value: serde_json::Value) -> Result<Self, ModelError> {
        let err = |e: serde_json::Error| ModelError::Params {
            algo,
            message: e.to_string(),
        };
        Ok(match algo {
            Algorithm::Pt => Params::Pt(serde_json::from_value(value).map_err(err)?),
            Algorithm::Pf => Params::Pf(serde_json::from_value(value).map_err(err)?),
            Algorithm::Opt => Params::Opt(serde_json::from_value(value).map_err(err)?),
            _ => Params::Regression(serde_json::from_value(value).map_err(err)?),
        })
    }

    /// Replaces the seed, where the algorithm has one.
    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            Params::Pt(c) => Params::Pt(PtConfig { seed, ..c }),
            Params::Pf(c) => Params::Pf(PfConfig {
                master_seed: seed,
                ..c
            }),
            Params::Opt(c) => Params::Opt(OptConfig { seed, ..c }),
            p => p,
        }
    }
}

/// Any fitted policy.
#[derive(Debug, Clone)]
pub enum Model {
    Pt(PersonalizationTree),
    Pf(PersonalizationForest),
    Opt {
        tree: OptimalTree,
        objective: f64,
        proven: bool,
    },
    Rc(Regression, RcPolicy),
    OneVsAll(Regression, OneVsAll<RegressionDifference>),
    OneVsOne(Regression, OneVsOne<RegressionDifference>),
}

fn family(r: Regression, params: &RegressionParams) -> RegressorFamily {
    match r {
        Regression::Ols => RegressorFamily::Ols,
        Regression::Knn => RegressorFamily::Knn { k: params.k },
    }
}

/// Fits `algo` on `ds`.
pub fn train(algo: Algorithm, params: &Params, ds: &Dataset) -> Result<Model, ModelError> {
    let mismatch = || ModelError::Params {
        algo,
        message: "parameters belong to another algorithm".into(),
    };
    Ok(match (algo, params) {
        (Algorithm::Pt, Params::Pt(c)) => Model::Pt(pt::fit(ds, c)?),
        (Algorithm::Pf, Params::Pf(c)) => Model::Pf(pf::fit(ds, c)?),
        (Algorithm::Opt, Params::Opt(c)) => {
            let sol = opt::fit(ds, c)?;
            Model::Opt {
                tree: sol.tree,
                objective: sol.objective,
                proven: sol.proven,
            }
        }
        (Algorithm::Rc(r), Params::Regression(p)) => Model::Rc(r, fit_rc(ds, family(r, p))?),
        (Algorithm::OneVsAll(r), Params::Regression(p)) => Model::OneVsAll(r, fit_1va(ds, &family(r, p))?),
        (Algorithm::OneVsOne(rule, r), Params::Regression(p)) => {
            Model::OneVsOne(r, fit_1v1(ds, &family(r, p), rule)?)
        }
        _ => return Err(mismatch()),
    })
}

#[derive(Serialize, Deserialize)]
struct Kind {
    kind: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RcDoc {
    kind: String,
    d: usize,
    regressors: Vec<FittedRegressor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VaDoc {
    kind: String,
    d: usize,
    models: Vec<RegressionDifference>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VoDoc {
    kind: String,
    d: usize,
    models: Vec<Vec<RegressionDifference>>,
}

impl Model {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            Model::Pt(_) => Algorithm::Pt,
            Model::Pf(_) => Algorithm::Pf,
            Model::Opt { .. } => Algorithm::Opt,
            Model::Rc(r, _) => Algorithm::Rc(*r),
            Model::OneVsAll(r, _) => Algorithm::OneVsAll(*r),
            Model::OneVsOne(r, p) => Algorithm::OneVsOne(p.rule, *r),
        }
    }

    /// Covariate dimension the model expects.
    pub fn dim(&self) -> usize {
        match self {
            Model::Pt(t) => t.d,
            Model::Pf(f) => f.d,
            Model::Opt { tree, .. } => tree.d,
            Model::Rc(_, p) => p.d,
            Model::OneVsAll(_, p) => p.d,
            Model::OneVsOne(_, p) => p.d,
        }
    }

    pub fn to_json(&self) -> String {
        let kind = self.algorithm().name().to_string();
        match self {
            Model::Pt(t) => t.to_json(),
            Model::Pf(f) => f.to_json(),
            Model::Opt { tree, .. } => tree.to_json(),
            Model::Rc(_, p) => serde_json::to_string(&RcDoc {
                kind,
                d: p.d,
                regressors: p.regressors.clone(),
            })
            .expect("model serializes"),
            Model::OneVsAll(_, p) => serde_json::to_string(&VaDoc {
                kind,
                d: p.d,
                models: p.models.clone(),
            })
            .expect("model serializes"),
            Model::OneVsOne(_, p) => serde_json::to_string(&VoDoc {
                kind,
                d: p.d,
                models: p.models.clone(),
            })
            .expect("model serializes"),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let Kind { kind } = pt::parse_doc(text)?;
        let algo: Algorithm = kind.parse()?;
        let bad = |message: String| {
            ModelError::Pt(PtError::Validation {
                path: "models".into(),
                message,
            })
        };
        Ok(match algo {
            Algorithm::Pt => Model::Pt(PersonalizationTree::from_json(text)?),
            Algorithm::Pf => Model::Pf(PersonalizationForest::from_json(text)?),
            Algorithm::Opt => Model::Opt {
                tree: OptimalTree::from_json(text)?,
                objective: f64::NAN,
                proven: false,
            },
            Algorithm::Rc(r) => {
                let doc: RcDoc = pt::parse_doc(text)?;
                if doc.regressors.is_empty() {
                    return Err(bad("no regressors".into()));
                }
                Model::Rc(
                    r,
                    RcPolicy {
                        regressors: doc.regressors,
                        d: doc.d,
                    },
                )
            }
            Algorithm::OneVsAll(r) => {
                let doc: VaDoc = pt::parse_doc(text)?;
                if doc.models.is_empty() {
                    return Err(bad("no contrasts".into()));
                }
                Model::OneVsAll(
                    r,
                    OneVsAll {
                        models: doc.models,
                        d: doc.d,
                    },
                )
            }
            Algorithm::OneVsOne(rule, r) => {
                let doc: VoDoc = pt::parse_doc(text)?;
                let m = doc.models.len();
                if m == 0 || doc.models.iter().any(|row| row.len() + 1 != m) {
                    return Err(bad("need m - 1 contrasts per treatment".into()));
                }
                Model::OneVsOne(
                    r,
                    OneVsOne {
                        models: doc.models,
                        rule,
                        d: doc.d,
                    },
                )
            }
        })
    }
}

impl Policy for Model {
    fn treatments(&self) -> usize {
        match self {
            Model::Pt(t) => t.treatments(),
            Model::Pf(f) => f.treatments(),
            Model::Opt { tree, .. } => tree.treatments(),
            Model::Rc(_, p) => p.treatments(),
            Model::OneVsAll(_, p) => p.treatments(),
            Model::OneVsOne(_, p) => p.treatments(),
        }
    }

    fn prescribe(&self, x: &[f64]) -> usize {
        match self {
            Model::Pt(t) => t.prescribe(x),
            Model::Pf(f) => f.prescribe(x),
            Model::Opt { tree, .. } => tree.prescribe(x),
            Model::Rc(_, p) => p.prescribe(x),
            Model::OneVsAll(_, p) => p.prescribe(x),
            Model::OneVsOne(_, p) => p.prescribe(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for name in Algorithm::NAMES {
            let algo: Algorithm = name.parse().unwrap();
            assert_eq!(algo.name(), name);
        }
        let err = "forest".parse::<Algorithm>().unwrap_err().to_string();
        assert!(err.contains("rc-knn"), "{err}");
    }

    #[test]
    fn every_model_round_trips() {
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![(i % 10) as f64, (i / 10) as f64]).collect();
        let t: Vec<usize> = (0..60).map(|i| 1 + (i * 7 % 3)).collect();
        let y: Vec<f64> = rows
            .iter()
            .zip(&t)
            .map(|(r, &t)| r[0] * t as f64 - r[1])
            .collect();
        let ds = Dataset::new(rows, t, y, 3).unwrap();
        for name in Algorithm::NAMES {
            let algo: Algorithm = name.parse().unwrap();
            let params = match Params::defaults(algo) {
                Params::Pt(c) => Params::Pt(PtConfig { n_min_leaf: 3, ..c }),
                Params::Pf(c) => Params::Pf(PfConfig {
                    trees: 4,
                    base: PtConfig {
                        n_min_leaf: 3,
                        ..c.base
                    },
                    ..c
                }),
                Params::Opt(c) => Params::Opt(OptConfig {
                    n_min_leaf: 3,
                    n_cuts: 3,
                    ..c
                }),
                p => p,
            };
            let model = train(algo, &params, &ds).unwrap();
            let text = model.to_json();
            let back = Model::from_json(&text).unwrap();
            assert_eq!(back.algorithm(), algo);
            for x in ds.rows() {
                assert_eq!(back.prescribe(x), model.prescribe(x), "{name}");
            }
        }
    }
}
