//! Learning-curve harness: for every replication, draw a test set, train
//! every algorithm on nested training sets of each size, and record risk and
//! both coefficients of personalization.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Deserialize;

use super::CliError;
use crate::dataset::{generate_synthetic, load_csv, CsvOptions, Dataset, SyntheticSpec};
use crate::eval::{greedy_submatch, mahalanobis_metric, matched_metrics, optimal_submatch, MatchedTestSet};
use crate::model::{self, Algorithm, Params};
use crate::risk::{oracle_metrics, Coefficient};
use crate::rng::{derive_seed, rng_from_seed};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmEntry {
    pub name: String,
    #[serde(default = "empty_object")]
    pub params: serde_json::Value,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    WarfarinLike,
    Smooth,
}

fn default_d() -> usize {
    10
}

fn treatment_col() -> String {
    "treatment".into()
}

fn outcome_col() -> String {
    "outcome".into()
}

/// Where each replication's population comes from. Synthetic populations
/// are redrawn per replication (the spec's own seed is replaced); a CSV file
/// is shared by all replications.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Preset {
        name: Preset,
        population: usize,
        #[serde(default = "default_d")]
        d: usize,
    },
    Synthetic {
        spec: SyntheticSpec,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "treatment_col")]
        treatment_col: String,
        #[serde(default = "outcome_col")]
        outcome_col: String,
        #[serde(default)]
        categorical: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Protocol {
    /// Random test subjects scored with their counterfactuals.
    Oracle {
        n_test: usize,
    },
    Greedy {
        n_test: usize,
    },
    Optimal {
        n_pair: usize,
    },
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Oracle { .. } => "oracle",
            Protocol::Greedy { .. } => "greedy",
            Protocol::Optimal { .. } => "optimal",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub algorithms: Vec<AlgorithmEntry>,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub data: DataSource,
    pub protocol: Protocol,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::Usage(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.version != CONFIG_VERSION {
            return usage(format!(
                "unsupported config version {}, expected {CONFIG_VERSION}",
                self.version
            ));
        }
        if self.algorithms.is_empty() {
            return usage("no algorithms listed".into());
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return usage("n_grid must be non-empty and positive".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return usage("n_grid must be strictly ascending".into());
        }
        if self.replications == 0 {
            return usage("replications must be at least 1".into());
        }
        let size = match self.protocol {
            Protocol::Oracle { n_test } | Protocol::Greedy { n_test } => n_test,
            Protocol::Optimal { n_pair } => n_pair,
        };
        if size == 0 {
            return usage("test size must be positive".into());
        }
        let mut seen = HashSet::new();
        for entry in &self.algorithms {
            if !seen.insert(entry.name.as_str()) {
                return usage(format!("algorithm `{}` listed twice", entry.name));
            }
        }
        self.resolved_algorithms()?;
        Ok(())
    }

    /// Algorithms with their parsed parameters, in config order.
    pub fn resolved_algorithms(&self) -> Result<Vec<(Algorithm, Params)>, CliError> {
        self.algorithms
            .iter()
            .map(|e| {
                let algo: Algorithm = e.name.parse()?;
                Ok((algo, Params::from_value(algo, e.params.clone())?))
            })
            .collect()
    }
}

/// One measurement of the long-format output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentRow {
    pub algo: Algorithm,
    pub n: usize,
    pub replication: usize,
    pub risk: f64,
    pub p1: Coefficient,
    pub p2: Coefficient,
}

enum TestSet {
    Oracle(Dataset),
    Matched(MatchedTestSet),
}

fn population(cfg: &ExperimentConfig, shared: Option<&Dataset>, seed: u64) -> Result<Dataset, CliError> {
    let spec = match &cfg.data {
        DataSource::Csv { .. } => return Ok(shared.expect("csv loaded up front").clone()),
        DataSource::Preset {
            name: Preset::WarfarinLike,
            population,
            d,
        } => SyntheticSpec::warfarin_like(*population, *d, seed),
        DataSource::Preset {
            name: Preset::Smooth,
            population,
            ..
        } => SyntheticSpec::smooth(*population, seed),
        DataSource::Synthetic { spec } => SyntheticSpec { seed, ..spec.clone() },
    };
    Ok(generate_synthetic(&spec)?)
}

fn replicate(
    cfg: &ExperimentConfig,
    algos: &[(Algorithm, Params)],
    shared: Option<&Dataset>,
    r: usize,
) -> Result<Vec<ExperimentRow>, CliError> {
    let seed = derive_seed(cfg.seed, r as u64);
    let pop = population(cfg, shared, derive_seed(seed, 0))?;
    let test_seed = derive_seed(seed, 1);
    let (test, removed) = match cfg.protocol {
        Protocol::Oracle { n_test } => {
            if n_test > pop.n() {
                return Err(CliError::Data(format!(
                    "n_test = {n_test} exceeds population {}",
                    pop.n()
                )));
            }
            let mut idx = rand::seq::index::sample(&mut rng_from_seed(test_seed), pop.n(), n_test).into_vec();
            idx.sort_unstable();
            (TestSet::Oracle(pop.split(&idx)?), idx)
        }
        Protocol::Greedy { n_test } => {
            let metric = mahalanobis_metric(&pop)?;
            let mts = greedy_submatch(&pop, n_test, &metric, test_seed)?;
            let removed = mts.removed.clone();
            (TestSet::Matched(mts), removed)
        }
        Protocol::Optimal { n_pair } => {
            let metric = mahalanobis_metric(&pop)?;
            let mts = optimal_submatch(&pop, n_pair, &metric)?;
            let removed = mts.removed.clone();
            (TestSet::Matched(mts), removed)
        }
    };

    let removed: HashSet<usize> = removed.into_iter().collect();
    let mut pool: Vec<usize> = (0..pop.n()).filter(|i| !removed.contains(i)).collect();
    pool.shuffle(&mut rng_from_seed(derive_seed(seed, 2)));
    let largest = *cfg.n_grid.last().expect("validated");
    if largest > pool.len() {
        return Err(CliError::Data(format!(
            "replication {r}: training pool has {} subjects, n_grid needs {largest}",
            pool.len()
        )));
    }

    let mut rows = Vec::with_capacity(algos.len() * cfg.n_grid.len());
    for &n in &cfg.n_grid {
        let mut idx = pool[..n].to_vec();
        if let Some(bad) = idx.iter().find(|i| removed.contains(i)) {
            return Err(CliError::Audit(format!(
                "replication {r}: test subject {bad} in training set"
            )));
        }
        idx.sort_unstable();
        let train = pop.split(&idx)?;
        for (a, (algo, params)) in algos.iter().enumerate() {
            let params = params.with_seed(derive_seed(seed, 3 + a as u64));
            let fitted = model::train(*algo, &params, &train)?;
            let (risk, p1, p2) = match &test {
                TestSet::Oracle(ds) => {
                    let m = oracle_metrics(ds, &fitted)?;
                    (m.risk, m.p1, m.p2)
                }
                TestSet::Matched(mts) => {
                    let m = matched_metrics(mts, &fitted)?;
                    (m.risk, m.p1, m.p2)
                }
            };
            rows.push(ExperimentRow {
                algo: *algo,
                n,
                replication: r,
                risk,
                p1,
                p2,
            });
        }
    }
    Ok(rows)
}

/// Runs every replication (concurrently) and returns rows sorted by
/// algorithm (config order), `n`, then replication. Relative CSV paths are
/// resolved against `base_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Vec<ExperimentRow>, CliError> {
    cfg.validate()?;
    let algos = cfg.resolved_algorithms()?;
    let shared = match &cfg.data {
        DataSource::Csv {
            path,
            treatment_col,
            outcome_col,
            categorical,
        } => {
            let opts = CsvOptions {
                treatment_col: treatment_col.clone(),
                outcome_col: outcome_col.clone(),
                categorical: categorical.clone(),
                ..CsvOptions::default()
            };
            let ds = load_csv(base_dir.join(path), &opts)?;
            if matches!(cfg.protocol, Protocol::Oracle { .. }) && !ds.has_counterfactuals() {
                return Err(CliError::Data(
                    "the oracle protocol needs counterfactual columns".into(),
                ));
            }
            Some(ds)
        }
        _ => None,
    };

    let per_rep: Vec<Vec<ExperimentRow>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| replicate(cfg, &algos, shared.as_ref(), r))
        .collect::<Result<_, _>>()?;
    let order = |a: Algorithm| algos.iter().position(|(b, _)| *b == a).expect("listed");
    let mut rows: Vec<ExperimentRow> = per_rep.into_iter().flatten().collect();
    rows.sort_by_key(|row| (order(row.algo), row.n, row.replication));
    Ok(rows)
}

fn cell(c: Coefficient) -> String {
    match c {
        Coefficient::Defined(v) => v.to_string(),
        Coefficient::Undefined => String::new(),
    }
}

/// Long-format CSV: `algo,n,replication,risk,p1,p2`. Undefined coefficients
/// are empty cells.
pub fn write_rows<W: Write>(rows: &[ExperimentRow], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["algo", "n", "replication", "risk", "p1", "p2"])?;
    for row in rows {
        w.write_record([
            row.algo.name().to_string(),
            row.n.to_string(),
            row.replication.to_string(),
            row.risk.to_string(),
            cell(row.p1),
            cell(row.p2),
        ])?;
    }
    w.flush()?;
    Ok(())
}
