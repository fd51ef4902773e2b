//! Synthetic confounded datasets with known counterfactuals and propensities.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{logistic_family, Dataset, DatasetError};
use crate::rng::rng_from_seed;

pub const SPEC_VERSION: u32 = 1;

/// Residual standard deviation of the square-root dose in the warfarin-like
/// preset.
pub const WARFARIN_RESIDUAL_SD: f64 = 1.0;

fn default_version() -> u32 {
    SPEC_VERSION
}

/// Distribution of the covariate vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum CovariateModel {
    /// Independent standard normals.
    #[default]
    Gaussian,
    /// Independent uniforms on `[low, high)`.
    Uniform { low: f64, high: f64 },
    /// Independent uniform integers `0..levels`. Rows collide often, which
    /// makes exact matching possible.
    Discrete { levels: usize },
    /// Feature 0 is a standard-normal body-mass-like index, features 1 and 2
    /// are genotype-like counts in `{0, 1, 2}` with probabilities
    /// `(1/4, 1/2, 1/4)`, the rest are standard normals. Needs `d >= 3`.
    WarfarinLike,
    /// Clinical and pharmacogenetic covariates for [`OutcomeModel::LatentDose`]:
    /// see [`clinical`] for the column layout. Columns from index 8 on are
    /// standard normals unrelated to the outcome. Needs `d >= 8`.
    Clinical,
}

/// Column layout of [`CovariateModel::Clinical`].
pub mod clinical {
    /// Age in decades, uniform on `2..=9`.
    pub const AGE: usize = 0;
    /// Height in cm, `N(168, 10)`.
    pub const HEIGHT: usize = 1;
    /// Weight in kg, `N(78, 18)` floored at 40.
    pub const WEIGHT: usize = 2;
    /// Body-mass index computed from height and weight.
    pub const BMI: usize = 3;
    /// VKORC1 genotype: 0 = G/G, 1 = A/G, 2 = A/A.
    pub const VKORC1: usize = 4;
    /// CYP2C9 genotype: 0 = *1/*1, 1 = *1/*2, 2 = *1/*3, 3 = *2/*2,
    /// 4 = *2/*3, 5 = *3/*3.
    pub const CYP2C9: usize = 5;
    pub const AMIODARONE: usize = 6;
    pub const ENZYME_INDUCER: usize = 7;
    pub const MIN_D: usize = 8;
}

/// Conditional mean outcome `E[Y(t) | X = x]` plus noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum OutcomeModel {
    /// `Y(t) = intercepts[t] + weights[t] . x + noise * N(0, 1)`.
    Linear {
        intercepts: Vec<f64>,
        weights: Vec<Vec<f64>>,
    },
    /// Three dose groups; `Y(t) = 1` if `t` is not the correct group for
    /// `x`, else `0`, each flipped independently with probability `noise`.
    ///
    /// The correct group comes from the score
    /// `s = 0.5 x0 + (1 - x1) + 0.5 (1 - x2)`: group 1 if `s < -0.5`,
    /// group 3 if `s > 0.75`, else group 2.
    DoseGroups,
    /// Three dose groups from a latent weekly dose. The square root of the
    /// dose is linear in the [`CovariateModel::Clinical`] covariates (the
    /// published pharmacogenetic dosing formula) plus `noise * N(0, 1)`;
    /// the correct group is low (<= 21 mg/week), medium, or high
    /// (>= 49 mg/week), and `Y(t) = 1` unless `t` is the correct group.
    LatentDose,
}

/// Treatment assignment mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum PropensityModel {
    /// Every treatment with probability `1/m`.
    Uniform,
    /// `P(T = t | x)` proportional to `exp((t - (m+1)/2) * strength * z)`
    /// where `z` standardizes `x[feature]` by its sample mean and standard
    /// deviation. With `m = 3` and `strength = 1` this is the body-mass
    /// mechanism of [`super::confounded_propensity`].
    SingleFeatureLogistic {
        feature: usize,
        #[serde(default = "unit")]
        strength: f64,
    },
}

fn unit() -> f64 {
    1.0
}

/// Full description of a synthetic dataset. Identical specs give
/// bit-identical datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(default = "default_version")]
    pub version: u32,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    #[serde(default)]
    pub covariates: CovariateModel,
    pub outcome_model: OutcomeModel,
    pub propensity_model: PropensityModel,
    #[serde(default)]
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        let spec: SyntheticSpec =
            serde_json::from_str(text).map_err(|e| DatasetError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Warfarin-like benchmark: clinical and genotype covariates, three
    /// dose groups from a noisy latent dose, assignment confounded through
    /// body-mass index. `d >= 8`; columns past the eighth are irrelevant.
    pub fn warfarin_like(n: usize, d: usize, seed: u64) -> Self {
        SyntheticSpec {
            version: SPEC_VERSION,
            n,
            d,
            m: 3,
            covariates: CovariateModel::Clinical,
            outcome_model: OutcomeModel::LatentDose,
            propensity_model: PropensityModel::SingleFeatureLogistic {
                feature: clinical::BMI,
                strength: 1.0,
            },
            noise: WARFARIN_RESIDUAL_SD,
            seed,
        }
    }

    /// Smooth benchmark: two Gaussian covariates, three treatments with
    /// linear conditional means, assignment confounded through `x0`.
    pub fn smooth(n: usize, seed: u64) -> Self {
        SyntheticSpec {
            version: SPEC_VERSION,
            n,
            d: 2,
            m: 3,
            covariates: CovariateModel::Gaussian,
            outcome_model: OutcomeModel::Linear {
                intercepts: vec![0.0, 0.0, -0.5],
                weights: vec![vec![1.5, 0.0], vec![-1.5, 0.0], vec![0.0, 1.5]],
            },
            propensity_model: PropensityModel::SingleFeatureLogistic {
                feature: 0,
                strength: 1.0,
            },
            noise: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let cfg = |msg: String| Err(DatasetError::Config(msg));
        if self.version != SPEC_VERSION {
            return cfg(format!("unsupported spec version {}", self.version));
        }
        if self.n < 1 || self.d < 1 || self.m < 2 {
            return cfg(format!(
                "need n >= 1, d >= 1, m >= 2 (got n={}, d={}, m={})",
                self.n, self.d, self.m
            ));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return cfg(format!("noise must be finite and >= 0, got {}", self.noise));
        }
        match &self.covariates {
            CovariateModel::Uniform { low, high } if !(low < high) => {
                return cfg(format!("uniform covariates need low < high ({low}, {high})"))
            }
            CovariateModel::Discrete { levels } if *levels < 1 => {
                return cfg("discrete covariates need levels >= 1".into())
            }
            CovariateModel::WarfarinLike if self.d < 3 => {
                return cfg("warfarin_like covariates need d >= 3".into())
            }
            CovariateModel::Clinical if self.d < clinical::MIN_D => {
                return cfg(format!("clinical covariates need d >= {}", clinical::MIN_D))
            }
            _ => {}
        }
        match &self.outcome_model {
            OutcomeModel::Linear { intercepts, weights } => {
                if intercepts.len() != self.m
                    || weights.len() != self.m
                    || weights.iter().any(|w| w.len() != self.d)
                {
                    return cfg(format!(
                        "linear outcome model needs {} intercepts and {} x {} weights",
                        self.m, self.m, self.d
                    ));
                }
            }
            OutcomeModel::DoseGroups => {
                if self.m != 3 || self.d < 3 {
                    return cfg("dose_groups outcome model needs m = 3 and d >= 3".into());
                }
                if self.noise > 0.5 {
                    return cfg("dose_groups flip probability must be <= 0.5".into());
                }
            }
            OutcomeModel::LatentDose => {
                if self.m != 3 || self.covariates != CovariateModel::Clinical {
                    return cfg("latent_dose outcome model needs m = 3 and clinical covariates".into());
                }
            }
        }
        if let PropensityModel::SingleFeatureLogistic { feature, strength } = &self.propensity_model {
            if *feature >= self.d || !strength.is_finite() {
                return cfg(format!("logistic propensity feature {feature} out of range"));
            }
        }
        Ok(())
    }
}

/// Correct dose group (1-based) of the [`OutcomeModel::DoseGroups`] model.
pub fn dose_group(x: &[f64]) -> usize {
    let s = 0.5 * x[0] + (1.0 - x[1]) + 0.5 * (1.0 - x[2]);
    if s < -0.5 {
        1
    } else if s > 0.75 {
        3
    } else {
        2
    }
}

const VKORC1_EFFECT: [f64; 3] = [0.0, -0.8677, -1.6974];
const CYP2C9_EFFECT: [f64; 6] = [0.0, -0.5211, -0.9357, -1.0616, -1.9206, -2.3312];

/// Noise-free square root of the weekly dose for clinical covariates `x`.
pub fn sqrt_dose(x: &[f64]) -> f64 {
    use clinical::*;
    5.6044 - 0.2614 * x[AGE]
        + 0.0087 * x[HEIGHT]
        + 0.0128 * x[WEIGHT]
        + VKORC1_EFFECT[x[VKORC1] as usize]
        + CYP2C9_EFFECT[x[CYP2C9] as usize]
        - 0.5503 * x[AMIODARONE]
        + 1.1816 * x[ENZYME_INDUCER]
}

/// Dose group (1-based) of a square-root weekly dose.
pub fn group_of_sqrt_dose(s: f64) -> usize {
    if s <= 21f64.sqrt() {
        1
    } else if s >= 7.0 {
        3
    } else {
        2
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

impl OutcomeModel {
    /// Conditional mean outcomes at `x`, indexed by `t - 1`.
    pub fn conditional_means(&self, x: &[f64], m: usize, noise: f64) -> Vec<f64> {
        match self {
            OutcomeModel::Linear { intercepts, weights } => intercepts
                .iter()
                .zip(weights)
                .map(|(b, w)| b + w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
                .collect(),
            OutcomeModel::DoseGroups => {
                let g = dose_group(x);
                (1..=m)
                    .map(|t| if t == g { noise } else { 1.0 - noise })
                    .collect()
            }
            OutcomeModel::LatentDose => {
                let mu = sqrt_dose(x);
                let below = |c: f64| {
                    if noise > 0.0 {
                        normal_cdf((c - mu) / noise)
                    } else if mu <= c {
                        1.0
                    } else {
                        0.0
                    }
                };
                let low = below(21f64.sqrt());
                // The high group includes its boundary, which has probability
                // zero unless the noise is zero.
                let high = if noise > 0.0 {
                    1.0 - below(7.0)
                } else if mu >= 7.0 {
                    1.0
                } else {
                    0.0
                };
                let probs = [low, 1.0 - low - high, high];
                probs.iter().map(|p| 1.0 - p).collect()
            }
        }
    }
}

/// Column `j` of a clinical row whose earlier columns are `prev`.
fn clinical_value(rng: &mut crate::rng::Rng, j: usize, prev: &[f64]) -> f64 {
    use clinical::*;
    let categorical = |rng: &mut crate::rng::Rng, probs: &[f64]| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k as f64;
            }
        }
        (probs.len() - 1) as f64
    };
    let normal = |rng: &mut crate::rng::Rng| -> f64 { StandardNormal.sample(rng) };
    match j {
        AGE => rng.random_range(2..=9) as f64,
        HEIGHT => 168.0 + 10.0 * normal(rng),
        WEIGHT => (78.0 + 18.0 * normal(rng)).max(40.0),
        BMI => prev[WEIGHT] / (prev[HEIGHT] / 100.0).powi(2),
        VKORC1 => categorical(rng, &[0.35, 0.45, 0.20]),
        CYP2C9 => categorical(rng, &[0.80, 0.10, 0.06, 0.01, 0.02, 0.01]),
        AMIODARONE => f64::from(rng.random::<f64>() < 0.06),
        ENZYME_INDUCER => f64::from(rng.random::<f64>() < 0.02),
        _ => normal(rng),
    }
}

fn genotype(u: f64) -> f64 {
    if u < 0.25 {
        0.0
    } else if u < 0.75 {
        1.0
    } else {
        2.0
    }
}

/// Draws a dataset from `spec`: covariates, then per row the assigned
/// treatment and all `m` potential outcomes. `Q` holds the exact assignment
/// probability of the drawn treatment.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, DatasetError> {
    spec.validate()?;
    let (n, d, m) = (spec.n, spec.d, spec.m);
    let mut rng = rng_from_seed(spec.seed);

    let mut x = Vec::with_capacity(n * d);
    for _ in 0..n {
        for j in 0..d {
            let v = match &spec.covariates {
                CovariateModel::Gaussian => StandardNormal.sample(&mut rng),
                CovariateModel::Uniform { low, high } => rng.random_range(*low..*high),
                CovariateModel::Discrete { levels } => rng.random_range(0..*levels) as f64,
                CovariateModel::Clinical => clinical_value(&mut rng, j, &x[x.len() - j..]),
                CovariateModel::WarfarinLike => match j {
                    1 | 2 => genotype(rng.random::<f64>()),
                    _ => StandardNormal.sample(&mut rng),
                },
            };
            x.push(v);
        }
    }

    let standardized: Option<Vec<f64>> = match &spec.propensity_model {
        PropensityModel::Uniform => None,
        PropensityModel::SingleFeatureLogistic { feature, strength } => {
            let col: Vec<f64> = (0..n).map(|i| x[i * d + feature]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = if n > 1 {
                col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            let sd = var.sqrt();
            Some(
                col.iter()
                    .map(|v| if sd > 0.0 { strength * (v - mean) / sd } else { 0.0 })
                    .collect(),
            )
        }
    };

    let mut treatments = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    let mut cf = Vec::with_capacity(n);
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let probs = match &standardized {
            None => vec![1.0 / m as f64; m],
            Some(z) => logistic_family(z[i], m),
        };
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut t = m;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                t = k + 1;
                break;
            }
        }
        let means = spec.outcome_model.conditional_means(row, m, spec.noise);
        let potential: Vec<f64> = match &spec.outcome_model {
            OutcomeModel::Linear { .. } => means
                .iter()
                .map(|mu| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    mu + spec.noise * e
                })
                .collect(),
            OutcomeModel::LatentDose => {
                let e: f64 = StandardNormal.sample(&mut rng);
                let s = sqrt_dose(row) + spec.noise * e;
                let g = group_of_sqrt_dose(s);
                (1..=m).map(|t| if t == g { 0.0 } else { 1.0 }).collect()
            }
            OutcomeModel::DoseGroups => {
                let g = dose_group(row);
                (1..=m)
                    .map(|s| {
                        let wrong = s != g;
                        let flip = rng.random::<f64>() < spec.noise;
                        if wrong != flip {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
        };
        treatments.push(t);
        outcomes.push(potential[t - 1]);
        q.push(probs[t - 1]);
        cf.push(potential);
    }

    Dataset::from_flat(x, d, treatments, outcomes, m)?
        .with_counterfactuals(cf)?
        .with_propensities(q)
}
