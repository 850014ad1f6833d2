//! Synthetic populations: `v1 ~ U(0, 5)`, a noise predictor `v2 ~ U(0, 4)`,
//! and `y | v1` from one of four families whose first two moments are
//! matched to `μ_i = β0 + β1 v1 + β2 v1²` and a common variance `σ²`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal, Pareto};
use serde::{Deserialize, Serialize};

use crate::design::{FinitePopulation, UnitRecord};
use crate::error::{Error, Result};
use crate::models::logistic;
use crate::rng::{substream, Stream, StreamRng};

pub const V1_RANGE: (f64, f64) = (0.0, 5.0);
pub const V2_RANGE: (f64, f64) = (0.0, 4.0);
pub const COVARIATES: [&str; 2] = ["v1", "v2"];

/// Coefficients of the true response mechanism on `(1, v1, v1²)`.
pub const RESPONSE_COEFFICIENTS: [f64; 3] = [1.5, -1.5, 0.4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Normal,
    Gamma,
    Lognormal,
    Pareto,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Normal, Family::Gamma, Family::Lognormal, Family::Pareto];

    pub fn default_variance(self) -> f64 {
        match self {
            Family::Normal => 500.0,
            Family::Gamma => 50.0,
            Family::Lognormal => 30.0,
            Family::Pareto => 20.0,
        }
    }

    pub fn requires_positive_mean(self) -> bool {
        !matches!(self, Family::Normal)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::Normal => "normal",
            Family::Gamma => "gamma",
            Family::Lognormal => "lognormal",
            Family::Pareto => "pareto",
        };
        f.write_str(s)
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" => Ok(Family::Normal),
            "gamma" => Ok(Family::Gamma),
            "lognormal" => Ok(Family::Lognormal),
            "pareto" => Ok(Family::Pareto),
            other => Err(Error::Spec(format!("unknown distribution '{other}'"))),
        }
    }
}

/// Native parameters of a family after matching `(μ, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Matched {
    Normal { mean: f64, sd: f64 },
    Gamma { shape: f64, scale: f64 },
    Lognormal { mu_log: f64, sigma_log: f64 },
    /// Type I Pareto with support `[scale, ∞)`.
    Pareto { scale: f64, shape: f64 },
}

impl Matched {
    pub fn new(family: Family, mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::Spec(format!("variance must be positive, got {variance}")));
        }
        if family.requires_positive_mean() && !(mean > 0.0) {
            return Err(Error::Spec(format!("{family} requires a positive mean, got {mean}")));
        }
        Ok(match family {
            Family::Normal => Matched::Normal {
                mean,
                sd: variance.sqrt(),
            },
            Family::Gamma => Matched::Gamma {
                shape: mean * mean / variance,
                scale: variance / mean,
            },
            Family::Lognormal => {
                let s2 = (1.0 + variance / (mean * mean)).ln();
                Matched::Lognormal {
                    mu_log: mean.ln() - 0.5 * s2,
                    sigma_log: s2.sqrt(),
                }
            }
            Family::Pareto => {
                let shape = 1.0 + (1.0 + mean * mean / variance).sqrt();
                Matched::Pareto {
                    scale: mean * (shape - 1.0) / shape,
                    shape,
                }
            }
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // Parameters were validated in `new`, so construction cannot fail.
        match *self {
            Matched::Normal { mean, sd } => Normal::new(mean, sd).expect("valid normal").sample(rng),
            Matched::Gamma { shape, scale } => Gamma::new(shape, scale).expect("valid gamma").sample(rng),
            Matched::Lognormal { mu_log, sigma_log } => {
                LogNormal::new(mu_log, sigma_log).expect("valid lognormal").sample(rng)
            }
            Matched::Pareto { scale, shape } => Pareto::new(scale, shape).expect("valid pareto").sample(rng),
        }
    }

    /// Analytic `(mean, variance)`; used to check the matching algebra.
    pub fn moments(&self) -> (f64, f64) {
        match *self {
            Matched::Normal { mean, sd } => (mean, sd * sd),
            Matched::Gamma { shape, scale } => (shape * scale, shape * scale * scale),
            Matched::Lognormal { mu_log, sigma_log } => {
                let s2 = sigma_log * sigma_log;
                let m = (mu_log + 0.5 * s2).exp();
                (m, (s2.exp() - 1.0) * m * m)
            }
            Matched::Pareto { scale, shape } => (
                shape * scale / (shape - 1.0),
                scale * scale * shape / ((shape - 1.0).powi(2) * (shape - 2.0)),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub size: usize,
    pub distribution: Family,
    pub beta: [f64; 3],
    /// Conditional variance; defaults to the family's value.
    #[serde(default)]
    pub variance: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl PopulationSpec {
    pub fn new(size: usize, distribution: Family, beta: [f64; 3]) -> Self {
        Self {
            size,
            distribution,
            beta,
            variance: None,
            seed: 0,
        }
    }

    /// Parses and validates a TOML spec.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn variance(&self) -> f64 {
        self.variance.unwrap_or_else(|| self.distribution.default_variance())
    }

    pub fn mean_at(&self, v1: f64) -> f64 {
        self.beta[0] + self.beta[1] * v1 + self.beta[2] * v1 * v1
    }

    /// Checks size, variance, and that μ stays positive on `[0, 5]` for
    /// families that need it.
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::Spec("population size must be positive".into()));
        }
        if !(self.variance() > 0.0) {
            return Err(Error::Spec("variance must be positive".into()));
        }
        if self.distribution.requires_positive_mean() {
            let (lo, hi) = V1_RANGE;
            let mut candidates = vec![lo, hi];
            if self.beta[2] != 0.0 {
                let vertex = -self.beta[1] / (2.0 * self.beta[2]);
                if (lo..=hi).contains(&vertex) {
                    candidates.push(vertex);
                }
            }
            let min_mu = candidates.iter().map(|&v| self.mean_at(v)).fold(f64::INFINITY, f64::min);
            if !(min_mu > 0.0) {
                return Err(Error::Spec(format!(
                    "{} needs μ > 0 on v1 ∈ [0, 5], minimum is {min_mu}",
                    self.distribution
                )));
            }
        }
        Ok(())
    }
}

/// Generates a population, drawing covariates and outcomes from separate
/// streams so that specs sharing a covariate stream share `v1`, `v2`.
pub fn gen_population_with<R: Rng + ?Sized, S: Rng + ?Sized>(
    spec: &PopulationSpec,
    covariate_rng: &mut R,
    outcome_rng: &mut S,
) -> Result<FinitePopulation> {
    spec.validate()?;
    let variance = spec.variance();
    let units = (0..spec.size)
        .map(|id| {
            let v1 = covariate_rng.random_range(V1_RANGE.0..V1_RANGE.1);
            let v2 = covariate_rng.random_range(V2_RANGE.0..V2_RANGE.1);
            let dist = Matched::new(spec.distribution, spec.mean_at(v1), variance)?;
            Ok(UnitRecord {
                id,
                y: Some(dist.sample(outcome_rng)),
                v: vec![v1, v2],
                r: true,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FinitePopulation {
        covariate_names: COVARIATES.iter().map(|s| s.to_string()).collect(),
        units,
    })
}

/// Population number `index` of the stream family seeded by `seed`.
pub fn gen_population(spec: &PopulationSpec, seed: u64, index: u64) -> Result<FinitePopulation> {
    let mut cov: StreamRng = substream(seed, index, Stream::Covariates);
    let mut out: StreamRng = substream(seed, index, Stream::Outcome);
    gen_population_with(spec, &mut cov, &mut out)
}

pub fn response_probability(v1: f64) -> f64 {
    let [a0, a1, a2] = RESPONSE_COEFFICIENTS;
    logistic(a0 + a1 * v1 + a2 * v1 * v1)
}

/// Independent Bernoulli response indicators for the given `v1` values.
pub fn gen_response<R: Rng + ?Sized>(v1: &[f64], rng: &mut R) -> Vec<bool> {
    v1.iter()
        .map(|&v| rng.random::<f64>() < response_probability(v))
        .collect()
}
