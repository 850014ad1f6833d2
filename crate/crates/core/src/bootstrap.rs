//! Pseudo-population bootstrap estimator of the conditional bias.
//!
//! Each replicate rebuilds the pseudo-population (`⌊1/π⌋` copies of every
//! sample unit plus a Poisson completion), draws a bootstrap sample with the
//! original design, re-runs the MR imputation on it and records
//! `t̂*_MR − t*_y`. Response indicators travel with the copies.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SurveyData;
use crate::design::draw_srswor;
use crate::error::{Error, Result};
use crate::mr_impute::MrEstimator;
use crate::rng::{derive_seed, substream, Stream};

/// Slack when flooring `1/π`, which is only representable up to rounding.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; `None` uses the ambient rayon pool.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl BootstrapConfig {
    pub fn new(replicates: usize, seed: u64) -> Self {
        Self {
            replicates,
            seed,
            threads: None,
        }
    }
}

/// A pseudo-population as a list of origins (row positions in the sample).
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPopulation {
    /// Origin of every pseudo unit; the first `fixed_len` form `U^f`.
    pub origins: Vec<usize>,
    pub fixed_len: usize,
    /// `t*_y = Σ_{U*} y`.
    pub total: f64,
}

impl PseudoPopulation {
    pub fn size(&self) -> usize {
        self.origins.len()
    }

    pub fn completion_len(&self) -> usize {
        self.origins.len() - self.fixed_len
    }
}

fn split_inverse(w: f64) -> (usize, f64) {
    let whole = (w + FLOOR_SLACK).floor();
    (whole as usize, (w - whole).max(0.0))
}

/// Builds `U* = U^f ∪ U^c*` from the sample weights `w = 1/π`, with
/// `y_values` the value each pseudo copy carries.
pub fn build_pseudo_population<R: Rng + ?Sized>(weights: &[f64], y_values: &[f64], rng: &mut R) -> Result<PseudoPopulation> {
    if weights.len() != y_values.len() {
        return Err(Error::IncompleteData("one y value per sample unit required".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 1.0 - FLOOR_SLACK)) {
        return Err(Error::InvalidDesign(format!("weight {w} implies π outside (0, 1]")));
    }
    let mut origins = Vec::new();
    let mut total = 0.0;
    for (i, (&w, &y)) in weights.iter().zip(y_values).enumerate() {
        let (copies, _) = split_inverse(w);
        origins.extend(std::iter::repeat_n(i, copies));
        total += copies as f64 * y;
    }
    let fixed_len = origins.len();
    for (i, (&w, &y)) in weights.iter().zip(y_values).enumerate() {
        let (_, extra) = split_inverse(w);
        if extra > 0.0 && rng.random::<f64>() < extra {
            origins.push(i);
            total += y;
        }
    }
    Ok(PseudoPopulation {
        origins,
        fixed_len,
        total,
    })
}

/// One bootstrap replicate that ran to completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub index: usize,
    /// `t*_y,m`
    pub parameter: f64,
    /// `t̂*_MR,m`
    pub estimate: f64,
    /// Sorted, distinct origins with at least one copy in `S*_m`.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDistribution {
    /// Completed replicates in index order.
    pub replicates: Vec<Replicate>,
    /// Replicates dropped because the pipeline failed numerically.
    pub dropped: usize,
    /// `M_i` per sample row.
    pub counts: Vec<usize>,
    /// `B̂_1i^(*MR)`; `None` where `M_i = 0`.
    pub cond_bias: Vec<Option<f64>>,
}

impl BootstrapDistribution {
    /// Units never drawn in a completed replicate.
    pub fn unreached(&self) -> Vec<usize> {
        (0..self.counts.len()).filter(|&i| self.counts[i] == 0).collect()
    }

    /// `(B̂_min + B̂_max)/2` over the units with an estimate.
    pub fn midpoint(&self) -> Option<f64> {
        let vals: Vec<f64> = self.cond_bias.iter().flatten().copied().collect();
        crate::design::Extremes::of(&vals).map(|e| e.midpoint())
    }
}

fn replicate_data(data: &SurveyData, pseudo: &PseudoPopulation, picks: &[usize]) -> Result<SurveyData> {
    let n = picks.len();
    let w = pseudo.size() as f64 / n as f64;
    let origin = |j: usize| pseudo.origins[picks[j]];
    SurveyData::new(
        (0..n).collect(),
        vec![w; n],
        (0..n).map(|j| data.responded[origin(j)]).collect(),
        (0..n).map(|j| data.y[origin(j)]).collect(),
        data.covariate_names.clone(),
        (0..n).map(|j| data.covariates[origin(j)].clone()).collect(),
    )
}

fn run_replicate(
    data: &SurveyData,
    y_values: &[f64],
    estimator: &MrEstimator,
    seed: u64,
    index: usize,
) -> Result<Option<Replicate>> {
    let mut rng = substream(seed, index as u64, Stream::Bootstrap);
    let pseudo = build_pseudo_population(&data.weights, y_values, &mut rng)?;
    let sample = draw_srswor(pseudo.size(), data.len(), &mut rng)?;
    let boot = replicate_data(data, &pseudo, &sample.members)?;
    let estimate = match estimator.fit(&boot) {
        Ok(fit) => fit.total,
        Err(e) if e.is_numerical() => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut members: Vec<usize> = sample.members.iter().map(|&k| pseudo.origins[k]).collect();
    members.sort_unstable();
    members.dedup();
    Ok(Some(Replicate {
        index,
        parameter: pseudo.total,
        estimate,
        members,
    }))
}

/// Bootstrap conditional bias of the MR total for every sample unit.
///
/// `y_values` are the values the pseudo-population carries: observed `y`
/// for respondents, the original imputed value for nonrespondents.
pub fn bootstrap_cond_bias(
    data: &SurveyData,
    y_values: &[f64],
    estimator: &MrEstimator,
    config: &BootstrapConfig,
) -> Result<BootstrapDistribution> {
    if config.replicates == 0 {
        return Err(Error::Config("bootstrap needs at least one replicate".into()));
    }
    if y_values.len() != data.len() || y_values.iter().any(|y| !y.is_finite()) {
        return Err(Error::IncompleteData("a finite pseudo-population value per unit is required".into()));
    }
    let work = || {
        (0..config.replicates)
            .into_par_iter()
            .map(|m| run_replicate(data, y_values, estimator, config.seed, m))
            .collect::<Result<Vec<_>>>()
    };
    let outcomes = match config.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }?;

    let dropped = outcomes.iter().filter(|o| o.is_none()).count();
    let replicates: Vec<Replicate> = outcomes.into_iter().flatten().collect();
    let mut counts = vec![0usize; data.len()];
    let mut sums = vec![0.0; data.len()];
    for rep in &replicates {
        let diff = rep.estimate - rep.parameter;
        for &i in &rep.members {
            counts[i] += 1;
            sums[i] += diff;
        }
    }
    let cond_bias = counts
        .iter()
        .zip(&sums)
        .map(|(&c, &s)| (c > 0).then(|| s / c as f64))
        .collect();
    Ok(BootstrapDistribution {
        replicates,
        dropped,
        counts,
        cond_bias,
    })
}

/// Seed of the bootstrap run nested in harness replicate `index`.
pub fn nested_seed(master: u64, index: u64) -> u64 {
    derive_seed(master, index, Stream::Bootstrap as u64)
}
