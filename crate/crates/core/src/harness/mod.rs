//! Monte Carlo driver and dataset mode.
//!
//! A scenario regenerates the population, draws an SRSWOR sample, generates
//! response, imputes, and forms `t̂_MR` and `t̂*_MR` in each of `R`
//! replicates. Every replicate reads only its own RNG substreams, so results
//! do not depend on the number of threads.

mod dataset;
mod metrics;
mod report;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_cond_bias, nested_seed, BootstrapConfig};
use crate::calibrate::{calibrate, CalibrationProblem, Distance};
use crate::data::SurveyData;
use crate::design::{draw_srswor, FinitePopulation};
use crate::error::{Error, Result};
use crate::models::{ImputationModelSpec, NonresponseModelSpec};
use crate::mr_impute::MrEstimator;
use crate::pipeline::estimate;
use crate::rng::{substream, Stream};
use crate::simgen::{gen_population, gen_response, PopulationSpec, COVARIATES};

pub use dataset::{
    calibrate_csv, estimate_dataset, impute_dataset, read_survey_csv, write_population_csv, write_survey_csv,
    BootstrapSummary, DatasetOptions, DatasetOutput, DatasetSummary,
};
pub use metrics::{metrics, pairwise_sum, relative_efficiency, EstimatorMetrics};
pub use report::{write_results_csv, write_sidecar_json};

pub const DEFAULT_REPLICATES: usize = 2000;

fn default_replicates() -> usize {
    DEFAULT_REPLICATES
}

/// Published values for a scenario row, carried along for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    pub rb: f64,
    pub rb_star: f64,
    pub re: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Free-form grouping tag, e.g. the table a row belongs to.
    #[serde(default)]
    pub table: Option<String>,
    /// Free-form label of the model scenario, e.g. "m+ p-".
    #[serde(default)]
    pub label: Option<String>,
    pub population: PopulationSpec,
    pub n: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub nonresponse: Vec<NonresponseModelSpec>,
    pub imputation: Vec<ImputationModelSpec>,
    /// Bootstrap replicates per sample; `None` skips the bootstrap estimator.
    #[serde(default)]
    pub bootstrap: Option<usize>,
    /// Calibrate imputed values to `t̂*_MR` with this distance.
    #[serde(default)]
    pub calibration: Option<Distance>,
    /// Keep replicate 0's population for every replicate.
    #[serde(default)]
    pub freeze_population: bool,
    #[serde(default)]
    pub reference: Option<Reference>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("scenario '{}': {m}", self.name)));
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if let Err(e) = self.population.validate() {
            return bad(e.to_string());
        }
        if self.n == 0 || self.n > self.population.size {
            return bad(format!("need 1 ≤ n ≤ N, got n = {} and N = {}", self.n, self.population.size));
        }
        if self.imputation.is_empty() {
            return bad("at least one imputation model is required".into());
        }
        let predictors = self
            .nonresponse
            .iter()
            .map(|m| &m.predictors)
            .chain(self.imputation.iter().map(|m| &m.predictors));
        for p in predictors {
            if let Some(c) = p.columns().find(|c| !COVARIATES.contains(c)) {
                return bad(format!("unknown predictor column '{c}'"));
            }
        }
        if self.bootstrap == Some(0) {
            return bad("bootstrap needs at least one replicate".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        if let Some(Distance::Logit { lower, upper }) = self.calibration {
            if !(lower < 1.0 && upper > 1.0) {
                return bad("logit bounds need lower < 1 < upper".into());
            }
        }
        Ok(())
    }

    pub fn estimator(&self) -> Result<MrEstimator> {
        MrEstimator::new(self.nonresponse.clone(), self.imputation.clone())
    }
}

/// A configuration file: a list of `[[scenario]]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scenario: Vec<ScenarioConfig>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.scenario.is_empty() {
            return Err(Error::Config("no [[scenario]] tables".into()));
        }
        for s in &cfg.scenario {
            s.validate()?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// What one replicate contributes to the aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub population_total: f64,
    pub mr: f64,
    pub robust: f64,
    pub robust_bootstrap: Option<f64>,
    pub bootstrap_dropped: usize,
    pub clamped: usize,
    /// `Some(|t̂_F − t̂*| / |t̂*|)` when calibration ran, `None` if it failed.
    pub calibration_error: Option<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub name: String,
    pub table: Option<String>,
    pub label: Option<String>,
    pub distribution: crate::simgen::Family,
    pub beta: [f64; 3],
    pub n: usize,
    pub replicates: usize,
    pub completed: usize,
    /// Replicates abandoned after a numerical failure, by error kind.
    pub failures: BTreeMap<String, usize>,
    pub mr: EstimatorMetrics,
    pub robust: EstimatorMetrics,
    pub re: f64,
    pub robust_bootstrap: Option<EstimatorMetrics>,
    pub re_bootstrap: Option<f64>,
    pub bootstrap_dropped: usize,
    /// Monte Carlo standard error of `RB(t̂_MR)`.
    pub rb_se: f64,
    /// Monte Carlo standard error of `RB(t̂*_MR)`.
    pub rb_star_se: f64,
    /// Delta-method standard error of `RE`.
    pub re_se: f64,
    pub clamped_units: usize,
    pub replicates_with_clamping: usize,
    pub calibration_failures: usize,
    pub max_calibration_error: Option<f64>,
    pub reference: Option<Reference>,
    pub wall_time_secs: f64,
}

fn failure_kind(e: &Error) -> &'static str {
    match e {
        Error::Singular { .. } => "singular",
        Error::NonConvergence { .. } => "non_convergence",
        Error::Separation { .. } => "separation",
        Error::DegenerateCompression(_) => "degenerate_compression",
        _ => "other",
    }
}

/// The sample and response indicators replicate `index` draws from `pop`.
pub fn simulated_sample(pop: &FinitePopulation, n: usize, seed: u64, index: u64) -> Result<SurveyData> {
    let sample = draw_srswor(pop.size(), n, &mut substream(seed, index, Stream::Sampling))?;
    let v1 = pop.column("v1").ok_or_else(|| Error::Spec("population has no v1".into()))?;
    let v1s: Vec<f64> = sample.members.iter().map(|&i| pop.units[i].v[v1]).collect();
    let responded = gen_response(&v1s, &mut substream(seed, index, Stream::Response));
    SurveyData::from_sample(pop, &sample, &responded)
}

/// One replicate; `Err` only for non-numerical failures, numerical ones are
/// reported as `Ok(Err(kind))`.
pub fn run_replicate(
    cfg: &ScenarioConfig,
    estimator: &MrEstimator,
    index: u64,
    frozen: Option<&(FinitePopulation, f64)>,
) -> Result<std::result::Result<ReplicateOutcome, &'static str>> {
    let owned;
    let (pop, population_total) = match frozen {
        Some((p, t)) => (p, *t),
        None => {
            owned = gen_population(&cfg.population, cfg.seed, index)?;
            let t = owned.total()?;
            (&owned, t)
        }
    };
    let data = simulated_sample(pop, cfg.n, cfg.seed, index)?;
    let design = crate::design::SrsworDesign::new(pop.size(), cfg.n)?;
    let est = match estimate(&data, &design, estimator) {
        Ok(e) => e,
        Err(e) if e.is_numerical() => return Ok(Err(failure_kind(&e))),
        Err(e) => return Err(e),
    };
    let clamped = est.imputation.suite.as_ref().map_or(0, |s| s.clamp_count());

    let (robust_bootstrap, bootstrap_dropped) = match cfg.bootstrap {
        None => (None, 0),
        Some(m) => {
            let config = BootstrapConfig {
                replicates: m,
                seed: nested_seed(cfg.seed, index),
                threads: None,
            };
            let dist = bootstrap_cond_bias(&data, &est.imputation.completed(&data), estimator, &config)?;
            (dist.midpoint().map(|mid| est.total - mid), dist.dropped)
        }
    };

    let calibration_error = cfg.calibration.map(|distance| {
        CalibrationProblem::from_imputation(&data, &est.imputation, est.robust_total)
            .and_then(|p| calibrate(&p, distance).map(|v| p.total(&v)))
            .ok()
            .map(|t| (t - est.robust_total).abs() / est.robust_total.abs().max(f64::MIN_POSITIVE))
    });

    Ok(Ok(ReplicateOutcome {
        population_total,
        mr: est.total,
        robust: est.robust_total,
        robust_bootstrap,
        bootstrap_dropped,
        clamped,
        calibration_error,
    }))
}

/// Runs every replicate of a scenario and aggregates.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunResult> {
    cfg.validate()?;
    let estimator = cfg.estimator()?;
    let start = Instant::now();
    let frozen = if cfg.freeze_population {
        let pop = gen_population(&cfg.population, cfg.seed, 0)?;
        let t = pop.total()?;
        Some((pop, t))
    } else {
        None
    };
    let work = || {
        (0..cfg.replicates as u64)
            .into_par_iter()
            .map(|k| run_replicate(cfg, &estimator, k, frozen.as_ref()))
            .collect::<Result<Vec<_>>>()
    };
    let outcomes = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }?;
    aggregate(cfg, outcomes, start.elapsed().as_secs_f64())
}

fn aggregate(
    cfg: &ScenarioConfig,
    outcomes: Vec<std::result::Result<ReplicateOutcome, &'static str>>,
    wall_time_secs: f64,
) -> Result<RunResult> {
    let mut failures = BTreeMap::new();
    let mut ok = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match o {
            Ok(r) => ok.push(r),
            Err(kind) => *failures.entry(kind.to_string()).or_insert(0) += 1,
        }
    }
    if ok.is_empty() {
        return Err(Error::Metric(format!("scenario '{}': every replicate failed ({failures:?})", cfg.name)));
    }
    let totals: Vec<f64> = ok.iter().map(|o| o.population_total).collect();
    let mr_est: Vec<f64> = ok.iter().map(|o| o.mr).collect();
    let mr = metrics(&mr_est, &totals)?;
    let robust = metrics(&ok.iter().map(|o| o.robust).collect::<Vec<_>>(), &totals)?;
    let re = relative_efficiency(&robust, &mr)?;

    let (robust_bootstrap, re_bootstrap) = if cfg.bootstrap.is_some() {
        let pairs: Vec<(f64, f64)> = ok.iter().filter_map(|o| o.robust_bootstrap.map(|b| (b, o.population_total))).collect();
        let (b, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = metrics(&b, &t)?;
        // RE against t̂_MR on the same replicates.
        (Some(m), Some(relative_efficiency(&m, &mr)?))
    } else {
        (None, None)
    };

    let k = ok.len() as f64;
    let rb_se = |est: &[f64], rb: f64| {
        let var = est
            .iter()
            .zip(&totals)
            .map(|(e, t)| (100.0 * (e - t) / t - rb).powi(2))
            .sum::<f64>()
            / (k - 1.0).max(1.0);
        (var / k).sqrt()
    };
    let robust_est: Vec<f64> = ok.iter().map(|o| o.robust).collect();
    // RE = 100 ā/b̄ with a, b the squared errors; linearize the ratio.
    let ratio = robust.mse / mr.mse;
    let lin_var = ok
        .iter()
        .map(|o| {
            let (a, b) = ((o.robust - o.population_total).powi(2), (o.mr - o.population_total).powi(2));
            (a - ratio * b).powi(2)
        })
        .sum::<f64>()
        / (k - 1.0).max(1.0);
    let re_se = 100.0 * (lin_var / k).sqrt() / mr.mse;

    let cal: Vec<Option<f64>> = ok.iter().filter_map(|o| o.calibration_error).collect();
    let calibration_failures = cal.iter().filter(|c| c.is_none()).count();
    let max_calibration_error = cal.iter().flatten().copied().reduce(f64::max);

    Ok(RunResult {
        name: cfg.name.clone(),
        table: cfg.table.clone(),
        label: cfg.label.clone(),
        distribution: cfg.population.distribution,
        beta: cfg.population.beta,
        n: cfg.n,
        replicates: cfg.replicates,
        completed: ok.len(),
        failures,
        mr,
        robust,
        re,
        robust_bootstrap,
        re_bootstrap,
        bootstrap_dropped: ok.iter().map(|o| o.bootstrap_dropped).sum(),
        rb_se: rb_se(&mr_est, mr.rb),
        rb_star_se: rb_se(&robust_est, robust.rb),
        re_se,
        clamped_units: ok.iter().map(|o| o.clamped).sum(),
        replicates_with_clamping: ok.iter().filter(|o| o.clamped > 0).count(),
        calibration_failures,
        max_calibration_error,
        reference: cfg.reference,
        wall_time_secs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::PredictorSet;
    use crate::simgen::Family;

    fn scenario(family: Family, beta: [f64; 3], r: usize) -> ScenarioConfig {
        ScenarioConfig {
            name: "t".into(),
            table: None,
            label: None,
            population: PopulationSpec::new(1000, family, beta),
            n: 50,
            replicates: r,
            seed: 3,
            threads: None,
            nonresponse: vec![],
            imputation: vec![ImputationModelSpec::new(PredictorSet::parse(&["1", "v1", "v1^2"]).unwrap())],
            bootstrap: None,
            calibration: None,
            freeze_population: false,
            reference: None,
        }
    }

    fn untimed(mut r: RunResult) -> RunResult {
        r.wall_time_secs = 0.0;
        r
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let mut cfg = scenario(Family::Gamma, [1.0, 0.2, 0.2], 40);
        cfg.nonresponse = vec![NonresponseModelSpec::new(PredictorSet::parse(&["1", "v1", "v1^2"]).unwrap())];
        cfg.bootstrap = Some(20);
        cfg.calibration = Some(Distance::ChiSquare);
        cfg.threads = Some(1);
        let a = untimed(run_scenario(&cfg).unwrap());
        cfg.threads = Some(4);
        let b = untimed(run_scenario(&cfg).unwrap());
        assert_eq!(a, b);
        assert!(a.robust_bootstrap.is_some());
        // Negative linear imputations are rejected, never shifted.
        assert!(a.calibration_failures < a.completed);
        assert!(a.max_calibration_error.unwrap() < 1e-10);
    }

    #[test]
    fn single_replicate_runs() {
        let r = run_scenario(&scenario(Family::Normal, [10.0, 10.0, 10.0], 1)).unwrap();
        assert_eq!(r.completed, 1);
        assert!(r.re.is_finite());
    }

    #[test]
    fn frozen_population_shares_total() {
        let mut cfg = scenario(Family::Lognormal, [1.0, 0.2, 0.1], 5);
        cfg.freeze_population = true;
        let est = cfg.estimator().unwrap();
        let pop = gen_population(&cfg.population, cfg.seed, 0).unwrap();
        let frozen = (pop.clone(), pop.total().unwrap());
        let a = run_replicate(&cfg, &est, 0, Some(&frozen)).unwrap().unwrap();
        let b = run_replicate(&cfg, &est, 3, Some(&frozen)).unwrap().unwrap();
        assert_eq!(a.population_total, b.population_total);
        assert!(run_scenario(&cfg).is_ok());
    }

    #[test]
    fn config_errors_come_first() {
        let mut cfg = scenario(Family::Normal, [10.0, 10.0, 10.0], 0);
        assert!(matches!(run_scenario(&cfg), Err(Error::Config(_))));
        cfg.replicates = 1;
        cfg.n = 5000;
        assert!(matches!(run_scenario(&cfg), Err(Error::Config(_))));
        cfg.n = 10;
        cfg.imputation = vec![ImputationModelSpec::new(PredictorSet::parse(&["1", "v3"]).unwrap())];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.imputation.clear();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn parses_toml() {
        let text = r#"
            [[scenario]]
            name = "gamma-dr"
            n = 50
            replicates = 10
            seed = 9
            population = { size = 5000, distribution = "gamma", beta = [1.0, 0.2, 0.2] }
            calibration = { kind = "logit", lower = 0.2, upper = 5.0 }
            reference = { rb = 0.6, rb_star = -21.7, re = 68 }

            [[scenario.nonresponse]]
            predictors = ["1", "v1", "v2"]
            label = "misspecified"

            [[scenario.imputation]]
            predictors = ["1", "v1", "v1^2"]
            phi = "unit"
        "#;
        let cfg = ConfigFile::parse(text).unwrap();
        let s = &cfg.scenario[0];
        assert_eq!(s.population.variance(), 50.0);
        assert_eq!(s.nonresponse[0].label.as_deref(), Some("misspecified"));
        assert_eq!(s.imputation[0].phi, crate::models::Phi::Unit);
        assert!(ConfigFile::parse("[[scenario]]\nname = 1").is_err());
        assert!(ConfigFile::parse(&text.replace("n = 50", "n = 50\nbogus = 1")).is_err());
    }
}
