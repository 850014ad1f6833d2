//! Working models: the nonresponse (logistic) and imputation (linear) model
//! classes, their estimating equations, and the compression of their fitted
//! values into the two standardized scores `p̂` and `m̂`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::SurveyData;
use crate::error::{Error, Result};
use crate::linalg::{self, dot, max_abs};

/// One predictor: the intercept or a power of a named column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Intercept,
    Power { column: String, exponent: u32 },
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "1" {
            return Ok(Term::Intercept);
        }
        let (column, exponent) = match s.split_once('^') {
            Some((c, e)) => {
                let e: u32 = e
                    .trim()
                    .parse()
                    .map_err(|_| Error::Spec(format!("bad exponent in predictor '{s}'")))?;
                (c.trim(), e)
            }
            None => (s, 1),
        };
        if column.is_empty() || exponent == 0 {
            return Err(Error::Spec(format!("bad predictor '{s}'")));
        }
        Ok(Term::Power {
            column: column.to_string(),
            exponent,
        })
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => write!(f, "1"),
            Term::Power { column, exponent: 1 } => write!(f, "{column}"),
            Term::Power { column, exponent } => write!(f, "{column}^{exponent}"),
        }
    }
}

/// Ordered list of predictors, written as e.g. `["1", "v1", "v1^2"]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct PredictorSet {
    terms: Vec<Term>,
}

impl PredictorSet {
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Spec("empty predictor set".into()));
        }
        Ok(Self { terms })
    }

    pub fn parse<S: AsRef<str>>(items: &[S]) -> Result<Self> {
        Self::new(items.iter().map(|s| s.as_ref().parse()).collect::<Result<_>>()?)
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Column names referenced by the set.
    pub fn columns(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().filter_map(|t| match t {
            Term::Intercept => None,
            Term::Power { column, .. } => Some(column.as_str()),
        })
    }

    /// Design matrix rows for every unit of `data`.
    pub fn design_rows(&self, data: &SurveyData) -> Result<Vec<Vec<f64>>> {
        let resolved: Vec<Option<(usize, u32)>> = self
            .terms
            .iter()
            .map(|t| match t {
                Term::Intercept => Ok(None),
                Term::Power { column, exponent } => data
                    .covariate_names
                    .iter()
                    .position(|c| c == column)
                    .map(|c| Some((c, *exponent)))
                    .ok_or_else(|| Error::Spec(format!("unknown predictor column '{column}'"))),
            })
            .collect::<Result<_>>()?;
        Ok(data
            .covariates
            .iter()
            .map(|v| {
                resolved
                    .iter()
                    .map(|r| match r {
                        None => 1.0,
                        Some((c, e)) => v[*c].powi(*e as i32),
                    })
                    .collect()
            })
            .collect())
    }
}

impl TryFrom<Vec<String>> for PredictorSet {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::parse(&v)
    }
}

impl From<PredictorSet> for Vec<String> {
    fn from(p: PredictorSet) -> Self {
        p.terms.iter().map(ToString::to_string).collect()
    }
}

/// Per-unit coefficient `φ_i` in the model estimating equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phi {
    Unit,
    #[default]
    DesignWeight,
}

impl Phi {
    pub fn value(self, w: f64) -> f64 {
        match self {
            Phi::Unit => 1.0,
            Phi::DesignWeight => w,
        }
    }
}

/// A logistic nonresponse model `p(v, α) = 1 / (1 + exp(−xᵀα))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonresponseModelSpec {
    pub predictors: PredictorSet,
    #[serde(default)]
    pub phi: Phi,
    /// Bookkeeping only.
    #[serde(default)]
    pub label: Option<String>,
}

/// A linear imputation model `m(v, β) = xᵀβ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationModelSpec {
    pub predictors: PredictorSet,
    #[serde(default)]
    pub phi: Phi,
    #[serde(default)]
    pub label: Option<String>,
}

impl NonresponseModelSpec {
    pub fn new(predictors: PredictorSet) -> Self {
        Self {
            predictors,
            phi: Phi::default(),
            label: None,
        }
    }
}

impl ImputationModelSpec {
    pub fn new(predictors: PredictorSet) -> Self {
        Self {
            predictors,
            phi: Phi::default(),
            label: None,
        }
    }
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub const LOGISTIC_TOL: f64 = 1e-10;
pub const LOGISTIC_MAX_ITER: usize = 50;
const MAX_HALVINGS: usize = 40;
/// Fitted probabilities this close to 0 or 1 signal separation.
const SEPARATION_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub alpha: Vec<f64>,
    pub iterations: usize,
    /// Score max-norm after each iteration, starting from the initial point.
    pub trace: Vec<f64>,
}

/// Weighted logistic score `Σ φ_i (r_i − p_i) x_i`.
///
/// For the logit link `∂p/∂α = p(1 − p) x`, so the `p(1 − p)` denominator of
/// the general estimating equation cancels.
pub fn logistic_score(x: &[Vec<f64>], r: &[bool], phi: &[f64], alpha: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; alpha.len()];
    for ((xi, &ri), &c) in x.iter().zip(r).zip(phi) {
        let p = logistic(dot(xi, alpha));
        let res = c * (f64::from(ri as u8) - p);
        for (sa, xa) in s.iter_mut().zip(xi) {
            *sa += res * xa;
        }
    }
    s
}

/// Solves `Σ φ_i (r_i − p(x_i, α)) x_i = 0` by damped Newton–Raphson from α = 0.
pub fn fit_logistic(x: &[Vec<f64>], r: &[bool], phi: &[f64], name: &str) -> Result<LogisticFit> {
    let dim = x.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(Error::Spec(format!("{name}: no predictors")));
    }
    if r.iter().all(|&v| v) || r.iter().all(|&v| !v) {
        return Err(Error::Separation { model: name.into() });
    }
    let block = format!("{name} information matrix");
    let gram = linalg::weighted_gram(phi.iter().copied().zip(x.iter().map(Vec::as_slice)), dim);
    if linalg::rank(&gram) < dim {
        return Err(Error::singular(format!("{name} design matrix")));
    }

    let scale = 1.0
        + max_abs(
            &(0..dim)
                .map(|a| x.iter().zip(phi).map(|(xi, c)| c * xi[a]).sum::<f64>())
                .collect::<Vec<_>>(),
        );
    let tol = LOGISTIC_TOL * scale;

    let mut alpha = vec![0.0; dim];
    let mut score = logistic_score(x, r, phi, &alpha);
    let mut norm = max_abs(&score);
    let mut trace = vec![norm];
    for iter in 1..=LOGISTIC_MAX_ITER {
        let info = linalg::weighted_gram(
            x.iter().zip(phi).map(|(xi, &c)| {
                let p = logistic(dot(xi, &alpha));
                (c * p * (1.0 - p), xi.as_slice())
            }),
            dim,
        );
        let step = linalg::solve(&info, &DVector::from_column_slice(&score), &block)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = alpha.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let cand_score = logistic_score(x, r, phi, &cand);
            let cand_norm = max_abs(&cand_score);
            if cand_norm.is_finite() && cand_norm < norm {
                alpha = cand;
                score = cand_score;
                norm = cand_norm;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        trace.push(norm);
        if norm <= tol {
            let separated = x.iter().any(|xi| {
                let p = logistic(dot(xi, &alpha));
                !(SEPARATION_EPS..=1.0 - SEPARATION_EPS).contains(&p)
            });
            if separated {
                return Err(Error::Separation { model: name.into() });
            }
            return Ok(LogisticFit {
                alpha,
                iterations: iter,
                trace,
            });
        }
        if !accepted {
            break;
        }
    }
    Err(Error::NonConvergence {
        model: name.into(),
        iterations: trace.len() - 1,
        trace,
    })
}

/// Weighted least squares `β = (Σ c x xᵀ)⁻¹ Σ c x y` over the rows with `c > 0`.
pub fn fit_wls(x: &[Vec<f64>], y: &[f64], c: &[f64], name: &str) -> Result<Vec<f64>> {
    let dim = x.first().map_or(0, Vec::len);
    let used = c.iter().filter(|&&ci| ci > 0.0).count();
    if dim == 0 || used < dim {
        return Err(Error::singular(format!("{name} normal equations")));
    }
    let gram = linalg::weighted_gram(c.iter().copied().zip(x.iter().map(Vec::as_slice)), dim);
    let mut rhs = DVector::zeros(dim);
    for ((xi, &yi), &ci) in x.iter().zip(y).zip(c) {
        if ci != 0.0 {
            for a in 0..dim {
                rhs[a] += ci * xi[a] * yi;
            }
        }
    }
    Ok(linalg::solve(&gram, &rhs, &format!("{name} normal equations"))?
        .iter()
        .copied()
        .collect())
}

/// Per-unit `φ` coefficients for a spec.
fn phis(phi: Phi, data: &SurveyData) -> Vec<f64> {
    data.weights.iter().map(|&w| phi.value(w)).collect()
}

pub fn fit_nonresponse(spec: &NonresponseModelSpec, data: &SurveyData, name: &str) -> Result<(Vec<Vec<f64>>, LogisticFit)> {
    let x = spec.predictors.design_rows(data)?;
    let fit = fit_logistic(&x, &data.responded, &phis(spec.phi, data), name)?;
    Ok((x, fit))
}

pub fn fit_imputation(spec: &ImputationModelSpec, data: &SurveyData, name: &str) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let x = spec.predictors.design_rows(data)?;
    let c: Vec<f64> = data
        .weights
        .iter()
        .zip(&data.responded)
        .map(|(&w, &r)| if r { spec.phi.value(w) } else { 0.0 })
        .collect();
    let y: Vec<f64> = (0..data.len()).map(|i| data.y_or_zero(i)).collect();
    let beta = fit_wls(&x, &y, &c, name)?;
    Ok((x, beta))
}

/// Bounds applied to the compressed response score before it is inverted.
pub const P_HAT_BOUNDS: (f64, f64) = (0.005, 0.995);

/// Compression weights `η² / (ηᵀη)`.
pub fn compression_weights(eta: &[f64]) -> Result<Vec<f64>> {
    let ss: f64 = eta.iter().map(|e| e * e).sum();
    if !(ss > 0.0 && ss.is_finite()) {
        return Err(Error::DegenerateCompression("ηᵀη is zero".into()));
    }
    Ok(eta.iter().map(|e| e * e / ss).collect())
}

/// Weighted regression of `target` on the rows of `scores`, restricted to `include`.
fn regress_scores(scores: &[Vec<f64>], target: &[f64], c: &[f64], block: &str) -> Result<Vec<f64>> {
    fit_wls(scores, target, c, block).map_err(|e| match e {
        Error::Singular { .. } => Error::singular(block),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Compressed {
    pub eta: Vec<f64>,
    pub weights: Vec<f64>,
    pub score: Vec<f64>,
}

/// Compresses `Û_p` (one row of J fitted probabilities per unit) into `p̂`.
/// Returns the unclamped scores.
pub fn compress_response_scores(u_p: &[Vec<f64>], data: &SurveyData) -> Result<Compressed> {
    let r: Vec<f64> = data.responded.iter().map(|&r| f64::from(r as u8)).collect();
    let eta = regress_scores(u_p, &r, &data.weights, "response-score Gram matrix")?;
    let weights = compression_weights(&eta)?;
    let score = u_p.iter().map(|u| dot(u, &weights)).collect();
    Ok(Compressed { eta, weights, score })
}

/// Compresses `Û_m` (one row of L fitted means per unit) into `m̂`, regressing
/// y on the scores over respondents.
pub fn compress_mean_scores(u_m: &[Vec<f64>], data: &SurveyData) -> Result<Compressed> {
    let c: Vec<f64> = data
        .weights
        .iter()
        .zip(&data.responded)
        .map(|(&w, &r)| if r { w } else { 0.0 })
        .collect();
    let y: Vec<f64> = (0..data.len()).map(|i| data.y_or_zero(i)).collect();
    let eta = regress_scores(u_m, &y, &c, "mean-score Gram matrix")?;
    let weights = compression_weights(&eta)?;
    let score = u_m.iter().map(|u| dot(u, &weights)).collect();
    Ok(Compressed { eta, weights, score })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedNonresponse {
    pub spec: NonresponseModelSpec,
    pub x: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    /// Fitted `p^(j)(v_i, α̂)` per unit.
    pub fitted: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedImputation {
    pub spec: ImputationModelSpec,
    pub x: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    /// Fitted `m^(ℓ)(v_i, β̂)` per unit.
    pub fitted: Vec<f64>,
}

/// Fitted nonresponse side: compression plus clamped `p̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseScore {
    pub compression: Compressed,
    /// `p̂_i` after clamping to `P_HAT_BOUNDS`.
    pub p_hat: Vec<f64>,
    pub clamped: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModelSuite {
    pub nonresponse: Vec<FittedNonresponse>,
    pub imputation: Vec<FittedImputation>,
    /// `None` when no nonresponse model is used (J = 0).
    pub response: Option<ResponseScore>,
    pub mean: Compressed,
}

impl FittedModelSuite {
    /// `Û_pi` for unit i.
    pub fn u_p(&self, i: usize) -> Vec<f64> {
        self.nonresponse.iter().map(|m| m.fitted[i]).collect()
    }

    /// `Û_mi` for unit i.
    pub fn u_m(&self, i: usize) -> Vec<f64> {
        self.imputation.iter().map(|m| m.fitted[i]).collect()
    }

    pub fn m_hat(&self) -> &[f64] {
        &self.mean.score
    }

    pub fn p_hat(&self) -> Option<&[f64]> {
        self.response.as_ref().map(|r| r.p_hat.as_slice())
    }

    pub fn clamp_count(&self) -> usize {
        self.response
            .as_ref()
            .map_or(0, |r| r.clamped.iter().filter(|&&c| c).count())
    }
}

/// Fits all J + L working models and compresses them into `p̂`, `m̂`.
pub fn fit_suite(
    nonresponse: &[NonresponseModelSpec],
    imputation: &[ImputationModelSpec],
    data: &SurveyData,
) -> Result<FittedModelSuite> {
    if imputation.is_empty() {
        return Err(Error::Spec("at least one imputation model is required".into()));
    }
    let fitted_nr = nonresponse
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let (x, fit) = fit_nonresponse(spec, data, &format!("nonresponse model {}", j + 1))?;
            let fitted = x.iter().map(|xi| logistic(dot(xi, &fit.alpha))).collect();
            Ok(FittedNonresponse {
                spec: spec.clone(),
                x,
                alpha: fit.alpha,
                fitted,
                iterations: fit.iterations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fitted_imp = imputation
        .iter()
        .enumerate()
        .map(|(l, spec)| {
            let (x, beta) = fit_imputation(spec, data, &format!("imputation model {}", l + 1))?;
            let fitted = x.iter().map(|xi| dot(xi, &beta)).collect();
            Ok(FittedImputation {
                spec: spec.clone(),
                x,
                beta,
                fitted,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut suite = FittedModelSuite {
        nonresponse: fitted_nr,
        imputation: fitted_imp,
        response: None,
        mean: Compressed {
            eta: Vec::new(),
            weights: Vec::new(),
            score: Vec::new(),
        },
    };
    let u_m: Vec<Vec<f64>> = (0..data.len()).map(|i| suite.u_m(i)).collect();
    suite.mean = compress_mean_scores(&u_m, data)?;
    if !suite.nonresponse.is_empty() {
        let u_p: Vec<Vec<f64>> = (0..data.len()).map(|i| suite.u_p(i)).collect();
        let compression = compress_response_scores(&u_p, data)?;
        let (lo, hi) = P_HAT_BOUNDS;
        let clamped: Vec<bool> = compression.score.iter().map(|&p| !(lo..=hi).contains(&p)).collect();
        let p_hat = compression.score.iter().map(|&p| p.clamp(lo, hi)).collect();
        suite.response = Some(ResponseScore {
            compression,
            p_hat,
            clamped,
        });
    }
    Ok(suite)
}
