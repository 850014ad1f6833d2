//! Multiply robust imputed values `y*_i = h_iᵀτ̂`, `h_i = (1, m̂_i)`, and the
//! imputed total.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::SurveyData;
use crate::error::{Error, Result};
use crate::linalg;
use crate::models::{self, FittedModelSuite, ImputationModelSpec, NonresponseModelSpec};

/// Stand-in response score when no nonresponse model is specified. Any
/// constant gives the same τ̂; 1/2 makes the regression weights `w_i`.
pub const NO_MODEL_P_HAT: f64 = 0.5;

/// Regression weights `w_i (1/p̂_i − 1)` for respondents, 0 otherwise.
pub fn regression_weights(data: &SurveyData, suite: &FittedModelSuite) -> Vec<f64> {
    (0..data.len())
        .map(|i| {
            if !data.responded[i] {
                return 0.0;
            }
            let p = suite.p_hat().map_or(NO_MODEL_P_HAT, |p| p[i]);
            data.weights[i] * (1.0 / p - 1.0)
        })
        .collect()
}

/// Solves the 2×2 weighted normal equations for τ̂.
pub fn compute_tau(data: &SurveyData, suite: &FittedModelSuite) -> Result<[f64; 2]> {
    if data.respondent_count() < 2 {
        return Err(Error::singular("τ normal equations (fewer than two respondents)"));
    }
    let c = regression_weights(data, suite);
    let m = suite.m_hat();
    let mut g = DMatrix::zeros(2, 2);
    let mut rhs = DVector::zeros(2);
    for i in 0..data.len() {
        if c[i] == 0.0 {
            continue;
        }
        let h = [1.0, m[i]];
        let y = data.y_or_zero(i);
        for a in 0..2 {
            rhs[a] += c[i] * h[a] * y;
            for b in 0..2 {
                g[(a, b)] += c[i] * h[a] * h[b];
            }
        }
    }
    let tau = linalg::solve(&g, &rhs, "τ normal equations")?;
    Ok([tau[0], tau[1]])
}

/// Imputed values for nonrespondents (`None` for respondents).
pub fn impute(data: &SurveyData, tau: [f64; 2], suite: &FittedModelSuite) -> Vec<Option<f64>> {
    let m = suite.m_hat();
    (0..data.len())
        .map(|i| (!data.responded[i]).then(|| tau[0] + tau[1] * m[i]))
        .collect()
}

/// `Σ_{S_r} w y + Σ_{S_nr} w y*`.
pub fn mr_total(data: &SurveyData, imputed: &[Option<f64>]) -> Result<f64> {
    (0..data.len()).try_fold(0.0, |acc, i| {
        let v = if data.responded[i] {
            data.y[i]
        } else {
            imputed[i]
        };
        v.map(|v| acc + data.weights[i] * v)
            .ok_or_else(|| Error::IncompleteData(format!("unit {} was not imputed", data.ids[i])))
    })
}

/// The J nonresponse and L imputation working models of an MR imputation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrEstimator {
    #[serde(default)]
    pub nonresponse: Vec<NonresponseModelSpec>,
    pub imputation: Vec<ImputationModelSpec>,
}

/// Everything produced by one MR imputation of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationResult {
    /// `None` under full response: nothing is fitted.
    pub suite: Option<FittedModelSuite>,
    pub tau: Option<[f64; 2]>,
    /// `Some(y*)` for nonrespondents.
    pub imputed: Vec<Option<f64>>,
    pub total: f64,
}

impl ImputationResult {
    /// Observed value for respondents, imputed value otherwise.
    pub fn completed(&self, data: &SurveyData) -> Vec<f64> {
        (0..data.len())
            .map(|i| data.y[i].or(self.imputed[i]).unwrap_or(f64::NAN))
            .collect()
    }
}

impl MrEstimator {
    pub fn new(nonresponse: Vec<NonresponseModelSpec>, imputation: Vec<ImputationModelSpec>) -> Result<Self> {
        if imputation.is_empty() {
            return Err(Error::Spec("at least one imputation model is required".into()));
        }
        Ok(Self {
            nonresponse,
            imputation,
        })
    }

    /// Reads `[[nonresponse]]` / `[[imputation]]` tables.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::new(m.nonresponse, m.imputation).map_err(|e| Error::Config(e.to_string()))
    }

    /// Fits the models, imputes and totals. Under full response nothing is
    /// fitted and the total is the HT estimate.
    pub fn fit(&self, data: &SurveyData) -> Result<ImputationResult> {
        if data.full_response() {
            let total = data
                .weights
                .iter()
                .enumerate()
                .map(|(i, w)| w * data.y_or_zero(i))
                .sum();
            return Ok(ImputationResult {
                suite: None,
                tau: None,
                imputed: vec![None; data.len()],
                total,
            });
        }
        let suite = models::fit_suite(&self.nonresponse, &self.imputation, data)?;
        let tau = compute_tau(data, &suite)?;
        let imputed = impute(data, tau, &suite);
        let total = mr_total(data, &imputed)?;
        Ok(ImputationResult {
            suite: Some(suite),
            tau: Some(tau),
            imputed,
            total,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Compressed, FittedImputation, PredictorSet};
    use crate::rng::seeded;
    use rand::Rng;

    fn data(w: Vec<f64>, r: Vec<bool>, y: Vec<f64>, v1: Vec<f64>) -> SurveyData {
        let n = w.len();
        SurveyData::new(
            (0..n).collect(),
            w,
            r,
            y.into_iter().map(Some).collect(),
            vec!["v1".into()],
            v1.into_iter().map(|v| vec![v]).collect(),
        )
        .unwrap()
    }

    fn suite_with_m(m: Vec<f64>, p: Option<Vec<f64>>) -> FittedModelSuite {
        FittedModelSuite {
            nonresponse: Vec::new(),
            imputation: vec![FittedImputation {
                spec: ImputationModelSpec::new(PredictorSet::parse(&["1"]).unwrap()),
                x: Vec::new(),
                beta: Vec::new(),
                fitted: m.clone(),
            }],
            response: p.map(|p| models::ResponseScore {
                compression: Compressed {
                    eta: vec![1.0],
                    weights: vec![1.0],
                    score: p.clone(),
                },
                clamped: vec![false; p.len()],
                p_hat: p,
            }),
            mean: Compressed {
                eta: vec![1.0],
                weights: vec![1.0],
                score: m,
            },
        }
    }

    #[test]
    fn constant_score_is_singular() {
        let d = data(vec![1.0; 4], vec![true, true, true, false], vec![1.0, 2.0, 3.0, 0.0], vec![0.0; 4]);
        let s = suite_with_m(vec![2.0; 4], None);
        assert!(matches!(compute_tau(&d, &s), Err(Error::Singular { .. })));
    }

    #[test]
    fn exact_relation_recovers_tau() {
        let m = vec![0.5, 1.5, 2.0, 4.0, 3.0];
        let y: Vec<f64> = m.iter().map(|v| 3.0 - 2.0 * v).collect();
        let d = data(vec![2.0; 5], vec![true, true, true, true, false], y, vec![0.0; 5]);
        let s = suite_with_m(m, Some(vec![0.3, 0.9, 0.6, 0.45, 0.5]));
        let tau = compute_tau(&d, &s).unwrap();
        assert!((tau[0] - 3.0).abs() < 1e-12 && (tau[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn tau_matches_weighted_least_squares_oracle() {
        let mut rng = seeded(3);
        let n = 40;
        let m: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let y: Vec<f64> = m.iter().map(|v| 1.0 + 0.7 * v + rng.random_range(-1.0..1.0)).collect();
        let r: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.7).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..0.95)).collect();
        let d = data(vec![7.0; n], r.clone(), y.clone(), vec![0.0; n]);
        let s = suite_with_m(m.clone(), Some(p.clone()));
        let tau = compute_tau(&d, &s).unwrap();

        // QR on the square-root-weighted design.
        let rows: Vec<usize> = (0..n).filter(|&i| r[i]).collect();
        let sw: Vec<f64> = rows.iter().map(|&i| (7.0 * (1.0 / p[i] - 1.0)).sqrt()).collect();
        let x = DMatrix::from_fn(rows.len(), 2, |a, b| sw[a] * if b == 0 { 1.0 } else { m[rows[a]] });
        let z = DVector::from_fn(rows.len(), |a, _| sw[a] * y[rows[a]]);
        let qr = x.qr();
        let qtz = qr.q().transpose() * z;
        let oracle = qr.r().solve_upper_triangular(&qtz).unwrap();
        for k in 0..2 {
            assert!((tau[k] - oracle[k]).abs() <= 1e-10 * (1.0 + oracle[k].abs()));
        }
    }

    #[test]
    fn imputation_is_linear_in_score() {
        let d = data(vec![1.0; 3], vec![true, false, false], vec![1.0, 0.0, 0.0], vec![0.0; 3]);
        let s = suite_with_m(vec![1.0, 2.5, -4.0], None);
        let y = impute(&d, [0.0, 1.0], &s);
        assert_eq!(y, vec![None, Some(2.5), Some(-4.0)]);
        let full = data(vec![1.0; 2], vec![true, true], vec![1.0, 2.0], vec![0.0; 2]);
        assert!(impute(&full, [1.0, 1.0], &suite_with_m(vec![0.0, 1.0], None)).iter().all(Option::is_none));
    }

    #[test]
    fn full_response_total_is_ht() {
        let d = data(vec![3.0; 4], vec![true; 4], vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 1.0, 2.0, 3.0]);
        let est = MrEstimator::new(
            vec![NonresponseModelSpec::new(PredictorSet::parse(&["1", "v1"]).unwrap())],
            vec![ImputationModelSpec::new(PredictorSet::parse(&["1", "v1"]).unwrap())],
        )
        .unwrap();
        let fit = est.fit(&d).unwrap();
        assert_eq!(fit.total, 30.0);
        assert!(fit.suite.is_none());
    }

    #[test]
    fn single_model_reduces_to_regression_imputation() {
        let mut rng = seeded(21);
        let n = 80;
        let v1: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        let y: Vec<f64> = v1.iter().map(|v| 2.0 + v * v + rng.random_range(-3.0..3.0)).collect();
        let r: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.7).collect();
        let d = data(vec![50.0; n], r.clone(), y, v1);
        let spec = ImputationModelSpec::new(PredictorSet::parse(&["1", "v1", "v1^2"]).unwrap());
        let est = MrEstimator::new(Vec::new(), vec![spec.clone()]).unwrap();
        let fit = est.fit(&d).unwrap();
        let (x, beta) = models::fit_imputation(&spec, &d, "m").unwrap();
        let tau = fit.tau.unwrap();
        assert!(tau[0].abs() < 1e-9 && (tau[1] - 1.0).abs() < 1e-9);
        for i in (0..n).filter(|&i| !r[i]) {
            let pred: f64 = x[i].iter().zip(&beta).map(|(a, b)| a * b).sum();
            let got = fit.imputed[i].unwrap();
            assert!((got - pred).abs() <= 1e-9 * (1.0 + pred.abs()));
        }
    }

    #[test]
    fn weighted_residuals_are_orthogonal() {
        let mut rng = seeded(8);
        let n = 100;
        let v1: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        let v2: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0)).collect();
        let y: Vec<f64> = v1.iter().map(|v| 10.0 + 10.0 * v + 10.0 * v * v + rng.random_range(-20.0..20.0)).collect();
        let r: Vec<bool> = v1
            .iter()
            .map(|&v| rng.random::<f64>() < models::logistic(1.5 - 1.5 * v + 0.4 * v * v))
            .collect();
        let d = SurveyData::new(
            (0..n).collect(),
            vec![50.0; n],
            r,
            y.into_iter().map(Some).collect(),
            vec!["v1".into(), "v2".into()],
            v1.iter().zip(&v2).map(|(a, b)| vec![*a, *b]).collect(),
        )
        .unwrap();
        let est = MrEstimator::new(
            vec![NonresponseModelSpec::new(PredictorSet::parse(&["1", "v1", "v2"]).unwrap())],
            vec![
                ImputationModelSpec::new(PredictorSet::parse(&["1", "v1", "v1^2"]).unwrap()),
                ImputationModelSpec::new(PredictorSet::parse(&["1", "v1", "v2"]).unwrap()),
            ],
        )
        .unwrap();
        let fit = est.fit(&d).unwrap();
        let suite = fit.suite.as_ref().unwrap();
        let tau = fit.tau.unwrap();
        let c = regression_weights(&d, suite);
        let (mut g0, mut g1, mut scale) = (0.0, 0.0, 0.0);
        for i in 0..n {
            if d.responded[i] {
                let m = suite.m_hat()[i];
                let e = d.y_or_zero(i) - tau[0] - tau[1] * m;
                g0 += c[i] * e;
                g1 += c[i] * m * e;
                scale += (c[i] * m * d.y_or_zero(i)).abs();
            }
        }
        assert!(g0.abs() <= 1e-8 * scale && g1.abs() <= 1e-8 * scale);
        let expected: f64 = (0..n).map(|i| 50.0 * d.y[i].or(fit.imputed[i]).unwrap()).sum();
        assert!((fit.total - expected).abs() <= 1e-9 * expected.abs());
    }
}
