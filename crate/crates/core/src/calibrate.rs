//! Calibrated imputation: adjust the nonrespondents' imputed values as little
//! as possible (under a pseudo-distance `G`) so that the imputed total hits a
//! target exactly.
//!
//! With `u_i = y_F,i / y*_i`, the problem
//! `min Σ q_i⁻¹ y*_i G(u_i)  s.t.  Σ_r w y + Σ_nr w y*_i u_i = target`
//! has the stationarity condition `g(u_i) = λ q_i w_i`, leaving a monotone
//! one-dimensional equation in `λ`.

use serde::{Deserialize, Serialize};

use crate::data::SurveyData;
use crate::error::{Error, Result};
use crate::mr_impute::ImputationResult;

pub const CALIBRATION_TOL: f64 = 1e-12;
pub const CALIBRATION_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distance {
    /// `G(u) = (u − 1)² / 2`.
    #[default]
    ChiSquare,
    /// Bounded logit distance, ratios confined to `(lower, upper)`.
    Logit { lower: f64, upper: f64 },
}

impl Distance {
    fn validate(self) -> Result<()> {
        match self {
            Distance::ChiSquare => Ok(()),
            Distance::Logit { lower, upper } => {
                if lower.is_finite() && upper.is_finite() && lower < 1.0 && 1.0 < upper {
                    Ok(())
                } else {
                    Err(Error::Spec(format!("logit bounds need lower < 1 < upper, got ({lower}, {upper})")))
                }
            }
        }
    }

    fn logit_scale(lower: f64, upper: f64) -> f64 {
        (upper - lower) / ((1.0 - lower) * (upper - 1.0))
    }

    /// `G(u)`; infinite outside the admissible range.
    pub fn value(self, u: f64) -> f64 {
        match self {
            Distance::ChiSquare => 0.5 * (u - 1.0).powi(2),
            Distance::Logit { lower, upper } => {
                if !(lower < u && u < upper) {
                    return f64::INFINITY;
                }
                let a = Self::logit_scale(lower, upper);
                ((u - lower) * ((u - lower) / (1.0 - lower)).ln() + (upper - u) * ((upper - u) / (upper - 1.0)).ln()) / a
            }
        }
    }

    /// `g⁻¹(x)` and its derivative.
    pub fn inverse(self, x: f64) -> (f64, f64) {
        match self {
            Distance::ChiSquare => (1.0 + x, 1.0),
            Distance::Logit { lower, upper } => {
                let a = Self::logit_scale(lower, upper);
                // Written in terms of e^{−Ax} when x > 0 so nothing overflows.
                let (num, den) = if x <= 0.0 {
                    let e = (a * x).exp();
                    (lower * (upper - 1.0) + upper * (1.0 - lower) * e, (upper - 1.0) + (1.0 - lower) * e)
                } else {
                    let e = (-a * x).exp();
                    (lower * (upper - 1.0) * e + upper * (1.0 - lower), (upper - 1.0) * e + (1.0 - lower))
                };
                let u = num / den;
                (u, a * (upper - u) * (u - lower) / (upper - lower))
            }
        }
    }

    /// Range of attainable ratios `u`.
    pub fn ratio_bounds(self) -> (f64, f64) {
        match self {
            Distance::ChiSquare => (f64::NEG_INFINITY, f64::INFINITY),
            Distance::Logit { lower, upper } => (lower, upper),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProblem {
    /// `y*_i` for the nonrespondents.
    pub preliminary: Vec<f64>,
    pub weights: Vec<f64>,
    pub q: Vec<f64>,
    /// `Σ_{S_r} w y`.
    pub respondent_total: f64,
    pub target: f64,
}

impl CalibrationProblem {
    /// `q = None` sets every `q_i = 1`.
    pub fn new(preliminary: Vec<f64>, weights: Vec<f64>, q: Option<Vec<f64>>, respondent_total: f64, target: f64) -> Result<Self> {
        let k = preliminary.len();
        let q = q.unwrap_or_else(|| vec![1.0; k]);
        if weights.len() != k || q.len() != k {
            return Err(Error::Input("preliminary values, weights and q differ in length".into()));
        }
        if let Some(j) = (0..k).find(|&j| !(q[j] > 0.0 && q[j].is_finite())) {
            return Err(Error::Input(format!("q must be positive (entry {j})")));
        }
        if let Some(j) = (0..k).find(|&j| !(weights[j] > 0.0 && weights[j].is_finite())) {
            return Err(Error::Input(format!("weights must be positive (entry {j})")));
        }
        if let Some(j) = (0..k).find(|&j| !(preliminary[j] > 0.0 && preliminary[j].is_finite())) {
            return Err(Error::DegenerateCalibration(format!(
                "imputed value {} at entry {j} is not positive; the distance is undefined there",
                preliminary[j]
            )));
        }
        if !(respondent_total.is_finite() && target.is_finite()) {
            return Err(Error::Input("totals must be finite".into()));
        }
        Ok(Self {
            preliminary,
            weights,
            q,
            respondent_total,
            target,
        })
    }

    /// Problem over the nonrespondents of an imputed dataset; `q = 1`.
    pub fn from_imputation(data: &SurveyData, fit: &ImputationResult, target: f64) -> Result<Self> {
        let mut respondent_total = 0.0;
        let (mut pre, mut w) = (Vec::new(), Vec::new());
        for i in 0..data.len() {
            if data.responded[i] {
                respondent_total += data.weights[i] * data.y_or_zero(i);
            } else {
                pre.push(fit.imputed[i].ok_or_else(|| Error::IncompleteData(format!("unit {} not imputed", data.ids[i])))?);
                w.push(data.weights[i]);
            }
        }
        Self::new(pre, w, None, respondent_total, target)
    }

    pub fn len(&self) -> usize {
        self.preliminary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preliminary.is_empty()
    }

    /// `Σ_r w y + Σ_nr w y` for candidate final values.
    pub fn total(&self, values: &[f64]) -> f64 {
        self.respondent_total + self.weights.iter().zip(values).map(|(w, y)| w * y).sum::<f64>()
    }

    /// `target − (current imputed total)`.
    pub fn adjustment(&self) -> f64 {
        self.target - self.total(&self.preliminary)
    }

    /// Rounding scale of the constraint: the magnitude of the summed terms.
    fn tolerance(&self) -> f64 {
        let base: f64 = self.weights.iter().zip(&self.preliminary).map(|(w, y)| (w * y).abs()).sum();
        CALIBRATION_TOL * (1.0 + self.target.abs() + self.respondent_total.abs() + base)
    }

    /// True when the constraint already holds to solver tolerance.
    pub fn is_calibrated(&self) -> bool {
        self.adjustment().abs() <= self.tolerance()
    }

    /// `Σ q⁻¹ y* G(y_F / y*)`.
    pub fn objective(&self, values: &[f64], distance: Distance) -> f64 {
        (0..self.len())
            .map(|j| self.preliminary[j] / self.q[j] * distance.value(values[j] / self.preliminary[j]))
            .sum()
    }

    fn empty_case(&self) -> Result<Vec<f64>> {
        if self.is_calibrated() {
            Ok(Vec::new())
        } else {
            Err(Error::Infeasible {
                target: self.target,
                lower: self.respondent_total,
                upper: self.respondent_total,
            })
        }
    }
}

/// Closed-form chi-square solution
/// `y_F,i = y*_i (1 + q_i w_i Δ / Σ w² q y*)`.
pub fn calibrate_chi_square(problem: &CalibrationProblem) -> Result<Vec<f64>> {
    if problem.is_empty() {
        return problem.empty_case();
    }
    if problem.is_calibrated() {
        return Ok(problem.preliminary.clone());
    }
    let denom: f64 = (0..problem.len())
        .map(|j| problem.weights[j].powi(2) * problem.q[j] * problem.preliminary[j])
        .sum();
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::DegenerateCalibration("Σ w² q y* is zero".into()));
    }
    let scale = problem.adjustment() / denom;
    Ok((0..problem.len())
        .map(|j| problem.preliminary[j] * (1.0 + problem.q[j] * problem.weights[j] * scale))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibrated {
    pub values: Vec<f64>,
    pub multiplier: f64,
    pub iterations: usize,
}

/// Solves the dual in `λ` by Newton steps safeguarded with bisection.
pub fn calibrate_general(problem: &CalibrationProblem, distance: Distance) -> Result<Calibrated> {
    distance.validate()?;
    if problem.is_empty() {
        return problem.empty_case().map(|values| Calibrated {
            values,
            multiplier: 0.0,
            iterations: 0,
        });
    }
    let need = problem.target - problem.respondent_total;
    let base: f64 = problem.weights.iter().zip(&problem.preliminary).map(|(w, y)| w * y).sum();
    let (lo_u, hi_u) = distance.ratio_bounds();
    if lo_u.is_finite() {
        let (lower, upper) = (problem.respondent_total + lo_u * base, problem.respondent_total + hi_u * base);
        if !(lower < problem.target && problem.target < upper) {
            return Err(Error::Infeasible {
                target: problem.target,
                lower,
                upper,
            });
        }
    }

    let c: Vec<f64> = (0..problem.len()).map(|j| problem.q[j] * problem.weights[j]).collect();
    let eval = |lambda: f64| -> (f64, f64) {
        let mut f = -need;
        let mut df = 0.0;
        for j in 0..problem.len() {
            let (u, du) = distance.inverse(lambda * c[j]);
            let wy = problem.weights[j] * problem.preliminary[j];
            f += wy * u;
            df += wy * c[j] * du;
        }
        (f, df)
    };
    let tol = problem.tolerance();

    let mut lambda = 0.0;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for it in 1..=CALIBRATION_MAX_ITER {
        let (f, df) = eval(lambda);
        if f.abs() <= tol {
            return Ok(finish(problem, distance, &c, lambda, it));
        }
        if f > 0.0 {
            hi = lambda;
        } else {
            lo = lambda;
        }
        let newton = lambda - f / df;
        lambda = if df > 0.0 && newton.is_finite() && newton > lo && newton < hi {
            newton
        } else if lo.is_finite() && hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            // Still bracketing: step outward geometrically.
            let step = (lambda.abs() + 1.0 / c.iter().cloned().fold(f64::MIN, f64::max)) * 2.0;
            if f > 0.0 {
                lambda - step
            } else {
                lambda + step
            }
        };
        if lo.is_finite() && hi.is_finite() && (hi - lo) <= f64::EPSILON * lambda.abs().max(f64::MIN_POSITIVE) {
            return Ok(finish(problem, distance, &c, lambda, it));
        }
    }
    Err(Error::Solver(format!(
        "calibration multiplier did not converge in {CALIBRATION_MAX_ITER} iterations"
    )))
}

fn finish(problem: &CalibrationProblem, distance: Distance, c: &[f64], lambda: f64, iterations: usize) -> Calibrated {
    Calibrated {
        values: (0..problem.len())
            .map(|j| problem.preliminary[j] * distance.inverse(lambda * c[j]).0)
            .collect(),
        multiplier: lambda,
        iterations,
    }
}

/// Chi-square uses the closed form; other distances the dual solver.
pub fn calibrate(problem: &CalibrationProblem, distance: Distance) -> Result<Vec<f64>> {
    match distance {
        Distance::ChiSquare => calibrate_chi_square(problem),
        _ => calibrate_general(problem, distance).map(|c| c.values),
    }
}
