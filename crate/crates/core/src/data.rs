use crate::design::{FinitePopulation, Sample};
use crate::error::{Error, Result};

/// Unit-level data of a realized sample: everything the estimators see.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyData {
    pub ids: Vec<usize>,
    pub weights: Vec<f64>,
    pub responded: Vec<bool>,
    /// `Some` for respondents; nonrespondent values are never read.
    pub y: Vec<Option<f64>>,
    pub covariate_names: Vec<String>,
    /// One row of predictors per unit, columns named by `covariate_names`.
    pub covariates: Vec<Vec<f64>>,
}

impl SurveyData {
    pub fn new(
        ids: Vec<usize>,
        weights: Vec<f64>,
        responded: Vec<bool>,
        y: Vec<Option<f64>>,
        covariate_names: Vec<String>,
        covariates: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = ids.len();
        if weights.len() != n || responded.len() != n || y.len() != n || covariates.len() != n {
            return Err(Error::Input("column lengths differ".into()));
        }
        for i in 0..n {
            if !(weights[i].is_finite() && weights[i] > 0.0) {
                return Err(Error::Input(format!("unit {} has a non-positive weight", ids[i])));
            }
            if responded[i] && !y[i].is_some_and(f64::is_finite) {
                return Err(Error::Input(format!("respondent {} has no y", ids[i])));
            }
            if covariates[i].len() != covariate_names.len() {
                return Err(Error::Input(format!("unit {} has the wrong number of predictors", ids[i])));
            }
        }
        let y = y
            .into_iter()
            .zip(&responded)
            .map(|(y, &r)| if r { y } else { None })
            .collect();
        Ok(Self {
            ids,
            weights,
            responded,
            y,
            covariate_names,
            covariates,
        })
    }

    /// Sample data from a population, with per-member response indicators.
    pub fn from_sample(pop: &FinitePopulation, sample: &Sample, responded: &[bool]) -> Result<Self> {
        if responded.len() != sample.len() {
            return Err(Error::Input("one response indicator per member required".into()));
        }
        let units: Vec<_> = sample.members.iter().map(|&i| &pop.units[i]).collect();
        Self::new(
            sample.members.clone(),
            sample.weights.clone(),
            responded.to_vec(),
            units.iter().zip(responded).map(|(u, &r)| if r { u.y } else { None }).collect(),
            pop.covariate_names.clone(),
            units.iter().map(|u| u.v.clone()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn respondent_count(&self) -> usize {
        self.responded.iter().filter(|&&r| r).count()
    }

    pub fn full_response(&self) -> bool {
        self.responded.iter().all(|&r| r)
    }

    /// Observed y for a respondent; 0 for nonrespondents (only ever multiplied by r = 0).
    pub fn y_or_zero(&self, i: usize) -> f64 {
        self.y[i].unwrap_or(0.0)
    }

    /// Same data with different weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Self {
        Self {
            weights,
            ..self.clone()
        }
    }
}
