//! Multiply robust imputation for item nonresponse in surveys, with a
//! conditional-bias measure of influence for the imputed total, the min–max
//! efficient total built from it, a pseudo-population bootstrap alternative,
//! calibrated imputation, and a Monte Carlo harness.
//!
//! The typical flow for one sample:
//!
//! ```
//! use mrimpute::prelude::*;
//!
//! # fn main() -> mrimpute::Result<()> {
//! let data = SurveyData::new(
//!     vec![0, 1, 2, 3, 4, 5],
//!     vec![10.0; 6],
//!     vec![true, true, false, true, true, false],
//!     vec![Some(1.0), Some(2.5), None, Some(4.0), Some(5.5), None],
//!     vec!["v1".into()],
//!     vec![vec![0.0], vec![1.0], vec![1.5], vec![2.0], vec![3.0], vec![3.5]],
//! )?;
//! let estimator = MrEstimator::new(
//!     Vec::new(),
//!     vec![ImputationModelSpec::new(PredictorSet::parse(&["1", "v1"])?)],
//! )?;
//! let design = SrsworDesign::new(60, 6)?;
//! let est = estimate(&data, &design, &estimator)?;
//! assert!(est.robust_total.is_finite());
//! # Ok(())
//! # }
//! ```

pub mod bootstrap;
pub mod calibrate;
pub mod condbias;
pub mod data;
pub mod design;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod models;
pub mod mr_impute;
pub mod pipeline;
pub mod rng;
pub mod simgen;

pub use error::{Error, Result};
pub use pipeline::{estimate, Estimate};

pub mod prelude {
    pub use crate::condbias::{est_cond_bias_mr, linearized_psi, robust_mr_total, CondBiasEstimate, LinearizedPsi};
    pub use crate::data::SurveyData;
    pub use crate::design::{draw_srswor, Design, FinitePopulation, Sample, SrsworDesign};
    pub use crate::models::{ImputationModelSpec, NonresponseModelSpec, Phi, PredictorSet};
    pub use crate::mr_impute::{ImputationResult, MrEstimator};
    pub use crate::pipeline::{estimate, Estimate};
    pub use crate::{Error, Result};
}
