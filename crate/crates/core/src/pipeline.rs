use crate::condbias::{est_cond_bias_mr, linearized_psi, robust_mr_total, CondBiasEstimate, LinearizedPsi};
use crate::data::SurveyData;
use crate::design::Design;
use crate::error::Result;
use crate::mr_impute::{ImputationResult, MrEstimator};

/// MR imputation of one sample together with its Taylor conditional bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub imputation: ImputationResult,
    pub psi: LinearizedPsi,
    pub cond_bias: CondBiasEstimate,
    /// `t̂_MR`
    pub total: f64,
    /// `t̂*_MR`
    pub robust_total: f64,
}

/// Imputes, totals, linearizes and robustifies in one pass.
pub fn estimate<D: Design>(data: &SurveyData, design: &D, estimator: &MrEstimator) -> Result<Estimate> {
    let imputation = estimator.fit(data)?;
    let psi = linearized_psi(data, &imputation)?;
    let cond_bias = est_cond_bias_mr(design, &data.ids, &psi.psi)?;
    let total = imputation.total;
    let robust_total = robust_mr_total(total, &cond_bias);
    Ok(Estimate {
        imputation,
        psi,
        cond_bias,
        total,
        robust_total,
    })
}
