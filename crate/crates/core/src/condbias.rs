//! Conditional bias of the MR imputed total and the min–max efficient total.
//!
//! `t̂_MR` is a function of the sample through the weights and through five
//! layers of estimating equations: `α^(j)`, `β^(ℓ)`, `η_p`, `η_m` and `τ`.
//! The linearized variable is
//!
//! ```text
//! ψ_k = y_k − (1 − r_k/p̂_k)(y_k − h_kᵀτ̂)
//!       + Σ_j A_α^(j)·s_α^(j)(k) + Σ_ℓ A_β^(ℓ)·s_β^(ℓ)(k)
//!       + A_p·s_p(k) + A_m·s_m(k) + A_τ·s_τ(k)
//! ```
//!
//! where each `s(k)` is unit k's contribution to an estimating equation
//! (divided by `w_k`) and each `A` is the sensitivity of `t̂_MR` to a unit
//! perturbation of that equation, evaluated at the fitted parameters. The
//! `A` blocks are accumulated downstream-to-upstream (`τ`, then `η`, then
//! the model parameters), so every indirect path through later equations is
//! included. With all blocks evaluated at the estimates, `Σ_S w_k ψ̂_k`
//! reproduces `t̂_MR`.

use nalgebra::{DMatrix, DVector};

use crate::data::SurveyData;
use crate::design::{est_cond_bias_all, Design, Extremes};
use crate::error::{Error, Result};
use crate::linalg::{self, dot};
use crate::models::{FittedModelSuite, Phi};
use crate::mr_impute::{ImputationResult, NO_MODEL_P_HAT};

/// Estimated linearized variable and the sensitivity blocks behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedPsi {
    /// `ψ̂_k` per sample unit, aligned with the data rows.
    pub psi: Vec<f64>,
    /// `A_α^(j)`, one vector per nonresponse model (length = its predictor count).
    pub a_alpha: Vec<Vec<f64>>,
    /// `A_β^(ℓ)`, one vector per imputation model.
    pub a_beta: Vec<Vec<f64>>,
    /// `A_p` (length J; empty when J = 0).
    pub a_p: Vec<f64>,
    /// `A_m` (length L).
    pub a_m: Vec<f64>,
    /// `A_τ` (length 2).
    pub a_tau: Vec<f64>,
}

impl LinearizedPsi {
    fn complete_data(data: &SurveyData) -> Self {
        Self {
            psi: (0..data.len()).map(|i| data.y_or_zero(i)).collect(),
            a_alpha: Vec::new(),
            a_beta: Vec::new(),
            a_p: Vec::new(),
            a_m: Vec::new(),
            a_tau: Vec::new(),
        }
    }
}

/// Jacobian of `η ↦ η² / (ηᵀη)`; entry `(j, k)` is `∂c_j/∂η_k`.
fn compression_jacobian(eta: &[f64]) -> DMatrix<f64> {
    let s: f64 = eta.iter().map(|e| e * e).sum();
    DMatrix::from_fn(eta.len(), eta.len(), |j, k| {
        let diag = if j == k { 2.0 * eta[j] / s } else { 0.0 };
        diag - 2.0 * eta[j] * eta[j] * eta[k] / (s * s)
    })
}

/// `(Σ_i c_i x_i x_iᵀ)^{-1} g`, named for error reporting. All blocks solved
/// here are symmetric, so the row-vector solve `Aᵀ K = gᵀ` is `K A = g`.
fn sensitivity(rows: impl IntoIterator<Item = (f64, Vec<f64>)>, dim: usize, g: &[f64], block: &str) -> Result<Vec<f64>> {
    let rows: Vec<(f64, Vec<f64>)> = rows.into_iter().collect();
    let k = linalg::weighted_gram(rows.iter().map(|(c, x)| (*c, x.as_slice())), dim);
    Ok(linalg::solve_transposed(&k, &DVector::from_column_slice(g), block)?
        .iter()
        .copied()
        .collect())
}

/// Estimated linearized variable `ψ̂_k` for every unit of `data`.
pub fn linearized_psi(data: &SurveyData, fit: &ImputationResult) -> Result<LinearizedPsi> {
    let (suite, tau) = match (&fit.suite, fit.tau) {
        (Some(s), Some(t)) => (s, t),
        _ => return Ok(LinearizedPsi::complete_data(data)),
    };
    psi_from_suite(data, suite, tau)
}

fn psi_from_suite(data: &SurveyData, suite: &FittedModelSuite, tau: [f64; 2]) -> Result<LinearizedPsi> {
    let n = data.len();
    let w = &data.weights;
    let r: Vec<f64> = data.responded.iter().map(|&b| f64::from(b as u8)).collect();
    let y: Vec<f64> = (0..n).map(|i| data.y_or_zero(i)).collect();
    let m_hat = suite.m_hat();
    let p_hat: Vec<f64> = suite.p_hat().map_or_else(|| vec![NO_MODEL_P_HAT; n], <[f64]>::to_vec);
    let h: Vec<[f64; 2]> = m_hat.iter().map(|&m| [1.0, m]).collect();
    // Residual of the τ regression; only used for respondents.
    let e: Vec<f64> = (0..n).map(|i| y[i] - tau[0] - tau[1] * m_hat[i]).collect();

    // τ equation: U_τ = Σ w r (1/p̂ − 1)(y − hᵀτ) h, ∂U_τ/∂τ = −G_τ.
    let dt_dtau: Vec<f64> = (0..2)
        .map(|a| (0..n).map(|i| w[i] * (1.0 - r[i] / p_hat[i]) * h[i][a]).sum())
        .collect();
    let a_tau = sensitivity(
        (0..n).map(|i| (w[i] * r[i] * (1.0 / p_hat[i] - 1.0), h[i].to_vec())),
        2,
        &dt_dtau,
        "E(∂U_τ/∂τ)",
    )?;

    // Total sensitivities of t̂ (including the τ path) to p̂_i and m̂_i.
    let a_tau_h: Vec<f64> = h.iter().map(|hi| a_tau[0] * hi[0] + a_tau[1] * hi[1]).collect();
    let p_bar: Vec<f64> = (0..n)
        .map(|i| -w[i] * r[i] * e[i] / (p_hat[i] * p_hat[i]) * (1.0 + a_tau_h[i]))
        .collect();
    let m_bar: Vec<f64> = (0..n)
        .map(|i| {
            w[i] * (1.0 - r[i] / p_hat[i]) * tau[1]
                + w[i] * r[i] * (1.0 / p_hat[i] - 1.0) * (a_tau[1] * e[i] - a_tau_h[i] * tau[1])
        })
        .collect();

    // Response side: η_p then α^(j).
    let mut a_p = Vec::new();
    let mut a_alpha = Vec::new();
    let mut corr_alpha = vec![0.0; n];
    let mut corr_p = vec![0.0; n];
    if let Some(resp) = &suite.response {
        let j_models = suite.nonresponse.len();
        let eta = &resp.compression.eta;
        let c = &resp.compression.weights;
        let jac = compression_jacobian(eta);
        let u_p: Vec<Vec<f64>> = (0..n).map(|i| suite.u_p(i)).collect();
        // Clamped scores do not move with the parameters.
        let p_bar_eff: Vec<f64> = (0..n).map(|i| if resp.clamped[i] { 0.0 } else { p_bar[i] }).collect();

        let g_eta: Vec<f64> = (0..j_models)
            .map(|k| (0..n).map(|i| p_bar_eff[i] * (0..j_models).map(|j| u_p[i][j] * jac[(j, k)]).sum::<f64>()).sum())
            .collect();
        a_p = sensitivity(
            (0..n).map(|i| (w[i], u_p[i].clone())),
            j_models,
            &g_eta,
            "E(∂U_p/∂η_p)",
        )?;
        let res_p: Vec<f64> = (0..n).map(|i| r[i] - dot(&u_p[i], eta)).collect();
        for i in 0..n {
            corr_p[i] = res_p[i] * dot(&a_p, &u_p[i]);
        }

        for (j, model) in suite.nonresponse.iter().enumerate() {
            let dim = model.alpha.len();
            let d: Vec<f64> = model.fitted.iter().map(|p| p * (1.0 - p)).collect();
            let mut g = vec![0.0; dim];
            for i in 0..n {
                // through p̂_i = Σ_j c_j U_pij, and through the η_p equation.
                let coef = p_bar_eff[i] * c[j] * d[i]
                    + w[i] * d[i] * (a_p[j] * res_p[i] - dot(&a_p, &u_p[i]) * eta[j]);
                for (ga, xa) in g.iter_mut().zip(&model.x[i]) {
                    *ga += coef * xa;
                }
            }
            let phi: Vec<f64> = w.iter().map(|&wi| model.spec.phi.value(wi)).collect();
            let a = sensitivity(
                (0..n).map(|i| (phi[i] * d[i], model.x[i].clone())),
                dim,
                &g,
                &format!("E(∂S_α/∂α) of nonresponse model {}", j + 1),
            )?;
            for i in 0..n {
                corr_alpha[i] += phi_ratio(model.spec.phi, w[i]) * (r[i] - model.fitted[i]) * dot(&a, &model.x[i]);
            }
            a_alpha.push(a);
        }
    }

    // Mean side: η_m then β^(ℓ).
    let l_models = suite.imputation.len();
    let eta_m = &suite.mean.eta;
    let c_m = &suite.mean.weights;
    let jac_m = compression_jacobian(eta_m);
    let u_m: Vec<Vec<f64>> = (0..n).map(|i| suite.u_m(i)).collect();
    let g_eta_m: Vec<f64> = (0..l_models)
        .map(|k| (0..n).map(|i| m_bar[i] * (0..l_models).map(|l| u_m[i][l] * jac_m[(l, k)]).sum::<f64>()).sum())
        .collect();
    let a_m = sensitivity(
        (0..n).map(|i| (w[i] * r[i], u_m[i].clone())),
        l_models,
        &g_eta_m,
        "E(∂U_m/∂η_m)",
    )?;
    let res_m: Vec<f64> = (0..n).map(|i| r[i] * (y[i] - dot(&u_m[i], eta_m))).collect();

    let mut a_beta = Vec::with_capacity(l_models);
    let mut corr_beta = vec![0.0; n];
    for (l, model) in suite.imputation.iter().enumerate() {
        let dim = model.beta.len();
        let mut g = vec![0.0; dim];
        for i in 0..n {
            let coef = m_bar[i] * c_m[l] + w[i] * (a_m[l] * res_m[i] - r[i] * dot(&a_m, &u_m[i]) * eta_m[l]);
            for (ga, xa) in g.iter_mut().zip(&model.x[i]) {
                *ga += coef * xa;
            }
        }
        let phi: Vec<f64> = w.iter().map(|&wi| model.spec.phi.value(wi)).collect();
        let a = sensitivity(
            (0..n).map(|i| (phi[i] * r[i], model.x[i].clone())),
            dim,
            &g,
            &format!("E(∂S_β/∂β) of imputation model {}", l + 1),
        )?;
        for i in 0..n {
            corr_beta[i] += phi_ratio(model.spec.phi, w[i]) * r[i] * (y[i] - model.fitted[i]) * dot(&a, &model.x[i]);
        }
        a_beta.push(a);
    }

    let psi = (0..n)
        .map(|k| {
            let fitted = tau[0] + tau[1] * m_hat[k];
            let base = r[k] * y[k] / p_hat[k] + (1.0 - r[k] / p_hat[k]) * fitted;
            let corr_tau = r[k] * (1.0 / p_hat[k] - 1.0) * e[k] * a_tau_h[k];
            let corr_m = res_m[k] * dot(&a_m, &u_m[k]);
            base + corr_alpha[k] + corr_beta[k] + corr_p[k] + corr_m + corr_tau
        })
        .collect();

    Ok(LinearizedPsi {
        psi,
        a_alpha,
        a_beta,
        a_p,
        a_m,
        a_tau,
    })
}

/// `φ_k / w_k`: the model score enters `Σ_S w_k ψ_k` with weight `φ_k`.
fn phi_ratio(phi: Phi, w: f64) -> f64 {
    phi.value(w) / w
}

/// Closed-form linearized variable of single-model linear regression
/// imputation with weights `w`:
/// `ψ̂_k = y_k + (r_k â_k − 1)(y_k − v_kᵀβ̂_r)`,
/// `â_k = 1 + (t̂_v,HT − t̂_v_r)ᵀ T̂_r⁻¹ v_k`.
///
/// `x` holds the predictor rows (including the intercept column if any).
pub fn single_model_psi(data: &SurveyData, x: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = data.len();
    let dim = x.first().map_or(0, Vec::len);
    let mut t_r = DMatrix::zeros(dim, dim);
    let mut xy = DVector::zeros(dim);
    let mut t_v = DVector::zeros(dim);
    let mut t_vr = DVector::zeros(dim);
    for i in 0..n {
        let xi = DVector::from_column_slice(&x[i]);
        t_v += data.weights[i] * &xi;
        if data.responded[i] {
            t_vr += data.weights[i] * &xi;
            t_r += data.weights[i] * &xi * xi.transpose();
            xy += data.weights[i] * data.y_or_zero(i) * &xi;
        }
    }
    let chol = t_r
        .clone()
        .cholesky()
        .filter(|_| linalg::rank(&t_r) == dim)
        .ok_or_else(|| Error::singular("T̂_r"))?;
    let beta = chol.solve(&xy);
    let lever = chol.solve(&(t_v - t_vr));
    Ok((0..n)
        .map(|k| {
            let xk = DVector::from_column_slice(&x[k]);
            let resid = data.y_or_zero(k) - xk.dot(&beta);
            let a = 1.0 + lever.dot(&xk);
            let r = f64::from(data.responded[k] as u8);
            data.y_or_zero(k) * r + (1.0 - r) * xk.dot(&beta) + r * (a - 1.0) * resid
        })
        .collect())
}

/// Estimated conditional biases `B̂_1i^(MR)` with their extremes.
#[derive(Debug, Clone, PartialEq)]
pub struct CondBiasEstimate {
    /// Aligned with the data rows.
    pub values: Vec<f64>,
    pub extremes: Extremes,
}

impl CondBiasEstimate {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let extremes = Extremes::of(&values).ok_or_else(|| Error::IncompleteData("empty sample".into()))?;
        Ok(Self { values, extremes })
    }
}

/// `B̂_1i^(MR) = Σ_{k∈S} Δ_ik / (π_ik π_k) ψ̂_k` for each member `i`.
pub fn est_cond_bias_mr<D: Design>(design: &D, ids: &[usize], psi: &[f64]) -> Result<CondBiasEstimate> {
    if ids.len() != psi.len() {
        return Err(Error::IncompleteData("one ψ̂ value per member required".into()));
    }
    CondBiasEstimate::from_values(est_cond_bias_all(design, ids, psi))
}

/// `t̂*_MR = t̂_MR − (B̂_min + B̂_max)/2`.
pub fn robust_mr_total(t_mr: f64, cond_bias: &CondBiasEstimate) -> f64 {
    t_mr - cond_bias.extremes.midpoint()
}
