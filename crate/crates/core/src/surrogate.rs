//! Weighted least-squares surrogate over candidate features: fit on the
//! labeled coreset, rank everything, pick what to verify, and score how well
//! the ranking found the true front-runners.
//!
//! The fit solves the weighted normal system with a tiny trace-scaled ridge
//! (same policy as the design solver, smaller constant) so rank-deficient
//! coresets still produce a defined model while full-rank interpolation stays
//! exact to well below 1e-9.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::cholesky_ridged;

const RIDGE_SCALE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("no training rows")]
    Empty,
    #[error("rows/weights/labels/uids lengths disagree: {detail}")]
    LengthMismatch { detail: String },
    #[error("all training weights are zero")]
    AllWeightsZero,
    #[error("negative weight at row {row}")]
    NegativeWeight { row: usize },
    #[error("non-finite label at row {row}")]
    NonFiniteLabel { row: usize },
    #[error("feature vector has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("information matrix is singular even after ridging")]
    Singular,
    #[error("no true cost recorded for uid {uid}")]
    MissingLabel { uid: u64 },
}

/// Fitted linear model. `theta` matches the column count of the matrix it
/// was fit on — callers that want an intercept append the constant column
/// via [`augment_intercept`] before both the design solve and the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub theta: Vec<f64>,
    /// Uids of the rows that actually carried weight in the fit.
    pub training_uids: Vec<u64>,
    /// Max |predicted - label| over the weighted training rows.
    pub fit_residual_max: f64,
    pub ridge: f64,
}

/// How the verification budget treats candidates already in the coreset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerificationRule {
    /// Walk down the surrogate order skipping coreset members until exactly
    /// `verify_k` new candidates are collected (constant evaluation budget).
    #[default]
    ExactBudget,
    /// Top-`verify_k` predictions minus coreset members; may return fewer.
    TopKMinusCoreset,
}

/// How well the surrogate surfaced the true best candidates, in the style of
/// rank-recovery tables: which of the true top-k ranks appear in the
/// surrogate top-k (`pred_at_k`) and in the evaluated union (`eval_at_k`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub surrogate_order: Vec<u64>,
    pub verify_k: usize,
    /// True ranks (1-based) from the top-k found in the surrogate top-k.
    pub pred_at_k: Vec<usize>,
    /// True ranks (1-based) from the top-k found in coreset ∪ verification set.
    pub eval_at_k: Vec<usize>,
}

/// Appends a constant-1 column, giving the linear model an intercept.
pub fn augment_intercept(features: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = (features.nrows(), features.ncols());
    DMatrix::from_fn(n, d + 1, |r, c| if c == d { 1.0 } else { features[(r, c)] })
}

/// θ̂ = argmin Σ_i w_i (φ_iᵀθ − y_i)². Zero-weight rows are ignored entirely
/// (they appear in neither `training_uids` nor the residual).
pub fn fit_wls(
    features: &DMatrix<f64>,
    weights: &[f64],
    labels: &[f64],
    uids: &[u64],
) -> Result<SurrogateModel, SurrogateError> {
    let (n, d) = (features.nrows(), features.ncols());
    if n == 0 || d == 0 {
        return Err(SurrogateError::Empty);
    }
    if weights.len() != n || labels.len() != n || uids.len() != n {
        return Err(SurrogateError::LengthMismatch {
            detail: format!(
                "{n} rows, {} weights, {} labels, {} uids",
                weights.len(),
                labels.len(),
                uids.len()
            ),
        });
    }
    for (row, &w) in weights.iter().enumerate() {
        if !(w.is_finite() && w >= 0.0) {
            return Err(SurrogateError::NegativeWeight { row });
        }
    }
    for (row, &y) in labels.iter().enumerate() {
        if !y.is_finite() {
            return Err(SurrogateError::NonFiniteLabel { row });
        }
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(SurrogateError::AllWeightsZero);
    }

    // Weighted normal system XᵀWX θ = XᵀWy via the √w row scaling.
    let mut xw = features.clone();
    let mut yw = DVector::zeros(n);
    for i in 0..n {
        let s = weights[i].sqrt();
        xw.row_mut(i).scale_mut(s);
        yw[i] = s * s * labels[i];
    }
    let a = xw.transpose() * &xw;
    let b = features.transpose() * yw;
    let ridge = RIDGE_SCALE * a.diagonal().sum() / d as f64;
    let chol = cholesky_ridged(&a, ridge).map_err(|_| SurrogateError::Singular)?;
    let theta = chol.solve(&b);

    let mut fit_residual_max = 0.0f64;
    let mut training_uids = Vec::new();
    for i in 0..n {
        if weights[i] > 0.0 {
            training_uids.push(uids[i]);
            let pred = features.row(i).transpose().dot(&theta);
            fit_residual_max = fit_residual_max.max((pred - labels[i]).abs());
        }
    }
    Ok(SurrogateModel { theta: theta.iter().cloned().collect(), training_uids, fit_residual_max, ridge })
}

/// Inner product φᵀθ̂.
pub fn predict(model: &SurrogateModel, features: &[f64]) -> Result<f64, SurrogateError> {
    if features.len() != model.theta.len() {
        return Err(SurrogateError::DimensionMismatch {
            expected: model.theta.len(),
            got: features.len(),
        });
    }
    Ok(model.theta.iter().zip(features).map(|(t, f)| t * f).sum())
}

/// Uids sorted by predicted cost ascending; ties broken toward lower uid,
/// so the order is independent of input permutation.
pub fn rank_candidates(
    model: &SurrogateModel,
    features: &DMatrix<f64>,
    uids: &[u64],
) -> Result<Vec<u64>, SurrogateError> {
    if uids.len() != features.nrows() {
        return Err(SurrogateError::LengthMismatch {
            detail: format!("{} rows, {} uids", features.nrows(), uids.len()),
        });
    }
    let mut scored: Vec<(f64, u64)> = Vec::with_capacity(uids.len());
    for (i, &uid) in uids.iter().enumerate() {
        let row: Vec<f64> = features.row(i).iter().cloned().collect();
        scored.push((predict(model, &row)?, uid));
    }
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().map(|(_, uid)| uid).collect())
}

/// Which candidates to send for expensive verification.
pub fn verification_set(
    surrogate_order: &[u64],
    coreset: &[u64],
    verify_k: usize,
    rule: VerificationRule,
) -> Vec<u64> {
    match rule {
        VerificationRule::ExactBudget => surrogate_order
            .iter()
            .filter(|uid| !coreset.contains(uid))
            .take(verify_k)
            .cloned()
            .collect(),
        VerificationRule::TopKMinusCoreset => surrogate_order
            .iter()
            .take(verify_k)
            .filter(|uid| !coreset.contains(uid))
            .cloned()
            .collect(),
    }
}

/// Diagnostic-mode rank recovery; requires a true cost for every ranked uid
/// (ties in true cost break toward lower uid, matching the ranking rule).
pub fn rank_diagnostics(
    true_costs: &[(u64, f64)],
    surrogate_order: &[u64],
    coreset: &[u64],
    verify_k: usize,
    rule: VerificationRule,
) -> Result<RankReport, SurrogateError> {
    let mut truth: Vec<(u64, f64)> = Vec::with_capacity(surrogate_order.len());
    for &uid in surrogate_order {
        let cost = true_costs
            .iter()
            .find(|(u, _)| *u == uid)
            .map(|(_, c)| *c)
            .ok_or(SurrogateError::MissingLabel { uid })?;
        truth.push((uid, cost));
    }
    truth.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));

    let k = verify_k.min(truth.len());
    let true_top: Vec<u64> = truth.iter().take(k).map(|(u, _)| *u).collect();
    let surrogate_top: Vec<u64> = surrogate_order.iter().take(k).cloned().collect();
    let verified = verification_set(surrogate_order, coreset, verify_k, rule);

    let mut pred_at_k = Vec::new();
    let mut eval_at_k = Vec::new();
    for (rank0, uid) in true_top.iter().enumerate() {
        if surrogate_top.contains(uid) {
            pred_at_k.push(rank0 + 1);
        }
        if coreset.contains(uid) || verified.contains(uid) {
            eval_at_k.push(rank0 + 1);
        }
    }
    Ok(RankReport {
        surrogate_order: surrogate_order.to_vec(),
        verify_k,
        pred_at_k,
        eval_at_k,
    })
}
