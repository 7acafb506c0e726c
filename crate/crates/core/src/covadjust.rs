//! Covariate-adjusted local PCA for `x_i = W_i ϑ + η(α_i) + u_i`.
//!
//! With a three-way row split (R†, R‡, R≀):
//! 1. each regressor and the outcome are residualized by local PCA,
//!    matching on R† and fitting on R‡;
//! 2. `ϑ̂` solves the normal equations of the outcome residuals on the
//!    regressor residuals, pooled over units and R‡ rows;
//! 3. local PCA runs on `x_i - W_i ϑ̂`, matching on R‡ and fitting on R≀.
//!
//! The Gram matrix in step 2 is the `q × q` sum `Σ_i Σ_t ê_it ê_itᵀ` with
//! `ê_it ∈ R^q`; see `estimate_theta`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{DataMatrix, RowSplit};
use crate::error::{LpcaError, Result};
use crate::linalg::{sym_eigen_desc, symmetrize};
use crate::pipeline::{fit_lpca, LpcaFit, LpcaSettings};

/// Largest Gram condition number accepted when solving for `ϑ̂`.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Regressor panels, each shaped like the outcome.
#[derive(Debug, Clone)]
pub struct CovariatePanel {
    regressors: Vec<DMatrix<f64>>,
}

impl CovariatePanel {
    pub fn new(regressors: Vec<DMatrix<f64>>) -> Result<Self> {
        if let Some(first) = regressors.first() {
            if regressors.iter().any(|w| w.shape() != first.shape()) {
                return Err(LpcaError::Contract("regressors differ in shape".into()));
            }
        }
        Ok(Self { regressors })
    }

    pub fn q(&self) -> usize {
        self.regressors.len()
    }

    pub fn regressors(&self) -> &[DMatrix<f64>] {
        &self.regressors
    }

    /// `Σ_ℓ ϑ_ℓ W_ℓ`.
    pub fn combine(&self, theta: &[f64]) -> DMatrix<f64> {
        let (p, n) = self.regressors[0].shape();
        self.regressors
            .iter()
            .zip(theta)
            .fold(DMatrix::zeros(p, n), |acc, (w, &t)| acc + w * t)
    }
}

#[derive(Debug, Clone)]
pub struct ThetaEstimate {
    pub theta: DVector<f64>,
    /// `Σ_i Σ_t ê_it ê_itᵀ`.
    pub gram: DMatrix<f64>,
}

/// Local-PCA residuals of `m` on `pca_rows`, matching on `match_rows`.
pub fn residualize(
    m: &DMatrix<f64>,
    match_rows: &[usize],
    pca_rows: &[usize],
    settings: &LpcaSettings,
) -> Result<DMatrix<f64>> {
    let fit = fit_lpca(m, match_rows, pca_rows, settings)?;
    Ok(fit.residuals(m))
}

/// `ϑ̂ = G⁻¹ Σ_i Σ_t ê_it û_it`, `G = Σ_i Σ_t ê_it ê_itᵀ`.
///
/// The Gram is summed over features as well as units, so each `(t, i)`
/// cell contributes one observation to the pooled regression.
pub fn estimate_theta(e_hats: &[DMatrix<f64>], u_hat: &DMatrix<f64>) -> Result<ThetaEstimate> {
    let q = e_hats.len();
    if q == 0 {
        return Err(LpcaError::Config("no regressors; use plain local PCA".into()));
    }
    if e_hats.iter().any(|e| e.shape() != u_hat.shape()) {
        return Err(LpcaError::Contract("residual matrices differ in shape".into()));
    }
    let mut gram = DMatrix::zeros(q, q);
    let mut rhs = DVector::zeros(q);
    for a in 0..q {
        rhs[a] = e_hats[a].dot(u_hat);
        for b in a..q {
            let v = e_hats[a].dot(&e_hats[b]);
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    let eig = sym_eigen_desc(symmetrize(gram.clone()))
        .ok_or_else(|| LpcaError::Numerical("eigensolver did not converge on the Gram".into()))?;
    let (hi, lo) = (eig.values[0], eig.values[q - 1]);
    if !(lo > 0.0) || hi / lo > MAX_GRAM_CONDITION {
        return Err(LpcaError::Numerical(format!(
            "covariates too collinear with factor structure (Gram eigenvalues {hi:e} .. {lo:e})"
        )));
    }
    let theta = gram
        .clone()
        .cholesky()
        .ok_or_else(|| LpcaError::Numerical("Gram is not positive definite".into()))?
        .solve(&rhs);
    Ok(ThetaEstimate { theta, gram })
}

/// Output of the covariate-adjusted estimator.
#[derive(Debug, Clone)]
pub struct CovAdjustFit {
    pub theta: ThetaEstimate,
    /// Final pass: matched on R‡, fitted on R≀.
    pub fit: LpcaFit,
}

/// Runs the full covariate-adjusted procedure on `x`.
pub fn covadjusted_lpca(
    x: &DataMatrix,
    w: &CovariatePanel,
    split: &RowSplit,
    settings: &LpcaSettings,
) -> Result<CovAdjustFit> {
    if w.q() == 0 {
        return Err(LpcaError::Config("no regressors; use plain local PCA".into()));
    }
    if w.regressors()[0].shape() != x.values().shape() {
        return Err(LpcaError::Contract(format!(
            "regressors are {:?} but the outcome is {:?}",
            w.regressors()[0].shape(),
            x.values().shape()
        )));
    }
    let wr = split
        .wr()
        .ok_or_else(|| LpcaError::Config("covariate adjustment needs a three-way split".into()))?;
    let (r1, r2) = (split.dagger(), split.ddagger());

    let e_hats: Vec<DMatrix<f64>> = w
        .regressors()
        .par_iter()
        .enumerate()
        .map(|(l, wl)| {
            residualize(wl, r1, r2, settings)
                .map_err(LpcaError::in_step(format!("residualize regressor {}", l + 1)))
        })
        .collect::<Result<_>>()?;
    let u_hat = residualize(x.values(), r1, r2, settings)
        .map_err(LpcaError::in_step("residualize outcome"))?;
    let theta = estimate_theta(&e_hats, &u_hat).map_err(LpcaError::in_step("estimate slope"))?;

    let adjusted = x.values() - w.combine(theta.theta.as_slice());
    let fit = fit_lpca(&adjusted, r2, wr, settings)
        .map_err(LpcaError::in_step("fit adjusted outcome"))?;
    Ok(CovAdjustFit { theta, fit })
}
