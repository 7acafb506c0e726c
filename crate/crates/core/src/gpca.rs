//! Global PCA baseline.
//!
//! The factor count comes from the eigenvalue-ratio statistic on the doubly
//! demeaned panel; the mean prediction is the rank-`r` principal-component
//! fit of the raw (not demeaned) panel.

use nalgebra::DMatrix;

use crate::data::{double_demean, DataMatrix};
use crate::error::{LpcaError, Result};
use crate::linalg::{apply_sign_convention, PcaBasis};

pub const DEFAULT_KMAX: usize = 8;

#[derive(Debug, Clone)]
pub struct GlobalFactorModel {
    pub r: usize,
    /// `p × r`, `(1/p) FᵀF = I`.
    pub factors: DMatrix<f64>,
    /// `n × r`.
    pub loadings: DMatrix<f64>,
    /// `factors · loadingsᵀ`.
    pub fitted: DMatrix<f64>,
    /// Eigenvalues of `(1/(pn)) X̃X̃ᵀ` for the demeaned panel `X̃`.
    pub demeaned_spectrum: Vec<f64>,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else if a > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// `argmax_{1≤k≤kmax} λ_k / λ_{k+1}`, first maximum wins.
///
/// Values must be non-negative and descending. A zero denominator under a
/// positive numerator counts as an infinite ratio.
pub fn eigenvalue_ratio_select(eigvals: &[f64], kmax: usize) -> Result<usize> {
    if kmax < 1 {
        return Err(LpcaError::Config("kmax must be at least 1".into()));
    }
    if kmax + 1 > eigvals.len() {
        return Err(LpcaError::Config(format!(
            "kmax = {kmax} needs {} eigenvalues, only {} available",
            kmax + 1,
            eigvals.len()
        )));
    }
    if eigvals.iter().any(|&v| !(v >= 0.0)) {
        return Err(LpcaError::Contract("eigenvalues must be non-negative".into()));
    }
    if eigvals.windows(2).any(|w| w[1] > w[0]) {
        return Err(LpcaError::Contract("eigenvalues must be descending".into()));
    }
    let mut best = 1;
    let mut best_ratio = ratio(eigvals[0], eigvals[1]);
    for k in 2..=kmax {
        let r = ratio(eigvals[k - 1], eigvals[k]);
        if r > best_ratio {
            best = k;
            best_ratio = r;
        }
    }
    Ok(best)
}

/// Zeroes eigenvalues indistinguishable from rounding noise.
fn clean_spectrum(spectrum: &[f64], dim: usize) -> Vec<f64> {
    let top = spectrum.first().copied().unwrap_or(0.0);
    let tol = top * f64::EPSILON * dim as f64 * 16.0;
    spectrum
        .iter()
        .map(|&v| if v <= tol { 0.0 } else { v })
        .collect()
}

pub fn gpca_fit(x: &DataMatrix, kmax: usize) -> Result<GlobalFactorModel> {
    let (p, n) = (x.p(), x.n());
    let demeaned = double_demean(x)?;
    let basis = PcaBasis::new(&demeaned)
        .ok_or_else(|| LpcaError::Numerical("eigensolver did not converge (demeaned panel)".into()))?;
    let demeaned_spectrum = clean_spectrum(&basis.spectrum, p.max(n));
    let r = eigenvalue_ratio_select(&demeaned_spectrum, kmax)?;

    let raw = x.values();
    let raw_basis = PcaBasis::new(raw)
        .ok_or_else(|| LpcaError::Numerical("eigensolver did not converge (raw panel)".into()))?;
    let mut factors = raw_basis.left_vectors(raw, r) * (p as f64).sqrt();
    let mut loadings = raw.tr_mul(&factors) / p as f64;
    apply_sign_convention(&mut factors, &mut loadings);
    let fitted = &factors * loadings.transpose();
    Ok(GlobalFactorModel {
        r,
        factors,
        loadings,
        fitted,
        demeaned_spectrum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ratio_examples() {
        let ev = [100.0, 50.0, 10.0, 1.0, 0.5];
        assert_eq!(eigenvalue_ratio_select(&ev, 4).unwrap(), 3);
        let scaled: Vec<f64> = ev.iter().map(|v| v * 37.5).collect();
        assert_eq!(eigenvalue_ratio_select(&scaled, 4).unwrap(), 3);
        let geometric = [16.0, 8.0, 4.0, 2.0, 1.0];
        assert_eq!(eigenvalue_ratio_select(&geometric, 4).unwrap(), 1);
        assert!(matches!(eigenvalue_ratio_select(&ev, 5), Err(LpcaError::Config(_))));
        assert!(eigenvalue_ratio_select(&[1.0, 2.0, 0.5], 2).is_err());
        assert_eq!(eigenvalue_ratio_select(&[5.0, 3.0, 0.0, 0.0], 3).unwrap(), 2);
    }

    fn rank_two(p: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = DMatrix::from_fn(p, 2, |_, _| rng.random_range(-2.0..2.0));
        let l = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-2.0..2.0));
        f * l.transpose()
    }

    #[test]
    fn noiseless_rank_two_recovered() {
        let x = DataMatrix::from_values(rank_two(30, 25, 4));
        let g = gpca_fit(&x, DEFAULT_KMAX).unwrap();
        assert_eq!(g.r, 2);
        assert!((&g.fitted - x.values()).amax() < 1e-8);
        let ftf = g.factors.tr_mul(&g.factors) / 30.0;
        assert!((ftf - DMatrix::identity(2, 2)).amax() < 1e-8);
        let again = gpca_fit(&x, DEFAULT_KMAX).unwrap();
        assert_eq!(g.fitted, again.fitted);
    }

    #[test]
    fn missing_entries_rejected() {
        let mut x = DataMatrix::from_values(rank_two(10, 10, 1));
        x.set_missing(0, 0);
        assert!(gpca_fit(&x, 3).is_err());
    }

    #[test]
    fn eckart_young_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = DMatrix::from_fn(15, 12, |_, _| rng.random_range(-0.3..0.3));
        let x = rank_two(15, 12, 2) + noise;
        let g = gpca_fit(&DataMatrix::from_values(x.clone()), 5).unwrap();
        let resid = (&x - &g.fitted).norm_squared();
        let sv = x.clone().svd(false, false).singular_values;
        let tail: f64 = sv.iter().skip(g.r).map(|s| s * s).sum();
        assert!((resid - tail).abs() < 1e-8 * (1.0 + tail));
    }
}
