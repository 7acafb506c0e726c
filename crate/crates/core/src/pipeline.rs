//! End-to-end local PCA: match on one block of rows, fit on another.

use std::str::FromStr;

use nalgebra::DMatrix;

use crate::distance::{pairwise_distances, DistanceKind};
use crate::error::{LpcaError, Result};
use crate::localpca::{fit_all, reconstruct, FactorCountRule, LocalFactorModel};
use crate::matching::{match_all, NeighborSet};

/// Neighborhood size, either absolute or `round(c · n^{2/3})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KChoice {
    Absolute(usize),
    Scaled(f64),
}

impl KChoice {
    pub fn resolve(&self, n: usize) -> Result<usize> {
        let k = match *self {
            KChoice::Absolute(k) => k,
            KChoice::Scaled(c) => {
                if !(c > 0.0) || !c.is_finite() {
                    return Err(LpcaError::Config(format!("K constant must be positive, got {c}")));
                }
                scaled_k(c, n)
            }
        };
        if k < 1 || k > n {
            return Err(LpcaError::Config(format!(
                "K = {k} outside 1..={n}"
            )));
        }
        Ok(k)
    }
}

/// `round(c · n^{2/3})`.
pub fn scaled_k(c: f64, n: usize) -> usize {
    (c * (n as f64).powf(2.0 / 3.0)).round() as usize
}

impl FromStr for KChoice {
    type Err = LpcaError;

    /// `54` or `c:1.0`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || LpcaError::Config(format!("bad K '{s}'"));
        match s.strip_prefix("c:") {
            Some(c) => Ok(KChoice::Scaled(c.parse().map_err(|_| bad())?)),
            None => Ok(KChoice::Absolute(s.parse().map_err(|_| bad())?)),
        }
    }
}

impl std::fmt::Display for KChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KChoice::Absolute(k) => write!(f, "{k}"),
            KChoice::Scaled(c) => write!(f, "c:{c}"),
        }
    }
}

/// Estimator settings shared by every local-PCA based pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcaSettings {
    pub k: usize,
    pub distance: DistanceKind,
    pub rule: FactorCountRule,
}

/// Everything one local-PCA pass produces.
#[derive(Debug, Clone)]
pub struct LpcaFit {
    /// Rows of the input that were fitted, in output order.
    pub pca_rows: Vec<usize>,
    pub distances: DMatrix<f64>,
    pub neighbors: Vec<NeighborSet>,
    pub models: Vec<LocalFactorModel>,
    /// `|pca_rows| × n` reconstruction of the mean.
    pub fitted: DMatrix<f64>,
}

impl LpcaFit {
    /// Observed minus fitted on the PCA rows.
    pub fn residuals(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x.select_rows(self.pca_rows.iter()) - &self.fitted
    }
}

/// Matches units on `match_rows` of `x` and runs local PCA on `pca_rows`.
pub fn fit_lpca(
    x: &DMatrix<f64>,
    match_rows: &[usize],
    pca_rows: &[usize],
    settings: &LpcaSettings,
) -> Result<LpcaFit> {
    let p = x.nrows();
    if let Some(&l) = match_rows.iter().chain(pca_rows).find(|&&l| l >= p) {
        return Err(LpcaError::Config(format!("row {} outside 1..={p}", l + 1)));
    }
    if match_rows.is_empty() || pca_rows.is_empty() {
        return Err(LpcaError::Config("matching and PCA rows must be non-empty".into()));
    }
    let x_match = x.select_rows(match_rows.iter());
    let x_pca = x.select_rows(pca_rows.iter());
    let distances = pairwise_distances(&x_match, &settings.distance)?;
    let neighbors = match_all(&distances, settings.k)?;
    let models = fit_all(&x_pca, &neighbors, &settings.rule)?;
    let fitted = reconstruct(&models, &neighbors)?;
    Ok(LpcaFit {
        pca_rows: pca_rows.to_vec(),
        distances,
        neighbors,
        models,
        fitted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_k_values() {
        assert_eq!(scaled_k(1.0, 400), 54);
        assert_eq!(scaled_k(1.0, 200), 34);
        assert_eq!(scaled_k(1.0, 50), 14);
        assert_eq!(KChoice::Scaled(0.5).resolve(1000).unwrap(), 50);
        assert!(KChoice::Absolute(11).resolve(10).is_err());
        assert!(KChoice::Scaled(-1.0).resolve(10).is_err());
    }

    #[test]
    fn k_choice_parses() {
        assert_eq!("c:1.5".parse::<KChoice>().unwrap(), KChoice::Scaled(1.5));
        assert_eq!("14".parse::<KChoice>().unwrap(), KChoice::Absolute(14));
        assert!("c:x".parse::<KChoice>().is_err());
    }

    #[test]
    fn noiseless_rank_one_panel_recovered() {
        let (p, n) = (10, 10);
        let f: Vec<f64> = (0..p).map(|l| 0.5 + 0.1 * l as f64).collect();
        let a: Vec<f64> = (0..n).map(|i| 0.05 + 0.09 * i as f64).collect();
        let h = DMatrix::from_fn(p, n, |l, i| f[l] * a[i]);
        let settings = LpcaSettings {
            k: 5,
            distance: DistanceKind::EuclideanSq,
            rule: FactorCountRule::Fixed(1),
        };
        let fit = fit_lpca(&h, &[0, 1, 2, 3, 4], &[5, 6, 7, 8, 9], &settings).unwrap();
        let target = h.select_rows([5, 6, 7, 8, 9].iter());
        assert!((&fit.fitted - &target).amax() < 1e-10);
        assert!(fit.residuals(&h).amax() < 1e-10);
    }
}
