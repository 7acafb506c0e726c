//! Distances between units, computed on the matching rows.
//!
//! All distances are scaled by `1/p` where `p` is the number of matching
//! rows. The Euclidean variant is the squared form; it induces the same
//! neighbor ranking as the root form `‖v_i - v_j‖ / √p`.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::{load_csv, CsvOptions};
use crate::error::{LpcaError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DistanceKind {
    EuclideanSq,
    /// Largest inner-product discrepancy against any third unit.
    PseudoMax,
    /// Absolute difference of feature averages.
    Average,
    /// Euclidean distance after rescaling coordinates by `√w`.
    Weighted(Vec<f64>),
}

impl DistanceKind {
    /// Parses `euclidean`, `pseudo-max`, `average` or `weighted:<csv>`;
    /// the weights file is read as a flat list of non-negative numbers.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "euclidean" => Ok(DistanceKind::EuclideanSq),
            "pseudo-max" => Ok(DistanceKind::PseudoMax),
            "average" => Ok(DistanceKind::Average),
            other => match other.strip_prefix("weighted:") {
                Some(path) => Self::weighted_from_file(path),
                None => Err(LpcaError::Config(format!("unknown distance '{other}'"))),
            },
        }
    }

    fn weighted_from_file(path: impl AsRef<Path>) -> Result<Self> {
        let table = load_csv(path, &CsvOptions::default())?;
        if !table.is_complete() {
            return Err(LpcaError::Parse("weights file has missing entries".into()));
        }
        // Row-major flattening, so both a single row and a single column work.
        let w = table.values().transpose().as_slice().to_vec();
        let kind = DistanceKind::Weighted(w);
        kind.validate(None)?;
        Ok(kind)
    }

    pub fn name(&self) -> &'static str {
        match self {
            DistanceKind::EuclideanSq => "euclidean",
            DistanceKind::PseudoMax => "pseudo-max",
            DistanceKind::Average => "average",
            DistanceKind::Weighted(_) => "weighted",
        }
    }

    fn validate(&self, p_match: Option<usize>) -> Result<()> {
        if let DistanceKind::Weighted(w) = self {
            if let Some(p) = p_match {
                if w.len() != p {
                    return Err(LpcaError::Config(format!(
                        "{} weights supplied for {p} matching rows",
                        w.len()
                    )));
                }
            }
            if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(LpcaError::Config("weights must be finite and non-negative".into()));
            }
            if w.iter().all(|&v| v == 0.0) {
                return Err(LpcaError::Config("weights are all zero".into()));
            }
        }
        Ok(())
    }
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(LpcaError::Contract(format!(
            "distance needs equal non-empty lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `(1/p) Σ (a_l - b_l)²`.
pub fn euclidean_sq(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(sq_dist(a, b) / a.len() as f64)
}

/// `(1/p) |Σ (a_l - b_l)|`.
pub fn average_dist(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(sum_diff(a, b).abs() / a.len() as f64)
}

/// `(1/p) Σ w_l (a_l - b_l)²`.
pub fn weighted_sq(a: &[f64], b: &[f64], w: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    check_lengths(a, w)?;
    Ok(weighted_sq_dist(a, b, w) / a.len() as f64)
}

/// `(1/p) max_{l ∉ {i,j}} |(x_i - x_j)ᵀ x_l|` over the columns of `x`.
pub fn pseudo_max(x: &DMatrix<f64>, i: usize, j: usize) -> Result<f64> {
    let (p, n) = x.shape();
    if n < 3 {
        return Err(LpcaError::Contract(
            "pseudo-max needs at least three units".into(),
        ));
    }
    if i >= n || j >= n {
        return Err(LpcaError::Contract(format!("unit index out of range for {n} units")));
    }
    if i == j {
        return Ok(0.0);
    }
    let diff = x.column(i) - x.column(j);
    let best = (0..n)
        .filter(|&l| l != i && l != j)
        .map(|l| diff.dot(&x.column(l)).abs())
        .fold(0.0_f64, f64::max);
    Ok(best / p as f64)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn weighted_sq_dist(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(w)
        .map(|((x, y), wt)| wt * ((x - y) * (x - y)))
        .sum()
}

fn sum_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x - y).sum()
}

/// All pairwise distances between the columns of `x` (matching rows × units).
///
/// The result is exactly symmetric with a zero diagonal. Rows are computed
/// in parallel; the output does not depend on scheduling.
pub fn pairwise_distances(x: &DMatrix<f64>, kind: &DistanceKind) -> Result<DMatrix<f64>> {
    let (p, n) = x.shape();
    if n < 2 {
        return Err(LpcaError::Contract(format!(
            "pairwise distances need at least two units, got {n}"
        )));
    }
    if p == 0 {
        return Err(LpcaError::Contract("no matching rows".into()));
    }
    kind.validate(Some(p))?;
    let scale = 1.0 / p as f64;
    let data = x.as_slice();
    let col = |i: usize| &data[i * p..(i + 1) * p];

    let rows: Vec<Vec<f64>> = match kind {
        DistanceKind::PseudoMax => {
            if n < 3 {
                return Err(LpcaError::Contract(
                    "pseudo-max needs at least three units".into(),
                ));
            }
            let gram = x.tr_mul(x);
            let g = gram.as_slice();
            // gram is symmetric up to rounding; column l of gram holds <x_·, x_l>.
            let gcol = |l: usize| &g[l * n..(l + 1) * n];
            (0..n)
                .into_par_iter()
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            if i == j {
                                return 0.0;
                            }
                            let mut best = 0.0_f64;
                            for l in 0..n {
                                if l != i && l != j {
                                    let gl = gcol(l);
                                    best = best.max((gl[i] - gl[j]).abs());
                                }
                            }
                            best * scale
                        })
                        .collect()
                })
                .collect()
        }
        DistanceKind::EuclideanSq | DistanceKind::Average | DistanceKind::Weighted(_) => (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            return 0.0;
                        }
                        let (a, b) = (col(i), col(j));
                        let raw = match kind {
                            DistanceKind::EuclideanSq => sq_dist(a, b),
                            DistanceKind::Average => sum_diff(a, b).abs(),
                            DistanceKind::Weighted(w) => weighted_sq_dist(a, b, w),
                            DistanceKind::PseudoMax => unreachable!(),
                        };
                        raw * scale
                    })
                    .collect()
            })
            .collect(),
    };

    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}
