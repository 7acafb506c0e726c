//! Principal components of each unit's matched neighborhood.
//!
//! For a `p × K` block `X` (PCA rows × matched units) the factors are
//! `F = √p · U_d`, with `U_d` the top-`d` eigenvectors of `(1/(pK)) X Xᵀ`,
//! and the loadings are `Λ = (1/p) Xᵀ F`. Then `(1/p) FᵀF = I`,
//! `(1/K) ΛᵀΛ = diag(ω)` and `F Λᵀ` is the best rank-`d` fit of `X`.
//! Only the product `F Λᵀ` is identified; a sign convention on `F` keeps
//! the individual matrices reproducible.

use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{LpcaError, Result};
use crate::linalg::{apply_sign_convention, PcaBasis};
use crate::matching::NeighborSet;

/// Threshold applied to consecutive singular-value ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// `ln(ln K)`.
    LogLogK,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorCountRule {
    Fixed(usize),
    /// Largest `j ≤ d_max` with `s_j / s_{j+1} ≥ threshold`, else 1.
    RatioThreshold { d_max: usize, threshold: Threshold },
}

impl FactorCountRule {
    /// Two factors when `s_2/s_3 ≥ ln ln K`, one otherwise.
    pub const DEFAULT: FactorCountRule = FactorCountRule::RatioThreshold {
        d_max: 2,
        threshold: Threshold::LogLogK,
    };

    pub fn validate(&self) -> Result<()> {
        match *self {
            FactorCountRule::Fixed(0) => Err(LpcaError::Config("fixed factor count must be >= 1".into())),
            FactorCountRule::RatioThreshold { d_max: 0, .. } => {
                Err(LpcaError::Config("d_max must be >= 1".into()))
            }
            FactorCountRule::RatioThreshold {
                threshold: Threshold::Value(t),
                ..
            } if !t.is_finite() => Err(LpcaError::Config("ratio threshold must be finite".into())),
            _ => Ok(()),
        }
    }

    /// Checks the rule against a neighborhood size before any fitting.
    pub fn validate_for(&self, k: usize) -> Result<()> {
        self.validate()?;
        match *self {
            FactorCountRule::Fixed(d) if d > k => Err(LpcaError::Config(format!(
                "fixed factor count {d} exceeds K = {k}"
            ))),
            FactorCountRule::RatioThreshold {
                threshold: Threshold::LogLogK,
                ..
            } if k < 16 => Err(LpcaError::Config(format!(
                "ln ln K threshold needs K >= 16, got K = {k}; supply an explicit threshold"
            ))),
            _ => Ok(()),
        }
    }

    /// Number of leading singular values the rule inspects.
    pub fn required_values(&self) -> usize {
        match *self {
            FactorCountRule::Fixed(d) => d,
            FactorCountRule::RatioThreshold { d_max, .. } => d_max + 1,
        }
    }
}

impl FromStr for FactorCountRule {
    type Err = LpcaError;

    /// `fixed:<d>`, `ratio:<d_max>:loglogk` or `ratio:<d_max>:<threshold>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || LpcaError::Config(format!("bad factor-count rule '{s}'"));
        let parts: Vec<&str> = s.split(':').collect();
        let rule = match parts.as_slice() {
            ["fixed", d] => FactorCountRule::Fixed(d.parse().map_err(|_| bad())?),
            ["ratio", d_max, t] => FactorCountRule::RatioThreshold {
                d_max: d_max.parse().map_err(|_| bad())?,
                threshold: if t.eq_ignore_ascii_case("loglogk") {
                    Threshold::LogLogK
                } else {
                    Threshold::Value(t.parse().map_err(|_| bad())?)
                },
            },
            _ => return Err(bad()),
        };
        rule.validate()?;
        Ok(rule)
    }
}

impl std::fmt::Display for FactorCountRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FactorCountRule::Fixed(d) => write!(f, "fixed:{d}"),
            FactorCountRule::RatioThreshold {
                d_max,
                threshold: Threshold::LogLogK,
            } => write!(f, "ratio:{d_max}:loglogk"),
            FactorCountRule::RatioThreshold {
                d_max,
                threshold: Threshold::Value(t),
            } => write!(f, "ratio:{d_max}:{t}"),
        }
    }
}

/// Picks the local factor count from descending singular values.
pub fn select_d(singular_values: &[f64], k: usize, rule: &FactorCountRule) -> Result<usize> {
    rule.validate()?;
    match *rule {
        FactorCountRule::Fixed(d) => Ok(d),
        FactorCountRule::RatioThreshold { d_max, threshold } => {
            if singular_values.len() < d_max + 1 {
                return Err(LpcaError::Contract(format!(
                    "ratio rule with d_max = {d_max} needs {} singular values, got {}",
                    d_max + 1,
                    singular_values.len()
                )));
            }
            let tau = match threshold {
                Threshold::Value(t) => t,
                Threshold::LogLogK => {
                    if k < 16 {
                        return Err(LpcaError::Contract(format!(
                            "ln ln K threshold needs K >= 16, got K = {k}; supply an explicit threshold"
                        )));
                    }
                    (k as f64).ln().ln()
                }
            };
            for j in (1..=d_max).rev() {
                let (a, b) = (singular_values[j - 1], singular_values[j]);
                let ratio = if b > 0.0 {
                    a / b
                } else if a > 0.0 {
                    f64::INFINITY
                } else {
                    // 0/0: no factor at position j to separate.
                    continue;
                };
                if ratio >= tau {
                    return Ok(j);
                }
            }
            Ok(1)
        }
    }
}

/// Result of PCA on one local block.
#[derive(Debug, Clone)]
pub struct LocalFit {
    /// `p × d`, `(1/p) FᵀF = I`.
    pub factors: DMatrix<f64>,
    /// `K × d`, `(1/K) ΛᵀΛ` diagonal.
    pub loadings: DMatrix<f64>,
    /// Top-`d` eigenvalues of `(1/(pK)) X Xᵀ`.
    pub eigenvalues: Vec<f64>,
    /// All `min(p, K)` eigenvalues of `(1/(pK)) X Xᵀ`.
    pub spectrum: Vec<f64>,
}

impl LocalFit {
    pub fn d(&self) -> usize {
        self.factors.ncols()
    }

    /// `F Λᵀ`, the fitted `p × K` block.
    pub fn fitted(&self) -> DMatrix<f64> {
        &self.factors * self.loadings.transpose()
    }
}

/// Singular values of the raw block recovered from the scaled spectrum.
pub fn singular_values(spectrum: &[f64], p: usize, k: usize) -> Vec<f64> {
    let scale = p as f64 * k as f64;
    spectrum.iter().map(|&w| (w * scale).sqrt()).collect()
}

fn check_block(x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(LpcaError::Contract("empty local block".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LpcaError::Contract("local block has non-finite entries".into()));
    }
    Ok(())
}

fn extract(x: &DMatrix<f64>, basis: &PcaBasis, d: usize) -> Result<LocalFit> {
    let (p, k) = x.shape();
    let max_d = p.min(k);
    if d < 1 || d > max_d {
        return Err(LpcaError::Config(format!(
            "factor count {d} outside 1..={max_d} for a {p}x{k} block"
        )));
    }
    let mut factors = basis.left_vectors(x, d) * (p as f64).sqrt();
    let mut loadings = x.tr_mul(&factors) / p as f64;
    apply_sign_convention(&mut factors, &mut loadings);
    Ok(LocalFit {
        factors,
        loadings,
        eigenvalues: basis.spectrum[..d].to_vec(),
        spectrum: basis.spectrum.clone(),
    })
}

/// PCA with `d` components on a single `p × K` block.
pub fn local_pca(x_local: &DMatrix<f64>, d: usize) -> Result<LocalFit> {
    check_block(x_local)?;
    let (p, k) = x_local.shape();
    if d < 1 || d > p.min(k) {
        return Err(LpcaError::Config(format!(
            "factor count {d} outside 1..={} for a {p}x{k} block",
            p.min(k)
        )));
    }
    let basis = PcaBasis::new(x_local)
        .ok_or_else(|| LpcaError::Numerical("eigensolver did not converge".into()))?;
    extract(x_local, &basis, d)
}

/// Local factor model for one unit.
#[derive(Debug, Clone)]
pub struct LocalFactorModel {
    pub unit: usize,
    /// Position of `unit` among its own neighbors.
    pub self_position: usize,
    pub fit: LocalFit,
}

impl LocalFactorModel {
    pub fn d(&self) -> usize {
        self.fit.d()
    }

    /// Fitted values for the unit's own column.
    pub fn own_column(&self) -> nalgebra::DVector<f64> {
        &self.fit.factors * self.fit.loadings.row(self.self_position).transpose()
    }
}

fn check_set(set: &NeighborSet, n: usize) -> Result<usize> {
    if let Some(&j) = set.indices.iter().find(|&&j| j >= n) {
        return Err(LpcaError::Contract(format!(
            "unit {} has neighbor {} beyond the {n} columns",
            set.unit + 1,
            j + 1
        )));
    }
    set.self_position().ok_or_else(|| {
        LpcaError::Internal(format!(
            "unit {} is missing from its own neighbor set",
            set.unit + 1
        ))
    })
}

/// Fits every neighborhood: assembles `X_⟨i⟩` from the PCA rows `x_pca`
/// in neighbor order, selects `d_i` with `rule`, then extracts factors.
pub fn fit_all(
    x_pca: &DMatrix<f64>,
    neighbors: &[NeighborSet],
    rule: &FactorCountRule,
) -> Result<Vec<LocalFactorModel>> {
    rule.validate()?;
    let n = x_pca.ncols();
    let p = x_pca.nrows();
    neighbors
        .par_iter()
        .map(|set| {
            let self_position = check_set(set, n)?;
            let block = x_pca.select_columns(set.indices.iter());
            check_block(&block)?;
            let basis = PcaBasis::new(&block).ok_or_else(|| {
                LpcaError::Numerical(format!(
                    "eigensolver did not converge for unit {}",
                    set.unit + 1
                ))
            })?;
            let k = set.k();
            let d = match rule {
                FactorCountRule::Fixed(d) => *d,
                _ => select_d(&singular_values(&basis.spectrum, p, k), k, rule)?,
            };
            let fit = extract(&block, &basis, d)?;
            Ok(LocalFactorModel {
                unit: set.unit,
                self_position,
                fit,
            })
        })
        .collect()
}

/// `Ĥ`: column `i` is unit `i`'s own column of `F̂_⟨i⟩ Λ̂_⟨i⟩ᵀ`.
pub fn reconstruct(models: &[LocalFactorModel], neighbors: &[NeighborSet]) -> Result<DMatrix<f64>> {
    if models.len() != neighbors.len() {
        return Err(LpcaError::Contract(format!(
            "{} models for {} neighbor sets",
            models.len(),
            neighbors.len()
        )));
    }
    let n = models.len();
    let p = models.first().map_or(0, |m| m.fit.factors.nrows());
    let mut h = DMatrix::zeros(p, n);
    for (model, set) in models.iter().zip(neighbors) {
        if model.unit != set.unit || model.unit >= n {
            return Err(LpcaError::Contract(format!(
                "model for unit {} misaligned with neighbor set of unit {}",
                model.unit + 1,
                set.unit + 1
            )));
        }
        match set.self_position() {
            Some(pos) if pos == model.self_position => {}
            _ => {
                return Err(LpcaError::Internal(format!(
                    "self position of unit {} is inconsistent",
                    model.unit + 1
                )))
            }
        }
        h.set_column(model.unit, &model.own_column());
    }
    Ok(h)
}

/// Outcome of the experimental latent-dimension heuristic.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDimEstimate {
    /// Max over units of the per-unit group size.
    pub r: usize,
    pub per_unit: Vec<usize>,
    /// True when some unit showed no eigenvalue drop of at least `gap_ratio`.
    pub inconclusive: bool,
}

/// Size of the group following the leading eigenvalue: counts positions
/// `2, 3, …` until the first `ω_j / ω_{j+1} ≥ gap_ratio`.
fn second_group_size(spectrum: &[f64], gap_ratio: f64) -> (usize, bool) {
    let tail = &spectrum[1..];
    for j in 0..tail.len() - 1 {
        let (a, b) = (tail[j], tail[j + 1]);
        let ratio = if b > 0.0 {
            a / b
        } else if a > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        if ratio >= gap_ratio {
            return (j + 1, true);
        }
    }
    (tail.len(), false)
}

/// Experimental diagnostic for the latent dimension: per unit, the number
/// of local eigenvalues in the magnitude group right after the leading one
/// (which reflects the local level); the estimate is the maximum over units.
pub fn estimate_latent_dim(
    x_pca: &DMatrix<f64>,
    neighbors: &[NeighborSet],
    gap_ratio: f64,
) -> Result<LatentDimEstimate> {
    if !(gap_ratio > 1.0) {
        return Err(LpcaError::Config(format!(
            "gap ratio must exceed 1, got {gap_ratio}"
        )));
    }
    let n = x_pca.ncols();
    let results: Vec<(usize, bool)> = neighbors
        .par_iter()
        .map(|set| {
            check_set(set, n)?;
            let block = x_pca.select_columns(set.indices.iter());
            let basis = PcaBasis::new(&block).ok_or_else(|| {
                LpcaError::Numerical(format!(
                    "eigensolver did not converge for unit {}",
                    set.unit + 1
                ))
            })?;
            if basis.spectrum.len() < 3 {
                return Err(LpcaError::Contract(format!(
                    "latent-dimension diagnostic unavailable: only {} eigenvalues for unit {}",
                    basis.spectrum.len(),
                    set.unit + 1
                )));
            }
            Ok(second_group_size(&basis.spectrum, gap_ratio))
        })
        .collect::<Result<_>>()?;
    Ok(LatentDimEstimate {
        r: results.iter().map(|r| r.0).max().unwrap_or(0),
        inconclusive: results.iter().any(|r| !r.1),
        per_unit: results.into_iter().map(|r| r.0).collect(),
    })
}
