//! Counterfactual prediction for a single treated unit.
//!
//! The treated unit's post-treatment outcomes are replaced by zeros, local
//! PCA runs on the perturbed panel, and the fitted means of the masked
//! cells serve as the untreated counterfactual.

use nalgebra::DVector;

use crate::data::{mask_to_zero, DataMatrix, RowSplit};
use crate::error::{LpcaError, Result};
use crate::pipeline::{fit_lpca, LpcaFit, LpcaSettings};

/// Single treated unit, treated from period `p0 + 1` on (1-based), i.e.
/// rows `p0..p` (0-based) are post-treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreatmentDesign {
    pub treated: usize,
    pub p0: usize,
}

impl TreatmentDesign {
    pub fn validate(&self, p: usize, n: usize) -> Result<()> {
        if self.treated >= n {
            return Err(LpcaError::Config(format!(
                "treated unit {} outside 1..={n}",
                self.treated + 1
            )));
        }
        if self.p0 < 1 || self.p0 >= p {
            return Err(LpcaError::Config(format!(
                "p0 = {} must lie in 1..{p}",
                self.p0
            )));
        }
        Ok(())
    }

    pub fn post_periods(&self, p: usize) -> std::ops::Range<usize> {
        self.p0..p
    }
}

/// Cap on missing cells per row: `⌈0.1 · min(p, n)⌉`.
pub fn max_missing_per_row(p: usize, n: usize) -> usize {
    (0.1 * p.min(n) as f64).ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelMode {
    Additive,
    Multiplicative,
}

impl std::str::FromStr for LevelMode {
    type Err = LpcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(LevelMode::Additive),
            "multiplicative" => Ok(LevelMode::Multiplicative),
            other => Err(LpcaError::Config(format!("unknown level mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for LevelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LevelMode::Additive => "additive",
            LevelMode::Multiplicative => "multiplicative",
        })
    }
}

/// Cumulates growth into levels: `L_t = L_0 + Σ_{s≤t} g_s` (additive) or
/// `L_t = L_0 · Π_{s≤t} (1 + g_s)` (multiplicative).
pub fn growth_to_level(initial: f64, growth: &[f64], mode: LevelMode) -> Result<Vec<f64>> {
    if !initial.is_finite() || growth.iter().any(|g| !g.is_finite()) {
        return Err(LpcaError::Contract("levels need finite inputs".into()));
    }
    let mut level = initial;
    growth
        .iter()
        .map(|&g| {
            level = match mode {
                LevelMode::Additive => level + g,
                LevelMode::Multiplicative => {
                    if g <= -1.0 {
                        return Err(LpcaError::Contract(format!(
                            "multiplicative growth {g} <= -1"
                        )));
                    }
                    level * (1.0 + g)
                }
            };
            Ok(level)
        })
        .collect()
}

/// Copy of `y` with the treated unit's post-treatment cells zeroed and masked.
pub fn mask_treated(y: &DataMatrix, design: &TreatmentDesign) -> Result<DataMatrix> {
    design.validate(y.p(), y.n())?;
    let mut x = mask_to_zero(y);
    for l in design.post_periods(y.p()) {
        x.set_missing(l, design.treated);
    }
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct LevelPaths {
    pub counterfactual: Vec<f64>,
    pub observed: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthResult {
    /// Post-treatment rows, 0-based.
    pub periods: Vec<usize>,
    pub counterfactual: Vec<f64>,
    pub observed: Vec<f64>,
    /// `observed - counterfactual`.
    pub effects: Vec<f64>,
    pub avg_effect: f64,
    pub level_path: Option<LevelPaths>,
    /// Full local-PCA output on the masked panel.
    pub fit: LpcaFit,
}

impl SynthResult {
    /// Adds level trajectories starting from `initial`.
    pub fn with_levels(mut self, initial: f64, mode: LevelMode) -> Result<Self> {
        self.level_path = Some(LevelPaths {
            counterfactual: growth_to_level(initial, &self.counterfactual, mode)?,
            observed: growth_to_level(initial, &self.observed, mode)?,
        });
        Ok(self)
    }
}

fn check_missingness(x: &DataMatrix, design: &TreatmentDesign, split: &RowSplit) -> Result<()> {
    let (p, n) = (x.p(), x.n());
    let cap = max_missing_per_row(p, n);
    for l in 0..p {
        let missing = (0..n).filter(|&i| !x.is_observed(l, i)).count();
        if missing > cap {
            return Err(LpcaError::Config(format!(
                "row {} has {missing} missing cells (limit {cap}); only a single treated unit is supported",
                l + 1
            )));
        }
    }
    for i in 0..n {
        let missing = (0..p).filter(|&l| !x.is_observed(l, i)).count();
        let limit = if i == design.treated {
            // The treated column must keep a majority of its PCA rows.
            (split.ddagger().len() - 1) / 2
        } else {
            cap
        };
        if missing > limit {
            return Err(LpcaError::Config(format!(
                "unit {} has {missing} missing cells (limit {limit})",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Masks the treated unit, runs local PCA and reads off its counterfactual.
pub fn synth_estimate(
    y: &DataMatrix,
    design: &TreatmentDesign,
    split: &RowSplit,
    settings: &LpcaSettings,
) -> Result<SynthResult> {
    let (p, n) = (y.p(), y.n());
    design.validate(p, n)?;
    if split.p() != p {
        return Err(LpcaError::Config(format!(
            "split covers {} rows but the panel has {p}",
            split.p()
        )));
    }
    let pca_rows = split.ddagger();
    let mut positions = Vec::with_capacity(p - design.p0);
    for l in design.post_periods(p) {
        match pca_rows.binary_search(&l) {
            Ok(pos) => positions.push(pos),
            Err(_) => {
                return Err(LpcaError::Config(format!(
                    "post-treatment period {} falls outside the PCA rows",
                    l + 1
                )))
            }
        }
        if !y.is_observed(l, design.treated) {
            return Err(LpcaError::Contract(format!(
                "observed outcome of the treated unit missing at period {}",
                l + 1
            )));
        }
    }

    let x = mask_treated(y, design)?;
    check_missingness(&x, design, split)?;
    let fit = fit_lpca(x.values(), split.dagger(), pca_rows, settings)?;

    let periods: Vec<usize> = design.post_periods(p).collect();
    let counterfactual: Vec<f64> = positions
        .iter()
        .map(|&pos| fit.fitted[(pos, design.treated)])
        .collect();
    let observed: Vec<f64> = periods
        .iter()
        .map(|&l| y.values()[(l, design.treated)])
        .collect();
    let effects: Vec<f64> = observed
        .iter()
        .zip(&counterfactual)
        .map(|(o, c)| o - c)
        .collect();
    let avg_effect = DVector::from_column_slice(&effects).mean();
    Ok(SynthResult {
        periods,
        counterfactual,
        observed,
        effects,
        avg_effect,
        level_path: None,
        fit,
    })
}
