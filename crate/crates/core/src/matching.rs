//! K-nearest-neighbor sets built from a distance matrix.
//!
//! Each unit is its own first neighbor. The remaining `K - 1` slots go to
//! the closest other units, ties broken by ascending unit index, so the
//! neighbor sets are a deterministic function of the distance matrix.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{LpcaError, Result};
use crate::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub unit: usize,
    /// Matched units ordered by (distance, index); `indices[0] == unit`.
    pub indices: Vec<usize>,
    /// Largest distance from `unit` to a member of the set.
    pub radius: f64,
}

impl NeighborSet {
    pub fn k(&self) -> usize {
        self.indices.len()
    }

    /// Rank of the unit itself within its own neighborhood.
    pub fn self_position(&self) -> Option<usize> {
        self.indices.iter().position(|&j| j == self.unit)
    }
}

fn check_square(d: &DMatrix<f64>) -> Result<usize> {
    if d.nrows() != d.ncols() {
        return Err(LpcaError::Contract(format!(
            "distance matrix must be square, got {:?}",
            d.shape()
        )));
    }
    Ok(d.nrows())
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k < 1 {
        return Err(LpcaError::Config("K must be at least 1".into()));
    }
    if k > n {
        return Err(LpcaError::Config(format!(
            "K exceeds sample size ({k} > {n})"
        )));
    }
    Ok(())
}

/// The `k` nearest neighbors of `unit`, itself included.
pub fn knn_match(d: &DMatrix<f64>, unit: usize, k: usize) -> Result<NeighborSet> {
    let n = check_square(d)?;
    check_k(k, n)?;
    if unit >= n {
        return Err(LpcaError::Contract(format!("unit {} outside 1..={n}", unit + 1)));
    }
    Ok(match_unit(d, unit, k))
}

fn match_unit(d: &DMatrix<f64>, unit: usize, k: usize) -> NeighborSet {
    let n = d.nrows();
    let mut others: Vec<usize> = (0..n).filter(|&j| j != unit).collect();
    let key = |j: &usize| (d[(unit, *j)], *j);
    let by_key = |a: &usize, b: &usize| {
        let (da, ja) = key(a);
        let (db, jb) = key(b);
        da.total_cmp(&db).then(ja.cmp(&jb))
    };
    if k - 1 < others.len() && k > 1 {
        others.select_nth_unstable_by(k - 2, by_key);
    }
    others.truncate(k - 1);
    others.sort_by(by_key);

    let mut indices = Vec::with_capacity(k);
    indices.push(unit);
    indices.extend(others);
    let radius = indices
        .iter()
        .map(|&j| d[(unit, j)])
        .fold(0.0_f64, f64::max);
    NeighborSet {
        unit,
        indices,
        radius,
    }
}

/// Neighbor sets for every unit, in unit order.
pub fn match_all(d: &DMatrix<f64>, k: usize) -> Result<Vec<NeighborSet>> {
    let n = check_square(d)?;
    check_k(k, n)?;
    Ok((0..n).into_par_iter().map(|i| match_unit(d, i, k)).collect())
}

/// Per-unit `max_k ‖α_i - α_{j_k(i)}‖`, where `alpha` is `r × n` with one
/// latent vector per unit. Only meaningful when the latents are known.
pub fn unit_discrepancies(alpha: &DMatrix<f64>, neighbors: &[NeighborSet]) -> Result<Vec<f64>> {
    let n = alpha.ncols();
    neighbors
        .iter()
        .map(|set| {
            if set.unit >= n || set.indices.iter().any(|&j| j >= n) {
                return Err(LpcaError::Contract(format!(
                    "neighbor set of unit {} refers to units beyond the {n} latent columns",
                    set.unit + 1
                )));
            }
            let own = alpha.column(set.unit);
            Ok(set
                .indices
                .iter()
                .map(|&j| (own.clone() - alpha.column(j)).norm())
                .fold(0.0_f64, f64::max))
        })
        .collect()
}

/// Largest latent-space distance between any unit and any of its matches.
pub fn matching_discrepancy(alpha: &DMatrix<f64>, neighbors: &[NeighborSet]) -> Result<f64> {
    Ok(unit_discrepancies(alpha, neighbors)?
        .into_iter()
        .fold(0.0_f64, f64::max))
}

/// Writes `unit,rank,neighbor,distance` rows (1-based) for audit.
pub fn write_neighbors_csv(
    path: impl AsRef<Path>,
    neighbors: &[NeighborSet],
    d: &DMatrix<f64>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("unit,rank,neighbor,distance\n");
    for set in neighbors {
        for (rank, &j) in set.indices.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                set.unit + 1,
                rank + 1,
                j + 1,
                fmt::g12(d[(set.unit, j)])
            ));
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| LpcaError::io(path, e))
}
