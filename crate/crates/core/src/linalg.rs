//! Small dense linear-algebra helpers shared by the local and global PCA.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    /// Column `j` is the unit eigenvector for `values[j]`.
    pub vectors: DMatrix<f64>,
}

/// Returns `None` when the iteration fails to converge.
pub fn sym_eigen_desc(m: DMatrix<f64>) -> Option<SortedEigen> {
    let dim = m.nrows();
    let eig = SymmetricEigen::try_new(m, EIGEN_EPS, EIGEN_MAX_ITER)?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&j| eig.eigenvalues[j]).collect();
    let vectors = DMatrix::from_fn(dim, dim, |r, c| eig.eigenvectors[(r, order[c])]);
    Some(SortedEigen { values, vectors })
}

/// Principal directions of a `p × m` data block `X`, scaled so that the
/// spectrum is that of `(1/(p m)) X Xᵀ`.
///
/// The smaller of the two Gram matrices is decomposed; when the `m × m`
/// side is used, left vectors are recovered as `X v / ‖X v‖`.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    /// All `min(p, m)` eigenvalues, descending, clamped at 0.
    pub spectrum: Vec<f64>,
    eigen: SortedEigen,
    dual: bool,
}

impl PcaBasis {
    pub fn new(x: &DMatrix<f64>) -> Option<Self> {
        let (p, m) = x.shape();
        let scale = 1.0 / (p as f64 * m as f64);
        let dual = p > m;
        let gram = if dual { x.tr_mul(x) } else { x * x.transpose() } * scale;
        let eigen = sym_eigen_desc(symmetrize(gram))?;
        let spectrum = eigen.values.iter().map(|&v| v.max(0.0)).collect();
        Some(Self {
            spectrum,
            eigen,
            dual,
        })
    }

    /// Top `d` orthonormal left vectors (`p × d`).
    pub fn left_vectors(&self, x: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
        let p = x.nrows();
        if !self.dual {
            return self.eigen.vectors.columns(0, d).into_owned();
        }
        let top = self.spectrum.first().copied().unwrap_or(0.0);
        let null_tol = top * 1e-12;
        let mut cols: Vec<Option<DVector<f64>>> = (0..d)
            .map(|j| {
                if self.spectrum[j] <= null_tol || self.spectrum[j] == 0.0 {
                    return None;
                }
                let u = x * self.eigen.vectors.column(j);
                let norm = u.norm();
                (norm > 0.0).then(|| u / norm)
            })
            .collect();
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d);
        let mut candidate = 0usize;
        for col in cols.iter_mut() {
            let v = match col.take() {
                Some(v) => orthonormalize(v, &basis),
                None => None,
            };
            let v = match v {
                Some(v) => v,
                // Null direction: complete the basis with a coordinate vector.
                None => loop {
                    let mut e = DVector::zeros(p);
                    e[candidate % p] = 1.0;
                    candidate += 1;
                    if let Some(v) = orthonormalize(e, &basis) {
                        break v;
                    }
                },
            };
            basis.push(v);
        }
        DMatrix::from_columns(&basis)
    }
}

/// Two passes of Gram-Schmidt against `basis`; `None` if `v` collapses.
fn orthonormalize(mut v: DVector<f64>, basis: &[DVector<f64>]) -> Option<DVector<f64>> {
    let start = v.norm();
    if start == 0.0 {
        return None;
    }
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(&v);
            v.axpy(-c, b, 1.0);
        }
    }
    let norm = v.norm();
    (norm > 1e-8 * start).then(|| v / norm)
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Flips columns of `a` (and the matching columns of `b`) so that the
/// largest-magnitude entry of each column of `a` is positive. Exact ties
/// go to the lowest row.
pub fn apply_sign_convention(a: &mut DMatrix<f64>, b: &mut DMatrix<f64>) {
    for j in 0..a.ncols() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for (r, v) in a.column(j).iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = r;
            }
        }
        if a[(best, j)] < 0.0 {
            a.column_mut(j).neg_mut();
            b.column_mut(j).neg_mut();
        }
    }
}
