//! Monte Carlo harness: simulated nonlinear factor panels, planted missing
//! cells, and local-vs-global PCA comparisons.
//!
//! Replication `r` of a study seeded with `s` draws from a ChaCha8 stream
//! keyed by `(s, r)`: the generator is seeded with `s` and switched to
//! stream `r`. Replications are therefore independent of one another and
//! of the order in which they run.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::data::{row_split, DataMatrix, SplitMode};
use crate::distance::DistanceKind;
use crate::error::{LpcaError, Result};
use crate::fmt;
use crate::gpca::{gpca_fit, DEFAULT_KMAX};
use crate::localpca::FactorCountRule;
use crate::pipeline::{fit_lpca, scaled_k, LpcaFit, LpcaSettings};

/// Noise standard deviation of the Gaussian designs.
pub const GAUSSIAN_NOISE_SD: f64 = 0.5;

/// Latent surfaces `η_l(α)` with `α, ϖ_l ~ U[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimModel {
    /// `exp(-10 (α - ϖ)²) / (0.1 √(2π))`, Gaussian noise.
    GaussianBump,
    /// `exp(-10 |α - ϖ|)`, Gaussian noise.
    LaplaceKernel,
    /// `1 - (1 + exp(15 (0.8 |α - ϖ|)^0.8 - 0.1))^{-1}`, Bernoulli draws.
    LogisticBernoulli,
}

impl SimModel {
    pub fn from_number(m: u8) -> Result<Self> {
        match m {
            1 => Ok(SimModel::GaussianBump),
            2 => Ok(SimModel::LaplaceKernel),
            3 => Ok(SimModel::LogisticBernoulli),
            other => Err(LpcaError::Config(format!("unknown model {other}; expected 1, 2 or 3"))),
        }
    }

    pub fn number(&self) -> u8 {
        match self {
            SimModel::GaussianBump => 1,
            SimModel::LaplaceKernel => 2,
            SimModel::LogisticBernoulli => 3,
        }
    }

    pub fn eta(&self, alpha: f64, varpi: f64) -> f64 {
        let gap = alpha - varpi;
        match self {
            SimModel::GaussianBump => {
                (-10.0 * gap * gap).exp() / (0.1 * (2.0 * std::f64::consts::PI).sqrt())
            }
            SimModel::LaplaceKernel => (-10.0 * gap.abs()).exp(),
            SimModel::LogisticBernoulli => {
                1.0 - 1.0 / (1.0 + (15.0 * (0.8 * gap.abs()).powf(0.8) - 0.1).exp())
            }
        }
    }
}

/// How observations scatter around the mean surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    /// Model default: N(η, 0.5²) for Models 1-2, Bernoulli(η) for Model 3.
    Model,
    /// Gaussian with the given standard deviation (0 gives `X = H`).
    Gaussian(f64),
}

#[derive(Debug, Clone)]
pub struct SimData {
    pub x: DataMatrix,
    pub alpha: Vec<f64>,
    pub varpi: Vec<f64>,
    /// True means, `p × n`.
    pub h: DMatrix<f64>,
}

/// Draws α (n values), then ϖ (p values), then the noise unit by unit.
pub fn generate_from<R: Rng>(
    model: SimModel,
    n: usize,
    p: usize,
    noise: Noise,
    rng: &mut R,
) -> Result<SimData> {
    if n < 2 || p < 2 {
        return Err(LpcaError::Config(format!("simulation needs n, p >= 2 (got n = {n}, p = {p})")));
    }
    let alpha: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let varpi: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
    let h = DMatrix::from_fn(p, n, |l, i| model.eta(alpha[i], varpi[l]));

    let mut x = h.clone();
    match (model, noise) {
        (SimModel::LogisticBernoulli, Noise::Model) => {
            for v in x.iter_mut() {
                if !(*v > 0.0 && *v < 1.0) {
                    return Err(LpcaError::Internal(format!("Bernoulli mean {v} outside (0, 1)")));
                }
                *v = if rng.random::<f64>() < *v { 1.0 } else { 0.0 };
            }
        }
        (_, Noise::Model) | (_, Noise::Gaussian(_)) => {
            let sd = match noise {
                Noise::Gaussian(sd) => sd,
                Noise::Model => GAUSSIAN_NOISE_SD,
            };
            if sd > 0.0 {
                let normal = Normal::new(0.0, sd)
                    .map_err(|e| LpcaError::Config(format!("bad noise level: {e}")))?;
                // Column-major storage: unit by unit, feature by feature.
                for v in x.iter_mut() {
                    *v += normal.sample(rng);
                }
            }
        }
    }
    Ok(SimData {
        x: DataMatrix::from_values(x),
        alpha,
        varpi,
        h,
    })
}

/// Generator for replication `rep` of a study seeded with `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// One simulated panel with the model's own noise law.
pub fn generate(model: SimModel, n: usize, p: usize, seed: u64) -> Result<SimData> {
    generate_from(model, n, p, Noise::Model, &mut replication_rng(seed, 0))
}

/// Unit holding the `⌈q n⌉`-th smallest α (ties to the lower index).
pub fn quantile_unit(alpha: &[f64], q: f64) -> usize {
    let n = alpha.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| alpha[a].total_cmp(&alpha[b]).then(a.cmp(&b)));
    let rank = ((q * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    order[rank - 1]
}

/// Zeroes and masks the last row of `x` at the given units.
pub fn plant_missing_units(x: &DataMatrix, units: &[usize]) -> DataMatrix {
    let mut out = x.clone();
    let last = x.p() - 1;
    for &i in units {
        out.set_missing(last, i);
    }
    out
}

/// Masks the last-row cells of the units at the 0.1, 0.5 and 0.9 sample
/// quantiles of α.
pub fn plant_missing(x: &DataMatrix, alpha: &[f64]) -> Result<(DataMatrix, [usize; 3])> {
    if alpha.len() < 10 || alpha.len() != x.n() {
        return Err(LpcaError::Config(format!(
            "planting missing cells needs n >= 10 latent values matching the panel (got {})",
            alpha.len()
        )));
    }
    let units = [0.1, 0.5, 0.9].map(|q| quantile_unit(alpha, q));
    Ok((plant_missing_units(x, &units), units))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub model: SimModel,
    pub n: usize,
    pub p: usize,
    pub reps: usize,
    /// `K = round(c · n^{2/3})`.
    pub k_const: f64,
    pub seed: u64,
    pub distance: DistanceKind,
    /// Share of leading rows used for matching.
    pub split_fraction: f64,
    pub rule: FactorCountRule,
    pub kmax: usize,
    pub noise: Noise,
    /// Also fit the global PCA baseline.
    pub gpca: bool,
}

impl SimConfig {
    pub fn new(model: SimModel, n: usize, p: usize) -> Self {
        Self {
            model,
            n,
            p,
            reps: 1,
            k_const: 1.0,
            seed: 0,
            distance: DistanceKind::PseudoMax,
            split_fraction: 0.5,
            rule: FactorCountRule::DEFAULT,
            kmax: DEFAULT_KMAX,
            noise: Noise::Model,
            gpca: true,
        }
    }

    pub fn k(&self) -> usize {
        scaled_k(self.k_const, self.n)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k < 2 || k > self.n {
            return Err(LpcaError::Config(format!(
                "K = round({} * {}^(2/3)) = {k} must lie in 2..={}",
                self.k_const, self.n, self.n
            )));
        }
        if self.reps == 0 {
            return Err(LpcaError::Config("reps must be at least 1".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(LpcaError::Config(format!(
                "split fraction {} outside (0, 1)",
                self.split_fraction
            )));
        }
        self.rule.validate_for(k)
    }
}

/// Metrics for one method: max error on the PCA rows and absolute errors
/// at the three planted cells (q0.1, q0.5, q0.9).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MethodMetrics {
    pub mae: f64,
    pub pred_err: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepResult {
    pub rep: usize,
    pub units: [usize; 3],
    pub lpca: MethodMetrics,
    pub gpca: Option<MethodMetrics>,
    pub gpca_r: Option<usize>,
    /// Average selected local factor count.
    pub mean_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub lpca: MethodMetrics,
    pub gpca: Option<MethodMetrics>,
    pub reps: Vec<RepResult>,
}

/// Matrices behind one replication, for export and audit.
#[derive(Debug, Clone)]
pub struct Replication {
    pub data: SimData,
    /// Panel with the planted cells zeroed.
    pub planted: DataMatrix,
    pub units: [usize; 3],
    pub pca_rows: Vec<usize>,
    pub lpca: LpcaFit,
    /// Global fit restricted to the PCA rows.
    pub gpca_fitted: Option<DMatrix<f64>>,
    pub gpca_r: Option<usize>,
}

fn metrics(fitted: &DMatrix<f64>, h: &DMatrix<f64>, pca_rows: &[usize], units: &[usize; 3]) -> MethodMetrics {
    let mut mae = 0.0_f64;
    for (pos, &l) in pca_rows.iter().enumerate() {
        for i in 0..h.ncols() {
            mae = mae.max((fitted[(pos, i)] - h[(l, i)]).abs());
        }
    }
    let last_pos = pca_rows.len() - 1;
    let last = pca_rows[last_pos];
    MethodMetrics {
        mae,
        pred_err: units.map(|i| (fitted[(last_pos, i)] - h[(last, i)]).abs()),
    }
}

/// Runs replication `rep` and keeps all intermediate matrices.
pub fn replicate(cfg: &SimConfig, rep: usize) -> Result<Replication> {
    cfg.validate()?;
    let mut rng = replication_rng(cfg.seed, rep as u64);
    let data = generate_from(cfg.model, cfg.n, cfg.p, cfg.noise, &mut rng)?;
    let (planted, units) = plant_missing(&data.x, &data.alpha)?;
    let split = row_split(
        cfg.p,
        &[cfg.split_fraction, 1.0 - cfg.split_fraction],
        SplitMode::Contiguous,
        0,
    )?;
    let pca_rows = split.ddagger().to_vec();
    debug_assert_eq!(pca_rows.last(), Some(&(cfg.p - 1)));

    let settings = LpcaSettings {
        k: cfg.k(),
        distance: cfg.distance.clone(),
        rule: cfg.rule,
    };
    let lpca = fit_lpca(planted.values(), split.dagger(), &pca_rows, &settings)?;

    let (gpca_fitted, gpca_r) = if cfg.gpca {
        let zero_filled = DataMatrix::from_values(planted.values().clone());
        let g = gpca_fit(&zero_filled, cfg.kmax)?;
        (Some(g.fitted.select_rows(pca_rows.iter())), Some(g.r))
    } else {
        (None, None)
    };
    Ok(Replication {
        data,
        planted,
        units,
        pca_rows,
        lpca,
        gpca_fitted,
        gpca_r,
    })
}

/// Metrics of replication `rep`.
pub fn run_replication(cfg: &SimConfig, rep: usize) -> Result<RepResult> {
    let r = replicate(cfg, rep).map_err(LpcaError::in_step(format!(
        "replication {rep} (seed {}, stream {rep})",
        cfg.seed
    )))?;
    let lpca = metrics(&r.lpca.fitted, &r.data.h, &r.pca_rows, &r.units);
    let gpca = r
        .gpca_fitted
        .as_ref()
        .map(|g| metrics(g, &r.data.h, &r.pca_rows, &r.units));
    let mean_d = r.lpca.models.iter().map(|m| m.d() as f64).sum::<f64>() / r.lpca.models.len() as f64;
    Ok(RepResult {
        rep,
        units: r.units,
        lpca,
        gpca,
        gpca_r: r.gpca_r,
        mean_d,
    })
}

fn average(metrics: impl Iterator<Item = MethodMetrics>) -> MethodMetrics {
    let mut count = 0usize;
    let mut acc = MethodMetrics::default();
    for m in metrics {
        count += 1;
        acc.mae += m.mae;
        for j in 0..3 {
            acc.pred_err[j] += m.pred_err[j];
        }
    }
    let c = count.max(1) as f64;
    acc.mae /= c;
    acc.pred_err.iter_mut().for_each(|v| *v /= c);
    acc
}

/// Averages per-replication metrics.
pub fn aggregate(reps: Vec<RepResult>) -> SimResult {
    let lpca = average(reps.iter().map(|r| r.lpca));
    let gpca = reps
        .iter()
        .all(|r| r.gpca.is_some())
        .then(|| average(reps.iter().filter_map(|r| r.gpca)));
    SimResult { lpca, gpca, reps }
}

/// Runs the given replications in parallel; the first failure aborts.
pub fn run_reps(cfg: &SimConfig, reps: &[usize]) -> Result<SimResult> {
    cfg.validate()?;
    let results = reps
        .par_iter()
        .map(|&r| run_replication(cfg, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(results))
}

pub fn run_study(cfg: &SimConfig) -> Result<SimResult> {
    let reps: Vec<usize> = (0..cfg.reps).collect();
    run_reps(cfg, &reps)
}

/// Per-replication table.
pub fn write_reps_csv(path: impl AsRef<Path>, reps: &[RepResult]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(
        "rep,unit_q10,unit_q50,unit_q90,lpca_mae,lpca_err_q10,lpca_err_q50,lpca_err_q90,mean_d,gpca_r,gpca_mae,gpca_err_q10,gpca_err_q50,gpca_err_q90\n",
    );
    for r in reps {
        let g = |f: &dyn Fn(&MethodMetrics) -> f64| r.gpca.as_ref().map_or(String::new(), |m| fmt::g12(f(m)));
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.rep + 1,
            r.units[0] + 1,
            r.units[1] + 1,
            r.units[2] + 1,
            fmt::g12(r.lpca.mae),
            fmt::g12(r.lpca.pred_err[0]),
            fmt::g12(r.lpca.pred_err[1]),
            fmt::g12(r.lpca.pred_err[2]),
            fmt::g12(r.mean_d),
            r.gpca_r.map_or(String::new(), |v| v.to_string()),
            g(&|m| m.mae),
            g(&|m| m.pred_err[0]),
            g(&|m| m.pred_err[1]),
            g(&|m| m.pred_err[2]),
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| LpcaError::io(path, e))
}
