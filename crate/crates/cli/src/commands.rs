//! The four pipelines and their on-disk artifacts.
//!
//! Every floating-point value is written with twelve significant digits so
//! that identical runs produce byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use lpca::covadjust::{covadjusted_lpca, CovariatePanel};
use lpca::data::{load_csv_table, row_split, CsvTable};
use lpca::fmt::g12;
use lpca::gpca::gpca_fit;
use lpca::localpca::estimate_latent_dim;
use lpca::matching::write_neighbors_csv;
use lpca::sim::{run_study, write_reps_csv, MethodMetrics, Noise, SimConfig, SimModel};
use lpca::synth::{synth_estimate, LevelMode, TreatmentDesign};
use lpca::{
    fit_lpca, CsvOptions, DistanceKind, FactorCountRule, KChoice, LpcaError, LpcaFit,
    LpcaSettings, Result, RowSplit, SplitMode,
};
use nalgebra::DMatrix;

use crate::config::{Command, Params};

pub fn run(params: &Params, out: &Path) -> Result<String> {
    std::fs::create_dir_all(out).map_err(|e| LpcaError::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let summary = match params.command {
        Command::Estimate => estimate(params, out)?,
        Command::Covadjust => covadjust(params, out)?,
        Command::Synth => synth(params, out)?,
        Command::Simulate => simulate(params, out)?,
    };
    write(out, "manifest.txt", &params.manifest())?;
    Ok(summary)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| LpcaError::Io { path, source: e })
}

fn load_input(params: &Params, key: &str) -> Result<CsvTable> {
    let opts = CsvOptions {
        has_header: params.flag("header")?,
        missing_token: params.require("missing_token")?.to_string(),
    };
    load_csv_table(params.require(key)?, &opts)
}

fn settings(params: &Params, n: usize) -> Result<LpcaSettings> {
    let rule: FactorCountRule = params.require("rule")?.parse()?;
    let k = params.require("k")?.parse::<KChoice>()?.resolve(n)?;
    rule.validate_for(k)?;
    Ok(LpcaSettings {
        k,
        distance: DistanceKind::from_name(params.require("distance")?)?,
        rule,
    })
}

fn split(params: &Params, p: usize) -> Result<RowSplit> {
    if let Some(m) = params.parse_opt::<usize>("match_rows")? {
        if m == 0 || m >= p {
            return Err(LpcaError::Config(format!("match_rows = {m} outside 1..{p}")));
        }
        return RowSplit::leading(p, m);
    }
    let mode: SplitMode = params.require("split_mode")?.parse()?;
    row_split(p, &params.fractions("split")?, mode, params.parse("seed")?)
}

/// Column labels: the input header when there is one, else `1..n`.
fn unit_labels(table: &CsvTable) -> Vec<String> {
    match &table.header {
        Some(h) => h.clone(),
        None => (1..=table.data.n()).map(|i| i.to_string()).collect(),
    }
}

/// `feature,<units…>` table with 1-based feature numbers.
fn matrix_csv(m: &DMatrix<f64>, rows: &[usize], labels: &[String]) -> String {
    let mut out = String::from("feature");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (pos, &l) in rows.iter().enumerate() {
        let _ = write!(out, "{}", l + 1);
        for i in 0..m.ncols() {
            let _ = write!(out, ",{}", g12(m[(pos, i)]));
        }
        out.push('\n');
    }
    out
}

fn spectra_csv(fit: &LpcaFit) -> String {
    let width = fit.models.iter().map(|m| m.fit.spectrum.len()).max().unwrap_or(0);
    let mut out = String::from("unit,d");
    for j in 1..=width {
        let _ = write!(out, ",eig{j}");
    }
    out.push('\n');
    for m in &fit.models {
        let _ = write!(out, "{},{}", m.unit + 1, m.d());
        for v in &m.fit.spectrum {
            let _ = write!(out, ",{}", g12(*v));
        }
        out.push('\n');
    }
    out
}

/// Writes the artifacts every local-PCA pass produces.
fn write_fit(out: &Path, fit: &LpcaFit, split: &RowSplit, labels: &[String]) -> Result<()> {
    write(out, "fitted.csv", &matrix_csv(&fit.fitted, &fit.pca_rows, labels))?;
    write_neighbors_csv(out.join("neighbors.csv"), &fit.neighbors, &fit.distances)?;
    write(out, "spectra.csv", &spectra_csv(fit))?;
    split.save(out.join("split.txt"))
}

fn mean_d(fit: &LpcaFit) -> f64 {
    fit.models.iter().map(|m| m.d() as f64).sum::<f64>() / fit.models.len() as f64
}

fn summary_line(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key}={value}");
}

fn estimate(params: &Params, out: &Path) -> Result<String> {
    let table = load_input(params, "input")?;
    let x = &table.data;
    let split = split(params, x.p())?;
    if split.is_three_way() {
        return Err(LpcaError::Config("estimate takes a two-way split".into()));
    }
    let settings = settings(params, x.n())?;
    let fit = fit_lpca(x.values(), split.dagger(), split.ddagger(), &settings)?;
    let labels = unit_labels(&table);
    write_fit(out, &fit, &split, &labels)?;

    let mut summary = String::new();
    summary_line(&mut summary, "p", x.p());
    summary_line(&mut summary, "n", x.n());
    summary_line(&mut summary, "k", settings.k);
    summary_line(&mut summary, "missing_cells", x.missing_count());
    summary_line(&mut summary, "mean_d", g12(mean_d(&fit)));
    if let Some(gap) = params.parse_opt::<f64>("latent_gap")? {
        let x_pca = x.select_rows(split.ddagger());
        let est = estimate_latent_dim(&x_pca, &fit.neighbors, gap)?;
        summary_line(&mut summary, "latent_dim", est.r);
        summary_line(&mut summary, "latent_dim_inconclusive", est.inconclusive);
    }
    if params.flag("gpca")? {
        let g = gpca_fit(x, params.parse("kmax")?)?;
        let restricted = g.fitted.select_rows(split.ddagger().iter());
        write(out, "gpca_fitted.csv", &matrix_csv(&restricted, split.ddagger(), &labels))?;
        summary_line(&mut summary, "gpca_r", g.r);
    }
    write(out, "summary.txt", &summary)?;
    Ok(summary)
}

fn covadjust(params: &Params, out: &Path) -> Result<String> {
    let table = load_input(params, "input")?;
    let x = &table.data;
    let paths = params.require("covariates")?;
    let mut regressors = Vec::new();
    for path in paths.split(',') {
        let w = load_csv_table(
            path,
            &CsvOptions {
                has_header: params.flag("header")?,
                missing_token: params.require("missing_token")?.to_string(),
            },
        )?
        .data;
        if !w.is_complete() {
            return Err(LpcaError::Contract(format!("covariate file {path} has missing cells")));
        }
        regressors.push(w.into_values());
    }
    let panel = CovariatePanel::new(regressors)?;
    let split = split(params, x.p())?;
    let settings = settings(params, x.n())?;
    let res = covadjusted_lpca(x, &panel, &split, &settings)?;
    let labels = unit_labels(&table);
    write_fit(out, &res.fit, &split, &labels)?;

    let mut theta = String::from("coefficient,estimate\n");
    for (j, v) in res.theta.theta.iter().enumerate() {
        let _ = writeln!(theta, "{},{}", j + 1, g12(*v));
    }
    write(out, "theta.csv", &theta)?;

    let mut summary = String::new();
    summary_line(&mut summary, "p", x.p());
    summary_line(&mut summary, "n", x.n());
    summary_line(&mut summary, "k", settings.k);
    summary_line(&mut summary, "q", panel.q());
    for (j, v) in res.theta.theta.iter().enumerate() {
        summary_line(&mut summary, &format!("theta{}", j + 1), g12(*v));
    }
    summary_line(&mut summary, "mean_d", g12(mean_d(&res.fit)));
    write(out, "summary.txt", &summary)?;
    Ok(summary)
}

/// A 1-based unit number, or a header label when the input has one.
fn treated_unit(raw: &str, table: &CsvTable) -> Result<usize> {
    if let Ok(i) = raw.parse::<usize>() {
        if i == 0 || i > table.data.n() {
            return Err(LpcaError::Config(format!(
                "treated unit {i} outside 1..={}",
                table.data.n()
            )));
        }
        return Ok(i - 1);
    }
    table
        .header
        .as_ref()
        .and_then(|h| h.iter().position(|name| name == raw))
        .ok_or_else(|| LpcaError::Config(format!("no unit named '{raw}'")))
}

fn synth(params: &Params, out: &Path) -> Result<String> {
    let table = load_input(params, "input")?;
    let y = &table.data;
    let treated = treated_unit(params.require("treated")?, &table)?;
    let p0: usize = params.parse("p0")?;
    let design = TreatmentDesign { treated, p0 };
    design.validate(y.p(), y.n())?;
    let split = split(params, y.p())?;
    if split.is_three_way() {
        return Err(LpcaError::Config("synth takes a two-way split".into()));
    }
    let settings = settings(params, y.n())?;
    let mode: LevelMode = params.require("mode")?.parse()?;
    let mut res = synth_estimate(y, &design, &split, &settings)?;
    if let Some(initial) = params.parse_opt::<f64>("initial_level")? {
        res = res.with_levels(initial, mode)?;
    }
    write_fit(out, &res.fit, &split, &unit_labels(&table))?;

    let mut effects = String::from("period,observed,counterfactual,effect\n");
    for (j, &l) in res.periods.iter().enumerate() {
        let _ = writeln!(
            effects,
            "{},{},{},{}",
            l + 1,
            g12(res.observed[j]),
            g12(res.counterfactual[j]),
            g12(res.effects[j])
        );
    }
    write(out, "effects.csv", &effects)?;
    if let Some(levels) = &res.level_path {
        let mut text = String::from("period,observed_level,counterfactual_level\n");
        for (j, &l) in res.periods.iter().enumerate() {
            let _ = writeln!(
                text,
                "{},{},{}",
                l + 1,
                g12(levels.observed[j]),
                g12(levels.counterfactual[j])
            );
        }
        write(out, "levels.csv", &text)?;
    }

    let mut summary = String::new();
    summary_line(&mut summary, "treated", treated + 1);
    summary_line(&mut summary, "p0", p0);
    summary_line(&mut summary, "post_periods", res.periods.len());
    summary_line(&mut summary, "k", settings.k);
    summary_line(&mut summary, "avg_effect", g12(res.avg_effect));
    if let Some(levels) = &res.level_path {
        let last = levels.observed.len() - 1;
        summary_line(&mut summary, "final_observed_level", g12(levels.observed[last]));
        summary_line(
            &mut summary,
            "final_counterfactual_level",
            g12(levels.counterfactual[last]),
        );
    }
    write(out, "summary.txt", &summary)?;
    Ok(summary)
}

fn sim_config(params: &Params) -> Result<SimConfig> {
    let model = SimModel::from_number(params.parse("model")?)?;
    let mut cfg = SimConfig::new(model, params.parse("n")?, params.parse("p")?);
    cfg.reps = params.parse("reps")?;
    cfg.k_const = params.parse("c")?;
    cfg.seed = params.parse("seed")?;
    cfg.distance = DistanceKind::from_name(params.require("distance")?)?;
    cfg.split_fraction = match params.fractions("split")?.as_slice() {
        [f] | [f, _] => *f,
        _ => return Err(LpcaError::Config("simulate takes a single split fraction".into())),
    };
    cfg.rule = params.require("rule")?.parse()?;
    cfg.kmax = params.parse("kmax")?;
    cfg.gpca = params.flag("gpca")?;
    cfg.noise = match params.require("noise")? {
        "model" => Noise::Model,
        sd => {
            let sd: f64 = sd
                .parse()
                .map_err(|_| LpcaError::Config(format!("invalid noise '{sd}'")))?;
            if !(sd >= 0.0) || !sd.is_finite() {
                return Err(LpcaError::Config(format!("noise sd must be non-negative, got {sd}")));
            }
            Noise::Gaussian(sd)
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn metrics_row(out: &mut String, method: &str, m: &MethodMetrics) {
    let _ = writeln!(
        out,
        "{method},{},{},{},{}",
        g12(m.mae),
        g12(m.pred_err[0]),
        g12(m.pred_err[1]),
        g12(m.pred_err[2])
    );
}

fn simulate(params: &Params, out: &Path) -> Result<String> {
    let cfg = sim_config(params)?;
    let res = run_study(&cfg)?;
    write_reps_csv(out.join("reps.csv"), &res.reps)?;
    let mut table = String::from("method,mae,err_q10,err_q50,err_q90\n");
    metrics_row(&mut table, "lpca", &res.lpca);
    if let Some(g) = &res.gpca {
        metrics_row(&mut table, "gpca", g);
    }
    write(out, "summary.csv", &table)?;
    let mut summary = format!(
        "model={} n={} p={} k={} reps={}\n",
        cfg.model.number(),
        cfg.n,
        cfg.p,
        cfg.k(),
        cfg.reps
    );
    summary.push_str(&table);
    Ok(summary)
}
