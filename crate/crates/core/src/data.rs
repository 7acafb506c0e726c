//! Panel container, CSV ingestion, row-wise sample splitting and demeaning.
//!
//! Matrices are oriented features × units (`p × n`): row `l` is a feature
//! (or time period), column `i` is a unit. Indices are 0-based in this API;
//! every file written or read by this module uses 1-based indices.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{LpcaError, Result};
use crate::fmt;

/// Observed panel with a missingness mask (`true` = observed).
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>, mask: DMatrix<bool>) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(LpcaError::Contract(format!(
                "values are {:?} but mask is {:?}",
                values.shape(),
                mask.shape()
            )));
        }
        Ok(Self { values, mask })
    }

    /// Fully observed matrix.
    pub fn from_values(values: DMatrix<f64>) -> Self {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self { values, mask }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Number of features (rows).
    pub fn p(&self) -> usize {
        self.values.nrows()
    }

    /// Number of units (columns).
    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_observed(&self, l: usize, i: usize) -> bool {
        self.mask[(l, i)]
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    pub fn missing_count(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }

    /// Marks a cell unobserved and stores the zero placeholder.
    pub fn set_missing(&mut self, l: usize, i: usize) {
        self.values[(l, i)] = 0.0;
        self.mask[(l, i)] = false;
    }

    /// Copy of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        self.values.select_rows(rows.iter())
    }
}

/// Sets every unobserved cell to 0, leaving the mask untouched.
pub fn mask_to_zero(x: &DataMatrix) -> DataMatrix {
    let mut out = x.clone();
    for (v, &m) in out.values.iter_mut().zip(x.mask.iter()) {
        if !m {
            *v = 0.0;
        }
    }
    out
}

/// Doubly demeaned copy: `x_li - rowmean_l - colmean_i + grandmean`.
///
/// Requires a fully observed matrix.
pub fn double_demean(x: &DataMatrix) -> Result<DMatrix<f64>> {
    if !x.is_complete() {
        return Err(LpcaError::Contract(format!(
            "double demeaning needs a complete matrix, found {} missing entries",
            x.missing_count()
        )));
    }
    Ok(double_demean_matrix(x.values()))
}

pub fn double_demean_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, n) = x.shape();
    if p == 0 || n == 0 {
        return x.clone();
    }
    let row_means: Vec<f64> = (0..p).map(|l| x.row(l).sum() / n as f64).collect();
    let col_means: Vec<f64> = (0..n).map(|i| x.column(i).sum() / p as f64).collect();
    let grand = row_means.iter().sum::<f64>() / p as f64;
    DMatrix::from_fn(p, n, |l, i| x[(l, i)] - row_means[l] - col_means[i] + grand)
}

/// CSV layout options.
#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub has_header: bool,
    pub missing_token: String,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            has_header: false,
            missing_token: "NA".to_string(),
        }
    }
}

/// Parsed CSV panel: the data plus the header row, when one was present.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub data: DataMatrix,
    pub header: Option<Vec<String>>,
}

pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<DataMatrix> {
    Ok(load_csv_table(path, opts)?.data)
}

pub fn load_csv_table(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<CsvTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| LpcaError::io(path, e))?;
    read_csv(file, opts)
}

/// Parses a rectangular numeric table; rows are features, columns units.
pub fn read_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<CsvTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut header = None;
    let mut width: Option<usize> = None;
    let mut values = Vec::new();
    let mut mask = Vec::new();
    let mut n_rows = 0usize;

    for (line_idx, record) in rdr.records().enumerate() {
        let line = line_idx + 1;
        let record = record.map_err(|e| LpcaError::Parse(format!("row {line}: {e}")))?;
        if line == 1 && opts.has_header {
            header = Some(record.iter().map(str::to_string).collect());
            width = Some(record.len());
            continue;
        }
        match width {
            Some(w) if w != record.len() => {
                return Err(LpcaError::Parse(format!(
                    "ragged row {line}: expected {w} fields, found {}",
                    record.len()
                )));
            }
            None => width = Some(record.len()),
            _ => {}
        }
        for (col_idx, cell) in record.iter().enumerate() {
            if cell == opts.missing_token {
                values.push(0.0);
                mask.push(false);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    LpcaError::Parse(format!(
                        "invalid number '{cell}' at row {line}, column {}",
                        col_idx + 1
                    ))
                })?;
                values.push(v);
                mask.push(true);
            }
        }
        n_rows += 1;
    }

    let n_cols = if n_rows == 0 { 0 } else { width.unwrap_or(0) };
    if n_rows == 0 || n_cols == 0 {
        return Err(LpcaError::Parse("no data rows".into()));
    }
    let values = DMatrix::from_row_slice(n_rows, n_cols, &values);
    let mask = DMatrix::from_row_slice(n_rows, n_cols, &mask);
    Ok(CsvTable {
        data: DataMatrix::new(values, mask)?,
        header,
    })
}

/// Writes the panel back in the layout `read_csv` accepts (no header).
///
/// Values use the shortest representation that parses back to the same
/// `f64`, so a write/read cycle is lossless.
pub fn write_csv(path: impl AsRef<Path>, x: &DataMatrix, missing_token: &str) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for l in 0..x.p() {
        for i in 0..x.n() {
            if i > 0 {
                out.push(',');
            }
            if x.is_observed(l, i) {
                out.push_str(&fmt::exact(x.values[(l, i)]));
            } else {
                out.push_str(missing_token);
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| LpcaError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    Contiguous,
    Random,
}

impl std::str::FromStr for SplitMode {
    type Err = LpcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contiguous" => Ok(SplitMode::Contiguous),
            "random" => Ok(SplitMode::Random),
            other => Err(LpcaError::Config(format!("unknown split mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitMode::Contiguous => "contiguous",
            SplitMode::Random => "random",
        })
    }
}

/// Disjoint feature-index sets: `dagger` for matching, `ddagger` for PCA,
/// and an optional third block used by the covariate-adjusted estimator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowSplit {
    p: usize,
    dagger: Vec<usize>,
    ddagger: Vec<usize>,
    wr: Option<Vec<usize>>,
}

impl RowSplit {
    pub fn new(
        p: usize,
        mut dagger: Vec<usize>,
        mut ddagger: Vec<usize>,
        mut wr: Option<Vec<usize>>,
    ) -> Result<Self> {
        dagger.sort_unstable();
        ddagger.sort_unstable();
        if let Some(w) = wr.as_mut() {
            w.sort_unstable();
        }
        let mut seen = vec![false; p];
        let parts = std::iter::once(&dagger)
            .chain(std::iter::once(&ddagger))
            .chain(wr.iter());
        for part in parts {
            if part.is_empty() {
                return Err(LpcaError::Config("row split has an empty part".into()));
            }
            for &l in part {
                if l >= p {
                    return Err(LpcaError::Config(format!(
                        "row index {} outside 1..={p}",
                        l + 1
                    )));
                }
                if seen[l] {
                    return Err(LpcaError::Config(format!(
                        "row {} assigned to more than one part",
                        l + 1
                    )));
                }
                seen[l] = true;
            }
        }
        if let Some(l) = seen.iter().position(|&s| !s) {
            return Err(LpcaError::Config(format!(
                "row {} not assigned to any part",
                l + 1
            )));
        }
        Ok(Self {
            p,
            dagger,
            ddagger,
            wr,
        })
    }

    /// Two-way split with the first `n_match` rows used for matching.
    pub fn leading(p: usize, n_match: usize) -> Result<Self> {
        Self::new(p, (0..n_match).collect(), (n_match..p).collect(), None)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Matching rows.
    pub fn dagger(&self) -> &[usize] {
        &self.dagger
    }

    /// PCA rows.
    pub fn ddagger(&self) -> &[usize] {
        &self.ddagger
    }

    pub fn wr(&self) -> Option<&[usize]> {
        self.wr.as_deref()
    }

    pub fn is_three_way(&self) -> bool {
        self.wr.is_some()
    }

    /// Text form: one `name: i j k` line per part, 1-based.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| {
            v.iter()
                .map(|l| (l + 1).to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut s = format!("p: {}\ndagger: {}\nddagger: {}\n", self.p, join(&self.dagger), join(&self.ddagger));
        if let Some(w) = &self.wr {
            s.push_str(&format!("wr: {}\n", join(w)));
        }
        s
    }

    pub fn from_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut p = None;
        let mut dagger = None;
        let mut ddagger = None;
        let mut wr = None;
        for line in reader.lines() {
            let line = line.map_err(|e| LpcaError::Parse(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line
                .split_once(':')
                .ok_or_else(|| LpcaError::Parse(format!("malformed split line '{line}'")))?;
            let idx = || -> Result<Vec<usize>> {
                rest.split_whitespace()
                    .map(|t| match t.parse::<usize>() {
                        Ok(v) if v >= 1 => Ok(v - 1),
                        _ => Err(LpcaError::Parse(format!("bad row index '{t}'"))),
                    })
                    .collect()
            };
            match key.trim() {
                "p" => {
                    p = Some(rest.trim().parse::<usize>().map_err(|_| {
                        LpcaError::Parse(format!("bad row count '{}'", rest.trim()))
                    })?)
                }
                "dagger" => dagger = Some(idx()?),
                "ddagger" => ddagger = Some(idx()?),
                "wr" => wr = Some(idx()?),
                other => return Err(LpcaError::Parse(format!("unknown split key '{other}'"))),
            }
        }
        let missing = |k: &str| LpcaError::Parse(format!("split file lacks '{k}'"));
        Self::new(
            p.ok_or_else(|| missing("p"))?,
            dagger.ok_or_else(|| missing("dagger"))?,
            ddagger.ok_or_else(|| missing("ddagger"))?,
            wr,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = File::create(path).map_err(|e| LpcaError::io(path, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| LpcaError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| LpcaError::io(path, e))?;
        Self::from_text(BufReader::new(f))
    }
}

/// Number of rows a fraction claims, robust to `0.3 * 10 = 3.0000000000000004`.
fn block_size(fraction: f64, p: usize) -> usize {
    (fraction * p as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Splits `0..p` into two or three blocks with the given proportions.
///
/// Contiguous mode hands out leading rows first; random mode applies a
/// seeded permutation before cutting the blocks.
pub fn row_split(p: usize, fractions: &[f64], mode: SplitMode, seed: u64) -> Result<RowSplit> {
    if !(2..=3).contains(&fractions.len()) {
        return Err(LpcaError::Config(format!(
            "split needs 2 or 3 fractions, got {}",
            fractions.len()
        )));
    }
    if fractions.iter().any(|&f| !(f > 0.0) || !f.is_finite()) {
        return Err(LpcaError::Config("split fractions must be positive".into()));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(LpcaError::Config(format!(
            "split fractions sum to {total}, not 1"
        )));
    }
    if p < fractions.len() {
        return Err(LpcaError::Config(format!(
            "cannot split {p} rows into {} parts",
            fractions.len()
        )));
    }

    let mut order: Vec<usize> = (0..p).collect();
    if mode == SplitMode::Random {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }

    let first = block_size(fractions[0], p).min(p);
    let (second_end, has_third) = if fractions.len() == 3 {
        ((first + block_size(fractions[1], p)).min(p), true)
    } else {
        (p, false)
    };
    let dagger = order[..first].to_vec();
    let ddagger = order[first..second_end].to_vec();
    let wr = has_third.then(|| order[second_end..].to_vec());
    if dagger.is_empty() || ddagger.is_empty() || wr.as_ref().is_some_and(|w| w.is_empty()) {
        return Err(LpcaError::Config(format!(
            "fractions {fractions:?} leave an empty part for p = {p}"
        )));
    }
    RowSplit::new(p, dagger, ddagger, wr)
}
