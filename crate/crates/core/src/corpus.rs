//! Series ingestion, normalization, per-series context statistics and
//! evaluation-window slicing.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-8;

/// An N×T entity-time matrix: one row per series, one column per time step.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesCorpus {
    values: Array2<f64>,
    series_ids: Vec<String>,
    group_labels: Option<Vec<String>>,
    time_index: Vec<i64>,
}

impl SeriesCorpus {
    pub fn new(
        values: Array2<f64>,
        series_ids: Vec<String>,
        group_labels: Option<Vec<String>>,
        time_index: Vec<i64>,
    ) -> Result<Self> {
        let (n, t) = values.dim();
        if series_ids.len() != n {
            return Err(Error::Structure(format!(
                "{} series ids for {} rows",
                series_ids.len(),
                n
            )));
        }
        if let Some(groups) = &group_labels {
            if groups.len() != n {
                return Err(Error::Structure(format!(
                    "{} group labels for {} rows",
                    groups.len(),
                    n
                )));
            }
        }
        if time_index.len() != t {
            return Err(Error::Structure(format!(
                "time index has {} entries for {} columns",
                time_index.len(),
                t
            )));
        }
        if time_index.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Structure("time index must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Structure("corpus values must be finite".into()));
        }
        Ok(Self {
            values,
            series_ids,
            group_labels,
            time_index,
        })
    }

    /// Builds a corpus from row vectors with ids `s0, s1, …` and time index `0..T`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let t = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != t) {
            return Err(Error::Structure("rows have unequal lengths".into()));
        }
        let values = Array2::from_shape_fn((n, t), |(i, j)| rows[i][j]);
        let ids = (0..n).map(|i| format!("s{i}")).collect();
        Self::new(values, ids, None, (0..t as i64).collect())
    }

    pub fn with_groups(mut self, groups: Vec<String>) -> Result<Self> {
        if groups.len() != self.n() {
            return Err(Error::Structure(format!(
                "{} group labels for {} rows",
                groups.len(),
                self.n()
            )));
        }
        self.group_labels = Some(groups);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn t(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn series_ids(&self) -> &[String] {
        &self.series_ids
    }

    pub fn group_labels(&self) -> Option<&[String]> {
        self.group_labels.as_deref()
    }

    pub fn time_index(&self) -> &[i64] {
        &self.time_index
    }

    /// Sub-corpus with the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> SeriesCorpus {
        SeriesCorpus {
            values: self.values.select(Axis(0), rows),
            series_ids: rows.iter().map(|&i| self.series_ids[i].clone()).collect(),
            group_labels: self
                .group_labels
                .as_ref()
                .map(|g| rows.iter().map(|&i| g[i].clone()).collect()),
            time_index: self.time_index.clone(),
        }
    }

    /// Sub-corpus restricted to the time columns in `cols`.
    pub fn select_columns(&self, cols: Range<usize>) -> SeriesCorpus {
        SeriesCorpus {
            values: self.values.slice(ndarray::s![.., cols.clone()]).to_owned(),
            series_ids: self.series_ids.clone(),
            group_labels: self.group_labels.clone(),
            time_index: self.time_index[cols].to_vec(),
        }
    }

    /// Distinct group labels in first-appearance order with their member rows.
    pub fn groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        match &self.group_labels {
            None => out.push(("all".to_string(), (0..self.n()).collect())),
            Some(labels) => {
                for (i, g) in labels.iter().enumerate() {
                    match out.iter_mut().find(|(name, _)| name == g) {
                        Some((_, rows)) => rows.push(i),
                        None => out.push((g.clone(), vec![i])),
                    }
                }
            }
        }
        out
    }

    pub fn summary(&self, rejected_ids: Vec<String>) -> CorpusSummary {
        let mut group_counts = BTreeMap::new();
        if let Some(labels) = &self.group_labels {
            for g in labels {
                *group_counts.entry(g.clone()).or_insert(0) += 1;
            }
        }
        CorpusSummary {
            n: self.n(),
            t: self.t(),
            rejected_ids,
            group_counts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub n: usize,
    pub t: usize,
    pub rejected_ids: Vec<String>,
    pub group_counts: BTreeMap<String, usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Impute {
    /// Carry the previous observation forward; leading gaps become zero.
    #[default]
    ForwardFill,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    /// Name of the optional group column. Absent from the header means no groups.
    pub group_column: Option<String>,
    pub missing_tokens: Vec<String>,
    pub impute: Impute,
    /// Rows with more than this fraction of missing cells are rejected.
    pub reject_fraction: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            group_column: Some("group".to_string()),
            missing_tokens: vec!["".into(), "NA".into(), "NaN".into(), "nan".into(), "null".into()],
            impute: Impute::ForwardFill,
            reject_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub missing: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub corpus: SeriesCorpus,
    pub rejected: Vec<Rejection>,
    /// Number of cells filled by imputation in the retained rows.
    pub imputed_cells: usize,
}

impl Ingested {
    pub fn summary(&self) -> CorpusSummary {
        self.corpus
            .summary(self.rejected.iter().map(|r| r.id.clone()).collect())
    }
}

/// Reads a wide CSV: first column series id, remaining columns time steps,
/// plus an optional group column located by header name.
pub fn load_wide_csv(path: impl AsRef<Path>, options: &IngestOptions) -> Result<Ingested> {
    let file = std::fs::File::open(path.as_ref())?;
    read_wide_csv(file, options)
}

pub fn read_wide_csv<R: std::io::Read>(reader: R, options: &IngestOptions) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.len() < 2 {
        return Err(Error::Structure(
            "header needs an id column and at least one time column".into(),
        ));
    }
    let group_col = options
        .group_column
        .as_deref()
        .and_then(|name| header.iter().position(|h| h == name))
        .filter(|&pos| pos > 0);
    let time_cols: Vec<usize> = (1..header.len()).filter(|&c| Some(c) != group_col).collect();
    if time_cols.is_empty() {
        return Err(Error::Structure("no time columns".into()));
    }
    let parsed: Option<Vec<i64>> = time_cols
        .iter()
        .map(|&c| header[c].parse::<i64>().ok())
        .collect();
    let time_index = match parsed {
        Some(ix) if ix.windows(2).all(|w| w[1] > w[0]) => ix,
        _ => (0..time_cols.len() as i64).collect(),
    };

    let t = time_cols.len();
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    let mut groups = Vec::new();
    let mut rejected = Vec::new();
    let mut imputed_cells = 0;
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record[0].to_string();
        let mut row: Vec<Option<f64>> = Vec::with_capacity(t);
        for &c in &time_cols {
            let cell = &record[c];
            if options.missing_tokens.iter().any(|m| m == cell) {
                row.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column {:?}: cannot parse {:?} as a number", &header[c], cell),
            })?;
            row.push(if v.is_finite() { Some(v) } else { None });
        }
        let missing = row.iter().filter(|v| v.is_none()).count();
        if missing == t || missing as f64 > options.reject_fraction * t as f64 {
            log::warn!("rejecting series {id}: {missing}/{t} cells missing");
            rejected.push(Rejection { id, missing, total: t });
            continue;
        }
        imputed_cells += missing;
        rows.push(impute_row(&row, options.impute));
        groups.push(group_col.map(|c| record[c].to_string()).unwrap_or_default());
        ids.push(id);
    }
    let n = rows.len();
    let values = Array2::from_shape_fn((n, t), |(i, j)| rows[i][j]);
    let corpus = SeriesCorpus::new(
        values,
        ids,
        group_col.map(|_| groups),
        time_index,
    )?;
    Ok(Ingested {
        corpus,
        rejected,
        imputed_cells,
    })
}

/// Writes the corpus in the wide format read by [`read_wide_csv`]; a `group`
/// column follows the id when labels are present.
pub fn write_wide_csv<W: std::io::Write>(corpus: &SeriesCorpus, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string()];
    if corpus.group_labels().is_some() {
        header.push("group".to_string());
    }
    header.extend(corpus.time_index().iter().map(i64::to_string));
    w.write_record(&header).map_err(csv_error)?;
    for i in 0..corpus.n() {
        let mut rec = vec![corpus.series_ids()[i].clone()];
        if let Some(g) = corpus.group_labels() {
            rec.push(g[i].clone());
        }
        rec.extend(corpus.row(i).iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    match err.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Structure(format!(
            "line {line}: expected {expected_len} fields, found {len}"
        )),
        _ => Error::Parse {
            line,
            message: err.to_string(),
        },
    }
}

fn impute_row(row: &[Option<f64>], impute: Impute) -> Vec<f64> {
    let mut last = None;
    row.iter()
        .map(|v| match (v, impute) {
            (Some(x), _) => {
                last = Some(*x);
                *x
            }
            (None, Impute::ForwardFill) => last.unwrap_or(0.0),
            (None, Impute::Zero) => 0.0,
        })
        .collect()
}

fn mean_std(row: ArrayView1<'_, f64>) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.sum() / n;
    let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-row z-score with population standard deviation and the default floor.
pub fn zscore_per_series(corpus: &SeriesCorpus) -> SeriesCorpus {
    zscore_per_series_with(corpus, DEFAULT_SIGMA_FLOOR)
}

pub fn zscore_per_series_with(corpus: &SeriesCorpus, sigma_floor: f64) -> SeriesCorpus {
    let mut values = corpus.values.clone();
    for mut row in values.rows_mut() {
        let (mean, std) = mean_std(row.view());
        let scale = std.max(sigma_floor);
        row.mapv_inplace(|x| (x - mean) / scale);
    }
    SeriesCorpus {
        values,
        ..corpus.clone()
    }
}

/// Mean, population std, OLS trend slope and last value of one series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextStats {
    pub mean: f64,
    pub std: f64,
    pub trend_slope: f64,
    pub last_value: f64,
}

impl ContextStats {
    pub fn to_array(self) -> [f64; 4] {
        [self.mean, self.std, self.trend_slope, self.last_value]
    }

    fn from_array(a: [f64; 4]) -> Self {
        Self {
            mean: a[0],
            std: a[1],
            trend_slope: a[2],
            last_value: a[3],
        }
    }

    pub fn of_series(values: &[f64]) -> Self {
        let view = ArrayView1::from(values);
        let (mean, std) = mean_std(view);
        Self {
            mean,
            std,
            trend_slope: ols_slope(values),
            last_value: values.last().copied().unwrap_or(0.0),
        }
    }
}

/// Least-squares slope of `values` against positions `0..len`.
pub fn ols_slope(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in values.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (y - y_mean);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Raw (not cross-series normalized) statistics, one record per series.
pub fn raw_context_stats(corpus: &SeriesCorpus) -> Vec<ContextStats> {
    corpus
        .values
        .rows()
        .into_iter()
        .map(|r| ContextStats::of_series(&r.to_vec()))
        .collect()
}

/// Per-series statistics, each z-scored across series.
///
/// A statistic that is constant across series maps to all zeros.
pub fn context_stats(corpus: &SeriesCorpus) -> Vec<ContextStats> {
    zscore_stats(&raw_context_stats(corpus))
}

pub fn zscore_stats(raw: &[ContextStats]) -> Vec<ContextStats> {
    let n = raw.len() as f64;
    let arrays: Vec<[f64; 4]> = raw.iter().map(|s| s.to_array()).collect();
    let mut out = arrays.clone();
    for k in 0..4 {
        let mean = arrays.iter().map(|a| a[k]).sum::<f64>() / n;
        let std = (arrays.iter().map(|a| (a[k] - mean).powi(2)).sum::<f64>() / n).sqrt();
        let constant = std <= 1e-12 * (1.0 + mean.abs());
        for (o, a) in out.iter_mut().zip(&arrays) {
            o[k] = if constant { 0.0 } else { (a[k] - mean) / std };
        }
    }
    out.into_iter().map(ContextStats::from_array).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Sliding windows over the whole series, split chronologically.
    Rolling,
    /// Launch windows: `w` weeks of history, earlier context forced to zero.
    ColdStart { weeks: Vec<usize> },
    /// Exactly one window per series whose targets are columns `start..=end`.
    Tagged { start: usize, end: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub context_len: usize,
    pub horizon: usize,
    pub stride: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub mode: WindowMode,
}

impl WindowSpec {
    pub fn rolling(context_len: usize, horizon: usize) -> Self {
        Self {
            context_len,
            horizon,
            stride: 1,
            val_fraction: 0.15,
            test_fraction: 0.15,
            mode: WindowMode::Rolling,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_mode(mut self, mode: WindowMode) -> Self {
        self.mode = mode;
        self
    }
}

/// A (context, target) pair for one series.
///
/// The context covers positions `origin - context_len .. origin`; positions
/// before zero are padding and read as zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub series: usize,
    pub origin: usize,
    pub context_len: usize,
    pub horizon: usize,
    pub split: Split,
    /// Weeks of post-launch history for cold-start windows.
    pub week: Option<usize>,
}

impl Window {
    pub fn context_indices(&self) -> Vec<Option<usize>> {
        (0..self.context_len)
            .map(|k| (self.origin + k).checked_sub(self.context_len))
            .collect()
    }

    pub fn target_indices(&self) -> Range<usize> {
        self.origin..self.origin + self.horizon
    }

    pub fn context_values(&self, corpus: &SeriesCorpus) -> Vec<f64> {
        let row = corpus.row(self.series);
        self.context_indices()
            .into_iter()
            .map(|ix| ix.map_or(0.0, |i| row[i]))
            .collect()
    }

    pub fn target_values(&self, corpus: &SeriesCorpus) -> Vec<f64> {
        let row = corpus.row(self.series);
        self.target_indices().map(|i| row[i]).collect()
    }

    /// Time stamp of the last context step (or the first target step at launch).
    pub fn anchor_time(&self, corpus: &SeriesCorpus) -> i64 {
        corpus.time_index()[self.origin.saturating_sub(1)]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowSet {
    pub windows: Vec<Window>,
}

impl WindowSet {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Window> {
        self.windows.iter().filter(move |w| w.split == split)
    }

    pub fn for_series(&self, series: usize) -> impl Iterator<Item = &Window> {
        self.windows.iter().filter(move |w| w.series == series)
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

pub fn slice_windows(corpus: &SeriesCorpus, spec: &WindowSpec) -> Result<WindowSet> {
    let t = corpus.t();
    let (l, h) = (spec.context_len, spec.horizon);
    if l + h > t {
        return Err(Error::InfeasibleWindow {
            context: l,
            horizon: h,
            len: t,
        });
    }
    if h == 0 || l == 0 || spec.stride == 0 {
        return Err(Error::Config(
            "context length, horizon and stride must be positive".into(),
        ));
    }
    let mut windows = Vec::new();
    match &spec.mode {
        WindowMode::Rolling => {
            let holdout = spec.val_fraction + spec.test_fraction;
            if !(0.0..1.0).contains(&holdout) {
                return Err(Error::Config("validation + test fraction must be in [0, 1)".into()));
            }
            let val_start = t - (t as f64 * holdout).round() as usize;
            let test_start = t - (t as f64 * spec.test_fraction).round() as usize;
            for series in 0..corpus.n() {
                let mut origin = l;
                while origin + h <= t {
                    let last = origin + h - 1;
                    let split = if last >= test_start {
                        Split::Test
                    } else if last >= val_start {
                        Split::Validation
                    } else {
                        Split::Train
                    };
                    windows.push(Window {
                        series,
                        origin,
                        context_len: l,
                        horizon: h,
                        split,
                        week: None,
                    });
                    origin += spec.stride;
                }
            }
        }
        WindowMode::ColdStart { weeks } => {
            for series in 0..corpus.n() {
                for &w in weeks {
                    if w + h > t {
                        return Err(Error::InfeasibleWindow {
                            context: w,
                            horizon: h,
                            len: t,
                        });
                    }
                    windows.push(Window {
                        series,
                        origin: w,
                        context_len: l,
                        horizon: h,
                        split: Split::Test,
                        week: Some(w),
                    });
                }
            }
        }
        WindowMode::Tagged { start, end } => {
            if end < start || end - start + 1 != h {
                return Err(Error::Config(format!(
                    "tagged window [{start}, {end}] does not span horizon {h}"
                )));
            }
            if *start < l || *end >= t {
                return Err(contract(format!(
                    "tagged window [{start}, {end}] needs {l} context steps inside a series of length {t}"
                )));
            }
            for series in 0..corpus.n() {
                windows.push(Window {
                    series,
                    origin: *start,
                    context_len: l,
                    horizon: h,
                    split: Split::Test,
                    week: None,
                });
            }
        }
    }
    Ok(WindowSet { windows })
}
