//! Point and quantile metrics, slicing summaries and report export.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{QuantileForecast, Scaler};
use crate::nn::QUANTILES;

pub fn mae(pred: &[f64], target: &[f64]) -> f64 {
    mean(pred.iter().zip(target).map(|(p, y)| (p - y).abs()))
}

pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    mean(pred.iter().zip(target).map(|(p, y)| (p - y).powi(2)))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Plain pinball loss `q·u⁺ + (1−q)·(−u)⁺` with `u = y − ŷ_q`.
pub fn pinball(q: f64, pred: f64, target: f64) -> f64 {
    let u = target - pred;
    q * u.max(0.0) + (1.0 - q) * (-u).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub slice: String,
    pub n_points: usize,
    pub mae: f64,
    pub mse: f64,
    /// `None` when every target is zero.
    pub mape_pct: Option<f64>,
    /// Points left out of MAPE because their target is zero.
    pub mape_excluded: usize,
    /// `None` when `Σ|y| = 0`.
    pub wape: Option<f64>,
    pub wape_undefined: bool,
    /// Mean pinball loss over points and the nine quantiles.
    pub qloss: Option<f64>,
}

/// Metrics on aligned point arrays. `quantile_preds` holds one row of nine
/// quantiles per point, on the same scale as `target`.
pub fn metrics(slice: &str, pred: &[f64], target: &[f64], quantile_preds: Option<&[[f64; 9]]>) -> Result<MetricReport> {
    if pred.len() != target.len() {
        return Err(Error::Contract(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::Contract(format!("slice {slice:?} has no points")));
    }
    let nonzero: Vec<(f64, f64)> = pred.iter().zip(target).filter(|(_, y)| **y != 0.0).map(|(p, y)| (*p, *y)).collect();
    let mape_pct = (!nonzero.is_empty()).then(|| 100.0 * mean(nonzero.iter().map(|(p, y)| ((p - y) / y).abs())));
    let abs_y: f64 = target.iter().map(|y| y.abs()).sum();
    let abs_e: f64 = pred.iter().zip(target).map(|(p, y)| (p - y).abs()).sum();
    let wape = (abs_y > 0.0).then(|| abs_e / abs_y);
    let qloss = match quantile_preds {
        None => None,
        Some(q) if q.len() != target.len() => {
            return Err(Error::Contract(format!("{} quantile rows for {} targets", q.len(), target.len())))
        }
        Some(q) => Some(mean(q.iter().zip(target).flat_map(|(row, &y)| {
            QUANTILES.iter().zip(row).map(move |(&level, &p)| pinball(level, p, y))
        }))),
    };
    Ok(MetricReport {
        slice: slice.to_string(),
        n_points: pred.len(),
        mae: mae(pred, target),
        mse: mse(pred, target),
        mape_pct,
        mape_excluded: target.len() - nonzero.len(),
        wape,
        wape_undefined: wape.is_none(),
        qloss,
    })
}

/// Point metrics on the original scale from the medians, QLoss on
/// normalized values.
pub fn forecast_metrics(
    slice: &str,
    forecasts: &[QuantileForecast],
    targets: &[Vec<f64>],
    scaler: &Scaler,
) -> Result<MetricReport> {
    if forecasts.len() != targets.len() {
        return Err(Error::Contract(format!("{} forecasts for {} target windows", forecasts.len(), targets.len())));
    }
    let mut pred = Vec::new();
    let mut target = Vec::new();
    let mut quantiles = Vec::new();
    for (f, y) in forecasts.iter().zip(targets) {
        if f.horizon() != y.len() {
            return Err(Error::Contract(format!("horizon {} against {} targets", f.horizon(), y.len())));
        }
        for (h, &v) in y.iter().enumerate() {
            let row = f.values.row(h);
            pred.push(row[crate::forecast::MEDIAN]);
            target.push(v);
            quantiles.push(std::array::from_fn(|q| scaler.normalize(row[q])));
        }
    }
    let mut report = metrics(slice, &pred, &target, None)?;
    let normalized: Vec<f64> = target.iter().map(|&y| scaler.normalize(y)).collect();
    let medians: Vec<f64> = quantiles.iter().map(|r: &[f64; 9]| r[crate::forecast::MEDIAN]).collect();
    report.qloss = metrics(slice, &medians, &normalized, Some(&quantiles))?.qloss;
    Ok(report)
}

pub const COLD_START_WEEKS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColdStartRow {
    pub variant: String,
    /// MAE per week; `None` marks a gap.
    pub mae: Vec<Option<f64>>,
    pub gaps: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColdStartTable {
    pub rows: Vec<ColdStartRow>,
}

/// Point forecasts and targets for one week of one variant.
pub type WeekPoints = (Vec<f64>, Vec<f64>);

/// MAE per variant and week 0..3.
pub fn cold_start_table(per_variant: &BTreeMap<String, BTreeMap<usize, WeekPoints>>) -> Result<ColdStartTable> {
    let mut rows = Vec::new();
    for (variant, weeks) in per_variant {
        let mut maes = Vec::with_capacity(COLD_START_WEEKS);
        let mut gaps = Vec::new();
        for week in 0..COLD_START_WEEKS {
            match weeks.get(&week) {
                Some((p, y)) if !p.is_empty() => maes.push(Some(metrics(&format!("week-{week}"), p, y, None)?.mae)),
                _ => {
                    log::warn!("cold-start table: {variant} has no forecasts for week {week}");
                    maes.push(None);
                    gaps.push(week);
                }
            }
        }
        rows.push(ColdStartRow {
            variant: variant.clone(),
            mae: maes,
            gaps,
        });
    }
    Ok(ColdStartTable { rows })
}

impl ColdStartTable {
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<12}", "variant");
        for w in 0..COLD_START_WEEKS {
            out.push_str(&format!(" {:>10}", format!("week {w}")));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{:<12}", r.variant));
            for m in &r.mae {
                out.push_str(&format!(" {:>10}", m.map_or("gap".to_string(), |v| format!("{v:.4}"))));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["variant", "week", "mae"]).map_err(csv_err)?;
        for r in &self.rows {
            for (week, m) in r.mae.iter().enumerate() {
                let v = m.map_or(String::new(), |v| v.to_string());
                wr.write_record([r.variant.as_str(), &week.to_string(), &v]).map_err(csv_err)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Structure(format!("csv export failed: {e}"))
}

fn opt(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |v| format!("{v:.5}"))
}

pub fn reports_to_text(reports: &[MetricReport]) -> String {
    let width = reports.iter().map(|r| r.slice.len()).max().unwrap_or(0).max(16);
    let mut out = format!(
        "{:<width$} {:>8} {:>12} {:>12} {:>10} {:>10} {:>10}\n",
        "slice", "points", "MAE", "MSE", "MAPE%", "WAPE", "QLoss"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<width$} {:>8} {:>12.5} {:>12.5} {:>10} {:>10} {:>10}\n",
            r.slice,
            r.n_points,
            r.mae,
            r.mse,
            opt(r.mape_pct),
            opt(r.wape),
            opt(r.qloss)
        ));
    }
    out
}

pub fn reports_to_csv<W: Write>(reports: &[MetricReport], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in reports {
        wr.serialize(r).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}
