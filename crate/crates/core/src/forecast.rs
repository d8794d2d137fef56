//! Types shared by the two forecasting paths.

use std::fmt;
use std::str::FromStr;

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, Axis};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::corpus::SeriesCorpus;
use crate::error::{Error, Result};
use crate::landscape::{Fingerprint, FINGERPRINT_DIM};
use crate::nn::{Rng, QUANTILES};
use crate::sheaf::SHEAF_DIM;

/// Column of the median in the fixed quantile set.
pub const MEDIAN: usize = 4;

/// Which topology blocks a model consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "vanilla")]
    Vanilla,
    #[serde(rename = "tda")]
    Tda,
    #[serde(rename = "tda+sheaf")]
    TdaSheaf,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Vanilla, Variant::Tda, Variant::TdaSheaf];

    pub fn uses_tda(self) -> bool {
        !matches!(self, Variant::Vanilla)
    }

    pub fn uses_sheaf(self) -> bool {
        matches!(self, Variant::TdaSheaf)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Vanilla => "vanilla",
            Variant::Tda => "tda",
            Variant::TdaSheaf => "tda+sheaf",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "vanilla" => Ok(Variant::Vanilla),
            "tda" => Ok(Variant::Tda),
            "tda+sheaf" => Ok(Variant::TdaSheaf),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// H×9 forecast, one column per quantile in [`QUANTILES`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileForecast {
    pub values: Array2<f64>,
}

impl QuantileForecast {
    /// Unpacks a flat row laid out as `h · 9 + q`.
    pub fn from_flat(row: ArrayView1<f64>, horizon: usize) -> Self {
        let q = QUANTILES.len();
        assert_eq!(row.len(), horizon * q, "flat forecast length");
        Self {
            values: Array2::from_shape_fn((horizon, q), |(h, j)| row[h * q + j]),
        }
    }

    pub fn horizon(&self) -> usize {
        self.values.nrows()
    }

    pub fn median(&self) -> Vec<f64> {
        self.values.column(MEDIAN).to_vec()
    }

    /// Adjacent quantile pairs that are out of order.
    pub fn crossings(&self) -> usize {
        self.values
            .rows()
            .into_iter()
            .map(|r| r.windows(2).into_iter().filter(|w| w[1] < w[0]).count())
            .sum()
    }
}

/// Fraction of adjacent quantile pairs that cross, over a set of forecasts.
pub fn crossing_rate(forecasts: &[QuantileForecast]) -> f64 {
    let pairs: usize = forecasts.iter().map(|f| f.horizon() * (QUANTILES.len() - 1)).sum();
    if pairs == 0 {
        return 0.0;
    }
    forecasts.iter().map(QuantileForecast::crossings).sum::<usize>() as f64 / pairs as f64
}

/// Independent RNG stream for one model component, so that adding or
/// removing a component leaves the initialization of the others unchanged.
pub fn component_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Global affine normalization fitted on training targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: f64,
    pub std: f64,
}

impl Scaler {
    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    /// Population mean and std; a degenerate spread falls back to 1.
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a f64>) -> Self {
        let (mut n, mut sum, mut sq) = (0.0, 0.0, 0.0);
        for &v in values {
            n += 1.0;
            sum += v;
            sq += v * v;
        }
        if n == 0.0 {
            return Self::identity();
        }
        let mean = sum / n;
        let std = (sq / n - mean * mean).max(0.0).sqrt();
        Self {
            mean,
            std: if std > 1e-8 { std } else { 1.0 },
        }
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Topology inputs broadcast to series rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeriesFeatures {
    /// N×125, one fingerprint per series (usually shared within a group).
    pub fingerprints: Option<Array2<f64>>,
    /// N×256 spectral coordinates.
    pub sheaf: Option<Array2<f64>>,
}

impl SeriesFeatures {
    /// Assigns each series the fingerprint of its group, or the single
    /// population fingerprint under the key `"all"` when ungrouped.
    pub fn fingerprints_by_group(corpus: &SeriesCorpus, by_group: &BTreeMap<String, Fingerprint>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((corpus.n(), FINGERPRINT_DIM));
        for i in 0..corpus.n() {
            let label = corpus.group_labels().map_or("all", |g| g[i].as_str());
            let fp = by_group
                .get(label)
                .ok_or_else(|| Error::Contract(format!("no fingerprint for group {label:?}")))?;
            out.row_mut(i).assign(&ArrayView1::from(&fp.values[..]));
        }
        Ok(out)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for (name, m, dim) in [("fingerprint", &self.fingerprints, FINGERPRINT_DIM), ("sheaf", &self.sheaf, SHEAF_DIM)] {
            if let Some(m) = m {
                if m.dim() != (n, dim) {
                    return Err(Error::Contract(format!("{name} features {:?}, expected ({n}, {dim})", m.dim())));
                }
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Contract(format!("{name} features contain non-finite values")));
                }
            }
        }
        Ok(())
    }

    /// Feature rows for a list of series indices.
    pub fn gather(&self, series: &[usize]) -> (Option<Array2<f64>>, Option<Array2<f64>>) {
        let pick = |m: &Option<Array2<f64>>| m.as_ref().map(|m| m.select(Axis(0), series));
        (pick(&self.fingerprints), pick(&self.sheaf))
    }
}

/// One line of a training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
}

pub fn log_to_jsonl(log: &[EpochLog]) -> String {
    log.iter()
        .map(|e| serde_json::to_string(e).expect("log entries serialize") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    #[test]
    fn flat_layout_and_crossings() {
        let flat = Array1::from_iter((0..18).map(|x| x as f64));
        let f = QuantileForecast::from_flat(flat.view(), 2);
        assert_eq!(f.values[[1, 0]], 9.0);
        assert_eq!(f.median(), vec![4.0, 13.0]);
        assert_eq!(f.crossings(), 0);
        let mut g = f.clone();
        g.values[[0, 3]] = 100.0;
        assert_eq!(g.crossings(), 1);
        assert_eq!(crossing_rate(&[f, g]), 1.0 / 32.0);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{v}\""));
        }
        assert!("full".parse::<Variant>().is_err());
    }

    #[test]
    fn scaler_round_trip_and_degenerate_spread() {
        let s = Scaler::fit(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert_eq!(s.denormalize(s.normalize(7.5)), 7.5);
        assert_eq!(Scaler::fit(&[4.0, 4.0]).std, 1.0);
    }

    #[test]
    fn component_streams_are_independent() {
        use rand::Rng as _;
        let a: u64 = component_rng(3, 1).random();
        let b: u64 = component_rng(3, 2).random();
        assert_ne!(a, b);
        assert_eq!(a, component_rng(3, 1).random::<u64>());
    }
}
