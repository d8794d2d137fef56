//! Randomized topology controls and the controlled comparison harness.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adapter::{
    build_adapter_data, fit_normalizers, train_adapter_on, AdapterConfig, AdapterData, BaseForecastCache,
};
use crate::artifact::config_hash;
use crate::corpus::{SeriesCorpus, Split, Window};
use crate::error::{Error, Result};
use crate::eval::mae;
use crate::forecast::{component_rng, SeriesFeatures, Variant};
use crate::landscape::FINGERPRINT_DIM;
use crate::nn::{rng_from_seed, Rng};
use crate::par::{self, Execution};

/// I.i.d. standard normal vector of length `dim`.
pub fn rand_tda(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// `n` independent noise fingerprints, one per row.
pub fn rand_tda_rows(n: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, FINGERPRINT_DIM), || StandardNormal.sample(rng))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShuffledTda {
    /// Permuted group label per series.
    pub assignment: Vec<String>,
    /// N×125 fingerprint rows under the permuted assignment.
    pub fingerprints: Array2<f64>,
    /// False when fewer than two groups made shuffling a no-op.
    pub shuffled: bool,
}

/// Permutes the series-to-group assignment uniformly, then looks up each
/// series' fingerprint under its new label.
pub fn shuffle_tda(
    fingerprints: &BTreeMap<String, Vec<f64>>,
    assignment: &[String],
    seed: u64,
) -> Result<ShuffledTda> {
    let distinct: std::collections::BTreeSet<&String> = assignment.iter().collect();
    let mut permuted = assignment.to_vec();
    let shuffled = distinct.len() >= 2;
    if shuffled {
        permuted.shuffle(&mut rng_from_seed(seed));
    } else {
        log::warn!("shuffle control needs at least two groups; assignment left unchanged");
    }
    let mut rows = Array2::zeros((assignment.len(), FINGERPRINT_DIM));
    for (i, label) in permuted.iter().enumerate() {
        let fp = fingerprints
            .get(label)
            .ok_or_else(|| Error::Contract(format!("no fingerprint for group {label:?}")))?;
        if fp.len() != FINGERPRINT_DIM {
            return Err(Error::Contract(format!("fingerprint for {label:?} has {} values", fp.len())));
        }
        rows.row_mut(i).assign(&Array1::from(fp.clone()));
    }
    Ok(ShuffledTda {
        assignment: permuted,
        fingerprints: rows,
        shuffled,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Control {
    #[serde(rename = "vanilla")]
    Vanilla,
    #[serde(rename = "rand")]
    Rand,
    #[serde(rename = "shuffle")]
    Shuffle,
    #[serde(rename = "tda")]
    Tda,
    #[serde(rename = "tda+sheaf")]
    TdaSheaf,
}

impl Control {
    pub const ALL: [Control; 5] = [Control::Vanilla, Control::Rand, Control::Shuffle, Control::Tda, Control::TdaSheaf];

    pub fn variant(self) -> Variant {
        match self {
            Control::Vanilla => Variant::Vanilla,
            Control::Rand | Control::Shuffle | Control::Tda => Variant::Tda,
            Control::TdaSheaf => Variant::TdaSheaf,
        }
    }
}

impl fmt::Display for Control {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Control::Vanilla => "vanilla",
            Control::Rand => "rand",
            Control::Shuffle => "shuffle",
            Control::Tda => "tda",
            Control::TdaSheaf => "tda+sheaf",
        })
    }
}

impl FromStr for Control {
    type Err = Error;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Control::ALL
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown control {s:?}")))
    }
}

pub fn parse_controls(list: &str) -> Result<Vec<Control>> {
    list.split(',').map(|s| s.trim().parse()).collect()
}

/// Everything the controls share: data, real features, cache and the
/// group fingerprints needed by the shuffle control.
#[derive(Clone, Debug)]
pub struct ControlData<'a> {
    pub corpus: &'a SeriesCorpus,
    pub windows: &'a [Window],
    pub features: &'a SeriesFeatures,
    pub group_fingerprints: &'a BTreeMap<String, Vec<f64>>,
    pub cache: &'a BaseForecastCache,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlJob {
    pub control: Control,
    pub config: AdapterConfig,
}

pub fn jobs_for(controls: &[Control], config: &AdapterConfig) -> Vec<ControlJob> {
    controls
        .iter()
        .map(|&control| ControlJob {
            control,
            config: config.clone(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: Control,
    /// Median over seeds of validation MAE.
    pub mae: f64,
    pub per_seed_mae: Vec<f64>,
    /// Median MAE minus the vanilla median MAE.
    pub delta: Option<f64>,
    pub delta_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, control: Control) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.variant == control)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<12} {:>12} {:>12} {:>9}\n", "variant", "MAE", "delta", "delta%");
        for r in &self.rows {
            let delta = r.delta.map_or("-".to_string(), |d| format!("{d:+.5}"));
            let pct = r.delta_pct.map_or("-".to_string(), |d| format!("{d:+.2}%"));
            out.push_str(&format!("{:<12} {:>12.5} {:>12} {:>9}\n", r.variant.to_string(), r.mae, delta, pct));
        }
        out
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// Noise stream for the rand control, far from the model streams.
const RAND_STREAM: u64 = 1 << 40;

/// Features for one control; real fingerprints are never modified.
fn control_data(
    data: &ControlData,
    control: Control,
    windows: &[Window],
    seed: u64,
    split_tag: u64,
    norm: &crate::adapter::ContextNorm,
) -> Result<AdapterData> {
    let variant = control.variant();
    let features = match control {
        Control::Shuffle => {
            let labels: Vec<String> = match data.corpus.group_labels() {
                Some(g) => g.to_vec(),
                None => vec!["all".to_string(); data.corpus.n()],
            };
            let shuffled = shuffle_tda(data.group_fingerprints, &labels, seed)?;
            SeriesFeatures {
                fingerprints: Some(shuffled.fingerprints),
                sheaf: data.features.sheaf.clone(),
            }
        }
        _ => data.features.clone(),
    };
    let mut out = build_adapter_data(data.corpus, windows, &features, data.cache, variant, norm)?;
    if control == Control::Rand {
        let mut rng = component_rng(seed, RAND_STREAM + split_tag);
        out.batch.tda = rand_tda_rows(windows.len(), &mut rng);
    }
    Ok(out)
}

/// Trains one adapter per (job, seed). The rand control draws fresh noise
/// for every window, so it carries no information about the series. and reports median validation MAE.
pub fn run_controls(data: &ControlData, jobs: &[ControlJob], seeds: &[u64], exec: Execution) -> Result<ComparisonTable> {
    let hashes: Vec<String> = jobs.iter().map(|j| config_hash(&j.config)).collect::<Result<_>>()?;
    if hashes.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Contract(
            "control variants use different model configurations; refusing to compare".into(),
        ));
    }
    if jobs.is_empty() || seeds.is_empty() {
        return Err(Error::Config("run_controls needs at least one variant and one seed".into()));
    }
    let train: Vec<Window> = data.windows.iter().filter(|w| w.split == Split::Train).cloned().collect();
    let val: Vec<Window> = data.windows.iter().filter(|w| w.split == Split::Validation).cloned().collect();
    if val.is_empty() {
        return Err(Error::Contract("no validation windows to score controls on".into()));
    }
    let (scaler, norm) = fit_normalizers(data.corpus, &train);
    let tasks: Vec<(usize, u64)> = (0..jobs.len()).flat_map(|j| seeds.iter().map(move |&s| (j, s))).collect();
    let results = par::map_slice(&tasks, exec, |&(j, seed)| -> Result<f64> {
        let job = &jobs[j];
        let train_data = control_data(data, job.control, &train, seed, 0, &norm)?;
        let val_data = control_data(data, job.control, &val, seed, 1, &norm)?;
        let trained = train_adapter_on(&train_data, None, &job.config, job.control.variant(), scaler, norm, seed)?;
        let forecasts = trained.model.predict(&val_data.batch, Execution::Sequential)?;
        let medians: Vec<f64> = forecasts.iter().flat_map(|f| f.median()).collect();
        let targets: Vec<f64> = val_data.targets.iter().copied().collect();
        Ok(mae(&medians, &targets))
    });
    let mut per_job: Vec<Vec<f64>> = vec![Vec::new(); jobs.len()];
    for (&(j, _), r) in tasks.iter().zip(results) {
        per_job[j].push(r?);
    }
    let vanilla = jobs
        .iter()
        .position(|j| j.control == Control::Vanilla)
        .map(|j| median(&per_job[j]));
    let rows = jobs
        .iter()
        .zip(per_job)
        .map(|(job, maes)| {
            let m = median(&maes);
            ComparisonRow {
                variant: job.control,
                mae: m,
                per_seed_mae: maes,
                delta: vanilla.map(|v| m - v),
                delta_pct: vanilla.filter(|v| *v != 0.0).map(|v| 100.0 * (m - v) / v),
            }
        })
        .collect();
    Ok(ComparisonTable {
        config_hash: hashes[0].clone(),
        seeds: seeds.to_vec(),
        rows,
    })
}
