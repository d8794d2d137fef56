//! Four-branch topology adapter producing a residual correction over cached
//! base forecasts, plus the base-forecast cache and its providers.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{ContextStats, SeriesCorpus, Split, Window};
use crate::error::{Error, Result};
use crate::forecast::{component_rng, EpochLog, QuantileForecast, Scaler, SeriesFeatures, Variant};
use crate::landscape::FINGERPRINT_DIM;
use crate::nn::{
    huber_quantile_loss, AdamW, AdamWConfig, Checkpoint, Ctx, Gelu, Layer, LayerNorm, Linear, LrSchedule, Module,
    Param, Relu, Rng, QUANTILES,
};
use crate::par::{self, Execution};
use crate::sheaf::SHEAF_DIM;

pub const CONTEXT_DIM: usize = 4;
pub const BRANCHES: usize = 4;

// ---------------------------------------------------------------------------
// Base forecasts

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseProvider {
    /// Repeats the last `period` context values.
    SeasonalNaive { period: usize },
    /// Last value plus the mean slope over the context.
    Drift,
    /// Precomputed forecasts from a CSV with `series_id,window_id,h,value`.
    ExternalFile { path: String },
}

impl BaseProvider {
    pub fn tag(&self) -> String {
        match self {
            BaseProvider::SeasonalNaive { period } => format!("seasonal_naive({period})"),
            BaseProvider::Drift => "drift".into(),
            BaseProvider::ExternalFile { path } => format!("external_file({path})"),
        }
    }
}

pub fn seasonal_naive(context: &[f64], period: usize, horizon: usize) -> Result<Vec<f64>> {
    if period == 0 || period > context.len() {
        return Err(Error::Config(format!(
            "seasonal period {period} must be in 1..={}",
            context.len()
        )));
    }
    let start = context.len() - period;
    Ok((0..horizon).map(|h| context[start + h % period]).collect())
}

pub fn drift(context: &[f64], horizon: usize) -> Vec<f64> {
    let last = context.last().copied().unwrap_or(0.0);
    let slope = if context.len() > 1 {
        (last - context[0]) / (context.len() - 1) as f64
    } else {
        0.0
    };
    (0..horizon).map(|h| last + (h + 1) as f64 * slope).collect()
}

/// Median base forecasts keyed by `(series_id, window_id)`, where the
/// window id is the window's origin column.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseForecastCache {
    pub provider: String,
    pub horizon: usize,
    pub entries: BTreeMap<(String, usize), Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    series_id: String,
    window_id: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    provider: String,
    horizon: usize,
    entries: Vec<CacheEntry>,
}

impl Serialize for BaseForecastCache {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CacheFile {
            provider: self.provider.clone(),
            horizon: self.horizon,
            entries: self
                .entries
                .iter()
                .map(|((id, w), v)| CacheEntry {
                    series_id: id.clone(),
                    window_id: *w,
                    values: v.clone(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BaseForecastCache {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = CacheFile::deserialize(d)?;
        Ok(Self {
            provider: f.provider,
            horizon: f.horizon,
            entries: f.entries.into_iter().map(|e| ((e.series_id, e.window_id), e.values)).collect(),
        })
    }
}

impl BaseForecastCache {
    pub fn key(corpus: &SeriesCorpus, w: &Window) -> (String, usize) {
        (corpus.series_ids()[w.series].clone(), w.origin)
    }

    pub fn get(&self, corpus: &SeriesCorpus, w: &Window) -> Option<&[f64]> {
        self.entries.get(&Self::key(corpus, w)).map(Vec::as_slice)
    }

    /// Checks that every window has a finite entry of the right length.
    pub fn check_coverage(&self, corpus: &SeriesCorpus, windows: &[Window]) -> Result<()> {
        let mut gaps = Vec::new();
        for w in windows {
            let key = Self::key(corpus, w);
            match self.entries.get(&key) {
                Some(v) if v.len() == self.horizon && v.iter().all(|x| x.is_finite()) => {}
                Some(v) if v.len() == self.horizon => {
                    return Err(Error::Contract(format!("non-finite base forecast for {key:?}")));
                }
                _ => gaps.push(key),
            }
        }
        if self.horizon != windows.first().map_or(self.horizon, |w| w.horizon) {
            return Err(Error::Config(format!(
                "cache horizon {} does not match window horizon {}",
                self.horizon, windows[0].horizon
            )));
        }
        gaps.sort();
        gaps.dedup();
        if gaps.is_empty() {
            Ok(())
        } else {
            Err(Error::Coverage(gaps))
        }
    }

    /// Long CSV: `series_id,window_id,h,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Structure(format!("base forecast CSV: {e}"));
        out.write_record(["series_id", "window_id", "h", "value"]).map_err(err)?;
        for ((id, window), values) in &self.entries {
            for (h, v) in values.iter().enumerate() {
                out.write_record([id.clone(), window.to_string(), h.to_string(), v.to_string()])
                    .map_err(err)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, horizon: usize, provider: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let mut partial: BTreeMap<(String, usize), Vec<Option<f64>>> = BTreeMap::new();
        for (line, rec) in reader.records().enumerate() {
            let line = line as u64 + 2;
            let rec = rec.map_err(|e| Error::Structure(format!("base forecast CSV: {e}")))?;
            if rec.len() != 4 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected 4 fields, got {}", rec.len()),
                });
            }
            let parse_err = |what: &str, v: &str| Error::Parse {
                line,
                message: format!("invalid {what} {v:?}"),
            };
            let window: usize = rec[1].parse().map_err(|_| parse_err("window_id", &rec[1]))?;
            let h: usize = rec[2].parse().map_err(|_| parse_err("h", &rec[2]))?;
            let value: f64 = rec[3].parse().map_err(|_| parse_err("value", &rec[3]))?;
            if h >= horizon {
                return Err(parse_err("h", &rec[2]));
            }
            partial.entry((rec[0].to_string(), window)).or_insert_with(|| vec![None; horizon])[h] = Some(value);
        }
        let mut entries = BTreeMap::new();
        let mut gaps = Vec::new();
        for (key, values) in partial {
            match values.into_iter().collect::<Option<Vec<f64>>>() {
                Some(v) => {
                    entries.insert(key, v);
                }
                None => gaps.push(key),
            }
        }
        if !gaps.is_empty() {
            return Err(Error::Coverage(gaps));
        }
        Ok(Self {
            provider: provider.to_string(),
            horizon,
            entries,
        })
    }
}

/// Builds the cache for `windows`, in parallel over windows.
pub fn build_base_cache(
    corpus: &SeriesCorpus,
    windows: &[Window],
    provider: &BaseProvider,
    exec: Execution,
) -> Result<BaseForecastCache> {
    let horizon = windows.first().map_or(0, |w| w.horizon);
    if let BaseProvider::ExternalFile { path } = provider {
        let file = std::fs::File::open(path)?;
        let cache = BaseForecastCache::read_csv(file, horizon, &provider.tag())?;
        cache.check_coverage(corpus, windows)?;
        return Ok(cache);
    }
    let forecasts = par::map_slice(windows, exec, |w| {
        let context = w.context_values(corpus);
        match provider {
            BaseProvider::SeasonalNaive { period } => seasonal_naive(&context, *period, w.horizon),
            BaseProvider::Drift => Ok(drift(&context, w.horizon)),
            BaseProvider::ExternalFile { .. } => unreachable!("handled above"),
        }
    });
    let mut entries = BTreeMap::new();
    for (w, f) in windows.iter().zip(forecasts) {
        entries.insert(BaseForecastCache::key(corpus, w), f?);
    }
    Ok(BaseForecastCache {
        provider: provider.tag(),
        horizon,
        entries,
    })
}

// ---------------------------------------------------------------------------
// Model

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub horizon: usize,
    pub branch_dim: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    /// Per-epoch schedule.
    pub schedule: LrSchedule,
    pub huber_delta: f64,
}

impl AdapterConfig {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            branch_dim: 128,
            hidden_dim: 256,
            epochs: 30,
            batch_size: 64,
            optimizer: AdamWConfig {
                lr: 3e-4,
                ..AdamWConfig::default()
            },
            schedule: LrSchedule::cosine(),
            huber_delta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.branch_dim == 0 || self.hidden_dim == 0 || self.batch_size == 0 {
            return Err(Error::Config("adapter dimensions and batch size must be positive".into()));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.horizon * QUANTILES.len()
    }
}

/// Branch: `Linear → GELU → Linear → LayerNorm` or `Linear → LayerNorm`.
#[derive(Clone, Debug)]
struct Branch {
    first: Linear,
    second: Option<(Gelu, Linear)>,
    norm: LayerNorm,
}

impl Branch {
    fn two_layer(name: &str, inputs: usize, dim: usize, rng: &mut Rng) -> Self {
        Self {
            first: Linear::new(&format!("{name}.1"), inputs, dim, rng),
            second: Some((Gelu::default(), Linear::new(&format!("{name}.2"), dim, dim, rng))),
            norm: LayerNorm::new(&format!("{name}.norm"), dim),
        }
    }

    fn linear(name: &str, inputs: usize, dim: usize, rng: &mut Rng) -> Self {
        Self {
            first: Linear::new(&format!("{name}.1"), inputs, dim, rng),
            second: None,
            norm: LayerNorm::new(&format!("{name}.norm"), dim),
        }
    }
}

impl Module for Branch {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.first.params();
        p.extend(self.second.iter().flat_map(|(_, l)| l.params()));
        p.extend(self.norm.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.first.params_mut();
        p.extend(self.second.iter_mut().flat_map(|(_, l)| l.params_mut()));
        p.extend(self.norm.params_mut());
        p
    }
}

impl Layer for Branch {
    fn forward(&mut self, x: &Array2<f64>, ctx: &mut Ctx) -> Result<Array2<f64>> {
        let mut h = self.first.forward(x, ctx)?;
        if let Some((act, l)) = &mut self.second {
            h = act.forward(&h, ctx)?;
            h = l.forward(&h, ctx)?;
        }
        self.norm.forward(&h, ctx)
    }

    fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let mut g = self.norm.backward(grad);
        if let Some((act, l)) = &mut self.second {
            g = l.backward(&g);
            g = act.backward(&g);
        }
        self.first.backward(&g)
    }
}

/// Per-feature standardization of the four context statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextNorm {
    pub mean: [f64; CONTEXT_DIM],
    pub std: [f64; CONTEXT_DIM],
}

impl ContextNorm {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; CONTEXT_DIM],
            std: [1.0; CONTEXT_DIM],
        }
    }

    pub fn fit(stats: &[ContextStats]) -> Self {
        let mut out = Self::identity();
        for k in 0..CONTEXT_DIM {
            let column: Vec<f64> = stats.iter().map(|s| s.to_array()[k]).collect();
            let s = Scaler::fit(&column);
            out.mean[k] = s.mean;
            out.std[k] = s.std;
        }
        out
    }

    pub fn apply(&self, stats: &ContextStats) -> [f64; CONTEXT_DIM] {
        let a = stats.to_array();
        std::array::from_fn(|k| (a[k] - self.mean[k]) / self.std[k])
    }
}

/// One row per window. `base` is on the original scale; the other inputs
/// are already normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterBatch {
    pub tda: Array2<f64>,
    pub sheaf: Array2<f64>,
    pub ctx: Array2<f64>,
    pub base: Array2<f64>,
}

impl AdapterBatch {
    pub fn len(&self) -> usize {
        self.base.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            tda: self.tda.select(Axis(0), rows),
            sheaf: self.sheaf.select(Axis(0), rows),
            ctx: self.ctx.select(Axis(0), rows),
            base: self.base.select(Axis(0), rows),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adapter {
    pub config: AdapterConfig,
    pub variant: Variant,
    pub scaler: Scaler,
    pub context_norm: ContextNorm,
    tda: Branch,
    sheaf: Branch,
    context: Branch,
    forecast: Branch,
    pub out1: Linear,
    out_act: Relu,
    /// Zero-initialized, so the adapter starts as the identity on the base.
    pub out2: Linear,
    batch: usize,
}

/// Stream ids: shared parts never depend on the variant.
mod stream {
    pub const TDA: u64 = 1;
    pub const SHEAF: u64 = 2;
    pub const CONTEXT: u64 = 3;
    pub const FORECAST: u64 = 4;
    pub const OUTPUT: u64 = 5;
}

impl Adapter {
    pub fn new(config: &AdapterConfig, variant: Variant, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.branch_dim;
        Ok(Self {
            config: config.clone(),
            variant,
            scaler: Scaler::identity(),
            context_norm: ContextNorm::identity(),
            tda: Branch::two_layer("tda", FINGERPRINT_DIM, d, &mut component_rng(seed, stream::TDA)),
            sheaf: Branch::two_layer("sheaf", SHEAF_DIM, d, &mut component_rng(seed, stream::SHEAF)),
            context: Branch::linear("context", CONTEXT_DIM, d, &mut component_rng(seed, stream::CONTEXT)),
            forecast: Branch::linear("forecast", config.horizon, d, &mut component_rng(seed, stream::FORECAST)),
            out1: Linear::new("out.1", BRANCHES * d, config.hidden_dim, &mut component_rng(seed, stream::OUTPUT)),
            out_act: Relu::default(),
            out2: Linear::zeros("out.2", config.hidden_dim, config.output_dim()),
            batch: 0,
        })
    }

    /// Which of (tda, sheaf, context, forecast) feed the output MLP.
    pub fn enabled(&self) -> [bool; BRANCHES] {
        [self.variant.uses_tda(), self.variant.uses_sheaf(), true, true]
    }

    fn check(&self, b: &AdapterBatch) -> Result<()> {
        let n = b.len();
        for (name, m, cols) in [
            ("fingerprint", &b.tda, FINGERPRINT_DIM),
            ("sheaf", &b.sheaf, SHEAF_DIM),
            ("context", &b.ctx, CONTEXT_DIM),
            ("base", &b.base, self.config.horizon),
        ] {
            if m.dim() != (n, cols) {
                return Err(Error::Contract(format!("adapter {name} input {:?}, expected ({n}, {cols})", m.dim())));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Contract(format!("adapter {name} input is not finite")));
            }
        }
        Ok(())
    }

    /// Normalized residual Δ, B×(H·9) with layout `h · 9 + q`.
    pub fn forward(&mut self, b: &AdapterBatch, ctx: &mut Ctx) -> Result<Array2<f64>> {
        self.check(b)?;
        let d = self.config.branch_dim;
        let base_norm = b.base.mapv(|v| self.scaler.normalize(v));
        let enabled = self.enabled();
        let mut concat = Array2::zeros((b.len(), BRANCHES * d));
        let inputs = [&b.tda, &b.sheaf, &b.ctx, &base_norm];
        let branches = [&mut self.tda, &mut self.sheaf, &mut self.context, &mut self.forecast];
        for (k, (branch, x)) in branches.into_iter().zip(inputs).enumerate() {
            if enabled[k] {
                let h = branch.forward(x, ctx)?;
                concat.slice_mut(s![.., k * d..(k + 1) * d]).assign(&h);
            }
        }
        let h = self.out1.forward(&concat, ctx)?;
        let h = self.out_act.forward(&h, ctx)?;
        self.batch = b.len();
        self.out2.forward(&h, ctx)
    }

    pub fn backward(&mut self, grad: &Array2<f64>) {
        let d = self.config.branch_dim;
        let g = self.out2.backward(grad);
        let g = self.out_act.backward(&g);
        let gc = self.out1.backward(&g);
        let enabled = self.enabled();
        let branches = [&mut self.tda, &mut self.sheaf, &mut self.context, &mut self.forecast];
        for (k, branch) in branches.into_iter().enumerate() {
            if enabled[k] {
                branch.backward(&gc.slice(s![.., k * d..(k + 1) * d]).to_owned());
            }
        }
    }

    /// `base[h] + σ · Δ[h][q]`, so a zero Δ returns the base bit for bit.
    pub fn compose(&self, base: &Array2<f64>, delta: &Array2<f64>) -> Vec<QuantileForecast> {
        let q = QUANTILES.len();
        base.rows()
            .into_iter()
            .zip(delta.rows())
            .map(|(b, dl)| QuantileForecast {
                values: Array2::from_shape_fn((b.len(), q), |(h, j)| b[h] + self.scaler.std * dl[h * q + j]),
            })
            .collect()
    }

    pub fn predict(&self, b: &AdapterBatch, exec: Execution) -> Result<Vec<QuantileForecast>> {
        self.check(b)?;
        const CHUNK: usize = 256;
        let chunks = b.len().div_ceil(CHUNK);
        let parts = par::map_range(chunks, exec, |c| {
            let rows: Vec<usize> = (c * CHUNK..((c + 1) * CHUNK).min(b.len())).collect();
            let sub = b.select(&rows);
            let mut model = self.clone();
            let delta = model.forward(&sub, &mut Ctx::eval())?;
            Ok(model.compose(&sub.base, &delta))
        });
        Ok(parts.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::capture(self);
        ck.metadata = serde_json::json!({
            "kind": "adapter",
            "config": self.config,
            "variant": self.variant,
            "scaler": self.scaler,
            "context_norm": self.context_norm,
        });
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = &ck.metadata;
        if meta["kind"] != "adapter" {
            return Err(Error::Contract("checkpoint does not hold an adapter".into()));
        }
        let config: AdapterConfig = serde_json::from_value(meta["config"].clone())?;
        let variant: Variant = serde_json::from_value(meta["variant"].clone())?;
        let mut model = Self::new(&config, variant, 0)?;
        model.scaler = serde_json::from_value(meta["scaler"].clone())?;
        model.context_norm = serde_json::from_value(meta["context_norm"].clone())?;
        ck.restore_into(&mut model)?;
        Ok(model)
    }

    pub fn output_mlp_shapes(&self) -> Vec<[usize; 2]> {
        self.out1.params().iter().chain(self.out2.params().iter()).map(|p| p.shape()).collect()
    }
}

impl Module for Adapter {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.tda.params();
        p.extend(self.sheaf.params());
        p.extend(self.context.params());
        p.extend(self.forecast.params());
        p.extend(self.out1.params());
        p.extend(self.out2.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.tda.params_mut();
        p.extend(self.sheaf.params_mut());
        p.extend(self.context.params_mut());
        p.extend(self.forecast.params_mut());
        p.extend(self.out1.params_mut());
        p.extend(self.out2.params_mut());
        p
    }
}

// ---------------------------------------------------------------------------
// Data and training

/// Inputs and raw targets for a list of windows.
#[derive(Clone, Debug)]
pub struct AdapterData {
    pub batch: AdapterBatch,
    /// B×H on the original scale.
    pub targets: Array2<f64>,
    pub windows: Vec<Window>,
}

impl AdapterData {
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            batch: self.batch.select(rows),
            targets: self.targets.select(Axis(0), rows),
            windows: rows.iter().map(|&r| self.windows[r].clone()).collect(),
        }
    }
}

/// Raw context statistics of each window's context.
pub fn window_stats(corpus: &SeriesCorpus, windows: &[Window]) -> Vec<ContextStats> {
    windows
        .iter()
        .map(|w| ContextStats::of_series(&w.context_values(corpus)))
        .collect()
}

/// Gathers inputs; topology blocks the variant does not use are zero.
pub fn build_adapter_data(
    corpus: &SeriesCorpus,
    windows: &[Window],
    features: &SeriesFeatures,
    cache: &BaseForecastCache,
    variant: Variant,
    context_norm: &ContextNorm,
) -> Result<AdapterData> {
    features.validate(corpus.n())?;
    cache.check_coverage(corpus, windows)?;
    let n = windows.len();
    let h = cache.horizon;
    let series: Vec<usize> = windows.iter().map(|w| w.series).collect();
    let (tda, sheaf) = features.gather(&series);
    let require = |active: bool, m: Option<Array2<f64>>, name: &str, dim: usize| -> Result<Array2<f64>> {
        match (active, m) {
            (true, Some(m)) => Ok(m),
            (true, None) => Err(Error::Config(format!("variant {variant} needs {name} features"))),
            (false, _) => Ok(Array2::zeros((n, dim))),
        }
    };
    let tda = require(variant.uses_tda(), tda, "fingerprint", FINGERPRINT_DIM)?;
    let sheaf = require(variant.uses_sheaf(), sheaf, "sheaf", SHEAF_DIM)?;
    let stats = window_stats(corpus, windows);
    let ctx = Array2::from_shape_fn((n, CONTEXT_DIM), |(i, k)| context_norm.apply(&stats[i])[k]);
    let mut base = Array2::zeros((n, h));
    let mut targets = Array2::zeros((n, h));
    for (i, w) in windows.iter().enumerate() {
        let b = cache.get(corpus, w).expect("coverage checked");
        base.row_mut(i).assign(&Array1::from(b.to_vec()));
        targets.row_mut(i).assign(&Array1::from(w.target_values(corpus)));
    }
    Ok(AdapterData {
        batch: AdapterBatch { tda, sheaf, ctx, base },
        targets,
        windows: windows.to_vec(),
    })
}

/// Loss of Δ against the normalized residual `(y − base) / σ`.
pub fn residual_loss(
    delta: &Array2<f64>,
    base: &Array2<f64>,
    targets: &Array2<f64>,
    scaler: &Scaler,
    huber_delta: f64,
) -> Result<(f64, Array2<f64>)> {
    let q = QUANTILES.len();
    let residual: Array1<f64> = targets
        .iter()
        .zip(base.iter())
        .map(|(y, b)| (y - b) / scaler.std)
        .collect();
    let pred = delta
        .to_shape((residual.len(), q))
        .map_err(|_| Error::Contract(format!("Δ {:?} does not match targets {:?}", delta.dim(), targets.dim())))?
        .to_owned();
    let (loss, grad) = huber_quantile_loss(&pred, residual.view(), &QUANTILES, huber_delta)?;
    Ok((loss, grad.into_shape_with_order(delta.raw_dim()).expect("same element count")))
}

#[derive(Clone, Debug)]
pub struct TrainedAdapter {
    pub model: Adapter,
    pub log: Vec<EpochLog>,
}

/// Normalizers fitted on training windows only.
pub fn fit_normalizers(corpus: &SeriesCorpus, train: &[Window]) -> (Scaler, ContextNorm) {
    let targets: Vec<f64> = train.iter().flat_map(|w| w.target_values(corpus)).collect();
    (Scaler::fit(&targets), ContextNorm::fit(&window_stats(corpus, train)))
}

/// Trains on prepared data; `val` is only scored for the log.
pub fn train_adapter_on(
    train: &AdapterData,
    val: Option<&AdapterData>,
    config: &AdapterConfig,
    variant: Variant,
    scaler: Scaler,
    context_norm: ContextNorm,
    seed: u64,
) -> Result<TrainedAdapter> {
    let mut model = Adapter::new(config, variant, seed)?;
    model.scaler = scaler;
    model.context_norm = context_norm;
    if train.batch.is_empty() {
        return Err(Error::Contract("no training windows".into()));
    }
    let mut optimizer = AdamW::new(config.optimizer);
    let mut rng = component_rng(seed, 0);
    let mut order: Vec<usize> = (0..train.batch.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.schedule.lr(config.optimizer.lr, epoch, config.epochs);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = train.batch.select(chunk);
            let targets = train.targets.select(Axis(0), chunk);
            model.zero_grad();
            let delta = model.forward(&batch, &mut Ctx::eval())?;
            let (loss, grad) = residual_loss(&delta, &batch.base, &targets, &model.scaler, config.huber_delta)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("adapter loss {loss} at epoch {epoch} (lr {lr:.3e})")));
            }
            model.backward(&grad);
            optimizer.step(&mut model.params_mut(), lr)?;
            total += loss * chunk.len() as f64;
        }
        let train_loss = total / train.batch.len() as f64;
        let val_loss = val.map(|v| evaluate_loss(&model, v)).transpose()?;
        log::info!("adapter {variant} epoch {epoch}: train {train_loss:.5} val {val_loss:?} lr {lr:.3e}");
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
    }
    model.zero_grad();
    Ok(TrainedAdapter { model, log })
}

pub fn evaluate_loss(model: &Adapter, data: &AdapterData) -> Result<f64> {
    let mut m = model.clone();
    let delta = m.forward(&data.batch, &mut Ctx::eval())?;
    Ok(residual_loss(&delta, &data.batch.base, &data.targets, &model.scaler, model.config.huber_delta)?.0)
}

/// Fits normalizers on the training split, then trains.
pub fn train_adapter(
    corpus: &SeriesCorpus,
    windows: &[Window],
    features: &SeriesFeatures,
    cache: &BaseForecastCache,
    config: &AdapterConfig,
    variant: Variant,
    seed: u64,
) -> Result<TrainedAdapter> {
    let train: Vec<Window> = windows.iter().filter(|w| w.split == Split::Train).cloned().collect();
    let val: Vec<Window> = windows.iter().filter(|w| w.split == Split::Validation).cloned().collect();
    let (scaler, norm) = fit_normalizers(corpus, &train);
    let train_data = build_adapter_data(corpus, &train, features, cache, variant, &norm)?;
    let val_data = if val.is_empty() {
        None
    } else {
        Some(build_adapter_data(corpus, &val, features, cache, variant, &norm)?)
    };
    train_adapter_on(&train_data, val_data.as_ref(), config, variant, scaler, norm, seed)
}
