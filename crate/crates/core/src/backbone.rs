//! Pre-norm transformer encoder over value tokens, with one context vector
//! added to every token and a quantile head decoding the last position.

use std::f64::consts::PI;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{SeriesCorpus, Split, Window, WindowSet};
use crate::error::{Error, Result};
use crate::forecast::{component_rng, EpochLog, Scaler, SeriesFeatures, Variant, MEDIAN};
use crate::landscape::FINGERPRINT_DIM;
use crate::nn::{
    huber_quantile_loss, AdamW, AdamWConfig, Checkpoint, Ctx, Dropout, Embedding, Gelu, Layer, LayerNorm, Linear,
    LrSchedule, Module, MultiHeadAttention, Param, Relu, QUANTILES,
};
use crate::par::{self, Execution};
use crate::sheaf::SHEAF_DIM;

/// Periods (in steps) of the sin/cos calendar features, in order of use.
pub const TEMPORAL_PERIODS: [f64; 4] = [52.0, 26.0, 13.0, 4.0];

/// Rows per inference chunk; fixed so results do not depend on thread count.
pub const INFERENCE_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub context_len: usize,
    pub horizon: usize,
    pub quantiles: Vec<f64>,
    pub temporal_feature_dim: usize,
    /// Size of the optional entity lookup table; 0 disables it.
    pub entity_count: usize,
    pub entity_dim: usize,
}

impl BackboneConfig {
    /// Reduced width and depth for quick runs.
    pub fn desk(context_len: usize, horizon: usize) -> Self {
        Self {
            d_model: 64,
            layers: 2,
            heads: 4,
            head_dim: 16,
            ffn_dim: 256,
            dropout: 0.1,
            context_len,
            horizon,
            quantiles: QUANTILES.to_vec(),
            temporal_feature_dim: 2 * TEMPORAL_PERIODS.len(),
            entity_count: 0,
            entity_dim: 16,
        }
    }

    pub fn full(context_len: usize, horizon: usize) -> Self {
        Self {
            d_model: 256,
            layers: 6,
            heads: 8,
            head_dim: 32,
            ffn_dim: 1024,
            ..Self::desk(context_len, horizon)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d_model", self.d_model),
            ("layers", self.layers),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("ffn_dim", self.ffn_dim),
            ("context_len", self.context_len),
            ("horizon", self.horizon),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("backbone {name} must be at least 1")));
        }
        if self.heads * self.head_dim != self.d_model {
            return Err(Error::Config(format!(
                "heads × head_dim = {} but d_model = {}",
                self.heads * self.head_dim,
                self.d_model
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if !self.temporal_feature_dim.is_multiple_of(2) || self.temporal_feature_dim > 2 * TEMPORAL_PERIODS.len() {
            return Err(Error::Config(format!(
                "temporal_feature_dim must be even and at most {}",
                2 * TEMPORAL_PERIODS.len()
            )));
        }
        if self.quantiles != QUANTILES {
            return Err(Error::Config("the quantile set is fixed".into()));
        }
        if self.entity_count > 0 && self.entity_dim == 0 {
            return Err(Error::Config("entity_dim must be positive when entities are enabled".into()));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.horizon * self.quantiles.len()
    }

    fn context_input_dim(&self, variant: Variant) -> usize {
        let entity = if self.entity_count > 0 { self.entity_dim } else { 0 };
        self.temporal_feature_dim + entity + if variant.uses_tda() { FINGERPRINT_DIM } else { 0 }
    }
}

/// sin/cos of the anchor time for the first `dim / 2` periods.
pub fn temporal_features(anchor: i64, dim: usize) -> Vec<f64> {
    TEMPORAL_PERIODS
        .iter()
        .take(dim / 2)
        .flat_map(|p| {
            let angle = 2.0 * PI * anchor as f64 / p;
            [angle.sin(), angle.cos()]
        })
        .collect()
}

/// Standard sinusoidal position table, `L × d`.
pub fn positional_encoding(len: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, d), |(pos, j)| {
        let rate = 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
        let angle = pos as f64 / rate;
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Adds row `b` of `g` to every token of sequence `b`.
pub fn broadcast_inject(tokens: &Array2<f64>, g: &Array2<f64>, seq_len: usize) -> Result<Array2<f64>> {
    if tokens.ncols() != g.ncols() || tokens.nrows() != g.nrows() * seq_len {
        return Err(Error::Contract(format!(
            "cannot inject context {:?} into tokens {:?} with sequence length {seq_len}",
            g.dim(),
            tokens.dim()
        )));
    }
    let mut out = tokens.clone();
    for (b, row) in g.rows().into_iter().enumerate() {
        let mut block = out.slice_mut(s![b * seq_len..(b + 1) * seq_len, ..]);
        block += &row;
    }
    Ok(out)
}

/// Inputs for a batch of windows, one row per window.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneBatch {
    /// B×L normalized context values.
    pub values: Array2<f64>,
    pub temporal: Array2<f64>,
    pub entities: Option<Vec<usize>>,
    pub tda: Option<Array2<f64>>,
    pub sheaf: Option<Array2<f64>>,
}

impl BackboneBatch {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        let pick = |m: &Array2<f64>| m.select(Axis(0), rows);
        Self {
            values: pick(&self.values),
            temporal: pick(&self.temporal),
            entities: self.entities.as_ref().map(|e| rows.iter().map(|&r| e[r]).collect()),
            tda: self.tda.as_ref().map(pick),
            sheaf: self.sheaf.as_ref().map(pick),
        }
    }

    fn slice(&self, start: usize, end: usize) -> Self {
        self.select(&(start..end).collect::<Vec<_>>())
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    drop1: Dropout,
    ln2: LayerNorm,
    ff1: Linear,
    act: Gelu,
    ff2: Linear,
    drop2: Dropout,
}

impl EncoderLayer {
    fn new(name: &str, cfg: &BackboneConfig, rng: &mut crate::nn::Rng) -> Self {
        let d = cfg.d_model;
        Self {
            ln1: LayerNorm::new(&format!("{name}.ln1"), d),
            attn: MultiHeadAttention::new(&format!("{name}.attn"), cfg.heads, cfg.head_dim, cfg.context_len, rng),
            drop1: Dropout::new(cfg.dropout),
            ln2: LayerNorm::new(&format!("{name}.ln2"), d),
            ff1: Linear::new(&format!("{name}.ff1"), d, cfg.ffn_dim, rng),
            act: Gelu::default(),
            ff2: Linear::new(&format!("{name}.ff2"), cfg.ffn_dim, d, rng),
            drop2: Dropout::new(cfg.dropout),
        }
    }
}

impl Module for EncoderLayer {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.ln1.params();
        p.extend(self.attn.params());
        p.extend(self.ln2.params());
        p.extend(self.ff1.params());
        p.extend(self.ff2.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.ln1.params_mut();
        p.extend(self.attn.params_mut());
        p.extend(self.ln2.params_mut());
        p.extend(self.ff1.params_mut());
        p.extend(self.ff2.params_mut());
        p
    }
}

impl Layer for EncoderLayer {
    fn forward(&mut self, x: &Array2<f64>, ctx: &mut Ctx) -> Result<Array2<f64>> {
        let h = self.ln1.forward(x, ctx)?;
        let a = self.attn.forward(&h, ctx)?;
        let x1 = x + &self.drop1.forward(&a, ctx)?;
        let h2 = self.ln2.forward(&x1, ctx)?;
        let f = self.ff1.forward(&h2, ctx)?;
        let f = self.act.forward(&f, ctx)?;
        let f = self.ff2.forward(&f, ctx)?;
        Ok(&x1 + &self.drop2.forward(&f, ctx)?)
    }

    fn backward(&mut self, grad: &Array2<f64>) -> Array2<f64> {
        let gf = self.drop2.backward(grad);
        let gf = self.ff2.backward(&gf);
        let gf = self.act.backward(&gf);
        let gh2 = self.ff1.backward(&gf);
        let gx1 = grad + &self.ln2.backward(&gh2);
        let ga = self.drop1.backward(&gx1);
        let gh = self.attn.backward(&ga);
        &gx1 + &self.ln1.backward(&gh)
    }
}

/// RNG stream per component; see [`component_rng`].
mod stream {
    pub const VALUE: u64 = 1;
    pub const CONTEXT: u64 = 2;
    pub const SHEAF: u64 = 3;
    pub const ENTITY: u64 = 4;
    pub const HEAD: u64 = 5;
    pub const ENCODER: u64 = 16;
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub variant: Variant,
    pub value_embed: Linear,
    /// Projects temporal, entity and (when active) fingerprint features.
    pub ctx_proj: Linear,
    /// Separate bias-free projection of spectral coordinates.
    pub sheaf_proj: Option<Linear>,
    pub entity: Option<Embedding>,
    encoder: Vec<EncoderLayer>,
    pub final_norm: LayerNorm,
    head1: Linear,
    head_act: Relu,
    head_drop: Dropout,
    head2: Linear,
    positional: Array2<f64>,
    batch: usize,
}

impl Backbone {
    pub fn new(config: &BackboneConfig, variant: Variant, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let encoder = (0..config.layers)
            .map(|i| EncoderLayer::new(&format!("encoder.{i}"), config, &mut component_rng(seed, stream::ENCODER + i as u64)))
            .collect();
        let mut head_rng = component_rng(seed, stream::HEAD);
        Ok(Self {
            config: config.clone(),
            variant,
            value_embed: Linear::new("value_embed", 1, d, &mut component_rng(seed, stream::VALUE)),
            ctx_proj: Linear::new(
                "ctx_proj",
                config.context_input_dim(variant),
                d,
                &mut component_rng(seed, stream::CONTEXT),
            ),
            sheaf_proj: variant
                .uses_sheaf()
                .then(|| Linear::without_bias("sheaf_proj", SHEAF_DIM, d, &mut component_rng(seed, stream::SHEAF))),
            entity: (config.entity_count > 0).then(|| {
                Embedding::new("entity", config.entity_count, config.entity_dim, &mut component_rng(seed, stream::ENTITY))
            }),
            encoder,
            final_norm: LayerNorm::new("final_norm", d),
            head1: Linear::new("head.1", d, d, &mut head_rng),
            head_act: Relu::default(),
            head_drop: Dropout::new(config.dropout),
            head2: Linear::new("head.2", d, config.output_dim(), &mut head_rng),
            positional: positional_encoding(config.context_len, d),
            batch: 0,
        })
    }

    fn check_batch(&self, batch: &BackboneBatch) -> Result<()> {
        let (b, cfg) = (batch.len(), &self.config);
        let expect = |name: &str, m: &Array2<f64>, cols: usize| {
            if m.dim() != (b, cols) {
                return Err(Error::Contract(format!("{name} input {:?}, expected ({b}, {cols})", m.dim())));
            }
            Ok(())
        };
        expect("context values", &batch.values, cfg.context_len)?;
        expect("temporal", &batch.temporal, cfg.temporal_feature_dim)?;
        let block = |name: &str, active: bool, m: &Option<Array2<f64>>, cols: usize| match (active, m) {
            (true, Some(m)) => expect(name, m, cols),
            (true, None) => Err(Error::Config(format!("variant {} needs a {name} block", self.variant))),
            (false, Some(_)) => Err(Error::Config(format!("variant {} takes no {name} block", self.variant))),
            (false, None) => Ok(()),
        };
        block("fingerprint", self.variant.uses_tda(), &batch.tda, FINGERPRINT_DIM)?;
        block("sheaf", self.variant.uses_sheaf(), &batch.sheaf, SHEAF_DIM)?;
        match (&self.entity, &batch.entities) {
            (Some(_), Some(ids)) if ids.len() == b => Ok(()),
            (None, None) => Ok(()),
            _ => Err(Error::Config("entity ids must be given exactly when entity embeddings are enabled".into())),
        }
    }

    fn context_input(&mut self, batch: &BackboneBatch) -> Result<Array2<f64>> {
        let mut parts = vec![batch.temporal.clone()];
        if let (Some(table), Some(ids)) = (&mut self.entity, &batch.entities) {
            parts.push(table.lookup(ids)?);
        }
        if let Some(tda) = &batch.tda {
            parts.push(tda.clone());
        }
        let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
        Ok(ndarray::concatenate(Axis(1), &views).expect("row counts checked"))
    }

    /// The context vector `g`, one row per window.
    pub fn build_context(&mut self, batch: &BackboneBatch, ctx: &mut Ctx) -> Result<Array2<f64>> {
        self.check_batch(batch)?;
        let input = self.context_input(batch)?;
        let mut g = self.ctx_proj.forward(&input, ctx)?;
        if let (Some(proj), Some(z)) = (&mut self.sheaf_proj, &batch.sheaf) {
            g += &proj.forward(z, ctx)?;
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence("context vector is not finite".into()));
        }
        Ok(g)
    }

    /// Value embedding, then `+ g`, then positional encoding.
    pub fn pre_encoder_tokens(&mut self, batch: &BackboneBatch, g: &Array2<f64>, ctx: &mut Ctx) -> Result<Array2<f64>> {
        let (b, l) = (batch.len(), self.config.context_len);
        let flat = batch
            .values
            .to_shape((b * l, 1))
            .map_err(|e| Error::Contract(e.to_string()))?
            .to_owned();
        let tokens = self.value_embed.forward(&flat, ctx)?;
        let mut tokens = broadcast_inject(&tokens, g, l)?;
        for mut block in tokens.axis_chunks_iter_mut(Axis(0), l) {
            block += &self.positional;
        }
        Ok(tokens)
    }

    /// B×(H·9) outputs laid out as `h · 9 + q`.
    pub fn forward(&mut self, batch: &BackboneBatch, ctx: &mut Ctx) -> Result<Array2<f64>> {
        let g = self.build_context(batch, ctx)?;
        let mut x = self.pre_encoder_tokens(batch, &g, ctx)?;
        for layer in &mut self.encoder {
            x = layer.forward(&x, ctx)?;
        }
        let x = self.final_norm.forward(&x, ctx)?;
        let l = self.config.context_len;
        let last: Vec<usize> = (0..batch.len()).map(|b| b * l + l - 1).collect();
        let h = self.head1.forward(&x.select(Axis(0), &last), ctx)?;
        let h = self.head_act.forward(&h, ctx)?;
        let h = self.head_drop.forward(&h, ctx)?;
        self.batch = batch.len();
        self.head2.forward(&h, ctx)
    }

    /// Accumulates parameter gradients for the most recent forward.
    pub fn backward(&mut self, grad: &Array2<f64>) {
        let (b, l, d) = (self.batch, self.config.context_len, self.config.d_model);
        let gh = self.head2.backward(grad);
        let gh = self.head_drop.backward(&gh);
        let gh = self.head_act.backward(&gh);
        let glast = self.head1.backward(&gh);
        let mut gx = Array2::zeros((b * l, d));
        for (i, row) in glast.rows().into_iter().enumerate() {
            gx.row_mut(i * l + l - 1).assign(&row);
        }
        let mut gx = self.final_norm.backward(&gx);
        for layer in self.encoder.iter_mut().rev() {
            gx = layer.backward(&gx);
        }
        self.value_embed.backward(&gx);
        let gg = Array2::from_shape_fn((b, d), |(i, j)| gx.slice(s![i * l..(i + 1) * l, j]).sum());
        let ginput = self.ctx_proj.backward(&gg);
        if let Some(proj) = &mut self.sheaf_proj {
            proj.backward(&gg);
        }
        if let Some(table) = &mut self.entity {
            let start = self.config.temporal_feature_dim;
            let gids = ginput.slice(s![.., start..start + table.dim()]).to_owned();
            table.backward(&gids);
        }
    }

    /// Eval-mode forecasts, computed in fixed-size chunks on model clones.
    pub fn predict(&self, batch: &BackboneBatch, exec: Execution) -> Result<Array2<f64>> {
        self.check_batch(batch)?;
        let chunks = batch.len().div_ceil(INFERENCE_CHUNK);
        let parts = par::map_range(chunks, exec, |c| {
            let end = ((c + 1) * INFERENCE_CHUNK).min(batch.len());
            let mut model = self.clone();
            model.forward(&batch.slice(c * INFERENCE_CHUNK, end), &mut Ctx::eval())
        });
        let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
        if parts.is_empty() {
            return Ok(Array2::zeros((0, self.config.output_dim())));
        }
        let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
        Ok(ndarray::concatenate(Axis(0), &views).expect("equal widths"))
    }

    pub fn to_checkpoint(&self, scaler: &Scaler) -> Checkpoint {
        let mut ck = Checkpoint::capture(self);
        ck.metadata = serde_json::json!({
            "kind": "backbone",
            "config": self.config,
            "variant": self.variant,
            "scaler": scaler,
        });
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Scaler)> {
        let meta = &ck.metadata;
        if meta["kind"] != "backbone" {
            return Err(Error::Contract("checkpoint does not hold a backbone".into()));
        }
        let config: BackboneConfig = serde_json::from_value(meta["config"].clone())?;
        let variant: Variant = serde_json::from_value(meta["variant"].clone())?;
        let scaler: Scaler = serde_json::from_value(meta["scaler"].clone())?;
        let mut model = Self::new(&config, variant, 0)?;
        ck.restore_into(&mut model)?;
        Ok((model, scaler))
    }
}

impl Module for Backbone {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.value_embed.params();
        p.extend(self.ctx_proj.params());
        p.extend(self.sheaf_proj.iter().flat_map(|l| l.params()));
        p.extend(self.entity.iter().flat_map(|e| e.params()));
        p.extend(self.encoder.iter().flat_map(|l| l.params()));
        p.extend(self.final_norm.params());
        p.extend(self.head1.params());
        p.extend(self.head2.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.value_embed.params_mut();
        p.extend(self.ctx_proj.params_mut());
        p.extend(self.sheaf_proj.iter_mut().flat_map(|l| l.params_mut()));
        p.extend(self.entity.iter_mut().flat_map(|e| e.params_mut()));
        p.extend(self.encoder.iter_mut().flat_map(|l| l.params_mut()));
        p.extend(self.final_norm.params_mut());
        p.extend(self.head1.params_mut());
        p.extend(self.head2.params_mut());
        p
    }
}

/// Batched inputs and normalized targets for a list of windows.
#[derive(Clone, Debug)]
pub struct BackboneData {
    pub batch: BackboneBatch,
    /// B×H normalized targets.
    pub targets: Array2<f64>,
    pub windows: Vec<Window>,
}

pub fn build_backbone_data(
    corpus: &SeriesCorpus,
    windows: &[Window],
    features: &SeriesFeatures,
    config: &BackboneConfig,
    variant: Variant,
    scaler: &Scaler,
) -> Result<BackboneData> {
    features.validate(corpus.n())?;
    let (b, l, h) = (windows.len(), config.context_len, config.horizon);
    if let Some(w) = windows.iter().find(|w| w.context_len != l || w.horizon != h) {
        return Err(Error::Config(format!(
            "window ({}, {}) does not match backbone ({l}, {h})",
            w.context_len, w.horizon
        )));
    }
    let mut values = Array2::zeros((b, l));
    let mut targets = Array2::zeros((b, h));
    let mut temporal = Array2::zeros((b, config.temporal_feature_dim));
    for (i, w) in windows.iter().enumerate() {
        for (j, v) in w.context_values(corpus).into_iter().enumerate() {
            values[[i, j]] = scaler.normalize(v);
        }
        for (j, v) in w.target_values(corpus).into_iter().enumerate() {
            targets[[i, j]] = scaler.normalize(v);
        }
        for (j, v) in temporal_features(w.anchor_time(corpus), config.temporal_feature_dim).into_iter().enumerate() {
            temporal[[i, j]] = v;
        }
    }
    let series: Vec<usize> = windows.iter().map(|w| w.series).collect();
    let (tda, sheaf) = features.gather(&series);
    let missing = |name: &str| Error::Config(format!("variant {variant} needs {name} features"));
    let batch = BackboneBatch {
        values,
        temporal,
        entities: (config.entity_count > 0).then(|| series.clone()),
        tda: if variant.uses_tda() { Some(tda.ok_or_else(|| missing("fingerprint"))?) } else { None },
        sheaf: if variant.uses_sheaf() { Some(sheaf.ok_or_else(|| missing("sheaf"))?) } else { None },
    };
    Ok(BackboneData {
        batch,
        targets,
        windows: windows.to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub schedule: LrSchedule,
    /// Epochs without validation improvement before stopping.
    pub patience: Option<usize>,
    pub huber_delta: f64,
}

impl Default for BackboneTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            optimizer: AdamWConfig::default(),
            schedule: LrSchedule::one_cycle(3e-4),
            patience: Some(5),
            huber_delta: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedBackbone {
    pub model: Backbone,
    pub scaler: Scaler,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept (by validation loss), if any ran.
    pub best_epoch: Option<usize>,
}

/// Mean Huber quantile loss of B×(H·9) outputs against B×H targets.
pub fn quantile_loss(out: &Array2<f64>, targets: &Array2<f64>, delta: f64) -> Result<(f64, Array2<f64>)> {
    let q = QUANTILES.len();
    let rows = targets.len();
    let pred = out
        .to_shape((rows, q))
        .map_err(|_| Error::Contract(format!("outputs {:?} do not match targets {:?}", out.dim(), targets.dim())))?
        .to_owned();
    let flat = targets.iter().copied().collect::<ndarray::Array1<f64>>();
    let (loss, grad) = huber_quantile_loss(&pred, flat.view(), &QUANTILES, delta)?;
    Ok((loss, grad.into_shape_with_order(out.raw_dim()).expect("same element count")))
}

fn eval_loss(model: &Backbone, data: &BackboneData, delta: f64) -> Result<f64> {
    let out = model.predict(&data.batch, Execution::Sequential)?;
    Ok(quantile_loss(&out, &data.targets, delta)?.0)
}

pub fn train_backbone(
    corpus: &SeriesCorpus,
    windows: &WindowSet,
    features: &SeriesFeatures,
    config: &BackboneConfig,
    variant: Variant,
    train: &BackboneTrainConfig,
    seed: u64,
) -> Result<TrainedBackbone> {
    if train.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let train_windows: Vec<Window> = windows.split(Split::Train).cloned().collect();
    let val_windows: Vec<Window> = windows.split(Split::Validation).cloned().collect();
    if train_windows.is_empty() {
        return Err(Error::Contract("no training windows".into()));
    }
    let scaler = Scaler::fit(train_windows.iter().flat_map(|w| w.target_values(corpus)).collect::<Vec<_>>().iter());
    let data = build_backbone_data(corpus, &train_windows, features, config, variant, &scaler)?;
    let val = if val_windows.is_empty() {
        None
    } else {
        Some(build_backbone_data(corpus, &val_windows, features, config, variant, &scaler)?)
    };

    let mut model = Backbone::new(config, variant, seed)?;
    let mut optimizer = AdamW::new(train.optimizer);
    let mut rng = component_rng(seed, 0);
    let n = data.batch.len();
    let per_epoch = n.div_ceil(train.batch_size);
    let total = per_epoch * train.epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(train.epochs);
    let mut best: Option<(f64, usize, Vec<Array2<f64>>)> = None;
    let mut step = 0;

    for epoch in 0..train.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(train.batch_size) {
            let batch = data.batch.select(chunk);
            let targets = data.targets.select(Axis(0), chunk);
            model.zero_grad();
            let mut ctx = Ctx::train(component_rng(seed, 1u64 << 32 | step as u64));
            let out = model.forward(&batch, &mut ctx)?;
            let (loss, grad) = quantile_loss(&out, &targets, train.huber_delta)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "backbone loss {loss} at epoch {epoch}, step {step} (lr {lr:.3e})"
                )));
            }
            model.backward(&grad);
            lr = train.schedule.lr(train.optimizer.lr, step, total);
            optimizer.step(&mut model.params_mut(), lr)?;
            epoch_loss += loss * chunk.len() as f64;
            step += 1;
        }
        let train_loss = epoch_loss / n as f64;
        let val_loss = val.as_ref().map(|v| eval_loss(&model, v, train.huber_delta)).transpose()?;
        log::info!("backbone epoch {epoch}: train {train_loss:.5} val {val_loss:?} lr {lr:.3e}");
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        let score = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, model.params().iter().map(|p| p.value.clone()).collect()));
        } else if let (Some(patience), Some((_, best_epoch, _))) = (train.patience, &best) {
            if epoch - best_epoch >= patience {
                log::info!("backbone early stop at epoch {epoch}");
                break;
            }
        }
    }
    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, values)) = best {
        for (p, v) in model.params_mut().into_iter().zip(values) {
            p.value = v;
        }
    }
    model.zero_grad();
    Ok(TrainedBackbone {
        model,
        scaler,
        log,
        best_epoch,
    })
}

/// Denormalized median forecasts, one row per window.
pub fn median_forecasts(out: &Array2<f64>, horizon: usize, scaler: &Scaler) -> Array2<f64> {
    let q = QUANTILES.len();
    Array2::from_shape_fn((out.nrows(), horizon), |(b, h)| scaler.denormalize(out[[b, h * q + MEDIAN]]))
}
