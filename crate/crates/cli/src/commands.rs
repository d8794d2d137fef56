//! One function per subcommand. Each reads its upstream artifacts from the
//! output directory and writes a provenance-stamped JSON artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use topoprior::ablation::{jobs_for, parse_controls, run_controls, ComparisonTable, Control, ControlData};
use topoprior::adapter::{build_adapter_data, build_base_cache, train_adapter, Adapter, BaseForecastCache, BaseProvider};
use topoprior::artifact::{Artifact, Provenance};
use topoprior::backbone::{build_backbone_data, train_backbone, Backbone, BackboneConfig, BackboneTrainConfig};
use topoprior::corpus::{load_wide_csv, slice_windows, write_wide_csv, CorpusSummary, SeriesCorpus, Window, WindowSpec};
use topoprior::eval::{cold_start_table, forecast_metrics, reports_to_csv, reports_to_text, ColdStartTable, MetricReport, WeekPoints};
use topoprior::forecast::{crossing_rate, EpochLog, QuantileForecast, Scaler, SeriesFeatures, Variant};
use topoprior::landscape::{fingerprint, Fingerprint, FINGERPRINT_DIM};
use topoprior::manifold::{correlation_distance_graph, knn_weight_graph, GraphMode};
use topoprior::nn::Checkpoint;
use topoprior::persistence::{diagram_of_graph, DiagramJson, PersistenceDiagram};
use topoprior::screening::{screen, ScreeningReport};
use topoprior::sheaf::{neural_sheaf_train, spectral_coordinates, CoordinatesHeader, SpectralOptions, SHEAF_DIM};
use topoprior::synth::{ar1_corpus, cold_start_population, planted_topology, ColdStartConfig, PlantedConfig};
use topoprior::experiment::group_fingerprints;

use crate::config::{Loaded, ModelKind, SheafEncoder};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub const FINGERPRINT_FILE: &str = "fingerprint.json";
pub const SHEAF_FILE: &str = "sheaf.json";
pub const SCREEN_FILE: &str = "screen.json";
pub const CACHE_FILE: &str = "cache.json";
pub const ABLATION_FILE: &str = "ablation.json";

pub fn backbone_file(v: Variant) -> String {
    format!("backbone-{}.json", slug(v))
}

pub fn adapter_file(v: Variant) -> String {
    format!("adapter-{}.json", slug(v))
}

fn slug(v: Variant) -> String {
    v.to_string().replace('+', "-")
}

fn write<T: Serialize>(l: &Loaded, file: &str, kind: &str, body: T) -> Result<PathBuf> {
    let path = l.output(file);
    Artifact::new(kind, Provenance::new(&l.config, l.config.seed)?, body).write(&path)?;
    log::info!("wrote {}", path.display());
    Ok(path)
}

fn read<T: DeserializeOwned>(l: &Loaded, file: &str, kind: &str, run: &str) -> Result<Artifact<T>> {
    let path = l.output(file);
    if !path.exists() {
        return Err(CliError::MissingArtifact {
            path,
            run: run.to_string(),
        });
    }
    Ok(Artifact::read(&path, kind)?)
}

fn corpus(l: &Loaded) -> Result<(SeriesCorpus, CorpusSummary)> {
    let path = l
        .config
        .data
        .path
        .as_ref()
        .ok_or_else(|| CliError::Config("data.path is not set".into()))?;
    let ingested = load_wide_csv(l.resolve(path), &l.config.data.ingest)?;
    for r in &ingested.rejected {
        log::warn!("rejected series {} ({} of {} cells missing)", r.id, r.missing, r.total);
    }
    let summary = ingested.summary();
    Ok((ingested.corpus, summary))
}

fn windows(l: &Loaded, corpus: &SeriesCorpus) -> Result<Vec<Window>> {
    Ok(slice_windows(corpus, &l.config.windows.spec())?.windows)
}

// ---------------------------------------------------------------------------
// fingerprint

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PopulationTopology {
    pub diagram: Vec<DiagramJson>,
    pub fingerprint: Fingerprint,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FingerprintBody {
    pub corpus: CorpusSummary,
    pub graph_mode: GraphMode,
    /// Which complex the homology was computed on.
    pub complex: String,
    pub population: PopulationTopology,
    /// Per-group fingerprints on a grid shared by the groups.
    pub groups: BTreeMap<String, Fingerprint>,
}

pub fn cmd_fingerprint(l: &Loaded, graph_export: Option<&Path>) -> Result<()> {
    let (corpus, summary) = corpus(l)?;
    let exec = l.config.execution;
    let graph = correlation_distance_graph(&corpus, l.config.topology.knn, exec)?;
    if let Some(path) = graph_export {
        graph.write_jsonl(std::fs::File::create(path)?)?;
    }
    let diagram = diagram_of_graph(&graph, exec)?;
    let groups = if l.config.topology.per_group && corpus.group_labels().is_some() {
        group_fingerprints(&corpus, l.config.topology.knn, exec)?
    } else {
        BTreeMap::new()
    };
    let body = FingerprintBody {
        corpus: summary,
        graph_mode: graph.mode(),
        complex: "clique complex of the correlation-distance graph, homology 0-2".into(),
        population: PopulationTopology {
            diagram: diagram.to_json(),
            fingerprint: fingerprint(&diagram),
        },
        groups,
    };
    write(l, FINGERPRINT_FILE, "fingerprint", body)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// sheaf

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SheafBody {
    pub encoder: SheafEncoder,
    pub header: CoordinatesHeader,
    /// N rows of 256 values.
    pub coords: Vec<Vec<f64>>,
    pub training_curve: Option<Vec<f64>>,
}

pub fn cmd_sheaf(l: &Loaded) -> Result<()> {
    let (corpus, _) = corpus(l)?;
    let cfg = &l.config.sheaf;
    let exec = l.config.execution;
    let groups = corpus.group_labels().filter(|_| cfg.block_wise);
    let options = SpectralOptions {
        normalize: cfg.normalize,
        max_rank: cfg.max_rank,
    };
    let spectral = spectral_coordinates(&corpus, groups, &options, exec)?;
    let (coords, curve) = match cfg.encoder {
        SheafEncoder::Spectral => (spectral, None),
        SheafEncoder::Neural => {
            let k = cfg.neural.knn_k.min(corpus.n().saturating_sub(1)).max(1);
            let graph = knn_weight_graph(&corpus, Some(k), exec)?;
            let trained = neural_sheaf_train(&corpus, &graph, &spectral, &cfg.neural)?;
            (trained.coordinates, Some(trained.curve))
        }
    };
    let body = SheafBody {
        encoder: cfg.encoder,
        header: coords.header(corpus.series_ids()),
        coords: coords.coords.rows().into_iter().map(|r| r.to_vec()).collect(),
        training_curve: curve,
    };
    write(l, SHEAF_FILE, "sheaf", body)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// screen

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScreenBody {
    pub dataset: String,
    pub report: ScreeningReport,
}

pub fn cmd_screen(l: &Loaded, name: Option<String>, artifact_suspect: bool) -> Result<()> {
    let fp: Artifact<FingerprintBody> = read(l, FINGERPRINT_FILE, "fingerprint", "fingerprint")?;
    let diagram = PersistenceDiagram::from_json(&fp.body.population.diagram)?;
    let topo = &l.config.topology;
    let mut report = screen(&diagram, fp.body.corpus.n, topo.persistence_floor, topo.thresholds)?;
    if artifact_suspect {
        report = report.mark_artifact_suspect();
    }
    let dataset = name.or_else(|| l.config.data.name.clone()).unwrap_or_else(|| {
        l.config
            .data
            .path
            .as_ref()
            .and_then(|p| p.file_stem())
            .map_or("dataset".into(), |s| s.to_string_lossy().into_owned())
    });
    println!("{}", ScreeningReport::table_header());
    println!("{}", report.table_row(&dataset));
    write(l, SCREEN_FILE, "screen", ScreenBody { dataset, report })?;
    Ok(())
}

// ---------------------------------------------------------------------------
// shared feature assembly

fn population_rows(fp: &Fingerprint, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, FINGERPRINT_DIM), |(_, j)| fp.values[j])
}

/// Topology inputs the variant (or control set) needs, read from upstream artifacts.
fn features(l: &Loaded, corpus: &SeriesCorpus, tda: bool, sheaf: bool) -> Result<(SeriesFeatures, BTreeMap<String, Vec<f64>>)> {
    let mut out = SeriesFeatures::default();
    let mut by_group = BTreeMap::new();
    if tda {
        let fp: Artifact<FingerprintBody> = read(l, FINGERPRINT_FILE, "fingerprint", "fingerprint")?;
        let body = fp.body;
        if body.corpus.n != corpus.n() {
            return Err(topoprior::Error::Contract(format!(
                "fingerprint was computed on {} series, corpus has {}; rerun fingerprint",
                body.corpus.n,
                corpus.n()
            ))
            .into());
        }
        if corpus.group_labels().is_some() && !body.groups.is_empty() {
            out.fingerprints = Some(SeriesFeatures::fingerprints_by_group(corpus, &body.groups)?);
            by_group = body.groups.into_iter().map(|(k, f)| (k, f.values)).collect();
        } else {
            out.fingerprints = Some(population_rows(&body.population.fingerprint, corpus.n()));
            by_group.insert("all".to_string(), body.population.fingerprint.values);
        }
    }
    if sheaf {
        let sh: Artifact<SheafBody> = read(l, SHEAF_FILE, "sheaf", "sheaf")?;
        if sh.body.header.series_ids != corpus.series_ids() {
            return Err(topoprior::Error::Contract("sheaf coordinates belong to a different corpus; rerun sheaf".into()).into());
        }
        let rows = sh.body.coords;
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let m = Array2::from_shape_vec((rows.len(), SHEAF_DIM), flat)
            .map_err(|_| topoprior::Error::Contract("sheaf coordinates are not N×256".into()))?;
        out.sheaf = Some(m);
    }
    Ok((out, by_group))
}

fn variant_features(l: &Loaded, corpus: &SeriesCorpus, v: Variant) -> Result<SeriesFeatures> {
    Ok(features(l, corpus, v.uses_tda(), v.uses_sheaf())?.0)
}

// ---------------------------------------------------------------------------
// train-backbone

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BackboneBody {
    pub variant: Variant,
    pub model: BackboneConfig,
    pub training: BackboneTrainConfig,
    pub best_epoch: Option<usize>,
    pub log: Vec<EpochLog>,
    /// Share of adjacent quantile pairs out of order on validation windows.
    pub validation_crossing_rate: Option<f64>,
    pub checkpoint: Checkpoint,
}

fn backbone_forecasts(model: &Backbone, scaler: &Scaler, corpus: &SeriesCorpus, windows: &[Window], features: &SeriesFeatures, exec: topoprior::Execution) -> Result<Vec<QuantileForecast>> {
    let data = build_backbone_data(corpus, windows, features, &model.config, model.variant, scaler)?;
    let out = model.predict(&data.batch, exec)?;
    Ok(out
        .rows()
        .into_iter()
        .map(|r| {
            let mut f = QuantileForecast::from_flat(r, model.config.horizon);
            f.values.mapv_inplace(|v| scaler.denormalize(v));
            f
        })
        .collect())
}

pub fn cmd_train_backbone(l: &Loaded, variant: Option<Variant>) -> Result<()> {
    let variant = variant.unwrap_or(l.config.backbone.variant);
    let (corpus, _) = corpus(l)?;
    let features = variant_features(l, &corpus, variant)?;
    let set = slice_windows(&corpus, &l.config.windows.spec())?;
    let model_cfg = l.config.backbone.model(&l.config.windows, corpus.n());
    model_cfg.validate()?;
    let training = l.config.backbone.training();
    let trained = train_backbone(&corpus, &set, &features, &model_cfg, variant, &training, l.config.seed)?;
    let val: Vec<Window> = set.split(topoprior::corpus::Split::Validation).cloned().collect();
    let crossing = if val.is_empty() {
        None
    } else {
        let f = backbone_forecasts(&trained.model, &trained.scaler, &corpus, &val, &features, l.config.execution)?;
        Some(crossing_rate(&f))
    };
    let log_path = l.output(&backbone_file(variant).replace(".json", ".log.jsonl"));
    let body = BackboneBody {
        variant,
        model: model_cfg,
        training,
        best_epoch: trained.best_epoch,
        log: trained.log.clone(),
        validation_crossing_rate: crossing,
        checkpoint: trained.model.to_checkpoint(&trained.scaler),
    };
    write(l, &backbone_file(variant), "backbone", body)?;
    std::fs::write(log_path, topoprior::forecast::log_to_jsonl(&trained.log))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// build-cache

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CacheBody {
    pub windows: WindowSpec,
    pub cache: BaseForecastCache,
}

pub fn cmd_build_cache(l: &Loaded) -> Result<()> {
    let (corpus, _) = corpus(l)?;
    let windows = windows(l, &corpus)?;
    let provider = match &l.config.cache.provider {
        BaseProvider::ExternalFile { path } => BaseProvider::ExternalFile {
            path: l.resolve(Path::new(path)).to_string_lossy().into_owned(),
        },
        other => other.clone(),
    };
    let cache = build_base_cache(&corpus, &windows, &provider, l.config.execution)?;
    let body = CacheBody {
        windows: l.config.windows.spec(),
        cache,
    };
    write(l, CACHE_FILE, "cache", body)?;
    Ok(())
}

fn load_cache(l: &Loaded) -> Result<BaseForecastCache> {
    let art: Artifact<CacheBody> = read(l, CACHE_FILE, "cache", "build-cache")?;
    if art.body.windows != l.config.windows.spec() {
        return Err(topoprior::Error::Contract("cache was built for different windows; rerun build-cache".into()).into());
    }
    Ok(art.body.cache)
}

// ---------------------------------------------------------------------------
// adapt

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdapterBody {
    pub variant: Variant,
    pub log: Vec<EpochLog>,
    pub checkpoint: Checkpoint,
}

pub fn cmd_adapt(l: &Loaded, variant: Option<Variant>) -> Result<()> {
    let variant = variant.unwrap_or(l.config.adapter.variant);
    let (corpus, _) = corpus(l)?;
    let cache = load_cache(l)?;
    let features = variant_features(l, &corpus, variant)?;
    let windows = windows(l, &corpus)?;
    let config = l.config.adapter.model(l.config.windows.horizon);
    config.validate()?;
    let trained = train_adapter(&corpus, &windows, &features, &cache, &config, variant, l.config.seed)?;
    let body = AdapterBody {
        variant,
        log: trained.log,
        checkpoint: trained.model.to_checkpoint(),
    };
    write(l, &adapter_file(variant), "adapter", body)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalBody {
    pub model: ModelKind,
    pub variant: Variant,
    pub split: topoprior::corpus::Split,
    pub reports: Vec<MetricReport>,
    pub crossing_rate: f64,
    pub cold_start: Option<ColdStartTable>,
}

pub fn cmd_eval(l: &Loaded, model: Option<ModelKind>, variant: Option<Variant>) -> Result<()> {
    let kind = model.unwrap_or(l.config.eval.model);
    let split = l.config.eval.split;
    let (corpus, _) = corpus(l)?;
    let windows: Vec<Window> = windows(l, &corpus)?.into_iter().filter(|w| w.split == split).collect();
    if windows.is_empty() {
        return Err(topoprior::Error::Contract(format!("no {split:?} windows to evaluate")).into());
    }
    let exec = l.config.execution;
    let (variant, forecasts, scaler) = match kind {
        ModelKind::Adapter => {
            let v = variant.unwrap_or(l.config.adapter.variant);
            let art: Artifact<AdapterBody> = read(l, &adapter_file(v), "adapter", &format!("adapt --variant {v}"))?;
            let model = Adapter::from_checkpoint(&art.body.checkpoint)?;
            let cache = load_cache(l)?;
            let features = variant_features(l, &corpus, v)?;
            let data = build_adapter_data(&corpus, &windows, &features, &cache, v, &model.context_norm)?;
            (v, model.predict(&data.batch, exec)?, model.scaler)
        }
        ModelKind::Backbone => {
            let v = variant.unwrap_or(l.config.backbone.variant);
            let art: Artifact<BackboneBody> =
                read(l, &backbone_file(v), "backbone", &format!("train-backbone --variant {v}"))?;
            let (model, scaler) = Backbone::from_checkpoint(&art.body.checkpoint)?;
            let features = variant_features(l, &corpus, v)?;
            (v, backbone_forecasts(&model, &scaler, &corpus, &windows, &features, exec)?, scaler)
        }
    };
    let targets: Vec<Vec<f64>> = windows.iter().map(|w| w.target_values(&corpus)).collect();
    let mut slices: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        if let Some(g) = corpus.group_labels() {
            slices.entry(format!("group:{}", g[w.series])).or_default().push(i);
        }
        if let Some(week) = w.week {
            slices.entry(format!("week:{week}")).or_default().push(i);
        }
    }
    let mut reports = vec![forecast_metrics("all", &forecasts, &targets, &scaler)?];
    for (name, idx) in &slices {
        let f: Vec<QuantileForecast> = idx.iter().map(|&i| forecasts[i].clone()).collect();
        let y: Vec<Vec<f64>> = idx.iter().map(|&i| targets[i].clone()).collect();
        reports.push(forecast_metrics(name, &f, &y, &scaler)?);
    }
    let cold_start = if windows.iter().any(|w| w.week.is_some()) {
        let mut weeks: BTreeMap<usize, WeekPoints> = BTreeMap::new();
        for ((f, y), w) in forecasts.iter().zip(&targets).zip(&windows) {
            let e = weeks.entry(w.week.unwrap_or(0)).or_default();
            e.0.extend(f.median());
            e.1.extend(y);
        }
        Some(cold_start_table(&BTreeMap::from([(variant.to_string(), weeks)]))?)
    } else {
        None
    };
    print!("{}", reports_to_text(&reports));
    if let Some(t) = &cold_start {
        print!("{}", t.to_text());
    }
    let stem = format!("eval-{}-{}", serde_json::to_value(kind).map_err(topoprior::Error::from)?.as_str().unwrap_or("model"), slug(variant));
    let mut csv = Vec::new();
    reports_to_csv(&reports, &mut csv)?;
    std::fs::create_dir_all(l.output(""))?;
    std::fs::write(l.output(&format!("{stem}.csv")), csv)?;
    let body = EvalBody {
        model: kind,
        variant,
        split,
        crossing_rate: crossing_rate(&forecasts),
        reports,
        cold_start,
    };
    write(l, &format!("{stem}.json"), "eval", body)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// ablate

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationBody {
    pub table: ComparisonTable,
}

pub fn cmd_ablate(l: &Loaded, variants: Option<String>) -> Result<()> {
    let controls = parse_controls(variants.as_deref().unwrap_or(&l.config.ablate.variants))?;
    let (corpus, _) = corpus(l)?;
    let cache = load_cache(l)?;
    let needs_tda = controls.iter().any(|c| c.variant().uses_tda() && *c != Control::Rand);
    let needs_sheaf = controls.iter().any(|c| c.variant().uses_sheaf());
    let (features, by_group) = features(l, &corpus, needs_tda, needs_sheaf)?;
    let windows = windows(l, &corpus)?;
    let config = l.config.adapter.model(l.config.windows.horizon);
    config.validate()?;
    let data = ControlData {
        corpus: &corpus,
        windows: &windows,
        features: &features,
        group_fingerprints: &by_group,
        cache: &cache,
    };
    let table = run_controls(&data, &jobs_for(&controls, &config), &l.config.ablate.seeds, l.config.execution)?;
    print!("{}", table.to_text());
    write(l, ABLATION_FILE, "ablation", AblationBody { table })?;
    Ok(())
}

// ---------------------------------------------------------------------------
// synth

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SynthKind {
    /// Two factor clusters plus a ring of phase-shifted sinusoids.
    Planted,
    /// Clusters whose membership sets the level.
    ColdStart,
    /// Independent AR(1) series.
    Ar1,
}

pub fn cmd_synth(kind: SynthKind, out: &Path, seed: u64) -> Result<()> {
    let corpus = match kind {
        SynthKind::Planted => planted_topology(&PlantedConfig::default(), seed)?,
        SynthKind::ColdStart => cold_start_population(&ColdStartConfig::default(), seed)?,
        SynthKind::Ar1 => ar1_corpus(20, 120, 0.7, seed)?,
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_wide_csv(&corpus, std::fs::File::create(out)?)?;
    Ok(())
}
