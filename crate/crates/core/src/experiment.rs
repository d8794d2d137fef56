//! End-to-end synthetic experiments: controlled comparison on the planted
//! topology corpus and launch-week forecasting on a clustered population.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ablation::{jobs_for, run_controls, ComparisonTable, Control, ControlData};
use crate::adapter::{
    build_adapter_data, build_base_cache, fit_normalizers, train_adapter_on, AdapterConfig, BaseForecastCache,
    BaseProvider,
};
use crate::corpus::{slice_windows, SeriesCorpus, Window, WindowMode, WindowSpec};
use crate::error::Result;
use crate::eval::{cold_start_table, ColdStartTable, WeekPoints};
use crate::forecast::{SeriesFeatures, Variant};
use crate::landscape::{fingerprint_with_cap, Fingerprint};
use crate::manifold::correlation_distance_graph;
use crate::par::Execution;
use crate::persistence::{diagram_of_graph, diagrams_of_graphs, PersistenceDiagram};
use crate::screening::{screen, ScreeningReport, Thresholds};
use crate::sheaf::{spectral_coordinates, SpectralOptions};
use crate::synth::{cold_start_population, planted_topology, sample_indices, ColdStartConfig, PlantedConfig};

/// One fingerprint per group on a grid shared by all groups.
pub fn group_fingerprints(
    corpus: &SeriesCorpus,
    knn: Option<usize>,
    exec: Execution,
) -> Result<BTreeMap<String, Fingerprint>> {
    let groups = match corpus.group_labels() {
        Some(_) => corpus.groups(),
        None => vec![("all".to_string(), (0..corpus.n()).collect())],
    };
    let graphs = groups
        .iter()
        .map(|(_, rows)| {
            let sub = corpus.select_rows(rows);
            correlation_distance_graph(&sub, knn.filter(|&k| k < sub.n()), exec)
        })
        .collect::<Result<Vec<_>>>()?;
    let diagrams = diagrams_of_graphs(&graphs, exec)?;
    let cap = diagrams
        .iter()
        .filter_map(PersistenceDiagram::max_finite_death)
        .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.max(d))))
        .unwrap_or(1.0);
    Ok(groups
        .into_iter()
        .zip(&diagrams)
        .map(|((label, _), d)| (label, fingerprint_with_cap(d, cap)))
        .collect())
}

/// Group fingerprints broadcast to rows, plus block-wise spectral coordinates.
pub fn series_features(
    corpus: &SeriesCorpus,
    fingerprints: &BTreeMap<String, Fingerprint>,
    exec: Execution,
) -> Result<SeriesFeatures> {
    let sheaf = spectral_coordinates(corpus, corpus.group_labels(), &SpectralOptions::default(), exec)?;
    Ok(SeriesFeatures {
        fingerprints: Some(SeriesFeatures::fingerprints_by_group(corpus, fingerprints)?),
        sheaf: Some(sheaf.coords),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedExperiment {
    pub corpus: PlantedConfig,
    pub corpus_seed: u64,
    pub context_len: usize,
    pub horizon: usize,
    pub stride: usize,
    pub provider: BaseProvider,
    pub adapter: AdapterConfig,
    pub seeds: Vec<u64>,
}

impl Default for PlantedExperiment {
    fn default() -> Self {
        let horizon = 4;
        Self {
            corpus: PlantedConfig::default(),
            corpus_seed: 0,
            context_len: 24,
            horizon,
            stride: 2,
            provider: BaseProvider::SeasonalNaive { period: 12 },
            adapter: AdapterConfig {
                branch_dim: 32,
                hidden_dim: 64,
                epochs: 20,
                batch_size: 32,
                ..AdapterConfig::new(horizon)
            },
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlantedSetup {
    pub corpus: SeriesCorpus,
    pub screening: ScreeningReport,
    pub windows: Vec<Window>,
    pub features: SeriesFeatures,
    pub group_fingerprints: BTreeMap<String, Vec<f64>>,
    pub cache: BaseForecastCache,
}

pub fn planted_setup(cfg: &PlantedExperiment, exec: Execution) -> Result<PlantedSetup> {
    let corpus = planted_topology(&cfg.corpus, cfg.corpus_seed)?;
    let population = diagram_of_graph(&correlation_distance_graph(&corpus, None, exec)?, exec)?;
    let screening = screen(&population, corpus.n(), 0.0, Thresholds::default())?;
    let fps = group_fingerprints(&corpus, None, exec)?;
    let features = series_features(&corpus, &fps, exec)?;
    let spec = WindowSpec::rolling(cfg.context_len, cfg.horizon).with_stride(cfg.stride);
    let windows = slice_windows(&corpus, &spec)?.windows;
    let cache = build_base_cache(&corpus, &windows, &cfg.provider, exec)?;
    Ok(PlantedSetup {
        corpus,
        screening,
        windows,
        features,
        group_fingerprints: fps.into_iter().map(|(k, f)| (k, f.values)).collect(),
        cache,
    })
}

pub fn run_planted(
    cfg: &PlantedExperiment,
    controls: &[Control],
    exec: Execution,
) -> Result<(ScreeningReport, ComparisonTable)> {
    let setup = planted_setup(cfg, exec)?;
    let data = ControlData {
        corpus: &setup.corpus,
        windows: &setup.windows,
        features: &setup.features,
        group_fingerprints: &setup.group_fingerprints,
        cache: &setup.cache,
    };
    let table = run_controls(&data, &jobs_for(controls, &cfg.adapter), &cfg.seeds, exec)?;
    Ok((setup.screening, table))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColdStartExperiment {
    pub population: ColdStartConfig,
    pub context_len: usize,
    pub horizon: usize,
    pub weeks: Vec<usize>,
    /// Series held out from training, drawn per seed.
    pub held_out: usize,
    pub provider: BaseProvider,
    pub adapter: AdapterConfig,
}

impl Default for ColdStartExperiment {
    fn default() -> Self {
        let horizon = 4;
        Self {
            population: ColdStartConfig::default(),
            context_len: 12,
            horizon,
            weeks: vec![0, 1, 2, 3],
            held_out: 16,
            provider: BaseProvider::Drift,
            adapter: AdapterConfig {
                branch_dim: 32,
                hidden_dim: 64,
                epochs: 40,
                batch_size: 16,
                ..AdapterConfig::new(horizon)
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColdStartOutcome {
    pub table: ColdStartTable,
}

impl ColdStartOutcome {
    pub fn week_mae(&self, variant: Variant, week: usize) -> Option<f64> {
        let name = variant.to_string();
        self.table.rows.iter().find(|r| r.variant == name)?.mae.get(week).copied().flatten()
    }
}

/// Trains each variant on the launch windows of the training series and
/// scores the launch windows of held-out series. Group fingerprints come
/// from the existing population, the held-out series included only through
/// their group label.
pub fn run_cold_start(
    cfg: &ColdStartExperiment,
    variants: &[Variant],
    seed: u64,
    exec: Execution,
) -> Result<ColdStartOutcome> {
    let corpus = cold_start_population(&cfg.population, seed)?;
    let held = sample_indices(corpus.n(), cfg.held_out, &mut crate::nn::rng_from_seed(seed ^ 0xC01D));
    let fps = group_fingerprints(&corpus.select_rows(&complement(corpus.n(), &held)), None, exec)?;
    let features = series_features(&corpus, &fps, exec)?;
    let spec = WindowSpec::rolling(cfg.context_len, cfg.horizon).with_mode(WindowMode::ColdStart {
        weeks: cfg.weeks.clone(),
    });
    let windows = slice_windows(&corpus, &spec)?.windows;
    let (test, train): (Vec<Window>, Vec<Window>) = windows.into_iter().partition(|w| held.contains(&w.series));
    let cache = build_base_cache(&corpus, &[train.clone(), test.clone()].concat(), &cfg.provider, exec)?;
    let (scaler, norm) = fit_normalizers(&corpus, &train);
    let mut per_variant = BTreeMap::new();
    for &variant in variants {
        let train_data = build_adapter_data(&corpus, &train, &features, &cache, variant, &norm)?;
        let test_data = build_adapter_data(&corpus, &test, &features, &cache, variant, &norm)?;
        let model = train_adapter_on(&train_data, None, &cfg.adapter, variant, scaler, norm, seed)?.model;
        let forecasts = model.predict(&test_data.batch, exec)?;
        let mut weeks: BTreeMap<usize, WeekPoints> = BTreeMap::new();
        for ((f, w), y) in forecasts.iter().zip(&test).zip(test_data.targets.rows()) {
            let entry = weeks.entry(w.week.unwrap_or(0)).or_default();
            entry.0.extend(f.median());
            entry.1.extend(y.iter());
        }
        per_variant.insert(variant.to_string(), weeks);
    }
    Ok(ColdStartOutcome {
        table: cold_start_table(&per_variant)?,
    })
}

fn complement(n: usize, held: &[usize]) -> Vec<usize> {
    (0..n).filter(|i| !held.contains(i)).collect()
}
