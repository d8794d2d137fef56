//! Pipeline configuration read from one TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use topoprior::adapter::{AdapterConfig, BaseProvider};
use topoprior::backbone::{BackboneConfig, BackboneTrainConfig};
use topoprior::corpus::{IngestOptions, WindowMode, WindowSpec};
use topoprior::forecast::Variant;
use topoprior::nn::{AdamWConfig, LrSchedule};
use topoprior::screening::Thresholds;
use topoprior::sheaf::NeuralSheafConfig;
use topoprior::Execution;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Where artifacts are written; relative paths resolve against the config file.
    pub output_dir: PathBuf,
    pub seed: u64,
    pub execution: Execution,
    pub data: DataConfig,
    pub topology: TopologyConfig,
    pub sheaf: SheafConfig,
    pub windows: WindowConfig,
    pub backbone: BackboneSection,
    pub cache: CacheConfig,
    pub adapter: AdapterSection,
    pub ablate: AblateConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("artifacts"),
            seed: 0,
            execution: Execution::Parallel,
            data: DataConfig::default(),
            topology: TopologyConfig::default(),
            sheaf: SheafConfig::default(),
            windows: WindowConfig::default(),
            backbone: BackboneSection::default(),
            cache: CacheConfig::default(),
            adapter: AdapterSection::default(),
            ablate: AblateConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Wide CSV corpus.
    pub path: Option<PathBuf>,
    /// Label used in the screening row; defaults to the file stem.
    pub name: Option<String>,
    pub ingest: IngestOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    /// Neighbours for the sparsified graph; dense when absent.
    pub knn: Option<usize>,
    /// One fingerprint per group when the corpus has group labels.
    pub per_group: bool,
    pub persistence_floor: f64,
    pub thresholds: Thresholds,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            knn: None,
            per_group: true,
            persistence_floor: 0.0,
            thresholds: Thresholds::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SheafEncoder {
    Spectral,
    Neural,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SheafConfig {
    pub encoder: SheafEncoder,
    /// Block-wise SVD per group when labels exist.
    pub block_wise: bool,
    pub normalize: bool,
    pub max_rank: Option<usize>,
    pub neural: NeuralSheafConfig,
}

impl Default for SheafConfig {
    fn default() -> Self {
        Self {
            encoder: SheafEncoder::Spectral,
            block_wise: true,
            normalize: true,
            max_rank: None,
            neural: NeuralSheafConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub context_len: usize,
    pub horizon: usize,
    pub stride: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub mode: WindowMode,
}

impl Default for WindowConfig {
    fn default() -> Self {
        let spec = WindowSpec::rolling(24, 4);
        Self {
            context_len: spec.context_len,
            horizon: spec.horizon,
            stride: 1,
            val_fraction: spec.val_fraction,
            test_fraction: spec.test_fraction,
            mode: WindowMode::Rolling,
        }
    }
}

impl WindowConfig {
    pub fn spec(&self) -> WindowSpec {
        WindowSpec {
            context_len: self.context_len,
            horizon: self.horizon,
            stride: self.stride,
            val_fraction: self.val_fraction,
            test_fraction: self.test_fraction,
            mode: self.mode.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSection {
    pub variant: Variant,
    pub preset: Preset,
    pub d_model: Option<usize>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub head_dim: Option<usize>,
    pub ffn_dim: Option<usize>,
    pub dropout: Option<f64>,
    pub entity_dim: Option<usize>,
    /// Learn one embedding per series.
    pub entity_embeddings: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub schedule: LrSchedule,
    pub patience: Option<usize>,
}

impl Default for BackboneSection {
    fn default() -> Self {
        let t = BackboneTrainConfig::default();
        Self {
            variant: Variant::TdaSheaf,
            preset: Preset::Desk,
            d_model: None,
            layers: None,
            heads: None,
            head_dim: None,
            ffn_dim: None,
            dropout: None,
            entity_dim: None,
            entity_embeddings: false,
            epochs: t.epochs,
            batch_size: t.batch_size,
            optimizer: t.optimizer,
            schedule: t.schedule,
            patience: t.patience,
        }
    }
}

impl BackboneSection {
    pub fn model(&self, windows: &WindowConfig, n_series: usize) -> BackboneConfig {
        let base = match self.preset {
            Preset::Desk => BackboneConfig::desk(windows.context_len, windows.horizon),
            Preset::Full => BackboneConfig::full(windows.context_len, windows.horizon),
        };
        BackboneConfig {
            d_model: self.d_model.unwrap_or(base.d_model),
            layers: self.layers.unwrap_or(base.layers),
            heads: self.heads.unwrap_or(base.heads),
            head_dim: self.head_dim.unwrap_or(base.head_dim),
            ffn_dim: self.ffn_dim.unwrap_or(base.ffn_dim),
            dropout: self.dropout.unwrap_or(base.dropout),
            entity_count: if self.entity_embeddings { n_series } else { 0 },
            entity_dim: self.entity_dim.unwrap_or(base.entity_dim),
            ..base
        }
    }

    pub fn training(&self) -> BackboneTrainConfig {
        BackboneTrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            schedule: self.schedule,
            patience: self.patience,
            ..BackboneTrainConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub provider: BaseProvider,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            provider: BaseProvider::SeasonalNaive { period: 12 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterSection {
    pub variant: Variant,
    pub branch_dim: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub schedule: LrSchedule,
}

impl Default for AdapterSection {
    fn default() -> Self {
        let a = AdapterConfig::new(1);
        Self {
            variant: Variant::TdaSheaf,
            branch_dim: a.branch_dim,
            hidden_dim: a.hidden_dim,
            epochs: a.epochs,
            batch_size: a.batch_size,
            optimizer: a.optimizer,
            schedule: a.schedule,
        }
    }
}

impl AdapterSection {
    pub fn model(&self, horizon: usize) -> AdapterConfig {
        AdapterConfig {
            branch_dim: self.branch_dim,
            hidden_dim: self.hidden_dim,
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            schedule: self.schedule,
            ..AdapterConfig::new(horizon)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub variants: String,
    pub seeds: Vec<u64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            variants: "vanilla,rand,shuffle,tda,tda+sheaf".into(),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Adapter,
    Backbone,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub model: ModelKind,
    /// Window split scored by `eval`.
    pub split: topoprior::corpus::Split,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Adapter,
            split: topoprior::corpus::Split::Test,
        }
    }
}

/// A parsed config plus the directory its relative paths resolve against.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: Config,
    pub base_dir: PathBuf,
}

impl Loaded {
    pub fn read(path: &Path, seed: Option<u64>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        let mut config: Config = parsed.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(seed) = seed {
            config.seed = seed;
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base_dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output(&self, file: &str) -> PathBuf {
        self.resolve(&self.config.output_dir).join(file)
    }
}
