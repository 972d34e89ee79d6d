//! TOML run configuration shared by all commands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionConfig, PartitionKey};
use crate::data::{CsvSchema, Role};
use crate::model::{GradientTarget, Hyperparams};
use crate::selection::RemovalDirection;
use crate::trainer::{Optimizer, TrainConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub grid: Option<GridSection>,
    pub attribution: AttributionSection,
    pub select: SelectSection,
    pub experiment: ExperimentSection,
    pub gradcam: GradcamSection,
    pub synth: SynthSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Raw CSV (header = signal names + label column).
    pub csv: Option<PathBuf>,
    /// Windowed dataset snapshot; used instead of `csv`.
    pub snapshot: Option<PathBuf>,
    pub label_column: String,
    pub time_column: Option<String>,
    pub signals: Option<Vec<String>>,
    pub classes: Option<Vec<String>>,
    pub window_len: usize,
    pub slide: Option<usize>,
    pub min_class_count: usize,
    pub test_ratio: f64,
    pub valid_ratio: f64,
    /// Z-score each signal with statistics of the training split.
    pub standardize: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            csv: None,
            snapshot: None,
            label_column: "label".into(),
            time_column: None,
            signals: None,
            classes: None,
            window_len: 60,
            slide: None,
            min_class_count: 1,
            test_ratio: 0.2,
            valid_ratio: 0.2,
            standardize: false,
        }
    }
}

impl DataSection {
    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            label_column: self.label_column.clone(),
            signals: self.signals.clone(),
            time_column: self.time_column.clone(),
            classes: self.classes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub conv_size: usize,
    pub n_filters: usize,
    pub n_conv: usize,
    pub dense_widths: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let hp = Hyperparams::new(60, 1, 2);
        Self {
            conv_size: hp.conv_size,
            n_filters: hp.n_filters,
            n_conv: hp.n_conv,
            dense_widths: hp.dense_widths,
        }
    }
}

impl ModelSection {
    pub fn hyperparams(&self, window_len: usize, n_signals: usize, n_classes: usize) -> Hyperparams {
        Hyperparams {
            conv_size: self.conv_size,
            n_filters: self.n_filters,
            n_conv: self.n_conv,
            dense_widths: self.dense_widths.clone(),
            window_len,
            n_signals,
            n_classes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerName,
    pub class_weighting: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            optimizer: OptimizerName::Adam,
            class_weighting: t.class_weighting,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: match self.optimizer {
                OptimizerName::Adam => Optimizer::adam(),
                OptimizerName::Sgd => Optimizer::Sgd,
            },
            seed,
            class_weighting: self.class_weighting,
        }
    }
}

/// Hyperparameter grid for `train`; every combination is trained and the best by
/// validation accuracy is kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub conv_size: Vec<usize>,
    pub n_filters: Vec<usize>,
    pub learning_rate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionSection {
    pub target: GradientTarget,
    pub partition: PartitionKey,
    /// Class weights for the importance vector, in class order; must sum to 1.
    pub siv_weights: Option<Vec<f64>>,
}

impl AttributionSection {
    pub fn config(&self) -> AttributionConfig {
        AttributionConfig {
            target: self.target,
            partition: self.partition,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    /// Largest subset size allowed; defaults to the number of signals.
    pub gamma: Option<usize>,
    pub seeds: usize,
    /// Also run the exhaustive search (at most 12 signals).
    pub brute_force: bool,
}

impl Default for SelectSection {
    fn default() -> Self {
        Self {
            gamma: None,
            seeds: 1,
            brute_force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub direction: RemovalDirection,
    pub seeds: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            direction: RemovalDirection::Min,
            seeds: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcamSection {
    pub model: Option<PathBuf>,
    /// Part of the data to analyze; `all` uses every window without splitting.
    pub split: Option<Role>,
    /// Windows to export grad-CAM vectors for; the importance matrix then uses only
    /// these windows.
    pub windows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub informative: usize,
    pub noise: usize,
    pub samples_per_class: usize,
    pub segment_len: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            informative: 3,
            noise: 5,
            samples_per_class: 188,
            segment_len: 24,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn slide(&self) -> usize {
        self.data.slide.unwrap_or(self.data.window_len)
    }
}
