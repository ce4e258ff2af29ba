//! The experiment config file: a flat, schema-validated JSON document with
//! an optional grid subsection for sweeps. Unknown keys are rejected so a
//! typo cannot silently change an experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use attx_core::attx::ConnectionType;
use attx_core::data::{load_segments, synth_generate, Coupling, SegmentDataset};
use attx_core::encoders::EncoderKind;
use attx_core::model::{LossKind, PipelineConfig};
use attx_core::train_eval::{ModelSelection, OptimizerKind, SweepGrid, TrainOptions};
use attx_core::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DatasetSource {
    /// Segment archive produced by `preprocess` or `synth`.
    Archive { path: PathBuf },
    /// Generate synthetic data on the fly.
    Synth {
        seed: u64,
        subjects: usize,
        segments_per_subject: usize,
        coupling: Coupling,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub encoders: Vec<EncoderKind>,
    /// Omitted: every connection type for the modality count.
    #[serde(default)]
    pub connection_types: Option<Vec<ConnectionType>>,
    pub stage_sets: Vec<Vec<usize>>,
    #[serde(default = "default_true")]
    pub include_baseline: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub modalities: Vec<String>,
    pub encoder: EncoderKind,
    #[serde(default = "default_filter_scale")]
    pub filter_scale: f64,
    #[serde(default)]
    pub connection_type: Option<ConnectionType>,
    #[serde(default)]
    pub stages: Vec<usize>,
    #[serde(default = "default_fc_widths")]
    pub fc_widths: (usize, usize),
    pub num_classes: usize,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_val_fraction")]
    pub val_subject_fraction: f64,
    #[serde(default = "default_selection")]
    pub model_selection: ModelSelection,
    #[serde(default)]
    pub stop_at_train_accuracy: Option<f64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub max_seconds: Option<f64>,
    #[serde(default = "default_true")]
    pub record_timing: bool,
}

fn default_filter_scale() -> f64 {
    1.0
}
fn default_fc_widths() -> (usize, usize) {
    (512, 256)
}
fn default_epochs() -> usize {
    100
}
fn default_batch_size() -> usize {
    256
}
fn default_val_fraction() -> f64 {
    0.2
}
fn default_selection() -> ModelSelection {
    ModelSelection::BestValidation
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        config.pipeline()?.validate()?;
        config.train_options().validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)
            .map_err(|e| Error::config(format!("serialize config: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let config = PipelineConfig {
            modalities: self.modalities.clone(),
            encoder: self.encoder,
            filter_scale: self.filter_scale,
            attx_stages: self.stages.clone(),
            connection_type: self.connection_type.clone(),
            fc_widths: self.fc_widths,
            num_classes: self.num_classes,
            loss: self.loss.clone(),
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            optimizer: self.optimizer,
            selection: self.model_selection,
            val_subject_fraction: self.val_subject_fraction,
            stop_at_train_accuracy: self.stop_at_train_accuracy,
        }
    }

    pub fn sweep_grid(&self) -> Result<SweepGrid> {
        let grid = self
            .grid
            .as_ref()
            .ok_or_else(|| Error::config("sweep needs a 'grid' section in the config"))?;
        if grid.encoders.is_empty() || grid.stage_sets.is_empty() {
            return Err(Error::config("grid encoders and stage_sets must be nonempty"));
        }
        Ok(SweepGrid {
            encoders: grid.encoders.clone(),
            connection_types: grid.connection_types.clone(),
            stage_sets: grid.stage_sets.clone(),
            include_baseline: grid.include_baseline,
        })
    }

    /// Materialize the dataset and restrict it to the configured
    /// modalities (order included).
    pub fn load_dataset(&self) -> Result<SegmentDataset> {
        let full = match &self.dataset {
            DatasetSource::Archive { path } => load_segments(path)?,
            DatasetSource::Synth {
                seed,
                subjects,
                segments_per_subject,
                coupling,
            } => synth_generate(*seed, *subjects, *segments_per_subject, *coupling)?,
        };
        if full.num_classes() != self.num_classes {
            return Err(Error::config(format!(
                "config expects {} classes, dataset has {}",
                self.num_classes,
                full.num_classes()
            )));
        }
        if full.modality_names == self.modalities {
            Ok(full)
        } else {
            full.select_modalities(&self.modalities)
        }
    }

    pub fn fingerprint(&self) -> Result<String> {
        Ok(self.pipeline()?.fingerprint())
    }
}
