//! JSON run configuration.
//!
//! One document with the sections `dataset`, `split`, `model`, `train`,
//! `eval` and `experiment`, plus a top-level `seed`. Every field has a
//! default, and unknown keys are rejected with the path to the key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toolnet::data::PipelineConfig;
use toolnet::model::BackboneSpec;
use toolnet::optim::FrequencySource;
use toolnet::synth::GeneratorConfig;
use toolnet::train::TrainOptions;
use toolnet::{Family, HeadKind, ModelSpec, TrainConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Seeds the split, initialization, sampling and augmentation.
    pub seed: u64,
    pub dataset: DatasetSection,
    pub split: SplitSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Manifest to read; when absent the dataset is generated in memory
    /// from `generator`.
    pub manifest: Option<PathBuf>,
    pub generator: GeneratorConfig,
    pub pipeline: PipelineConfig,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            manifest: None,
            generator: GeneratorConfig::default(),
            pipeline: PipelineConfig {
                stride: 2,
                augmentation: toolnet::data::AugmentationParams::square(64, 56),
                ..PipelineConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    /// Videos held out for validation; 0 trains on everything without
    /// validation.
    pub val_videos: usize,
    /// Precomputed split file; overrides `val_videos`.
    pub plan: Option<PathBuf>,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            val_videos: 2,
            plan: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub generator: GeneratorConfig,
    pub train: TrainSection,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            generator: GeneratorConfig::default(),
            train: TrainSection {
                iterations: 1000,
                val_every: 0,
                ..TrainSection::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub family: Family,
    pub k: usize,
    pub head: HeadKind,
    pub head_kernel: usize,
    pub include_custom_part: bool,
    pub custom_repeats: usize,
    pub custom_features: usize,
    pub backbone: BackboneSpec,
    pub ffe_cut_points: Vec<usize>,
    /// Backbone checkpoint to start from.
    pub pretrained: Option<PathBuf>,
    /// Pretrain the backbone on a generated source task first.
    pub pretrain: Option<PretrainSection>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let s = ModelSpec::fine_tune(0, HeadKind::AvgFc, 1, (1, 1));
        ModelSection {
            family: s.family,
            k: s.k,
            head: s.head,
            head_kernel: s.head_kernel,
            include_custom_part: s.include_custom_part,
            custom_repeats: s.custom_repeats,
            custom_features: s.custom_features,
            backbone: s.backbone,
            ffe_cut_points: s.ffe_cut_points,
            pretrained: None,
            pretrain: None,
        }
    }
}

impl ModelSection {
    /// Full spec once the class count and input size are known.
    pub fn spec(&self, num_classes: usize, input: (usize, usize)) -> ModelSpec {
        ModelSpec {
            family: self.family,
            k: self.k,
            head: self.head,
            head_kernel: self.head_kernel,
            include_custom_part: self.include_custom_part,
            custom_repeats: self.custom_repeats,
            custom_features: self.custom_features,
            num_classes,
            input_height: input.0,
            input_width: input.1,
            backbone: self.backbone.clone(),
            ffe_cut_points: self.ffe_cut_points.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr0: f64,
    pub decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub l2: f64,
    pub weighted: bool,
    pub frequency_source: FrequencySource,
    pub class_frequencies: Option<Vec<f64>>,
    /// Validation cadence in iterations; 0 validates only at the end.
    pub val_every: usize,
    pub stop_at_auc: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::fine_tune(2000, 0);
        // desk-scale recipe; the library defaults keep the full-size values
        TrainSection {
            lr0: 0.02,
            decay: t.decay,
            momentum: t.momentum,
            batch_size: 16,
            iterations: t.iterations,
            l2: t.l2,
            weighted: t.weighted,
            frequency_source: t.frequency_source,
            class_frequencies: None,
            val_every: 500,
            stop_at_auc: None,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr0: self.lr0,
            decay: self.decay,
            momentum: self.momentum,
            batch_size: self.batch_size,
            iterations: self.iterations,
            l2: self.l2,
            weighted: self.weighted,
            frequency_source: self.frequency_source,
            class_frequencies: self.class_frequencies.clone(),
            seed,
        }
    }

    pub fn options(&self) -> TrainOptions {
        TrainOptions {
            val_every: self.val_every,
            stop_at_auc: self.stop_at_auc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FrameSelection {
    /// Every frame of every video in the manifest.
    #[default]
    All,
    /// Frames of the validation videos of the configured split.
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Output directory of a training run.
    pub model_dir: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub frames: FrameSelection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Built-in plan name (`table1` .. `table4`) or a plan JSON file.
    pub plan: String,
    pub repeats: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            plan: "table1".into(),
            repeats: 5,
        }
    }
}

/// Parses a config document, reporting the path to any offending key.
pub fn parse_config(text: &str) -> Result<Config> {
    parse_with_path(text)
}

pub(crate) fn parse_with_path<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        CliError::config(key, e.into_inner().to_string())
    })
}

pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut cfg = parse_config(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or_else(|| Path::new(".")));
    Ok(cfg)
}

impl Config {
    /// Makes relative paths relative to `base` (the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.dataset.manifest);
        fix(&mut self.split.plan);
        fix(&mut self.model.pretrained);
        fix(&mut self.eval.model_dir);
        fix(&mut self.eval.predictions);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = parse_config("{}").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(parse_config(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_reports_path() {
        let err = parse_config(r#"{"train": {"batch_sise": 4}}"#).unwrap_err();
        match err {
            CliError::Config { key, .. } => assert_eq!(key, "train.batch_sise"),
            other => panic!("{other}"),
        }
        let err = parse_config(r#"{"model": {"head": "SOFTMAX"}}"#).unwrap_err();
        assert!(matches!(err, CliError::Config { ref key, .. } if key == "model.head"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
}
