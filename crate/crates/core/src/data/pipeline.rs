//! From a manifest and split to ready-to-train samples.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::augment::{self, AugmentDraw, AugmentationParams, ColorPca};
use crate::data::image::Image;
use crate::data::manifest::{DatasetManifest, FrameEntry, FrameKey};
use crate::data::mean::{self, MeanImage};
use crate::data::sampling::{subsample_frames, undersample_empty};
use crate::data::split::SplitPlan;
use crate::error::{Error, Result};
use crate::loss::LabelVector;
use crate::optim::FrequencySource;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingOrder {
    StrideFirst,
    UndersampleFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Keep every `stride`-th training frame of each video.
    pub stride: usize,
    /// Fraction of tool-free training frames kept; 1.0 keeps all.
    pub undersample_ratio: f64,
    pub sampling_order: SamplingOrder,
    pub augmentation: AugmentationParams,
    /// When false, training frames get the same centre view as validation.
    pub augment: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stride: 6,
            undersample_ratio: 0.4,
            sampling_order: SamplingOrder::StrideFirst,
            augmentation: AugmentationParams::default(),
            augment: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::invalid("pipeline stride must be at least 1"));
        }
        if !(self.undersample_ratio > 0.0 && self.undersample_ratio <= 1.0) {
            return Err(Error::invalid(format!(
                "undersample_ratio must be in (0, 1], got {}",
                self.undersample_ratio
            )));
        }
        self.augmentation.validate()
    }
}

/// A frame with its pixels already scaled to the pipeline resolution.
#[derive(Debug, Clone)]
pub struct Sample {
    pub key: FrameKey,
    pub labels: LabelVector,
    pub scaled: Arc<Image>,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub tool_names: Vec<String>,
    /// Indices into the manifest's tool list.
    pub kept_tools: Vec<usize>,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub train_videos: Vec<String>,
    pub mean: MeanImage,
    pub pca: ColorPca,
    pub params: AugmentationParams,
    pub augment: bool,
    val_inputs: Vec<Image>,
}

impl PreparedData {
    pub fn num_classes(&self) -> usize {
        self.tool_names.len()
    }

    pub fn input_size(&self) -> (usize, usize) {
        (self.params.crop_height, self.params.crop_width)
    }

    /// Augmented, mean-centred view of training sample `i`. The random
    /// draws come from a stream keyed on the frame and the epoch only.
    pub fn train_input(&self, i: usize, seed: u64, epoch: u64) -> Result<Image> {
        let s = &self.train[i];
        let view = if self.augment {
            let mut rng = rng::stream(
                seed,
                &[rng::hash_str("augment"), rng::hash_str(&s.key.video_id), s.key.frame_index as u64, epoch],
            );
            let draw = AugmentDraw::sample(&self.params, &mut rng)?;
            augment::apply_scaled(&s.scaled, &self.params, &self.pca, &draw)?
        } else {
            self.center_crop(&s.scaled)?
        };
        mean::center(&view, &self.mean)
    }

    pub fn val_input(&self, i: usize) -> &Image {
        &self.val_inputs[i]
    }

    /// Mean-centred centre view of an arbitrary frame at original resolution.
    pub fn eval_input(&self, image: &Image) -> Result<Image> {
        let view = augment::center_view(image, &self.params)?;
        mean::center(&view, &self.mean)
    }

    pub fn val_labels(&self) -> Vec<LabelVector> {
        self.val.iter().map(|s| s.labels.clone()).collect()
    }

    /// Stacks validation inputs `[range]` into `[n, 3, H, W]`.
    pub fn val_batch(&self, range: std::ops::Range<usize>) -> Result<Tensor> {
        stack_images(&self.val_inputs[range])
    }

    /// Per-class positive counts over the training samples.
    pub fn class_frequencies(&self, source: FrequencySource) -> Vec<f64> {
        let c = self.num_classes();
        match source {
            FrequencySource::Frames => {
                let mut f = vec![0.0; c];
                for s in &self.train {
                    for k in 0..c {
                        if s.labels.present[k] && s.labels.evaluate[k] {
                            f[k] += 1.0;
                        }
                    }
                }
                f
            }
            FrequencySource::Videos => {
                let mut seen: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); c];
                for s in &self.train {
                    for k in 0..c {
                        if s.labels.present[k] && s.labels.evaluate[k] {
                            seen[k].insert(&s.key.video_id);
                        }
                    }
                }
                seen.iter().map(|s| s.len() as f64).collect()
            }
        }
    }

    fn center_crop(&self, scaled: &Image) -> Result<Image> {
        let (x, y) = self.params.center_offsets()?;
        scaled.crop(x, y, self.params.crop_width, self.params.crop_height)
    }
}

pub fn stack_images(images: &[Image]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::invalid("cannot stack an empty image list"))?;
    let mut data = Vec::with_capacity(images.len() * first.data.len());
    for img in images {
        if !img.same_size(first) {
            return Err(Error::invalid("images in a batch differ in size"));
        }
        data.extend_from_slice(&img.data);
    }
    Tensor::new(&[images.len(), 3, first.height, first.width], data)
}

/// Training frame selection for one set of videos.
pub fn select_training_frames(manifest: &DatasetManifest, video_ids: &[String], cfg: &PipelineConfig, seed: u64) -> Result<Vec<FrameEntry>> {
    let per_video = |frames: &[FrameEntry]| subsample_frames(frames, cfg.stride);
    let videos = video_ids
        .iter()
        .map(|id| {
            manifest
                .video(id)
                .ok_or_else(|| Error::Data(format!("split refers to unknown video {id}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let frames = match cfg.sampling_order {
        SamplingOrder::StrideFirst => {
            let mut all = Vec::new();
            for v in &videos {
                all.extend(per_video(&v.frames)?);
            }
            undersample_empty(&all, cfg.undersample_ratio, seed)?
        }
        SamplingOrder::UndersampleFirst => {
            let all: Vec<FrameEntry> = videos.iter().flat_map(|v| v.frames.iter().cloned()).collect();
            let kept = undersample_empty(&all, cfg.undersample_ratio, seed)?;
            let mut out = Vec::new();
            for v in &videos {
                let mine: Vec<FrameEntry> = kept.iter().filter(|f| f.key.video_id == v.video_id).cloned().collect();
                out.extend(per_video(&mine)?);
            }
            out
        }
    };
    Ok(frames)
}

fn load_samples(frames: &[FrameEntry], keep: &[usize], params: &AugmentationParams) -> Result<Vec<Sample>> {
    frames
        .iter()
        .map(|f| {
            let rgb = f.image.load()?;
            let scaled = rgb.to_image().resize(params.scale_width, params.scale_height)?;
            Ok(Sample {
                key: f.key.clone(),
                labels: f.labels.select(keep),
                scaled: Arc::new(scaled),
            })
        })
        .collect()
}

/// Builds training and validation samples. With `split == None` every
/// video is used for training and there is no validation set.
pub fn prepare(manifest: &DatasetManifest, split: Option<&SplitPlan>, cfg: &PipelineConfig, seed: u64) -> Result<PreparedData> {
    cfg.validate()?;
    manifest.validate()?;
    let (train_ids, val_ids, kept_tools) = match split {
        Some(plan) => {
            let ids: BTreeSet<&String> = manifest.videos.iter().map(|v| &v.video_id).collect();
            for id in plan.train_video_ids.iter().chain(&plan.val_video_ids) {
                if !ids.contains(id) {
                    return Err(Error::Data(format!("split refers to unknown video {id}")));
                }
            }
            (
                plan.train_video_ids.clone(),
                plan.val_video_ids.clone(),
                plan.kept_tool_indices(&manifest.tool_names),
            )
        }
        None => (
            manifest.videos.iter().map(|v| v.video_id.clone()).collect(),
            Vec::new(),
            (0..manifest.num_classes()).collect(),
        ),
    };
    if kept_tools.is_empty() {
        return Err(Error::Data("no tool is present on both sides of the split".into()));
    }
    let train_frames = select_training_frames(manifest, &train_ids, cfg, seed)?;
    if train_frames.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let val_frames: Vec<FrameEntry> = val_ids
        .iter()
        .filter_map(|id| manifest.video(id))
        .flat_map(|v| v.frames.iter().cloned())
        .collect();
    let params = cfg.augmentation.clone();
    let train = load_samples(&train_frames, &kept_tools, &params)?;
    let val = load_samples(&val_frames, &kept_tools, &params)?;
    let (cx, cy) = params.center_offsets()?;
    let train_views = train
        .iter()
        .map(|s| s.scaled.crop(cx, cy, params.crop_width, params.crop_height))
        .collect::<Result<Vec<_>>>()?;
    let mean = mean::compute_mean_image(&train_views)?;
    let pca = if cfg.augment && params.color_shift {
        ColorPca::fit(&train_views)?
    } else {
        ColorPca::none()
    };
    let val_inputs = val
        .iter()
        .map(|s| mean::center(&s.scaled.crop(cx, cy, params.crop_width, params.crop_height)?, &mean))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedData {
        tool_names: kept_tools.iter().map(|&i| manifest.tool_names[i].clone()).collect(),
        kept_tools,
        train,
        val,
        train_videos: train_ids,
        mean,
        pca,
        params,
        augment: cfg.augment,
        val_inputs,
    })
}
