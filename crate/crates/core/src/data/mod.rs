//! Frame ingestion, sampling, splitting, augmentation and centering.

pub mod augment;
pub mod image;
pub mod manifest;
pub mod mean;
pub mod pipeline;
pub mod sampling;
pub mod split;

pub use augment::{AugmentDraw, AugmentationParams, ColorPca};
pub use image::{Image, RgbFrame};
pub use manifest::{DatasetManifest, FrameEntry, FrameImage, FrameKey, VideoRecord};
pub use mean::{center, compute_mean_image, MeanImage};
pub use pipeline::{prepare, PipelineConfig, PreparedData, Sample, SamplingOrder};
pub use sampling::{subsample_frames, undersample_empty};
pub use split::{plan_split, SplitPlan};
