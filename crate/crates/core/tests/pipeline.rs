use std::collections::HashSet;

use toolnet::data::{self, pipeline, AugmentationParams, PipelineConfig};
use toolnet::synth::{self, GeneratorConfig};

fn small_manifest() -> data::DatasetManifest {
    synth::generate(&GeneratorConfig {
        num_videos: 4,
        coverage: vec![4; 6],
        frames_per_video: 24,
        width: 40,
        height: 40,
        seed: 2,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

fn small_pipeline() -> PipelineConfig {
    PipelineConfig {
        stride: 2,
        augmentation: AugmentationParams::square(36, 32),
        ..PipelineConfig::default()
    }
}

#[test]
fn split_videos_are_disjoint_and_complete() {
    let m = small_manifest();
    let plan = data::plan_split(&m, 1, 0).unwrap();
    let prepared = pipeline::prepare(&m, Some(&plan), &small_pipeline(), 0).unwrap();
    let train: HashSet<_> = prepared.train.iter().map(|s| s.key.video_id.clone()).collect();
    let val: HashSet<_> = prepared.val.iter().map(|s| s.key.video_id.clone()).collect();
    assert!(train.is_disjoint(&val));
    assert_eq!(val.len(), 1);
    // validation keeps every frame of its video
    assert_eq!(prepared.val.len(), 24);
    assert_eq!(prepared.input_size(), (32, 32));
}

#[test]
fn training_frames_follow_stride_then_undersampling() {
    let m = small_manifest();
    let ids: Vec<String> = m.videos.iter().map(|v| v.video_id.clone()).collect();
    let cfg = PipelineConfig {
        undersample_ratio: 1.0,
        ..small_pipeline()
    };
    let frames = pipeline::select_training_frames(&m, &ids, &cfg, 0).unwrap();
    assert_eq!(frames.len(), 4 * 12);
    assert!(frames.iter().all(|f| f.key.frame_index % 2 == 0));
    let thinned = pipeline::select_training_frames(&m, &ids, &small_pipeline(), 0).unwrap();
    let positives = |fs: &[data::FrameEntry]| fs.iter().filter(|f| !f.labels.is_empty_frame()).count();
    assert_eq!(positives(&thinned), positives(&frames));
    assert!(thinned.len() <= frames.len());
}

#[test]
fn training_inputs_are_reproducible_and_vary_by_epoch() {
    let m = small_manifest();
    let prepared = pipeline::prepare(&m, None, &small_pipeline(), 7).unwrap();
    let a = prepared.train_input(0, 7, 0).unwrap();
    let b = prepared.train_input(0, 7, 0).unwrap();
    assert_eq!(a, b);
    let differs = (1..6).any(|e| prepared.train_input(0, 7, e).unwrap() != a);
    assert!(differs);
    assert_eq!((a.height, a.width), (32, 32));
}

#[test]
fn validation_inputs_are_centered_crops() {
    let m = small_manifest();
    let plan = data::plan_split(&m, 1, 0).unwrap();
    let prepared = pipeline::prepare(&m, Some(&plan), &small_pipeline(), 0).unwrap();
    let batch = prepared.val_batch(0..3).unwrap();
    assert_eq!(batch.shape(), &[3, 3, 32, 32]);
    let raw = m.video(&prepared.val[0].key.video_id).unwrap().frames[0].image.load().unwrap().to_image();
    let expected = prepared.eval_input(&raw).unwrap();
    assert_eq!(prepared.val_input(0), &expected);
}
