use toolnet::data::{pipeline, AugmentationParams, PipelineConfig, PreparedData};
use toolnet::synth::{self, GeneratorConfig};
use toolnet::train::{TrainOptions, Trainer};
use toolnet::{gradcheck, Checkpoint, Error, HeadKind, Init, ModelSpec, Network, TrainConfig};

fn prepared(seed: u64) -> PreparedData {
    let m = synth::generate(&GeneratorConfig {
        num_videos: 3,
        coverage: vec![3; 6],
        frames_per_video: 20,
        width: 36,
        height: 36,
        seed,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let cfg = PipelineConfig {
        stride: 1,
        augmentation: AugmentationParams::square(36, 32),
        ..PipelineConfig::default()
    };
    pipeline::prepare(&m, None, &cfg, seed).unwrap()
}

fn no_val() -> TrainOptions {
    TrainOptions {
        val_every: 0,
        stop_at_auc: None,
    }
}

#[test]
fn frozen_layers_stay_bit_identical() {
    let data = prepared(1);
    for k in [7, 11] {
        let spec = ModelSpec::fine_tune(k, HeadKind::AvgFc, data.num_classes(), data.input_size());
        let net = Network::build(&spec, Init::Random { seed: 4 }).unwrap();
        let before = net.state();
        let frozen = net.frozen_paths();
        assert!(!frozen.is_empty());
        let mut cfg = TrainConfig::fine_tune(100, 4);
        cfg.batch_size = 4;
        let mut t = Trainer::new(net, &data, cfg, no_val()).unwrap();
        t.run().unwrap();
        let after = t.network().state();
        for p in &frozen {
            assert_eq!(before.get(p), after.get(p), "k={k}: {p} changed");
        }
        let moved = t.network().trainable_paths().iter().any(|p| before.get(p) != after.get(p));
        assert!(moved, "k={k}: no trainable parameter moved");
    }
}

#[test]
fn pretrained_backbone_is_copied_and_head_is_fresh() {
    let spec = ModelSpec::fine_tune(0, HeadKind::AvgFc, 6, (32, 32));
    let donor = Network::build(&spec, Init::Random { seed: 10 }).unwrap();
    let backbone = donor.backbone_state();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("backbone.bin");
    backbone.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, backbone);

    let target_spec = ModelSpec::fine_tune(7, HeadKind::ConvMax, 3, (32, 32));
    let net = Network::build(&target_spec, Init::Pretrained { seed: 1, checkpoint: &loaded }).unwrap();
    let state = net.state();
    for (p, t) in &loaded.tensors {
        assert_eq!(state.get(p), Some(t), "{p}");
    }
    let head: Vec<_> = state.tensors.keys().filter(|p| !toolnet::model::is_backbone_path(p)).collect();
    assert!(!head.is_empty());

    let mut partial = loaded.clone();
    let first = partial.tensors.keys().next().unwrap().clone();
    partial.tensors.remove(&first);
    match Network::build(&target_spec, Init::Pretrained { seed: 1, checkpoint: &partial }) {
        Err(Error::MissingParameters(missing)) => assert_eq!(missing, vec![first]),
        other => panic!("expected missing parameters, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn training_is_deterministic() {
    let data = prepared(2);
    let spec = ModelSpec::fine_tune(0, HeadKind::AvgFc, data.num_classes(), data.input_size());
    let run = || {
        let net = Network::build(&spec, Init::Random { seed: 3 }).unwrap();
        let mut cfg = TrainConfig::fine_tune(15, 3);
        cfg.batch_size = 4;
        let mut t = Trainer::new(net, &data, cfg, no_val()).unwrap();
        let out = t.run().unwrap();
        (out.log, t.network().state().to_bytes())
    };
    assert_eq!(run(), run());
}

#[test]
fn weighted_training_needs_every_class() {
    let data = prepared(3);
    let spec = ModelSpec::fine_tune(0, HeadKind::AvgFc, data.num_classes(), data.input_size());
    let net = Network::build(&spec, Init::Random { seed: 0 }).unwrap();
    let mut cfg = TrainConfig::fine_tune(1, 0);
    cfg.weighted = true;
    cfg.class_frequencies = Some(vec![0.2, 0.1, 0.0, 0.3, 0.1, 0.1]);
    let msg = Trainer::new(net, &data, cfg, no_val()).err().unwrap().to_string();
    assert!(msg.contains(&data.tool_names[2]), "{msg}");
}

#[test]
fn gradient_suite_passes_on_fifty_seeds() {
    let reports = gradcheck::run_suite(0..50).unwrap();
    assert_eq!(reports.len(), 50 * gradcheck::CASES.len());
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed()).collect();
    assert!(failed.is_empty(), "{:#?}", failed.first());
}
