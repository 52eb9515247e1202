use std::process::Command;

use toolnet::data::AugmentationParams;
use toolnet::{Checkpoint, Init, Network};
use toolnet_cli::commands::{self, PretrainCache};
use toolnet_cli::config::{self, Config};
use toolnet_cli::error::CliError;
use toolnet_cli::experiments::{self, ExperimentPlan, RunSpec};
use toolnet_cli::predictions::Predictions;

fn tiny_config() -> Config {
    let mut cfg = Config::default();
    let g = &mut cfg.dataset.generator;
    g.num_videos = 3;
    g.frames_per_video = 12;
    g.width = 36;
    g.height = 36;
    g.coverage = vec![3; 6];
    g.seed = 1;
    cfg.dataset.pipeline.stride = 1;
    cfg.dataset.pipeline.augmentation = AugmentationParams::square(36, 32);
    cfg.split.val_videos = 1;
    cfg.train.batch_size = 4;
    cfg.train.iterations = 6;
    cfg.train.val_every = 3;
    cfg
}

#[test]
fn perfect_predictions_score_one() {
    let cfg = tiny_config();
    let manifest = commands::load_dataset(&cfg).unwrap();
    let preds = Predictions {
        tool_names: manifest.tool_names.clone(),
        rows: manifest
            .frames()
            .map(|f| (f.key.clone(), f.labels.present.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect()))
            .collect(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    preds.write(&path).unwrap();
    let report = commands::cmd_eval(&cfg, &path, Some(dir.path())).unwrap();
    assert_eq!(report.macro_auc, 1.0);
    assert!(dir.path().join("eval.csv").exists());
}

#[test]
fn zero_iterations_saves_the_initialization() {
    let mut cfg = tiny_config();
    cfg.train.iterations = 0;
    let dir = tempfile::tempdir().unwrap();
    let run = commands::cmd_train(&cfg, dir.path()).unwrap();
    let saved = Checkpoint::load(&dir.path().join(commands::CHECKPOINT_FILE)).unwrap();
    let init = Network::build(run.network.spec(), Init::Random { seed: cfg.seed }).unwrap();
    assert_eq!(saved, init.state());
    let log = std::fs::read_to_string(dir.path().join(commands::LOG_FILE)).unwrap();
    assert_eq!(log, "iteration,lr,loss,val_auc\n");
}

#[test]
fn train_predict_eval_round_trip() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let model_dir = dir.path().join("model");
    let run = commands::cmd_train(&cfg, &model_dir).unwrap();
    let log = std::fs::read_to_string(model_dir.join(commands::LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 1 + 6);
    assert!(log.lines().nth(3).unwrap().split(',').nth(3).is_some_and(|v| !v.is_empty()));

    let mut eval_cfg = cfg.clone();
    eval_cfg.eval.frames = config::FrameSelection::Val;
    let csv = dir.path().join("pred").join("predictions.csv");
    let preds = commands::cmd_predict(&eval_cfg, &model_dir, &csv).unwrap();
    assert_eq!(preds.rows.len(), run.data.val.len());
    assert_eq!(Predictions::read(&csv).unwrap(), preds);

    // scoring the validation frames from disk reproduces the training report
    let from_file = commands::cmd_eval(&eval_cfg, &csv, None).unwrap();
    let from_memory = commands::evaluate_predictions(&preds, &commands::load_dataset(&eval_cfg).unwrap()).unwrap();
    assert_eq!(from_file, from_memory);
    assert_eq!(Some(&from_file), run.outcome.final_report.as_ref());
}

#[test]
fn written_dataset_trains_like_the_generated_one() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let manifest = commands::cmd_generate(&cfg, &dir.path().join("data")).unwrap();
    let mut from_disk = cfg.clone();
    from_disk.dataset.manifest = Some(manifest);
    let a = commands::train_in_memory(&cfg, &mut PretrainCache::default()).unwrap();
    let b = commands::train_in_memory(&from_disk, &mut PretrainCache::default()).unwrap();
    assert_eq!(a.outcome.log, b.outcome.log);
    assert_eq!(a.network.state(), b.network.state());
}

#[test]
fn weighted_training_with_missing_class_is_a_config_error() {
    let mut cfg = tiny_config();
    cfg.train.weighted = true;
    cfg.train.class_frequencies = Some(vec![0.3, 0.0, 0.2, 0.2, 0.1, 0.1]);
    let err = commands::train_in_memory(&cfg, &mut PretrainCache::default()).err().unwrap();
    assert_eq!(err.exit_code(), 2, "{err}");
    assert!(err.to_string().contains("forceps"), "{err}");
}

#[test]
fn experiment_rows_reproduce_from_their_own_config() {
    let base = tiny_config();
    let mut other = base.clone();
    other.model.head = toolnet::HeadKind::ConvMax;
    let plan = ExperimentPlan {
        name: "mini".into(),
        runs: vec![
            RunSpec {
                name: "a".into(),
                row: "FT0".into(),
                column: "avg-fc".into(),
                repeats: 2,
                config: base,
            },
            RunSpec {
                name: "b".into(),
                row: "FT0".into(),
                column: "conv-max".into(),
                repeats: 1,
                config: other,
            },
        ],
    };
    let dir = tempfile::tempdir().unwrap();
    let rows = experiments::run_plan(&plan, Some(dir.path())).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!((rows[0].seed, rows[1].seed), (0, 1));
    let jsonl = std::fs::read_to_string(dir.path().join("results.jsonl")).unwrap();
    let parsed: Vec<experiments::ResultRow> = jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed, rows);
    let again = commands::train_in_memory(&parsed[1].config, &mut PretrainCache::default()).unwrap();
    assert_eq!(again.outcome.final_report.unwrap().macro_auc, parsed[1].val_auc);
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("avg-fc") && summary.contains("conv-max") && summary.contains("FT0"));
}

#[test]
fn plan_file_with_duplicate_names_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let run = serde_json::json!({"name": "x", "row": "r", "column": "c", "repeats": 1, "config": {}});
    let plan = serde_json::json!({"name": "p", "runs": [run, run]});
    let path = dir.path().join("plan.json");
    std::fs::write(&path, plan.to_string()).unwrap();
    assert!(matches!(ExperimentPlan::load(&path), Err(CliError::Config { .. })));
}

fn toolnet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_toolnet"))
}

#[test]
fn binary_reports_config_errors_with_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"train": {"lr": 0.1}}"#).unwrap();
    let out = toolnet()
        .args(["--quiet", "--config"])
        .arg(&path)
        .arg("train")
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.lr"));
}

#[test]
fn binary_generates_and_splits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, tiny_config().to_json()).unwrap();
    let data = dir.path().join("data");
    let status = toolnet()
        .args(["--quiet", "--config"])
        .arg(&cfg_path)
        .arg("generate")
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(data.join("manifest.json").exists());

    let mut cfg = tiny_config();
    cfg.dataset.manifest = Some("data/manifest.json".into());
    std::fs::write(&cfg_path, cfg.to_json()).unwrap();
    let out = toolnet()
        .args(["--quiet", "--seed", "4", "--config"])
        .arg(&cfg_path)
        .arg("split")
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let plan: toolnet::data::SplitPlan =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("split.json")).unwrap()).unwrap();
    assert_eq!(plan.val_video_ids.len(), 1);
}
