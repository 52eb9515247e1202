//! Implementations of the `toolnet` subcommands.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toolnet::data::augment::{self, AugmentationParams};
use toolnet::data::{self, pipeline, DatasetManifest, FrameKey, MeanImage, PreparedData, SplitPlan};
use toolnet::eval::{self, AucReport};
use toolnet::synth;
use toolnet::train::{self, TrainOutcome, Trainer};
use toolnet::{Checkpoint, Init, LabelVector, ModelSpec, Network, Tensor};

use crate::config::{Config, FrameSelection, PretrainSection};
use crate::error::{CliError, Result};
use crate::predictions::Predictions;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MODEL_FILE: &str = "model.json";
pub const MEAN_FILE: &str = "mean.bin";
pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const SPLIT_FILE: &str = "split.json";
pub const BACKBONE_FILE: &str = "backbone.bin";
pub const REPORT_FILE: &str = "val_report.csv";

/// Everything needed to score new frames with a trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub tool_names: Vec<String>,
    pub augmentation: AugmentationParams,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    crate::config::parse_with_path(&text).map_err(|e| match e {
        CliError::Config { key, message } => CliError::config(format!("{}:{key}", path.display()), message),
        other => other,
    })
}

/// The configured manifest, or the generated dataset when none is given.
pub fn load_dataset(cfg: &Config) -> Result<DatasetManifest> {
    Ok(match &cfg.dataset.manifest {
        Some(p) => DatasetManifest::load(p)?,
        None => synth::generate(&cfg.dataset.generator)?,
    })
}

/// `None` means train on everything with no validation set.
pub fn resolve_split(cfg: &Config, manifest: &DatasetManifest) -> Result<Option<SplitPlan>> {
    if let Some(p) = &cfg.split.plan {
        return read_json(p).map(Some);
    }
    if cfg.split.val_videos == 0 {
        return Ok(None);
    }
    Ok(Some(data::plan_split(manifest, cfg.split.val_videos, cfg.seed)?))
}

/// Memoizes source-task pretraining across runs that share it.
#[derive(Default)]
pub struct PretrainCache {
    entries: HashMap<String, Checkpoint>,
}

impl PretrainCache {
    pub fn backbone(&mut self, section: &PretrainSection, spec: &ModelSpec, cfg: &Config) -> Result<Checkpoint> {
        let key = serde_json::json!({
            "pretrain": section,
            "backbone": spec.backbone,
            "input": [spec.input_height, spec.input_width],
            "pipeline": cfg.dataset.pipeline,
            "seed": cfg.seed,
        })
        .to_string();
        if let Some(ck) = self.entries.get(&key) {
            return Ok(ck.clone());
        }
        log::info!("pretraining backbone on the source task");
        let source = synth::generate_source_task(&section.generator)?;
        let ck = train::pretrain_source(spec, &source, &cfg.dataset.pipeline, &section.train.train_config(cfg.seed))?;
        self.entries.insert(key, ck.clone());
        Ok(ck)
    }
}

/// A finished training run held in memory.
pub struct TrainedRun {
    pub network: Network,
    pub data: PreparedData,
    pub split: Option<SplitPlan>,
    pub outcome: TrainOutcome,
    pub pretrained: Option<Checkpoint>,
}

impl TrainedRun {
    pub fn model(&self) -> TrainedModel {
        TrainedModel {
            spec: self.network.spec().clone(),
            tool_names: self.data.tool_names.clone(),
            augmentation: self.data.params.clone(),
        }
    }
}

/// Builds the network for `cfg` on prepared data.
pub fn build_network(cfg: &Config, data: &PreparedData, cache: &mut PretrainCache) -> Result<(Network, Option<Checkpoint>)> {
    let spec = cfg.model.spec(data.num_classes(), data.input_size());
    let m = &cfg.model;
    if m.pretrained.is_some() && m.pretrain.is_some() {
        return Err(CliError::config("model", "set at most one of `pretrained` and `pretrain`"));
    }
    let backbone = match (&m.pretrained, &m.pretrain) {
        (Some(p), _) => Some(Checkpoint::load(p)?),
        (None, Some(section)) => Some(cache.backbone(section, &spec, cfg)?),
        (None, None) => None,
    };
    let init = match &backbone {
        Some(checkpoint) => Init::Pretrained { seed: cfg.seed, checkpoint },
        None => Init::Random { seed: cfg.seed },
    };
    Ok((Network::build(&spec, init)?, backbone))
}

/// Runs the whole training procedure without touching the disk (apart
/// from reading a configured manifest or checkpoint).
pub fn train_in_memory(cfg: &Config, cache: &mut PretrainCache) -> Result<TrainedRun> {
    let manifest = load_dataset(cfg)?;
    let split = resolve_split(cfg, &manifest)?;
    let data = pipeline::prepare(&manifest, split.as_ref(), &cfg.dataset.pipeline, cfg.seed)?;
    let (net, pretrained) = build_network(cfg, &data, cache)?;
    let mut trainer = Trainer::new(net, &data, cfg.train.train_config(cfg.seed), cfg.train.options())?;
    let outcome = trainer.run()?;
    let network = trainer.into_network();
    Ok(TrainedRun {
        network,
        data,
        split,
        outcome,
        pretrained,
    })
}

pub fn log_csv(log: &[train::LogEntry]) -> String {
    let mut out = String::from("iteration,lr,loss,val_auc\n");
    for e in log {
        let auc = e.val_auc.map_or(String::new(), |a| a.to_string());
        let _ = writeln!(out, "{},{},{},{auc}", e.iteration, e.lr, e.loss);
    }
    out
}

fn mean_checkpoint(mean: &MeanImage) -> Checkpoint {
    let mut t = BTreeMap::new();
    t.insert("mean".to_string(), mean.0.to_tensor());
    Checkpoint::new(t)
}

/// Writes a dataset (target vocabulary, or the source vocabulary when the
/// generator config asks for it) to `out`; returns the manifest path.
pub fn cmd_generate(cfg: &Config, out: &Path) -> Result<PathBuf> {
    create_dir(out)?;
    let manifest = synth::generate(&cfg.dataset.generator)?;
    Ok(synth::write_dataset(&manifest, out)?)
}

pub fn cmd_split(cfg: &Config, out: &Path) -> Result<SplitPlan> {
    let manifest = load_dataset(cfg)?;
    let n = if cfg.split.val_videos == 0 { 2 } else { cfg.split.val_videos };
    let plan = data::plan_split(&manifest, n, cfg.seed)?;
    create_dir(out)?;
    write_file(&out.join(SPLIT_FILE), serde_json::to_string_pretty(&plan).expect("split serializes"))?;
    Ok(plan)
}

/// Trains and writes checkpoint, model description, mean image, log,
/// resolved config and (with validation) the validation report to `out`.
pub fn cmd_train(cfg: &Config, out: &Path) -> Result<TrainedRun> {
    let run = train_in_memory(cfg, &mut PretrainCache::default())?;
    create_dir(out)?;
    run.network.state().save(&out.join(CHECKPOINT_FILE))?;
    mean_checkpoint(&run.data.mean).save(&out.join(MEAN_FILE))?;
    write_file(&out.join(MODEL_FILE), serde_json::to_string_pretty(&run.model()).expect("model serializes"))?;
    write_file(&out.join(LOG_FILE), log_csv(&run.outcome.log))?;
    write_file(&out.join(CONFIG_FILE), cfg.to_json())?;
    if let Some(split) = &run.split {
        write_file(&out.join(SPLIT_FILE), serde_json::to_string_pretty(split).expect("split serializes"))?;
    }
    if let Some(bb) = &run.pretrained {
        bb.save(&out.join(BACKBONE_FILE))?;
    }
    if let Some(report) = &run.outcome.final_report {
        write_file(&out.join(REPORT_FILE), report.to_csv())?;
    }
    Ok(run)
}

/// A trained network plus its preprocessing, loaded from a training output.
pub struct LoadedModel {
    pub model: TrainedModel,
    pub network: Network,
    pub mean: MeanImage,
}

pub fn load_model(dir: &Path) -> Result<LoadedModel> {
    let model: TrainedModel = read_json(&dir.join(MODEL_FILE))?;
    let mut network = Network::build(&model.spec, Init::Random { seed: 0 })?;
    network.load_state(&Checkpoint::load(&dir.join(CHECKPOINT_FILE))?)?;
    let mean_ck = Checkpoint::load(&dir.join(MEAN_FILE))?;
    let t = mean_ck
        .get("mean")
        .ok_or_else(|| toolnet::Error::MissingParameters(vec!["mean".into()]))?;
    let (h, w) = match t.shape() {
        [3, h, w] => (*h, *w),
        s => return Err(toolnet::Error::Checkpoint(format!("mean image has shape {s:?}")).into()),
    };
    let mean = MeanImage(data::Image::new(w, h, t.data().to_vec())?);
    Ok(LoadedModel { model, network, mean })
}

/// Scores frames of the configured dataset with a trained model.
pub fn predict(cfg: &Config, loaded: &LoadedModel) -> Result<Predictions> {
    let manifest = load_dataset(cfg)?;
    let videos: Vec<String> = match cfg.eval.frames {
        FrameSelection::All => manifest.videos.iter().map(|v| v.video_id.clone()).collect(),
        FrameSelection::Val => {
            resolve_split(cfg, &manifest)?
                .ok_or_else(|| CliError::config("eval.frames", "`val` needs a split (split.val_videos > 0 or split.plan)"))?
                .val_video_ids
        }
    };
    let params = &loaded.model.augmentation;
    let c = loaded.model.tool_names.len();
    let mut rows = Vec::new();
    let mut batch_keys: Vec<FrameKey> = Vec::new();
    let mut batch_imgs = Vec::new();
    let flush = |keys: &mut Vec<FrameKey>, imgs: &mut Vec<data::Image>, rows: &mut Vec<(FrameKey, Vec<f64>)>| -> Result<()> {
        if keys.is_empty() {
            return Ok(());
        }
        let out = loaded.network.predict(&pipeline::stack_images(imgs)?)?;
        for (i, key) in keys.drain(..).enumerate() {
            rows.push((key, out.data()[i * c..(i + 1) * c].to_vec()));
        }
        imgs.clear();
        Ok(())
    };
    for id in &videos {
        let v = manifest
            .video(id)
            .ok_or_else(|| toolnet::Error::Data(format!("unknown video {id}")))?;
        for f in &v.frames {
            let img = f.image.load()?.to_image();
            let view = augment::center_view(&img, params)?;
            batch_imgs.push(data::center(&view, &loaded.mean)?);
            batch_keys.push(f.key.clone());
            if batch_imgs.len() == train::EVAL_BATCH {
                flush(&mut batch_keys, &mut batch_imgs, &mut rows)?;
            }
        }
    }
    flush(&mut batch_keys, &mut batch_imgs, &mut rows)?;
    Ok(Predictions {
        tool_names: loaded.model.tool_names.clone(),
        rows,
    })
}

pub fn cmd_predict(cfg: &Config, model_dir: &Path, out_csv: &Path) -> Result<Predictions> {
    let loaded = load_model(model_dir)?;
    let preds = predict(cfg, &loaded)?;
    if let Some(parent) = out_csv.parent() {
        if !parent.as_os_str().is_empty() {
            create_dir(parent)?;
        }
    }
    preds.write(out_csv)?;
    Ok(preds)
}

/// AUC report of predictions against the labels of the configured dataset.
pub fn evaluate_predictions(preds: &Predictions, manifest: &DatasetManifest) -> Result<AucReport> {
    let tool_index: Vec<usize> = preds
        .tool_names
        .iter()
        .map(|n| {
            manifest
                .tool_names
                .iter()
                .position(|m| m == n)
                .ok_or_else(|| toolnet::Error::Data(format!("tool {n} is not in the dataset")))
        })
        .collect::<std::result::Result<_, _>>()?;
    let frames: HashMap<&FrameKey, &LabelVector> = manifest.frames().map(|f| (&f.key, &f.labels)).collect();
    let c = preds.tool_names.len();
    let mut scores = Vec::with_capacity(preds.rows.len() * c);
    let mut labels = Vec::with_capacity(preds.rows.len());
    for (key, s) in &preds.rows {
        if s.len() != c {
            return Err(toolnet::Error::Data(format!("frame {key}: {} scores for {c} tools", s.len())).into());
        }
        let l = frames
            .get(key)
            .ok_or_else(|| toolnet::Error::Data(format!("frame {key} is not in the dataset")))?;
        labels.push(l.select(&tool_index));
        scores.extend_from_slice(s);
    }
    if labels.is_empty() {
        return Err(toolnet::Error::Data("prediction file has no rows".into()).into());
    }
    let t = Tensor::new(&[labels.len(), c], scores)?;
    Ok(eval::macro_auc(&t, &labels, &preds.tool_names)?)
}

pub fn cmd_eval(cfg: &Config, predictions: &Path, out: Option<&Path>) -> Result<AucReport> {
    let preds = Predictions::read(predictions)?;
    let manifest = load_dataset(cfg)?;
    let report = evaluate_predictions(&preds, &manifest)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join("eval.csv"), report.to_csv())?;
    }
    Ok(report)
}
