//! Mini-batch training loop, validation and source-task pretraining.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::pipeline::{self, PipelineConfig, PreparedData};
use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::eval::{self, AucReport};
use crate::graph::Graph;
use crate::layers::Mode;
use crate::loss::{self, ClassWeights, LabelVector};
use crate::model::{Family, HeadKind, Init, ModelSpec, Network};
use crate::optim::{lr_at, Sgd, TrainConfig};
use crate::rng;
use crate::tensor::Tensor;

/// Frames per forward pass during evaluation.
pub const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    pub lr: f64,
    /// Mean loss over the mini-batch.
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    /// Validate every this many iterations; 0 validates only at the end.
    pub val_every: usize,
    /// Stop once validation macro AUC reaches this value.
    pub stop_at_auc: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            val_every: 500,
            stop_at_auc: None,
        }
    }
}

/// Shuffled pass over the training set, reshuffled every epoch.
#[derive(Debug, Clone)]
struct BatchSampler {
    seed: u64,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
}

impl BatchSampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = BatchSampler {
            seed,
            order: (0..n).collect(),
            cursor: 0,
            epoch: 0,
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        self.order.sort_unstable();
        let mut rng = rng::stream(self.seed, &[rng::hash_str("epoch"), self.epoch]);
        self.order.shuffle(&mut rng);
    }

    /// Returns `(sample index, epoch)` pairs.
    fn next(&mut self, size: usize) -> Vec<(usize, u64)> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.epoch += 1;
                self.cursor = 0;
                self.shuffle();
            }
            out.push((self.order[self.cursor], self.epoch));
            self.cursor += 1;
        }
        out
    }
}

pub struct Trainer<'d> {
    net: Network,
    data: &'d PreparedData,
    cfg: TrainConfig,
    opts: TrainOptions,
    sgd: Sgd,
    weights: Option<ClassWeights>,
    sampler: BatchSampler,
    iteration: usize,
    log: Vec<LogEntry>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<LogEntry>,
    pub final_report: Option<AucReport>,
    pub iterations_run: usize,
}

impl TrainOutcome {
    pub fn best_val_auc(&self) -> Option<f64> {
        self.log.iter().filter_map(|e| e.val_auc).reduce(f64::max)
    }
}

/// Loss weights for `cfg`, or `None` when training unweighted.
pub fn resolve_weights(cfg: &TrainConfig, data: &PreparedData) -> Result<Option<ClassWeights>> {
    if !cfg.weighted {
        return Ok(None);
    }
    let freq = match &cfg.class_frequencies {
        Some(f) if f.len() != data.num_classes() => {
            return Err(Error::invalid(format!(
                "class_frequencies has {} entries, expected {}",
                f.len(),
                data.num_classes()
            )))
        }
        Some(f) => f.clone(),
        None => data.class_frequencies(cfg.frequency_source),
    };
    if let Some(k) = freq.iter().position(|&f| !(f > 0.0)) {
        return Err(Error::invalid(format!(
            "weighted loss needs a positive frequency for every class; {} has {}",
            data.tool_names[k], freq[k]
        )));
    }
    loss::class_weights(&freq).map(Some)
}

impl<'d> Trainer<'d> {
    pub fn new(net: Network, data: &'d PreparedData, cfg: TrainConfig, opts: TrainOptions) -> Result<Self> {
        cfg.validate()?;
        let spec = net.spec();
        if spec.num_classes != data.num_classes() {
            return Err(Error::invalid(format!(
                "model has {} outputs but the data has {} classes",
                spec.num_classes,
                data.num_classes()
            )));
        }
        if (spec.input_height, spec.input_width) != data.input_size() {
            return Err(Error::invalid(format!(
                "model input {}x{} does not match pipeline crop {}x{}",
                spec.input_width,
                spec.input_height,
                data.input_size().1,
                data.input_size().0
            )));
        }
        let weights = resolve_weights(&cfg, data)?;
        Ok(Trainer {
            sgd: Sgd::new(cfg.momentum, cfg.l2),
            sampler: BatchSampler::new(data.train.len(), cfg.seed),
            net,
            data,
            cfg,
            opts,
            weights,
            iteration: 0,
            log: Vec::new(),
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn weights(&self) -> Option<&ClassWeights> {
        self.weights.as_ref()
    }

    /// One SGD update; returns the mean batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let lr = lr_at(self.iteration, &self.cfg);
        let picks = self.sampler.next(self.cfg.batch_size);
        let mut images = Vec::with_capacity(picks.len());
        let mut labels: Vec<LabelVector> = Vec::with_capacity(picks.len());
        for &(i, epoch) in &picks {
            images.push(self.data.train_input(i, self.cfg.seed, epoch)?);
            labels.push(self.data.train[i].labels.clone());
        }
        let batch = pipeline::stack_images(&images)?;
        let mut g = Graph::new();
        let x = g.input(batch, false)?;
        let out = self.net.forward(&mut g, x, Mode::Train)?;
        let lo = loss::batch_loss(&labels, g.value(out)?, self.weights.as_ref())?;
        let grads = g.backward(out, &lo.grad)?;
        let mut err = None;
        let sgd = &mut self.sgd;
        self.net.visit_mut(&mut |path, t, kind, frozen| {
            if err.is_some() || frozen || !kind.is_parameter() {
                return;
            }
            if let Some(gr) = grads.param(path) {
                if let Err(e) = sgd.step(path, t, gr, lr) {
                    err = Some(e);
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        self.log.push(LogEntry {
            iteration: self.iteration,
            lr,
            loss: lo.loss,
            val_auc: None,
        });
        self.iteration += 1;
        Ok(lo.loss)
    }

    /// Macro AUC on the validation frames, or `None` without a validation set.
    pub fn validate(&self) -> Result<Option<AucReport>> {
        if self.data.val.is_empty() {
            return Ok(None);
        }
        evaluate(&self.net, self.data).map(Some)
    }

    /// Runs until `cfg.iterations` or the optional AUC target is reached.
    pub fn run(&mut self) -> Result<TrainOutcome> {
        let mut final_report = None;
        while self.iteration < self.cfg.iterations {
            self.step()?;
            let due = self.opts.val_every > 0 && self.iteration % self.opts.val_every == 0;
            if due || self.iteration == self.cfg.iterations {
                if let Some(report) = self.validate()? {
                    let auc = report.macro_auc;
                    if let Some(last) = self.log.last_mut() {
                        last.val_auc = Some(auc);
                    }
                    log::info!("iteration {} val macro AUC {auc:.4}", self.iteration);
                    final_report = Some(report);
                    if self.opts.stop_at_auc.is_some_and(|t| auc >= t) {
                        break;
                    }
                }
            }
        }
        Ok(TrainOutcome {
            log: self.log.clone(),
            final_report,
            iterations_run: self.iteration,
        })
    }
}

/// Scores every validation frame, `[N, c]`.
pub fn predict_val(net: &Network, data: &PreparedData) -> Result<Tensor> {
    let n = data.val.len();
    if n == 0 {
        return Err(Error::invalid("no validation frames to score"));
    }
    let mut parts = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_BATCH).min(n);
        parts.push(net.predict(&data.val_batch(start..end)?)?);
        start = end;
    }
    let c = data.num_classes();
    let data_out: Vec<f64> = parts.into_iter().flat_map(|t| t.into_data()).collect();
    Tensor::new(&[n, c], data_out)
}

pub fn evaluate(net: &Network, data: &PreparedData) -> Result<AucReport> {
    let scores = predict_val(net, data)?;
    eval::macro_auc(&scores, &data.val_labels(), &data.tool_names)
}

/// Trains a fine-tuning network with nothing frozen on a source task and
/// returns its backbone tensors. `spec` fixes the backbone and input size;
/// its family, head and class count are replaced for pretraining.
pub fn pretrain_source(spec: &ModelSpec, source: &DatasetManifest, pipeline_cfg: &PipelineConfig, cfg: &TrainConfig) -> Result<Checkpoint> {
    let data = pipeline::prepare(source, None, pipeline_cfg, cfg.seed)?;
    let source_spec = ModelSpec {
        family: Family::FineTune,
        k: 0,
        head: HeadKind::AvgFc,
        num_classes: data.num_classes(),
        ..spec.clone()
    };
    let net = Network::build(&source_spec, Init::Random { seed: cfg.seed })?;
    let mut trainer = Trainer::new(
        net,
        &data,
        cfg.clone(),
        TrainOptions {
            val_every: 0,
            stop_at_auc: None,
        },
    )?;
    trainer.run()?;
    Ok(trainer.network().backbone_state())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_covers_each_epoch() {
        let mut s = BatchSampler::new(5, 3);
        let first: Vec<_> = s.next(5);
        let mut idx: Vec<usize> = first.iter().map(|p| p.0).collect();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
        assert!(first.iter().all(|p| p.1 == 0));
        let next = s.next(3);
        assert!(next.iter().all(|p| p.1 == 1));
        let mut again = BatchSampler::new(5, 3);
        assert_eq!(again.next(5), first);
    }
}
