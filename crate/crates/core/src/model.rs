//! FT and FFE network families with avg-fc or conv-max heads.
//!
//! The backbone is a small residual network: a stride-2 stem conv (plus an
//! optional 2x2 max pool) followed by stages of basic residual blocks.
//! Conv layers are numbered from 1 (the stem) in forward order; each block
//! contributes two. Projection shortcuts are not counted, matching the usual
//! ResNet layer count.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::{Conv2d, ConvBn, CustomPart, ForwardCtx, Linear, Mode, ResidualBlock, TensorKind, Visit};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// Fine-tuning: full backbone, leading `k` conv layers frozen.
    #[serde(rename = "FT")]
    FineTune,
    /// Fixed feature extractor: first `k` conv layers, all frozen, followed
    /// by an optional trainable custom part.
    #[serde(rename = "FFE")]
    FixedExtractor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    #[serde(rename = "AVG_FC")]
    AvgFc,
    #[serde(rename = "CONV_MAX")]
    ConvMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub stem_width: usize,
    pub stem_pool: bool,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec {
            stem_width: 8,
            stem_pool: true,
            stage_widths: vec![8, 16, 32, 64],
            blocks_per_stage: vec![2, 2, 2, 2],
        }
    }
}

impl BackboneSpec {
    pub fn num_blocks(&self) -> usize {
        self.blocks_per_stage.iter().sum()
    }

    pub fn conv_layers_total(&self) -> usize {
        1 + 2 * self.num_blocks()
    }

    /// `(in_channels, out_channels, stride)` of every block in order.
    fn block_plan(&self) -> Vec<(usize, usize, usize)> {
        let mut plan = Vec::new();
        let mut cin = self.stem_width;
        for (s, (&width, &count)) in self.stage_widths.iter().zip(&self.blocks_per_stage).enumerate() {
            for b in 0..count {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                plan.push((cin, width, stride));
                cin = width;
            }
        }
        plan
    }
}

fn default_head_kernel() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_custom_repeats() -> usize {
    3
}

fn default_custom_features() -> usize {
    32
}

fn default_cut_points() -> Vec<usize> {
    vec![7, 11, 13, 17]
}

/// Declarative description of one network instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    /// FT: number of frozen leading conv layers. FFE: number of backbone
    /// conv layers used as the fixed extractor.
    pub k: usize,
    pub head: HeadKind,
    /// Kernel size of the conv-max adaptation conv (1 or 3).
    #[serde(default = "default_head_kernel")]
    pub head_kernel: usize,
    /// FFE only; `false` gives the no-custom-part variant.
    #[serde(default = "default_true")]
    pub include_custom_part: bool,
    #[serde(default = "default_custom_repeats")]
    pub custom_repeats: usize,
    #[serde(default = "default_custom_features")]
    pub custom_features: usize,
    pub num_classes: usize,
    pub input_height: usize,
    pub input_width: usize,
    #[serde(default)]
    pub backbone: BackboneSpec,
    /// Allowed FFE cut points (conv-layer counts ending on a block boundary).
    #[serde(default = "default_cut_points")]
    pub ffe_cut_points: Vec<usize>,
}

impl ModelSpec {
    /// FT spec with the default backbone.
    pub fn fine_tune(k: usize, head: HeadKind, num_classes: usize, input: (usize, usize)) -> Self {
        ModelSpec {
            family: Family::FineTune,
            k,
            head,
            head_kernel: default_head_kernel(),
            include_custom_part: true,
            custom_repeats: default_custom_repeats(),
            custom_features: default_custom_features(),
            num_classes,
            input_height: input.0,
            input_width: input.1,
            backbone: BackboneSpec::default(),
            ffe_cut_points: default_cut_points(),
        }
    }

    pub fn fixed_extractor(k: usize, head: HeadKind, custom_part: bool, num_classes: usize, input: (usize, usize)) -> Self {
        ModelSpec {
            family: Family::FixedExtractor,
            include_custom_part: custom_part,
            ..Self::fine_tune(k, head, num_classes, input)
        }
    }

    pub fn backbone_layers_total(&self) -> usize {
        self.backbone.conv_layers_total()
    }

    /// Number of residual blocks instantiated for this spec.
    fn blocks_used(&self) -> usize {
        match self.family {
            Family::FineTune => self.backbone.num_blocks(),
            Family::FixedExtractor => (self.k - 1) / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let total = self.backbone_layers_total();
        let b = &self.backbone;
        if b.stage_widths.len() != b.blocks_per_stage.len() || b.stage_widths.is_empty() {
            return Err(Error::invalid("backbone stage_widths and blocks_per_stage must be non-empty and equally long"));
        }
        if b.stem_width == 0 || b.stage_widths.contains(&0) || b.blocks_per_stage.contains(&0) {
            return Err(Error::invalid("backbone widths and block counts must be positive"));
        }
        if self.num_classes == 0 {
            return Err(Error::invalid("num_classes must be at least 1"));
        }
        if self.head_kernel != 1 && self.head_kernel != 3 {
            return Err(Error::invalid(format!("head_kernel must be 1 or 3, got {}", self.head_kernel)));
        }
        match self.family {
            Family::FineTune => {
                if self.k >= total {
                    return Err(Error::invalid(format!(
                        "FT requires 0 <= k < {total} (backbone conv layers), got k={}",
                        self.k
                    )));
                }
            }
            Family::FixedExtractor => {
                if !self.ffe_cut_points.contains(&self.k) {
                    return Err(Error::invalid(format!(
                        "FFE k={} is not one of the configured cut points {:?}",
                        self.k, self.ffe_cut_points
                    )));
                }
                if self.k == 0 || self.k > total || !(self.k - 1).is_multiple_of(2) {
                    return Err(Error::invalid(format!(
                        "FFE cut point {} must end on a block boundary (1 + 2*blocks, at most {total})",
                        self.k
                    )));
                }
                if self.include_custom_part && (self.custom_repeats == 0 || self.custom_features == 0) {
                    return Err(Error::invalid("custom part needs repeats >= 1 and features >= 1"));
                }
            }
        }
        let (h, w) = self.feature_extent()?;
        if h == 0 || w == 0 {
            return Err(Error::invalid(format!(
                "input {}x{} is too small for this network",
                self.input_height, self.input_width
            )));
        }
        Ok(())
    }

    /// Spatial extent of the features entering the head.
    pub fn feature_extent(&self) -> Result<(usize, usize)> {
        let conv = |e: usize, k: usize, s: usize, p: usize| (e + 2 * p).checked_sub(k).map(|v| v / s + 1);
        let pool = |e: usize| e.checked_sub(2).map(|v| v / 2 + 1);
        let too_small = || Error::invalid(format!("input {}x{} is too small for this network", self.input_height, self.input_width));
        let mut ext = [self.input_height, self.input_width];
        for e in &mut ext {
            *e = conv(*e, 3, 2, 1).ok_or_else(too_small)?;
            if self.backbone.stem_pool {
                *e = pool(*e).ok_or_else(too_small)?;
            }
            for &(_, _, stride) in self.backbone.block_plan().iter().take(self.blocks_used()) {
                *e = conv(*e, 3, stride, 1).ok_or_else(too_small)?;
            }
            if self.family == Family::FixedExtractor && self.include_custom_part {
                for _ in 0..self.custom_repeats {
                    *e = pool(*e).ok_or_else(too_small)?;
                }
            }
        }
        Ok((ext[0], ext[1]))
    }
}

/// How a network's parameters are initialized.
#[derive(Debug, Clone, Copy)]
pub enum Init<'a> {
    Random { seed: u64 },
    /// Backbone from a checkpoint; remaining layers randomly initialized.
    Pretrained { seed: u64, checkpoint: &'a Checkpoint },
}

#[derive(Debug, Clone)]
enum Head {
    AvgFc(Linear),
    ConvMax(Conv2d),
}

/// A constructed network. Outputs are per-class sigmoid scores.
#[derive(Debug, Clone)]
pub struct Network {
    spec: ModelSpec,
    stem: ConvBn,
    blocks: Vec<ResidualBlock>,
    custom: Option<CustomPart>,
    head: Head,
}

pub const STEM_PREFIX: &str = "stem.";
pub const BACKBONE_PREFIX: &str = "backbone.";

pub fn is_backbone_path(path: &str) -> bool {
    path.starts_with(STEM_PREFIX) || path.starts_with(BACKBONE_PREFIX)
}

impl Network {
    pub fn build(spec: &ModelSpec, init: Init<'_>) -> Result<Network> {
        spec.validate()?;
        let seed = match init {
            Init::Random { seed } | Init::Pretrained { seed, .. } => seed,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = &spec.backbone;
        let mut stem = ConvBn::new("stem", 3, b.stem_width, 3, 2, &mut rng);
        let mut blocks: Vec<ResidualBlock> = b
            .block_plan()
            .into_iter()
            .take(spec.blocks_used())
            .enumerate()
            .map(|(i, (cin, cout, stride))| ResidualBlock::new(format!("backbone.{i}"), cin, cout, stride, &mut rng))
            .collect();
        let feat_channels = blocks.last().map_or(b.stem_width, |blk| blk.out_channels());

        let frozen_layers = match spec.family {
            Family::FineTune => spec.k,
            Family::FixedExtractor => usize::MAX,
        };
        stem.set_frozen(frozen_layers >= 1);
        for (i, blk) in blocks.iter_mut().enumerate() {
            let (first, second) = (2 + 2 * i, 3 + 2 * i);
            blk.first.set_frozen(first <= frozen_layers);
            blk.second.set_frozen(second <= frozen_layers);
            if let Some(p) = &mut blk.projection {
                p.set_frozen(second <= frozen_layers);
            }
        }

        let custom = match spec.family {
            Family::FixedExtractor if spec.include_custom_part => Some(CustomPart::new(
                "custom",
                feat_channels,
                spec.custom_features,
                spec.custom_repeats,
                &mut rng,
            )?),
            _ => None,
        };
        let head_in = custom.as_ref().map_or(feat_channels, |c| c.features);
        let head = match spec.head {
            HeadKind::AvgFc => Head::AvgFc(Linear::new("head.fc", head_in, spec.num_classes, &mut rng)),
            HeadKind::ConvMax => Head::ConvMax(Conv2d::new(
                "head.conv",
                head_in,
                spec.num_classes,
                spec.head_kernel,
                1,
                spec.head_kernel / 2,
                &mut rng,
            )),
        };
        let mut net = Network {
            spec: spec.clone(),
            stem,
            blocks,
            custom,
            head,
        };
        net.check_unique_paths()?;
        if let Init::Pretrained { checkpoint, .. } = init {
            net.load_backbone(checkpoint)?;
        }
        Ok(net)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn check_unique_paths(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let mut dup = None;
        self.visit(&mut |path, _, _, _| {
            if !seen.insert(path.to_string()) {
                dup = Some(path.to_string());
            }
        });
        match dup {
            Some(p) => Err(Error::invalid(format!("duplicate parameter path {p}"))),
            None => Ok(()),
        }
    }

    /// Runs the network up to (not including) the head.
    fn features(&self, g: &mut Graph, x: NodeId, ctx: &mut ForwardCtx) -> Result<NodeId> {
        let cin = g.value(x)?.shape().get(1).copied();
        if cin != Some(3) {
            return Err(Error::invalid(format!(
                "network expects 3-channel input, got shape {:?}",
                g.value(x)?.shape()
            )));
        }
        let mut y = self.stem.forward(g, x, ctx)?;
        y = g.relu(y)?;
        if self.spec.backbone.stem_pool {
            y = g.max_pool(y, 2, 2)?;
        }
        for blk in &self.blocks {
            y = blk.forward(g, y, ctx)?;
        }
        if let Some(c) = &self.custom {
            y = c.forward(g, y, ctx)?;
        }
        Ok(y)
    }

    /// Records the full forward pass and returns the `[N, c]` output node.
    pub fn forward_with(&self, g: &mut Graph, x: NodeId, ctx: &mut ForwardCtx) -> Result<NodeId> {
        let f = self.features(g, x, ctx)?;
        head_forward(g, f, &self.head)
    }

    /// Forward pass that also folds batch statistics into running averages
    /// when `mode` is [`Mode::Train`].
    pub fn forward(&mut self, g: &mut Graph, x: NodeId, mode: Mode) -> Result<NodeId> {
        let mut ctx = ForwardCtx::new(mode);
        let out = self.forward_with(g, x, &mut ctx)?;
        self.commit(&ctx);
        Ok(out)
    }

    fn commit(&mut self, ctx: &ForwardCtx) {
        self.stem.commit(ctx);
        for b in &mut self.blocks {
            b.commit(ctx);
        }
        if let Some(c) = &mut self.custom {
            c.commit(ctx);
        }
    }

    /// Inference-mode scores for a `[N, 3, H, W]` batch.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.input(batch.clone(), false)?;
        let y = self.forward_with(&mut g, x, &mut ForwardCtx::new(Mode::Inference))?;
        Ok(g.value(y)?.clone())
    }

    /// Inference-mode pooled backbone features `[N, C]` (global average).
    pub fn embed(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.input(batch.clone(), false)?;
        let f = self.features(&mut g, x, &mut ForwardCtx::new(Mode::Inference))?;
        let p = g.global_avg_pool(f)?;
        Ok(g.value(p)?.clone())
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &Tensor, TensorKind, bool)) {
        self.stem.visit(f);
        for b in &self.blocks {
            b.visit(f);
        }
        if let Some(c) = &self.custom {
            c.visit(f);
        }
        match &self.head {
            Head::AvgFc(l) => l.visit(f),
            Head::ConvMax(c) => c.visit(f),
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, TensorKind, bool)) {
        self.stem.visit_mut(f);
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        if let Some(c) = &mut self.custom {
            c.visit_mut(f);
        }
        match &mut self.head {
            Head::AvgFc(l) => l.visit_mut(f),
            Head::ConvMax(c) => c.visit_mut(f),
        }
    }

    /// Every named tensor, including batch-norm running statistics.
    pub fn state(&self) -> Checkpoint {
        let mut tensors = BTreeMap::new();
        self.visit(&mut |path, t, _, _| {
            tensors.insert(path.to_string(), t.clone());
        });
        Checkpoint::new(tensors)
    }

    /// Only the backbone (stem and residual blocks) tensors.
    pub fn backbone_state(&self) -> Checkpoint {
        let mut ck = self.state();
        ck.tensors.retain(|p, _| is_backbone_path(p));
        ck
    }

    /// Paths of parameters the optimizer may update.
    pub fn trainable_paths(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |path, _, kind, frozen| {
            if kind.is_parameter() && !frozen {
                out.push(path.to_string());
            }
        });
        out
    }

    pub fn frozen_paths(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |path, _, _, frozen| {
            if frozen {
                out.push(path.to_string());
            }
        });
        out
    }

    fn load_matching(&mut self, ck: &Checkpoint, filter: impl Fn(&str) -> bool) -> Result<()> {
        let mut missing = Vec::new();
        let mut bad_shape = Vec::new();
        self.visit_mut(&mut |path, t, _, _| {
            if !filter(path) {
                return;
            }
            match ck.get(path) {
                None => missing.push(path.to_string()),
                Some(v) if v.shape() != t.shape() => {
                    bad_shape.push(format!("{path}: expected {:?}, found {:?}", t.shape(), v.shape()))
                }
                Some(v) => *t = v.clone(),
            }
        });
        if !missing.is_empty() {
            return Err(Error::MissingParameters(missing));
        }
        if !bad_shape.is_empty() {
            return Err(Error::Checkpoint(bad_shape.join("; ")));
        }
        Ok(())
    }

    /// Copies every backbone tensor used by this network from `ck`.
    pub fn load_backbone(&mut self, ck: &Checkpoint) -> Result<()> {
        self.load_matching(ck, is_backbone_path)
    }

    /// Replaces every tensor from a full checkpoint of the same spec.
    pub fn load_state(&mut self, ck: &Checkpoint) -> Result<()> {
        self.load_matching(ck, |_| true)
    }
}

/// Applies a classification head to `[N, C, H, W]` features, giving `[N, c]`
/// sigmoid scores.
fn head_forward(g: &mut Graph, features: NodeId, head: &Head) -> Result<NodeId> {
    let channels = g.value(features)?.shape().get(1).copied();
    let logits = match head {
        Head::AvgFc(fc) => {
            if channels != Some(fc.weight.shape()[1]) {
                return Err(Error::invalid(format!(
                    "avg-fc head expects {} channels, got features {:?}",
                    fc.weight.shape()[1],
                    g.value(features)?.shape()
                )));
            }
            let pooled = g.global_avg_pool(features)?;
            fc.forward(g, pooled)?
        }
        Head::ConvMax(conv) => {
            if channels != Some(conv.in_channels()) {
                return Err(Error::invalid(format!(
                    "conv-max head expects {} channels, got features {:?}",
                    conv.in_channels(),
                    g.value(features)?.shape()
                )));
            }
            let maps = conv.forward(g, features)?;
            g.global_max_pool(maps)?
        }
    };
    g.sigmoid(logits)
}

/// Stand-alone head application used by tests and probes: avg-fc uses
/// `params = (weight [c, C], bias [c])`, conv-max uses
/// `params = (kernel [c, C, k, k], bias [c])`.
pub fn apply_head(g: &mut Graph, features: NodeId, kind: HeadKind, weight: &Tensor, bias: &Tensor) -> Result<NodeId> {
    let head = match kind {
        HeadKind::AvgFc => Head::AvgFc(Linear {
            path: "head.fc".into(),
            weight: weight.clone(),
            bias: bias.clone(),
            frozen: false,
        }),
        HeadKind::ConvMax => {
            let k = weight.shape().get(2).copied().unwrap_or(1);
            Head::ConvMax(Conv2d {
                path: "head.conv".into(),
                weight: weight.clone(),
                bias: bias.clone(),
                stride: 1,
                padding: k / 2,
                frozen: false,
            })
        }
    };
    head_forward(g, features, &head)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ft(k: usize) -> ModelSpec {
        ModelSpec::fine_tune(k, HeadKind::AvgFc, 4, (32, 32))
    }

    #[test]
    fn ft0_has_nothing_frozen() {
        let net = Network::build(&ft(0), Init::Random { seed: 1 }).unwrap();
        assert!(net.frozen_paths().is_empty());
    }

    #[test]
    fn ft_freezes_leading_layers() {
        let net = Network::build(&ft(3), Init::Random { seed: 1 }).unwrap();
        let frozen = net.frozen_paths();
        assert!(frozen.iter().any(|p| p == "stem.conv.weight"));
        assert!(frozen.iter().any(|p| p == "backbone.0.conv2.conv.weight"));
        assert!(!frozen.iter().any(|p| p.starts_with("backbone.1.")));
        assert!(!frozen.iter().any(|p| p.starts_with("head.")));
    }

    #[test]
    fn ft_rejects_fully_frozen_backbone() {
        let spec = ft(17);
        assert!(matches!(Network::build(&spec, Init::Random { seed: 0 }), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn ffe_without_custom_part() {
        let spec = ModelSpec::fixed_extractor(17, HeadKind::AvgFc, false, 4, (32, 32));
        let net = Network::build(&spec, Init::Random { seed: 2 }).unwrap();
        assert!(net.custom.is_none());
        assert_eq!(net.blocks.len(), 8);
        assert_eq!(net.trainable_paths(), vec!["head.fc.weight", "head.fc.bias"]);
    }

    #[test]
    fn ffe_rejects_unlisted_cut_point() {
        let spec = ModelSpec::fixed_extractor(9, HeadKind::AvgFc, true, 4, (64, 64));
        assert!(Network::build(&spec, Init::Random { seed: 0 }).is_err());
    }

    #[test]
    fn ffe_custom_part_needs_room() {
        let spec = ModelSpec::fixed_extractor(17, HeadKind::AvgFc, true, 4, (32, 32));
        assert!(Network::build(&spec, Init::Random { seed: 0 }).is_err());
        let mut spec = ModelSpec::fixed_extractor(7, HeadKind::ConvMax, true, 4, (64, 64));
        spec.custom_repeats = 2;
        let net = Network::build(&spec, Init::Random { seed: 0 }).unwrap();
        assert_eq!(net.blocks.len(), 3);
        let out = net.predict(&Tensor::full(&[2, 3, 64, 64], 0.1)).unwrap();
        assert_eq!(out.shape(), &[2, 4]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Network::build(&ft(0), Init::Random { seed: 9 }).unwrap().state();
        let b = Network::build(&ft(0), Init::Random { seed: 9 }).unwrap().state();
        assert_eq!(a, b);
    }

    #[test]
    fn pretrained_load_copies_backbone_and_reports_missing() {
        let src = Network::build(&ft(0), Init::Random { seed: 1 }).unwrap();
        let ck = src.backbone_state();
        let net = Network::build(&ft(5), Init::Pretrained { seed: 2, checkpoint: &ck }).unwrap();
        for (p, t) in &ck.tensors {
            assert_eq!(net.state().get(p).unwrap(), t, "{p}");
        }
        let mut partial = ck.clone();
        partial.tensors.remove("backbone.2.conv1.conv.weight");
        match Network::build(&ft(0), Init::Pretrained { seed: 2, checkpoint: &partial }) {
            Err(Error::MissingParameters(m)) => assert_eq!(m, vec!["backbone.2.conv1.conv.weight"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn outputs_are_independent_probabilities() {
        let spec = ModelSpec::fine_tune(0, HeadKind::ConvMax, 5, (32, 32));
        let net = Network::build(&spec, Init::Random { seed: 4 }).unwrap();
        let x = Tensor::from_fn(&[3, 3, 32, 32], |i| ((i * 37) % 101) as f64 / 101.0 - 0.5);
        let y = net.predict(&x).unwrap();
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        for row in y.data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() > 1e-6);
        }
    }

    #[test]
    fn zero_fc_gives_one_half() {
        let mut g = Graph::new();
        let f = g.input(Tensor::from_fn(&[2, 3, 2, 2], |i| i as f64), false).unwrap();
        let y = apply_head(&mut g, f, HeadKind::AvgFc, &Tensor::zeros(&[4, 3]), &Tensor::zeros(&[4])).unwrap();
        assert!(g.value(y).unwrap().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn conv_max_with_selecting_kernel() {
        let mut g = Graph::new();
        let feats = Tensor::from_fn(&[1, 2, 3, 3], |i| (i as f64 * 0.7).sin());
        let f = g.input(feats.clone(), false).unwrap();
        let mut kernel = Tensor::zeros(&[2, 2, 1, 1]);
        kernel.data_mut()[0] = 1.0;
        kernel.data_mut()[3] = 1.0;
        let y = apply_head(&mut g, f, HeadKind::ConvMax, &kernel, &Tensor::zeros(&[2])).unwrap();
        for (c, plane) in feats.data().chunks(9).enumerate() {
            let m = plane.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(g.value(y).unwrap().data()[c], crate::ops::sigmoid_scalar(m));
        }
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = ModelSpec::fixed_extractor(11, HeadKind::ConvMax, true, 6, (56, 56));
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"FFE\"") && json.contains("\"CONV_MAX\""));
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
