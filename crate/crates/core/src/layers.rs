//! Parameterized layers and composite blocks built from graph operations.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::ops::NormStats;
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// Role of a named tensor inside a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
    Scale,
    Shift,
    RunningMean,
    RunningVar,
}

impl TensorKind {
    /// Whether the optimizer updates tensors of this kind.
    pub fn is_parameter(self) -> bool {
        !matches!(self, TensorKind::RunningMean | TensorKind::RunningVar)
    }
}

/// Per-forward-pass state: the mode and batch statistics waiting to be
/// folded into running averages.
#[derive(Debug)]
pub struct ForwardCtx {
    pub mode: Mode,
    pending: HashMap<String, (Vec<f64>, Vec<f64>, usize)>,
}

impl ForwardCtx {
    pub fn new(mode: Mode) -> Self {
        ForwardCtx {
            mode,
            pending: HashMap::new(),
        }
    }
}

/// Visitor over every named tensor of a layer.
pub trait Visit {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor, TensorKind, bool));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, TensorKind, bool));
}

/// He-uniform initialization: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub path: String,
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub frozen: bool,
}

impl Conv2d {
    pub fn new(
        path: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            path: path.into(),
            weight: he_uniform(&[out_channels, in_channels, kernel, kernel], fan_in, rng),
            bias: Tensor::zeros(&[out_channels]),
            stride,
            padding,
            frozen: false,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let w = g.param(&format!("{}.weight", self.path), self.weight.clone(), !self.frozen)?;
        let b = g.param(&format!("{}.bias", self.path), self.bias.clone(), !self.frozen)?;
        g.conv2d(x, w, b, self.stride, self.padding)
    }
}

impl Visit for Conv2d {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor, TensorKind, bool)) {
        f(&format!("{}.weight", self.path), &self.weight, TensorKind::Weight, self.frozen);
        f(&format!("{}.bias", self.path), &self.bias, TensorKind::Bias, self.frozen);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, TensorKind, bool)) {
        f(&format!("{}.weight", self.path), &mut self.weight, TensorKind::Weight, self.frozen);
        f(&format!("{}.bias", self.path), &mut self.bias, TensorKind::Bias, self.frozen);
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub path: String,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
    /// Frozen layers always normalize with running statistics and never
    /// update them.
    pub frozen: bool,
}

impl BatchNorm2d {
    pub fn new(path: impl Into<String>, channels: usize) -> Self {
        BatchNorm2d {
            path: path.into(),
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum: BN_MOMENTUM,
            eps: BN_EPSILON,
            frozen: false,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId, ctx: &mut ForwardCtx) -> Result<NodeId> {
        let gamma = g.param(&format!("{}.gamma", self.path), self.gamma.clone(), !self.frozen)?;
        let beta = g.param(&format!("{}.beta", self.path), self.beta.clone(), !self.frozen)?;
        let use_batch = ctx.mode == Mode::Train && !self.frozen;
        let stats = if use_batch {
            NormStats::Batch
        } else {
            NormStats::Running {
                mean: self.running_mean.data(),
                var: self.running_var.data(),
            }
        };
        let count = {
            let shape = g.value(x)?.shape();
            shape.iter().product::<usize>() / shape.get(1).copied().unwrap_or(1)
        };
        let (node, moments) = g.batch_norm(x, gamma, beta, stats, self.eps)?;
        if let Some((mean, var)) = moments {
            ctx.pending.insert(self.path.clone(), (mean, var, count));
        }
        Ok(node)
    }

    /// Folds batch moments into the running statistics:
    /// `running = momentum * running + (1 - momentum) * batch`, using the
    /// unbiased batch variance.
    pub fn update_running(&mut self, mean: &[f64], var: &[f64], count: usize) {
        let m = self.momentum;
        let correction = count as f64 / (count as f64 - 1.0);
        for (r, b) in self.running_mean.data_mut().iter_mut().zip(mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.running_var.data_mut().iter_mut().zip(var) {
            *r = m * *r + (1.0 - m) * b * correction;
        }
    }

    pub fn commit(&mut self, ctx: &ForwardCtx) {
        if let Some((mean, var, count)) = ctx.pending.get(&self.path) {
            self.update_running(mean, var, *count);
        }
    }
}

impl Visit for BatchNorm2d {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor, TensorKind, bool)) {
        f(&format!("{}.gamma", self.path), &self.gamma, TensorKind::Scale, self.frozen);
        f(&format!("{}.beta", self.path), &self.beta, TensorKind::Shift, self.frozen);
        f(&format!("{}.running_mean", self.path), &self.running_mean, TensorKind::RunningMean, self.frozen);
        f(&format!("{}.running_var", self.path), &self.running_var, TensorKind::RunningVar, self.frozen);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, TensorKind, bool)) {
        f(&format!("{}.gamma", self.path), &mut self.gamma, TensorKind::Scale, self.frozen);
        f(&format!("{}.beta", self.path), &mut self.beta, TensorKind::Shift, self.frozen);
        f(&format!("{}.running_mean", self.path), &mut self.running_mean, TensorKind::RunningMean, self.frozen);
        f(&format!("{}.running_var", self.path), &mut self.running_var, TensorKind::RunningVar, self.frozen);
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub path: String,
    pub weight: Tensor,
    pub bias: Tensor,
    pub frozen: bool,
}

impl Linear {
    pub fn new(path: impl Into<String>, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Linear {
            path: path.into(),
            weight: he_uniform(&[outputs, inputs], inputs, rng),
            bias: Tensor::zeros(&[outputs]),
            frozen: false,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let w = g.param(&format!("{}.weight", self.path), self.weight.clone(), !self.frozen)?;
        let b = g.param(&format!("{}.bias", self.path), self.bias.clone(), !self.frozen)?;
        g.linear(x, w, b)
    }
}

impl Visit for Linear {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor, TensorKind, bool)) {
        f(&format!("{}.weight", self.path), &self.weight, TensorKind::Weight, self.frozen);
        f(&format!("{}.bias", self.path), &self.bias, TensorKind::Bias, self.frozen);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, TensorKind, bool)) {
        f(&format!("{}.weight", self.path), &mut self.weight, TensorKind::Weight, self.frozen);
        f(&format!("{}.bias", self.path), &mut self.bias, TensorKind::Bias, self.frozen);
    }
}

/// A convolution followed by batch normalization.
#[derive(Debug, Clone)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBn {
    pub fn new(path: &str, cin: usize, cout: usize, kernel: usize, stride: usize, rng: &mut impl Rng) -> Self {
        ConvBn {
            conv: Conv2d::new(format!("{path}.conv"), cin, cout, kernel, stride, kernel / 2, rng),
            bn: BatchNorm2d::new(format!("{path}.bn"), cout),
        }
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.conv.frozen = frozen;
        self.bn.frozen = frozen;
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId, ctx: &mut ForwardCtx) -> Result<NodeId> {
        let y = self.conv.forward(g, x)?;
        self.bn.forward(g, y, ctx)
    }

    pub fn commit(&mut self, ctx: &ForwardCtx) {
        self.bn.commit(ctx);
    }
}

impl Visit for ConvBn {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor, TensorKind, bool)) {
        self.conv.visit(f);
        self.bn.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, TensorKind, bool)) {
        self.conv.visit_mut(f);
        self.bn.visit_mut(f);
    }
}

/// Basic residual block: two 3x3 conv+bn layers on the main branch, an
/// identity or 1x1 projection shortcut, and a final relu.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub path: String,
    pub first: ConvBn,
    pub second: ConvBn,
    pub projection: Option<ConvBn>,
}

impl ResidualBlock {
    pub fn new(path: impl Into<String>, in_channels: usize, out_channels: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let path = path.into();
        let first = ConvBn::new(&format!("{path}.conv1"), in_channels, out_channels, 3, stride, rng);
        let second = ConvBn::new(&format!("{path}.conv2"), out_channels, out_channels, 3, 1, rng);
        let projection = (stride != 1 || in_channels != out_channels)
            .then(|| ConvBn::new(&format!("{path}.proj"), in_channels, out_channels, 1, stride, rng));
        ResidualBlock {
            path,
            first,
            second,
            projection,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.first.conv.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.second.conv.out_channels()
    }

    pub fn stride(&self) -> usize {
        self.first.conv.stride
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId, ctx: &mut ForwardCtx) -> Result<NodeId> {
        let cin = g.value(x)?.shape().get(1).copied();
        if cin != Some(self.in_channels()) {
            return Err(Error::invalid(format!(
                "{}: expected {} input channels, got shape {:?}",
                self.path,
                self.in_channels(),
                g.value(x)?.shape()
            )));
        }
        let h = self.first.forward(g, x, ctx)?;
        let h = g.relu(h)?;
        let h = self.second.forward(g, h, ctx)?;
        let shortcut = match &self.projection {
            Some(p) => p.forward(g, x, ctx)?,
            None => x,
        };
        let sum = g.add(h, shortcut)?;
        g.relu(sum)
    }

    pub fn commit(&mut self, ctx: &ForwardCtx) {
        self.first.commit(ctx);
        self.second.commit(ctx);
        if let Some(p) = &mut self.projection {
            p.commit(ctx);
        }
    }
}

impl Visit for ResidualBlock {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor, TensorKind, bool)) {
        self.first.visit(f);
        self.second.visit(f);
        if let Some(p) = &self.projection {
            p.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, TensorKind, bool)) {
        self.first.visit_mut(f);
        self.second.visit_mut(f);
        if let Some(p) = &mut self.projection {
            p.visit_mut(f);
        }
    }
}

/// Trainable stack placed after a fixed feature extractor: `repeats` times
/// a max pool followed by three 3x3 conv + batch norm + relu layers.
#[derive(Debug, Clone)]
pub struct CustomPart {
    pub path: String,
    pub repeats: usize,
    pub features: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub layers: Vec<ConvBn>,
}

pub const CUSTOM_CONVS_PER_REPEAT: usize = 3;

impl CustomPart {
    pub fn new(
        path: impl Into<String>,
        in_channels: usize,
        features: usize,
        repeats: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if repeats == 0 {
            return Err(Error::invalid("custom part needs at least one repetition"));
        }
        if features == 0 {
            return Err(Error::invalid("custom part needs at least one feature map"));
        }
        let path = path.into();
        let mut layers = Vec::with_capacity(repeats * CUSTOM_CONVS_PER_REPEAT);
        let mut cin = in_channels;
        for r in 0..repeats {
            for l in 0..CUSTOM_CONVS_PER_REPEAT {
                layers.push(ConvBn::new(&format!("{path}.{r}.{l}"), cin, features, 3, 1, rng));
                cin = features;
            }
        }
        Ok(CustomPart {
            path,
            repeats,
            features,
            pool_window: 2,
            pool_stride: 2,
            layers,
        })
    }

    pub fn out_extent(&self, extent: usize) -> Option<usize> {
        (0..self.repeats).try_fold(extent, |e, _| {
            (e >= self.pool_window).then(|| (e - self.pool_window) / self.pool_stride + 1)
        })
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId, ctx: &mut ForwardCtx) -> Result<NodeId> {
        let (_, _, h, w) = g.value(x)?.dims4()?;
        if self.out_extent(h.min(w)).is_none() {
            return Err(Error::invalid(format!(
                "{}: spatial extent {h}x{w} too small for {} poolings",
                self.path, self.repeats
            )));
        }
        let mut y = x;
        for chunk in self.layers.chunks(CUSTOM_CONVS_PER_REPEAT) {
            y = g.max_pool(y, self.pool_window, self.pool_stride)?;
            for layer in chunk {
                y = layer.forward(g, y, ctx)?;
                y = g.relu(y)?;
            }
        }
        Ok(y)
    }

    pub fn commit(&mut self, ctx: &ForwardCtx) {
        for l in &mut self.layers {
            l.commit(ctx);
        }
    }
}

impl Visit for CustomPart {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor, TensorKind, bool)) {
        for l in &self.layers {
            l.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, TensorKind, bool)) {
        for l in &mut self.layers {
            l.visit_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_main_branch(block: &mut ResidualBlock) {
        for layer in [&mut block.first, &mut block.second] {
            layer.visit_mut(&mut |_, t, kind, _| {
                if kind.is_parameter() {
                    t.data_mut().fill(0.0);
                }
            });
        }
    }

    #[test]
    fn zeroed_block_passes_relu_of_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut block = ResidualBlock::new("b", 3, 3, 1, &mut rng);
        zero_main_branch(&mut block);
        let x = Tensor::from_fn(&[2, 3, 4, 4], |_| rng.random_range(-1.0..1.0));
        for mode in [Mode::Train, Mode::Inference] {
            let mut g = Graph::new();
            let xi = g.input(x.clone(), false).unwrap();
            let y = block.forward(&mut g, xi, &mut ForwardCtx::new(mode)).unwrap();
            assert_eq!(g.value(y).unwrap(), &crate::ops::relu(&x));
        }
    }

    #[test]
    fn projection_with_stride_two_halves_extent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let block = ResidualBlock::new("b", 2, 4, 2, &mut rng);
        assert!(block.projection.is_some());
        let mut g = Graph::new();
        let x = g.input(Tensor::ones(&[1, 2, 8, 6]), false).unwrap();
        let y = block.forward(&mut g, x, &mut ForwardCtx::new(Mode::Train)).unwrap();
        assert_eq!(g.value(y).unwrap().shape(), &[1, 4, 4, 3]);
    }

    #[test]
    fn block_rejects_channel_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let block = ResidualBlock::new("b", 2, 2, 1, &mut rng);
        let mut g = Graph::new();
        let x = g.input(Tensor::ones(&[1, 3, 4, 4]), false).unwrap();
        assert!(matches!(
            block.forward(&mut g, x, &mut ForwardCtx::new(Mode::Train)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn custom_part_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let part = CustomPart::new("custom", 5, 6, 3, &mut rng).unwrap();
        assert_eq!(part.layers.len(), 9);
        let mut g = Graph::new();
        let x = g.input(Tensor::from_fn(&[2, 5, 16, 16], |i| (i % 7) as f64), false).unwrap();
        let y = part.forward(&mut g, x, &mut ForwardCtx::new(Mode::Train)).unwrap();
        assert_eq!(g.value(y).unwrap().shape(), &[2, 6, 2, 2]);

        let mut g = Graph::new();
        let small = g.input(Tensor::ones(&[1, 5, 4, 4]), false).unwrap();
        assert!(part.forward(&mut g, small, &mut ForwardCtx::new(Mode::Train)).is_err());
    }

    #[test]
    fn custom_part_requires_a_repetition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(CustomPart::new("custom", 3, 4, 0, &mut rng).is_err());
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNorm2d::new("bn", 1);
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[1, 1, 1, 2], vec![1.0, 3.0]).unwrap(), false).unwrap();
        let mut ctx = ForwardCtx::new(Mode::Train);
        bn.forward(&mut g, x, &mut ctx).unwrap();
        bn.commit(&ctx);
        // batch mean 2, unbiased variance 2
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-15);

        bn.frozen = true;
        let before = bn.running_mean.clone();
        let mut ctx = ForwardCtx::new(Mode::Train);
        bn.forward(&mut g, x, &mut ctx).unwrap();
        bn.commit(&ctx);
        assert_eq!(bn.running_mean, before);
    }
}
