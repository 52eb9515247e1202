//! Define-by-run operation recording and reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its nodes. Calling
//! [`Graph::backward`] walks the record in reverse and returns gradients for
//! trainable parameters and for inputs created with `requires_grad`.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::ops::{self, NormStats};
use crate::tensor::Tensor;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node in a specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    graph: u64,
    index: usize,
}

enum Op {
    Input,
    Param(String),
    Conv2d {
        input: usize,
        kernel: usize,
        bias: usize,
        stride: usize,
        padding: usize,
        cols: Vec<f64>,
    },
    Linear {
        input: usize,
        weight: usize,
        bias: usize,
    },
    Relu(usize),
    Sigmoid(usize),
    Add(usize, usize),
    GlobalAvgPool(usize),
    GlobalMaxPool {
        input: usize,
        argmax: Vec<usize>,
    },
    MaxPool {
        input: usize,
        argmax: Vec<usize>,
        window: usize,
        stride: usize,
    },
    BatchNorm {
        input: usize,
        gamma: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
        beta: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    params: BTreeMap<String, Tensor>,
    inputs: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn param(&self, path: &str) -> Option<&Tensor> {
        self.params.get(path)
    }

    pub fn input(&self, node: NodeId) -> Option<&Tensor> {
        self.inputs.get(&node)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.params
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Smallest gap between the largest and second largest value over all
/// `wh x ww` windows of an `[N, C, H, W]` tensor.
fn pool_gap(x: &Tensor, wh: usize, ww: usize, stride: usize) -> f64 {
    let s = x.shape();
    let (h, w) = (s[2], s[3]);
    if wh * ww < 2 || wh > h || ww > w {
        return f64::INFINITY;
    }
    let (oh, ow) = ((h - wh) / stride + 1, (w - ww) / stride + 1);
    let mut gap = f64::INFINITY;
    for plane in x.data().chunks(h * w) {
        for oy in 0..oh {
            for ox in 0..ow {
                let (mut best, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                for y in oy * stride..oy * stride + wh {
                    for &v in &plane[y * w + ox * stride..y * w + ox * stride + ww] {
                        if v > best {
                            second = best;
                            best = v;
                        } else if v > second {
                            second = v;
                        }
                    }
                }
                gap = gap.min(best - second);
            }
        }
    }
    gap
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn index(&self, node: NodeId) -> Result<usize> {
        if node.graph != self.id || node.index >= self.nodes.len() {
            return Err(Error::State(format!(
                "node {node:?} was not recorded by this graph"
            )));
        }
        Ok(node.index)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, what: &str) -> Result<NodeId> {
        value.ensure_finite(what)?;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId {
            graph: self.id,
            index: self.nodes.len() - 1,
        })
    }

    fn val(&self, index: usize) -> &Tensor {
        &self.nodes[index].value
    }

    fn rg(&self, index: usize) -> bool {
        self.nodes[index].requires_grad
    }

    /// Smallest distance of any recorded relu input from zero, or of any
    /// max-pool winner from the runner-up in its window. Finite differences
    /// with a step well below this margin see a smooth function.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu(i) => {
                    margin = self.val(*i).data().iter().fold(margin, |m, v| m.min(v.abs()));
                }
                Op::MaxPool { input, window, stride, .. } => {
                    margin = margin.min(pool_gap(self.val(*input), *window, *window, *stride));
                }
                Op::GlobalMaxPool { input, .. } => {
                    let s = self.val(*input).shape();
                    margin = margin.min(pool_gap(self.val(*input), s[2], s[3], 1));
                }
                _ => {}
            }
        }
        margin
    }

    pub fn value(&self, node: NodeId) -> Result<&Tensor> {
        Ok(self.val(self.index(node)?))
    }

    /// Records a constant input; gradients are returned for it only when
    /// `requires_grad` is set.
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Result<NodeId> {
        self.push(value, Op::Input, requires_grad, "input")
    }

    /// Records a named parameter. Frozen parameters (`trainable == false`)
    /// never receive a gradient entry.
    pub fn param(&mut self, path: &str, value: Tensor, trainable: bool) -> Result<NodeId> {
        self.push(value, Op::Param(path.to_string()), trainable, path)
    }

    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, bias: NodeId, stride: usize, padding: usize) -> Result<NodeId> {
        let (i, k, b) = (self.index(input)?, self.index(kernel)?, self.index(bias)?);
        let (out, cols) = ops::conv2d_forward(self.val(i), self.val(k), self.val(b), stride, padding)?;
        let rg = self.rg(i) || self.rg(k) || self.rg(b);
        let cols = if rg { cols } else { Vec::new() };
        let op = Op::Conv2d {
            input: i,
            kernel: k,
            bias: b,
            stride,
            padding,
            cols,
        };
        self.push(out, op, rg, "conv2d")
    }

    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let (i, w, b) = (self.index(input)?, self.index(weight)?, self.index(bias)?);
        let out = ops::linear(self.val(i), self.val(w), self.val(b))?;
        let rg = self.rg(i) || self.rg(w) || self.rg(b);
        self.push(out, Op::Linear { input: i, weight: w, bias: b }, rg, "fully_connected")
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let i = self.index(input)?;
        let out = ops::relu(self.val(i));
        let rg = self.rg(i);
        self.push(out, Op::Relu(i), rg, "relu")
    }

    pub fn sigmoid(&mut self, input: NodeId) -> Result<NodeId> {
        let i = self.index(input)?;
        let out = ops::sigmoid(self.val(i));
        let rg = self.rg(i);
        self.push(out, Op::Sigmoid(i), rg, "sigmoid")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let out = ops::add(self.val(ia), self.val(ib))?;
        let rg = self.rg(ia) || self.rg(ib);
        self.push(out, Op::Add(ia, ib), rg, "add")
    }

    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let i = self.index(input)?;
        let out = ops::global_avg_pool(self.val(i))?;
        let rg = self.rg(i);
        self.push(out, Op::GlobalAvgPool(i), rg, "global_avg_pool")
    }

    pub fn global_max_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let i = self.index(input)?;
        let (out, argmax) = ops::global_max_pool(self.val(i))?;
        let rg = self.rg(i);
        self.push(out, Op::GlobalMaxPool { input: i, argmax }, rg, "global_max_pool")
    }

    pub fn max_pool(&mut self, input: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        let i = self.index(input)?;
        let (out, argmax) = ops::max_pool(self.val(i), window, stride)?;
        let rg = self.rg(i);
        self.push(out, Op::MaxPool { input: i, argmax, window, stride }, rg, "max_pool")
    }

    /// Batch normalization. In batch-statistics mode the per-channel batch
    /// mean and biased variance are returned so the caller can update its
    /// running statistics.
    pub fn batch_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: NormStats<'_>,
        eps: f64,
    ) -> Result<(NodeId, Option<(Vec<f64>, Vec<f64>)>)> {
        let (i, g, b) = (self.index(input)?, self.index(gamma)?, self.index(beta)?);
        let fwd = ops::batch_norm_forward(self.val(i), self.val(g), self.val(b), stats, eps)?;
        let rg = self.rg(i) || self.rg(g) || self.rg(b);
        let op = Op::BatchNorm {
            input: i,
            gamma: g,
            beta: b,
            xhat: fwd.xhat,
            inv_std: fwd.inv_std,
            batch_stats: fwd.batch_moments.is_some(),
        };
        let node = self.push(fwd.output, op, rg, "batch_norm")?;
        Ok((node, fwd.batch_moments))
    }

    /// Propagates `upstream` (the gradient of some scalar with respect to
    /// `output`) back through the recorded operations.
    pub fn backward(&self, output: NodeId, upstream: &Tensor) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward called before any forward pass was recorded".into()));
        }
        let out = self.index(output)?;
        if upstream.shape() != self.val(out).shape() {
            return Err(Error::invalid(format!(
                "upstream gradient shape {:?} does not match output shape {:?}",
                upstream.shape(),
                self.val(out).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=out).map(|_| None).collect();
        grads[out] = Some(upstream.clone());
        let mut result = Gradients::default();

        for idx in (0..=out).rev() {
            let Some(grad) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            grad.ensure_finite("backward")?;
            let mut contributions: Vec<(usize, Tensor)> = Vec::new();
            match &node.op {
                Op::Input => {
                    result.inputs.insert(NodeId { graph: self.id, index: idx }, grad);
                }
                Op::Param(path) => {
                    result.params.insert(path.clone(), grad);
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    padding,
                    cols,
                } => {
                    let g = ops::conv2d_backward(
                        self.val(*input),
                        self.val(*kernel),
                        cols,
                        &grad,
                        *stride,
                        *padding,
                        self.rg(*input),
                    )?;
                    if let Some(dx) = g.input {
                        contributions.push((*input, dx));
                    }
                    contributions.push((*kernel, g.kernel));
                    contributions.push((*bias, g.bias));
                }
                Op::Linear { input, weight, bias } => {
                    let g = ops::linear_backward(self.val(*input), self.val(*weight), &grad, self.rg(*input))?;
                    if let Some(dx) = g.input {
                        contributions.push((*input, dx));
                    }
                    contributions.push((*weight, g.weight));
                    contributions.push((*bias, g.bias));
                }
                Op::Relu(input) => {
                    contributions.push((*input, ops::relu_backward(self.val(*input), &grad)));
                }
                Op::Sigmoid(input) => {
                    contributions.push((*input, ops::sigmoid_backward(&node.value, &grad)));
                }
                Op::Add(a, b) => {
                    contributions.push((*a, grad.clone()));
                    contributions.push((*b, grad));
                }
                Op::GlobalAvgPool(input) => {
                    let dx = ops::global_avg_pool_backward(self.val(*input).shape(), &grad)?;
                    contributions.push((*input, dx));
                }
                Op::GlobalMaxPool { input, argmax } | Op::MaxPool { input, argmax, .. } => {
                    let dx = ops::scatter_to_argmax(self.val(*input).shape(), argmax, &grad)?;
                    contributions.push((*input, dx));
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let g = ops::batch_norm_backward(
                        self.val(*input).shape(),
                        self.val(*gamma),
                        xhat,
                        inv_std,
                        *batch_stats,
                        &grad,
                        self.rg(*input),
                    )?;
                    if let Some(dx) = g.input {
                        contributions.push((*input, dx));
                    }
                    contributions.push((*gamma, g.gamma));
                    contributions.push((*beta, g.beta));
                }
            }
            for (target, g) in contributions {
                if !self.rg(target) {
                    continue;
                }
                match &mut grads[target] {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += v;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kink_margin_sees_relu_and_pool_ties() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[1, 1, 2, 2], vec![0.5, -0.25, 0.75, 0.7]).unwrap(), true).unwrap();
        assert_eq!(g.kink_margin(), f64::INFINITY);
        let r = g.relu(x).unwrap();
        assert_eq!(g.kink_margin(), 0.25);
        g.global_max_pool(r).unwrap();
        assert!((g.kink_margin() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(0.0), true).unwrap();
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.value(y).unwrap().data(), &[0.5]);
        let grads = g.backward(y, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.input(x).unwrap().data(), &[0.25]);
    }

    #[test]
    fn backward_requires_a_recorded_forward() {
        let empty = Graph::new();
        let mut other = Graph::new();
        let foreign = other.input(Tensor::scalar(1.0), true).unwrap();
        assert!(matches!(empty.backward(foreign, &Tensor::scalar(1.0)), Err(Error::State(_))));
        let mut g = Graph::new();
        g.input(Tensor::scalar(2.0), true).unwrap();
        assert!(matches!(g.backward(foreign, &Tensor::scalar(1.0)), Err(Error::State(_))));
    }

    #[test]
    fn frozen_parameter_gets_no_entry() {
        let mut g = Graph::new();
        let x = g.input(Tensor::ones(&[1, 1, 3, 3]), false).unwrap();
        let k = g.param("frozen.weight", Tensor::ones(&[1, 1, 2, 2]), false).unwrap();
        let b = g.param("live.bias", Tensor::zeros(&[1]), true).unwrap();
        let y = g.conv2d(x, k, b, 1, 0).unwrap();
        let grads = g.backward(y, &Tensor::ones(&[1, 1, 2, 2])).unwrap();
        assert!(grads.param("frozen.weight").is_none());
        assert_eq!(grads.param("live.bias").unwrap().data(), &[4.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[2], vec![1.0, -2.0]).unwrap(), true).unwrap();
        let y = g.add(x, x).unwrap();
        let grads = g.backward(y, &Tensor::ones(&[2])).unwrap();
        assert_eq!(grads.input(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn nan_input_is_rejected() {
        let mut g = Graph::new();
        assert!(matches!(g.input(Tensor::scalar(f64::NAN), false), Err(Error::Numeric(_))));
    }
}
