//! Central finite-difference checks of recorded gradients.
//!
//! Every case draws random shapes and values from a seed, records a forward
//! pass, and compares the backward pass for `sum(r * y)` (with a random
//! `r`) against `(f(x + eps) - f(x - eps)) / (2 eps)` for every element of
//! every input and parameter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::{CustomPart, ForwardCtx, Mode, ResidualBlock, Visit};
use crate::loss::{self, ClassWeights, LabelVector};
use crate::model::{apply_head, HeadKind};
use crate::ops::NormStats;
use crate::rng;
use crate::tensor::Tensor;

pub const FD_EPSILON: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-8;

/// `|a - n| <= REL_TOL * max(|a|, |n|) + ABS_TOL`
pub fn within_tolerance(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= REL_TOL * analytic.abs().max(numeric.abs()) + ABS_TOL
}

/// Outcome of one case at one seed.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub case: String,
    pub seed: u64,
    pub elements: usize,
    /// Largest `|a - n| / (REL_TOL * max(|a|, |n|) + ABS_TOL)`; at most 1 passes.
    pub worst_ratio: f64,
    pub failures: Vec<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// A scalar-valued function of named tensors that can be recorded on a graph.
trait Subject {
    fn for_each(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));
    /// Records the computation; returns the output node and the graph
    /// inputs by name. Tensors not listed are looked up as parameters.
    fn record(&self, g: &mut Graph) -> Result<(NodeId, Vec<(String, NodeId)>)>;
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn objective(s: &dyn Subject, r: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let (out, _) = s.record(&mut g)?;
    Ok(g.value(out)?.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
}

fn check_subject(case: &str, seed: u64, s: &mut dyn Subject, rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let mut g = Graph::new();
    let (out, inputs) = s.record(&mut g)?;
    let r = rand_tensor(g.value(out)?.shape(), rng);
    let grads = g.backward(out, &r)?;
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    s.for_each(&mut |name, t| {
        let grad = match inputs.iter().find(|(n, _)| n == name) {
            Some((_, node)) => grads.input(*node),
            None => grads.param(name),
        };
        let values = grad.map_or_else(|| vec![0.0; t.len()], |g| g.data().to_vec());
        analytic.push((name.to_string(), values));
    });
    let mut report = CheckReport {
        case: case.to_string(),
        seed,
        elements: 0,
        worst_ratio: 0.0,
        failures: Vec::new(),
    };
    for (ti, (name, grad)) in analytic.iter().enumerate() {
        for (ei, &a) in grad.iter().enumerate() {
            let shift = |s: &mut dyn Subject, delta: f64| {
                let mut idx = 0;
                s.for_each(&mut |_, t| {
                    if idx == ti {
                        t.data_mut()[ei] += delta;
                    }
                    idx += 1;
                });
            };
            shift(s, FD_EPSILON);
            let plus = objective(s, &r)?;
            shift(s, -2.0 * FD_EPSILON);
            let minus = objective(s, &r)?;
            shift(s, FD_EPSILON);
            let n = (plus - minus) / (2.0 * FD_EPSILON);
            let ratio = (a - n).abs() / (REL_TOL * a.abs().max(n.abs()) + ABS_TOL);
            report.worst_ratio = report.worst_ratio.max(ratio);
            report.elements += 1;
            if !within_tolerance(a, n) {
                report.failures.push(format!("{name}[{ei}]: analytic {a:e}, numeric {n:e}"));
            }
        }
    }
    Ok(report)
}

/// Plain graph operations on named input tensors.
struct OpCase {
    tensors: Vec<(String, Tensor)>,
    build: Box<dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>>,
}

impl Subject for OpCase {
    fn for_each(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (n, t) in &mut self.tensors {
            f(n, t);
        }
    }

    fn record(&self, g: &mut Graph) -> Result<(NodeId, Vec<(String, NodeId)>)> {
        let mut nodes = Vec::new();
        let mut named = Vec::new();
        for (n, t) in &self.tensors {
            let id = g.input(t.clone(), true)?;
            nodes.push(id);
            named.push((n.clone(), id));
        }
        Ok(((self.build)(g, &nodes)?, named))
    }
}

/// A layer's input plus all of its trainable tensors.
struct LayerCase<L: Visit> {
    x: Tensor,
    layer: L,
    forward: fn(&L, &mut Graph, NodeId, &mut ForwardCtx) -> Result<NodeId>,
}

impl<L: Visit> Subject for LayerCase<L> {
    fn for_each(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("x", &mut self.x);
        self.layer.visit_mut(&mut |path, t, kind, _| {
            if kind.is_parameter() {
                f(path, t)
            }
        });
    }

    fn record(&self, g: &mut Graph) -> Result<(NodeId, Vec<(String, NodeId)>)> {
        let x = g.input(self.x.clone(), true)?;
        let mut ctx = ForwardCtx::new(Mode::Train);
        Ok(((self.forward)(&self.layer, g, x, &mut ctx)?, vec![("x".into(), x)]))
    }
}

fn randomize_layer<L: Visit>(layer: &mut L, rng: &mut ChaCha8Rng) {
    layer.visit_mut(&mut |_, t, kind, _| {
        if kind.is_parameter() {
            let base = if matches!(kind, crate::layers::TensorKind::Scale) { 1.0 } else { 0.0 };
            for v in t.data_mut() {
                *v = base + 0.5 * rng.random_range(-1.0..1.0);
            }
        }
    });
}

fn op_case(tensors: Vec<(&str, Tensor)>, build: impl Fn(&mut Graph, &[NodeId]) -> Result<NodeId> + 'static) -> OpCase {
    OpCase {
        tensors: tensors.into_iter().map(|(n, t)| (n.to_string(), t)).collect(),
        build: Box::new(build),
    }
}

/// Names of all checked cases.
pub const CASES: &[&str] = &[
    "conv2d",
    "linear",
    "relu",
    "sigmoid",
    "add",
    "global_avg_pool",
    "global_max_pool",
    "max_pool",
    "batch_norm_train",
    "batch_norm_inference",
    "residual_block",
    "custom_part",
    "head_avg_fc",
    "head_conv_max",
    "multilabel_loss",
];

/// Relu inputs and max-pool runner-ups must stay this far from switching,
/// a hundred finite-difference steps.
pub const KINK_MARGIN: f64 = 100.0 * FD_EPSILON;
const MAX_REDRAWS: u64 = 100;

enum Built {
    Subject(Box<dyn Subject>, ChaCha8Rng),
    Done(CheckReport),
}

/// Runs one named case at one seed. Shapes are fixed by the seed; values
/// are redrawn (deterministically) until no piecewise-linear op sits within
/// [`KINK_MARGIN`] of a non-differentiable point.
pub fn run_case(case: &str, seed: u64) -> Result<CheckReport> {
    for attempt in 0..MAX_REDRAWS {
        let draw_seed = if attempt == 0 { seed ^ 0x5eed } else { rng::derive_seed(seed, &[attempt]) };
        let (mut subject, mut rng) = match build_case(case, seed, draw_seed)? {
            Built::Done(report) => return Ok(report),
            Built::Subject(s, rng) => (s, rng),
        };
        let mut g = Graph::new();
        subject.record(&mut g)?;
        if g.kink_margin() >= KINK_MARGIN {
            return check_subject(case, seed, subject.as_mut(), &mut rng);
        }
    }
    Err(Error::Numeric(format!(
        "{case} seed {seed}: no draw clear of non-differentiable points"
    )))
}

fn build_case(case: &str, seed: u64, draw_seed: u64) -> Result<Built> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut size = |lo: usize, hi: usize| rng.random_range(lo..=hi);
    let (n, c, h, w) = (size(1, 2), size(1, 3), size(3, 6), size(3, 6));
    let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
    let x4 = rand_tensor(&[n, c, h, w], &mut rng);
    let subject: Box<dyn Subject> = match case {
        "conv2d" => {
            let k = rng.random_range(1..=3usize.min(h).min(w));
            let stride = rng.random_range(1..=2);
            let padding = rng.random_range(0..=1);
            let co = rng.random_range(1..=3);
            let kernel = rand_tensor(&[co, c, k, k], &mut rng);
            let bias = rand_tensor(&[co], &mut rng);
            Box::new(op_case(vec![("x", x4), ("kernel", kernel), ("bias", bias)], move |g, v| {
                g.conv2d(v[0], v[1], v[2], stride, padding)
            }))
        }
        "linear" => {
            let (i, o) = (rng.random_range(1..=6), rng.random_range(1..=4));
            let x = rand_tensor(&[n, i], &mut rng);
            let wt = rand_tensor(&[o, i], &mut rng);
            let b = rand_tensor(&[o], &mut rng);
            Box::new(op_case(vec![("x", x), ("weight", wt), ("bias", b)], |g, v| g.linear(v[0], v[1], v[2])))
        }
        "relu" => Box::new(op_case(vec![("x", x4)], |g, v| g.relu(v[0]))),
        "sigmoid" => {
            let x = x4.map(|v| 3.0 * v);
            Box::new(op_case(vec![("x", x)], |g, v| g.sigmoid(v[0])))
        }
        "add" => {
            let y = rand_tensor(x4.shape(), &mut rng);
            Box::new(op_case(vec![("a", x4), ("b", y)], |g, v| g.add(v[0], v[1])))
        }
        "global_avg_pool" => Box::new(op_case(vec![("x", x4)], |g, v| g.global_avg_pool(v[0]))),
        "global_max_pool" => Box::new(op_case(vec![("x", x4)], |g, v| g.global_max_pool(v[0]))),
        "max_pool" => {
            let window = rng.random_range(2..=3usize.min(h).min(w));
            let stride = rng.random_range(1..=2);
            Box::new(op_case(vec![("x", x4)], move |g, v| g.max_pool(v[0], window, stride)))
        }
        "batch_norm_train" | "batch_norm_inference" => {
            let x = rand_tensor(&[2, c, h, w], &mut rng);
            let gamma = rand_tensor(&[c], &mut rng).map(|v| 1.0 + 0.5 * v);
            let beta = rand_tensor(&[c], &mut rng);
            let mean: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
            let train = case == "batch_norm_train";
            Box::new(op_case(vec![("x", x), ("gamma", gamma), ("beta", beta)], move |g, v| {
                let stats = if train {
                    NormStats::Batch
                } else {
                    NormStats::Running { mean: &mean, var: &var }
                };
                Ok(g.batch_norm(v[0], v[1], v[2], stats, 1e-5)?.0)
            }))
        }
        "residual_block" => {
            let cout = if rng.random_bool(0.5) { c } else { c + 1 };
            let stride = if cout == c { 1 } else { rng.random_range(1..=2) };
            let x = rand_tensor(&[2, c, h, w], &mut rng);
            let mut layer = ResidualBlock::new("block", c, cout, stride, &mut rng);
            randomize_layer(&mut layer, &mut rng);
            Box::new(LayerCase {
                x,
                layer,
                forward: ResidualBlock::forward,
            })
        }
        "custom_part" => {
            let x = rand_tensor(&[2, c, 4, 4], &mut rng);
            let feats = rng.random_range(1..=3);
            let mut layer = CustomPart::new("custom", c, feats, 1, &mut rng)?;
            randomize_layer(&mut layer, &mut rng);
            Box::new(LayerCase {
                x,
                layer,
                forward: CustomPart::forward,
            })
        }
        "head_avg_fc" | "head_conv_max" => {
            let classes = rng.random_range(1..=4);
            let conv = case == "head_conv_max";
            let k = if conv && rng.random_bool(0.5) { 3 } else { 1 };
            let weight = if conv {
                rand_tensor(&[classes, c, k, k], &mut rng)
            } else {
                rand_tensor(&[classes, c], &mut rng)
            };
            let bias = rand_tensor(&[classes], &mut rng);
            let kind = if conv { HeadKind::ConvMax } else { HeadKind::AvgFc };
            Box::new(HeadCase { x: x4, weight, bias, kind })
        }
        "multilabel_loss" => return check_loss(seed, &mut rng).map(Built::Done),
        other => return Err(Error::invalid(format!("unknown gradient-check case {other}"))),
    };
    Ok(Built::Subject(subject, rng))
}

struct HeadCase {
    x: Tensor,
    weight: Tensor,
    bias: Tensor,
    kind: HeadKind,
}

impl Subject for HeadCase {
    fn for_each(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("x", &mut self.x);
        let (w, b) = match self.kind {
            HeadKind::AvgFc => ("head.fc.weight", "head.fc.bias"),
            HeadKind::ConvMax => ("head.conv.weight", "head.conv.bias"),
        };
        f(w, &mut self.weight);
        f(b, &mut self.bias);
    }

    fn record(&self, g: &mut Graph) -> Result<(NodeId, Vec<(String, NodeId)>)> {
        let x = g.input(self.x.clone(), true)?;
        Ok((apply_head(g, x, self.kind, &self.weight, &self.bias)?, vec![("x".into(), x)]))
    }
}

/// The weighted multi-label loss against its own finite differences.
fn check_loss(seed: u64, rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let c = rng.random_range(1..=6);
    let present: Vec<bool> = (0..c).map(|_| rng.random_bool(0.5)).collect();
    let evaluate: Vec<bool> = (0..c).map(|_| rng.random_bool(0.8)).collect();
    let labels = LabelVector::with_mask(present, evaluate)?;
    let q: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..0.95)).collect();
    let weights = ClassWeights((0..c).map(|_| rng.random_range(1.0..4.0)).collect());
    let (_, grad) = loss::multilabel_loss(&labels, &q, Some(&weights))?;
    let mut report = CheckReport {
        case: "multilabel_loss".into(),
        seed,
        elements: 0,
        worst_ratio: 0.0,
        failures: Vec::new(),
    };
    for i in 0..c {
        let mut qp = q.clone();
        qp[i] += FD_EPSILON;
        let mut qm = q.clone();
        qm[i] -= FD_EPSILON;
        let n = (loss::multilabel_loss(&labels, &qp, Some(&weights))?.0 - loss::multilabel_loss(&labels, &qm, Some(&weights))?.0)
            / (2.0 * FD_EPSILON);
        let a = grad[i];
        report.worst_ratio = report.worst_ratio.max((a - n).abs() / (REL_TOL * a.abs().max(n.abs()) + ABS_TOL));
        report.elements += 1;
        if !within_tolerance(a, n) {
            report.failures.push(format!("q[{i}]: analytic {a:e}, numeric {n:e}"));
        }
    }
    Ok(report)
}

/// Every case over `seeds`.
pub fn run_suite(seeds: std::ops::Range<u64>) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for case in CASES {
        for seed in seeds.clone() {
            out.push(run_case(case, seed)?);
        }
    }
    Ok(out)
}
