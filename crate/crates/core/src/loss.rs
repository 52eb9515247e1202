//! Binary-relevance cross-entropy and class weights.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Clamp applied to predicted probabilities before taking logs.
pub const PROB_EPSILON: f64 = 1e-12;

/// Per-frame binary labels plus an evaluation mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    pub present: Vec<bool>,
    /// `true` = use this class, `false` = ignore it (annotators disagree).
    pub evaluate: Vec<bool>,
}

impl LabelVector {
    pub fn new(present: Vec<bool>) -> Self {
        let evaluate = vec![true; present.len()];
        LabelVector { present, evaluate }
    }

    pub fn with_mask(present: Vec<bool>, evaluate: Vec<bool>) -> Result<Self> {
        if present.len() != evaluate.len() {
            return Err(Error::invalid(format!(
                "label length {} does not match mask length {}",
                present.len(),
                evaluate.len()
            )));
        }
        Ok(LabelVector { present, evaluate })
    }

    pub fn len(&self) -> usize {
        self.present.len()
    }

    pub fn is_empty(&self) -> bool {
        self.present.is_empty()
    }

    /// No tool present among the evaluated classes.
    pub fn is_empty_frame(&self) -> bool {
        !self.present.iter().any(|&p| p)
    }

    pub fn count_present(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    /// Keeps only the classes at `keep` (in that order).
    pub fn select(&self, keep: &[usize]) -> LabelVector {
        LabelVector {
            present: keep.iter().map(|&i| self.present[i]).collect(),
            evaluate: keep.iter().map(|&i| self.evaluate[i]).collect(),
        }
    }
}

/// Cross-entropy `H(p, q) = -(1-p) ln(1-q) - p ln q` for a binary label.
pub fn bce(p: bool, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("probability {q} outside [0, 1]")));
    }
    let q = q.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
    Ok(if p { -q.ln() } else { -(1.0 - q).ln() })
}

/// `dH/dq`, evaluated at the clamped probability.
fn bce_grad(p: bool, q: f64) -> f64 {
    let q = q.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
    if p {
        -1.0 / q
    } else {
        1.0 / (1.0 - q)
    }
}

/// Per-class weights `w_i = sqrt(max_j f_j / f_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn uniform(c: usize) -> Self {
        ClassWeights(vec![1.0; c])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn class_weights(frequencies: &[f64]) -> Result<ClassWeights> {
    if frequencies.is_empty() {
        return Err(Error::invalid("class_weights needs at least one frequency"));
    }
    if let Some(i) = frequencies.iter().position(|&f| !(f > 0.0) || !f.is_finite()) {
        return Err(Error::invalid(format!(
            "class {i} has frequency {}; weights need positive frequencies (exclude the class instead)",
            frequencies[i]
        )));
    }
    let max = frequencies.iter().cloned().fold(f64::MIN, f64::max);
    Ok(ClassWeights(frequencies.iter().map(|&f| (max / f).sqrt()).collect()))
}

/// Loss value and its gradient with respect to the network outputs.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Tensor,
}

/// Multi-label loss for one example: `sum_i m_i * w_i * H(p_i, q_i)`.
pub fn multilabel_loss(labels: &LabelVector, outputs: &[f64], weights: Option<&ClassWeights>) -> Result<(f64, Vec<f64>)> {
    let c = labels.len();
    if outputs.len() != c || weights.is_some_and(|w| w.0.len() != c) {
        return Err(Error::invalid(format!(
            "loss dimension mismatch: {c} labels, {} outputs, {} weights",
            outputs.len(),
            weights.map_or(c, |w| w.0.len())
        )));
    }
    let mut total = 0.0;
    let mut grad = vec![0.0; c];
    for i in 0..c {
        if !labels.evaluate[i] {
            continue;
        }
        let w = weights.map_or(1.0, |w| w.0[i]);
        total += w * bce(labels.present[i], outputs[i])?;
        grad[i] = w * bce_grad(labels.present[i], outputs[i]);
    }
    Ok((total, grad))
}

/// Batch loss over `[N, c]` outputs: per-example sums averaged over `N`.
pub fn batch_loss(labels: &[LabelVector], outputs: &Tensor, weights: Option<&ClassWeights>) -> Result<LossOutput> {
    let (n, c) = outputs.dims2()?;
    if labels.len() != n {
        return Err(Error::invalid(format!("{} label vectors for a batch of {n}", labels.len())));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * c);
    for (row, lab) in outputs.data().chunks_exact(c).zip(labels) {
        let (l, g) = multilabel_loss(lab, row, weights)?;
        loss += l;
        grad.extend(g.into_iter().map(|v| v / n as f64));
    }
    Ok(LossOutput {
        loss: loss / n as f64,
        grad: Tensor::new(&[n, c], grad)?,
    })
}
