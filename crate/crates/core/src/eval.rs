//! ROC curves and areas under them, per class and macro-averaged.

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::loss::LabelVector;
use crate::tensor::Tensor;

/// Why a class has no AUC.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    NoPositives,
    NoNegatives,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::NoPositives => f.write_str("no positives"),
            SkipReason::NoNegatives => f.write_str("no negatives"),
        }
    }
}

fn masked<'a>(scores: &'a [f64], labels: &'a [bool], mask: &'a [bool]) -> Result<Vec<(f64, bool)>> {
    if scores.len() != labels.len() || scores.len() != mask.len() {
        return Err(Error::invalid(format!(
            "auc input lengths differ: {} scores, {} labels, {} mask",
            scores.len(),
            labels.len(),
            mask.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score {s}")));
    }
    Ok(scores
        .iter()
        .zip(labels)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&s, &l), _)| (s, l))
        .collect())
}

fn check_classes(pos: usize, neg: usize) -> Result<(), SkipReason> {
    if pos == 0 {
        Err(SkipReason::NoPositives)
    } else if neg == 0 {
        Err(SkipReason::NoNegatives)
    } else {
        Ok(())
    }
}

/// Outcome of a single-class AUC computation.
pub type ClassAuc = std::result::Result<f64, SkipReason>;

/// Area under the ROC curve via the Mann-Whitney statistic with midranks:
/// `(#{pos > neg} + 0.5 #{pos == neg}) / (P N)`.
///
/// The outer `Result` reports malformed input; the inner one reports a
/// class that cannot be scored after masking.
pub fn auc(scores: &[f64], labels: &[bool], mask: &[bool]) -> Result<ClassAuc> {
    let mut items = masked(scores, labels, mask)?;
    let pos = items.iter().filter(|(_, l)| *l).count();
    let neg = items.len() - pos;
    if let Err(reason) = check_classes(pos, neg) {
        return Ok(Err(reason));
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the rank sum keeps every midrank an integer.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < items.len() {
        let mut j = i;
        while j + 1 < items.len() && items[j + 1].0 == items[i].0 {
            j += 1;
        }
        // ranks are 1-based: group spans i+1 ..= j+1
        let twice_midrank = (i + 1 + j + 1) as u128;
        let group_pos = items[i..=j].iter().filter(|(_, l)| *l).count() as u128;
        twice_rank_sum += twice_midrank * group_pos;
        i = j + 1;
    }
    let p = pos as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(Ok((twice_u as f64 / 2.0) / (pos as f64 * neg as f64)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)`, from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    /// Threshold of each point after the origin: a score counts as positive
    /// when `score >= threshold`.
    pub thresholds: Vec<f64>,
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }
}

/// ROC curve from a sweep over distinct scores in descending order.
pub fn roc_curve(scores: &[f64], labels: &[bool], mask: &[bool]) -> Result<std::result::Result<RocCurve, SkipReason>> {
    let mut items = masked(scores, labels, mask)?;
    let pos = items.iter().filter(|(_, l)| *l).count();
    let neg = items.len() - pos;
    if let Err(reason) = check_classes(pos, neg) {
        return Ok(Err(reason));
    }
    items.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < items.len() {
        let threshold = items[i].0;
        while i < items.len() && items[i].0 == threshold {
            if items[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        thresholds.push(threshold);
    }
    Ok(Ok(RocCurve { points, thresholds }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub name: String,
    pub auc: ClassAuc,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucReport {
    pub classes: Vec<ClassReport>,
    /// Mean AUC over the classes that were not skipped.
    pub macro_auc: f64,
}

impl AucReport {
    pub fn class_auc(&self, name: &str) -> Option<ClassAuc> {
        self.classes.iter().find(|c| c.name == name).map(|c| c.auc)
    }

    /// `tool,auc` rows; the first row is the macro average and skipped
    /// classes carry `SKIPPED`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tool,auc\n");
        let _ = writeln!(out, "Average,{}", self.macro_auc);
        for c in &self.classes {
            match c.auc {
                Ok(v) => {
                    let _ = writeln!(out, "{},{v}", c.name);
                }
                Err(_) => {
                    let _ = writeln!(out, "{},SKIPPED", c.name);
                }
            }
        }
        out
    }
}

impl fmt::Display for AucReport {
    /// Average row first, then scored tools by descending AUC, then skipped
    /// tools.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.classes.iter().map(|c| c.name.len()).max().unwrap_or(0).max(7);
        writeln!(f, "{:<width$}  AUC", "Tool")?;
        writeln!(f, "{}", "-".repeat(width + 10))?;
        writeln!(f, "{:<width$}  {:.4}", "Average", self.macro_auc)?;
        writeln!(f, "{}", "-".repeat(width + 10))?;
        let mut scored: Vec<_> = self.classes.iter().filter_map(|c| c.auc.ok().map(|a| (c, a))).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        for (c, a) in scored {
            writeln!(f, "{:<width$}  {a:.4}", c.name)?;
        }
        for c in &self.classes {
            if let Err(reason) = c.auc {
                writeln!(f, "{:<width$}  SKIPPED ({reason})", c.name)?;
            }
        }
        Ok(())
    }
}

/// Per-class AUC on `[N, c]` outputs with each frame's mask applied per class.
pub fn macro_auc(outputs: &Tensor, labels: &[LabelVector], names: &[String]) -> Result<AucReport> {
    let (n, c) = outputs.dims2()?;
    if labels.len() != n || names.len() != c {
        return Err(Error::invalid(format!(
            "macro_auc: outputs {:?}, {} label vectors, {} class names",
            outputs.shape(),
            labels.len(),
            names.len()
        )));
    }
    if let Some(l) = labels.iter().find(|l| l.len() != c) {
        return Err(Error::invalid(format!("label vector of length {} for {c} classes", l.len())));
    }
    let mut classes = Vec::with_capacity(c);
    for (i, name) in names.iter().enumerate() {
        let scores: Vec<f64> = (0..n).map(|r| outputs.data()[r * c + i]).collect();
        let present: Vec<bool> = labels.iter().map(|l| l.present[i]).collect();
        let mask: Vec<bool> = labels.iter().map(|l| l.evaluate[i]).collect();
        let positives = present.iter().zip(&mask).filter(|(p, m)| **p && **m).count();
        let negatives = mask.iter().filter(|m| **m).count() - positives;
        classes.push(ClassReport {
            name: name.clone(),
            auc: auc(&scores, &present, &mask)?,
            positives,
            negatives,
        });
    }
    let scored: Vec<f64> = classes.iter().filter_map(|c| c.auc.ok()).collect();
    if scored.is_empty() {
        return Err(Error::Evaluation("every class was skipped (no positives or no negatives)".into()));
    }
    let macro_auc = scored.iter().sum::<f64>() / scored.len() as f64;
    Ok(AucReport { classes, macro_auc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all(n: usize) -> Vec<bool> {
        vec![true; n]
    }

    /// Quadratic pair counting.
    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut credit = 0.0;
        let (mut p, mut n) = (0usize, 0usize);
        for (i, &si) in scores.iter().enumerate() {
            if !labels[i] {
                n += 1;
                continue;
            }
            p += 1;
            for (j, &sj) in scores.iter().enumerate() {
                if !labels[j] {
                    if si > sj {
                        credit += 1.0;
                    } else if si == sj {
                        credit += 0.5;
                    }
                }
            }
        }
        credit / (p as f64 * n as f64)
    }

    #[test]
    fn perfect_and_tied() {
        assert_eq!(auc(&[0.9, 0.1], &[true, false], &all(2)).unwrap(), Ok(1.0));
        assert_eq!(auc(&[0.3; 5], &[true, false, true, false, false], &all(5)).unwrap(), Ok(0.5));
    }

    #[test]
    fn degenerate_class_is_skipped() {
        assert_eq!(auc(&[0.1, 0.2], &[false, false], &all(2)).unwrap(), Err(SkipReason::NoPositives));
        assert_eq!(auc(&[0.1, 0.2], &[true, true], &all(2)).unwrap(), Err(SkipReason::NoNegatives));
        assert_eq!(auc(&[0.1, 0.2], &[true, false], &[true, false]).unwrap(), Err(SkipReason::NoNegatives));
    }

    #[test]
    fn matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.random_range(2..=200);
            let levels = rng.random_range(1..=20);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            match auc(&scores, &labels, &all(n)).unwrap() {
                Ok(a) => assert_eq!(a, brute_auc(&scores, &labels)),
                Err(_) => assert!(labels.iter().all(|&l| l) || labels.iter().all(|&l| !l)),
            }
        }
    }

    #[test]
    fn roc_shapes() {
        let perfect = roc_curve(&[0.9, 0.1], &[true, false], &all(2)).unwrap().unwrap();
        assert_eq!(perfect.points, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        let flat = roc_curve(&[0.5; 4], &[true, false, false, true], &all(4)).unwrap().unwrap();
        assert_eq!(flat.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(flat.thresholds, vec![0.5]);
    }

    #[test]
    fn trapezoid_equals_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let n = rng.random_range(2..=150);
            let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0.0..1.0f64) * 10.0).round() / 10.0).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            if let (Ok(a), Ok(curve)) = (auc(&scores, &labels, &all(n)).unwrap(), roc_curve(&scores, &labels, &all(n)).unwrap()) {
                assert!((curve.area() - a).abs() <= 1e-12);
                assert_eq!(curve.points.first(), Some(&(0.0, 0.0)));
                assert_eq!(curve.points.last(), Some(&(1.0, 1.0)));
                assert!(curve.points.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
            }
        }
    }

    #[test]
    fn macro_average_and_skips() {
        let outputs = Tensor::new(&[4, 3], vec![
            0.9, 0.5, 0.1, //
            0.8, 0.5, 0.2, //
            0.2, 0.5, 0.3, //
            0.1, 0.5, 0.4,
        ])
        .unwrap();
        let labels: Vec<LabelVector> = [[true, true, false], [true, false, false], [false, true, false], [false, false, false]]
            .iter()
            .map(|r| LabelVector::new(r.to_vec()))
            .collect();
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let report = macro_auc(&outputs, &labels, &names).unwrap();
        assert_eq!(report.macro_auc, 0.75);
        assert_eq!(report.class_auc("c"), Some(Err(SkipReason::NoPositives)));
        let text = report.to_string();
        assert!(text.contains("Average") && text.contains("SKIPPED"));
        assert!(report.to_csv().starts_with("tool,auc\nAverage,0.75\n"));

        let none: Vec<LabelVector> = (0..4).map(|_| LabelVector::new(vec![false; 3])).collect();
        assert!(matches!(macro_auc(&outputs, &none, &names), Err(Error::Evaluation(_))));
    }

    proptest! {
        #[test]
        fn invariant_under_monotone_maps(raw in proptest::collection::vec((0u8..30, any::<bool>()), 2..120)) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 30.0).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            let mask = all(scores.len());
            let base = auc(&scores, &labels, &mask).unwrap();
            let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            let aff: Vec<f64> = scores.iter().map(|s| 3.0 * s - 7.0).collect();
            prop_assert_eq!(auc(&exp, &labels, &mask).unwrap(), base);
            prop_assert_eq!(auc(&aff, &labels, &mask).unwrap(), base);
            if let Ok(a) = base {
                let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
                let b = auc(&scores, &flipped, &mask).unwrap().unwrap();
                prop_assert!((a + b - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn masked_frames_have_no_influence(raw in proptest::collection::vec((0u8..10, any::<bool>(), any::<bool>()), 2..80)) {
            let scores: Vec<f64> = raw.iter().map(|r| r.0 as f64).collect();
            let labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
            let mask: Vec<bool> = raw.iter().map(|r| r.2).collect();
            let kept: Vec<(f64, bool)> = raw.iter().filter(|r| r.2).map(|r| (r.0 as f64, r.1)).collect();
            let ks: Vec<f64> = kept.iter().map(|k| k.0).collect();
            let kl: Vec<bool> = kept.iter().map(|k| k.1).collect();
            prop_assert_eq!(auc(&scores, &labels, &mask).unwrap(), auc(&ks, &kl, &all(ks.len())).unwrap());
        }

        #[test]
        fn macro_invariant_to_class_order(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, c) = (30, 4);
            let out = Tensor::from_fn(&[n, c], |_| rng.random_range(0.0..1.0));
            let labels: Vec<LabelVector> = (0..n).map(|_| LabelVector::new((0..c).map(|_| rng.random_bool(0.3)).collect())).collect();
            let names: Vec<String> = (0..c).map(|i| format!("t{i}")).collect();
            let perm = [2usize, 0, 3, 1];
            let pout = Tensor::from_fn(&[n, c], |i| out.data()[(i / c) * c + perm[i % c]]);
            let plabels: Vec<LabelVector> = labels.iter().map(|l| l.select(&perm)).collect();
            let pnames: Vec<String> = perm.iter().map(|&i| names[i].clone()).collect();
            match (macro_auc(&out, &labels, &names), macro_auc(&pout, &plabels, &pnames)) {
                (Ok(a), Ok(b)) => prop_assert!((a.macro_auc - b.macro_auc).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false),
            }
        }
    }
}
