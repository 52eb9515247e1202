//! Temporal subsampling and undersampling of tool-free frames.

use rand::seq::index;

use crate::data::manifest::FrameEntry;
use crate::error::{Error, Result};
use crate::rng;

/// Keeps positions `0, stride, 2*stride, ...` of one video's frame list.
pub fn subsample_frames<T: Clone>(frames: &[T], stride: usize) -> Result<Vec<T>> {
    if stride == 0 {
        return Err(Error::invalid("subsampling stride must be at least 1"));
    }
    Ok(frames.iter().step_by(stride).cloned().collect())
}

/// Randomly keeps `round(ratio * n_empty)` of the frames without any tool.
///
/// Frames showing at least one tool are always kept, and the relative order
/// of the survivors is preserved.
pub fn undersample_empty(frames: &[FrameEntry], ratio: f64, seed: u64) -> Result<Vec<FrameEntry>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid(format!("undersampling ratio must be in (0, 1], got {ratio}")));
    }
    let empty: Vec<usize> = frames
        .iter()
        .enumerate()
        .filter(|(_, f)| f.labels.is_empty_frame())
        .map(|(i, _)| i)
        .collect();
    let target = (ratio * empty.len() as f64).round() as usize;
    let mut drop = vec![false; frames.len()];
    if target < empty.len() {
        let mut rng = rng::stream(seed, &[rng::hash_str("undersample")]);
        let mut keep = vec![false; empty.len()];
        for i in index::sample(&mut rng, empty.len(), target) {
            keep[i] = true;
        }
        for (slot, &i) in empty.iter().enumerate() {
            drop[i] = !keep[slot];
        }
    }
    Ok(frames
        .iter()
        .zip(&drop)
        .filter(|(_, &d)| !d)
        .map(|(f, _)| f.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::{FrameImage, FrameKey};
    use crate::loss::LabelVector;
    use std::path::PathBuf;

    fn frames(pattern: &[bool]) -> Vec<FrameEntry> {
        pattern
            .iter()
            .enumerate()
            .map(|(i, &tool)| FrameEntry {
                key: FrameKey {
                    video_id: "v".into(),
                    frame_index: i,
                },
                image: FrameImage::File(PathBuf::new()),
                labels: LabelVector::new(vec![tool, false]),
            })
            .collect()
    }

    #[test]
    fn stride_positions() {
        let v: Vec<usize> = (0..18).collect();
        assert_eq!(subsample_frames(&v, 6).unwrap(), vec![0, 6, 12]);
        assert_eq!(subsample_frames(&v, 1).unwrap(), v);
        assert!(subsample_frames(&v, 0).is_err());
    }

    #[test]
    fn undersample_counts_and_keeps_positives() {
        let pattern: Vec<bool> = (0..1300).map(|i| i % 13 == 0).collect();
        let f = frames(&pattern);
        let n_empty = pattern.iter().filter(|&&p| !p).count();
        let out = undersample_empty(&f, 0.4, 9).unwrap();
        let kept_empty = out.iter().filter(|f| f.labels.is_empty_frame()).count();
        assert_eq!(kept_empty, (0.4 * n_empty as f64).round() as usize);
        assert_eq!(out.len() - kept_empty, 100);
        assert!(out.windows(2).all(|w| w[0].key.frame_index < w[1].key.frame_index));
        assert_eq!(out, undersample_empty(&f, 0.4, 9).unwrap());
        assert_ne!(out, undersample_empty(&f, 0.4, 10).unwrap());
        assert_eq!(undersample_empty(&f, 1.0, 9).unwrap(), f);
        assert!(undersample_empty(&f, 0.0, 9).is_err());
    }
}
