//! Video-level train/validation split under tool-coverage constraints.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::manifest::DatasetManifest;
use crate::error::{Error, Result};
use crate::rng;

const RESTARTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_video_ids: Vec<String>,
    pub val_video_ids: Vec<String>,
    /// Names of tools not present on both sides of the split.
    pub excluded_tools: Vec<String>,
}

impl SplitPlan {
    pub fn kept_tool_indices(&self, tool_names: &[String]) -> Vec<usize> {
        let excluded: BTreeSet<&String> = self.excluded_tools.iter().collect();
        (0..tool_names.len()).filter(|&i| !excluded.contains(&tool_names[i])).collect()
    }
}

/// `incidence[v][t]`: tool `t` is visible in at least one frame of video `v`.
pub fn video_incidence(manifest: &DatasetManifest) -> Vec<Vec<bool>> {
    manifest
        .videos
        .iter()
        .map(|v| {
            let mut row = vec![false; manifest.num_classes()];
            for f in &v.frames {
                for (t, &p) in f.labels.present.iter().enumerate() {
                    row[t] |= p;
                }
            }
            row
        })
        .collect()
}

/// Number of tools present in at least one video on each side.
pub fn coverage_count(incidence: &[Vec<bool>], is_val: &[bool]) -> usize {
    score(incidence, is_val).0
}

/// (tools covered on both sides, sum over covered tools of the smaller side's video count)
fn score(incidence: &[Vec<bool>], is_val: &[bool]) -> (usize, usize) {
    let tools = incidence.first().map_or(0, |r| r.len());
    let mut covered = 0;
    let mut balance = 0;
    for t in 0..tools {
        let (mut tr, mut va) = (0, 0);
        for (row, &v) in incidence.iter().zip(is_val) {
            if row[t] {
                if v {
                    va += 1;
                } else {
                    tr += 1;
                }
            }
        }
        if tr > 0 && va > 0 {
            covered += 1;
            balance += tr.min(va);
        }
    }
    (covered, balance)
}

/// Chooses `n_val` validation videos maximizing the number of tools seen on
/// both sides, by seeded random restarts followed by swap hill-climbing.
pub fn plan_split(manifest: &DatasetManifest, n_val: usize, seed: u64) -> Result<SplitPlan> {
    let n = manifest.videos.len();
    if n_val == 0 || n_val >= n {
        return Err(Error::invalid(format!(
            "validation video count must be in 1..{n} for {n} videos, got {n_val}"
        )));
    }
    let incidence = video_incidence(manifest);
    let mut rng = rng::stream(seed, &[rng::hash_str("split")]);
    let mut best: Option<((usize, usize), Vec<bool>)> = None;
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..RESTARTS {
        order.shuffle(&mut rng);
        let mut is_val = vec![false; n];
        for &v in &order[..n_val] {
            is_val[v] = true;
        }
        let mut current = score(&incidence, &is_val);
        loop {
            let mut improved = None;
            let vals: Vec<usize> = (0..n).filter(|&a| is_val[a]).collect();
            let trains: Vec<usize> = (0..n).filter(|&b| !is_val[b]).collect();
            for &a in &vals {
                for &b in &trains {
                    is_val[a] = false;
                    is_val[b] = true;
                    let s = score(&incidence, &is_val);
                    is_val[a] = true;
                    is_val[b] = false;
                    if s > improved.map_or(current, |(s, _, _)| s) {
                        improved = Some((s, a, b));
                    }
                }
            }
            match improved {
                Some((s, a, b)) => {
                    is_val[a] = false;
                    is_val[b] = true;
                    current = s;
                }
                None => break,
            }
        }
        if best.as_ref().is_none_or(|(s, _)| current > *s) {
            best = Some((current, is_val));
        }
    }
    let (_, is_val) = best.expect("at least one restart");
    let mut train_video_ids = Vec::new();
    let mut val_video_ids = Vec::new();
    for (v, &val) in manifest.videos.iter().zip(&is_val) {
        if val {
            val_video_ids.push(v.video_id.clone());
        } else {
            train_video_ids.push(v.video_id.clone());
        }
    }
    let excluded_tools = (0..manifest.num_classes())
        .filter(|&t| {
            let tr = incidence.iter().zip(&is_val).any(|(r, &v)| !v && r[t]);
            let va = incidence.iter().zip(&is_val).any(|(r, &v)| v && r[t]);
            !(tr && va)
        })
        .map(|t| manifest.tool_names[t].clone())
        .collect();
    Ok(SplitPlan {
        train_video_ids,
        val_video_ids,
        excluded_tools,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::{FrameEntry, FrameImage, FrameKey, VideoRecord};
    use crate::loss::LabelVector;
    use std::path::PathBuf;

    pub(crate) fn manifest_from_incidence(inc: &[Vec<bool>]) -> DatasetManifest {
        let c = inc[0].len();
        DatasetManifest {
            tool_names: (0..c).map(|t| format!("tool{t}")).collect(),
            videos: inc
                .iter()
                .enumerate()
                .map(|(v, row)| VideoRecord {
                    video_id: format!("v{v}"),
                    frames: vec![FrameEntry {
                        key: FrameKey {
                            video_id: format!("v{v}"),
                            frame_index: 0,
                        },
                        image: FrameImage::File(PathBuf::new()),
                        labels: LabelVector::new(row.clone()),
                    }],
                })
                .collect(),
        }
    }

    #[test]
    fn forced_two_video_split() {
        let m = manifest_from_incidence(&[vec![true, true], vec![true, false]]);
        let plan = plan_split(&m, 1, 0).unwrap();
        assert_eq!(plan.train_video_ids.len(), 1);
        assert_eq!(plan.excluded_tools, vec!["tool1".to_string()]);
        assert_eq!(plan.kept_tool_indices(&m.tool_names), vec![0]);
    }

    #[test]
    fn rejects_bad_counts() {
        let m = manifest_from_incidence(&[vec![true], vec![true]]);
        assert!(plan_split(&m, 2, 0).is_err());
        assert!(plan_split(&m, 0, 0).is_err());
    }

    #[test]
    fn sides_are_disjoint_and_complete() {
        let inc: Vec<Vec<bool>> = (0..7).map(|v| (0..5).map(|t| (v * 3 + t) % 4 == 0).collect()).collect();
        let m = manifest_from_incidence(&inc);
        let plan = plan_split(&m, 3, 5).unwrap();
        let mut all: Vec<_> = plan.train_video_ids.iter().chain(&plan.val_video_ids).cloned().collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 7);
        assert_eq!(plan.val_video_ids.len(), 3);
        assert_eq!(plan, plan_split(&m, 3, 5).unwrap());
    }
}
