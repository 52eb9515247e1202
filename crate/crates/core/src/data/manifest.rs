//! Dataset manifests and annotation CSVs.
//!
//! A manifest file is JSON:
//!
//! ```json
//! {
//!   "tool_names": ["tool_a", "tool_b"],
//!   "videos": [
//!     {
//!       "video_id": "v000",
//!       "frame_dir": "frames/v000",
//!       "annotations": "annotations/v000.csv",
//!       "second_annotations": "annotations/v000_b.csv"
//!     }
//!   ]
//! }
//! ```
//!
//! Paths are relative to the manifest file. Frame `i` of a video is the
//! image `<frame_dir>/<i as 6 digits>.png`. Annotation CSVs have the header
//! `frame,<tool_1>,...,<tool_c>` and one `0`/`1` row per frame. Where a
//! second annotator file is given, cells on which the two files disagree are
//! ignored for training and evaluation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::image::RgbFrame;
use crate::error::{Error, Result};
use crate::loss::LabelVector;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameKey {
    pub video_id: String,
    pub frame_index: usize,
}

impl fmt::Display for FrameKey {
    /// `<video_id>:<frame_index>`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.video_id, self.frame_index)
    }
}

impl FrameKey {
    pub fn parse(s: &str) -> Result<Self> {
        let (video, index) = s
            .rsplit_once(':')
            .ok_or_else(|| Error::Data(format!("frame key {s:?} is not <video_id>:<frame_index>")))?;
        let frame_index = index
            .parse()
            .map_err(|_| Error::Data(format!("frame key {s:?} has a non-integer frame index")))?;
        Ok(FrameKey {
            video_id: video.to_string(),
            frame_index,
        })
    }
}

/// Where a frame's pixels live.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameImage {
    File(PathBuf),
    Memory(Arc<RgbFrame>),
}

impl FrameImage {
    pub fn load(&self) -> Result<Arc<RgbFrame>> {
        match self {
            FrameImage::File(p) => Ok(Arc::new(RgbFrame::load(p)?)),
            FrameImage::Memory(f) => Ok(Arc::clone(f)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub key: FrameKey,
    pub image: FrameImage,
    pub labels: LabelVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub tool_names: Vec<String>,
    pub videos: Vec<VideoRecord>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.tool_names.len()
    }

    pub fn num_frames(&self) -> usize {
        self.videos.iter().map(|v| v.frames.len()).sum()
    }

    pub fn video(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.video_id == id)
    }

    pub fn frames(&self) -> impl Iterator<Item = &FrameEntry> {
        self.videos.iter().flat_map(|v| v.frames.iter())
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes();
        if c == 0 {
            return Err(Error::Data("manifest lists no tools".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for v in &self.videos {
            if !ids.insert(&v.video_id) {
                return Err(Error::Data(format!("duplicate video id {}", v.video_id)));
            }
            for w in v.frames.windows(2) {
                if w[1].key.frame_index <= w[0].key.frame_index {
                    return Err(Error::Data(format!(
                        "video {}: frame indices not strictly increasing ({} then {})",
                        v.video_id, w[0].key.frame_index, w[1].key.frame_index
                    )));
                }
            }
            for f in &v.frames {
                if f.labels.len() != c {
                    return Err(Error::Data(format!("frame {} has {} labels, expected {c}", f.key, f.labels.len())));
                }
                if f.key.video_id != v.video_id {
                    return Err(Error::Data(format!("frame {} filed under video {}", f.key, v.video_id)));
                }
            }
        }
        Ok(())
    }

    /// Restricts every label vector to the tools at `keep`.
    pub fn select_tools(&self, keep: &[usize]) -> DatasetManifest {
        DatasetManifest {
            tool_names: keep.iter().map(|&i| self.tool_names[i].clone()).collect(),
            videos: self
                .videos
                .iter()
                .map(|v| VideoRecord {
                    video_id: v.video_id.clone(),
                    frames: v
                        .frames
                        .iter()
                        .map(|f| FrameEntry {
                            key: f.key.clone(),
                            image: f.image.clone(),
                            labels: f.labels.select(keep),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Loads a manifest file and every annotation CSV it references.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ManifestFile = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let root = path.parent().unwrap_or_else(|| Path::new("."));
        let mut videos = Vec::with_capacity(file.videos.len());
        for v in &file.videos {
            let first = read_annotations(&root.join(&v.annotations), &file.tool_names)?;
            let second = v
                .second_annotations
                .as_ref()
                .map(|p| read_annotations(&root.join(p), &file.tool_names))
                .transpose()?;
            let frames = merge_annotators(&v.video_id, &root.join(&v.frame_dir), first, second)?;
            videos.push(VideoRecord {
                video_id: v.video_id.clone(),
                frames,
            });
        }
        let manifest = DatasetManifest {
            tool_names: file.tool_names,
            videos,
        };
        manifest.validate()?;
        Ok(manifest)
    }
}

/// On-disk manifest schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub tool_names: Vec<String>,
    pub videos: Vec<ManifestVideo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestVideo {
    pub video_id: String,
    pub frame_dir: PathBuf,
    pub annotations: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_annotations: Option<PathBuf>,
}

pub fn frame_file_name(frame_index: usize) -> String {
    format!("{frame_index:06}.png")
}

type AnnotationRows = Vec<(usize, Vec<bool>)>;

pub fn read_annotations(path: &Path, tool_names: &[String]) -> Result<AnnotationRows> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    let expected: Vec<&str> = std::iter::once("frame").chain(tool_names.iter().map(|s| s.as_str())).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Data(format!(
            "{}: header {:?} does not match expected {:?}",
            path.display(),
            header.iter().collect::<Vec<_>>(),
            expected
        )));
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let bad = |what: &str| Error::Data(format!("{} row {}: {what}", path.display(), line + 2));
        let frame: usize = record[0].trim().parse().map_err(|_| bad("frame is not an integer"))?;
        let labels = record
            .iter()
            .skip(1)
            .map(|v| match v.trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(bad(&format!("label {other:?} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((frame, labels));
    }
    Ok(rows)
}

pub fn write_annotations(path: &Path, tool_names: &[String], rows: &[(usize, Vec<bool>)]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let header: Vec<&str> = std::iter::once("frame").chain(tool_names.iter().map(|s| s.as_str())).collect();
    w.write_record(&header).map_err(csv_err)?;
    for (frame, labels) in rows {
        let mut rec = vec![frame.to_string()];
        rec.extend(labels.iter().map(|&b| if b { "1" } else { "0" }.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn merge_annotators(video_id: &str, frame_dir: &Path, first: AnnotationRows, second: Option<AnnotationRows>) -> Result<Vec<FrameEntry>> {
    if let Some(s) = &second {
        if s.len() != first.len() || s.iter().zip(&first).any(|(a, b)| a.0 != b.0) {
            return Err(Error::Data(format!("video {video_id}: annotator files list different frames")));
        }
    }
    Ok(first
        .into_iter()
        .enumerate()
        .map(|(i, (frame_index, present))| {
            let evaluate = match &second {
                Some(s) => present.iter().zip(&s[i].1).map(|(a, b)| a == b).collect(),
                None => vec![true; present.len()],
            };
            FrameEntry {
                key: FrameKey {
                    video_id: video_id.to_string(),
                    frame_index,
                },
                image: FrameImage::File(frame_dir.join(frame_file_name(frame_index))),
                labels: LabelVector { present, evaluate },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_key_round_trip() {
        let k = FrameKey {
            video_id: "train:07".into(),
            frame_index: 42,
        };
        assert_eq!(k.to_string(), "train:07:42");
        assert_eq!(FrameKey::parse(&k.to_string()).unwrap(), k);
        assert!(FrameKey::parse("nokey").is_err());
    }

    #[test]
    fn disagreement_becomes_ignore() {
        let dir = tempfile::tempdir().unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        write_annotations(&dir.path().join("x.csv"), &names, &[(0, vec![true, false]), (6, vec![false, false])]).unwrap();
        write_annotations(&dir.path().join("y.csv"), &names, &[(0, vec![true, true]), (6, vec![false, false])]).unwrap();
        let file = ManifestFile {
            tool_names: names.clone(),
            videos: vec![ManifestVideo {
                video_id: "v".into(),
                frame_dir: "frames".into(),
                annotations: "x.csv".into(),
                second_annotations: Some("y.csv".into()),
            }],
        };
        let mpath = dir.path().join("manifest.json");
        std::fs::write(&mpath, serde_json::to_string(&file).unwrap()).unwrap();
        let m = DatasetManifest::load(&mpath).unwrap();
        let f0 = &m.videos[0].frames[0];
        assert_eq!(f0.labels.present, vec![true, false]);
        assert_eq!(f0.labels.evaluate, vec![true, false]);
        assert_eq!(m.videos[0].frames[1].labels.evaluate, vec![true, true]);
        assert_eq!(f0.image, FrameImage::File(dir.path().join("frames").join("000000.png")));
    }

    #[test]
    fn rejects_bad_header_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "frame,a,c\n0,1,0\n").unwrap();
        assert!(read_annotations(&p, &["a".into(), "b".into()]).is_err());
        std::fs::write(&p, "frame,a,b\n0,1,2\n").unwrap();
        assert!(read_annotations(&p, &["a".into(), "b".into()]).is_err());
    }

    #[test]
    fn validate_catches_order_and_length() {
        let entry = |i: usize, c: usize| FrameEntry {
            key: FrameKey {
                video_id: "v".into(),
                frame_index: i,
            },
            image: FrameImage::File(PathBuf::new()),
            labels: LabelVector::new(vec![false; c]),
        };
        let mut m = DatasetManifest {
            tool_names: vec!["a".into()],
            videos: vec![VideoRecord {
                video_id: "v".into(),
                frames: vec![entry(0, 1), entry(0, 1)],
            }],
        };
        assert!(m.validate().is_err());
        m.videos[0].frames[1] = entry(1, 2);
        assert!(m.validate().is_err());
        m.videos[0].frames[1] = entry(1, 1);
        assert!(m.validate().is_ok());
    }
}
