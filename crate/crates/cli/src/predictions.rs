//! Prediction CSV: header `frame,<tool_1>,...,<tool_c>`, one row per frame
//! keyed `<video_id>:<frame_index>`, scores in `[0, 1]`.

use std::path::Path;

use toolnet::data::FrameKey;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub tool_names: Vec<String>,
    pub rows: Vec<(FrameKey, Vec<f64>)>,
}

impl Predictions {
    pub fn write(&self, path: &Path) -> Result<()> {
        let err = |e: csv::Error| CliError::Predictions {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        let mut header = vec!["frame".to_string()];
        header.extend(self.tool_names.iter().cloned());
        w.write_record(&header).map_err(err)?;
        for (key, scores) in &self.rows {
            let mut rec = vec![key.to_string()];
            // shortest representation that parses back to the same value
            rec.extend(scores.iter().map(|s| s.to_string()));
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bad = |message: String| CliError::Predictions {
            path: path.to_path_buf(),
            message,
        };
        let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
        let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
        if header.get(0) != Some("frame") || header.len() < 2 {
            return Err(bad("header must be frame,<tool_1>,...".into()));
        }
        let tool_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let key = FrameKey::parse(&rec[0]).map_err(|e| bad(format!("row {}: {e}", i + 2)))?;
            let scores = rec
                .iter()
                .skip(1)
                .map(|v| {
                    let s: f64 = v.trim().parse().map_err(|_| bad(format!("row {}: {v:?} is not a number", i + 2)))?;
                    if !(0.0..=1.0).contains(&s) {
                        return Err(bad(format!("row {}: score {s} outside [0, 1]", i + 2)));
                    }
                    Ok(s)
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((key, scores));
        }
        Ok(Predictions { tool_names, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = Predictions {
            tool_names: vec!["a".into(), "b".into()],
            rows: vec![
                (FrameKey::parse("v1:0").unwrap(), vec![0.1 + 0.2, 1.0 / 3.0]),
                (FrameKey::parse("v1:6").unwrap(), vec![0.0, 1.0]),
            ],
        };
        let path = dir.path().join("p.csv");
        p.write(&path).unwrap();
        assert_eq!(Predictions::read(&path).unwrap(), p);
    }

    #[test]
    fn rejects_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "frame,a\nv:0,1.5\n").unwrap();
        assert!(Predictions::read(&path).is_err());
    }
}
