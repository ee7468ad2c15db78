//! File-backed part detector: stored detections answer score, feature and
//! full-body queries for arbitrary candidate boxes.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::regress::{apply_regressor, FullBodyRegressor};

/// Minimum IoU between a candidate and a stored detection for the detection
/// to answer the query.
pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub video: String,
    pub frame: u32,
    pub class: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
    #[serde(default)]
    pub feature: Vec<f64>,
    #[serde(default)]
    pub fullbody: Option<BBox>,
}

impl Detection {
    fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Schema(format!("score {} outside [0, 1]", self.score)));
        }
        if self.feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("feature has non-finite values".into()));
        }
        Ok(())
    }
}

/// Source of part detections for one or more videos.
pub trait DetectionProvider {
    /// Detections in `frame` of `video`, in storage order.
    fn detections(&self, video: &str, frame: u32) -> &[Detection];

    fn feature_dim(&self) -> usize;

    /// First and last frame of `video` with any detection.
    fn frame_range(&self, video: &str) -> Option<(u32, u32)>;

    /// Best `score * IoU` among same-class detections overlapping the
    /// candidate by at least [`MATCH_IOU`]; earlier detections win ties.
    fn query_score(&self, video: &str, frame: u32, candidate: &BBox, class: usize) -> (f64, Option<&Detection>) {
        let mut best: (f64, Option<&Detection>) = (0.0, None);
        for d in self.detections(video, frame) {
            if d.class != class {
                continue;
            }
            let o = candidate.overlap(&d.bbox);
            if o < MATCH_IOU {
                continue;
            }
            let s = d.score * o;
            if best.1.is_none() || s > best.0 {
                best = (s, Some(d));
            }
        }
        best
    }

    /// Feature of the detection answering [`query_score`](Self::query_score),
    /// or zeros when nothing matches.
    fn query_feature(&self, video: &str, frame: u32, candidate: &BBox, class: usize) -> Vec<f64> {
        match self.query_score(video, frame, candidate, class).1 {
            Some(d) => d.feature.clone(),
            None => vec![0.0; self.feature_dim()],
        }
    }
}

/// Full-body box for a matched detection: the stored box when present,
/// otherwise the class regressor applied to the part.
pub fn query_fullbody(matched: &Detection, model: Option<&FullBodyRegressor>) -> Result<BBox> {
    if let Some(b) = matched.fullbody {
        return Ok(b);
    }
    regress_fullbody(matched, model)
}

/// Regressed full-body box, ignoring any stored box.
pub fn regress_fullbody(matched: &Detection, model: Option<&FullBodyRegressor>) -> Result<BBox> {
    let model = model.ok_or_else(|| {
        Error::Config(format!(
            "detection in `{}` frame {} has no full-body box and no regressor is loaded",
            matched.video, matched.frame
        ))
    })?;
    apply_regressor(model, matched.class, &matched.bbox, &matched.feature)
}

/// Detections indexed by video and frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionStore {
    videos: BTreeMap<String, BTreeMap<u32, Vec<Detection>>>,
    dim: Option<usize>,
    len: usize,
}

impl DetectionStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_detections<I: IntoIterator<Item = Detection>>(dets: I) -> Result<Self> {
        let mut store = Self::new();
        for d in dets {
            store.push(d)?;
        }
        Ok(store)
    }

    pub fn push(&mut self, d: Detection) -> Result<()> {
        d.check()?;
        match self.dim {
            Some(dim) if dim != d.feature.len() => {
                return Err(Error::Schema(format!(
                    "feature dimension {} differs from {dim}",
                    d.feature.len()
                )));
            }
            _ => self.dim = Some(d.feature.len()),
        }
        self.videos
            .entry(d.video.clone())
            .or_default()
            .entry(d.frame)
            .or_default()
            .push(d);
        self.len += 1;
        Ok(())
    }

    /// Reads one detection per line. Malformed lines are parse errors and
    /// dimension mismatches are schema errors, both naming the line.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut store = Self::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let d: Detection = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            store.push(d).map_err(|e| match e {
                Error::Schema(m) => Error::Schema(format!("{}:{}: {m}", path.display(), i + 1)),
                other => other,
            })?;
        }
        Ok(store)
    }

    /// Writes detections ordered by video, frame, then storage order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for d in self.iter() {
            serde_json::to_writer(&mut out, d)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Detection> {
        self.videos.values().flat_map(|f| f.values().flatten())
    }

    pub fn videos(&self) -> impl Iterator<Item = &str> {
        self.videos.keys().map(String::as_str)
    }

    pub fn video_detections<'a>(&'a self, video: &str) -> impl Iterator<Item = &'a Detection> + 'a {
        self.videos.get(video).into_iter().flat_map(|f| f.values().flatten())
    }

    /// Copy of the store keeping only detections for which `keep` holds.
    pub fn filtered<F: Fn(&Detection) -> bool>(&self, keep: F) -> Self {
        let mut out = Self {
            dim: self.dim,
            ..Self::default()
        };
        for d in self.iter().filter(|d| keep(d)) {
            out.videos
                .entry(d.video.clone())
                .or_default()
                .entry(d.frame)
                .or_default()
                .push(d.clone());
            out.len += 1;
        }
        out
    }
}

impl DetectionProvider for DetectionStore {
    fn detections(&self, video: &str, frame: u32) -> &[Detection] {
        self.videos
            .get(video)
            .and_then(|f| f.get(&frame))
            .map_or(&[], Vec::as_slice)
    }

    fn feature_dim(&self) -> usize {
        self.dim.unwrap_or(0)
    }

    fn frame_range(&self, video: &str) -> Option<(u32, u32)> {
        let frames = self.videos.get(video)?;
        Some((*frames.keys().next()?, *frames.keys().next_back()?))
    }
}
