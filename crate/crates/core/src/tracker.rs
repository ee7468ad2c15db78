//! Full-body tube construction. A tube starts from the highest-scoring part
//! detection of the video, tracks that part forward and backward over
//! keyframes with a sliding-window search, spawns further parts inside the
//! merged full-body box and prunes parts whose combined score drops.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{read_jsonl, write_jsonl};
use crate::geometry::{interpolate_tube, BBox, TubeFrame};
use crate::provider::{query_fullbody, regress_fullbody, Detection, DetectionProvider, DetectionStore};
use crate::regress::{merge_regressed, FullBodyRegressor};

pub use crate::geometry::Tube;

/// Linear scorer over detection features trained with hinge-loss
/// subgradient steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub eta: f64,
    pub c: f64,
}

impl InstanceClassifier {
    pub fn new(dim: usize, eta: f64, c: f64) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
            eta,
            c,
        }
    }

    pub fn margin(&self, feature: &[f64]) -> f64 {
        self.weights.iter().zip(feature).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }

    /// One subgradient step on `c/2 |w|^2 + max(0, 1 - y (w.x + b))`.
    pub fn update(&mut self, feature: &[f64], label: f64) {
        let violated = label * self.margin(feature) < 1.0;
        for (w, x) in self.weights.iter_mut().zip(feature) {
            let g = self.c * *w - if violated { label * x } else { 0.0 };
            *w -= self.eta * g;
        }
        if violated {
            self.bias += self.eta * label;
        }
    }

    /// One pass over `examples` in order.
    pub fn epoch(&mut self, examples: &[(Vec<f64>, f64)]) {
        for (x, y) in examples {
            self.update(x, *y);
        }
    }

    /// Passes over `examples` until every margin is satisfied or
    /// `max_epochs` is reached. Returns the number of epochs run.
    pub fn fit(&mut self, examples: &[(Vec<f64>, f64)], max_epochs: usize) -> usize {
        for e in 0..max_epochs {
            if examples.iter().all(|(x, y)| y * self.margin(x) >= 1.0) {
                return e;
            }
            self.epoch(examples);
        }
        max_epochs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub max_parts: usize,
    /// Minimum detector score for a part to be spawned.
    pub spawn_threshold: f64,
    /// Tracks whose combined score falls below this are removed.
    pub prune_threshold: f64,
    /// Search radius as a fraction of the tracked box diagonal.
    pub search_radius: f64,
    /// Search step as a fraction of the tracked box width and height.
    pub search_stride: f64,
    pub scales: Vec<f64>,
    pub keyframe_stride: u32,
    pub eta: f64,
    pub c: f64,
    /// Epoch cap when fitting a fresh instance classifier.
    pub init_epochs: usize,
    /// Same-frame detections below this IoU with the tracked box are negatives.
    pub negative_iou: f64,
    /// Slack in pixels for the spawn containment test.
    pub spawn_tolerance: f64,
    /// Use full-body boxes stored with detections when present.
    pub use_stored_fullbody: bool,
    pub max_tubes: usize,
    /// Detections covered by an extracted tube at least this much (by their
    /// own area) are removed before the next tube is built.
    pub suppression_overlap: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            max_parts: 5,
            spawn_threshold: 0.25,
            prune_threshold: 1.0,
            search_radius: 0.5,
            search_stride: 0.125,
            scales: vec![0.9, 1.0, 1.1],
            keyframe_stride: 5,
            eta: 0.01,
            c: 1e-4,
            init_epochs: 500,
            negative_iou: 0.3,
            spawn_tolerance: 2.0,
            use_stored_fullbody: true,
            max_tubes: 1,
            suppression_overlap: 0.5,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.max_parts == 0 {
            bad.push("max_parts must be at least 1");
        }
        if self.keyframe_stride == 0 {
            bad.push("keyframe_stride must be at least 1");
        }
        if !(self.search_radius >= 0.0) {
            bad.push("search_radius must be >= 0");
        }
        if !(self.search_stride > 0.0) {
            bad.push("search_stride must be > 0");
        }
        if self.scales.is_empty() || self.scales.iter().any(|s| !(*s > 0.0)) {
            bad.push("scales must be non-empty and positive");
        }
        if !(self.eta > 0.0) || !(self.c >= 0.0) {
            bad.push("eta must be > 0 and c >= 0");
        }
        if self.max_tubes == 0 {
            bad.push("max_tubes must be at least 1");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartTrack {
    pub id: usize,
    pub class: usize,
    pub bbox: BBox,
    pub classifier: InstanceClassifier,
    pub score: f64,
    pub birth_frame: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub part: BBox,
    pub full: BBox,
    pub frame: u32,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    pub video: String,
    pub tracks: Vec<PartTrack>,
    /// Merged full-body box per processed keyframe, in processing order.
    pub merged: Vec<TubeFrame>,
    pub anchor: Anchor,
    next_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Alive,
    /// Every track was pruned; nothing was recorded for the frame.
    Terminated,
}

/// Context shared by the tracking operations of one video.
pub struct Tracking<'a, P: DetectionProvider + ?Sized> {
    pub provider: &'a P,
    pub regressor: Option<&'a FullBodyRegressor>,
    pub cfg: &'a TrackerConfig,
    pub video: &'a str,
}

fn shifted_copies(b: &BBox) -> [BBox; 4] {
    let (hw, hh) = (b.width() / 2.0, b.height() / 2.0);
    [
        b.translate(-hw, 0.0),
        b.translate(hw, 0.0),
        b.translate(0.0, -hh),
        b.translate(0.0, hh),
    ]
}

/// Orders detections by score (highest first), then class, then box.
fn detection_order(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.class.cmp(&b.class))
        .then_with(|| a.bbox.lex_cmp(&b.bbox))
}

impl<'a, P: DetectionProvider + ?Sized> Tracking<'a, P> {
    pub fn new(
        provider: &'a P,
        regressor: Option<&'a FullBodyRegressor>,
        cfg: &'a TrackerConfig,
        video: &'a str,
    ) -> Self {
        Self {
            provider,
            regressor,
            cfg,
            video,
        }
    }

    fn fullbody(&self, d: &Detection) -> Result<BBox> {
        if self.cfg.use_stored_fullbody {
            query_fullbody(d, self.regressor)
        } else {
            regress_fullbody(d, self.regressor)
        }
    }

    /// Positive example at `bbox` plus same-frame negatives.
    fn training_set(&self, frame: u32, bbox: &BBox, class: usize, feature: Vec<f64>) -> Vec<(Vec<f64>, f64)> {
        let mut ex = vec![(feature, 1.0)];
        for d in self.provider.detections(self.video, frame) {
            if d.bbox.overlap(bbox) < self.cfg.negative_iou {
                ex.push((d.feature.clone(), -1.0));
            }
        }
        for s in shifted_copies(bbox) {
            ex.push((self.provider.query_feature(self.video, frame, &s, class), -1.0));
        }
        ex
    }

    fn new_classifier(&self, frame: u32, d: &Detection) -> InstanceClassifier {
        let mut clf = InstanceClassifier::new(self.provider.feature_dim(), self.cfg.eta, self.cfg.c);
        let ex = self.training_set(frame, &d.bbox, d.class, d.feature.clone());
        clf.fit(&ex, self.cfg.init_epochs);
        clf
    }

    /// Starts a tube at the best detection of the video.
    pub fn initialize(&self) -> Result<TrackerState> {
        self.cfg.validate()?;
        let (first, last) = self
            .provider
            .frame_range(self.video)
            .ok_or_else(|| Error::NoDetections(self.video.to_string()))?;
        let mut best: Option<&Detection> = None;
        for f in first..=last {
            for d in self.provider.detections(self.video, f) {
                // frames are visited in order, so ties keep the earliest frame
                let better = match best {
                    None => true,
                    Some(b) => d.frame == b.frame && detection_order(d, b).is_lt() || d.score > b.score,
                };
                if better {
                    best = Some(d);
                }
            }
        }
        let anchor = best.ok_or_else(|| Error::NoDetections(self.video.to_string()))?;
        let full = self.fullbody(anchor)?;
        let classifier = self.new_classifier(anchor.frame, anchor);
        let score = anchor.score + classifier.margin(&anchor.feature);
        Ok(TrackerState {
            video: self.video.to_string(),
            tracks: vec![PartTrack {
                id: 0,
                class: anchor.class,
                bbox: anchor.bbox,
                classifier,
                score,
                birth_frame: anchor.frame,
            }],
            merged: vec![TubeFrame {
                frame: anchor.frame,
                bbox: full,
                score,
                parts: vec![anchor.class],
            }],
            anchor: Anchor {
                part: anchor.bbox,
                full,
                frame: anchor.frame,
                class: anchor.class,
            },
            next_id: 1,
        })
    }

    /// Sliding-window candidates around `b`: every scale, then rows, then
    /// columns of offsets.
    pub fn candidates(&self, b: &BBox) -> Vec<BBox> {
        let (cx, cy) = b.center();
        let radius = self.cfg.search_radius * b.diagonal();
        let (sx, sy) = (self.cfg.search_stride * b.width(), self.cfg.search_stride * b.height());
        let nx = (radius / sx + 1e-9).floor() as i64;
        let ny = (radius / sy + 1e-9).floor() as i64;
        let mut out = Vec::with_capacity(self.cfg.scales.len() * ((2 * nx + 1) * (2 * ny + 1)) as usize);
        for &s in &self.cfg.scales {
            let (w, h) = (b.width() * s, b.height() * s);
            for j in -ny..=ny {
                for i in -nx..=nx {
                    let (x, y) = (cx + i as f64 * sx, cy + j as f64 * sy);
                    out.push(BBox {
                        x1: x - w / 2.0,
                        y1: y - h / 2.0,
                        x2: x + w / 2.0,
                        y2: y + h / 2.0,
                    });
                }
            }
        }
        out
    }

    /// Advances every track to `frame`, prunes, merges and spawns.
    pub fn step(&self, state: &mut TrackerState, frame: u32) -> Result<StepOutcome> {
        let mut survivors: Vec<PartTrack> = Vec::new();
        let mut contributions: Vec<(BBox, f64)> = Vec::new();
        for mut track in std::mem::take(&mut state.tracks) {
            let mut best: Option<(f64, BBox, &Detection, f64)> = None;
            for cand in self.candidates(&track.bbox) {
                let (qs, matched) = self.provider.query_score(self.video, frame, &cand, track.class);
                let Some(m) = matched else { continue };
                let combined = qs + track.classifier.margin(&m.feature);
                if best.as_ref().is_none_or(|b| combined > b.0) {
                    best = Some((combined, cand, m, qs));
                }
            }
            let Some((combined, winner, matched, qs)) = best else {
                log::debug!(
                    "{} f{frame}: track {} (class {}) lost its detection",
                    self.video,
                    track.id,
                    track.class
                );
                continue;
            };
            if combined < self.cfg.prune_threshold {
                log::debug!(
                    "{} f{frame}: track {} (class {}) pruned at combined score {combined:.3} (detector {qs:.3})",
                    self.video,
                    track.id,
                    track.class
                );
                continue;
            }
            let full = self.fullbody(matched)?;
            let ex = self.training_set(frame, &winner, track.class, matched.feature.clone());
            track.classifier.epoch(&ex);
            track.bbox = winner;
            track.score = combined;
            log::trace!(
                "{} f{frame}: track {} (class {}) at {:?}, full body {:?}, combined {combined:.3}",
                self.video,
                track.id,
                track.class,
                winner.to_array(),
                full.to_array()
            );
            contributions.push((full, combined));
            survivors.push(track);
        }
        if survivors.is_empty() {
            return Ok(StepOutcome::Terminated);
        }
        let merged = merge_regressed(&contributions)?;
        state.merged.push(TubeFrame {
            frame,
            bbox: merged,
            score: contributions.iter().map(|c| c.1).sum(),
            parts: survivors.iter().map(|t| t.class).collect(),
        });
        state.tracks = survivors;
        self.spawn(state, frame, &merged);
        Ok(StepOutcome::Alive)
    }

    fn spawn(&self, state: &mut TrackerState, frame: u32, merged: &BBox) {
        if state.tracks.len() >= self.cfg.max_parts {
            return;
        }
        let mut pool: Vec<&Detection> = self
            .provider
            .detections(self.video, frame)
            .iter()
            .filter(|d| d.score >= self.cfg.spawn_threshold && d.bbox.contained_in(merged, self.cfg.spawn_tolerance))
            .collect();
        pool.sort_by(|a, b| detection_order(a, b));
        for d in pool {
            if state.tracks.len() >= self.cfg.max_parts {
                break;
            }
            if state.tracks.iter().any(|t| t.class == d.class) {
                continue;
            }
            let classifier = self.new_classifier(frame, d);
            let score = d.score + classifier.margin(&d.feature);
            state.tracks.push(PartTrack {
                id: state.next_id,
                class: d.class,
                bbox: d.bbox,
                classifier,
                score,
                birth_frame: frame,
            });
            state.next_id += 1;
        }
    }

    /// Tracks forward and backward from the anchor over keyframes and
    /// interpolates the result to every frame. Parts inside the anchor's
    /// full-body box join at the anchor frame, so both passes start with
    /// the same tracks.
    pub fn build_tube(&self) -> Result<Tube> {
        let mut start = self.initialize()?;
        let (first, last) = self.provider.frame_range(self.video).expect("initialized");
        let s = self.cfg.keyframe_stride;
        let t = start.anchor.frame;
        let anchor_full = start.anchor.full;
        self.spawn(&mut start, t, &anchor_full);

        let mut fwd = start.clone();
        let mut f = t;
        while f + s <= last {
            f += s;
            if self.step(&mut fwd, f)? == StepOutcome::Terminated {
                break;
            }
        }
        let mut bwd = start;
        let mut f = t;
        while f >= first + s {
            f -= s;
            if self.step(&mut bwd, f)? == StepOutcome::Terminated {
                break;
            }
        }
        let mut frames: Vec<TubeFrame> = bwd.merged.into_iter().skip(1).rev().collect();
        frames.extend(fwd.merged);
        interpolate_tube(&Tube::new(self.video, frames)?, s)
    }
}

/// Extracts up to `cfg.max_tubes` tubes from one video, removing detections
/// covered by each extracted tube before building the next.
pub fn build_tubes(
    store: &DetectionStore,
    regressor: Option<&FullBodyRegressor>,
    cfg: &TrackerConfig,
    video: &str,
) -> Result<Vec<Tube>> {
    let mut remaining = store.filtered(|d| d.video == video);
    let mut tubes = Vec::new();
    while tubes.len() < cfg.max_tubes && !remaining.is_empty() {
        let tube = Tracking::new(&remaining, regressor, cfg, video).build_tube()?;
        remaining = remaining.filtered(|d| match tube.box_at(d.frame) {
            Some(b) => d.bbox.intersection_area(b) < cfg.suppression_overlap * d.bbox.area(),
            None => true,
        });
        tubes.push(tube);
    }
    Ok(tubes)
}

/// Tubes for every video in the store, keyed by video.
pub fn build_all(
    store: &DetectionStore,
    regressor: Option<&FullBodyRegressor>,
    cfg: &TrackerConfig,
) -> Result<BTreeMap<String, Vec<Tube>>> {
    let videos: Vec<&str> = store.videos().collect();
    let built: Vec<(String, Vec<Tube>)> = videos
        .par_iter()
        .map(|v| Ok((v.to_string(), build_tubes(store, regressor, cfg, v)?)))
        .collect::<Result<_>>()?;
    Ok(built.into_iter().collect())
}

/// A tube with its identifier, `"{video}#{index}"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeRecord {
    pub id: String,
    #[serde(flatten)]
    pub tube: Tube,
}

pub fn tube_records(tubes: &BTreeMap<String, Vec<Tube>>) -> Vec<TubeRecord> {
    tubes
        .iter()
        .flat_map(|(v, ts)| {
            ts.iter().enumerate().map(move |(i, t)| TubeRecord {
                id: format!("{v}#{i}"),
                tube: t.clone(),
            })
        })
        .collect()
}

pub fn save_tubes(path: &Path, records: &[TubeRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn load_tubes(path: &Path) -> Result<Vec<TubeRecord>> {
    read_jsonl(path, |r: &TubeRecord| r.tube.validate())
}
