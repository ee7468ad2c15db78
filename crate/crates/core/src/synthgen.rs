//! Deterministic synthetic corpora: 13-joint stick figures moving through
//! scenes with occluders and a zooming camera.
//!
//! A corpus holds training images with part proposals, a pose library,
//! and a set of videos. Each video yields noisy part detections, groundtruth
//! action instances, per-frame poses and tube features.
//!
//! Randomness: the corpus RNG (`ChaCha8Rng` seeded with `CorpusSpec::seed`)
//! draws, in order, the training images, the pose library and the held-out
//! evaluation poses. Each scene has its own RNG seeded with
//! `SceneSpec::seed`, which draws in this order:
//! 1. per person: body proportions (unless given), gait phase, one identity
//!    embedding per detection template;
//! 2. per frame, per live person, per visible template: the miss draw, four
//!    corner jitters, the score noise, then the feature noise; after the
//!    persons, the false-positive draw and, if one fires, its box, class,
//!    score and feature;
//! 3. per person: tube-feature noise for every channel.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amodal::{points_to_box, pose_to_box, visible_box, PoseLibrary, DEFAULT_MARGIN};
use crate::error::{Error, Result};
use crate::evalkit::{write_jsonl, AnnotatedFrame, GroundTruthInstance, Split};
use crate::fusion::TubeFeature;
use crate::geometry::{crop_to_frame, BBox, FrameExtent};
use crate::partmodel::{assign_class, Joint, PartClassModel, Pose2D, ProposalLabel, Skeleton, FULLBODY_IOU, PART_IOU};
use crate::pipeline::{cluster_training, Proposal, TrainingRecord};
use crate::provider::{Detection, DetectionStore};
use crate::regress::encode_deltas;

/// Dimension of the identity part of detection features.
pub const IDENTITY_DIM: usize = 32;
/// Feature length: identity embedding followed by a 4-value layout code.
pub const FEATURE_DIM: usize = IDENTITY_DIM + 4;
/// Factor applied to the layout code so that appearance dominates feature
/// distances.
pub const LAYOUT_SCALE: f64 = 0.1;

/// Limb lengths and widths in units of person height, plus the horizontal
/// foreshortening factor and torso lean (radians).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    pub shoulder: f64,
    pub hip: f64,
    pub torso: f64,
    pub neck: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub thigh: f64,
    pub shin: f64,
    pub yaw: f64,
    pub lean: f64,
}

impl BodyParams {
    pub fn sample(rng: &mut ChaCha8Rng) -> Self {
        BodyParams {
            shoulder: rng.random_range(0.09..0.13),
            hip: rng.random_range(0.06..0.09),
            torso: rng.random_range(0.27..0.33),
            neck: rng.random_range(0.13..0.17),
            upper_arm: rng.random_range(0.15..0.19),
            forearm: rng.random_range(0.14..0.18),
            thigh: rng.random_range(0.21..0.25),
            shin: rng.random_range(0.21..0.25),
            yaw: rng.random_range(0.35..1.0),
            lean: rng.random_range(-0.12..0.12),
        }
    }
}

impl Default for BodyParams {
    fn default() -> Self {
        BodyParams {
            shoulder: 0.11,
            hip: 0.075,
            torso: 0.3,
            neck: 0.15,
            upper_arm: 0.17,
            forearm: 0.16,
            thigh: 0.23,
            shin: 0.23,
            yaw: 1.0,
            lean: 0.0,
        }
    }
}

/// Joint angles in radians, `[left, right]`. Zero hangs the limb straight
/// down; positive values swing it away from the body midline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Angles {
    pub arm: [f64; 2],
    pub elbow: [f64; 2],
    pub leg: [f64; 2],
    pub knee: [f64; 2],
}

impl Angles {
    pub const REST: Angles = Angles {
        arm: [0.15, 0.15],
        elbow: [0.1, 0.1],
        leg: [0.05, 0.05],
        knee: [0.0, 0.0],
    };

    pub fn sample(rng: &mut ChaCha8Rng) -> Self {
        let mut a = Angles::REST;
        for s in 0..2 {
            a.arm[s] = rng.random_range(-0.3..2.4);
            a.elbow[s] = rng.random_range(-0.2..1.6);
            a.leg[s] = rng.random_range(-0.45..0.45);
            a.knee[s] = rng.random_range(0.0..0.9);
        }
        a
    }

    /// Walking cycle at `phase` radians.
    pub fn gait(phase: f64) -> Self {
        let s = phase.sin();
        Angles {
            arm: [0.15 + 0.35 * s, 0.15 - 0.35 * s],
            elbow: [0.2, 0.2],
            leg: [0.05 - 0.3 * s, 0.05 + 0.3 * s],
            knee: [0.25 * s.max(0.0), 0.25 * (-s).max(0.0)],
        }
    }
}

/// Complete pose (all joints visible) with the hip center at `root` and
/// the given height in pixels. Joint order follows [`Skeleton::default_13`].
pub fn body_pose(body: &BodyParams, angles: &Angles, root: (f64, f64), height: f64) -> Pose2D {
    let limb = |from: (f64, f64), len: f64, angle: f64, side: f64| -> (f64, f64) {
        (from.0 + side * len * angle.sin(), from.1 + len * angle.cos())
    };
    let (sl, cl) = body.lean.sin_cos();
    let lean = |p: (f64, f64)| (p.0 * cl - p.1 * sl, p.0 * sl + p.1 * cl);
    let head = lean((0.0, -body.torso - body.neck));
    let sh = [lean((-body.shoulder, -body.torso)), lean((body.shoulder, -body.torso))];
    let hip = [(-body.hip, 0.0), (body.hip, 0.0)];
    let side = [-1.0, 1.0];
    let mut elbow = [(0.0, 0.0); 2];
    let mut wrist = [(0.0, 0.0); 2];
    let mut knee = [(0.0, 0.0); 2];
    let mut ankle = [(0.0, 0.0); 2];
    for s in 0..2 {
        elbow[s] = limb(sh[s], body.upper_arm, angles.arm[s], side[s]);
        wrist[s] = limb(elbow[s], body.forearm, angles.arm[s] + angles.elbow[s], side[s]);
        knee[s] = limb(hip[s], body.thigh, angles.leg[s], side[s]);
        ankle[s] = limb(knee[s], body.shin, angles.leg[s] + angles.knee[s], side[s]);
    }
    let pts = [
        head, sh[0], sh[1], elbow[0], elbow[1], wrist[0], wrist[1], hip[0], hip[1], knee[0], knee[1], ankle[0],
        ankle[1],
    ];
    Pose2D {
        joints: pts
            .iter()
            .map(|&(x, y)| Joint::visible(root.0 + x * body.yaw * height, root.1 + y * height))
            .collect(),
    }
}

/// Root position and height of a person at one frame (world pixels).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonKey {
    pub frame: u32,
    pub x: f64,
    pub y: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonSpec {
    pub identity: u32,
    pub action: String,
    /// Piecewise-linear root track; the person exists between the first and
    /// last key.
    pub track: Vec<PersonKey>,
    #[serde(default)]
    pub articulate: bool,
    /// Frames per gait cycle.
    #[serde(default = "default_gait_period")]
    pub gait_period: f64,
    #[serde(default)]
    pub body: Option<BodyParams>,
}

fn default_gait_period() -> f64 {
    24.0
}

/// Rectangle in image coordinates hiding joints during `[from, to]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub from: u32,
    pub to: u32,
}

/// Camera state at a frame: `zoom` magnification around world point
/// `(cx, cy)`, which maps to the image center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraKey {
    pub frame: u32,
    pub zoom: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Standard deviation of per-corner box jitter in pixels.
    pub box_jitter: f64,
    pub score_noise: f64,
    pub false_positive_rate: f64,
    pub miss_rate: f64,
    /// Expected norm of the noise added to the appearance embedding.
    pub feature_noise: f64,
    /// Score penalty for a part covering none of the person box; scaled by
    /// the uncovered fraction.
    #[serde(default)]
    pub context_penalty: f64,
    /// Noise on the layout code appended to features.
    pub layout_noise: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            box_jitter: 3.0,
            score_noise: 0.01,
            false_positive_rate: 0.3,
            miss_rate: 0.0,
            feature_noise: 0.32,
            context_penalty: 0.05,
            layout_noise: 0.02,
        }
    }
}

impl NoiseSpec {
    pub const NONE: NoiseSpec = NoiseSpec {
        box_jitter: 0.0,
        score_noise: 0.0,
        false_positive_rate: 0.0,
        miss_rate: 0.0,
        feature_noise: 0.0,
        context_penalty: 0.0,
        layout_noise: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub seed: u64,
    pub frames: u32,
    pub extent: FrameExtent,
    #[serde(default)]
    pub split: Split,
    pub persons: Vec<PersonSpec>,
    #[serde(default)]
    pub occluders: Vec<Occluder>,
    #[serde(default)]
    pub camera: Vec<CameraKey>,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Attach the groundtruth full-body box to every true detection.
    #[serde(default)]
    pub emit_fullbody: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSpec {
    pub images: usize,
    pub extent: FrameExtent,
    /// Fraction of images with the lower body hidden.
    pub occlusion_rate: f64,
    pub proposals_per_template: usize,
    pub layout_noise: f64,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        TrainingSpec {
            images: 1000,
            extent: FrameExtent {
                width: 640,
                height: 480,
            },
            occlusion_rate: 0.5,
            proposals_per_template: 2,
            layout_noise: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSpec {
    pub channels: Vec<String>,
    pub signal: f64,
    pub noise: f64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            channels: vec!["trajectories".into(), "rgb".into(), "flow".into()],
            signal: 1.0,
            noise: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub classes: Vec<String>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub training: TrainingSpec,
    #[serde(default = "default_library")]
    pub library_poses: usize,
    #[serde(default = "default_eval_poses")]
    pub eval_poses: usize,
    #[serde(default)]
    pub features: FeatureSpec,
    /// Part box padding as a fraction of person height.
    #[serde(default = "default_padding")]
    pub part_padding: f64,
    /// Padding cap in pixels, kept below the full-body margin.
    #[serde(default = "default_max_padding")]
    pub max_padding: f64,
    #[serde(default = "default_annotated")]
    pub annotated_frames: usize,
    pub scenes: Vec<SceneSpec>,
}

fn default_k() -> usize {
    crate::partmodel::DEFAULT_PART_CLASSES
}
fn default_library() -> usize {
    2000
}
fn default_eval_poses() -> usize {
    100
}
fn default_padding() -> f64 {
    0.07
}
fn default_max_padding() -> f64 {
    16.0
}
fn default_annotated() -> usize {
    5
}

fn rate_ok(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

fn sigma_ok(v: f64) -> bool {
    v >= 0.0 && v.is_finite()
}

impl SceneSpec {
    fn problems(&self, classes: &BTreeSet<&str>, out: &mut Vec<String>) {
        let at = |field: &str| format!("scenes[{}].{field}", self.name);
        if self.frames == 0 {
            out.push(format!("{}: must be at least 1", at("frames")));
        }
        let n = &self.noise;
        for (name, v) in [
            ("noise.false_positive_rate", n.false_positive_rate),
            ("noise.miss_rate", n.miss_rate),
        ] {
            if !rate_ok(v) {
                out.push(format!("{}: {v} outside [0, 1]", at(name)));
            }
        }
        for (name, v) in [
            ("noise.box_jitter", n.box_jitter),
            ("noise.score_noise", n.score_noise),
            ("noise.feature_noise", n.feature_noise),
            ("noise.context_penalty", n.context_penalty),
            ("noise.layout_noise", n.layout_noise),
        ] {
            if !sigma_ok(v) {
                out.push(format!("{}: {v} must be >= 0", at(name)));
            }
        }
        if self.persons.is_empty() {
            out.push(format!("{}: at least one person required", at("persons")));
        }
        for (i, p) in self.persons.iter().enumerate() {
            if !classes.contains(p.action.as_str()) {
                out.push(format!(
                    "{}: unknown action `{}`",
                    at(&format!("persons[{i}].action")),
                    p.action
                ));
            }
            if p.track.is_empty() {
                out.push(format!("{}: empty", at(&format!("persons[{i}].track"))));
            }
            if p.track.windows(2).any(|w| w[1].frame <= w[0].frame) {
                out.push(format!("{}: frames must increase", at(&format!("persons[{i}].track"))));
            }
            if p.track
                .iter()
                .any(|k| !(k.height > 0.0) || !k.x.is_finite() || !k.y.is_finite())
            {
                out.push(format!(
                    "{}: heights must be positive",
                    at(&format!("persons[{i}].track"))
                ));
            }
            if p.track.last().is_some_and(|k| k.frame >= self.frames) {
                out.push(format!(
                    "{}: extends past the last frame",
                    at(&format!("persons[{i}].track"))
                ));
            }
            if !(p.gait_period > 0.0) {
                out.push(format!(
                    "{}: must be positive",
                    at(&format!("persons[{i}].gait_period"))
                ));
            }
        }
        for (i, o) in self.occluders.iter().enumerate() {
            if o.to < o.from {
                out.push(format!("{}: span is reversed", at(&format!("occluders[{i}]"))));
            }
        }
        if self.camera.iter().any(|c| !(c.zoom > 0.0)) {
            out.push(format!("{}: zoom must be positive", at("camera")));
        }
        if self.camera.windows(2).any(|w| w[1].frame <= w[0].frame) {
            out.push(format!("{}: frames must increase", at("camera")));
        }
    }
}

impl CorpusSpec {
    /// Every invalid field, or `Ok` when the spec is usable.
    pub fn validate(&self) -> Result<()> {
        let mut out = Vec::new();
        if self.classes.is_empty() {
            out.push("classes: at least one action class required".to_string());
        }
        let classes: BTreeSet<&str> = self.classes.iter().map(String::as_str).collect();
        if classes.len() != self.classes.len() {
            out.push("classes: duplicate names".to_string());
        }
        if self.k == 0 {
            out.push("k: must be at least 1".to_string());
        }
        if !rate_ok(self.training.occlusion_rate) {
            out.push(format!(
                "training.occlusion_rate: {} outside [0, 1]",
                self.training.occlusion_rate
            ));
        }
        if self.training.images == 0 {
            out.push("training.images: must be at least 1".to_string());
        }
        if !sigma_ok(self.training.layout_noise) {
            out.push("training.layout_noise: must be >= 0".to_string());
        }
        if self.library_poses == 0 {
            out.push("library_poses: must be at least 1".to_string());
        }
        if self.eval_poses == 0 {
            out.push("eval_poses: must be at least 1".to_string());
        }
        if self.features.channels.is_empty() {
            out.push("features.channels: at least one channel required".to_string());
        }
        if !sigma_ok(self.features.noise) {
            out.push("features.noise: must be >= 0".to_string());
        }
        if !(self.part_padding >= 0.0) || !(self.max_padding >= 0.0) {
            out.push("part_padding, max_padding: must be >= 0".to_string());
        }
        if self.annotated_frames == 0 {
            out.push("annotated_frames: must be at least 1".to_string());
        }
        let mut names = BTreeSet::new();
        for s in &self.scenes {
            if !names.insert(s.name.as_str()) {
                out.push(format!("scenes: duplicate name `{}`", s.name));
            }
            s.problems(&classes, &mut out);
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(out))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: CorpusSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Complete pose of one person in one frame, with visibility flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub video: String,
    pub frame: u32,
    pub person: usize,
    pub joints: Vec<Joint>,
}

impl PoseRecord {
    pub fn pose(&self) -> Pose2D {
        Pose2D {
            joints: self.joints.clone(),
        }
    }
}

/// Everything a corpus generates.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub skeleton: Skeleton,
    pub model: PartClassModel,
    pub training: Vec<TrainingRecord>,
    pub library: PoseLibrary,
    pub eval_poses: Vec<Pose2D>,
    pub detections: DetectionStore,
    pub groundtruth: Vec<GroundTruthInstance>,
    pub poses: Vec<PoseRecord>,
    pub features: Vec<TubeFeature>,
}

/// File names written by [`SynthOutput::write`].
pub mod files {
    pub const SPEC: &str = "corpus.json";
    pub const SKELETON: &str = "skeleton.json";
    pub const MODEL: &str = "detector_model.json";
    pub const TRAINING: &str = "training.jsonl";
    pub const LIBRARY: &str = "pose_library.jsonl";
    pub const EVAL_POSES: &str = "eval_poses.jsonl";
    pub const DETECTIONS: &str = "detections.jsonl";
    pub const GROUNDTRUTH: &str = "groundtruth.jsonl";
    pub const POSES: &str = "poses.jsonl";
    pub const FEATURES: &str = "tube_features.jsonl";

    pub const ALL: [&str; 10] = [
        SPEC,
        SKELETON,
        MODEL,
        TRAINING,
        LIBRARY,
        EVAL_POSES,
        DETECTIONS,
        GROUNDTRUTH,
        POSES,
        FEATURES,
    ];
}

impl SynthOutput {
    /// Writes every artifact into `dir` and returns the paths written.
    pub fn write(&self, spec: &CorpusSpec, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let eval = PoseLibrary::new(self.skeleton.clone(), self.eval_poses.clone())?;
        let mut lib = Vec::new();
        self.library.write_jsonl(&mut lib)?;
        let mut ev = Vec::new();
        eval.write_jsonl(&mut ev)?;
        let mut dets = Vec::new();
        self.detections.write_jsonl(&mut dets)?;
        let blobs = [
            (files::SPEC, serde_json::to_vec_pretty(spec)?),
            (files::SKELETON, serde_json::to_vec_pretty(&self.skeleton)?),
            (files::MODEL, serde_json::to_vec_pretty(&self.model)?),
            (files::LIBRARY, lib),
            (files::EVAL_POSES, ev),
            (files::DETECTIONS, dets),
        ];
        let mut written = Vec::new();
        for (name, bytes) in blobs {
            std::fs::write(dir.join(name), bytes)?;
            written.push(dir.join(name));
        }
        write_jsonl(&dir.join(files::TRAINING), &self.training)?;
        write_jsonl(&dir.join(files::GROUNDTRUTH), &self.groundtruth)?;
        write_jsonl(&dir.join(files::POSES), &self.poses)?;
        write_jsonl(&dir.join(files::FEATURES), &self.features)?;
        for name in [files::TRAINING, files::GROUNDTRUTH, files::POSES, files::FEATURES] {
            written.push(dir.join(name));
        }
        written.sort();
        Ok(written)
    }
}

fn normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sigma * z
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}

fn layout_code(part: &BBox, full: &BBox) -> [f64; 4] {
    encode_deltas(part, full).to_array()
}

fn feature(identity: &[f64], layout: [f64; 4], rng: &mut ChaCha8Rng, id_noise: f64, layout_noise: f64) -> Vec<f64> {
    let sigma = id_noise / (identity.len() as f64).sqrt();
    let mut f: Vec<f64> = identity.iter().map(|v| v + normal(rng, sigma)).collect();
    f.extend(layout.iter().map(|v| LAYOUT_SCALE * (v + normal(rng, layout_noise))));
    f
}

fn padding(spec: &CorpusSpec, height: f64) -> f64 {
    (spec.part_padding * height).min(spec.max_padding)
}

fn template_box(pose: &Pose2D, joints: &[usize], pad: f64) -> Result<BBox> {
    points_to_box(joints.iter().map(|&j| (pose.joints[j].x, pose.joints[j].y)), pad)
}

/// Joint triples used as detector parts.
pub fn templates(skeleton: &Skeleton) -> Vec<Vec<usize>> {
    skeleton.connected_subsets(crate::partmodel::CONNECTED_KEYPOINTS)
}

fn training_images(spec: &CorpusSpec, skeleton: &Skeleton, rng: &mut ChaCha8Rng) -> Result<Vec<TrainingRecord>> {
    let ts = &spec.training;
    let (w, h) = (ts.extent.width as f64, ts.extent.height as f64);
    let triples = templates(skeleton);
    let mut out = Vec::with_capacity(ts.images);
    for image in 0..ts.images {
        let body = BodyParams::sample(rng);
        let angles = Angles::sample(rng);
        let height = rng.random_range(120.0..260.0);
        let base = body_pose(&body, &angles, (0.0, 0.0), height);
        let b0 = pose_to_box(&base, DEFAULT_MARGIN)?;
        let dx = rng.random_range(0.0..(w - b0.width()).max(1.0)) - b0.x1;
        let dy = rng.random_range(0.0..(h - b0.height()).max(1.0)) - b0.y1;
        let mut pose = base;
        for j in &mut pose.joints {
            j.x += dx;
            j.y += dy;
        }
        let gt = pose_to_box(&pose, DEFAULT_MARGIN)?;
        if rng.random::<f64>() < ts.occlusion_rate {
            let hip_y = (pose.joints[7].y + pose.joints[8].y) / 2.0;
            let top = hip_y + rng.random_range(-0.05..0.25) * height;
            for j in &mut pose.joints {
                if j.y >= top {
                    j.visible = false;
                }
            }
        }
        let visible = visible_box(&pose, DEFAULT_MARGIN)?;
        let visible = crop_to_frame(&visible, ts.extent).unwrap_or(visible);
        let pad = padding(spec, height);
        let mut proposals = Vec::new();
        let mut push = |bbox: BBox, rng: &mut ChaCha8Rng| {
            let id = unit_vector(rng, IDENTITY_DIM);
            let f = feature(&id, layout_code(&bbox, &gt), rng, 0.0, ts.layout_noise);
            proposals.push(Proposal { bbox, feature: f });
        };
        for t in &triples {
            let clean = template_box(&pose, t, pad)?;
            for _ in 0..ts.proposals_per_template {
                let s = 0.02 * height;
                let (a, b, c, d) = (normal(rng, s), normal(rng, s), normal(rng, s), normal(rng, s));
                if let Ok(bx) = BBox::new(clean.x1 + a, clean.y1 + b, clean.x2 + c, clean.y2 + d) {
                    push(bx, rng);
                }
            }
        }
        for _ in 0..3 {
            let s = 0.04 * height;
            let (a, b, c, d) = (normal(rng, s), normal(rng, s), normal(rng, s), normal(rng, s));
            if let Ok(bx) = BBox::new(gt.x1 + a, gt.y1 + b, gt.x2 + c, gt.y2 + d) {
                push(bx, rng);
            }
        }
        for _ in 0..3 {
            let bw = rng.random_range(20.0..120.0);
            let bh = rng.random_range(20.0..120.0);
            let x = rng.random_range(0.0..w - bw);
            let y = rng.random_range(0.0..h - bh);
            push(BBox::new(x, y, x + bw, y + bh)?, rng);
        }
        out.push(TrainingRecord {
            image,
            extent: ts.extent,
            gt,
            visible,
            pose,
            proposals,
        });
    }
    Ok(out)
}

fn library_poses(n: usize, rng: &mut ChaCha8Rng) -> Vec<Pose2D> {
    (0..n)
        .map(|_| {
            let body = BodyParams::sample(rng);
            let angles = Angles::sample(rng);
            body_pose(&body, &angles, (0.0, 0.0), 100.0)
        })
        .collect()
}

/// Samples `n` complete poses from the parametric body model.
pub fn sample_poses(n: usize, seed: u64) -> Vec<Pose2D> {
    library_poses(n, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn lerp_keys<T, F: Fn(&T) -> u32>(keys: &[T], frame: u32, key_frame: F) -> (usize, usize, f64) {
    let i = keys.partition_point(|k| key_frame(k) <= frame);
    if i == 0 {
        return (0, 0, 0.0);
    }
    if i == keys.len() {
        return (i - 1, i - 1, 0.0);
    }
    let (a, b) = (key_frame(&keys[i - 1]), key_frame(&keys[i]));
    (i - 1, i, (frame - a) as f64 / (b - a) as f64)
}

fn mix(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Zoom and world center of the camera at `frame`.
pub fn camera_at(scene: &SceneSpec, frame: u32) -> (f64, f64, f64) {
    if scene.camera.is_empty() {
        return (1.0, scene.extent.width as f64 / 2.0, scene.extent.height as f64 / 2.0);
    }
    let (i, j, t) = lerp_keys(&scene.camera, frame, |k| k.frame);
    let (a, b) = (&scene.camera[i], &scene.camera[j]);
    (mix(a.zoom, b.zoom, t), mix(a.cx, b.cx, t), mix(a.cy, b.cy, t))
}

fn person_at(p: &PersonSpec, frame: u32) -> Option<PersonKey> {
    let (first, last) = (p.track.first()?.frame, p.track.last()?.frame);
    if frame < first || frame > last {
        return None;
    }
    let (i, j, t) = lerp_keys(&p.track, frame, |k| k.frame);
    let (a, b) = (&p.track[i], &p.track[j]);
    Some(PersonKey {
        frame,
        x: mix(a.x, b.x, t),
        y: mix(a.y, b.y, t),
        height: mix(a.height, b.height, t),
    })
}

struct PersonState {
    body: BodyParams,
    phase: f64,
    /// (joint indices, class id, identity embedding) per emitted template.
    templates: Vec<(Vec<usize>, usize, Vec<f64>)>,
}

/// Complete image-space pose with visibility from frame bounds and
/// occluders.
fn image_pose(scene: &SceneSpec, p: &PersonSpec, st: &PersonState, frame: u32) -> Option<(Pose2D, f64)> {
    let key = person_at(p, frame)?;
    let angles = if p.articulate {
        Angles::gait(st.phase + std::f64::consts::TAU * frame as f64 / p.gait_period)
    } else {
        Angles::REST
    };
    let (zoom, cx, cy) = camera_at(scene, frame);
    let (w, h) = (scene.extent.width as f64, scene.extent.height as f64);
    let root = ((key.x - cx) * zoom + w / 2.0, (key.y - cy) * zoom + h / 2.0);
    let height = key.height * zoom;
    let mut pose = body_pose(&st.body, &angles, root, height);
    for j in &mut pose.joints {
        let in_frame = j.x >= 0.0 && j.x < w && j.y >= 0.0 && j.y < h;
        let hidden = scene.occluders.iter().any(|o| {
            frame >= o.from
                && frame <= o.to
                && j.x >= o.bbox.x1
                && j.x <= o.bbox.x2
                && j.y >= o.bbox.y1
                && j.y <= o.bbox.y2
        });
        j.visible = in_frame && !hidden;
    }
    Some((pose, height))
}

struct SceneOutput {
    detections: Vec<Detection>,
    groundtruth: Vec<GroundTruthInstance>,
    poses: Vec<PoseRecord>,
    features: Vec<TubeFeature>,
}

fn generate_scene(
    spec: &CorpusSpec,
    scene: &SceneSpec,
    model: &PartClassModel,
    skeleton: &Skeleton,
) -> Result<SceneOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let triples = templates(skeleton);
    let all_joints: Vec<usize> = (0..skeleton.joint_count()).collect();
    let noise = scene.noise;

    let mut states = Vec::with_capacity(scene.persons.len());
    for p in &scene.persons {
        let body = match p.body {
            Some(b) => b,
            None => BodyParams::sample(&mut rng),
        };
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let height = p.track[0].height;
        let rest = body_pose(&body, &Angles::REST, (0.0, 0.0), height);
        let full = pose_to_box(&rest, DEFAULT_MARGIN)?;
        let pad = padding(spec, height);
        let mut tpl = Vec::new();
        for t in &triples {
            let part = template_box(&rest, t, pad)?;
            if let ProposalLabel::Part(c) = assign_class(&part, &full, model, FULLBODY_IOU, PART_IOU) {
                tpl.push((t.clone(), c, unit_vector(&mut rng, IDENTITY_DIM)));
            }
        }
        tpl.push((
            all_joints.clone(),
            model.fullbody_class(),
            unit_vector(&mut rng, IDENTITY_DIM),
        ));
        states.push(PersonState {
            body,
            phase,
            templates: tpl,
        });
    }

    let ext_box = scene.extent.as_box();
    let mut detections = Vec::new();
    let mut poses = Vec::new();
    for frame in 0..scene.frames {
        for (pi, (p, st)) in scene.persons.iter().zip(&states).enumerate() {
            let Some((pose, height)) = image_pose(scene, p, st, frame) else {
                continue;
            };
            let full = pose_to_box(&pose, DEFAULT_MARGIN)?;
            let pad = padding(spec, height);
            for (joints, class, identity) in &st.templates {
                if !joints.iter().all(|&j| pose.joints[j].visible) {
                    continue;
                }
                let Some(clean) = template_box(&pose, joints, pad)?.intersection(&ext_box) else {
                    continue;
                };
                let missed = rng.random::<f64>() < noise.miss_rate;
                let j: [f64; 4] = std::array::from_fn(|_| normal(&mut rng, noise.box_jitter));
                let z = normal(&mut rng, noise.score_noise);
                let feat = feature(
                    identity,
                    layout_code(&clean, &full),
                    &mut rng,
                    noise.feature_noise,
                    noise.layout_noise,
                );
                if missed {
                    continue;
                }
                let Some(bbox) = BBox::new(clean.x1 + j[0], clean.y1 + j[1], clean.x2 + j[2], clean.y2 + j[3])
                    .ok()
                    .and_then(|b| b.intersection(&ext_box))
                else {
                    continue;
                };
                let size = (clean.width() + clean.height()) / 2.0;
                let mean_jitter = j.iter().map(|v| v.abs()).sum::<f64>() / 4.0;
                let uncovered = 1.0 - clean.area() / full.area();
                let score = (1.0 - mean_jitter / size - z.abs() - noise.context_penalty * uncovered).clamp(0.0, 1.0);
                detections.push(Detection {
                    video: scene.name.clone(),
                    frame,
                    class: *class,
                    bbox,
                    score,
                    feature: feat,
                    fullbody: scene.emit_fullbody.then_some(full),
                });
            }
            poses.push(PoseRecord {
                video: scene.name.clone(),
                frame,
                person: pi,
                joints: pose.joints,
            });
        }
        if rng.random::<f64>() < noise.false_positive_rate {
            let (w, h) = (scene.extent.width as f64, scene.extent.height as f64);
            let bw = rng.random_range(0.05..0.3) * w;
            let bh = rng.random_range(0.05..0.4) * h;
            let x = rng.random_range(0.0..w - bw);
            let y = rng.random_range(0.0..h - bh);
            let class = rng.random_range(0..model.class_count());
            let score = rng.random_range(0.05..0.5);
            let id = unit_vector(&mut rng, IDENTITY_DIM);
            let layout = std::array::from_fn(|_| normal(&mut rng, 0.5));
            let feat = feature(&id, layout, &mut rng, 0.0, 0.0);
            detections.push(Detection {
                video: scene.name.clone(),
                frame,
                class,
                bbox: BBox::new(x, y, x + bw, y + bh)?,
                score,
                feature: feat,
                fullbody: None,
            });
        }
    }

    let mut groundtruth = Vec::new();
    let mut features = Vec::new();
    for (pi, (p, st)) in scene.persons.iter().zip(&states).enumerate() {
        let alive: Vec<u32> = (0..scene.frames).filter(|&f| person_at(p, f).is_some()).collect();
        let m = spec.annotated_frames.min(alive.len());
        // midpoints of m equal spans of the person's lifetime
        let picks: BTreeSet<u32> = (0..m).map(|i| alive[(2 * i + 1) * alive.len() / (2 * m)]).collect();
        let frames: Vec<AnnotatedFrame> = picks
            .into_iter()
            .filter_map(|f| {
                let (pose, _) = image_pose(scene, p, st, f)?;
                let full = pose_to_box(&pose, DEFAULT_MARGIN).ok()?;
                crop_to_frame(&full, scene.extent).map(|bbox| AnnotatedFrame { frame: f, bbox })
            })
            .collect();
        if !frames.is_empty() {
            groundtruth.push(GroundTruthInstance {
                video: scene.name.clone(),
                class: p.action.clone(),
                frames,
                extent: Some(scene.extent),
                split: scene.split,
            });
        }
        let class_idx = spec.classes.iter().position(|c| *c == p.action).expect("validated");
        let channels = spec
            .features
            .channels
            .iter()
            .map(|name| {
                let v: Vec<f64> = (0..spec.classes.len())
                    .map(|c| {
                        let signal = if c == class_idx { spec.features.signal } else { 0.0 };
                        signal + normal(&mut rng, spec.features.noise)
                    })
                    .collect();
                (name.clone(), v)
            })
            .collect();
        features.push(TubeFeature {
            tube: format!("{}#{pi}", scene.name),
            channels,
        });
    }

    Ok(SceneOutput {
        detections,
        groundtruth,
        poses,
        features,
    })
}

/// Generates the full corpus. Deterministic for a fixed spec.
pub fn generate(spec: &CorpusSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let skeleton = Skeleton::default_13();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let training = training_images(spec, &skeleton, &mut rng)?;
    let library = PoseLibrary::new(skeleton.clone(), library_poses(spec.library_poses, &mut rng))?;
    let eval_poses = library_poses(spec.eval_poses, &mut rng);
    let model = cluster_training(&training, &skeleton, spec.k, spec.seed)?;

    let scenes: Vec<SceneOutput> = spec
        .scenes
        .par_iter()
        .map(|s| generate_scene(spec, s, &model, &skeleton))
        .collect::<Result<_>>()?;
    let mut detections = DetectionStore::new();
    let mut groundtruth = Vec::new();
    let mut poses = Vec::new();
    let mut features = Vec::new();
    for s in scenes {
        for d in s.detections {
            detections.push(d)?;
        }
        groundtruth.extend(s.groundtruth);
        poses.extend(s.poses);
        features.extend(s.features);
    }
    Ok(SynthOutput {
        skeleton,
        model,
        training,
        library,
        eval_poses,
        detections,
        groundtruth,
        poses,
        features,
    })
}

/// Ready-made corpora.
pub mod presets {
    use super::*;

    pub const CLASSES: [&str; 3] = ["drinking", "phoning", "waving"];
    pub const EXTENT: FrameExtent = FrameExtent {
        width: 640,
        height: 360,
    };
    pub const FRAMES: u32 = 61;

    fn base(seed: u64, scenes: Vec<SceneSpec>) -> CorpusSpec {
        CorpusSpec {
            seed,
            classes: CLASSES.iter().map(|c| c.to_string()).collect(),
            k: default_k(),
            training: TrainingSpec::default(),
            library_poses: default_library(),
            eval_poses: default_eval_poses(),
            features: FeatureSpec::default(),
            part_padding: default_padding(),
            max_padding: default_max_padding(),
            annotated_frames: default_annotated(),
            scenes,
        }
    }

    fn scene_seed(seed: u64, i: usize) -> u64 {
        seed.wrapping_mul(1_000_003).wrapping_add(i as u64)
    }

    /// One walking person per video; the first half of the videos is the
    /// training split.
    fn walkers<F>(n: usize, seed: u64, frames: u32, mut decorate: F) -> Vec<SceneSpec>
    where
        F: FnMut(&mut SceneSpec, &mut ChaCha8Rng),
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        (0..n)
            .map(|i| {
                let height = rng.random_range(150.0..220.0);
                let x0 = rng.random_range(150.0..490.0);
                let vx = rng.random_range(-1.5..1.5);
                let y = EXTENT.height as f64 / 2.0 + rng.random_range(-10.0..10.0);
                let mut s = SceneSpec {
                    name: format!("v{i:03}"),
                    seed: scene_seed(seed, i),
                    frames,
                    extent: EXTENT,
                    split: if i < n / 2 { Split::Train } else { Split::Test },
                    persons: vec![PersonSpec {
                        identity: i as u32,
                        action: CLASSES[i % CLASSES.len()].to_string(),
                        track: vec![
                            PersonKey {
                                frame: 0,
                                x: x0,
                                y,
                                height,
                            },
                            PersonKey {
                                frame: frames - 1,
                                x: x0 + vx * (frames - 1) as f64,
                                y,
                                height,
                            },
                        ],
                        articulate: true,
                        gait_period: default_gait_period(),
                        body: None,
                    }],
                    occluders: vec![],
                    camera: vec![],
                    noise: NoiseSpec::default(),
                    emit_fullbody: false,
                };
                decorate(&mut s, &mut rng);
                s
            })
            .collect()
    }

    /// Fully visible walkers.
    pub fn visible(n: usize, seed: u64) -> CorpusSpec {
        base(seed, walkers(n, seed, FRAMES, |_, _| {}))
    }

    /// Walkers whose legs are hidden behind a foreground bar for most of
    /// the video.
    pub fn occlusion(n: usize, seed: u64) -> CorpusSpec {
        base(
            seed,
            walkers(n, seed, FRAMES, |s, rng| {
                let p = &s.persons[0].track[0];
                let top = p.y + rng.random_range(0.0..0.15) * p.height;
                let len = rng.random_range(0.6..0.9) * FRAMES as f64;
                let from = rng.random_range(0.0..(FRAMES as f64 - len));
                s.occluders.push(Occluder {
                    bbox: BBox::new(0.0, top, EXTENT.width as f64, EXTENT.height as f64)
                        .expect("top is inside the frame"),
                    from: from as u32,
                    to: (from + len) as u32,
                });
            }),
        )
    }

    /// The camera starts on a close-up of the legs, pulls out to the full
    /// person and ends on a close-up of the upper body. Videos are twice as
    /// long as the other presets so that each zoom takes 30 frames.
    pub fn viewpoint(n: usize, seed: u64) -> CorpusSpec {
        const LONG: u32 = 2 * FRAMES - 1;
        base(
            seed,
            walkers(n, seed, LONG, |s, rng| {
                let p = s.persons[0].track.clone();
                let zoom = rng.random_range(2.0..2.4);
                let (x0, x1, y, h) = (p[0].x, p[1].x, p[0].y, p[0].height);
                let at = |f: u32| mix(x0, x1, f as f64 / (LONG - 1) as f64);
                let (cx, cy) = (EXTENT.width as f64 / 2.0, EXTENT.height as f64 / 2.0);
                let legs = y + 0.28 * h;
                let upper = y - 0.42 * h;
                s.camera = vec![
                    CameraKey {
                        frame: 0,
                        zoom,
                        cx: at(0),
                        cy: legs,
                    },
                    CameraKey {
                        frame: 20,
                        zoom,
                        cx: at(20),
                        cy: legs,
                    },
                    CameraKey {
                        frame: 50,
                        zoom: 1.0,
                        cx,
                        cy,
                    },
                    CameraKey {
                        frame: 70,
                        zoom: 1.0,
                        cx,
                        cy,
                    },
                    CameraKey {
                        frame: 100,
                        zoom,
                        cx: at(100),
                        cy: upper,
                    },
                    CameraKey {
                        frame: LONG - 1,
                        zoom,
                        cx: at(LONG - 1),
                        cy: upper,
                    },
                ];
            }),
        )
    }

    /// A single rigid person in linear motion with noiseless detections
    /// that carry their groundtruth full-body boxes.
    pub fn clean(frames: u32, seed: u64) -> CorpusSpec {
        let h = 180.0;
        let scene = SceneSpec {
            name: "clean".into(),
            seed: scene_seed(seed, 0),
            frames,
            extent: EXTENT,
            split: Split::Test,
            persons: vec![PersonSpec {
                identity: 0,
                action: CLASSES[0].into(),
                track: vec![
                    PersonKey {
                        frame: 0,
                        x: 200.0,
                        y: 180.0,
                        height: h,
                    },
                    PersonKey {
                        frame: frames - 1,
                        x: 200.0 + 0.8 * (frames - 1) as f64,
                        y: 180.0 + 0.2 * (frames - 1) as f64,
                        height: h,
                    },
                ],
                articulate: false,
                gait_period: default_gait_period(),
                body: Some(BodyParams::default()),
            }],
            occluders: vec![],
            camera: vec![],
            noise: NoiseSpec::NONE,
            emit_fullbody: true,
        };
        base(seed, vec![scene])
    }

    pub fn by_name(name: &str, n: usize, seed: u64) -> Result<CorpusSpec> {
        match name {
            "visible" => Ok(visible(n, seed)),
            "occlusion" => Ok(occlusion(n, seed)),
            "viewpoint" => Ok(viewpoint(n, seed)),
            "clean" => Ok(clean(1 + 5 * 12, seed)),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected visible, occlusion, viewpoint or clean)"
            ))),
        }
    }
}
