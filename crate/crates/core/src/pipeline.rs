//! End-to-end wiring: part classes and regressors from annotated training
//! images, tube extraction, classification and evaluation over a corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{load_groundtruth, read_jsonl, GroundTruthInstance, Metrics, ScoredTube, Split};
use crate::fusion::{label_training_tubes, load_features, score_tube, train_fusion, TubeFeature};
use crate::geometry::{BBox, FrameExtent, Tube};
use crate::partmodel::{
    assign_class, cluster_parts, descriptor, select_positive_proposals, PartClassModel, PartDescriptor, Pose2D,
    ProposalLabel, Skeleton, CONNECTED_KEYPOINTS, FULLBODY_IOU, PART_IOU,
};
use crate::provider::DetectionStore;
use crate::regress::{train_regressors, FullBodyRegressor, RegressionExample};
use crate::synthgen::{files, SynthOutput};
use crate::tracker::{build_all, tube_records, TrackerConfig, TubeRecord};

/// A candidate box on a training image with its feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub feature: Vec<f64>,
}

/// One annotated training image: the amodal person box, the box of the
/// visible joints, the pose with visibility flags and part proposals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub image: usize,
    pub extent: FrameExtent,
    pub gt: BBox,
    pub visible: BBox,
    pub pose: Pose2D,
    pub proposals: Vec<Proposal>,
}

pub fn load_training(path: &Path) -> Result<Vec<TrainingRecord>> {
    read_jsonl(path, |r: &TrainingRecord| r.pose.validate())
}

fn positives(rec: &TrainingRecord, skeleton: &Skeleton) -> Vec<bool> {
    let boxes: Vec<BBox> = rec.proposals.iter().map(|p| p.bbox).collect();
    select_positive_proposals(&boxes, &rec.gt, &rec.pose, skeleton, CONNECTED_KEYPOINTS)
}

/// Descriptors of positive proposals in the part IoU band.
pub fn part_descriptors(records: &[TrainingRecord], skeleton: &Skeleton) -> Result<Vec<PartDescriptor>> {
    let mut out = Vec::new();
    for rec in records {
        for (p, pos) in rec.proposals.iter().zip(positives(rec, skeleton)) {
            let o = p.bbox.overlap(&rec.gt);
            if pos && (PART_IOU..=FULLBODY_IOU).contains(&o) {
                out.push(descriptor(&p.bbox, &rec.gt)?);
            }
        }
    }
    Ok(out)
}

/// Part classes from the training images.
pub fn cluster_training(
    records: &[TrainingRecord],
    skeleton: &Skeleton,
    k: usize,
    seed: u64,
) -> Result<PartClassModel> {
    let descs = part_descriptors(records, skeleton)?;
    let fit = cluster_parts(&descs, k, seed)?;
    PartClassModel::new(fit.centroids.into_iter().map(PartDescriptor::from).collect())
}

/// A proposal with its class and both regression targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledProposal {
    pub image: usize,
    pub class: usize,
    pub part: BBox,
    pub feature: Vec<f64>,
    pub fullbody: BBox,
    pub visible: BBox,
}

/// Labels proposals: above the full-body IoU band they take the full-body
/// class; positives inside the part band take their nearest part class;
/// everything else is background and dropped.
pub fn label_proposals(
    records: &[TrainingRecord],
    model: &PartClassModel,
    skeleton: &Skeleton,
) -> Vec<LabeledProposal> {
    let mut out = Vec::new();
    for rec in records {
        for (p, pos) in rec.proposals.iter().zip(positives(rec, skeleton)) {
            let class = match assign_class(&p.bbox, &rec.gt, model, FULLBODY_IOU, PART_IOU) {
                ProposalLabel::Fullbody => model.fullbody_class(),
                ProposalLabel::Part(c) if pos => c,
                _ => continue,
            };
            out.push(LabeledProposal {
                image: rec.image,
                class,
                part: p.bbox,
                feature: p.feature.clone(),
                fullbody: rec.gt,
                visible: rec.visible,
            });
        }
    }
    out
}

/// Which box the regressors learn to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionTarget {
    #[default]
    Fullbody,
    Visible,
}

impl RegressionTarget {
    pub fn name(&self) -> &'static str {
        match self {
            RegressionTarget::Fullbody => "fullbody",
            RegressionTarget::Visible => "visible",
        }
    }
}

impl std::str::FromStr for RegressionTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fullbody" => Ok(RegressionTarget::Fullbody),
            "visible" => Ok(RegressionTarget::Visible),
            other => Err(Error::Config(format!("unknown regression target `{other}`"))),
        }
    }
}

pub fn regression_examples(labeled: &[LabeledProposal], target: RegressionTarget) -> Vec<RegressionExample> {
    labeled
        .iter()
        .map(|l| RegressionExample {
            class: l.class,
            part: l.part,
            feature: l.feature.clone(),
            full: match target {
                RegressionTarget::Fullbody => l.fullbody,
                RegressionTarget::Visible => l.visible,
            },
        })
        .collect()
}

/// Groundtruth classes, sorted.
pub fn classes_of(gts: &[GroundTruthInstance]) -> Vec<String> {
    gts.iter()
        .map(|g| g.class.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Trains fusion on tubes from training-split videos and scores every
/// test-split tube for every class that has positive training tubes.
pub fn classify(
    tubes: &[TubeRecord],
    features: &[TubeFeature],
    gts: &[GroundTruthInstance],
    positive_tiou: f64,
    c: f64,
) -> Result<Vec<ScoredTube>> {
    let classes = classes_of(gts);
    let split_of: BTreeMap<&str, Split> = gts.iter().map(|g| (g.video.as_str(), g.split)).collect();
    let by_id: BTreeMap<&str, &TubeFeature> = features.iter().map(|f| (f.tube.as_str(), f)).collect();
    let with_feature = |split: Split| -> Vec<(&TubeRecord, &TubeFeature)> {
        tubes
            .iter()
            .filter(|t| split_of.get(t.tube.video.as_str()) == Some(&split))
            .filter_map(|t| match by_id.get(t.id.as_str()) {
                Some(f) => Some((t, *f)),
                None => {
                    log::warn!("tube `{}` has no features; skipped", t.id);
                    None
                }
            })
            .collect()
    };
    let train = with_feature(Split::Train);
    let train_gts: Vec<GroundTruthInstance> = gts.iter().filter(|g| g.split == Split::Train).cloned().collect();
    let train_tubes: Vec<Tube> = train.iter().map(|(t, _)| t.tube.clone()).collect();
    let labels = label_training_tubes(&train_tubes, &train_gts, positive_tiou);
    let feats: Vec<TubeFeature> = train.iter().map(|(_, f)| (*f).clone()).collect();
    // a class without positive training tubes gets no classifier and
    // therefore no detections
    let (trainable, missing): (Vec<String>, Vec<String>) = classes
        .into_iter()
        .partition(|c| labels.iter().any(|l| l.as_ref() == Some(c)));
    for class in &missing {
        log::warn!("no training tube matches class `{class}`; it gets no detections");
    }
    if trainable.is_empty() {
        return Ok(Vec::new());
    }
    let model = train_fusion(&feats, &labels, &trainable, c)?;

    let mut out = Vec::new();
    for (t, f) in with_feature(Split::Test) {
        for (class, confidence) in score_tube(&model, f)? {
            out.push(ScoredTube {
                tube: t.tube.clone(),
                class,
                confidence,
            });
        }
    }
    Ok(out)
}

/// Test-split groundtruth.
pub fn test_split(gts: &[GroundTruthInstance]) -> Vec<GroundTruthInstance> {
    gts.iter().filter(|g| g.split == Split::Test).cloned().collect()
}

/// Everything needed to run tube extraction and scoring repeatedly.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub skeleton: Skeleton,
    pub model: PartClassModel,
    pub training: Vec<TrainingRecord>,
    pub detections: DetectionStore,
    pub groundtruth: Vec<GroundTruthInstance>,
    pub features: Vec<TubeFeature>,
    pub lambda: f64,
    pub c: f64,
    pub positive_tiou: f64,
}

impl Corpus {
    pub fn from_output(out: &SynthOutput) -> Self {
        Corpus {
            skeleton: out.skeleton.clone(),
            model: out.model.clone(),
            training: out.training.clone(),
            detections: out.detections.clone(),
            groundtruth: out.groundtruth.clone(),
            features: out.features.clone(),
            lambda: crate::regress::DEFAULT_RIDGE,
            c: crate::fusion::DEFAULT_C,
            positive_tiou: crate::fusion::DEFAULT_POSITIVE_TIOU,
        }
    }

    /// Reads a directory written by the generator.
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Corpus {
            skeleton: Skeleton::load(&dir.join(files::SKELETON))?,
            model: PartClassModel::load(&dir.join(files::MODEL))?,
            training: load_training(&dir.join(files::TRAINING))?,
            detections: DetectionStore::load(&dir.join(files::DETECTIONS))?,
            groundtruth: load_groundtruth(&dir.join(files::GROUNDTRUTH))?,
            features: load_features(&dir.join(files::FEATURES))?,
            lambda: crate::regress::DEFAULT_RIDGE,
            c: crate::fusion::DEFAULT_C,
            positive_tiou: crate::fusion::DEFAULT_POSITIVE_TIOU,
        })
    }

    pub fn regressor(&self, target: RegressionTarget) -> Result<FullBodyRegressor> {
        let labeled = label_proposals(&self.training, &self.model, &self.skeleton);
        train_regressors(
            &regression_examples(&labeled, target),
            self.model.class_count(),
            self.lambda,
        )
    }

    pub fn tubes(&self, cfg: &TrackerConfig, target: RegressionTarget) -> Result<Vec<TubeRecord>> {
        let reg = self.regressor(target)?;
        let cfg = TrackerConfig {
            use_stored_fullbody: cfg.use_stored_fullbody && target == RegressionTarget::Fullbody,
            ..cfg.clone()
        };
        Ok(tube_records(&build_all(&self.detections, Some(&reg), &cfg)?))
    }

    pub fn score(&self, tubes: &[TubeRecord], taus: &[f64]) -> Result<Metrics> {
        let scored = classify(tubes, &self.features, &self.groundtruth, self.positive_tiou, self.c)?;
        Metrics::compute(&scored, &test_split(&self.groundtruth), taus)
    }

    pub fn run(&self, cfg: &TrackerConfig, target: RegressionTarget, taus: &[f64]) -> Result<Metrics> {
        self.score(&self.tubes(cfg, target)?, taus)
    }
}
