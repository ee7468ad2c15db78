//! Tube classification: one linear SVM per feature channel and class,
//! sigmoid-scaled margins summed across channels.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{read_jsonl, write_jsonl, GroundTruthInstance};
use crate::geometry::{temporal_iou, Tube};

pub const DEFAULT_POSITIVE_TIOU: f64 = 0.5;
pub const DEFAULT_C: f64 = 1.0;
pub const EPOCHS: usize = 200;
pub const BASE_STEP: f64 = 0.1;

/// Named feature vectors for one tube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeFeature {
    pub tube: String,
    pub channels: BTreeMap<String, Vec<f64>>,
}

pub fn load_features(path: &Path) -> Result<Vec<TubeFeature>> {
    let feats: Vec<TubeFeature> = read_jsonl(path, |_| Ok(()))?;
    check_channel_dims(&feats)?;
    Ok(feats)
}

pub fn save_features(path: &Path, feats: &[TubeFeature]) -> Result<()> {
    write_jsonl(path, feats)
}

fn check_channel_dims(feats: &[TubeFeature]) -> Result<()> {
    let mut dims: BTreeMap<&str, usize> = BTreeMap::new();
    for f in feats {
        for (name, v) in &f.channels {
            let d = *dims.entry(name).or_insert(v.len());
            if d != v.len() {
                return Err(Error::Schema(format!(
                    "channel `{name}` of tube `{}` has dimension {}, expected {d}",
                    f.tube,
                    v.len()
                )));
            }
        }
    }
    Ok(())
}

/// Class of the groundtruth instance with the highest temporal IoU when that
/// IoU is strictly above `tau`; `None` marks background.
pub fn label_training_tubes(tubes: &[Tube], gts: &[GroundTruthInstance], tau: f64) -> Vec<Option<String>> {
    tubes
        .iter()
        .map(|t| {
            let mut best: Option<(&GroundTruthInstance, f64)> = None;
            for g in gts.iter().filter(|g| g.video == t.video) {
                let v = temporal_iou(t, g);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            best.filter(|(_, v)| *v > tau).map(|(g, _)| g.class.clone())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearSvm {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub c: f64,
    /// Channel name to class name to classifier.
    pub channels: BTreeMap<String, BTreeMap<String, LinearSvm>>,
}

/// Full-batch subgradient descent on `|w|^2 / (2c) + mean hinge`. Identical
/// examples are merged with multiplicities after a canonical sort, so the
/// result does not depend on example order or on uniform duplication.
fn train_svm(examples: &[(&[f64], f64)], c: f64) -> LinearSvm {
    let mut sorted: Vec<(&[f64], f64)> = examples.to_vec();
    sorted.sort_by(|a, b| {
        a.0.iter()
            .zip(b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(a.0.len().cmp(&b.0.len()))
            .then(a.1.total_cmp(&b.1))
    });
    let mut unique: Vec<((&[f64], f64), f64)> = Vec::new();
    for e in sorted {
        match unique.last_mut() {
            Some((u, count)) if u.0 == e.0 && u.1 == e.1 => *count += 1.0,
            _ => unique.push((e, 1.0)),
        }
    }
    let n = examples.len() as f64;
    let dim = examples.first().map_or(0, |e| e.0.len());
    let mut svm = LinearSvm {
        weights: vec![0.0; dim],
        bias: 0.0,
    };
    for epoch in 1..=EPOCHS {
        let step = BASE_STEP / (epoch as f64).sqrt();
        let mut gw: Vec<f64> = vec![0.0; dim];
        let mut gb = 0.0;
        for ((x, y), count) in &unique {
            if y * svm.margin(x) < 1.0 {
                for (g, v) in gw.iter_mut().zip(x.iter()) {
                    *g -= count * y * v;
                }
                gb -= count * y;
            }
        }
        for (w, g) in svm.weights.iter_mut().zip(&gw) {
            *w -= step * (*w / c + g / n);
        }
        svm.bias -= step * gb / n;
    }
    svm
}

/// One-vs-rest classifiers per channel and class. Background tubes
/// (`None`) are negatives for every class.
pub fn train_fusion(
    features: &[TubeFeature],
    labels: &[Option<String>],
    classes: &[String],
    c: f64,
) -> Result<FusionModel> {
    if features.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} feature records but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!("c must be positive, got {c}")));
    }
    check_channel_dims(features)?;
    let names: Vec<&String> = match features.first() {
        Some(f) => f.channels.keys().collect(),
        None => return Err(Error::invalid("no training tubes")),
    };
    if let Some(f) = features.iter().find(|f| !f.channels.keys().eq(names.iter().copied())) {
        return Err(Error::Schema(format!("tube `{}` has a different channel set", f.tube)));
    }
    for class in classes {
        let pos = labels.iter().filter(|l| l.as_ref() == Some(class)).count();
        if pos == 0 {
            return Err(Error::MissingClass(class.clone()));
        }
        if pos == labels.len() {
            return Err(Error::invalid(format!("class `{class}` has no negative tubes")));
        }
    }
    let mut channels = BTreeMap::new();
    for name in names {
        let mut per_class = BTreeMap::new();
        for class in classes {
            let ex: Vec<(&[f64], f64)> = features
                .iter()
                .zip(labels)
                .map(|(f, l)| {
                    let y = if l.as_ref() == Some(class) { 1.0 } else { -1.0 };
                    (f.channels[name].as_slice(), y)
                })
                .collect();
            per_class.insert(class.clone(), train_svm(&ex, c));
        }
        channels.insert(name.clone(), per_class);
    }
    Ok(FusionModel { c, channels })
}

pub fn sigmoid(m: f64) -> f64 {
    1.0 / (1.0 + (-m).exp())
}

/// Raw margins per channel and class.
pub fn margins(model: &FusionModel, feature: &TubeFeature) -> Result<BTreeMap<String, BTreeMap<String, f64>>> {
    model
        .channels
        .iter()
        .map(|(name, per_class)| {
            let x = feature
                .channels
                .get(name)
                .ok_or_else(|| Error::invalid(format!("tube `{}` lacks channel `{name}`", feature.tube)))?;
            let m = per_class
                .iter()
                .map(|(class, svm)| {
                    if x.len() != svm.weights.len() {
                        return Err(Error::Schema(format!(
                            "channel `{name}` has dimension {}, model expects {}",
                            x.len(),
                            svm.weights.len()
                        )));
                    }
                    Ok((class.clone(), svm.margin(x)))
                })
                .collect::<Result<_>>()?;
            Ok((name.clone(), m))
        })
        .collect()
}

/// Per class, the sum over channels of the sigmoid of the channel margin.
pub fn score_tube(model: &FusionModel, feature: &TubeFeature) -> Result<BTreeMap<String, f64>> {
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for per_class in margins(model, feature)?.values() {
        for (class, m) in per_class {
            *out.entry(class.clone()).or_insert(0.0) += sigmoid(*m);
        }
    }
    Ok(out)
}
