//! Action-localization scoring: temporal-IoU matching, per-class AP and mAP,
//! precision/recall curves, and the ablation sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{temporal_iou, BBox, FrameExtent, Tube};
use crate::pipeline::{Corpus, RegressionTarget};
use crate::tracker::TrackerConfig;

/// Default evaluation thresholds.
pub const DEFAULT_TAUS: [f64; 2] = [0.5, 0.7];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[default]
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedFrame {
    pub frame: u32,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// One annotated action instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthInstance {
    pub video: String,
    pub class: String,
    pub frames: Vec<AnnotatedFrame>,
    /// Frame size; tube boxes are cropped to it before IoU.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extent: Option<FrameExtent>,
    #[serde(default)]
    pub split: Split,
}

impl GroundTruthInstance {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Schema(format!(
                "groundtruth for `{}` has no annotated frames",
                self.video
            )));
        }
        if self.frames.windows(2).any(|w| w[1].frame <= w[0].frame) {
            return Err(Error::Schema(format!(
                "groundtruth frames for `{}` are not increasing",
                self.video
            )));
        }
        Ok(())
    }
}

pub fn load_groundtruth(path: &Path) -> Result<Vec<GroundTruthInstance>> {
    read_jsonl(path, |g: &GroundTruthInstance| g.validate())
}

/// Reads one JSON record per non-blank line, reporting the line on failure.
pub(crate) fn read_jsonl<T, F>(path: &Path, check: F) -> Result<Vec<T>>
where
    T: serde::de::DeserializeOwned,
    F: Fn(&T) -> Result<()>,
{
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: T = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        check(&rec).map_err(|e| parse_err(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// A tube hypothesis for one action class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTube {
    pub tube: Tube,
    pub class: String,
    pub confidence: f64,
}

/// Outcome of ranking one class's tubes against its groundtruth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ranking {
    /// True-positive flag per tube in confidence order.
    pub hits: Vec<bool>,
    pub n_gt: usize,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("tau must lie in (0, 1), got {tau}")))
    }
}

/// Greedy matching in confidence order: each tube takes the unmatched
/// same-video groundtruth with the highest temporal IoU, if that IoU
/// reaches `tau`.
pub fn rank_class(tubes: &[ScoredTube], gts: &[GroundTruthInstance], class: &str, tau: f64) -> Result<Ranking> {
    check_tau(tau)?;
    if let Some(t) = tubes.iter().find(|t| !t.confidence.is_finite()) {
        return Err(Error::invalid(format!(
            "tube in `{}` has non-finite confidence",
            t.tube.video
        )));
    }
    let mut order: Vec<&ScoredTube> = tubes.iter().filter(|t| t.class == class).collect();
    order.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.tube.video.cmp(&b.tube.video))
            .then_with(|| a.tube.first_frame().cmp(&b.tube.first_frame()))
    });
    let class_gts: Vec<&GroundTruthInstance> = gts.iter().filter(|g| g.class == class).collect();
    let mut matched = vec![false; class_gts.len()];
    let mut hits = Vec::with_capacity(order.len());
    for t in order {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in class_gts.iter().enumerate() {
            if matched[j] || g.video != t.tube.video {
                continue;
            }
            let v = temporal_iou(&t.tube, g);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        match best {
            Some((j, v)) if v >= tau => {
                matched[j] = true;
                hits.push(true);
            }
            _ => hits.push(false),
        }
    }
    Ok(Ranking {
        hits,
        n_gt: class_gts.len(),
    })
}

/// (recall, precision) after each ranked tube.
pub fn pr_points(r: &Ranking) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    r.hits
        .iter()
        .enumerate()
        .map(|(i, &hit)| {
            tp += hit as usize;
            (tp as f64 / r.n_gt as f64, tp as f64 / (i + 1) as f64)
        })
        .collect()
}

/// All-point interpolated area under the precision/recall curve.
pub fn average_precision(r: &Ranking) -> Option<f64> {
    if r.n_gt == 0 {
        return None;
    }
    let pts = pr_points(r);
    let mut envelope: Vec<f64> = pts.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, (recall, _)) in pts.iter().enumerate() {
        if *recall > prev_recall {
            ap += (recall - prev_recall) * envelope[i];
            prev_recall = *recall;
        }
    }
    Some(ap)
}

/// AP of `class` at threshold `tau`; `None` when the class has no
/// groundtruth.
pub fn ap_at(tubes: &[ScoredTube], gts: &[GroundTruthInstance], class: &str, tau: f64) -> Result<Option<f64>> {
    Ok(average_precision(&rank_class(tubes, gts, class, tau)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub tau: f64,
    pub map: f64,
    pub per_class: BTreeMap<String, f64>,
    /// Classes seen among tubes that have no groundtruth.
    pub excluded: Vec<String>,
}

/// Unweighted mean of per-class AP over classes with groundtruth.
pub fn map_at(tubes: &[ScoredTube], gts: &[GroundTruthInstance], tau: f64) -> Result<MapReport> {
    let gt_classes: BTreeSet<&str> = gts.iter().map(|g| g.class.as_str()).collect();
    if gt_classes.is_empty() {
        return Err(Error::invalid("no groundtruth instances to evaluate"));
    }
    let excluded: Vec<String> = tubes
        .iter()
        .map(|t| t.class.as_str())
        .collect::<BTreeSet<_>>()
        .difference(&gt_classes)
        .map(|c| c.to_string())
        .collect();
    for c in &excluded {
        log::warn!("class `{c}` has no groundtruth; excluded from mAP");
    }
    let mut per_class = BTreeMap::new();
    for class in &gt_classes {
        let ap = ap_at(tubes, gts, class, tau)?.expect("class has groundtruth");
        per_class.insert(class.to_string(), ap);
    }
    let map = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(MapReport {
        tau,
        map,
        per_class,
        excluded,
    })
}

/// Per-class AP at several thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub reports: Vec<MapReport>,
}

impl Metrics {
    pub fn compute(tubes: &[ScoredTube], gts: &[GroundTruthInstance], taus: &[f64]) -> Result<Self> {
        let reports = taus.iter().map(|&t| map_at(tubes, gts, t)).collect::<Result<_>>()?;
        Ok(Metrics { reports })
    }

    pub fn map(&self, tau: f64) -> Option<f64> {
        self.reports.iter().find(|r| r.tau == tau).map(|r| r.map)
    }

    /// Aligned-column table, one row per class plus the mean.
    pub fn to_text(&self) -> String {
        let classes: BTreeSet<&String> = self.reports.iter().flat_map(|r| r.per_class.keys()).collect();
        let width = classes.iter().map(|c| c.len()).max().unwrap_or(0).max(5);
        let mut s = format!("{:<width$}", "class");
        for r in &self.reports {
            let _ = write!(s, "  {:>8}", format!("AP@{}", r.tau));
        }
        s.push('\n');
        for c in &classes {
            let _ = write!(s, "{c:<width$}");
            for r in &self.reports {
                match r.per_class.get(*c) {
                    Some(ap) => {
                        let _ = write!(s, "  {:>8.2}", 100.0 * ap);
                    }
                    None => {
                        let _ = write!(s, "  {:>8}", "-");
                    }
                }
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<width$}", "mean");
        for r in &self.reports {
            let _ = write!(s, "  {:>8.2}", 100.0 * r.map);
        }
        s.push('\n');
        s
    }
}

/// `recall,precision` rows for plotting.
pub fn pr_csv(tubes: &[ScoredTube], gts: &[GroundTruthInstance], class: &str, tau: f64) -> Result<String> {
    let r = rank_class(tubes, gts, class, tau)?;
    let mut s = String::from("recall,precision\n");
    for (rec, prec) in pr_points(&r) {
        let _ = writeln!(s, "{rec},{prec}");
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub max_parts: usize,
    pub map_50: f64,
    pub map_70: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.setting.len()).max().unwrap_or(0).max(7);
        let mut s = format!(
            "{:<width$}  {:>9}  {:>8}  {:>8}\n",
            "setting", "max_parts", "mAP@0.5", "mAP@0.7"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:>9}  {:>8.2}  {:>8.2}",
                r.setting,
                r.max_parts,
                100.0 * r.map_50,
                100.0 * r.map_70
            );
        }
        s
    }
}

fn ablation_row(
    corpus: &Corpus,
    cfg: &TrackerConfig,
    target: RegressionTarget,
    setting: String,
) -> Result<AblationRow> {
    let metrics = corpus.run(cfg, target, &DEFAULT_TAUS)?;
    Ok(AblationRow {
        setting,
        max_parts: cfg.max_parts,
        map_50: metrics.map(0.5).expect("tau evaluated"),
        map_70: metrics.map(0.7).expect("tau evaluated"),
    })
}

/// Reruns tube extraction and scoring once per `max_parts` setting.
pub fn ablate_parts(corpus: &Corpus, cfg: &TrackerConfig, parts_list: &[usize]) -> Result<AblationTable> {
    if parts_list.is_empty() {
        return Err(Error::invalid("parts list is empty"));
    }
    let rows = parts_list
        .iter()
        .map(|&p| {
            let cfg = TrackerConfig {
                max_parts: p,
                ..cfg.clone()
            };
            ablation_row(corpus, &cfg, RegressionTarget::Fullbody, format!("parts={p}"))
        })
        .collect::<Result<_>>()?;
    Ok(AblationTable { rows })
}

/// Compares tubes regressed to the full body against tubes regressed to the
/// visible extent only.
pub fn ablate_target(corpus: &Corpus, cfg: &TrackerConfig) -> Result<AblationTable> {
    let rows = [RegressionTarget::Fullbody, RegressionTarget::Visible]
        .into_iter()
        .map(|t| ablation_row(corpus, cfg, t, t.name().to_string()))
        .collect::<Result<_>>()?;
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TubeFrame;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn gt(video: &str, class: &str) -> GroundTruthInstance {
        GroundTruthInstance {
            video: video.into(),
            class: class.into(),
            frames: vec![AnnotatedFrame {
                frame: 0,
                bbox: b(0.0, 0.0, 10.0, 10.0),
            }],
            extent: None,
            split: Split::Test,
        }
    }

    /// Tube in `video` whose single-frame IoU with `gt` is `width / 10`.
    fn tube(video: &str, class: &str, width: f64, confidence: f64) -> ScoredTube {
        ScoredTube {
            tube: Tube::new(
                video,
                vec![TubeFrame {
                    frame: 0,
                    bbox: b(0.0, 0.0, width, 10.0),
                    score: 1.0,
                    parts: vec![],
                }],
            )
            .unwrap(),
            class: class.into(),
            confidence,
        }
    }

    #[test]
    fn ap_examples() {
        let gts = [gt("a", "wave")];
        let single = [tube("a", "wave", 6.0, 0.9)];
        assert_eq!(ap_at(&single, &gts, "wave", 0.5).unwrap(), Some(1.0));
        assert_eq!(ap_at(&single, &gts, "wave", 0.7).unwrap(), Some(0.0));

        let two = [tube("b", "wave", 10.0, 0.9), tube("a", "wave", 6.0, 0.4)];
        assert_eq!(ap_at(&two, &gts, "wave", 0.5).unwrap(), Some(0.5));
        assert_eq!(ap_at(&two, &gts, "drink", 0.5).unwrap(), None);
        assert!(ap_at(&two, &gts, "wave", 1.0).is_err());
    }

    #[test]
    fn each_gt_matched_once() {
        let gts = [gt("a", "wave")];
        let dup = [tube("a", "wave", 10.0, 0.9), tube("a", "wave", 10.0, 0.8)];
        let r = rank_class(&dup, &gts, "wave", 0.5).unwrap();
        assert_eq!(r.hits, vec![true, false]);
        assert_eq!(average_precision(&r), Some(1.0));
    }

    #[test]
    fn map_examples() {
        let gts = [gt("a", "wave"), gt("b", "drink")];
        let tubes = [
            tube("a", "wave", 10.0, 0.9),
            tube("b", "drink", 1.0, 0.9),
            tube("c", "jump", 10.0, 0.5),
        ];
        let r = map_at(&tubes, &gts, 0.5).unwrap();
        assert_eq!(r.map, 0.5);
        assert_eq!(r.per_class["wave"], 1.0);
        assert_eq!(r.per_class["drink"], 0.0);
        assert_eq!(r.excluded, vec!["jump".to_string()]);
        assert!(map_at(&tubes, &[], 0.5).is_err());
    }

    #[test]
    fn text_table_lists_every_class() {
        let gts = [gt("a", "wave"), gt("b", "drink")];
        let tubes = [tube("a", "wave", 10.0, 0.9)];
        let m = Metrics::compute(&tubes, &gts, &DEFAULT_TAUS).unwrap();
        let text = m.to_text();
        assert!(text.contains("wave"));
        assert!(text.contains("drink"));
        assert!(text.lines().last().unwrap().starts_with("mean"));
        let csv = pr_csv(&tubes, &gts, "wave", 0.5).unwrap();
        assert_eq!(csv, "recall,precision\n1,1\n");
    }

    #[test]
    fn groundtruth_record_round_trip() {
        let line =
            r#"{"video":"v","class":"wave","frames":[{"frame":3,"box":[0,0,4,8]}],"extent":[64,48],"split":"train"}"#;
        let g: GroundTruthInstance = serde_json::from_str(line).unwrap();
        assert_eq!(g.split, Split::Train);
        assert_eq!(g.extent.unwrap().width, 64);
        let minimal: GroundTruthInstance =
            serde_json::from_str(r#"{"video":"v","class":"c","frames":[{"frame":0,"box":[0,0,1,1]}]}"#).unwrap();
        assert_eq!(minimal.split, Split::Test);
        assert!(minimal.extent.is_none());
    }
}
