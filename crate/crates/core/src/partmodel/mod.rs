//! Part classes: skeleton and pose types, part descriptors, k-means part
//! class definition, keypoint-based positive proposal selection and IoU-band
//! class assignment.

pub mod kmeans;

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::regress::FullBodyRegressor;

/// Number of part classes used unless configured otherwise.
pub const DEFAULT_PART_CLASSES: usize = 20;
/// Proposals above this IoU with the groundtruth box are full-body proposals.
pub const FULLBODY_IOU: f64 = 0.55;
/// Proposals below this IoU with the groundtruth box are negatives.
pub const PART_IOU: f64 = 0.1;
/// Connected visible keypoints a positive part proposal must contain.
pub const CONNECTED_KEYPOINTS: usize = 3;

/// Joint names plus the undirected edge list of the human skeleton.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SkeletonFile", into = "SkeletonFile")]
pub struct Skeleton {
    joint_names: Vec<String>,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct SkeletonFile {
    joints: Vec<String>,
    edges: Vec<[usize; 2]>,
}

impl TryFrom<SkeletonFile> for Skeleton {
    type Error = Error;

    fn try_from(f: SkeletonFile) -> Result<Self> {
        Skeleton::new(f.joints, f.edges.into_iter().map(|[a, b]| (a, b)).collect())
    }
}

impl From<Skeleton> for SkeletonFile {
    fn from(s: Skeleton) -> Self {
        SkeletonFile {
            joints: s.joint_names,
            edges: s.edges.into_iter().map(|(a, b)| [a, b]).collect(),
        }
    }
}

impl Skeleton {
    pub fn new(joint_names: Vec<String>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let n = joint_names.len();
        if n == 0 {
            return Err(Error::Schema("skeleton has no joints".into()));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &edges {
            if a >= n || b >= n {
                return Err(Error::Schema(format!(
                    "edge ({a}, {b}) references a joint outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::Schema(format!("self-loop on joint {a}")));
            }
            if !adjacency[a].contains(&b) {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        let skeleton = Skeleton {
            joint_names,
            edges,
            adjacency,
        };
        let all: Vec<usize> = (0..n).collect();
        if !skeleton.is_connected_subset(&all) {
            return Err(Error::Schema("skeleton edge graph is not connected".into()));
        }
        Ok(skeleton)
    }

    /// The 13-joint skeleton used throughout: head, shoulders, elbows,
    /// wrists, hips, knees, ankles.
    pub fn default_13() -> Self {
        let names = [
            "head",
            "l_shoulder",
            "r_shoulder",
            "l_elbow",
            "r_elbow",
            "l_wrist",
            "r_wrist",
            "l_hip",
            "r_hip",
            "l_knee",
            "r_knee",
            "l_ankle",
            "r_ankle",
        ];
        let edges = vec![
            (0, 1),
            (0, 2),
            (1, 2),
            (1, 3),
            (3, 5),
            (2, 4),
            (4, 6),
            (1, 7),
            (2, 8),
            (7, 8),
            (7, 9),
            (9, 11),
            (8, 10),
            (10, 12),
        ];
        Skeleton::new(names.iter().map(|s| s.to_string()).collect(), edges).expect("built-in skeleton is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, joint: usize) -> &[usize] {
        &self.adjacency[joint]
    }

    /// True when `subset` (joint indices) induces a connected subgraph.
    /// The empty set is not connected.
    pub fn is_connected_subset(&self, subset: &[usize]) -> bool {
        let Some(&start) = subset.first() else {
            return false;
        };
        let mut member = vec![false; self.joint_count()];
        for &j in subset {
            member[j] = true;
        }
        let mut seen = vec![false; self.joint_count()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut reached = 1;
        while let Some(j) = queue.pop_front() {
            for &nb in &self.adjacency[j] {
                if member[nb] && !seen[nb] {
                    seen[nb] = true;
                    reached += 1;
                    queue.push_back(nb);
                }
            }
        }
        let distinct = member.iter().filter(|m| **m).count();
        reached == distinct
    }

    /// Every connected induced subgraph with exactly `size` joints, as sorted
    /// index lists in lexicographic order.
    pub fn connected_subsets(&self, size: usize) -> Vec<Vec<usize>> {
        let n = self.joint_count();
        let mut out = Vec::new();
        if size == 0 || size > n {
            return out;
        }
        let mut current = Vec::with_capacity(size);
        fn rec(s: &Skeleton, start: usize, size: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if current.len() == size {
                if s.is_connected_subset(current) {
                    out.push(current.clone());
                }
                return;
            }
            for j in start..s.joint_count() {
                current.push(j);
                rec(s, j + 1, size, current, out);
                current.pop();
            }
        }
        rec(self, 0, size, &mut current, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "JointRepr", into = "JointRepr")]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

/// Joints serialize as `[x, y]` (visible) or `[x, y, v]` with `v` in {0, 1}.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum JointRepr {
    Full([f64; 3]),
    Point([f64; 2]),
}

impl From<JointRepr> for Joint {
    fn from(r: JointRepr) -> Self {
        match r {
            JointRepr::Full([x, y, v]) => Joint { x, y, visible: v > 0.5 },
            JointRepr::Point([x, y]) => Joint { x, y, visible: true },
        }
    }
}

impl From<Joint> for JointRepr {
    fn from(j: Joint) -> Self {
        JointRepr::Full([j.x, j.y, if j.visible { 1.0 } else { 0.0 }])
    }
}

impl Joint {
    pub fn visible(x: f64, y: f64) -> Self {
        Joint { x, y, visible: true }
    }
}

/// 2D keypoints with per-joint visibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub joints: Vec<Joint>,
}

impl Pose2D {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        let pose = Pose2D { joints };
        pose.validate()?;
        Ok(pose)
    }

    /// All joints visible.
    pub fn from_points(points: &[(f64, f64)]) -> Result<Self> {
        Self::new(points.iter().map(|&(x, y)| Joint::visible(x, y)).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.iter().any(|j| !j.x.is_finite() || !j.y.is_finite()) {
            return Err(Error::invalid("pose has non-finite coordinates"));
        }
        if !self.joints.iter().any(|j| j.visible) {
            return Err(Error::invalid("pose has no visible joints"));
        }
        Ok(())
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        self.joints
            .iter()
            .enumerate()
            .filter(|(_, j)| j.visible)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn visible_count(&self) -> usize {
        self.joints.iter().filter(|j| j.visible).count()
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }
}

/// Part location and size relative to the person box: `u`, `v` are the
/// center offsets shifted into [0, 1], `w`, `h` the relative size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct PartDescriptor {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub h: f64,
}

impl PartDescriptor {
    pub fn to_array(self) -> [f64; 4] {
        [self.u, self.v, self.w, self.h]
    }

    /// Places a part with this descriptor inside `gt` (inverse of
    /// [`descriptor`]).
    pub fn place_in(&self, gt: &BBox) -> Result<BBox> {
        let (gcx, gcy) = gt.center();
        let cx = gcx + (self.u - 0.5) * gt.width();
        let cy = gcy + (self.v - 0.5) * gt.height();
        BBox::from_center(cx, cy, self.w * gt.width(), self.h * gt.height())
    }
}

impl From<[f64; 4]> for PartDescriptor {
    fn from(a: [f64; 4]) -> Self {
        PartDescriptor {
            u: a[0],
            v: a[1],
            w: a[2],
            h: a[3],
        }
    }
}

impl From<PartDescriptor> for [f64; 4] {
    fn from(d: PartDescriptor) -> Self {
        d.to_array()
    }
}

fn raw_descriptor(part: &BBox, gt: &BBox) -> PartDescriptor {
    let (pcx, pcy) = part.center();
    let (gcx, gcy) = gt.center();
    PartDescriptor {
        u: (pcx - gcx) / gt.width() + 0.5,
        v: (pcy - gcy) / gt.height() + 0.5,
        w: part.width() / gt.width(),
        h: part.height() / gt.height(),
    }
}

/// Descriptor of a part contained in the groundtruth box.
pub fn descriptor(part: &BBox, gt: &BBox) -> Result<PartDescriptor> {
    part.validate()?;
    gt.validate()?;
    let eps = 1e-9 * gt.diagonal();
    if !part.contained_in(gt, eps) {
        return Err(Error::invalid(format!(
            "part {:?} is not contained in {:?}",
            part.to_array(),
            gt.to_array()
        )));
    }
    let d = raw_descriptor(part, gt);
    Ok(PartDescriptor {
        u: d.u.clamp(0.0, 1.0),
        v: d.v.clamp(0.0, 1.0),
        w: d.w.clamp(0.0, 1.0),
        h: d.h.clamp(0.0, 1.0),
    })
}

/// Label of a proposal after class assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalLabel {
    Fullbody,
    Part(usize),
    Negative,
}

impl ProposalLabel {
    /// Class id with the full-body class numbered `k`.
    pub fn class_id(&self, k: usize) -> Option<usize> {
        match self {
            ProposalLabel::Fullbody => Some(k),
            ProposalLabel::Part(c) => Some(*c),
            ProposalLabel::Negative => None,
        }
    }
}

/// K part-class centroids (classes `0..k`, full body is class `k`) plus the
/// optional per-class full-body regressors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile")]
pub struct PartClassModel {
    pub k: usize,
    pub centroids: Vec<PartDescriptor>,
    #[serde(default)]
    pub regressors: Option<FullBodyRegressor>,
}

#[derive(Deserialize)]
struct ModelFile {
    k: usize,
    centroids: Vec<PartDescriptor>,
    #[serde(default)]
    regressors: Option<FullBodyRegressor>,
}

impl TryFrom<ModelFile> for PartClassModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let m = PartClassModel {
            k: f.k,
            centroids: f.centroids,
            regressors: f.regressors,
        };
        m.validate()?;
        Ok(m)
    }
}

impl PartClassModel {
    pub fn new(centroids: Vec<PartDescriptor>) -> Result<Self> {
        let m = PartClassModel {
            k: centroids.len(),
            centroids,
            regressors: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.centroids.len() != self.k {
            return Err(Error::Schema(format!(
                "model declares k={} but has {} centroids",
                self.k,
                self.centroids.len()
            )));
        }
        for c in &self.centroids {
            if c.to_array().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Schema(format!("centroid {c:?} outside [0, 1]")));
            }
        }
        for i in 0..self.k {
            for j in i + 1..self.k {
                if self.centroids[i] == self.centroids[j] {
                    return Err(Error::Schema(format!("centroids {i} and {j} coincide")));
                }
            }
        }
        if let Some(r) = &self.regressors {
            if r.class_count() != self.k + 1 {
                return Err(Error::Schema(format!(
                    "regressors cover {} classes, model needs {}",
                    r.class_count(),
                    self.k + 1
                )));
            }
        }
        Ok(())
    }

    pub fn fullbody_class(&self) -> usize {
        self.k
    }

    pub fn class_count(&self) -> usize {
        self.k + 1
    }

    /// Nearest centroid by Euclidean distance, ties to the lowest index.
    pub fn nearest_class(&self, d: &PartDescriptor) -> usize {
        let centroids: Vec<[f64; 4]> = self.centroids.iter().map(|c| c.to_array()).collect();
        kmeans::nearest(&d.to_array(), &centroids).0
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Clusters descriptors into `k` part classes.
pub fn cluster_parts(descriptors: &[PartDescriptor], k: usize, seed: u64) -> Result<kmeans::KMeansFit> {
    let points: Vec<[f64; 4]> = descriptors.iter().map(|d| d.to_array()).collect();
    kmeans::kmeans(&points, k, seed)
}

/// Flags proposals that lie inside `gt_box` and strictly contain a connected
/// set of exactly `n_connected` visible joints.
pub fn select_positive_proposals(
    proposals: &[BBox],
    gt_box: &BBox,
    pose: &Pose2D,
    skeleton: &Skeleton,
    n_connected: usize,
) -> Vec<bool> {
    proposals
        .iter()
        .map(|p| {
            if !p.contained_in(gt_box, 0.0) {
                return false;
            }
            let inside: Vec<usize> = pose
                .joints
                .iter()
                .enumerate()
                .take(skeleton.joint_count())
                .filter(|(_, j)| j.visible && p.strictly_contains_point(j.x, j.y))
                .map(|(i, _)| i)
                .collect();
            inside.len() == n_connected && skeleton.is_connected_subset(&inside)
        })
        .collect()
}

/// Assigns a proposal to the full-body class, a part class, or background
/// using its IoU with the groundtruth box: `iou > full_lo` is full body,
/// `part_lo <= iou <= full_lo` goes to the nearest part centroid.
pub fn assign_class(part: &BBox, gt: &BBox, model: &PartClassModel, full_lo: f64, part_lo: f64) -> ProposalLabel {
    let overlap = part.overlap(gt);
    if overlap > full_lo {
        ProposalLabel::Fullbody
    } else if overlap >= part_lo {
        ProposalLabel::Part(model.nearest_class(&raw_descriptor(part, gt)))
    } else {
        ProposalLabel::Negative
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn close(a: PartDescriptor, e: [f64; 4]) -> bool {
        a.to_array().iter().zip(e).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn descriptor_examples() {
        let gt = b(10.0, 20.0, 110.0, 220.0);
        assert!(close(descriptor(&gt, &gt).unwrap(), [0.5, 0.5, 1.0, 1.0]));
        let tl = b(10.0, 20.0, 60.0, 120.0);
        assert!(close(descriptor(&tl, &gt).unwrap(), [0.25, 0.25, 0.5, 0.5]));
        let bottom = b(10.0, 120.0, 110.0, 220.0);
        assert!(close(descriptor(&bottom, &gt).unwrap(), [0.5, 0.75, 1.0, 0.5]));
        assert!(descriptor(&b(0.0, 20.0, 50.0, 50.0), &gt).is_err());
    }

    #[test]
    fn skeleton_validation() {
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        assert!(Skeleton::new(names.clone(), vec![(0, 1), (1, 2)]).is_ok());
        assert!(Skeleton::new(names.clone(), vec![(0, 1)]).is_err());
        assert!(Skeleton::new(names.clone(), vec![(0, 1), (1, 1), (1, 2)]).is_err());
        assert!(Skeleton::new(names, vec![(0, 1), (1, 3)]).is_err());
        let json = r#"{"joints":["a","b"],"edges":[[0,1]]}"#;
        let s: Skeleton = serde_json::from_str(json).unwrap();
        assert_eq!(s.joint_count(), 2);
        assert_eq!(serde_json::to_string(&s).unwrap(), json);
    }

    #[test]
    fn connected_triples_of_default_skeleton() {
        let s = Skeleton::default_13();
        let triples = s.connected_subsets(3);
        assert!(triples.contains(&vec![0, 1, 2]));
        assert!(triples.contains(&vec![7, 9, 11]));
        assert!(!triples.contains(&vec![0, 11, 12]));
        assert!(triples.iter().all(|t| s.is_connected_subset(t)));
    }

    /// Standing person: joints listed in skeleton order.
    fn standing() -> Pose2D {
        Pose2D::from_points(&[
            (50.0, 10.0),
            (40.0, 30.0),
            (60.0, 30.0),
            (35.0, 50.0),
            (65.0, 50.0),
            (33.0, 70.0),
            (67.0, 70.0),
            (44.0, 75.0),
            (56.0, 75.0),
            (44.0, 100.0),
            (56.0, 100.0),
            (44.0, 125.0),
            (56.0, 125.0),
        ])
        .unwrap()
    }

    #[test]
    fn positive_proposal_rule() {
        let s = Skeleton::default_13();
        let pose = standing();
        let gt = b(0.0, 0.0, 100.0, 150.0);
        let proposals = [
            // head + both shoulders: connected triple
            b(37.0, 5.0, 63.0, 35.0),
            // head + one ankle only
            b(43.0, 5.0, 52.0, 130.0),
            // head, shoulders, elbows: five joints
            b(30.0, 5.0, 70.0, 55.0),
            // outside the groundtruth box
            b(37.0, -5.0, 63.0, 35.0),
        ];
        let flags = select_positive_proposals(&proposals, &gt, &pose, &s, 3);
        assert_eq!(flags, vec![true, false, false, false]);
        assert!(select_positive_proposals(&[], &gt, &pose, &s, 3).is_empty());
    }

    #[test]
    fn head_neck_shoulder_chain_counts_as_connected() {
        let names = ["head", "neck", "l_shoulder", "r_shoulder"];
        let s = Skeleton::new(
            names.iter().map(|n| n.to_string()).collect(),
            vec![(0, 1), (1, 2), (1, 3)],
        )
        .unwrap();
        let pose = Pose2D::from_points(&[(10.0, 5.0), (10.0, 15.0), (5.0, 18.0), (30.0, 18.0)]).unwrap();
        let gt = b(0.0, 0.0, 40.0, 40.0);
        let flags = select_positive_proposals(&[b(2.0, 2.0, 20.0, 25.0)], &gt, &pose, &s, 3);
        assert_eq!(flags, vec![true]);
    }

    #[test]
    fn invisible_joints_do_not_count() {
        let s = Skeleton::default_13();
        let mut pose = standing();
        let gt = b(0.0, 0.0, 100.0, 150.0);
        let p = [b(37.0, 5.0, 63.0, 35.0)];
        pose.joints[0].visible = false;
        assert_eq!(select_positive_proposals(&p, &gt, &pose, &s, 3), vec![false]);
        assert_eq!(select_positive_proposals(&p, &gt, &pose, &s, 2), vec![true]);
    }

    fn grid_model() -> PartClassModel {
        let centroids = (0..10)
            .map(|i| PartDescriptor {
                u: 0.3 + 0.04 * i as f64,
                v: 0.5,
                w: 0.55,
                h: 0.55,
            })
            .collect();
        PartClassModel::new(centroids).unwrap()
    }

    #[test]
    fn assign_class_bands() {
        let model = grid_model();
        let gt = b(0.0, 0.0, 100.0, 100.0);
        // IoU 0.6
        assert_eq!(
            assign_class(&b(0.0, 0.0, 60.0, 100.0), &gt, &model, FULLBODY_IOU, PART_IOU),
            ProposalLabel::Fullbody
        );
        // IoU 0.05
        assert_eq!(
            assign_class(&b(0.0, 0.0, 5.0, 100.0), &gt, &model, FULLBODY_IOU, PART_IOU),
            ProposalLabel::Negative
        );
        // a part placed exactly on centroid 7 has IoU 0.3025
        let c7 = model.centroids[7].place_in(&gt).unwrap();
        assert!((c7.overlap(&gt) - 0.3025).abs() < 1e-9);
        assert_eq!(
            assign_class(&c7, &gt, &model, FULLBODY_IOU, PART_IOU),
            ProposalLabel::Part(7)
        );
    }

    #[test]
    fn model_json_round_trip_and_validation() {
        let model = grid_model();
        let text = serde_json::to_string(&model).unwrap();
        let back: PartClassModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, model);
        assert!(
            serde_json::from_str::<PartClassModel>(r#"{"k":2,"centroids":[[0.5,0.5,0.5,0.5],[0.5,0.5,0.5,0.5]]}"#)
                .is_err()
        );
        assert!(serde_json::from_str::<PartClassModel>(r#"{"k":1,"centroids":[[1.5,0.5,0.5,0.5]]}"#).is_err());
    }
}
