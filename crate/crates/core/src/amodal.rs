//! Amodal pose completion by nearest-neighbor search over a library of
//! complete 2D poses, full-body boxes from poses, and the keypoint-removal
//! robustness study.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::partmodel::{Joint, Pose2D, Skeleton};

/// Margin added around keypoints when deriving a person box.
pub const DEFAULT_MARGIN: f64 = 20.0;

/// Complete poses (every joint visible) sharing one skeleton.
#[derive(Debug, Clone)]
pub struct PoseLibrary {
    skeleton: Skeleton,
    poses: Vec<Pose2D>,
}

#[derive(Serialize, Deserialize)]
struct LibraryRecord {
    joints: Vec<[f64; 2]>,
}

impl PoseLibrary {
    pub fn new(skeleton: Skeleton, poses: Vec<Pose2D>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::invalid("pose library is empty"));
        }
        for (i, p) in poses.iter().enumerate() {
            if p.len() != skeleton.joint_count() {
                return Err(Error::Schema(format!(
                    "library pose {i} has {} joints, skeleton has {}",
                    p.len(),
                    skeleton.joint_count()
                )));
            }
            if p.joints.iter().any(|j| !j.visible) {
                return Err(Error::Schema(format!("library pose {i} is incomplete")));
            }
            p.validate()?;
        }
        Ok(Self { skeleton, poses })
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn poses(&self) -> &[Pose2D] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Reads one `{"joints": [[x, y], ...]}` record per line.
    pub fn load(path: &Path, skeleton: Skeleton) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut poses = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LibraryRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            poses.push(Pose2D {
                joints: rec.joints.iter().map(|&[x, y]| Joint::visible(x, y)).collect(),
            });
        }
        Self::new(skeleton, poses)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for p in &self.poses {
            let rec = LibraryRecord {
                joints: p.joints.iter().map(|j| [j.x, j.y]).collect(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub completed: Pose2D,
    /// Index of the matched library pose.
    pub index: usize,
    pub scale: f64,
    pub translation: (f64, f64),
    /// RMS alignment residual over the query's visible joints.
    pub residual: f64,
}

struct Alignment {
    scale: f64,
    tx: f64,
    ty: f64,
    sq_residual: f64,
}

/// Least-squares scale + translation taking `lib` joints onto `query` joints
/// over `idx`. `None` when the library joints are coincident or the best
/// scale is not positive.
fn align(lib: &[Joint], query: &[Joint], idx: &[usize]) -> Option<Alignment> {
    let m = idx.len() as f64;
    let (mut lx, mut ly, mut qx, mut qy) = (0.0, 0.0, 0.0, 0.0);
    for &i in idx {
        lx += lib[i].x;
        ly += lib[i].y;
        qx += query[i].x;
        qy += query[i].y;
    }
    lx /= m;
    ly /= m;
    qx /= m;
    qy /= m;
    let (mut sll, mut slq, mut sqq) = (0.0, 0.0, 0.0);
    for &i in idx {
        let (ax, ay) = (lib[i].x - lx, lib[i].y - ly);
        let (bx, by) = (query[i].x - qx, query[i].y - qy);
        sll += ax * ax + ay * ay;
        slq += ax * bx + ay * by;
        sqq += bx * bx + by * by;
    }
    if sll <= f64::EPSILON * (1.0 + sqq) {
        return None;
    }
    let scale = slq / sll;
    if scale <= 0.0 {
        return None;
    }
    Some(Alignment {
        scale,
        tx: qx - scale * lx,
        ty: qy - scale * ly,
        sq_residual: (sqq - scale * slq).max(0.0),
    })
}

/// Completes a partial pose from its nearest library neighbor under a
/// scale + translation alignment of the visible joints.
pub fn complete_pose(query: &Pose2D, lib: &PoseLibrary) -> Result<CompletionResult> {
    let n = lib.skeleton.joint_count();
    if query.len() != n {
        return Err(Error::invalid(format!(
            "query has {} joints, library skeleton has {n}",
            query.len()
        )));
    }
    let visible = query.visible_indices();
    if visible.len() < 2 {
        return Err(Error::InsufficientEvidence {
            visible: visible.len(),
            required: 2,
        });
    }
    let mut best: Option<(usize, Alignment)> = None;
    for (i, cand) in lib.poses.iter().enumerate() {
        let Some(a) = align(&cand.joints, &query.joints, &visible) else {
            continue;
        };
        if best.as_ref().is_none_or(|(_, b)| a.sq_residual < b.sq_residual) {
            best = Some((i, a));
        }
    }
    let (index, a) = best.ok_or_else(|| Error::invalid("no library pose admits a positive-scale alignment"))?;
    let matched = &lib.poses[index].joints;
    let joints: Vec<Joint> = (0..n)
        .map(|j| {
            if query.joints[j].visible {
                query.joints[j]
            } else {
                Joint::visible(a.scale * matched[j].x + a.tx, a.scale * matched[j].y + a.ty)
            }
        })
        .collect();
    let residual = (visible
        .iter()
        .map(|&j| {
            let dx = a.scale * matched[j].x + a.tx - query.joints[j].x;
            let dy = a.scale * matched[j].y + a.ty - query.joints[j].y;
            dx * dx + dy * dy
        })
        .sum::<f64>()
        / visible.len() as f64)
        .sqrt();
    Ok(CompletionResult {
        completed: Pose2D { joints },
        index,
        scale: a.scale,
        translation: (a.tx, a.ty),
        residual,
    })
}

/// Tight box around the given points grown by `margin` on every side.
pub fn points_to_box<I: IntoIterator<Item = (f64, f64)>>(points: I, margin: f64) -> Result<BBox> {
    let mut it = points.into_iter();
    let (x0, y0) = it
        .next()
        .ok_or_else(|| Error::invalid("cannot box an empty point set"))?;
    let (mut x1, mut y1, mut x2, mut y2) = (x0, y0, x0, y0);
    for (x, y) in it {
        x1 = x1.min(x);
        y1 = y1.min(y);
        x2 = x2.max(x);
        y2 = y2.max(y);
    }
    BBox::new(x1 - margin, y1 - margin, x2 + margin, y2 + margin)
}

/// Box containing every joint of the pose plus `margin`.
pub fn pose_to_box(pose: &Pose2D, margin: f64) -> Result<BBox> {
    points_to_box(pose.joints.iter().map(|j| (j.x, j.y)), margin)
}

/// Box containing only the visible joints plus `margin`.
pub fn visible_box(pose: &Pose2D, margin: f64) -> Result<BBox> {
    points_to_box(pose.joints.iter().filter(|j| j.visible).map(|j| (j.x, j.y)), margin)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemovalDirection {
    Lowest,
    Highest,
    Leftmost,
    Rightmost,
}

impl RemovalDirection {
    pub const ALL: [RemovalDirection; 4] = [
        RemovalDirection::Lowest,
        RemovalDirection::Highest,
        RemovalDirection::Leftmost,
        RemovalDirection::Rightmost,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            RemovalDirection::Lowest => "lowest",
            RemovalDirection::Highest => "highest",
            RemovalDirection::Leftmost => "leftmost",
            RemovalDirection::Rightmost => "rightmost",
        }
    }
}

impl std::str::FromStr for RemovalDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RemovalDirection::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown removal direction `{s}`")))
    }
}

/// Visible joints ordered from most to least extreme along `direction`,
/// ties by joint index.
fn extreme_order(pose: &Pose2D, direction: RemovalDirection) -> Vec<usize> {
    let mut idx = pose.visible_indices();
    let key = |j: &Joint| match direction {
        RemovalDirection::Lowest => -j.y,
        RemovalDirection::Highest => j.y,
        RemovalDirection::Leftmost => j.x,
        RemovalDirection::Rightmost => -j.x,
    };
    idx.sort_by(|&a, &b| key(&pose.joints[a]).total_cmp(&key(&pose.joints[b])).then(a.cmp(&b)));
    idx
}

/// Hides the `n` most extreme visible joints along `direction`.
pub fn simulate_removal(pose: &Pose2D, direction: RemovalDirection, n: usize) -> Result<Pose2D> {
    let visible = pose.visible_count();
    if n + 1 >= visible {
        return Err(Error::invalid(format!(
            "cannot remove {n} of {visible} visible joints; at least 2 must remain"
        )));
    }
    let mut out = pose.clone();
    for j in extreme_order(pose, direction).into_iter().take(n) {
        out.joints[j].visible = false;
    }
    Ok(out)
}

/// One point of a removal curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemovalPoint {
    pub visible: usize,
    pub mean_iou: f64,
}

/// Mean IoU between boxes of completed degraded poses and boxes of the
/// original poses, for every removal count from 0 up to leaving two joints.
pub fn removal_curve(
    lib_train: &PoseLibrary,
    lib_eval: &[Pose2D],
    direction: RemovalDirection,
    margin: f64,
) -> Result<Vec<RemovalPoint>> {
    if lib_eval.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let n_joints = lib_train.skeleton.joint_count();
    for p in lib_eval {
        if p.len() != n_joints || p.joints.iter().any(|j| !j.visible) {
            return Err(Error::invalid("evaluation poses must be complete"));
        }
    }
    (0..=n_joints - 2)
        .map(|n| {
            let ious: Vec<f64> = lib_eval
                .par_iter()
                .map(|pose| -> Result<f64> {
                    let gt = pose_to_box(pose, margin)?;
                    let degraded = simulate_removal(pose, direction, n)?;
                    let done = complete_pose(&degraded, lib_train)?;
                    Ok(pose_to_box(&done.completed, margin)?.overlap(&gt))
                })
                .collect::<Result<_>>()?;
            Ok(RemovalPoint {
                visible: n_joints - n,
                mean_iou: ious.iter().sum::<f64>() / ious.len() as f64,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standing(dx: f64, dy: f64, s: f64) -> Pose2D {
        let pts = [
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
        ];
        Pose2D::from_points(&pts.map(|(x, y)| (x * s + dx, y * s + dy))).unwrap()
    }

    fn crouching() -> Pose2D {
        let mut p = standing(0.0, 0.0, 1.0);
        for j in 9..13 {
            p.joints[j].x += 15.0;
            p.joints[j].y -= 10.0;
        }
        p
    }

    fn library() -> PoseLibrary {
        PoseLibrary::new(Skeleton::default_13(), vec![crouching(), standing(0.0, 0.0, 1.0)]).unwrap()
    }

    #[test]
    fn exact_sub_pose_match() {
        let lib = library();
        let mut q = standing(0.0, 0.0, 1.0);
        for j in 9..13 {
            q.joints[j].visible = false;
        }
        // upper body is identical in both library poses; the lower index wins
        let r = complete_pose(&q, &lib).unwrap();
        assert_eq!(r.index, 0);
        assert!(r.residual < 1e-9);

        let mut q = standing(0.0, 0.0, 1.0);
        for j in [0, 1, 2, 3, 4, 5, 6] {
            q.joints[j].visible = false;
        }
        let r = complete_pose(&q, &lib).unwrap();
        assert_eq!(r.index, 1);
        assert!(r.residual < 1e-9);
        let orig = standing(0.0, 0.0, 1.0);
        for (a, b) in r.completed.joints.iter().zip(&orig.joints) {
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
    }

    #[test]
    fn similarity_invariance() {
        let lib = library();
        let mut q = standing(100.0, -40.0, 2.0);
        for j in [0, 1, 2] {
            q.joints[j].visible = false;
        }
        let r = complete_pose(&q, &lib).unwrap();
        assert_eq!(r.index, 1);
        assert!((r.scale - 2.0).abs() < 1e-9);
        assert!(r.residual < 1e-9);
        assert!((r.completed.joints[0].x - 200.0).abs() < 1e-9);
        assert!((r.completed.joints[0].y - (-20.0)).abs() < 1e-9);
    }

    #[test]
    fn too_few_visible_joints() {
        let lib = library();
        let mut q = standing(0.0, 0.0, 1.0);
        for j in 1..13 {
            q.joints[j].visible = false;
        }
        assert!(matches!(
            complete_pose(&q, &lib),
            Err(Error::InsufficientEvidence { visible: 1, .. })
        ));
    }

    #[test]
    fn pose_box_examples() {
        let p = Pose2D::from_points(&[(10.0, 10.0), (50.0, 90.0), (30.0, 40.0)]).unwrap();
        assert_eq!(
            pose_to_box(&p, 20.0).unwrap(),
            BBox::new(-10.0, -10.0, 70.0, 110.0).unwrap()
        );
        assert_eq!(
            pose_to_box(&p, 0.0).unwrap(),
            BBox::new(10.0, 10.0, 50.0, 90.0).unwrap()
        );
        let single = Pose2D::from_points(&[(5.0, 7.0)]).unwrap();
        assert_eq!(
            pose_to_box(&single, 20.0).unwrap(),
            BBox::new(-15.0, -13.0, 25.0, 27.0).unwrap()
        );
    }

    #[test]
    fn removal_examples() {
        let p = standing(0.0, 0.0, 1.0);
        assert_eq!(simulate_removal(&p, RemovalDirection::Lowest, 0).unwrap(), p);
        let r = simulate_removal(&p, RemovalDirection::Lowest, 2).unwrap();
        assert_eq!(r.visible_indices(), (0..11).collect::<Vec<_>>());
        let prev = simulate_removal(&p, RemovalDirection::Highest, 3).unwrap();
        let next = simulate_removal(&p, RemovalDirection::Highest, 4).unwrap();
        for j in 0..13 {
            if !prev.joints[j].visible {
                assert!(!next.joints[j].visible);
            }
        }
        assert!(simulate_removal(&p, RemovalDirection::Leftmost, 11).is_ok());
        assert!(simulate_removal(&p, RemovalDirection::Leftmost, 12).is_err());
    }

    #[test]
    fn removal_curve_starts_at_one() {
        let lib = library();
        let eval = [standing(10.0, 10.0, 1.5)];
        let curve = removal_curve(&lib, &eval, RemovalDirection::Lowest, DEFAULT_MARGIN).unwrap();
        assert_eq!(curve.len(), 12);
        assert_eq!(curve[0].visible, 13);
        assert_eq!(curve[0].mean_iou, 1.0);
        assert_eq!(curve.last().unwrap().visible, 2);
    }
}
