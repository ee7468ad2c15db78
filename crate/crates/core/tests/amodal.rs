use proptest::prelude::*;

use tubekit::amodal::{complete_pose, pose_to_box, simulate_removal, PoseLibrary, RemovalDirection};
use tubekit::partmodel::{Joint, Pose2D, Skeleton};
use tubekit::synthgen::sample_poses;

/// RMS residual of the best scale + translation fit of `lib` onto the
/// visible joints of `query`, solved as a 3-parameter least-squares system.
fn fit_residual(lib: &Pose2D, query: &Pose2D) -> Option<f64> {
    let idx = query.visible_indices();
    // unknowns (s, tx, ty); normal equations of [x 1 0; y 0 1] rows
    let mut a = [[0.0; 3]; 3];
    let mut r = [0.0; 3];
    for &i in &idx {
        let (l, q) = (lib.joints[i], query.joints[i]);
        for (row, target) in [([l.x, 1.0, 0.0], q.x), ([l.y, 0.0, 1.0], q.y)] {
            for p in 0..3 {
                for c in 0..3 {
                    a[p][c] += row[p] * row[c];
                }
                r[p] += row[p] * target;
            }
        }
    }
    let m = nalgebra::Matrix3::from_fn(|i, j| a[i][j]);
    let sol = m.try_inverse()? * nalgebra::Vector3::from(r);
    if sol[0] <= 0.0 {
        return None;
    }
    let sq: f64 = idx
        .iter()
        .map(|&i| {
            let (l, q) = (lib.joints[i], query.joints[i]);
            (sol[0] * l.x + sol[1] - q.x).powi(2) + (sol[0] * l.y + sol[2] - q.y).powi(2)
        })
        .sum();
    Some((sq / idx.len() as f64).sqrt())
}

#[test]
fn exact_match_with_legs_removed() {
    let poses = sample_poses(50, 3);
    let lib = PoseLibrary::new(Skeleton::default_13(), poses.clone()).unwrap();
    let mut q = poses[17].clone();
    for j in [9, 10, 11, 12] {
        q.joints[j].visible = false;
    }
    let r = complete_pose(&q, &lib).unwrap();
    assert_eq!(r.index, 17);
    assert!(r.residual < 1e-9);
    for (a, b) in r.completed.joints.iter().zip(&poses[17].joints) {
        assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
    }
}

#[test]
fn pose_box_adds_the_margin() {
    let p = Pose2D::from_points(&[(10.0, 10.0), (50.0, 90.0), (30.0, 40.0)]).unwrap();
    assert_eq!(pose_to_box(&p, 20.0).unwrap().to_array(), [-10.0, -10.0, 70.0, 110.0]);
}

#[test]
fn random_queries_pick_the_nearest_pose() {
    let lib_poses = sample_poses(300, 21);
    let lib = PoseLibrary::new(Skeleton::default_13(), lib_poses.clone()).unwrap();
    for (n, q) in sample_poses(40, 22).iter().enumerate() {
        let dir = RemovalDirection::ALL[n % 4];
        let q = simulate_removal(q, dir, 2 + n % 8).unwrap();
        let r = complete_pose(&q, &lib).unwrap();
        for cand in &lib_poses {
            if let Some(d) = fit_residual(cand, &q) {
                assert!(r.residual <= d + 1e-7, "query {n}: {} > {d}", r.residual);
            }
        }
        for j in q.visible_indices() {
            assert_eq!(r.completed.joints[j], q.joints[j]);
        }
        assert!(r.completed.joints.iter().all(|j| j.visible));
    }
}

#[test]
fn too_little_evidence() {
    let lib = PoseLibrary::new(Skeleton::default_13(), sample_poses(5, 1)).unwrap();
    let mut q = sample_poses(1, 2).pop().unwrap();
    for j in q.joints.iter_mut().skip(1) {
        j.visible = false;
    }
    assert!(complete_pose(&q, &lib).is_err());
}

proptest! {
    #[test]
    fn similarity_moves_the_completion(
        idx in 0usize..30,
        s in 0.3..4.0f64,
        tx in -300.0..300.0f64,
        ty in -300.0..300.0f64,
        hidden in prop::collection::btree_set(0usize..13, 0..9),
    ) {
        let poses = sample_poses(30, 8);
        let lib = PoseLibrary::new(Skeleton::default_13(), poses.clone()).unwrap();
        let joints: Vec<Joint> = poses[idx]
            .joints
            .iter()
            .enumerate()
            .map(|(i, j)| Joint { x: s * j.x + tx, y: s * j.y + ty, visible: !hidden.contains(&i) })
            .collect();
        let r = complete_pose(&Pose2D::new(joints).unwrap(), &lib).unwrap();
        prop_assert!(r.residual < 1e-6 * s);
        for (c, o) in r.completed.joints.iter().zip(&poses[idx].joints) {
            prop_assert!((c.x - (s * o.x + tx)).abs() < 1e-6 && (c.y - (s * o.y + ty)).abs() < 1e-6);
        }
    }
}
