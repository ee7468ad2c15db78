//! Completes partially visible poses from a pose library and prints how the
//! completed box degrades as joints are removed.
//!
//! Usage: `cargo run --release --example amodal_completion [library] [queries]`

use tubekit::amodal::{
    complete_pose, pose_to_box, removal_curve, simulate_removal, PoseLibrary, RemovalDirection, DEFAULT_MARGIN,
};
use tubekit::partmodel::Skeleton;
use tubekit::synthgen::sample_poses;

fn main() -> tubekit::Result<()> {
    let mut args = std::env::args().skip(1);
    let library = args.next().and_then(|a| a.parse().ok()).unwrap_or(5000);
    let queries = args.next().and_then(|a| a.parse().ok()).unwrap_or(100);
    let lib = PoseLibrary::new(Skeleton::default_13(), sample_poses(library, 1))?;
    let eval = sample_poses(queries, 2);

    let truth = pose_to_box(&eval[0], DEFAULT_MARGIN)?;
    let legs_hidden = simulate_removal(&eval[0], RemovalDirection::Lowest, 6)?;
    let done = complete_pose(&legs_hidden, &lib)?;
    println!(
        "one query with {} visible joints: library pose {}, scale {:.2}, residual {:.2}, box IoU {:.3}",
        legs_hidden.visible_count(),
        done.index,
        done.scale,
        done.residual,
        pose_to_box(&done.completed, DEFAULT_MARGIN)?.overlap(&truth)
    );

    for direction in RemovalDirection::ALL {
        let curve = removal_curve(&lib, &eval, direction, DEFAULT_MARGIN)?;
        let row: Vec<String> = curve
            .iter()
            .map(|p| format!("{}:{:.2}", p.visible, p.mean_iou))
            .collect();
        println!("{:<9} {}", direction.name(), row.join(" "));
    }
    Ok(())
}
