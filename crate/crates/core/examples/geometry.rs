//! Box overlap, frame cropping and temporal IoU of a tube against a track.
//!
//! Usage: `cargo run --example geometry`

use tubekit::evalkit::{AnnotatedFrame, GroundTruthInstance, Split};
use tubekit::geometry::{crop_to_frame, interpolate_tube, temporal_iou};
use tubekit::{iou, BBox, FrameExtent, Tube, TubeFrame};

fn main() -> tubekit::Result<()> {
    let a = BBox::new(0.0, 0.0, 100.0, 200.0)?;
    let b = a.translate(50.0, 0.0);
    println!("iou(a, a shifted by half its width) = {:.4}", iou(&a, &b)?);

    let frame = FrameExtent::new(640, 360)?;
    let leaving = BBox::new(600.0, 300.0, 700.0, 420.0)?;
    println!(
        "cropped to frame: {:?}",
        crop_to_frame(&leaving, frame).map(|c| c.to_array())
    );

    // keyframes every 5 frames, filled in linearly
    let keys: Vec<TubeFrame> = (0..5)
        .map(|i| TubeFrame {
            frame: 5 * i,
            bbox: a.translate(10.0 * i as f64, 0.0),
            score: 1.0,
            parts: vec![],
        })
        .collect();
    let tube = interpolate_tube(&Tube::new("v", keys)?, 5)?;
    println!(
        "interpolated tube covers frames {}..={}",
        tube.first_frame(),
        tube.last_frame()
    );

    let gt = GroundTruthInstance {
        video: "v".into(),
        class: "walking".into(),
        frames: (10..=30)
            .map(|f| AnnotatedFrame {
                frame: f,
                bbox: a.translate(2.0 * f as f64, 0.0),
            })
            .collect(),
        extent: None,
        split: Split::Test,
    };
    println!(
        "temporal IoU with the annotated track = {:.4}",
        temporal_iou(&tube, &gt)
    );
    Ok(())
}
