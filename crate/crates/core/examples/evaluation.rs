//! Scores tubes against annotated tracks with temporal-IoU average precision.
//!
//! Usage: `cargo run --example evaluation`

use tubekit::evalkit::{pr_csv, AnnotatedFrame, GroundTruthInstance, Metrics, ScoredTube, Split};
use tubekit::{BBox, Tube, TubeFrame};

fn track(x: f64, frames: std::ops::Range<u32>) -> Vec<(u32, BBox)> {
    frames
        .map(|f| (f, BBox::new(x + f as f64, 40.0, x + f as f64 + 60.0, 200.0).unwrap()))
        .collect()
}

fn tube(video: &str, boxes: Vec<(u32, BBox)>) -> Tube {
    let frames = boxes
        .into_iter()
        .map(|(frame, bbox)| TubeFrame {
            frame,
            bbox,
            score: 1.0,
            parts: vec![],
        })
        .collect();
    Tube::new(video, frames).unwrap()
}

fn main() -> tubekit::Result<()> {
    let gt = |video: &str, class: &str, x: f64| GroundTruthInstance {
        video: video.into(),
        class: class.into(),
        frames: track(x, 10..40)
            .into_iter()
            .map(|(frame, bbox)| AnnotatedFrame { frame, bbox })
            .collect(),
        extent: None,
        split: Split::Test,
    };
    let gts = vec![
        gt("v0", "waving", 0.0),
        gt("v1", "waving", 100.0),
        gt("v1", "drinking", 300.0),
    ];
    let scored = |video: &str, class: &str, x: f64, frames: std::ops::Range<u32>, confidence: f64| ScoredTube {
        tube: tube(video, track(x, frames)),
        class: class.into(),
        confidence,
    };
    let tubes = vec![
        // exact
        scored("v0", "waving", 0.0, 10..40, 0.9),
        // right place, a third of the time
        scored("v1", "waving", 100.0, 10..20, 0.8),
        // spatially off by a box width
        scored("v1", "drinking", 360.0, 10..40, 0.7),
        scored("v1", "drinking", 300.0, 5..40, 0.4),
    ];
    let metrics = Metrics::compute(&tubes, &gts, &[0.2, 0.5, 0.7])?;
    print!("{}", metrics.to_text());
    print!("{}", pr_csv(&tubes, &gts, "waving", 0.5)?);
    Ok(())
}
