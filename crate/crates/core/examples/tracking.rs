//! Builds full-body tubes on an occlusion corpus and compares them to the
//! groundtruth person boxes frame by frame.
//!
//! Usage: `cargo run --release --example tracking [videos] [seed]`

use tubekit::amodal::{pose_to_box, DEFAULT_MARGIN};
use tubekit::pipeline::{Corpus, RegressionTarget};
use tubekit::synthgen::{generate, presets};
use tubekit::tracker::build_all;
use tubekit::TrackerConfig;

fn main() -> tubekit::Result<()> {
    let mut args = std::env::args().skip(1);
    let videos = args.next().and_then(|a| a.parse().ok()).unwrap_or(4);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);
    let out = generate(&presets::occlusion(videos, seed))?;
    let corpus = Corpus::from_output(&out);
    let cfg = TrackerConfig {
        use_stored_fullbody: false,
        ..TrackerConfig::default()
    };

    for target in [RegressionTarget::Fullbody, RegressionTarget::Visible] {
        let reg = corpus.regressor(target)?;
        let tubes = build_all(&out.detections, Some(&reg), &cfg)?;
        println!("== regressing the {} box", target.name());
        for (video, ts) in &tubes {
            let Some(tube) = ts.first() else { continue };
            let frames: Vec<_> = out.poses.iter().filter(|r| &r.video == video).collect();
            let ious: Vec<f64> = frames
                .iter()
                .filter_map(|r| {
                    let gt = pose_to_box(&r.pose(), DEFAULT_MARGIN).unwrap();
                    tube.box_at(r.frame).map(|b| b.overlap(&gt))
                })
                .collect();
            let mean = ious.iter().sum::<f64>() / ious.len() as f64;
            let min = ious.iter().cloned().fold(1.0, f64::min);
            println!(
                "{video}: {} tubes, {}/{} frames covered, IoU mean {mean:.3} min {min:.3}",
                ts.len(),
                ious.len(),
                frames.len()
            );
        }
    }
    Ok(())
}
