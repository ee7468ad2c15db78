//! Clusters part boxes from a generated training set into part classes and
//! labels proposals against them.
//!
//! Usage: `cargo run --release --example part_classes [k] [seed]`

use tubekit::partmodel::{assign_class, FULLBODY_IOU, PART_IOU};
use tubekit::pipeline::{cluster_training, label_proposals};
use tubekit::synthgen::{generate, presets};

fn main() -> tubekit::Result<()> {
    let mut args = std::env::args().skip(1);
    let k = args.next().and_then(|a| a.parse().ok()).unwrap_or(8);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);
    let mut spec = presets::visible(1, seed);
    spec.training.images = 300;
    let out = generate(&spec)?;

    let model = cluster_training(&out.training, &out.skeleton, k, seed)?;
    println!(
        "{} classes, full body is class {}",
        model.class_count(),
        model.fullbody_class()
    );
    for (i, c) in model.centroids.iter().enumerate() {
        let [u, v, w, h] = c.to_array();
        println!("  class {i:>2}: centre ({u:+.2}, {v:+.2}) size ({w:.2}, {h:.2})");
    }

    let labeled = label_proposals(&out.training, &model, &out.skeleton);
    println!(
        "{} positive proposals from {} images",
        labeled.len(),
        out.training.len()
    );

    let rec = &out.training[0];
    for p in rec.proposals.iter().take(5) {
        let label = assign_class(&p.bbox, &rec.gt, &model, FULLBODY_IOU, PART_IOU);
        println!("  proposal {:?} -> {label:?}", p.bbox.to_array().map(|x| x.round()));
    }
    Ok(())
}
