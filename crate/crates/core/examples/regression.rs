//! Trains per-class full-body regressors on part proposals and reports
//! held-out box quality per part class.
//!
//! Usage: `cargo run --release --example regression [images] [seed]`

use std::collections::BTreeMap;

use tubekit::pipeline::{label_proposals, regression_examples, RegressionTarget};
use tubekit::regress::{apply_regressor, train_regressors, DEFAULT_RIDGE};
use tubekit::synthgen::{generate, presets};

fn main() -> tubekit::Result<()> {
    let mut args = std::env::args().skip(1);
    let images = args.next().and_then(|a| a.parse().ok()).unwrap_or(600);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(3);
    let mut spec = presets::visible(1, seed);
    spec.training.images = images;
    let out = generate(&spec)?;

    let (train, test) = out.training.split_at(images * 2 / 3);
    let labeled = label_proposals(train, &out.model, &out.skeleton);
    let reg = train_regressors(
        &regression_examples(&labeled, RegressionTarget::Fullbody),
        out.model.class_count(),
        DEFAULT_RIDGE,
    )?;

    let mut per_class: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for l in label_proposals(test, &out.model, &out.skeleton) {
        let pred = apply_regressor(&reg, l.class, &l.part, &l.feature)?;
        let e = per_class.entry(l.class).or_default();
        e.0 += pred.overlap(&l.fullbody);
        e.1 += 1.0;
    }
    println!("class  held-out  mean IoU");
    for (class, (sum, n)) in &per_class {
        println!("{class:>5}  {n:>8}  {:.3}", sum / n);
    }
    Ok(())
}
