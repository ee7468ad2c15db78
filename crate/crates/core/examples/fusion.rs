//! Trains per-channel linear classifiers on labeled tubes and fuses their
//! sigmoid scores.
//!
//! Usage: `cargo run --release --example fusion [videos] [seed]`

use tubekit::evalkit::Split;
use tubekit::fusion::{label_training_tubes, margins, score_tube, train_fusion, DEFAULT_C, DEFAULT_POSITIVE_TIOU};
use tubekit::pipeline::{classes_of, Corpus, RegressionTarget};
use tubekit::synthgen::{generate, presets};
use tubekit::TrackerConfig;

fn main() -> tubekit::Result<()> {
    let mut args = std::env::args().skip(1);
    let videos = args.next().and_then(|a| a.parse().ok()).unwrap_or(12);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(5);
    let out = generate(&presets::visible(videos, seed))?;
    let corpus = Corpus::from_output(&out);
    let tubes = corpus.tubes(&TrackerConfig::default(), RegressionTarget::Fullbody)?;

    let is_train = |video: &str| {
        out.groundtruth
            .iter()
            .any(|g| g.video == video && g.split == Split::Train)
    };
    let (train, test): (Vec<_>, Vec<_>) = tubes.iter().partition(|t| is_train(&t.tube.video));
    let feature_of = |id: &str| out.features.iter().find(|f| f.tube == id).unwrap().clone();
    let labels = label_training_tubes(
        &train.iter().map(|t| t.tube.clone()).collect::<Vec<_>>(),
        &out.groundtruth,
        DEFAULT_POSITIVE_TIOU,
    );
    let feats: Vec<_> = train.iter().map(|t| feature_of(&t.id)).collect();
    let model = train_fusion(&feats, &labels, &classes_of(&out.groundtruth), DEFAULT_C)?;

    for t in test.iter().take(4) {
        let f = feature_of(&t.id);
        let truth = out
            .groundtruth
            .iter()
            .find(|g| g.video == t.tube.video)
            .map_or("-", |g| g.class.as_str());
        let scores = score_tube(&model, &f)?;
        let best = scores.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        println!("{} (truth {truth}): best {} with {:.3}", t.id, best.0, best.1);
        for (channel, per_class) in margins(&model, &f)? {
            let row: Vec<String> = per_class.iter().map(|(c, m)| format!("{c} {m:+.2}")).collect();
            println!("    {channel:<10} {}", row.join(", "));
        }
    }
    Ok(())
}
