//! Generates a corpus, writes it to disk and reads it back.
//!
//! Usage: `cargo run --release --example synth_corpus [preset] [videos] [dir]`

use tubekit::pipeline::Corpus;
use tubekit::synthgen::{generate, presets};

fn main() -> tubekit::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "occlusion".into());
    let videos = args.next().and_then(|a| a.parse().ok()).unwrap_or(6);
    let dir = args
        .next()
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("tubekit-corpus"));

    let spec = presets::by_name(&preset, videos, 1)?;
    let out = generate(&spec)?;
    for path in out.write(&spec, &dir)? {
        println!("{}  {} bytes", path.display(), std::fs::metadata(&path)?.len());
    }

    let corpus = Corpus::load(&dir)?;
    println!(
        "{} detections over {} videos, {} groundtruth tracks, {} training images, {} part classes",
        corpus.detections.len(),
        corpus.detections.videos().count(),
        corpus.groundtruth.len(),
        corpus.training.len(),
        corpus.model.class_count()
    );
    Ok(())
}
