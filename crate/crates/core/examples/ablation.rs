//! Parts-count and regression-target sweeps on generated corpora.
//!
//! Usage: `cargo run --release --example ablation [videos] [seed]`

use std::time::Instant;

use tubekit::evalkit::{ablate_parts, ablate_target};
use tubekit::pipeline::Corpus;
use tubekit::synthgen::{generate, presets};
use tubekit::TrackerConfig;

fn main() -> tubekit::Result<()> {
    let mut args = std::env::args().skip(1);
    let videos = args.next().and_then(|a| a.parse().ok()).unwrap_or(50);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);
    let cfg = TrackerConfig::default();

    for name in ["occlusion", "viewpoint", "visible"] {
        let t = Instant::now();
        let spec = presets::by_name(name, videos, seed)?;
        let corpus = Corpus::from_output(&generate(&spec)?);
        println!("== {name} ({videos} videos, generated in {:.1?})", t.elapsed());
        if name == "occlusion" {
            print!("{}", ablate_target(&corpus, &cfg)?.to_text());
        } else {
            print!("{}", ablate_parts(&corpus, &cfg, &[1, 2, 3, 4, 5])?.to_text());
        }
        println!("({:.1?})\n", t.elapsed());
    }
    Ok(())
}
