use std::collections::BTreeSet;

use tubekit::evalkit::Split;
use tubekit::provider::DetectionProvider;
use tubekit::synthgen::{generate, presets, CorpusSpec, FEATURE_DIM};
use tubekit::{BBox, DetectionStore, Error};

fn small(mut spec: CorpusSpec) -> CorpusSpec {
    spec.training.images = 100;
    spec.library_poses = 50;
    spec.eval_poses = 5;
    spec
}

#[test]
fn detections_stay_inside_the_frame() {
    for spec in [presets::occlusion(4, 1), presets::viewpoint(2, 1)] {
        let spec = small(spec);
        let out = generate(&spec).unwrap();
        let frame = presets::EXTENT.as_box();
        for d in out.detections.iter() {
            assert!(d.bbox.contained_in(&frame, 1e-9), "{:?}", d.bbox);
            assert!((0.0..=1.0).contains(&d.score));
            assert!(d.class < out.model.class_count());
            assert_eq!(d.feature.len(), FEATURE_DIM);
        }
        // full-body groundtruth may leave the frame under zoom
        assert!(out.groundtruth.iter().all(|g| !g.frames.is_empty()));
    }
}

#[test]
fn seeds_change_the_corpus() {
    let a = generate(&small(presets::occlusion(2, 1))).unwrap();
    let b = generate(&small(presets::occlusion(2, 2))).unwrap();
    assert_ne!(a.detections, b.detections);
}

#[test]
fn splits_follow_the_spec() {
    let out = generate(&small(presets::visible(6, 4))).unwrap();
    let train: BTreeSet<&str> = out
        .groundtruth
        .iter()
        .filter(|g| g.split == Split::Train)
        .map(|g| g.video.as_str())
        .collect();
    assert_eq!(train, BTreeSet::from(["v000", "v001", "v002"]));
    let dims: BTreeSet<Vec<usize>> = out
        .features
        .iter()
        .map(|f| f.channels.values().map(Vec::len).collect())
        .collect();
    assert_eq!(dims.len(), 1);
}

#[test]
fn detection_files_round_trip() {
    let out = generate(&small(presets::occlusion(2, 5))).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    out.detections.save(&path).unwrap();
    let back = DetectionStore::load(&path).unwrap();
    assert_eq!(back, out.detections);
    let c = BBox::new(10.0, 10.0, 60.0, 60.0).unwrap();
    assert_eq!(back.query_score("v000", 3, &c, 0), back.query_score("v000", 3, &c, 0));
}

#[test]
fn out_of_range_score_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    std::fs::write(
        &path,
        r#"{"video":"v","frame":0,"class":0,"box":[0,0,10,10],"score":1.2}"#,
    )
    .unwrap();
    assert!(matches!(
        DetectionStore::load(&path),
        Err(Error::Schema(_)) | Err(Error::Parse { .. })
    ));
}
