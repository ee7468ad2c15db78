use proptest::prelude::*;

use tubekit::evalkit::{AnnotatedFrame, GroundTruthInstance, Split};
use tubekit::geometry::{crop_to_frame, interpolate_tube, temporal_iou};
use tubekit::{iou, BBox, FrameExtent, Tube, TubeFrame};

fn arb_box() -> impl Strategy<Value = BBox> {
    (-200.0..800.0f64, -200.0..800.0f64, 0.5..300.0f64, 0.5..300.0f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

fn int_box() -> impl Strategy<Value = [i32; 4]> {
    (0..40i32, 0..40i32, 1..25i32, 1..25i32).prop_map(|(x, y, w, h)| [x, y, x + w, y + h])
}

fn pixel_count_iou(a: [i32; 4], b: [i32; 4]) -> f64 {
    let inside = |r: [i32; 4], x: i32, y: i32| x >= r[0] && x < r[2] && y >= r[1] && y < r[3];
    let (mut inter, mut union) = (0, 0);
    for y in 0..70 {
        for x in 0..70 {
            inter += (inside(a, x, y) && inside(b, x, y)) as u32;
            union += (inside(a, x, y) || inside(b, x, y)) as u32;
        }
    }
    inter as f64 / union as f64
}

fn tube(frames: &[(u32, BBox)]) -> Tube {
    Tube::new(
        "v",
        frames
            .iter()
            .map(|(f, b)| TubeFrame {
                frame: *f,
                bbox: *b,
                score: 1.0,
                parts: vec![],
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn half_shifted_square() {
    let a = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
    let b = BBox::new(5.0, 0.0, 15.0, 10.0).unwrap();
    let v = iou(&a, &b).unwrap();
    assert!((v - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(v, pixel_count_iou([0, 0, 10, 10], [5, 0, 15, 10]));
}

#[test]
fn boxes_may_leave_the_frame() {
    let b = BBox::new(-30.0, -10.0, 700.0, 500.0).unwrap();
    let c = crop_to_frame(&b, FrameExtent::new(640, 360).unwrap()).unwrap();
    assert_eq!(c.to_array(), [0.0, 0.0, 640.0, 360.0]);
    assert!(crop_to_frame(
        &BBox::new(700.0, 0.0, 720.0, 10.0).unwrap(),
        FrameExtent::new(640, 360).unwrap()
    )
    .is_none());
}

#[test]
fn json_is_a_corner_array() {
    let b = BBox::new(1.0, 2.0, 3.0, 4.0).unwrap();
    assert_eq!(serde_json::to_string(&b).unwrap(), "[1.0,2.0,3.0,4.0]");
    assert!(serde_json::from_str::<BBox>("[3.0,2.0,1.0,4.0]").is_err());
    assert!(serde_json::from_str::<FrameExtent>("[0,10]").is_err());
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let ab = iou(&a, &b).unwrap();
        prop_assert_eq!(ab, iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iou_matches_pixel_counts(a in int_box(), b in int_box()) {
        let f = |r: [i32; 4]| BBox::new(r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64).unwrap();
        prop_assert!((iou(&f(a), &f(b)).unwrap() - pixel_count_iou(a, b)).abs() < 1e-6);
    }

    #[test]
    fn crop_lies_inside_the_frame(b in arb_box()) {
        let ext = FrameExtent::new(640, 360).unwrap();
        if let Some(c) = crop_to_frame(&b, ext) {
            prop_assert!(c.contained_in(&ext.as_box(), 0.0));
            prop_assert!(c.contained_in(&b, 0.0));
        }
    }

    #[test]
    fn interpolation_keeps_keyframes(
        start in 0u32..20,
        stride in 1u32..8,
        boxes in prop::collection::vec(arb_box(), 1..6),
    ) {
        let keys: Vec<(u32, BBox)> = boxes.iter().enumerate().map(|(i, b)| (start + i as u32 * stride, *b)).collect();
        let kt = tube(&keys);
        let dense = interpolate_tube(&kt, stride).unwrap();
        prop_assert_eq!(dense.frames.len() as u32, kt.last_frame() - kt.first_frame() + 1);
        for (f, b) in &keys {
            prop_assert_eq!(dense.box_at(*f), Some(b));
        }
        prop_assert!(dense.frames.windows(2).all(|w| w[1].frame == w[0].frame + 1));
    }

    #[test]
    fn temporal_iou_is_bounded(
        boxes in prop::collection::vec(arb_box(), 1..6),
        gts in prop::collection::vec(arb_box(), 1..6),
    ) {
        let t = tube(&boxes.iter().enumerate().map(|(i, b)| (i as u32, *b)).collect::<Vec<_>>());
        let gt = GroundTruthInstance {
            video: "v".into(),
            class: "a".into(),
            frames: gts.iter().enumerate().map(|(i, b)| AnnotatedFrame { frame: 2 * i as u32, bbox: *b }).collect(),
            extent: Some(FrameExtent::new(640, 360).unwrap()),
            split: Split::Test,
        };
        let v = temporal_iou(&t, &gt);
        prop_assert!((0.0..=1.0).contains(&v));
    }
}
