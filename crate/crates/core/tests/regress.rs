use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tubekit::pipeline::{label_proposals, regression_examples, RegressionTarget};
use tubekit::regress::{
    apply_regressor, decode_deltas, encode_deltas, merge_regressed, train_regressors, RegressionExample,
};
use tubekit::synthgen::{generate, presets};
use tubekit::BBox;

fn arb_box() -> impl Strategy<Value = BBox> {
    (-300.0..900.0f64, -300.0..900.0f64, 1.0..400.0f64, 1.0..400.0f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    let (x, y) = (rng.random_range(-100.0..600.0), rng.random_range(-100.0..400.0));
    BBox::new(x, y, x + rng.random_range(5.0..200.0), y + rng.random_range(5.0..300.0)).unwrap()
}

#[test]
fn decode_inverts_encode_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (p, f) = (random_box(&mut rng), random_box(&mut rng));
        let back = decode_deltas(&p, &encode_deltas(&p, &f)).unwrap();
        for (a, b) in back.to_array().iter().zip(f.to_array()) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-9, "{worst}");
}

/// Normal equations with an explicit inverse; the intercept is not
/// penalized.
fn normal_equations(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let mut g = x.transpose() * x;
    for i in 0..x.ncols() - 1 {
        g[(i, i)] += lambda;
    }
    g.try_inverse().unwrap() * x.transpose() * y
}

#[test]
fn ridge_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..40 {
        let dim = 1 + trial % 8;
        let n = rng.random_range(dim + 2..=50);
        let lambda = [0.0, 1e-4, 0.1, 3.0][trial % 4];
        let ex: Vec<RegressionExample> = (0..n)
            .map(|_| RegressionExample {
                class: 0,
                part: random_box(&mut rng),
                feature: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
                full: random_box(&mut rng),
            })
            .collect();
        let model = train_regressors(&ex, 1, lambda).unwrap();
        let x = DMatrix::from_fn(n, dim + 1, |i, j| if j == dim { 1.0 } else { ex[i].feature[j] });
        let y = DMatrix::from_fn(n, 4, |i, k| encode_deltas(&ex[i].part, &ex[i].full).to_array()[k]);
        let oracle = normal_equations(&x, &y, lambda);
        for k in 0..4 {
            for j in 0..=dim {
                let got = model.classes[0].coefficient(dim, k, j);
                assert!(
                    (got - oracle[(j, k)]).abs() < 1e-8,
                    "trial {trial}: {got} vs {}",
                    oracle[(j, k)]
                );
            }
        }
    }
}

#[test]
fn training_ignores_example_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut ex: Vec<RegressionExample> = (0..60)
        .map(|i| RegressionExample {
            class: i % 2,
            part: random_box(&mut rng),
            feature: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            full: random_box(&mut rng),
        })
        .collect();
    let a = train_regressors(&ex, 2, 1e-4).unwrap();
    ex.reverse();
    ex.swap(3, 40);
    let b = train_regressors(&ex, 2, 1e-4).unwrap();
    for (ca, cb) in a.classes.iter().zip(&b.classes) {
        for (x, y) in ca.coefficients.iter().zip(&cb.coefficients) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn merge_of_two_weighted_boxes() {
    let m = merge_regressed(&[
        (BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), 0.9),
        (BBox::new(0.0, 0.0, 20.0, 10.0).unwrap(), 0.1),
    ])
    .unwrap();
    assert!((m.x2 - 11.0).abs() < 1e-12);
    assert!(merge_regressed(&[]).is_err());
    assert!(merge_regressed(&[(BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), 0.0)]).is_err());
}

#[test]
fn generator_regressors_recover_the_person() {
    let mut spec = presets::clean(11, 1);
    spec.training.layout_noise = 0.0;
    spec.training.images = 600;
    let out = generate(&spec).unwrap();
    let (train, eval) = out.training.split_at(400);
    let labeled = label_proposals(train, &out.model, &out.skeleton);
    let model = train_regressors(
        &regression_examples(&labeled, RegressionTarget::Fullbody),
        out.model.class_count(),
        1e-4,
    )
    .unwrap();
    let held_out = label_proposals(eval, &out.model, &out.skeleton);
    let mut total = 0.0;
    for l in &held_out {
        total += apply_regressor(&model, l.class, &l.part, &l.feature)
            .unwrap()
            .overlap(&l.fullbody);
    }
    let mean = total / held_out.len() as f64;
    assert!(mean >= 0.9, "mean IoU {mean}");

    // the lowest part class behaves like legs: the body extends above it
    let legs = (0..out.model.k)
        .max_by(|a, b| out.model.centroids[*a].v.total_cmp(&out.model.centroids[*b].v))
        .unwrap();
    let examples: Vec<_> = held_out.iter().filter(|l| l.class == legs).collect();
    assert!(!examples.is_empty());
    for l in examples {
        let pred = apply_regressor(&model, legs, &l.part, &l.feature).unwrap();
        assert!(l.part.contained_in(&pred, 2.0), "{:?} not in {:?}", l.part, pred);
        assert!(pred.y1 < l.part.y1 - 0.5 * l.part.height());
    }
}

proptest! {
    #[test]
    fn decode_encode_round_trip(p in arb_box(), f in arb_box()) {
        let back = decode_deltas(&p, &encode_deltas(&p, &f)).unwrap();
        let tol = 1e-9 * (1.0 + f.to_array().iter().fold(0.0f64, |m, v| m.max(v.abs())));
        for (a, b) in back.to_array().iter().zip(f.to_array()) {
            prop_assert!((a - b).abs() < tol);
        }
    }

    #[test]
    fn merge_ignores_uniform_score_scaling(
        boxes in prop::collection::vec((arb_box(), 0.01..5.0f64), 1..6),
        s in 0.01..100.0f64,
    ) {
        let a = merge_regressed(&boxes).unwrap();
        let scaled: Vec<(BBox, f64)> = boxes.iter().map(|(b, w)| (*b, w * s)).collect();
        let b = merge_regressed(&scaled).unwrap();
        for (x, y) in a.to_array().iter().zip(b.to_array()) {
            prop_assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn merge_stays_in_the_corner_hull(boxes in prop::collection::vec((arb_box(), 0.01..5.0f64), 1..6)) {
        let m = merge_regressed(&boxes).unwrap();
        let lo = boxes.iter().fold(f64::INFINITY, |a, (b, _)| a.min(b.x1));
        let hi = boxes.iter().fold(f64::NEG_INFINITY, |a, (b, _)| a.max(b.x1));
        prop_assert!(m.x1 >= lo - 1e-9 && m.x1 <= hi + 1e-9);
    }
}
