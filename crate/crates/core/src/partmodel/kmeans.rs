//! Lloyd's k-means with greedy k-means++ seeding over 4-D part descriptors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 300;

pub type Point = [f64; 4];

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: Vec<Point>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squared distances of the returned solution.
    pub sse: f64,
    /// SSE after each assignment step, starting with the seeding.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn sq_dist(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest centroid; ties go to the lowest index.
pub fn nearest(p: &Point, centroids: &[Point]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

pub fn sse(points: &[Point], centroids: &[Point]) -> f64 {
    points.iter().map(|p| nearest(p, centroids).1).sum()
}

fn distinct_count(points: &[Point], limit: usize) -> usize {
    let mut seen: Vec<&Point> = Vec::new();
    for p in points {
        if !seen.contains(&p) {
            seen.push(p);
            if seen.len() >= limit {
                break;
            }
        }
    }
    seen.len()
}

/// Draws an index with probability proportional to `weights`.
fn weighted_index(rng: &mut ChaCha8Rng, weights: &[f64], total: f64) -> usize {
    let mut r = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if *w <= 0.0 {
            continue;
        }
        if r < *w {
            return i;
        }
        r -= w;
    }
    // rounding fallthrough: last index with positive weight
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn seed_plus_plus(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let n = points.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..n)]);
    let mut closest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = closest.iter().sum();
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = weighted_index(rng, &closest, total);
            let updated: Vec<f64> = points
                .iter()
                .zip(&closest)
                .map(|(p, d)| d.min(sq_dist(p, &points[cand])))
                .collect();
            let pot: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| pot < b.1) {
                best = Some((cand, pot, updated));
            }
        }
        let (idx, _, updated) = best.expect("at least one trial");
        centroids.push(points[idx]);
        closest = updated;
    }
    centroids
}

/// Clusters `points` into `k` groups. Deterministic for a fixed `seed`.
pub fn kmeans(points: &[Point], k: usize, seed: u64) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if points.len() < k {
        return Err(Error::invalid(format!(
            "need at least {k} descriptors, got {}",
            points.len()
        )));
    }
    if distinct_count(points, k) < k {
        return Err(Error::invalid(format!("fewer than {k} distinct descriptors")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(points, k, &mut rng);

    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut sse_history = vec![sse(points, &centroids)];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        // update step
        let mut sums = vec![[0.0; 4]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for d in 0..4 {
                sums[a][d] += p[d];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..4 {
                    centroids[c][d] = sums[c][d] / counts[c] as f64;
                }
            }
        }
        // empty clusters take the point farthest from its centroid
        for c in 0..k {
            if counts[c] == 0 {
                let (far, _) = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, nearest(p, &centroids).1))
                    .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
                centroids[c] = points[far];
            }
        }
        // assignment step
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        sse_history.push(sse(points, &centroids));
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
    }

    Ok(KMeansFit {
        sse: sse(points, &centroids),
        centroids,
        assignments,
        sse_history,
        iterations,
        converged,
    })
}
