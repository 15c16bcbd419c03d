use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EventSegmentation, Span};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const KMEANS_MAX_ITERS: usize = 100;

fn check_frames(op: &'static str, frames: &Tensor) -> Result<()> {
    if frames.rank() != 2 || frames.rows() == 0 {
        return Err(Error::Shape {
            op,
            detail: format!("expected a non-empty frame matrix, got shape {:?}", frames.shape()),
        });
    }
    Ok(())
}

fn mean_of(frames: &Tensor, span: Span) -> Vec<f64> {
    let mut m = vec![0.0; frames.cols()];
    for i in span.indices() {
        for (acc, x) in m.iter_mut().zip(frames.row(i)) {
            *acc += x;
        }
    }
    let inv = 1.0 / span.len() as f64;
    m.iter_mut().for_each(|v| *v *= inv);
    m
}

/// Splits frames into `min(k, n)` contiguous spans whose sizes differ by at
/// most one, longer spans first. Centers are the span means.
pub fn equal_division_segment(frames: &Tensor, k: usize) -> Result<EventSegmentation> {
    check_frames("equal_division_segment", frames)?;
    if k == 0 {
        return Err(Error::Parameter("equal division needs k >= 1".into()));
    }
    let n = frames.rows();
    let parts = k.min(n);
    let (base, extra) = (n / parts, n % parts);
    let mut spans = Vec::with_capacity(parts);
    let mut start = 0;
    for j in 0..parts {
        let len = base + usize::from(j < extra);
        spans.push(Span::new(start, start + len - 1));
        start += len;
    }
    let centers = spans.iter().map(|&s| mean_of(frames, s)).collect();
    Ok(EventSegmentation {
        video_id: String::new(),
        spans,
        centers,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// k-means++ seeding: first centroid uniform, the rest sampled with
/// probability proportional to squared distance from the nearest chosen one.
fn kmeans_plus_plus(frames: &Tensor, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = frames.rows();
    let mut centroids = vec![frames.row(rng.random_range(0..n)).to_vec()];
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(frames.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = frames.row(pick).to_vec();
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(frames.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Euclidean k-means over frames, ignoring time, followed by cutting the
/// label sequence into contiguous runs.
///
/// A cluster that recurs later in the video therefore yields several spans.
/// Each span's center is the final centroid of its label.
pub fn kmeans_segment(frames: &Tensor, k: usize, seed: u64, max_iters: usize) -> Result<EventSegmentation> {
    check_frames("kmeans_segment", frames)?;
    let n = frames.rows();
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("k-means needs 1 <= k <= {n} frames, got k = {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(frames, k, &mut rng);
    let mut labels: Vec<usize> = (0..n).map(|i| nearest(frames.row(i), &centroids)).collect();

    for _ in 0..max_iters {
        let d = frames.cols();
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(frames.row(i)) {
                *s += x;
            }
        }
        for j in 0..k {
            // empty clusters keep their previous centroid
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                centroids[j] = sums[j].iter().map(|s| s * inv).collect();
            }
        }
        let next: Vec<usize> = (0..n).map(|i| nearest(frames.row(i), &centroids)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }

    let mut spans = Vec::new();
    let mut centers = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || labels[i] != labels[start] {
            spans.push(Span::new(start, i - 1));
            centers.push(centroids[labels[start]].clone());
            start = i;
        }
    }
    Ok(EventSegmentation {
        video_id: String::new(),
        spans,
        centers,
    })
}
