// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::Rng;

use super::{squared_distance, Matrix};
use crate::error::{Error, Result};
use crate::seed;

pub const KMEANS_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Matrix,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
    /// Inertia after every assignment step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn nearest(centroids: &Matrix, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = squared_distance(x, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding from a ChaCha stream. When every remaining point
/// already sits on a centroid, the lowest unused index is taken.
fn seed_centroids(data: &Matrix, k: usize, seed: u64) -> Matrix {
    let n = data.rows();
    let mut rng = seed::rng(seed);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_distance(data.row(i), data.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `target` just above the final sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_distance(data.row(i), data.row(next)));
        }
    }
    data.select_rows(&chosen)
}

/// Lloyd iterations from a k-means++ start until the assignment stops
/// changing or [`KMEANS_MAX_ITERS`] is reached.
///
/// An empty cluster is refilled with the point farthest from its current
/// centroid (lowest index on ties), taken from a cluster with at least two
/// members.
pub fn kmeans(data: &Matrix, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = data.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("kmeans with k={k} on {n} points")));
    }
    if !data.is_finite() {
        return Err(Error::InvalidInput("kmeans on non-finite data".into()));
    }
    let d = data.cols();
    let mut centroids = seed_centroids(data, k, seed);
    let mut labels: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        let mut assigned = Vec::with_capacity(n);
        let mut inertia = 0.0;
        for x in data.row_iter() {
            let (c, dist) = nearest(&centroids, x);
            assigned.push(c);
            inertia += dist;
        }
        trace.push(inertia);
        if assigned == labels {
            break;
        }
        labels = assigned;

        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let donor = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .map(|i| (i, squared_distance(data.row(i), centroids.row(labels[i]))))
                .fold(None, |best: Option<(usize, f64)>, (i, dist)| match best {
                    Some((_, bd)) if bd >= dist => best,
                    _ => Some((i, dist)),
                });
            if let Some((i, _)) = donor {
                counts[labels[i]] -= 1;
                labels[i] = empty;
                counts[empty] = 1;
            }
        }
        let mut sums = Matrix::zeros(k, d);
        for (x, &l) in data.row_iter().zip(&labels) {
            for (s, v) in sums.row_mut(l).iter_mut().zip(x) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
    }
    let inertia = labels
        .iter()
        .zip(data.row_iter())
        .map(|(&l, x)| squared_distance(x, centroids.row(l)))
        .sum();
    Ok(KMeansResult { labels, centroids, inertia, inertia_trace: trace, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimum inertia over every split of the points into two nonempty groups.
    fn brute_force_two_means(points: &[[f64; 2]]) -> f64 {
        let n = points.len();
        let mut best = f64::INFINITY;
        for mask in 1..(1u32 << n) - 1 {
            let mut cost = 0.0;
            for side in [true, false] {
                let members: Vec<&[f64; 2]> = (0..n)
                    .filter(|&i| ((mask >> i) & 1 == 1) == side)
                    .map(|i| &points[i])
                    .collect();
                let m = members.len() as f64;
                let cx = members.iter().map(|p| p[0]).sum::<f64>() / m;
                let cy = members.iter().map(|p| p[1]).sum::<f64>() / m;
                cost += members
                    .iter()
                    .map(|p| (p[0] - cx).powi(2) + (p[1] - cy).powi(2))
                    .sum::<f64>();
            }
            best = best.min(cost);
        }
        best
    }

    #[test]
    fn six_points_reach_the_exhaustive_optimum() {
        let pts = [[0.0, 0.0], [1.0, 0.5], [0.5, 1.5], [6.0, 5.0], [7.0, 6.5], [5.5, 7.0]];
        let data = Matrix::from_rows(&pts).unwrap();
        let oracle = brute_force_two_means(&pts);
        for seed in 0..10 {
            let r = kmeans(&data, 2, seed).unwrap();
            assert!((r.inertia - oracle).abs() < 1e-12, "seed {seed}: {} vs {oracle}", r.inertia);
        }
    }

    #[test]
    fn separated_blobs_recover_membership() {
        let mut rows = Vec::new();
        for i in 0..10 {
            let t = i as f64 * 0.01;
            rows.push(vec![t, -t]);
            rows.push(vec![10.0 + t, 10.0 - t]);
        }
        let data = Matrix::from_rows(&rows).unwrap();
        let r = kmeans(&data, 2, 3).unwrap();
        for i in 0..10 {
            assert_eq!(r.labels[2 * i], r.labels[0]);
            assert_eq!(r.labels[2 * i + 1], r.labels[1]);
        }
        assert_ne!(r.labels[0], r.labels[1]);
    }

    #[test]
    fn k_equal_n_gives_zero_inertia() {
        let data = Matrix::from_rows(&[[0.0, 1.0], [2.0, 3.0], [-1.0, 5.0], [4.0, 4.0]]).unwrap();
        let r = kmeans(&data, 4, 11).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut l = r.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2, 3]);
    }

    #[test]
    fn identical_points_terminate() {
        let data = Matrix::from_rows(&vec![vec![1.0, 1.0]; 6]).unwrap();
        let r = kmeans(&data, 2, 0).unwrap();
        assert_eq!(r.inertia, 0.0);
        assert!(r.iterations <= KMEANS_MAX_ITERS);
    }

    #[test]
    fn rejects_k_above_n() {
        assert!(kmeans(&Matrix::zeros(2, 2), 3, 0).is_err());
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn inertia_never_increases_and_seed_is_deterministic(
            pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 4..40),
            k in 1usize..5,
            seed in any::<u64>(),
        ) {
            let rows: Vec<Vec<f64>> = pts.iter().map(|&(a, b)| vec![a, b]).collect();
            let data = Matrix::from_rows(&rows).unwrap();
            let k = k.min(rows.len());
            let r = kmeans(&data, k, seed).unwrap();
            for w in r.inertia_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9);
            }
            let again = kmeans(&data, k, seed).unwrap();
            prop_assert_eq!(r.labels, again.labels);
        }
    }
}
