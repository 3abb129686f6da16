//! Lloyd's k-means with k-means++ seeding, tuned for small binary row sets.
//!
//! All randomness flows through the caller-provided seed; repeated runs with
//! the same inputs produce the same partition. Several restarts are taken and
//! the lowest-SSE result kept, which on the small instances this crate feeds
//! it (tens of neurons per slice) reliably lands on the global optimum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MAX_ITERATIONS: usize = 300;
const RESTARTS: usize = 16;

/// Partition `points` into at most `k` non-empty clusters.
///
/// Returns per-point cluster assignments renumbered so that cluster labels
/// appear in first-use order, plus the within-cluster sum of squared
/// distances. Fewer than `k` clusters come back when points coincide or when
/// `points.len() < k`.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> (Vec<usize>, f64) {
    assert!(k >= 1, "k must be at least 1");
    assert!(!points.is_empty(), "kmeans needs at least one point");
    let n = points.len();
    if k == 1 {
        let centroid = mean_of(points, &(0..n).collect::<Vec<_>>());
        let sse = (0..n).map(|i| sq_dist(&points[i], &centroid)).sum();
        return (vec![0; n], sse);
    }
    if n <= k {
        return ((0..n).collect(), 0.0);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..RESTARTS {
        let (assignments, sse) = lloyd(points, k, &mut rng);
        let better = match &best {
            Some((_, best_sse)) => sse < *best_sse,
            None => true,
        };
        if better {
            best = Some((assignments, sse));
        }
    }
    let (assignments, sse) = best.expect("at least one restart ran");
    (renumber(&assignments), sse)
}

fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let n = points.len();
    let mut centroids = plus_plus_init(points, k, rng);
    let mut assignments = vec![usize::MAX; n];

    for _ in 0..MAX_ITERATIONS {
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        let changed = next != assignments;
        assignments = next;

        // Refill clusters that lost all members with the farthest point.
        loop {
            let mut counts = vec![0usize; centroids.len()];
            for &a in &assignments {
                counts[a] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let (far_idx, far_d) = assignments
                .iter()
                .enumerate()
                .map(|(i, &a)| (i, sq_dist(&points[i], &centroids[a])))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("points nonempty");
            if far_d == 0.0 {
                // Every point coincides with its centroid; the cluster stays
                // empty and is dropped by renumbering.
                centroids.remove(empty);
                continue;
            }
            assignments[far_idx] = empty;
            centroids[empty] = points[far_idx].clone();
        }

        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assignments[i] == c).collect();
            *centroid = mean_of(points, &members);
        }
        if !changed {
            break;
        }
    }

    let sse = (0..n).map(|i| sq_dist(&points[i], &centroids[assignments[i]])).sum();
    (assignments, sse)
}

// kmeans++: first center uniform, later centers sampled with probability
// proportional to squared distance from the nearest chosen center.
fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total == 0.0 {
            break; // fewer distinct points than k
        }
        let mut target = rng.random::<f64>() * total;
        let mut chosen = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if target < w {
                chosen = i;
                break;
            }
            target -= w;
        }
        centers.push(points[chosen].clone());
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(p, centers.last().expect("just pushed"));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centers
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn mean_of(points: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let dim = points[0].len();
    let mut mean = vec![0.0; dim];
    for &i in members {
        for (m, v) in mean.iter_mut().zip(&points[i]) {
            *m += v;
        }
    }
    if !members.is_empty() {
        for m in &mut mean {
            *m /= members.len() as f64;
        }
    }
    mean
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn renumber(assignments: &[usize]) -> Vec<usize> {
    let mut map = std::collections::BTreeMap::new();
    let mut next = 0;
    assignments
        .iter()
        .map(|&a| {
            *map.entry(a).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k1_groups_everything() {
        let points = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let (assignments, _) = kmeans(&points, 1, 7);
        assert_eq!(assignments, vec![0, 0, 0]);
    }

    #[test]
    fn identical_rows_share_a_group() {
        let points = vec![vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let (assignments, sse) = kmeans(&points, 2, 3);
        assert_eq!(assignments[0], assignments[1]);
        assert_ne!(assignments[0], assignments[2]);
        assert_eq!(sse, 0.0);
    }

    #[test]
    fn fewer_points_than_k_gives_singletons() {
        let points = vec![vec![0.0], vec![5.0]];
        let (assignments, sse) = kmeans(&points, 4, 0);
        assert_eq!(assignments, vec![0, 1]);
        assert_eq!(sse, 0.0);
    }

    #[test]
    fn all_identical_points_collapse_to_one_cluster() {
        let points = vec![vec![1.0, 0.0]; 5];
        let (assignments, sse) = kmeans(&points, 3, 11);
        assert!(assignments.iter().all(|&a| a == 0));
        assert_eq!(sse, 0.0);
    }

    #[test]
    fn deterministic_under_seed() {
        let points: Vec<Vec<f64>> = (0..12).map(|i| vec![(i % 4) as f64, (i / 4) as f64]).collect();
        let a = kmeans(&points, 3, 99);
        let b = kmeans(&points, 3, 99);
        assert_eq!(a, b);
    }
}
