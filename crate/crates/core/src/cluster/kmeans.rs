use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{distinct_rows, squared_distance, Matrix};
use crate::seed;

pub const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    pub seed: u64,
    pub restarts: usize,
    /// Index of the restart that produced this result.
    pub best_restart: usize,
    /// Inertia after every Lloyd iteration and transfer sweep of the winning restart.
    pub inertia_trace: Vec<f64>,
}

impl KMeansResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Greedy distance-weighted seeding: each new centre is the best of a few
/// D²-sampled candidates, judged by the potential it leaves behind.
fn seed_centroids(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.rows();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let first = rng.random_range(0..n);
    let mut centroids = vec![points.row(first).to_vec()];
    let mut closest: Vec<f64> = points
        .iter_rows()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    let unit = Uniform::new(0.0f64, 1.0).expect("valid range");

    while centroids.len() < k {
        let potential: f64 = closest.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let target = unit.sample(rng) * potential;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, d) in closest.iter().enumerate() {
                acc += d;
                if *d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Round-off can leave the target past the final bucket.
            let pick = pick.unwrap_or_else(|| {
                closest
                    .iter()
                    .rposition(|d| *d > 0.0)
                    .expect("fewer distinct points than k")
            });
            let updated: Vec<f64> = points
                .iter_rows()
                .zip(&closest)
                .map(|(p, d)| d.min(squared_distance(p, points.row(pick))))
                .collect();
            let pot: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| pot < b.0) {
                best = Some((pot, pick, updated));
            }
        }
        let (_, pick, updated) = best.expect("at least one trial");
        centroids.push(points.row(pick).to_vec());
        closest = updated;
    }
    centroids
}

fn means(points: &Matrix, assignments: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let d = points.cols();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter_rows().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    (sums, counts)
}

pub(crate) fn inertia_of(points: &Matrix, centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter_rows()
        .zip(assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a]))
        .sum()
}

/// Moves the farthest-from-centroid points into empty clusters.
fn reseed_empty(points: &Matrix, assignments: &mut [usize], k: usize) -> Vec<Vec<f64>> {
    loop {
        let (centroids, counts) = means(points, assignments, k);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return centroids;
        };
        let mut far = (0, -1.0);
        for (i, p) in points.iter_rows().enumerate() {
            let d = squared_distance(p, &centroids[assignments[i]]);
            if d > far.1 {
                far = (i, d);
            }
        }
        assignments[far.0] = empty;
    }
}

/// Single-point transfers (Hartigan's rule) from a Lloyd fixed point: a
/// point moves when the exact change in inertia, accounting for both
/// centroid shifts, is negative. Each sweep lowers inertia, so this
/// terminates, and the result is still a Lloyd fixed point.
fn refine(
    points: &Matrix,
    assignments: &mut [usize],
    k: usize,
    trace: &mut Vec<f64>,
    budget: usize,
) -> usize {
    let (mut centroids, mut counts) = means(points, assignments, k);
    let mut sweeps = 0;
    while sweeps < budget {
        let mut moved = false;
        for (i, p) in points.iter_rows().enumerate() {
            let a = assignments[i];
            let na = counts[a] as f64;
            if counts[a] == 1 {
                continue;
            }
            let removal = na / (na - 1.0) * squared_distance(p, &centroids[a]);
            let mut best: Option<(usize, f64)> = None;
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let delta = nb / (nb + 1.0) * squared_distance(p, &centroids[b]) - removal;
                if delta < -1e-12 * removal && best.is_none_or(|(_, d)| delta < d) {
                    best = Some((b, delta));
                }
            }
            if let Some((b, _)) = best {
                let nb = counts[b] as f64;
                for (j, v) in p.iter().enumerate() {
                    centroids[a][j] = (centroids[a][j] * na - v) / (na - 1.0);
                    centroids[b][j] = (centroids[b][j] * nb + v) / (nb + 1.0);
                }
                counts[a] -= 1;
                counts[b] += 1;
                assignments[i] = b;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        sweeps += 1;
        // Fresh means keep the trace free of incremental drift.
        (centroids, counts) = means(points, assignments, k);
        trace.push(inertia_of(points, &centroids, assignments));
    }
    sweeps
}

struct Run {
    centroids: Vec<Vec<f64>>,
    assignments: Vec<usize>,
    inertia: f64,
    iterations: usize,
    trace: Vec<f64>,
}

fn lloyd(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Run {
    let mut centroids = seed_centroids(points, k, rng);
    let mut assignments: Vec<usize> = points
        .iter_rows()
        .map(|p| nearest(p, &centroids).0)
        .collect();
    centroids = reseed_empty(points, &mut assignments, k);
    let mut trace = vec![inertia_of(points, &centroids, &assignments)];
    let mut iterations = 1;

    while iterations < MAX_ITERATIONS {
        let next: Vec<usize> = points
            .iter_rows()
            .map(|p| nearest(p, &centroids).0)
            .collect();
        if next == assignments {
            break;
        }
        assignments = next;
        centroids = reseed_empty(points, &mut assignments, k);
        trace.push(inertia_of(points, &centroids, &assignments));
        iterations += 1;
    }
    iterations += refine(points, &mut assignments, k, &mut trace, MAX_ITERATIONS);
    let (centroids, _) = means(points, &assignments, k);
    Run {
        inertia: inertia_of(points, &centroids, &assignments),
        centroids,
        assignments,
        iterations,
        trace,
    }
}

/// Lloyd's k-means with greedy k-means++ seeding, polished by single-point
/// transfers, over `restarts` independent runs; the lowest-inertia run wins,
/// ties to the earlier restart.
pub fn kmeans(points: &Matrix, k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    if k < 1 {
        return Err(Error::config("k must be at least 1"));
    }
    if restarts == 0 {
        return Err(Error::config("clustering.restarts must be at least 1"));
    }
    let distinct = distinct_rows(points);
    if k > distinct {
        return Err(Error::config(format!(
            "k = {k} exceeds the {distinct} distinct point(s) available"
        )));
    }
    let runs: Vec<Run> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed::derive_indexed(seed, "kmeans/restart", r as u64));
            lloyd(points, k, &mut rng)
        })
        .collect();
    let (best_restart, best) = runs
        .into_iter()
        .enumerate()
        .reduce(|a, b| if b.1.inertia < a.1.inertia { b } else { a })
        .expect("restarts >= 1");
    Ok(KMeansResult {
        k,
        centroids: best.centroids,
        assignments: best.assignments,
        inertia: best.inertia,
        iterations: best.iterations,
        seed,
        restarts,
        best_restart,
        inertia_trace: best.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_pairs_of_identical_points() {
        let pts = Matrix::from_rows(&[[0.0, 0.0], [5.0, 5.0], [0.0, 0.0], [5.0, 5.0]]);
        let r = kmeans(&pts, 2, 1, 3).unwrap();
        assert_eq!(r.inertia, 0.0);
        assert_eq!(r.assignments[0], r.assignments[2]);
        assert_eq!(r.assignments[1], r.assignments[3]);
        assert_ne!(r.assignments[0], r.assignments[1]);
        let mut cs = r.centroids.clone();
        cs.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(cs, [vec![0.0, 0.0], vec![5.0, 5.0]]);
    }

    #[test]
    fn k_equal_to_n_gives_singletons() {
        let pts = Matrix::from_rows(&[[0.0], [1.0], [3.0], [7.0], [8.5]]);
        let r = kmeans(&pts, 5, 9, 2).unwrap();
        assert_eq!(r.inertia, 0.0);
        assert_eq!(r.cluster_sizes(), [1; 5]);
    }

    #[test]
    fn too_few_distinct_points() {
        let pts = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]);
        assert!(matches!(kmeans(&pts, 2, 0, 1), Err(Error::Config(_))));
        assert!(kmeans(&pts, 1, 0, 1).is_ok());
    }

    #[test]
    fn deterministic_under_seed() {
        let pts = Matrix::from_vec(40, 2, (0..80).map(|i| ((i * 37) % 23) as f64).collect());
        let a = kmeans(&pts, 4, 17, 5).unwrap();
        let b = kmeans(&pts, 4, 17, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reported_inertia_matches_recomputation() {
        let pts = Matrix::from_vec(
            30,
            3,
            (0..90).map(|i| ((i * 7919) % 101) as f64 / 10.0).collect(),
        );
        let r = kmeans(&pts, 3, 5, 4).unwrap();
        let again = inertia_of(&pts, &r.centroids, &r.assignments);
        assert!((r.inertia - again).abs() <= 1e-9 * again.max(1.0));
        assert!(r.cluster_sizes().iter().all(|&s| s > 0));
        for w in r.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn empty_cluster_is_reseeded_with_farthest_point() {
        let pts = Matrix::from_rows(&[[0.0], [1.0], [10.0]]);
        let mut a = vec![0, 0, 0];
        let c = reseed_empty(&pts, &mut a, 2);
        assert_eq!(a, [0, 0, 1]);
        assert_eq!(c, [vec![0.5], vec![10.0]]);
    }
    #[test]
    fn transfers_escape_a_lloyd_fixed_point() {
        // {0,4 | 5,9} is Lloyd-stable with inertia 16; moving 4 across gives 14.
        let pts = Matrix::from_rows(&[[0.0], [4.0], [5.0], [9.0]]);
        let mut a = vec![0, 0, 1, 1];
        let mut trace = vec![16.0];
        refine(&pts, &mut a, 2, &mut trace, MAX_ITERATIONS);
        assert_eq!(a, [0, 1, 1, 1]);
        assert_eq!(trace, [16.0, 14.0]);
    }

    #[test]
    fn result_is_a_lloyd_fixed_point() {
        for seed in 0..20u64 {
            let pts = Matrix::from_vec(
                25,
                2,
                (0..50)
                    .map(|i| ((i as u64 * 2654435761 + seed * 97) % 1000) as f64 / 100.0)
                    .collect(),
            );
            let r = kmeans(&pts, 4, seed, 3).unwrap();
            for (p, &a) in pts.iter_rows().zip(&r.assignments) {
                assert_eq!(nearest(p, &r.centroids).0, a);
            }
            assert!(r.inertia_trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
