use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{distance, Matrix};

/// Mean silhouette over all points, using Euclidean distance.
///
/// Labels may be any integers; each distinct label is one cluster. Points in
/// singleton clusters score 0, as do points with `a = b = 0`.
pub fn silhouette(points: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != points.rows() {
        return Err(Error::data(format!(
            "{} labels for {} points",
            labels.len(),
            points.rows()
        )));
    }
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::data(
            "silhouette is undefined for fewer than two clusters",
        ));
    }
    let dense: Vec<usize> = labels
        .iter()
        .map(|l| ids.binary_search(l).expect("label present"))
        .collect();
    let k = ids.len();
    let mut sizes = vec![0usize; k];
    for &c in &dense {
        sizes[c] += 1;
    }

    let scores: Vec<f64> = (0..points.rows())
        .into_par_iter()
        .map(|i| {
            let own = dense[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            let p = points.row(i);
            for (j, q) in points.iter_rows().enumerate() {
                if j != i {
                    sums[dense[j]] += distance(p, q);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Silhouette with a size cap: above `cap` points a seeded uniform subsample
/// of `cap` points is scored instead. Returns the score and whether sampling
/// happened.
pub fn silhouette_capped(
    points: &Matrix,
    labels: &[usize],
    cap: usize,
    seed: u64,
) -> Result<(f64, bool)> {
    if points.rows() <= cap {
        return Ok((silhouette(points, labels)?, false));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, points.rows(), cap).into_vec();
    picked.sort_unstable();
    let sub = points.select_rows(|i| picked.binary_search(&i).is_ok());
    let sub_labels: Vec<usize> = picked.iter().map(|&i| labels[i]).collect();
    Ok((silhouette(&sub, &sub_labels)?, true))
}
