//! k-means clustering with the number of clusters chosen by average
//! silhouette over a sweep.

mod kmeans;
mod silhouette;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kmeans::{kmeans, KMeansResult, MAX_ITERATIONS};
pub use silhouette::{silhouette, silhouette_capped};

use crate::error::{Error, Result};
use crate::matrix::{distinct_rows, Matrix};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KSelection {
    Auto,
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub avg_silhouette: f64,
    pub inertia: f64,
    /// True when the silhouette was scored on a subsample.
    pub sampled: bool,
    pub result: KMeansResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub chosen_k: usize,
    pub selection: KSelection,
    pub warnings: Vec<String>,
}

impl SweepTable {
    pub fn chosen(&self) -> &SweepRow {
        self.rows
            .iter()
            .find(|r| r.k == self.chosen_k)
            .expect("chosen k is always in the table")
    }
}

/// Knobs for [`sweep_k`].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepParams {
    pub k_min: usize,
    pub k_max: usize,
    pub seed: u64,
    pub restarts: usize,
    pub k_override: Option<usize>,
    pub silhouette_cap: usize,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            k_min: 2,
            k_max: 10,
            seed: 0,
            restarts: 10,
            k_override: None,
            silhouette_cap: 20_000,
        }
    }
}

/// Seed used for a given k, independent of the sweep range.
pub fn seed_for_k(master: u64, k: usize) -> u64 {
    seed::derive_indexed(master, "sweep/k", k as u64)
}

/// Runs k-means and the average silhouette for every k in the range and
/// picks the global silhouette maximum (ties to smaller k), unless an
/// override fixes k. The override is added to the table if it lies beyond
/// `k_max`.
pub fn sweep_k(points: &Matrix, params: &SweepParams) -> Result<SweepTable> {
    if params.k_min < 2 {
        return Err(Error::config("clustering.k_min must be at least 2"));
    }
    if params.k_max < params.k_min {
        return Err(Error::config(format!(
            "clustering.k_max ({}) is below clustering.k_min ({})",
            params.k_max, params.k_min
        )));
    }
    let distinct = distinct_rows(points);
    let mut warnings = Vec::new();
    if let Some(k) = params.k_override {
        if k < 2 {
            return Err(Error::config(format!("k override {k} must be at least 2")));
        }
        if k > distinct {
            return Err(Error::config(format!(
                "k override {k} exceeds the {distinct} distinct point(s) available"
            )));
        }
    }
    let mut k_max = params.k_max;
    if distinct < k_max {
        if distinct < params.k_min {
            return Err(Error::config(format!(
                "only {distinct} distinct point(s); cannot cluster with k >= {}",
                params.k_min
            )));
        }
        warnings.push(format!(
            "sweep truncated to k <= {distinct}: only {distinct} distinct points"
        ));
        k_max = distinct;
    }
    let mut ks: Vec<usize> = (params.k_min..=k_max).collect();
    if let Some(k) = params.k_override.filter(|k| !ks.contains(k)) {
        ks.push(k);
        ks.sort_unstable();
    }

    let rows = ks
        .par_iter()
        .map(|&k| {
            let result = kmeans(points, k, seed_for_k(params.seed, k), params.restarts)?;
            let sample_seed = seed::derive_indexed(params.seed, "sweep/silhouette", k as u64);
            let (avg_silhouette, sampled) = silhouette_capped(
                points,
                &result.assignments,
                params.silhouette_cap,
                sample_seed,
            )?;
            Ok(SweepRow {
                k,
                avg_silhouette,
                inertia: result.inertia,
                sampled,
                result,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    if rows.iter().any(|r| r.sampled) {
        warnings.push(format!(
            "silhouette scored on a {}-point subsample",
            params.silhouette_cap
        ));
    }

    let (chosen_k, selection) = match params.k_override {
        Some(k) => (k, KSelection::Override),
        None => {
            let mut best = &rows[0];
            for r in &rows[1..] {
                if r.avg_silhouette > best.avg_silhouette {
                    best = r;
                }
            }
            (best.k, KSelection::Auto)
        }
    };
    Ok(SweepTable {
        rows,
        chosen_k,
        selection,
        warnings,
    })
}
