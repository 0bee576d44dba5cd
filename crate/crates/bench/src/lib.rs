//! Seeded fixtures shared by the benchmarks.

use playstyle::features::FeatureSpec;
use playstyle::ingest::Session;
use playstyle::simgen::{self, SimConfig};
use playstyle::{Matrix, PipelineConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` points around `k` centres spaced along the diagonal.
pub fn blobs(n: usize, dims: usize, k: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n)
        .flat_map(|i| {
            let centre = (i % k) as f64 * 6.0;
            (0..dims)
                .map(|_| centre + rng.random_range(-1.5..1.5))
                .collect::<Vec<_>>()
        })
        .collect();
    Matrix::from_vec(n, dims, data)
}

pub fn labels(n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|i| i % k).collect()
}

/// Simulated sessions and the synthetic feature set.
pub fn sessions(n: usize, seed: u64) -> (Vec<Session>, Vec<FeatureSpec>, PipelineConfig) {
    let sim = simgen::generate(&SimConfig::three_archetypes(n, seed))
        .expect("preset archetypes are valid");
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/synthetic.json");
    let cfg = PipelineConfig::load(path.as_ref()).expect("configs/synthetic.json");
    let specs = cfg.specs().expect("inline features").to_vec();
    (sim.sessions, specs, cfg)
}
