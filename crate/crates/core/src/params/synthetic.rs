//! Seeded two-class Gaussian blob generator for desk-scale experiments.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;

/// Class means sit at -0.5 and +0.5 on the first feature axis (unit
/// distance apart); this spread keeps the classes linearly separable for
/// all practical sample counts.
const CLASS_MEAN_OFFSET: f64 = 0.5;
const NOISE_SIGMA: f64 = 0.15;

/// Equal-sized clusters of two-class blobs, deterministic per seed.
pub fn gen_synthetic(clusters: usize, per_cluster: usize, dim: usize, seed: u64) -> Vec<Dataset> {
    gen_synthetic_skewed(clusters, per_cluster, dim, seed, 0.0)
}

/// Like [`gen_synthetic`] but cluster `i` holds
/// `round(per_cluster * (1 + skew * i))` rows, so dataset-size weighting in
/// aggregation actually matters.
pub fn gen_synthetic_skewed(
    clusters: usize,
    per_cluster: usize,
    dim: usize,
    seed: u64,
    skew: f64,
) -> Vec<Dataset> {
    assert!(clusters >= 1 && per_cluster >= 1 && dim >= 1, "all counts must be >= 1");
    assert!(skew >= 0.0 && skew.is_finite(), "skew must be finite and >= 0");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(clusters);
    for c in 0..clusters {
        let rows = ((per_cluster as f64) * (1.0 + skew * c as f64)).round().max(1.0) as usize;
        let mut features = Vec::with_capacity(rows * dim);
        let mut labels = Vec::with_capacity(rows);
        for r in 0..rows {
            let label = (r % 2) as u32;
            let mean0 = if label == 0 { -CLASS_MEAN_OFFSET } else { CLASS_MEAN_OFFSET };
            for k in 0..dim {
                let noise: f64 = StandardNormal.sample(&mut rng);
                let mean = if k == 0 { mean0 } else { 0.0 };
                features.push(mean + NOISE_SIGMA * noise);
            }
            labels.push(label);
        }
        out.push(Dataset::new(features, labels, dim, c as u32).expect("generated shape is valid"));
    }
    out
}
