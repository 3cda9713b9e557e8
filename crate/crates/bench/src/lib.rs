//! Input generators shared by the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `n` standard-normal points in `dim` dimensions with labels cycling
/// through `classes`, so every class is equally represented.
pub fn labeled_points(n: usize, dim: usize, classes: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_simple_fn((n, dim), || rng.sample(StandardNormal));
    let labels = (0..n).map(|i| i % classes).collect();
    (x, labels)
}
