//! Seeded problem generators shared by the benches.

use adfuse_core::nalgebra::DMatrix;
use adfuse_core::Label;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Two Gaussian classes `+-shift` apart along the first axis.
pub fn two_class(n: usize, dim: usize, shift: f64, seed: u64) -> (DMatrix<f64>, Vec<Label>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<Label> = (0..n).map(|i| Label::from(i % 2 == 0)).collect();
    let x = DMatrix::from_fn(n, dim, |i, j| {
        let z: f64 = StandardNormal.sample(&mut rng);
        if j == 0 {
            z + if labels[i] == 1 { shift } else { -shift }
        } else {
            z
        }
    });
    (x, labels)
}
