//! Shared fixtures for the criterion benchmarks under `benches/`.

use kdlnet_core::grad::{forward_batch, Sample};
use kdlnet_core::{Activations, ArchSpec, Combine, Matrix, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Matrix with entries uniform on `[-1, 1)`.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn network(arch: &str, seed: u64) -> Network {
    let spec = ArchSpec::parse(arch).expect("valid architecture");
    Network::init(&spec, Activations::default(), Combine::ActivateEach, seed).expect("network")
}

/// `n` random input/target pairs sized for `net`.
pub fn batch(net: &Network, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let x = random_matrix(net.input_len(), n, seed);
    let y = random_matrix(net.output_len(), n, seed + 1);
    (
        (0..n).map(|j| x.col(j).to_vec()).collect(),
        (0..n).map(|j| y.col(j).to_vec()).collect(),
    )
}

pub fn samples<'a>(xs: &'a [Vec<f64>], ys: &'a [Vec<f64>]) -> Vec<Sample<'a>> {
    xs.iter().zip(ys).map(|(x, y)| Sample { x, y }).collect()
}

/// Forward pass over a batch, panicking on error; used to warm caches.
pub fn run_forward(net: &Network, batch: &[Sample]) -> usize {
    let mut flops = kdlnet_core::Flops::new();
    forward_batch(net, batch, &mut flops).expect("forward").len()
}
