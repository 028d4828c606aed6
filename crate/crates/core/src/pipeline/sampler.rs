//! Disjoint per-epoch subsets of the training samples.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Number of chunks `⌈1/ratio⌉`.
pub fn num_chunks(data_ratio: f64) -> Result<usize> {
    if !(data_ratio > 0.0 && data_ratio <= 1.0) {
        return Err(Error::config(format!("data ratio must be in (0, 1], got {data_ratio}")));
    }
    Ok(((1.0 / data_ratio) - 1e-9).ceil().max(1.0) as usize)
}

/// A seed-determined permutation of `0..n` cut into `⌈1/ratio⌉` contiguous
/// chunks whose sizes differ by at most one; epoch `e` gets chunk `e mod k`.
pub fn disjoint_epoch_sampler(n: usize, data_ratio: f64, epoch: usize, seed: u64) -> Result<Vec<usize>> {
    let k = num_chunks(data_ratio)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let chunk = epoch % k;
    Ok(order[chunk * n / k..(chunk + 1) * n / k].to_vec())
}
