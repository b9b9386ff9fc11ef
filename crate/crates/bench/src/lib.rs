//! Fixtures shared by the criterion benches under `benches/`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sarcasm_core::corpus::{EncodedSequence, PAD};
use sarcasm_core::nncore::Tensor;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-0.5..0.5))
}

/// `n` sequences of `max_len` slots with lengths spread over `1..=max_len`.
pub fn random_batch(n: usize, max_len: usize, vocab: usize, seed: u64) -> Vec<EncodedSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            EncodedSequence {
                indices: (0..max_len)
                    .map(|t| if t < len { rng.random_range(2..vocab) } else { PAD })
                    .collect(),
                true_length: len,
            }
        })
        .collect()
}
