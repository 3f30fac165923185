#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selfjudge_core::lm::{NGramModel, TokenId, Vocab};

/// Model trained on a random corpus; sparse enough that contexts differ.
pub fn random_model(vocab: usize, order: usize, seed: u64) -> NGramModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus: Vec<Vec<TokenId>> = (0..30)
        .map(|_| {
            let len = rng.random_range(3..12);
            // skewed toward low ids so argmaxes are informative
            (0..len).map(|_| (rng.random::<f64>().powi(2) * vocab as f64) as usize).collect()
        })
        .collect();
    NGramModel::train(Vocab::symbolic(vocab).unwrap(), &corpus, order, 0.5).unwrap()
}

pub fn random_seq(rng: &mut impl Rng, vocab: usize, len: usize) -> Vec<TokenId> {
    (0..len).map(|_| rng.random_range(0..vocab)).collect()
}
