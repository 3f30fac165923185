//! Corpus sources: the seeded synthetic reference chain and plain-text
//! tokenization.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{Distribution, TokenId, Vocab};
use crate::lm::sample_token;

pub const REFERENCE_VOCAB: usize = 20;
const REFERENCE_CHAIN_SEED: u64 = 459;
const UNIFORM_FLOOR: f64 = 0.02;

/// First-order Markov chain over 20 symbols (an order-2 model in n-gram
/// terms). Symbols come in synonym pairs `(2g, 2g + 1)` that share a
/// successor row, so swapping a token for its synonym leaves the future
/// distribution untouched.
///
/// Rows cycle through three shapes: an exact tie between a successor and its
/// synonym, an exact tie between two unrelated successors, and a clear winner.
/// Two small tail successors per row and a 2% uniform floor make every symbol
/// reachable.
#[derive(Debug, Clone)]
pub struct ReferenceChain {
    rows: Vec<Distribution>,
}

impl Default for ReferenceChain {
    fn default() -> Self {
        Self::new()
    }
}

impl ReferenceChain {
    pub fn new() -> Self {
        Self::with_seed(REFERENCE_CHAIN_SEED)
    }

    pub fn with_seed(seed: u64) -> Self {
        let n = REFERENCE_VOCAB;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<TokenId> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut group_rows = Vec::with_capacity(n / 2);
        for g in 0..n / 2 {
            let a = perm[2 * g];
            let b = match g % 3 {
                0 => a ^ 1,
                _ if perm[2 * g + 1] / 2 != a / 2 => perm[2 * g + 1],
                _ => perm[(2 * g + 4) % n],
            };
            let (pa, pb) = if g % 3 == 2 { (0.6, 0.2) } else { (0.4, 0.4) };
            let mut w = vec![0.0; n];
            w[a] += pa;
            w[b] += pb;
            // tails cover every symbol across the groups, so all are reachable
            let tail = 1.0 - pa - pb;
            w[perm[(2 * g + 2) % n]] += tail * 0.6;
            w[perm[(2 * g + 3) % n]] += tail * 0.4;
            for x in w.iter_mut() {
                *x = *x * (1.0 - UNIFORM_FLOOR) + UNIFORM_FLOOR / n as f64;
            }
            group_rows.push(Distribution::from_weights(w).expect("positive mass"));
        }
        let rows = (0..n).map(|t| group_rows[t / 2].clone()).collect();
        Self { rows }
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::symbolic(self.rows.len()).expect("20 symbols")
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, prev: TokenId) -> &Distribution {
        &self.rows[prev]
    }

    pub fn synonym(token: TokenId) -> TokenId {
        token ^ 1
    }

    pub fn sample_sequence<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<TokenId> {
        let mut seq = Vec::with_capacity(len);
        if len == 0 {
            return seq;
        }
        seq.push(rng.random_range(0..self.size()));
        while seq.len() < len {
            let prev = *seq.last().unwrap();
            seq.push(sample_token(&self.rows[prev], 1.0, rng));
        }
        seq
    }

    pub fn sample_corpus(&self, sequences: usize, len: usize, seed: u64) -> Vec<Vec<TokenId>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..sequences).map(|_| self.sample_sequence(len, &mut rng)).collect()
    }

    /// Stationary distribution by power iteration.
    pub fn stationary(&self) -> Vec<f64> {
        let n = self.size();
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..10_000 {
            let mut next = vec![0.0; n];
            for (s, &mass) in pi.iter().enumerate() {
                for (t, &p) in self.rows[s].probs().iter().enumerate() {
                    next[t] += mass * p;
                }
            }
            let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if delta < 1e-15 {
                break;
            }
        }
        pi
    }

    /// Entropy rate in nats per step under the stationary distribution.
    pub fn entropy_rate(&self) -> f64 {
        self.stationary()
            .iter()
            .zip(&self.rows)
            .map(|(&w, row)| w * row.entropy())
            .sum()
    }
}

/// A prompt with a stable identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prompt {
    pub id: usize,
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenization {
    Character,
    Whitespace,
}

impl Tokenization {
    pub fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            Tokenization::Whitespace => line.split_whitespace().collect(),
            Tokenization::Character => line
                .char_indices()
                .map(|(i, c)| &line[i..i + c.len_utf8()])
                .collect(),
        }
    }
}

/// Tokenizes non-empty lines and builds a sorted vocabulary over them.
pub fn tokenize_text(text: &str, tokenization: Tokenization) -> Result<(Vocab, Vec<Vec<TokenId>>)> {
    let lines: Vec<Vec<&str>> = text
        .lines()
        .map(|l| tokenization.split(l))
        .filter(|toks| !toks.is_empty())
        .collect();
    if lines.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let unique: BTreeSet<&str> = lines.iter().flatten().copied().collect();
    let vocab = Vocab::new(unique.into_iter().map(str::to_string).collect())?;
    let seqs = lines
        .into_iter()
        .map(|toks| vocab.encode(toks))
        .collect::<Result<_>>()?;
    Ok((vocab, seqs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_distributions_and_synonyms_share_rows() {
        let chain = ReferenceChain::new();
        for t in 0..chain.size() {
            let s: f64 = chain.row(t).probs().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert_eq!(chain.row(t), chain.row(ReferenceChain::synonym(t)));
        }
    }

    #[test]
    fn stationary_is_fixed_point() {
        let chain = ReferenceChain::new();
        let pi = chain.stationary();
        for t in 0..chain.size() {
            let back: f64 = (0..chain.size()).map(|s| pi[s] * chain.row(s).prob(t)).sum();
            assert!((back - pi[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn corpus_is_seeded() {
        let chain = ReferenceChain::new();
        assert_eq!(chain.sample_corpus(3, 10, 1), chain.sample_corpus(3, 10, 1));
        assert_ne!(chain.sample_corpus(3, 10, 1), chain.sample_corpus(3, 10, 2));
    }

    #[test]
    fn tokenizes_characters_and_words() {
        let (v, seqs) = tokenize_text("ab a\n\nba", Tokenization::Character).unwrap();
        assert_eq!(v.tokens(), &[" ", "a", "b"]);
        assert_eq!(seqs, vec![vec![1, 2, 0, 1], vec![2, 1]]);
        let (v, seqs) = tokenize_text("the cat\nthe dog", Tokenization::Whitespace).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(seqs[0][0], seqs[1][0]);
        assert!(tokenize_text("\n\n", Tokenization::Whitespace).is_err());
    }
}
