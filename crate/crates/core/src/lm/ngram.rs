use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Distribution, TokenId, Vocab};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Additive-smoothed count-based language model of order `k`: the next token
/// is conditioned on at most the last `k - 1` tokens.
///
/// Counts are kept for every context length `0..k`, so a prefix whose full
/// context was never observed backs off to the longest observed suffix of it.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    alpha: f64,
    vocab: Vocab,
    table: BTreeMap<Vec<TokenId>, ContextCounts>,
}

#[derive(Debug, Clone, PartialEq)]
struct ContextCounts {
    counts: Vec<u64>,
    total: u64,
}

impl ContextCounts {
    fn new(size: usize) -> Self {
        Self { counts: vec![0; size], total: 0 }
    }

    fn add(&mut self, token: TokenId, n: u64) {
        self.counts[token] += n;
        self.total += n;
    }
}

impl NGramModel {
    pub fn train(vocab: Vocab, corpus: &[Vec<TokenId>], order: usize, alpha: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("order must be at least 1".into()));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        if corpus.iter().all(|s| s.is_empty()) {
            return Err(Error::EmptyCorpus);
        }
        let size = vocab.len();
        let mut table: BTreeMap<Vec<TokenId>, ContextCounts> = BTreeMap::new();
        for seq in corpus {
            if let Some(&bad) = seq.iter().find(|&&t| t >= size) {
                return Err(Error::UnknownToken(format!("id {bad}")));
            }
            for (j, &tok) in seq.iter().enumerate() {
                for len in 0..=(order - 1).min(j) {
                    table
                        .entry(seq[j - len..j].to_vec())
                        .or_insert_with(|| ContextCounts::new(size))
                        .add(tok, 1);
                }
            }
        }
        Ok(Self { order, alpha, vocab, table })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Longest observed suffix of the last `k - 1` prefix tokens.
    pub fn effective_context<'a>(&self, prefix: &'a [TokenId]) -> &'a [TokenId] {
        let max_len = (self.order - 1).min(prefix.len());
        for len in (0..=max_len).rev() {
            let ctx = &prefix[prefix.len() - len..];
            if self.table.contains_key(ctx) {
                return ctx;
            }
        }
        &prefix[prefix.len()..]
    }

    pub fn next_distribution(&self, prefix: &[TokenId]) -> Distribution {
        let size = self.vocab.len();
        let ctx = self.effective_context(prefix);
        let Some(cc) = self.table.get(ctx) else {
            return Distribution::uniform(size);
        };
        let denom = cc.total as f64 + self.alpha * size as f64;
        Distribution::from_probs(cc.counts.iter().map(|&c| (c as f64 + self.alpha) / denom).collect())
    }

    pub fn prob(&self, prefix: &[TokenId], token: TokenId) -> f64 {
        let ctx = self.effective_context(prefix);
        match self.table.get(ctx) {
            Some(cc) => {
                (cc.counts[token] as f64 + self.alpha)
                    / (cc.total as f64 + self.alpha * self.vocab.len() as f64)
            }
            None => 1.0 / self.vocab.len() as f64,
        }
    }

    /// `log P(continuation | prefix)` by the chain rule.
    pub fn sequence_logprob(&self, continuation: &[TokenId], prefix: &[TokenId]) -> Result<f64> {
        if continuation.is_empty() {
            return Err(Error::EmptyContinuation);
        }
        let mut ctx = prefix.to_vec();
        let mut total = 0.0;
        for &tok in continuation {
            total += self.prob(&ctx, tok).ln();
            ctx.push(tok);
        }
        Ok(total)
    }

    /// Greedy (temperature 0) rollout of `len` tokens, stopping after `eos`.
    pub fn greedy_continuation(&self, prefix: &[TokenId], len: usize, eos: Option<TokenId>) -> Vec<TokenId> {
        let mut ctx = prefix.to_vec();
        let mut out = Vec::with_capacity(len);
        while out.len() < len {
            let tok = self.next_distribution(&ctx).argmax();
            out.push(tok);
            ctx.push(tok);
            if Some(tok) == eos {
                break;
            }
        }
        out
    }

    pub fn to_file(&self, provenance: Option<serde_json::Value>) -> ModelFile {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            order: self.order,
            alpha: self.alpha,
            vocab: self.vocab.clone(),
            contexts: self
                .table
                .iter()
                .map(|(ctx, cc)| ContextEntry {
                    context: ctx.clone(),
                    counts: cc
                        .counts
                        .iter()
                        .enumerate()
                        .filter(|&(_, &c)| c > 0)
                        .map(|(t, &c)| (t, c))
                        .collect(),
                })
                .collect(),
            provenance,
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::FormatVersion(file.format_version));
        }
        if file.order == 0 || file.alpha.is_nan() || file.alpha <= 0.0 {
            return Err(Error::InvalidArgument("bad order or alpha in model file".into()));
        }
        let size = file.vocab.len();
        let mut table = BTreeMap::new();
        for entry in file.contexts {
            if entry.context.len() >= file.order || entry.context.iter().any(|&t| t >= size) {
                return Err(Error::InvalidArgument(format!("bad context {:?}", entry.context)));
            }
            let mut cc = ContextCounts::new(size);
            for (tok, n) in entry.counts {
                if tok >= size {
                    return Err(Error::UnknownToken(format!("id {tok}")));
                }
                cc.add(tok, n);
            }
            table.insert(entry.context, cc);
        }
        Ok(Self { order: file.order, alpha: file.alpha, vocab: file.vocab, table })
    }

    pub fn to_json(&self, provenance: Option<serde_json::Value>) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file(provenance))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>, provenance: Option<serde_json::Value>) -> Result<()> {
        std::fs::write(path, self.to_json(provenance)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk model document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub order: usize,
    pub alpha: f64,
    pub vocab: Vocab,
    pub contexts: Vec<ContextEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

/// One context row; counts are sparse `(token, count)` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextEntry {
    pub context: Vec<TokenId>,
    pub counts: Vec<(TokenId, u64)>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> NGramModel {
        NGramModel::train(Vocab::symbolic(2).unwrap(), &[vec![0, 1, 0, 1]], 2, 1.0).unwrap()
    }

    #[test]
    fn additive_smoothing_arithmetic() {
        let m = toy();
        assert_eq!(m.prob(&[0], 1), 0.75);
        assert_eq!(m.next_distribution(&[0]).probs(), &[0.25, 0.75]);
    }

    #[test]
    fn empty_corpus_rejected() {
        let v = Vocab::symbolic(2).unwrap();
        assert!(matches!(NGramModel::train(v.clone(), &[], 2, 1.0), Err(Error::EmptyCorpus)));
        assert!(matches!(NGramModel::train(v, &[vec![]], 2, 1.0), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn unknown_token_rejected() {
        let v = Vocab::symbolic(2).unwrap();
        assert!(matches!(NGramModel::train(v, &[vec![0, 2]], 2, 1.0), Err(Error::UnknownToken(_))));
    }

    #[test]
    fn huge_alpha_is_uniform() {
        let m = NGramModel::train(Vocab::symbolic(4).unwrap(), &[vec![0, 1, 2, 3, 1, 1]], 3, 1e12).unwrap();
        for &p in m.next_distribution(&[1, 1]).probs() {
            assert!((p - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_prefix_uses_unigram() {
        let m = toy();
        // unigram counts: two 0s, two 1s
        assert_eq!(m.next_distribution(&[]).probs(), &[0.5, 0.5]);
    }

    #[test]
    fn unseen_context_backs_off() {
        let m = NGramModel::train(Vocab::symbolic(3).unwrap(), &[vec![0, 1, 0, 1]], 3, 0.5).unwrap();
        // [1, 1] never observed; falls back to context [1]
        assert_eq!(m.effective_context(&[1, 1]), &[1]);
        assert_eq!(m.next_distribution(&[1, 1]), m.next_distribution(&[1]));
    }

    #[test]
    fn logprob_rejects_empty() {
        assert!(toy().sequence_logprob(&[], &[0]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = NGramModel::train(Vocab::symbolic(3).unwrap(), &[vec![0, 1, 2, 2, 1], vec![2, 0]], 3, 0.3).unwrap();
        let back = NGramModel::from_json(&m.to_json(None).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
