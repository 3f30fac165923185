use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{NGramModel, TokenId};

pub const FEATURE_DIM: usize = 16;
pub const PROJECTION_SEED: u64 = 42;
const PROJECTION_SLOTS: usize = FEATURE_DIM - 6;

/// Fixed-length feature vector describing one (prefix, token) pair from the
/// target model's point of view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Stand-in for target-model hidden states.
///
/// Slot layout:
/// - 0: `log p_target(token | prefix)`
/// - 1: `log p_draft(token | prefix)`
/// - 2: entropy of the target distribution at this position
/// - 3: rank of `token` under the target, scaled to `[0, 1]`
/// - 4: log-probability margin between the target top-1 and `token`
/// - 5: prefix length relative to the target's maximum context
/// - 6..16: Gaussian random projection of the one-hot (context, token) pair
///
/// The projection matrix is implicit: column entries for a pair are drawn from
/// a ChaCha stream keyed by the pair, so the matrix is fixed by the seed
/// without being materialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureExtractor {
    seed: u64,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self { seed: PROJECTION_SEED }
    }
}

impl FeatureExtractor {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed }
    }

    pub fn extract(
        &self,
        target: &NGramModel,
        draft: &NGramModel,
        prefix: &[TokenId],
        token: TokenId,
    ) -> FeatureVector {
        let dist = target.next_distribution(prefix);
        let size = dist.len();
        let p = dist.prob(token);
        let top = dist.prob(dist.argmax());
        let max_ctx = target.order() - 1;

        let mut v = Vec::with_capacity(FEATURE_DIM);
        v.push(p.ln());
        v.push(draft.prob(prefix, token).ln());
        v.push(dist.entropy());
        v.push(dist.strict_rank(token) as f64 / (size - 1) as f64);
        v.push(top.ln() - p.ln());
        v.push(if max_ctx == 0 { 1.0 } else { prefix.len().min(max_ctx) as f64 / max_ctx as f64 });

        let ctx = &prefix[prefix.len() - prefix.len().min(max_ctx)..];
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(pair_key(ctx, token));
        let scale = (PROJECTION_SLOTS as f64).sqrt().recip();
        v.extend((0..PROJECTION_SLOTS).map(|_| rng.sample::<f64, _>(StandardNormal) * scale));
        FeatureVector(v)
    }
}

/// FNV-1a over the context length, context ids and token id.
fn pair_key(ctx: &[TokenId], token: TokenId) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut feed = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    feed(ctx.len() as u64);
    for &t in ctx {
        feed(t as u64);
    }
    feed(token as u64);
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::Vocab;

    fn models() -> (NGramModel, NGramModel) {
        let corpus = vec![vec![0, 1, 2, 3, 0, 2, 1, 3, 3, 0], vec![2, 2, 1, 0]];
        let v = Vocab::symbolic(4).unwrap();
        (
            NGramModel::train(v.clone(), &corpus, 3, 0.5).unwrap(),
            NGramModel::train(v, &corpus, 2, 0.5).unwrap(),
        )
    }

    #[test]
    fn deterministic_and_finite() {
        let (t, d) = models();
        let fx = FeatureExtractor::default();
        let a = fx.extract(&t, &d, &[0, 1], 2);
        let b = fx.extract(&t, &d, &[0, 1], 2);
        assert_eq!(a, b);
        assert_eq!(a.dim(), FEATURE_DIM);
        assert!(a.values().iter().all(|x| x.is_finite()));
        assert_eq!(a.values()[0], t.prob(&[0, 1], 2).ln());
        assert_eq!(a.values()[1], d.prob(&[0, 1], 2).ln());
    }

    #[test]
    fn projection_depends_on_context_only_through_last_tokens() {
        let (t, d) = models();
        let fx = FeatureExtractor::default();
        let a = fx.extract(&t, &d, &[3, 0, 1], 2);
        let b = fx.extract(&t, &d, &[2, 0, 1], 2);
        assert_eq!(a, b);
    }
}
