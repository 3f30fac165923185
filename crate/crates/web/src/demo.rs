//! Browser-independent logic behind the demo page.

use serde::Serialize;

use selfjudge_core::corpus::{Prompt, ReferenceChain};
use selfjudge_core::judge::{grid_search, JudgeModel, TrainConfig};
use selfjudge_core::lm::{Distribution, FeatureExtractor, NGramModel, TokenId};
use selfjudge_core::semlabel::{
    build_dataset, calibrate_from_prompts, find_mismatches, generate_response, semantic_score, LabelConfig,
    MismatchRecord,
};
use selfjudge_core::specdec::{DecodeConfig, Decision, Decoder, Policy};
use selfjudge_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionStep {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub u: f64,
    pub accepted: bool,
    /// `norm(max(0, p - q))`, absent when the draft token is accepted or
    /// the draft already matches the target everywhere.
    pub residual: Option<Vec<f64>>,
}

/// One rejection-sampling decision for `token` under target `p` and draft `q`.
pub fn rejection_step(p: &[f64], q: &[f64], token: TokenId, u: f64) -> Result<RejectionStep> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), actual: q.len() });
    }
    if token >= p.len() {
        return Err(Error::InvalidArgument(format!("token {token} outside a vocabulary of {}", p.len())));
    }
    let norm = |w: &[f64]| {
        Distribution::from_weights(w.to_vec()).ok_or_else(|| Error::InvalidArgument("weights must be non-negative with a positive sum".into()))
    };
    let (p, q) = (norm(p)?, norm(q)?);
    let (pt, qt) = (p.prob(token), q.prob(token));
    let r = if qt > 0.0 { (pt / qt).min(1.0) } else { 1.0 };
    let accepted = u < r;
    let residual = if accepted { None } else { p.residual(&q).map(|d| d.probs().to_vec()) };
    Ok(RejectionStep { p: pt, q: qt, r, u, accepted, residual })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleView {
    pub accepted: usize,
    pub emitted: Vec<String>,
    /// One of `accepted`, `judge`, `rejected`, `unreached` per draft position.
    pub decisions: Vec<&'static str>,
    pub drafted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeView {
    pub prompt: Vec<String>,
    pub tokens: Vec<String>,
    pub reference: Vec<String>,
    pub cycles: Vec<CycleView>,
    pub m: f64,
    pub target_loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub theta: f64,
    pub m: f64,
    pub mean_loglik: f64,
    pub exact_match_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub baseline: SweepRow,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreCurve {
    pub position: usize,
    pub original: String,
    pub alternative: String,
    pub response: Vec<String>,
    /// `(N, s)` for every window up to the end of the response.
    pub points: Vec<(usize, f64)>,
    pub s_prefix: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub vocab: Vec<String>,
    pub prompts: usize,
    pub examples: usize,
    pub acceptable: usize,
    pub tau: f64,
    pub c: f64,
    pub auc: f64,
    pub theta_f1: f64,
    pub theta_recall: f64,
}

/// Reference-chain models plus a verifier trained in place.
pub struct Playground {
    target: NGramModel,
    draft: NGramModel,
    judge: JudgeModel,
    prompts: Vec<Prompt>,
    summary: Summary,
}

const RESPONSE_LEN: usize = 32;

impl Playground {
    pub fn new(seed: u64) -> Result<Self> {
        let chain = ReferenceChain::new();
        let corpus = chain.sample_corpus(400, 60, seed);
        let target = NGramModel::train(chain.vocab(), &corpus, 3, 0.1)?;
        let draft = NGramModel::train(chain.vocab(), &corpus, 2, 0.1)?;
        let prompt_of = |(id, tokens): (usize, Vec<TokenId>)| Prompt { id, tokens };
        let label_prompts: Vec<Prompt> =
            chain.sample_corpus(150, 4, seed.wrapping_add(1)).into_iter().enumerate().map(prompt_of).collect();
        let prompts: Vec<Prompt> =
            chain.sample_corpus(30, 4, seed.wrapping_add(2)).into_iter().enumerate().map(prompt_of).collect();

        let label = LabelConfig { response_len: RESPONSE_LEN, ..Default::default() };
        let tau = calibrate_from_prompts(&target, &draft, &label_prompts, &label)?;
        let data = build_dataset(&target, &draft, &FeatureExtractor::default(), &label_prompts, &label, tau)?;
        let features: Vec<_> = data.examples.iter().map(|e| e.features.clone()).collect();
        let labels: Vec<bool> = data.examples.iter().map(|e| e.label).collect();
        let judge = grid_search(&features, &labels, &TrainConfig { seed, ..Default::default() })?;
        let th = judge.thresholds.expect("grid search sets thresholds");
        let summary = Summary {
            vocab: chain.vocab().tokens().to_vec(),
            prompts: prompts.len(),
            examples: data.summary.num_mismatches,
            acceptable: data.summary.num_acceptable,
            tau,
            c: judge.training_meta.c,
            auc: judge.training_meta.auc.unwrap_or(f64::NAN),
            theta_f1: th.theta_f1,
            theta_recall: th.theta_recall,
        };
        Ok(Self { target, draft, judge, prompts, summary })
    }

    pub fn summary(&self) -> &Summary {
        &self.summary
    }

    fn names(&self, ids: &[TokenId]) -> Vec<String> {
        self.target.vocab().decode(ids).into_iter().map(str::to_string).collect()
    }

    fn prompt(&self, index: usize) -> Result<&Prompt> {
        self.prompts
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("prompt {index} out of range 0..{}", self.prompts.len())))
    }

    fn decoder(&self) -> Decoder<'_> {
        Decoder::new(&self.target, &self.draft).with_judge(&self.judge)
    }

    pub fn decode(&self, prompt: usize, policy: &str, gamma: usize, temperature: f64, seed: u64) -> Result<DecodeView> {
        let p = self.prompt(prompt)?;
        let config = DecodeConfig { gamma, max_new_tokens: RESPONSE_LEN, temperature, seed, policy: policy.parse()?, eos: None };
        let out = self.decoder().decode(&p.tokens, &config)?;
        let cycles = out
            .traces
            .iter()
            .map(|t| CycleView {
                accepted: t.accepted_count,
                emitted: self.names(&t.emitted),
                drafted: self.names(&t.positions.iter().map(|r| r.token).collect::<Vec<_>>()),
                decisions: t
                    .positions
                    .iter()
                    .map(|r| match r.decision {
                        Decision::Accepted => "accepted",
                        Decision::JudgeAccepted => "judge",
                        Decision::Rejected => "rejected",
                        Decision::NotReached => "unreached",
                    })
                    .collect(),
            })
            .collect();
        Ok(DecodeView {
            prompt: self.names(&p.tokens),
            reference: self.names(&generate_response(&self.target, &p.tokens, RESPONSE_LEN, None)),
            target_loglik: self.target.sequence_logprob(&out.tokens, &p.tokens)?,
            tokens: self.names(&out.tokens),
            cycles,
            m: out.metrics.mean_emitted_per_cycle,
        })
    }

    fn sweep_row(&self, policy: Policy, theta: f64, gamma: usize) -> Result<SweepRow> {
        let (mut cycles, mut emitted, mut loglik, mut tokens, mut exact) = (0, 0, 0.0, 0, 0);
        for p in &self.prompts {
            let config =
                DecodeConfig { gamma, max_new_tokens: RESPONSE_LEN, temperature: 0.0, seed: p.id as u64, policy, eos: None };
            let out = self.decoder().decode(&p.tokens, &config)?;
            cycles += out.metrics.cycles;
            emitted += out.traces.iter().map(|t| t.accepted_count + 1).sum::<usize>();
            loglik += self.target.sequence_logprob(&out.tokens, &p.tokens)?;
            tokens += out.tokens.len();
            exact += (out.tokens == generate_response(&self.target, &p.tokens, RESPONSE_LEN, None)) as usize;
        }
        Ok(SweepRow {
            theta,
            m: emitted as f64 / cycles as f64,
            mean_loglik: loglik / tokens as f64,
            exact_match_rate: exact as f64 / self.prompts.len() as f64,
        })
    }

    /// Greedy-temperature decoding of every demo prompt at each threshold,
    /// against the rejection-sampling baseline.
    pub fn theta_sweep(&self, thetas: &[f64], gamma: usize) -> Result<Sweep> {
        Ok(Sweep {
            baseline: self.sweep_row(Policy::Rejection, f64::NAN, gamma)?,
            rows: thetas.iter().map(|&t| self.sweep_row(Policy::Judge { theta: t }, t, gamma)).collect::<Result<_>>()?,
        })
    }

    pub fn mismatches(&self, prompt: usize) -> Result<Vec<MismatchRecord>> {
        let p = self.prompt(prompt)?;
        let y = generate_response(&self.target, &p.tokens, RESPONSE_LEN, None);
        Ok(find_mismatches(&self.draft, p.id, &p.tokens, &y))
    }

    /// Semantic score of the `which`-th mismatch as the suffix window grows.
    pub fn score_curve(&self, prompt: usize, which: usize) -> Result<ScoreCurve> {
        let p = self.prompt(prompt)?;
        let y = generate_response(&self.target, &p.tokens, RESPONSE_LEN, None);
        let found = find_mismatches(&self.draft, p.id, &p.tokens, &y);
        let rec = found
            .get(which)
            .ok_or_else(|| Error::InvalidArgument(format!("prompt {prompt} has {} mismatches", found.len())))?;
        let remaining = y.len() - rec.position - 1;
        let points = (0..=remaining)
            .map(|n| Ok((n, semantic_score(&self.target, &p.tokens, &y, rec, n)?.s)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoreCurve {
            position: rec.position,
            original: self.names(&[rec.original])[0].clone(),
            alternative: self.names(&[rec.alternative])[0].clone(),
            response: self.names(&y),
            s_prefix: points[0].1,
            points,
            tau: self.summary.tau,
        })
    }
}
