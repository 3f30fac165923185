use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trace::VerificationTrace;
use super::verify::{verify_greedy, verify_judge_two_stage, verify_rejection, verify_topk, DraftProposal};
use crate::error::{Error, Result};
use crate::judge::JudgeModel;
use crate::lm::{sample_token, Distribution, FeatureExtractor, FeatureVector, NGramModel, TokenId};

/// Verification policy for a decode run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    Rejection,
    Greedy,
    TopK { k: usize },
    /// Two-stage judge verification; the verifier is supplied to [`Decoder`].
    Judge { theta: f64 },
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Rejection => write!(f, "rejection"),
            Policy::Greedy => write!(f, "greedy"),
            Policy::TopK { k } => write!(f, "topk:{k}"),
            Policy::Judge { theta } => write!(f, "judge:{theta}"),
        }
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown policy {s:?}"));
        match s.split_once(':') {
            None => match s {
                "rejection" => Ok(Policy::Rejection),
                "greedy" => Ok(Policy::Greedy),
                _ => Err(bad()),
            },
            Some(("topk", k)) => Ok(Policy::TopK { k: k.parse().map_err(|_| bad())? }),
            Some(("judge", theta)) => Ok(Policy::Judge { theta: theta.parse().map_err(|_| bad())? }),
            Some(_) => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub gamma: usize,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub seed: u64,
    pub policy: Policy,
    pub eos: Option<TokenId>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { gamma: 6, max_new_tokens: 64, temperature: 0.0, seed: 0, policy: Policy::Rejection, eos: None }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma == 0 {
            return Err(Error::InvalidArgument("gamma must be at least 1".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidArgument("max_new_tokens must be at least 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad temperature {}", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeMetrics {
    pub cycles: usize,
    pub total_emitted: usize,
    pub mean_accepted_draft: f64,
    /// Average accepted length `m`: tokens emitted per cycle, bonus included.
    pub mean_emitted_per_cycle: f64,
}

impl DecodeMetrics {
    /// Per-cycle means come from the untruncated traces; `total_emitted` is the
    /// length of the returned sequence.
    pub fn from_traces(traces: &[VerificationTrace], total_emitted: usize) -> Self {
        let cycles = traces.len();
        let accepted: usize = traces.iter().map(|t| t.accepted_count).sum();
        let mean_accepted_draft = if cycles == 0 { 0.0 } else { accepted as f64 / cycles as f64 };
        let mean_emitted_per_cycle = if cycles == 0 { 0.0 } else { (accepted + cycles) as f64 / cycles as f64 };
        Self { cycles, total_emitted, mean_accepted_draft, mean_emitted_per_cycle }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub tokens: Vec<TokenId>,
    pub metrics: DecodeMetrics,
    pub traces: Vec<VerificationTrace>,
}

/// Target distributions at positions `t+1 ..= t+gamma+1` and target-side
/// features of each drafted token.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetScores {
    pub dists: Vec<Distribution>,
    pub features: Vec<FeatureVector>,
}

/// Autoregressive drafting of `gamma` tokens.
pub fn draft<R: Rng + ?Sized>(
    draft_model: &NGramModel,
    prefix: &[TokenId],
    gamma: usize,
    temperature: f64,
    rng: &mut R,
) -> DraftProposal {
    let mut ctx = prefix.to_vec();
    let mut proposal = DraftProposal {
        tokens: Vec::with_capacity(gamma),
        q: Vec::with_capacity(gamma),
        dists: Vec::with_capacity(gamma),
    };
    for _ in 0..gamma {
        let dist = draft_model.next_distribution(&ctx);
        let tok = sample_token(&dist, temperature, rng);
        proposal.tokens.push(tok);
        proposal.q.push(dist.prob(tok));
        proposal.dists.push(dist);
        ctx.push(tok);
    }
    proposal
}

/// Scores the drafted block under the target model.
pub fn target_scores(
    target: &NGramModel,
    draft_model: &NGramModel,
    extractor: &FeatureExtractor,
    prefix: &[TokenId],
    draft_tokens: &[TokenId],
) -> TargetScores {
    let mut ctx = prefix.to_vec();
    let mut dists = Vec::with_capacity(draft_tokens.len() + 1);
    let mut features = Vec::with_capacity(draft_tokens.len());
    for &tok in draft_tokens {
        dists.push(target.next_distribution(&ctx));
        features.push(extractor.extract(target, draft_model, &ctx, tok));
        ctx.push(tok);
    }
    dists.push(target.next_distribution(&ctx));
    TargetScores { dists, features }
}

/// Target/draft pair plus the optional verifier used by the judge policy.
/// Immutable; one decoder can serve concurrent `decode` calls.
#[derive(Debug, Clone, Copy)]
pub struct Decoder<'a> {
    pub target: &'a NGramModel,
    pub draft: &'a NGramModel,
    pub extractor: FeatureExtractor,
    pub judge: Option<&'a JudgeModel>,
}

impl<'a> Decoder<'a> {
    pub fn new(target: &'a NGramModel, draft: &'a NGramModel) -> Self {
        Self { target, draft, extractor: FeatureExtractor::default(), judge: None }
    }

    pub fn with_judge(mut self, judge: &'a JudgeModel) -> Self {
        self.judge = Some(judge);
        self
    }

    /// One draft/score/verify cycle after `prefix`.
    pub fn cycle<R: Rng + ?Sized>(
        &self,
        prefix: &[TokenId],
        gamma: usize,
        temperature: f64,
        policy: Policy,
        rng: &mut R,
    ) -> Result<(DraftProposal, VerificationTrace)> {
        let proposal = draft(self.draft, prefix, gamma, temperature, rng);
        let scores = target_scores(self.target, self.draft, &self.extractor, prefix, &proposal.tokens);
        let trace = self.verify(&scores, &proposal, temperature, policy, rng)?;
        Ok((proposal, trace))
    }

    pub fn verify<R: Rng + ?Sized>(
        &self,
        scores: &TargetScores,
        proposal: &DraftProposal,
        temperature: f64,
        policy: Policy,
        rng: &mut R,
    ) -> Result<VerificationTrace> {
        match policy {
            Policy::Rejection => verify_rejection(&scores.dists, proposal, temperature, rng),
            Policy::Greedy => verify_greedy(&scores.dists, proposal, temperature, rng),
            Policy::TopK { k } => verify_topk(&scores.dists, proposal, k, temperature, rng),
            Policy::Judge { theta } => {
                let judge = self
                    .judge
                    .ok_or_else(|| Error::InvalidArgument("judge policy requires a verifier".into()))?;
                verify_judge_two_stage(&scores.features, &scores.dists, proposal, judge, theta, temperature, rng)
            }
        }
    }

    pub fn decode(&self, prompt: &[TokenId], config: &DecodeConfig) -> Result<DecodeOutput> {
        config.validate()?;
        let size = self.target.vocab_size();
        if let Some(&bad) = prompt.iter().find(|&&t| t >= size) {
            return Err(Error::UnknownToken(format!("id {bad}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ctx = prompt.to_vec();
        let mut out = Vec::with_capacity(config.max_new_tokens);
        let mut traces = Vec::new();
        'outer: while out.len() < config.max_new_tokens {
            let (_, trace) = self.cycle(&ctx, config.gamma, config.temperature, config.policy, &mut rng)?;
            for &tok in &trace.emitted {
                out.push(tok);
                ctx.push(tok);
                if Some(tok) == config.eos || out.len() == config.max_new_tokens {
                    traces.push(trace);
                    break 'outer;
                }
            }
            traces.push(trace);
        }
        let metrics = DecodeMetrics::from_traces(&traces, out.len());
        Ok(DecodeOutput { tokens: out, metrics, traces })
    }
}
