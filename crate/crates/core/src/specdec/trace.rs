use serde::{Deserialize, Serialize};

use crate::lm::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// Accepted by the alignment rule.
    Accepted,
    /// Rejected by alignment but accepted by the judge.
    JudgeAccepted,
    Rejected,
    /// After the first rejection; never examined.
    NotReached,
}

impl Decision {
    pub fn is_accept(self) -> bool {
        matches!(self, Decision::Accepted | Decision::JudgeAccepted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionSource {
    /// Sampled from `norm(max(0, p - q))` after an alignment rejection.
    Residual,
    /// Extra token from the target distribution after all drafts were accepted.
    Bonus,
    /// Target argmax after a rejection.
    Argmax,
    /// Residual vanished; sampled from the target distribution instead.
    TargetFallback,
}

/// Per-position verification record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionRecord {
    pub token: TokenId,
    /// Target-model probability of the drafted token.
    pub p: f64,
    /// Draft-model probability of the drafted token.
    pub q: f64,
    pub u: f64,
    /// Acceptance ratio, present wherever the alignment rule ran.
    pub r: Option<f64>,
    pub judge_score: Option<f64>,
    pub decision: Decision,
}

/// Outcome of one draft-then-verify cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationTrace {
    pub positions: Vec<PositionRecord>,
    pub accepted_count: usize,
    /// Accepted drafts followed by the correction or bonus token.
    pub emitted: Vec<TokenId>,
    pub correction_source: CorrectionSource,
}

impl VerificationTrace {
    pub fn gamma(&self) -> usize {
        self.positions.len()
    }

    pub fn judge_accepts(&self) -> usize {
        self.positions.iter().filter(|p| p.decision == Decision::JudgeAccepted).count()
    }
}

/// One line of the trace dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub policy: String,
    pub prompt_id: usize,
    pub cycle: usize,
    pub accepted_count: usize,
    pub emitted: Vec<TokenId>,
    pub correction_source: CorrectionSource,
    pub positions: Vec<PositionRecord>,
}

impl TraceRecord {
    pub fn new(policy: &str, prompt_id: usize, cycle: usize, trace: &VerificationTrace) -> Self {
        Self {
            policy: policy.to_string(),
            prompt_id,
            cycle,
            accepted_count: trace.accepted_count,
            emitted: trace.emitted.clone(),
            correction_source: trace.correction_source,
            positions: trace.positions.clone(),
        }
    }
}
