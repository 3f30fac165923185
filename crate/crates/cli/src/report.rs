//! Evaluation records and the reducer that turns them into report rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use selfjudge_core::lm::TokenId;
use selfjudge_core::specdec::TraceRecord;

/// One decoded prompt under one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub policy: String,
    pub prompt_id: usize,
    pub tokens: Vec<TokenId>,
    /// Log-likelihood of `tokens` under the target model, given the prompt.
    pub target_loglik: f64,
    /// Output equals the target's own greedy continuation.
    pub exact_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub policy: String,
    /// Mean tokens emitted per verification cycle.
    pub m: f64,
    pub mean_accepted_draft: f64,
    pub exact_match_rate: f64,
    /// Mean per-token target log-likelihood of the emitted text.
    pub mean_target_loglik: f64,
    pub cycles: usize,
    pub prompts: usize,
    pub tokens: usize,
    pub judge_accepts: usize,
}

/// Rebuilds report rows from stored traces and outputs. Rows follow the
/// order in which policies first appear in `outputs`.
pub fn reduce(traces: &[TraceRecord], outputs: &[OutputRecord]) -> Vec<ReportRow> {
    let mut order: Vec<&str> = Vec::new();
    for o in outputs {
        if !order.contains(&o.policy.as_str()) {
            order.push(&o.policy);
        }
    }
    #[derive(Default)]
    struct Acc {
        cycles: usize,
        accepted: usize,
        judge_accepts: usize,
        prompts: usize,
        exact: usize,
        tokens: usize,
        loglik: f64,
    }
    let mut acc: BTreeMap<&str, Acc> = BTreeMap::new();
    for t in traces {
        let a = acc.entry(&t.policy).or_default();
        a.cycles += 1;
        a.accepted += t.accepted_count;
        a.judge_accepts += t
            .positions
            .iter()
            .filter(|p| p.decision == selfjudge_core::specdec::Decision::JudgeAccepted)
            .count();
    }
    for o in outputs {
        let a = acc.entry(&o.policy).or_default();
        a.prompts += 1;
        a.exact += o.exact_match as usize;
        a.tokens += o.tokens.len();
        a.loglik += o.target_loglik;
    }
    order
        .into_iter()
        .map(|name| {
            let a = &acc[name];
            let per_cycle = |x: usize| if a.cycles == 0 { 0.0 } else { x as f64 / a.cycles as f64 };
            ReportRow {
                policy: name.to_string(),
                m: per_cycle(a.accepted + a.cycles),
                mean_accepted_draft: per_cycle(a.accepted),
                exact_match_rate: if a.prompts == 0 { 0.0 } else { a.exact as f64 / a.prompts as f64 },
                mean_target_loglik: if a.tokens == 0 { 0.0 } else { a.loglik / a.tokens as f64 },
                cycles: a.cycles,
                prompts: a.prompts,
                tokens: a.tokens,
                judge_accepts: a.judge_accepts,
            }
        })
        .collect()
}

pub fn render_table(rows: &[ReportRow]) -> String {
    let width = rows.iter().map(|r| r.policy.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>7}  {:>9}  {:>11}  {:>11}  {:>7}  {:>8}",
        "policy", "m", "accepted", "exact_match", "loglik/tok", "cycles", "judge+"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>7.4}  {:>9.4}  {:>10.1}%  {:>11.5}  {:>7}  {:>8}",
            r.policy,
            r.m,
            r.mean_accepted_draft,
            100.0 * r.exact_match_rate,
            r.mean_target_loglik,
            r.cycles,
            r.judge_accepts
        );
    }
    out
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> serde_json::Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> serde_json::Result<Vec<T>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}
