//! Self-supervised verifier data: mine positions where the draft argmax
//! disagrees with the target's greedy response, score each substitution by
//! how well the target model preserves its own continuation, and label it
//! against a calibrated threshold `tau`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Prompt;
use crate::error::{Error, Result};
use crate::lm::{FeatureExtractor, FeatureVector, NGramModel, TokenId};

/// A response position where the draft's top prediction differs from the
/// target token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MismatchRecord {
    pub prompt_id: usize,
    pub position: usize,
    /// `y_i`
    pub original: TokenId,
    /// `z_i`, the draft argmax given the prompt and `y_<i`.
    pub alternative: TokenId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub s_prefix: f64,
    pub suffix_delta: f64,
    pub s: f64,
    pub n_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    /// Suffix tokens scored after the substituted position.
    pub suffix_len: usize,
    /// Fixed threshold; calibrated from the oracle when absent.
    pub tau: Option<f64>,
    pub calibration_quantile: f64,
    /// Prompts (from the front of the labeling set) used for calibration.
    pub calibration_prompts: usize,
    /// Greedy look-ahead of the derailment oracle.
    pub horizon: usize,
    pub response_len: usize,
    pub eos: Option<TokenId>,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            suffix_len: 20,
            tau: None,
            calibration_quantile: 0.1,
            calibration_prompts: 100,
            horizon: 8,
            response_len: 48,
            eos: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub record: MismatchRecord,
    pub breakdown: ScoreBreakdown,
    pub label: bool,
    /// Target-side features of `z_i` after the prompt and `y_<i`.
    pub features: FeatureVector,
}

/// One line of the dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub prompt_id: usize,
    pub position: usize,
    pub y_i: TokenId,
    pub z_i: TokenId,
    pub s_prefix: f64,
    pub suffix_delta: f64,
    pub s: f64,
    pub n_used: usize,
    pub label: bool,
    pub features: Vec<f64>,
}

impl From<&LabeledExample> for DatasetRow {
    fn from(ex: &LabeledExample) -> Self {
        Self {
            prompt_id: ex.record.prompt_id,
            position: ex.record.position,
            y_i: ex.record.original,
            z_i: ex.record.alternative,
            s_prefix: ex.breakdown.s_prefix,
            suffix_delta: ex.breakdown.suffix_delta,
            s: ex.breakdown.s,
            n_used: ex.breakdown.n_used,
            label: ex.label,
            features: ex.features.values().to_vec(),
        }
    }
}

impl From<DatasetRow> for LabeledExample {
    fn from(row: DatasetRow) -> Self {
        Self {
            record: MismatchRecord {
                prompt_id: row.prompt_id,
                position: row.position,
                original: row.y_i,
                alternative: row.z_i,
            },
            breakdown: ScoreBreakdown {
                s_prefix: row.s_prefix,
                suffix_delta: row.suffix_delta,
                s: row.s,
                n_used: row.n_used,
            },
            label: row.label,
            features: FeatureVector::new(row.features),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub num_prompts: usize,
    pub num_mismatches: usize,
    pub num_acceptable: usize,
    #[serde(with = "ext_float")]
    pub tau: f64,
    #[serde(rename = "N")]
    pub suffix_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
    pub summary: DatasetSummary,
}

impl Dataset {
    /// Line-delimited JSON, one [`DatasetRow`] per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str(&serde_json::to_string(&DatasetRow::from(ex))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse_jsonl(text: &str) -> Result<Vec<LabeledExample>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| Ok(serde_json::from_str::<DatasetRow>(l)?.into()))
            .collect()
    }
}

/// Greedy target response to `prompt`.
pub fn generate_response(target: &NGramModel, prompt: &[TokenId], max_len: usize, eos: Option<TokenId>) -> Vec<TokenId> {
    target.greedy_continuation(prompt, max_len, eos)
}

pub fn find_mismatches(draft: &NGramModel, prompt_id: usize, prompt: &[TokenId], y: &[TokenId]) -> Vec<MismatchRecord> {
    let mut ctx = prompt.to_vec();
    let mut out = Vec::new();
    for (i, &yi) in y.iter().enumerate() {
        let z = draft.next_distribution(&ctx).argmax();
        if z != yi {
            out.push(MismatchRecord { prompt_id, position: i, original: yi, alternative: z });
        }
        ctx.push(yi);
    }
    out
}

/// Prefix log-ratio plus the change in log-likelihood of the next
/// `min(N, remaining)` response tokens when `y_i` is replaced by `z_i`.
pub fn semantic_score(
    target: &NGramModel,
    prompt: &[TokenId],
    y: &[TokenId],
    record: &MismatchRecord,
    suffix_len: usize,
) -> Result<ScoreBreakdown> {
    let i = record.position;
    if i >= y.len() || y[i] != record.original {
        return Err(Error::InvalidArgument(format!("record at position {i} does not match the response")));
    }
    let mut ctx: Vec<TokenId> = prompt.iter().chain(&y[..i]).copied().collect();
    let s_prefix = target.prob(&ctx, record.alternative).ln() - target.prob(&ctx, record.original).ln();
    let n_used = suffix_len.min(y.len() - i - 1);
    let suffix_delta = if n_used == 0 {
        0.0
    } else {
        let suffix = &y[i + 1..i + 1 + n_used];
        ctx.push(record.alternative);
        let substituted = target.sequence_logprob(suffix, &ctx)?;
        *ctx.last_mut().unwrap() = record.original;
        substituted - target.sequence_logprob(suffix, &ctx)?
    };
    Ok(ScoreBreakdown { s_prefix, suffix_delta, s: s_prefix + suffix_delta, n_used })
}

/// The suffix term read as a log Bayes factor: evidence the continuation
/// gives for the substitute over the original.
pub fn bayes_factor(breakdown: &ScoreBreakdown) -> f64 {
    breakdown.suffix_delta
}

/// `q`-quantile with linear interpolation between order statistics.
pub fn calibrate_tau(scores: &[f64], q: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile must lie in (0, 1), got {q}")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    Ok(match sorted.get(lo + 1) {
        Some(&next) if frac > 0.0 => sorted[lo] + (next - sorted[lo]) * frac,
        _ => sorted[lo],
    })
}

/// Derailment check: does swapping `y_i` for `z_i` change the target's greedy
/// continuation over the next `horizon` tokens?
pub fn oracle_unacceptable(
    target: &NGramModel,
    prompt: &[TokenId],
    y: &[TokenId],
    record: &MismatchRecord,
    horizon: usize,
) -> bool {
    if horizon == 0 {
        return false;
    }
    let mut ctx: Vec<TokenId> = prompt.iter().chain(&y[..record.position]).copied().collect();
    ctx.push(record.original);
    let original = target.greedy_continuation(&ctx, horizon, None);
    *ctx.last_mut().unwrap() = record.alternative;
    original != target.greedy_continuation(&ctx, horizon, None)
}

struct ScoredMismatch {
    record: MismatchRecord,
    breakdown: ScoreBreakdown,
    features: FeatureVector,
    unacceptable: Option<bool>,
}

fn score_prompt(
    target: &NGramModel,
    draft: &NGramModel,
    extractor: &FeatureExtractor,
    prompt: &Prompt,
    config: &LabelConfig,
    with_oracle: bool,
) -> Result<Vec<ScoredMismatch>> {
    let y = generate_response(target, &prompt.tokens, config.response_len, config.eos);
    find_mismatches(draft, prompt.id, &prompt.tokens, &y)
        .into_iter()
        .map(|record| {
            let breakdown = semantic_score(target, &prompt.tokens, &y, &record, config.suffix_len)?;
            let ctx: Vec<TokenId> = prompt.tokens.iter().chain(&y[..record.position]).copied().collect();
            let features = extractor.extract(target, draft, &ctx, record.alternative);
            let unacceptable =
                with_oracle.then(|| oracle_unacceptable(target, &prompt.tokens, &y, &record, config.horizon));
            Ok(ScoredMismatch { record, breakdown, features, unacceptable })
        })
        .collect()
}

/// Calibrates `tau` as the configured quantile of scores the derailment
/// oracle marks unacceptable, over the first `calibration_prompts` prompts.
pub fn calibrate_from_prompts(
    target: &NGramModel,
    draft: &NGramModel,
    prompts: &[Prompt],
    config: &LabelConfig,
) -> Result<f64> {
    let extractor = FeatureExtractor::default();
    let take = config.calibration_prompts.min(prompts.len());
    let per_prompt: Vec<Vec<ScoredMismatch>> = prompts[..take]
        .par_iter()
        .map(|p| score_prompt(target, draft, &extractor, p, config, true))
        .collect::<Result<_>>()?;
    let bad: Vec<f64> = per_prompt
        .iter()
        .flatten()
        .filter(|m| m.unacceptable == Some(true))
        .map(|m| m.breakdown.s)
        .collect();
    calibrate_tau(&bad, config.calibration_quantile)
}

/// Labels every mismatch across `prompts` with `s > tau`. Prompts are scored
/// in parallel and merged in input order.
pub fn build_dataset(
    target: &NGramModel,
    draft: &NGramModel,
    extractor: &FeatureExtractor,
    prompts: &[Prompt],
    config: &LabelConfig,
    tau: f64,
) -> Result<Dataset> {
    let per_prompt: Vec<Vec<ScoredMismatch>> = prompts
        .par_iter()
        .map(|p| score_prompt(target, draft, extractor, p, config, false))
        .collect::<Result<_>>()?;
    let examples: Vec<LabeledExample> = per_prompt
        .into_iter()
        .flatten()
        .map(|m| LabeledExample { label: m.breakdown.s > tau, record: m.record, breakdown: m.breakdown, features: m.features })
        .collect();
    let summary = DatasetSummary {
        num_prompts: prompts.len(),
        num_mismatches: examples.len(),
        num_acceptable: examples.iter().filter(|e| e.label).count(),
        tau,
        suffix_len: config.suffix_len,
    };
    Ok(Dataset { examples, summary })
}

/// Serializes non-finite floats as `"inf"`, `"-inf"` or `"nan"`.
pub mod ext_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}
