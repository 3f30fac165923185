use log::warn;
use rand::Rng;

use super::trace::{CorrectionSource, Decision, PositionRecord, VerificationTrace};
use crate::error::{Error, Result};
use crate::judge::JudgeModel;
use crate::lm::sampling::sample_inverse_cdf;
use crate::lm::{sample_token, Distribution, FeatureVector, TokenId};

/// `gamma` drafted tokens, the draft probability of each, and the full draft
/// distribution at each position (needed for the residual).
#[derive(Debug, Clone, PartialEq)]
pub struct DraftProposal {
    pub tokens: Vec<TokenId>,
    pub q: Vec<f64>,
    pub dists: Vec<Distribution>,
}

impl DraftProposal {
    pub fn gamma(&self) -> usize {
        self.tokens.len()
    }
}

fn check_shapes(p: &[Distribution], proposal: &DraftProposal) -> Result<()> {
    let gamma = proposal.gamma();
    if gamma == 0 {
        return Err(Error::InvalidArgument("empty draft".into()));
    }
    if proposal.q.len() != gamma || proposal.dists.len() != gamma {
        return Err(Error::InvalidArgument("draft proposal fields differ in length".into()));
    }
    if p.len() != gamma + 1 {
        return Err(Error::InvalidArgument(format!(
            "expected {} target distributions, got {}",
            gamma + 1,
            p.len()
        )));
    }
    Ok(())
}

/// One uniform per drafted position, drawn up front so every policy consumes
/// the stream identically.
fn draw_uniforms<R: Rng + ?Sized>(rng: &mut R, gamma: usize) -> Vec<f64> {
    (0..gamma).map(|_| rng.random::<f64>()).collect()
}

fn base_records(p: &[Distribution], proposal: &DraftProposal, u: &[f64]) -> Vec<PositionRecord> {
    proposal
        .tokens
        .iter()
        .enumerate()
        .map(|(t, &token)| PositionRecord {
            token,
            p: p[t].prob(token),
            q: proposal.q[t],
            u: u[t],
            r: None,
            judge_score: None,
            decision: Decision::NotReached,
        })
        .collect()
}

/// Walks positions left to right, letting `decide` fill in each record, and
/// stops at the first rejection. Returns the number of accepted drafts.
fn scan<F>(records: &mut [PositionRecord], mut decide: F) -> usize
where
    F: FnMut(usize, &mut PositionRecord),
{
    for (t, rec) in records.iter_mut().enumerate() {
        decide(t, rec);
        if !rec.decision.is_accept() {
            return t;
        }
    }
    records.len()
}

/// Acceptance ratio `min(1, p/q)` on the tempered distributions; at
/// temperature 0 it is 1 for the target argmax and 0 otherwise.
fn alignment_ratio(p: &Distribution, q: &Distribution, token: TokenId, temperature: f64) -> f64 {
    if temperature == 0.0 {
        return if token == p.argmax() { 1.0 } else { 0.0 };
    }
    let pt = p.tempered(temperature).prob(token);
    let qt = q.tempered(temperature).prob(token);
    if qt > 0.0 {
        (pt / qt).min(1.0)
    } else {
        1.0
    }
}

fn residual_correction<R: Rng + ?Sized>(
    p: &Distribution,
    q: &Distribution,
    temperature: f64,
    rng: &mut R,
) -> (TokenId, CorrectionSource) {
    if temperature == 0.0 {
        return (p.argmax(), CorrectionSource::Argmax);
    }
    let ps = p.tempered(temperature);
    match ps.residual(&q.tempered(temperature)) {
        Some(res) => (sample_inverse_cdf(&res, rng.random::<f64>()), CorrectionSource::Residual),
        None => {
            warn!("residual distribution vanished; sampling from the target distribution");
            (sample_token(&ps, 1.0, rng), CorrectionSource::TargetFallback)
        }
    }
}

fn finish<R: Rng + ?Sized>(
    records: Vec<PositionRecord>,
    accepted: usize,
    proposal: &DraftProposal,
    p: &[Distribution],
    temperature: f64,
    rng: &mut R,
    correction: impl FnOnce(usize, &mut R) -> (TokenId, CorrectionSource),
) -> VerificationTrace {
    let mut emitted = proposal.tokens[..accepted].to_vec();
    let (tok, source) = if accepted == proposal.gamma() {
        (sample_token(&p[accepted], temperature, rng), CorrectionSource::Bonus)
    } else {
        correction(accepted, rng)
    };
    emitted.push(tok);
    VerificationTrace { positions: records, accepted_count: accepted, emitted, correction_source: source }
}

/// Standard speculative sampling: accept `d_t` while `u_t < min(1, p_t/q_t)`,
/// then draw the correction from the residual or a bonus token from the last
/// target distribution.
pub fn verify_rejection<R: Rng + ?Sized>(
    p: &[Distribution],
    proposal: &DraftProposal,
    temperature: f64,
    rng: &mut R,
) -> Result<VerificationTrace> {
    check_shapes(p, proposal)?;
    let u = draw_uniforms(rng, proposal.gamma());
    let mut records = base_records(p, proposal, &u);
    let accepted = scan(&mut records, |t, rec| {
        let r = alignment_ratio(&p[t], &proposal.dists[t], rec.token, temperature);
        rec.r = Some(r);
        rec.decision = if rec.u < r { Decision::Accepted } else { Decision::Rejected };
    });
    Ok(finish(records, accepted, proposal, p, temperature, rng, |t, rng| {
        residual_correction(&p[t], &proposal.dists[t], temperature, rng)
    }))
}

/// Strict matching against the target argmax.
pub fn verify_greedy<R: Rng + ?Sized>(
    p: &[Distribution],
    proposal: &DraftProposal,
    temperature: f64,
    rng: &mut R,
) -> Result<VerificationTrace> {
    verify_rank_window(p, proposal, 1, temperature, rng)
}

/// Accept drafts that fall within the target's top-`k` (ties to lower ids).
pub fn verify_topk<R: Rng + ?Sized>(
    p: &[Distribution],
    proposal: &DraftProposal,
    k: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<VerificationTrace> {
    if k == 0 {
        return Err(Error::InvalidArgument("top-k needs k >= 1".into()));
    }
    if let Some(first) = p.first() {
        if k > first.len() {
            return Err(Error::InvalidArgument(format!("k = {k} exceeds vocabulary size {}", first.len())));
        }
    }
    verify_rank_window(p, proposal, k, temperature, rng)
}

fn verify_rank_window<R: Rng + ?Sized>(
    p: &[Distribution],
    proposal: &DraftProposal,
    k: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<VerificationTrace> {
    check_shapes(p, proposal)?;
    let u = draw_uniforms(rng, proposal.gamma());
    let mut records = base_records(p, proposal, &u);
    let accepted = scan(&mut records, |t, rec| {
        rec.decision = if p[t].rank(rec.token) < k { Decision::Accepted } else { Decision::Rejected };
    });
    Ok(finish(records, accepted, proposal, p, temperature, rng, |t, _| {
        (p[t].argmax(), CorrectionSource::Argmax)
    }))
}

/// Judge first, rejection sampling (greedy match at temperature 0) as the
/// fallback. A position is accepted if either stage accepts; the first
/// position both reject ends the cycle with the alignment rule's correction.
///
/// `r` is recorded for every reached position so the trace shows whether the
/// alignment rule alone would have accepted; `JudgeAccepted` marks positions
/// only the judge let through.
#[allow(clippy::too_many_arguments)]
pub fn verify_judge_two_stage<R: Rng + ?Sized>(
    features: &[FeatureVector],
    p: &[Distribution],
    proposal: &DraftProposal,
    judge: &JudgeModel,
    theta: f64,
    temperature: f64,
    rng: &mut R,
) -> Result<VerificationTrace> {
    check_shapes(p, proposal)?;
    if features.len() != proposal.gamma() {
        return Err(Error::InvalidArgument(format!(
            "expected {} feature vectors, got {}",
            proposal.gamma(),
            features.len()
        )));
    }
    if theta.is_nan() {
        return Err(Error::InvalidArgument("theta is NaN".into()));
    }
    let scores = features
        .iter()
        .map(|f| judge.predict_proba(f))
        .collect::<Result<Vec<_>>>()?;
    let u = draw_uniforms(rng, proposal.gamma());
    let mut records = base_records(p, proposal, &u);
    for (rec, &s) in records.iter_mut().zip(&scores) {
        rec.judge_score = Some(s);
    }
    let accepted = scan(&mut records, |t, rec| {
        let r = alignment_ratio(&p[t], &proposal.dists[t], rec.token, temperature);
        rec.r = Some(r);
        rec.decision = if rec.u < r {
            Decision::Accepted
        } else if scores[t] > theta {
            Decision::JudgeAccepted
        } else {
            Decision::Rejected
        };
    });
    Ok(finish(records, accepted, proposal, p, temperature, rng, |t, rng| {
        residual_correction(&p[t], &proposal.dists[t], temperature, rng)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn d(v: &[f64]) -> Distribution {
        Distribution::from_probs(v.to_vec())
    }

    fn proposal(tokens: &[TokenId], dists: Vec<Distribution>) -> DraftProposal {
        let q = tokens.iter().zip(&dists).map(|(&t, d)| d.prob(t)).collect();
        DraftProposal { tokens: tokens.to_vec(), q, dists }
    }

    #[test]
    fn target_dominates_accepts_everything() {
        let p = vec![d(&[0.1, 0.9]), d(&[0.2, 0.8]), d(&[0.5, 0.5])];
        let prop = proposal(&[1, 1], vec![d(&[0.3, 0.7]), d(&[0.4, 0.6])]);
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tr = verify_rejection(&p, &prop, 1.0, &mut rng).unwrap();
            assert_eq!(tr.accepted_count, 2);
            assert_eq!(tr.emitted.len(), 3);
            assert_eq!(tr.correction_source, CorrectionSource::Bonus);
            assert!(tr.positions.iter().all(|r| r.r == Some(1.0)));
        }
    }

    #[test]
    fn ratio_arithmetic_rejects() {
        // p(d) = 0.2, q(d) = 0.4 -> r = 0.5
        let p = vec![d(&[0.8, 0.2]), d(&[0.5, 0.5])];
        let prop = proposal(&[1], vec![d(&[0.6, 0.4])]);
        let mut found = false;
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tr = verify_rejection(&p, &prop, 1.0, &mut rng).unwrap();
            let rec = &tr.positions[0];
            assert!((rec.r.unwrap() - 0.5).abs() < 1e-15);
            assert_eq!(rec.decision == Decision::Accepted, rec.u < 0.5);
            if rec.u >= 0.7 && rec.u < 0.8 {
                found = true;
                assert_eq!(tr.accepted_count, 0);
                // residual = norm(max(0, [0.8, 0.2] - [0.6, 0.4])) = [1, 0]
                assert_eq!(tr.emitted, vec![0]);
                assert_eq!(tr.correction_source, CorrectionSource::Residual);
            }
        }
        assert!(found);
    }

    #[test]
    fn greedy_cases() {
        let p = vec![d(&[0.1, 0.6, 0.3]), d(&[0.7, 0.2, 0.1]), d(&[0.2, 0.2, 0.6])];
        let q = vec![d(&[0.3, 0.3, 0.4]), d(&[0.3, 0.3, 0.4])];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tr = verify_greedy(&p, &proposal(&[1, 0], q.clone()), 0.0, &mut rng).unwrap();
        assert_eq!(tr.emitted, vec![1, 0, 2]);
        let tr = verify_greedy(&p, &proposal(&[2, 0], q), 0.0, &mut rng).unwrap();
        assert_eq!(tr.accepted_count, 0);
        assert_eq!(tr.emitted, vec![1]);
        assert_eq!(tr.positions[1].decision, Decision::NotReached);
    }

    #[test]
    fn topk_rejects_oversized_k() {
        let p = vec![d(&[0.5, 0.5]), d(&[0.5, 0.5])];
        let prop = proposal(&[1], vec![d(&[0.5, 0.5])]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(verify_topk(&p, &prop, 3, 0.0, &mut rng).is_err());
        assert_eq!(verify_topk(&p, &prop, 2, 0.0, &mut rng).unwrap().accepted_count, 1);
    }

    #[test]
    fn shape_errors() {
        let p = vec![d(&[0.5, 0.5])];
        let prop = proposal(&[1], vec![d(&[0.5, 0.5])]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(verify_rejection(&p, &prop, 1.0, &mut rng).is_err());
    }
}
