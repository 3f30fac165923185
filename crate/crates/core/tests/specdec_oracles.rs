mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selfjudge_core::corpus::ReferenceChain;
use selfjudge_core::judge::{JudgeModel, Thresholds, TrainingMeta, JUDGE_FORMAT_VERSION};
use selfjudge_core::lm::{Distribution, FeatureExtractor, NGramModel, TokenId, FEATURE_DIM};
use selfjudge_core::specdec::{
    draft, target_scores, verify_greedy, verify_judge_two_stage, verify_rejection, verify_topk, DecodeConfig,
    Decoder, DraftProposal, Policy,
};

use common::{random_model, random_seq};

fn judge_with_weights(weights: Vec<f64>, bias: f64) -> JudgeModel {
    JudgeModel {
        format_version: JUDGE_FORMAT_VERSION,
        feature_dim: FEATURE_DIM,
        weights,
        bias,
        scaler: None,
        thresholds: Some(Thresholds { theta_recall: 0.1, theta_f1: 0.5 }),
        training_meta: TrainingMeta { c: 1.0, auc: None, seed: 0, iterations: 0, final_loss: 0.0, target_recall: None },
        provenance: None,
    }
}

fn random_dist(rng: &mut impl Rng, v: usize) -> Distribution {
    // coarse weights so ties show up
    let w: Vec<f64> = (0..v).map(|_| rng.random_range(1..5) as f64).collect();
    Distribution::from_weights(w).unwrap()
}

fn random_case(rng: &mut impl Rng, v: usize, gamma: usize) -> (Vec<Distribution>, DraftProposal) {
    let p: Vec<Distribution> = (0..=gamma).map(|_| random_dist(rng, v)).collect();
    let dists: Vec<Distribution> = (0..gamma).map(|_| random_dist(rng, v)).collect();
    let tokens: Vec<TokenId> = (0..gamma).map(|_| rng.random_range(0..v)).collect();
    let q = tokens.iter().zip(&dists).map(|(&t, d)| d.prob(t)).collect();
    (p, DraftProposal { tokens, q, dists })
}

/// Independent top-k membership: sort ids by (-prob, id) and look up.
fn in_topk_oracle(dist: &Distribution, token: TokenId, k: usize) -> bool {
    let mut ids: Vec<TokenId> = (0..dist.len()).collect();
    ids.sort_by(|&a, &b| dist.prob(b).partial_cmp(&dist.prob(a)).unwrap().then(a.cmp(&b)));
    ids[..k].contains(&token)
}

#[test]
fn greedy_draft_matches_plain_greedy_loop() {
    let chain = ReferenceChain::new();
    let corpus = chain.sample_corpus(100, 50, 3);
    let m = NGramModel::train(chain.vocab(), &corpus, 2, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for start in 0..20 {
        let prop = draft(&m, &[start], 4, 0.0, &mut rng);
        let mut ctx = vec![start];
        for _ in 0..4 {
            let next = m.next_distribution(&ctx).argmax();
            ctx.push(next);
        }
        assert_eq!(prop.tokens, ctx[1..].to_vec());
    }
}

#[test]
fn drafting_is_seeded() {
    let m = random_model(6, 2, 4);
    let a = draft(&m, &[1], 3, 1.0, &mut ChaCha8Rng::seed_from_u64(8));
    let b = draft(&m, &[1], 3, 1.0, &mut ChaCha8Rng::seed_from_u64(8));
    assert_eq!(a, b);
}

#[test]
fn target_scores_positionwise() {
    let (t, d) = (random_model(6, 3, 1), random_model(6, 2, 2));
    let fx = FeatureExtractor::default();
    let prefix = [0, 3];
    let drafted = [1, 4, 2];
    let s = target_scores(&t, &d, &fx, &prefix, &drafted);
    assert_eq!(s.dists.len(), 4);
    for j in 0..=drafted.len() {
        let ctx: Vec<TokenId> = prefix.iter().chain(&drafted[..j]).copied().collect();
        assert_eq!(s.dists[j], t.next_distribution(&ctx));
        if j < drafted.len() {
            assert_eq!(s.features[j], fx.extract(&t, &d, &ctx, drafted[j]));
        }
    }
}

#[test]
fn topk_matches_sort_and_rank_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..2000 {
        let v = rng.random_range(2..7);
        let gamma = rng.random_range(1..5);
        let k = rng.random_range(1..=v);
        let (p, prop) = random_case(&mut rng, v, gamma);
        let tr = verify_topk(&p, &prop, k, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let expected = (0..gamma).take_while(|&t| in_topk_oracle(&p[t], prop.tokens[t], k)).count();
        assert_eq!(tr.accepted_count, expected);
        if expected < gamma {
            assert_eq!(tr.emitted[expected], p[expected].argmax());
        }
        assert_eq!(verify_topk(&p, &prop, v, 0.0, &mut rng).unwrap().accepted_count, gamma);
    }
}

#[test]
fn judge_degenerate_thresholds() {
    let (t, d) = (random_model(6, 3, 10), random_model(6, 2, 11));
    let dec = Decoder::new(&t, &d);
    let judge = judge_with_weights((0..FEATURE_DIM).map(|i| (i as f64 * 0.7).sin()).collect(), 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for temperature in [0.0, 1.0] {
        for _ in 0..200 {
            let prefix = random_seq(&mut rng, 6, 3);
            let prop = draft(&d, &prefix, 4, temperature, &mut rng);
            let s = target_scores(&t, &d, &dec.extractor, &prefix, &prop.tokens);
            let seed = rng.random::<u64>();
            let base = verify_rejection(&s.dists, &prop, temperature, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let never = verify_judge_two_stage(
                &s.features, &s.dists, &prop, &judge, f64::INFINITY, temperature, &mut ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap();
            assert_eq!(never.accepted_count, base.accepted_count);
            assert_eq!(never.emitted, base.emitted);
            assert_eq!(never.correction_source, base.correction_source);
            for (a, b) in never.positions.iter().zip(&base.positions) {
                assert_eq!((a.token, a.u, a.r, a.decision), (b.token, b.u, b.r, b.decision));
            }
            let always = verify_judge_two_stage(
                &s.features, &s.dists, &prop, &judge, f64::NEG_INFINITY, temperature, &mut ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap();
            assert_eq!(always.accepted_count, 4);
            assert_eq!(always.emitted.len(), 5);
        }
    }
}

#[test]
fn judge_rejects_wrong_feature_dim() {
    let (t, d) = (random_model(6, 3, 10), random_model(6, 2, 11));
    let mut judge = judge_with_weights(vec![0.0; 3], 0.0);
    judge.feature_dim = 3;
    let dec = Decoder::new(&t, &d);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let prop = draft(&d, &[1], 2, 0.0, &mut rng);
    let s = target_scores(&t, &d, &dec.extractor, &[1], &prop.tokens);
    assert!(verify_judge_two_stage(&s.features, &s.dists, &prop, &judge, 0.5, 0.0, &mut rng).is_err());
}

#[test]
fn self_draft_accepts_everything() {
    let m = random_model(8, 3, 5);
    for gamma in 1..6 {
        let cfg = DecodeConfig { gamma, max_new_tokens: 60, policy: Policy::Greedy, ..Default::default() };
        let out = Decoder::new(&m, &m).decode(&[1, 2], &cfg).unwrap();
        assert!(out.traces.iter().all(|t| t.accepted_count == gamma));
        assert_eq!(out.metrics.mean_emitted_per_cycle, (gamma + 1) as f64);
    }
}

#[test]
fn metrics_bookkeeping() {
    let (t, d) = (random_model(6, 3, 20), random_model(6, 2, 21));
    for seed in 0..20 {
        let cfg = DecodeConfig { gamma: 3, max_new_tokens: 37, temperature: 1.0, seed, ..Default::default() };
        let out = Decoder::new(&t, &d).decode(&[0], &cfg).unwrap();
        let m = out.metrics;
        assert!((m.mean_emitted_per_cycle - m.mean_accepted_draft - 1.0).abs() < 1e-12);
        assert_eq!(m.total_emitted, out.tokens.len());
        assert_eq!(out.tokens.len(), 37);
        let concat: Vec<TokenId> = out.traces.iter().flat_map(|t| t.emitted.clone()).collect();
        assert_eq!(&concat[..37], &out.tokens[..]);
        for tr in &out.traces {
            assert_eq!(tr.emitted.len(), tr.accepted_count + 1);
            for rec in tr.positions.iter().filter(|r| r.r.is_some()) {
                // temperature 1: r = min(1, p/q) on the raw model probabilities
                assert!((rec.r.unwrap() - (rec.p / rec.q).min(1.0)).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn greedy_equals_top1(seed in any::<u64>(), v in 2usize..6, gamma in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, prop) = random_case(&mut rng, v, gamma);
        for temperature in [0.0, 1.0] {
            let a = verify_greedy(&p, &prop, temperature, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = verify_topk(&p, &prop, 1, temperature, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn topk_monotone_in_k(seed in any::<u64>(), v in 2usize..7, gamma in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, prop) = random_case(&mut rng, v, gamma);
        for k in 1..v {
            let a = verify_topk(&p, &prop, k, 0.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = verify_topk(&p, &prop, k + 1, 0.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert!(b.accepted_count >= a.accepted_count);
        }
    }

    #[test]
    fn lossless_at_temperature_zero(seed in 0u64..40, gamma in 1usize..8, budget in 1usize..40) {
        let t = random_model(7, 3, seed);
        let d = random_model(7, 2, seed + 100);
        let prompt = [seed as usize % 7];
        let expected = t.greedy_continuation(&prompt, budget, None);
        for policy in [Policy::Rejection, Policy::Greedy] {
            let cfg = DecodeConfig { gamma, max_new_tokens: budget, temperature: 0.0, seed, policy, eos: None };
            let out = Decoder::new(&t, &d).decode(&prompt, &cfg).unwrap();
            prop_assert_eq!(&out.tokens, &expected);
        }
    }

    #[test]
    fn two_stage_dominates_alignment(seed in any::<u64>(), temperature in prop::sample::select(vec![0.0, 1.0]), theta in 0.0f64..1.0) {
        let t = random_model(6, 3, seed % 17);
        let d = random_model(6, 2, seed % 13 + 50);
        let judge = judge_with_weights((0..FEATURE_DIM).map(|i| ((i as f64) + seed as f64).cos()).collect(), 0.0);
        let dec = Decoder::new(&t, &d).with_judge(&judge);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prefix = random_seq(&mut rng, 6, 2);
        let prop = draft(&d, &prefix, 5, temperature, &mut rng);
        let s = target_scores(&t, &d, &dec.extractor, &prefix, &prop.tokens);
        let base = dec.verify(&s, &prop, temperature, Policy::Rejection, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let judged = dec.verify(&s, &prop, temperature, Policy::Judge { theta }, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(judged.accepted_count >= base.accepted_count);
    }
}
