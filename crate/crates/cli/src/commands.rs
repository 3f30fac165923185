//! The six pipeline commands. Each reads and writes artifacts under the
//! configured output directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use selfjudge_core::corpus::{tokenize_text, Prompt, ReferenceChain};
use selfjudge_core::info::{check_theorem as run_theorem_check, TheoremReport};
use selfjudge_core::judge::{grid_search, JudgeModel, JUDGE_FORMAT_VERSION};
use selfjudge_core::lm::{FeatureExtractor, NGramModel, TokenId, Vocab, FEATURE_DIM};
use selfjudge_core::semlabel::{build_dataset, calibrate_from_prompts, Dataset, DatasetSummary};
use selfjudge_core::specdec::{Decoder, Policy, TraceRecord};

use crate::config::{CorpusSource, PipelineConfig, ThetaSpec};
use crate::derive_seed;
use crate::report::{parse_jsonl, reduce, render_table, to_jsonl, OutputRecord, ReportRow};

/// Result of a command: checks can fail without erroring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

/// File names inside the output directory.
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn prompts(&self) -> PathBuf {
        self.path("prompts.json")
    }
    pub fn target(&self) -> PathBuf {
        self.path("target.model.json")
    }
    pub fn draft(&self) -> PathBuf {
        self.path("draft.model.json")
    }
    pub fn dataset(&self) -> PathBuf {
        self.path("dataset.jsonl")
    }
    pub fn dataset_summary(&self) -> PathBuf {
        self.path("dataset.summary.json")
    }
    pub fn verifier(&self) -> PathBuf {
        self.path("verifier.json")
    }
    pub fn report_jsonl(&self) -> PathBuf {
        self.path("report.jsonl")
    }
    pub fn report_txt(&self) -> PathBuf {
        self.path("report.txt")
    }
    pub fn traces(&self) -> PathBuf {
        self.path("traces.jsonl")
    }
    pub fn outputs(&self) -> PathBuf {
        self.path("outputs.jsonl")
    }
    pub fn timing(&self) -> PathBuf {
        self.path("timing.json")
    }
    pub fn distribution_check(&self) -> PathBuf {
        self.path("check_distribution.json")
    }
    pub fn theorem_check(&self) -> PathBuf {
        self.path("check_theorem.json")
    }
}

fn provenance(cfg: &PipelineConfig, command: &str) -> Value {
    json!({ "command": command, "seed": cfg.seed, "config": cfg.echo() })
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {} (run the earlier pipeline steps first)", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSets {
    pub label: Vec<Prompt>,
    pub eval: Vec<Prompt>,
    pub provenance: Value,
}

impl PromptSets {
    /// Label and evaluation prompts must not share token sequences.
    pub fn assert_disjoint(&self) -> Result<()> {
        let label: BTreeSet<&[TokenId]> = self.label.iter().map(|p| p.tokens.as_slice()).collect();
        if let Some(p) = self.eval.iter().find(|p| label.contains(p.tokens.as_slice())) {
            bail!("evaluation prompt {} also appears in the labeling set", p.id);
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sets: PromptSets = serde_json::from_str(&read(path)?)?;
        sets.assert_disjoint()?;
        Ok(sets)
    }
}

fn build_corpus(cfg: &PipelineConfig) -> Result<(Vocab, Vec<Vec<TokenId>>)> {
    match cfg.corpus.source {
        CorpusSource::Reference => {
            let chain = ReferenceChain::new();
            let corpus = chain.sample_corpus(cfg.corpus.sequences, cfg.corpus.length, derive_seed(cfg.seed, "corpus", 0));
            Ok((chain.vocab(), corpus))
        }
        CorpusSource::Text => {
            let path = cfg.corpus.path.as_ref().expect("validated");
            Ok(tokenize_text(&read(path)?, cfg.corpus.tokenization)?)
        }
    }
}

/// Distinct prompts split into labeling and evaluation sets.
fn build_prompts(cfg: &PipelineConfig, corpus: &[Vec<TokenId>]) -> Result<(Vec<Prompt>, Vec<Prompt>)> {
    let need = cfg.prompts.label_count + cfg.prompts.eval_count;
    let len = cfg.prompts.length;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "prompts", 0));
    let mut seen = BTreeSet::new();
    let mut unique = Vec::with_capacity(need);
    match cfg.corpus.source {
        CorpusSource::Reference => {
            let chain = ReferenceChain::new();
            let mut attempts = 0;
            while unique.len() < need {
                attempts += 1;
                ensure!(attempts < 100 * need + 1000, "could not draw {need} distinct prompts of length {len}");
                let p = chain.sample_sequence(len, &mut rng);
                if seen.insert(p.clone()) {
                    unique.push(p);
                }
            }
        }
        CorpusSource::Text => {
            let mut order: Vec<usize> = (0..corpus.len()).collect();
            order.shuffle(&mut rng);
            for i in order {
                if corpus[i].len() > len && seen.insert(corpus[i][..len].to_vec()) {
                    unique.push(corpus[i][..len].to_vec());
                    if unique.len() == need {
                        break;
                    }
                }
            }
            ensure!(unique.len() == need, "corpus yields only {} distinct prompts of length {len}, need {need}", unique.len());
        }
    }
    let eval = unique.split_off(cfg.prompts.label_count);
    let wrap = |v: Vec<Vec<TokenId>>| v.into_iter().enumerate().map(|(id, tokens)| Prompt { id, tokens }).collect();
    Ok((wrap(unique), wrap(eval)))
}

/// Trains target and draft models and fixes the prompt sets.
pub fn train_models(cfg: &PipelineConfig) -> Result<Outcome> {
    let art = Artifacts::new(&cfg.out);
    let (vocab, corpus) = build_corpus(cfg)?;
    info!("corpus: {} sequences, {} symbols", corpus.len(), vocab.len());
    let target = NGramModel::train(vocab.clone(), &corpus, cfg.target.order, cfg.target.alpha)?;
    let draft = NGramModel::train(vocab, &corpus, cfg.draft.order, cfg.draft.alpha)?;
    let prov = provenance(cfg, "train-models");
    write(&art.target(), &(target.to_json(Some(prov.clone()))? + "\n"))?;
    write(&art.draft(), &(draft.to_json(Some(prov.clone()))? + "\n"))?;

    let (label, eval) = build_prompts(cfg, &corpus)?;
    let sets = PromptSets { label, eval, provenance: prov };
    sets.assert_disjoint()?;
    write(&art.prompts(), &(serde_json::to_string_pretty(&sets)? + "\n"))?;
    info!("wrote models and {} + {} prompts to {}", sets.label.len(), sets.eval.len(), art.dir.display());
    Ok(Outcome::Pass)
}

fn load_models(art: &Artifacts) -> Result<(NGramModel, NGramModel)> {
    let target = NGramModel::from_json(&read(&art.target())?).context("loading target model")?;
    let draft = NGramModel::from_json(&read(&art.draft())?).context("loading draft model")?;
    ensure!(target.vocab() == draft.vocab(), "target and draft vocabularies differ");
    Ok((target, draft))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    #[serde(flatten)]
    pub summary: DatasetSummary,
    pub tau_source: String,
    pub provenance: Value,
}

/// Mines, scores and labels mismatches over the labeling prompts.
pub fn gen_labels(cfg: &PipelineConfig) -> Result<Outcome> {
    let art = Artifacts::new(&cfg.out);
    let (target, draft) = load_models(&art)?;
    let prompts = PromptSets::load(&art.prompts())?;
    let (tau, tau_source) = match cfg.label.tau {
        Some(t) => (t, "config".to_string()),
        None => {
            let t = calibrate_from_prompts(&target, &draft, &prompts.label, &cfg.label)?;
            (t, format!("q{} of derailing substitutions", cfg.label.calibration_quantile))
        }
    };
    info!("tau = {tau} ({tau_source})");
    let extractor = FeatureExtractor::default();
    let dataset = build_dataset(&target, &draft, &extractor, &prompts.label, &cfg.label, tau)?;
    write(&art.dataset(), &dataset.to_jsonl()?)?;
    let summary = SummaryFile { summary: dataset.summary.clone(), tau_source, provenance: provenance(cfg, "gen-labels") };
    write(&art.dataset_summary(), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    info!("{} mismatches, {} acceptable", dataset.summary.num_mismatches, dataset.summary.num_acceptable);
    Ok(Outcome::Pass)
}

/// Grid-searches the verifier on the labeled dataset.
pub fn train_judge(cfg: &PipelineConfig) -> Result<Outcome> {
    let art = Artifacts::new(&cfg.out);
    let examples = Dataset::parse_jsonl(&read(&art.dataset())?)?;
    ensure!(!examples.is_empty(), "dataset {} is empty", art.dataset().display());
    let features: Vec<_> = examples.iter().map(|e| e.features.clone()).collect();
    let labels: Vec<bool> = examples.iter().map(|e| e.label).collect();
    let mut model = grid_search(&features, &labels, &cfg.train).context("training the verifier")?;
    model.provenance = Some(provenance(cfg, "train-judge"));
    write(&art.verifier(), &(model.to_json()? + "\n"))?;
    info!(
        "selected C = {} with holdout AUC {:.4}",
        model.training_meta.c,
        model.training_meta.auc.unwrap_or(f64::NAN)
    );
    Ok(Outcome::Pass)
}

/// Named decoding policies to evaluate, with judge thresholds resolved.
pub fn expand_policies(cfg: &PipelineConfig, judge: Option<&JudgeModel>) -> Result<Vec<(String, Policy)>> {
    let mut out = Vec::new();
    for spec in &cfg.eval.policies {
        if spec == "judge" {
            for theta in &cfg.eval.thetas {
                out.push((format!("judge@{theta}"), Policy::Judge { theta: resolve_theta(*theta, judge)? }));
            }
        } else {
            out.push((spec.clone(), spec.parse()?));
        }
    }
    Ok(out)
}

fn resolve_theta(spec: ThetaSpec, judge: Option<&JudgeModel>) -> Result<f64> {
    let thresholds = || {
        judge
            .and_then(|j| j.thresholds)
            .ok_or_else(|| anyhow::anyhow!("calibrated theta requested but the verifier has no thresholds"))
    };
    Ok(match spec {
        ThetaSpec::Value(v) => v,
        ThetaSpec::F1 => thresholds()?.theta_f1,
        ThetaSpec::Recall => thresholds()?.theta_recall,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportLine {
    Config { provenance: Value, policies: Vec<(String, Policy)> },
    Row(ReportRow),
}

/// Decodes every evaluation prompt under every policy with shared per-prompt
/// seeds, then writes traces, outputs and the report derived from them.
pub fn eval(cfg: &PipelineConfig) -> Result<Outcome> {
    let art = Artifacts::new(&cfg.out);
    let (target, draft) = load_models(&art)?;
    let prompts = PromptSets::load(&art.prompts())?;
    let needs_judge = cfg.eval.policies.iter().any(|p| p.starts_with("judge"));
    let judge = if needs_judge {
        let path = art.verifier();
        ensure!(path.is_file(), "judge policy requested but no verifier at {}", path.display());
        Some(JudgeModel::from_json(&read(&path)?)?)
    } else {
        None
    };
    let policies = expand_policies(cfg, judge.as_ref())?;
    let mut decoder = Decoder::new(&target, &draft);
    if let Some(j) = &judge {
        decoder = decoder.with_judge(j);
    }

    let base = cfg.decode_config();
    let references: Vec<Vec<TokenId>> = prompts
        .eval
        .par_iter()
        .map(|p| target.greedy_continuation(&p.tokens, base.max_new_tokens, base.eos))
        .collect();

    let mut traces = Vec::new();
    let mut outputs = Vec::new();
    let mut timing = serde_json::Map::new();
    for (name, policy) in &policies {
        let start = Instant::now();
        let results = prompts
            .eval
            .par_iter()
            .zip(&references)
            .map(|(p, reference)| {
                let config = selfjudge_core::specdec::DecodeConfig {
                    policy: *policy,
                    seed: derive_seed(cfg.seed, "eval", p.id as u64),
                    ..base
                };
                let out = decoder.decode(&p.tokens, &config)?;
                let loglik = if out.tokens.is_empty() { 0.0 } else { target.sequence_logprob(&out.tokens, &p.tokens)? };
                let record = OutputRecord {
                    policy: name.clone(),
                    prompt_id: p.id,
                    exact_match: &out.tokens == reference,
                    tokens: out.tokens,
                    target_loglik: loglik,
                };
                let cycles: Vec<TraceRecord> =
                    out.traces.iter().enumerate().map(|(c, t)| TraceRecord::new(name, p.id, c, t)).collect();
                Ok((record, cycles))
            })
            .collect::<Result<Vec<_>>>()?;
        timing.insert(name.clone(), json!(start.elapsed().as_secs_f64()));
        for (record, cycles) in results {
            outputs.push(record);
            traces.extend(cycles);
        }
    }

    let rows = reduce(&traces, &outputs);
    let prov = provenance(cfg, "eval");
    let mut lines = vec![ReportLine::Config { provenance: prov.clone(), policies: policies.clone() }];
    lines.extend(rows.iter().cloned().map(ReportLine::Row));
    write(&art.traces(), &to_jsonl(&traces)?)?;
    write(&art.outputs(), &to_jsonl(&outputs)?)?;
    write(&art.report_jsonl(), &to_jsonl(&lines)?)?;
    let table = render_table(&rows);
    let header = format!(
        "seed {}  gamma {}  temperature {}  prompts {}  max_new_tokens {}\n\n",
        cfg.seed,
        base.gamma,
        base.temperature,
        prompts.eval.len(),
        base.max_new_tokens
    );
    write(&art.report_txt(), &(header + &table))?;
    write(&art.timing(), &(serde_json::to_string_pretty(&Value::Object(timing))? + "\n"))?;
    print!("{table}");
    Ok(Outcome::Pass)
}

/// Reads back stored report rows.
pub fn load_report(path: &Path) -> Result<Vec<ReportRow>> {
    let lines: Vec<ReportLine> = parse_jsonl(&read(path)?)?;
    Ok(lines
        .into_iter()
        .filter_map(|l| match l {
            ReportLine::Row(r) => Some(r),
            ReportLine::Config { .. } => None,
        })
        .collect())
}

pub const MAX_CHECK_VOCAB: usize = 8;
pub const MAX_CHECK_LENGTH: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionCheck {
    pub policy: String,
    pub samples: usize,
    pub tv_distance: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub vocab: usize,
    pub length: usize,
    pub prompt: Vec<TokenId>,
    pub check: DistributionCheck,
    /// Accept-everything verifier; must exceed the tolerance.
    pub negative_control: DistributionCheck,
    pub provenance: Value,
}

/// Small models with a peaked second-order structure that the draft
/// (one token of context) cannot fully see.
pub fn check_models(vocab: usize, seed: u64) -> Result<(NGramModel, NGramModel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "check-distribution", 0));
    let corpus: Vec<Vec<TokenId>> = (0..300)
        .map(|_| {
            let mut s = vec![rng.random_range(0..vocab), rng.random_range(0..vocab)];
            while s.len() < 30 {
                let (a, b) = (s[s.len() - 2], s[s.len() - 1]);
                let next = if rng.random::<f64>() < 0.6 { (2 * a + b + 1) % vocab } else { rng.random_range(0..vocab) };
                s.push(next);
            }
            s
        })
        .collect();
    let v = Vocab::symbolic(vocab)?;
    Ok((NGramModel::train(v.clone(), &corpus, 3, 0.5)?, NGramModel::train(v, &corpus, 2, 0.5)?))
}

/// Exact probability of every length-`len` continuation, indexed in base `V`.
pub fn exact_sequence_distribution(target: &NGramModel, prompt: &[TokenId], len: usize) -> Vec<f64> {
    let v = target.vocab_size();
    let mut probs = vec![1.0];
    let mut prefixes: Vec<Vec<TokenId>> = vec![prompt.to_vec()];
    for _ in 0..len {
        let mut next_probs = Vec::with_capacity(probs.len() * v);
        let mut next_prefixes = Vec::with_capacity(probs.len() * v);
        for (p, prefix) in probs.iter().zip(&prefixes) {
            let dist = target.next_distribution(prefix);
            for tok in 0..v {
                next_probs.push(p * dist.prob(tok));
                let mut np = prefix.clone();
                np.push(tok);
                next_prefixes.push(np);
            }
        }
        probs = next_probs;
        prefixes = next_prefixes;
    }
    probs
}

fn sequence_index(tokens: &[TokenId], v: usize) -> usize {
    tokens.iter().fold(0, |acc, &t| acc * v + t)
}

/// Empirical distribution of speculative outputs over `samples` seeded runs.
pub fn sample_distribution(
    decoder: &Decoder<'_>,
    prompt: &[TokenId],
    len: usize,
    gamma: usize,
    policy: Policy,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let v = decoder.target.vocab_size();
    let cells = v.pow(len as u32);
    let counts = (0..samples)
        .into_par_iter()
        .try_fold(
            || vec![0u64; cells],
            |mut acc, i| -> Result<Vec<u64>> {
                let config = selfjudge_core::specdec::DecodeConfig {
                    gamma,
                    max_new_tokens: len,
                    temperature: 1.0,
                    seed: derive_seed(seed, "sample", i as u64),
                    policy,
                    eos: None,
                };
                let out = decoder.decode(prompt, &config)?;
                acc[sequence_index(&out.tokens, v)] += 1;
                Ok(acc)
            },
        )
        .try_reduce(
            || vec![0u64; cells],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    Ok(counts.into_iter().map(|c| c as f64 / samples as f64).collect())
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn accept_all_judge() -> JudgeModel {
    JudgeModel {
        format_version: JUDGE_FORMAT_VERSION,
        feature_dim: FEATURE_DIM,
        weights: vec![0.0; FEATURE_DIM],
        bias: 0.0,
        scaler: None,
        thresholds: None,
        training_meta: selfjudge_core::judge::TrainingMeta {
            c: 1.0,
            auc: None,
            seed: 0,
            iterations: 0,
            final_loss: 0.0,
            target_recall: None,
        },
        provenance: None,
    }
}

/// Monte-Carlo check that speculative sampling reproduces the exact target
/// sequence distribution, with an accept-everything negative control.
pub fn check_distribution(cfg: &PipelineConfig) -> Result<(Outcome, DistributionReport)> {
    let c = &cfg.check_distribution;
    ensure!(
        c.vocab >= 2 && c.vocab <= MAX_CHECK_VOCAB && c.length >= 1 && c.length <= MAX_CHECK_LENGTH,
        "check-distribution supports 2 <= vocab <= {MAX_CHECK_VOCAB} and 1 <= length <= {MAX_CHECK_LENGTH}, got vocab {} length {}",
        c.vocab,
        c.length
    );
    ensure!(c.samples > 0 && c.gamma > 0, "samples and gamma must be positive");
    let (target, draft) = check_models(c.vocab, cfg.seed)?;
    let prompt = vec![0, 1];
    let exact = exact_sequence_distribution(&target, &prompt, c.length);

    let policy = match cfg.eval.policies.as_slice() {
        [one] if one != "judge" => one.parse()?,
        _ => Policy::Rejection,
    };
    let decoder = Decoder::new(&target, &draft);
    let empirical = sample_distribution(&decoder, &prompt, c.length, c.gamma, policy, c.samples, cfg.seed)?;
    let tv = total_variation(&exact, &empirical);
    let check = DistributionCheck { policy: policy.to_string(), samples: c.samples, tv_distance: tv, tolerance: c.tolerance, passed: tv < c.tolerance };

    let judge = accept_all_judge();
    let broken = Decoder::new(&target, &draft).with_judge(&judge);
    let control_policy = Policy::Judge { theta: f64::NEG_INFINITY };
    let empirical = sample_distribution(&broken, &prompt, c.length, c.gamma, control_policy, c.samples, cfg.seed)?;
    let tv = total_variation(&exact, &empirical);
    let negative_control = DistributionCheck {
        policy: "accept-all".into(),
        samples: c.samples,
        tv_distance: tv,
        tolerance: c.tolerance,
        passed: tv < c.tolerance,
    };

    let report = DistributionReport {
        vocab: c.vocab,
        length: c.length,
        prompt,
        check,
        negative_control,
        provenance: provenance(cfg, "check-distribution"),
    };
    write(&Artifacts::new(&cfg.out).distribution_check(), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    let ok = report.check.passed && !report.negative_control.passed;
    Ok((if ok { Outcome::Pass } else { Outcome::Fail }, report))
}

/// Exact-enumeration check of the conditional-entropy inequality.
pub fn check_theorem(cfg: &PipelineConfig) -> Result<(Outcome, TheoremReport)> {
    let report = run_theorem_check(cfg.check_theorem.trials, cfg.seed);
    let doc = json!({ "report": report, "passed": report.passed(), "provenance": provenance(cfg, "check-theorem") });
    write(&Artifacts::new(&cfg.out).theorem_check(), &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    Ok((if report.passed() { Outcome::Pass } else { Outcome::Fail }, report))
}
