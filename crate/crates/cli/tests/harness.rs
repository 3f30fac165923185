use std::fs;
use std::path::Path;
use std::process::Command;

use selfjudge_cli::commands::{
    check_models, exact_sequence_distribution, load_report, sample_distribution, total_variation, PromptSets,
};
use selfjudge_cli::config::{CorpusSource, ModelConfig};
use selfjudge_cli::report::{parse_jsonl, OutputRecord};
use selfjudge_cli::{check_distribution, eval, gen_labels, train_judge, train_models, with_threads, Artifacts, Outcome, PipelineConfig};
use selfjudge_core::corpus::{tokenize_text, ReferenceChain, Tokenization};
use selfjudge_core::lm::NGramModel;
use selfjudge_core::specdec::{Decoder, Policy, TraceRecord};

fn small(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig { out: out.to_path_buf(), ..Default::default() };
    cfg.prompts.label_count = 60;
    cfg.prompts.eval_count = 20;
    cfg.decode.max_new_tokens = 24;
    cfg
}

fn run_all(cfg: &PipelineConfig) {
    for step in [train_models, gen_labels, train_judge, eval] {
        assert_eq!(step(cfg).unwrap(), Outcome::Pass);
    }
}

fn bytes(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap()
}

#[test]
fn tiny_text_corpus_round_trip_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus.txt");
    fs::write(&corpus, "the cat sat\nthe dog sat on the mat\na cat and a dog\n").unwrap();
    let mut cfg = small(&tmp.path().join("a"));
    cfg.corpus.source = CorpusSource::Text;
    cfg.corpus.path = Some(corpus.clone());
    cfg.corpus.tokenization = Tokenization::Whitespace;
    cfg.prompts = selfjudge_cli::config::PromptConfig { label_count: 1, eval_count: 1, length: 1 };
    train_models(&cfg).unwrap();

    let (vocab, seqs) = tokenize_text(&fs::read_to_string(&corpus).unwrap(), Tokenization::Whitespace).unwrap();
    let direct = NGramModel::train(vocab, &seqs, 3, 0.1).unwrap();
    let art = Artifacts::new(&cfg.out);
    let loaded = NGramModel::load(art.target()).unwrap();
    for ctx in [vec![], vec![0], vec![1, 2], vec![3, 0, 4]] {
        assert_eq!(loaded.next_distribution(&ctx), direct.next_distribution(&ctx));
    }

    let again = PipelineConfig { out: tmp.path().join("b"), ..cfg.clone() };
    train_models(&again).unwrap();
    for name in ["target.model.json", "draft.model.json", "prompts.json"] {
        assert_eq!(bytes(&cfg.out, name), bytes(&again.out, name), "{name}");
    }

    cfg.prompts.label_count = 10;
    assert!(train_models(&cfg).is_err(), "only two distinct one-token prompts exist");
}

#[test]
fn target_entropy_tracks_the_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    train_models(&cfg).unwrap();
    let target = NGramModel::load(Artifacts::new(tmp.path()).target()).unwrap();
    let chain = ReferenceChain::new();
    // average next-token entropy over contexts drawn from the chain itself
    let sample = chain.sample_corpus(50, 200, 999);
    let (mut total, mut n) = (0.0, 0);
    for seq in &sample {
        for i in 1..seq.len() {
            total += target.next_distribution(&seq[..i]).entropy();
            n += 1;
        }
    }
    let per_step = total / n as f64;
    assert!((per_step - chain.entropy_rate()).abs() < 0.1, "{per_step} vs {}", chain.entropy_rate());
}

#[test]
fn report_recomputes_from_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.eval.policies = vec!["rejection".into(), "topk:3".into(), "judge".into(), "judge:0.2".into()];
    cfg.eval.thetas = vec!["recall".parse().unwrap(), "f1".parse().unwrap()];
    run_all(&cfg);
    let art = Artifacts::new(tmp.path());
    let traces: Vec<TraceRecord> = parse_jsonl(&fs::read_to_string(art.traces()).unwrap()).unwrap();
    let outputs: Vec<OutputRecord> = parse_jsonl(&fs::read_to_string(art.outputs()).unwrap()).unwrap();
    let rows = load_report(&art.report_jsonl()).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.policy.as_str()).collect();
    assert_eq!(names, ["rejection", "topk:3", "judge@recall", "judge@f1", "judge:0.2"]);

    let target = NGramModel::load(art.target()).unwrap();
    let prompts = PromptSets::load(&art.prompts()).unwrap();
    for row in &rows {
        let ts: Vec<&TraceRecord> = traces.iter().filter(|t| t.policy == row.policy).collect();
        let emitted: usize = ts.iter().map(|t| t.emitted.len()).sum();
        let accepted: usize = ts.iter().map(|t| t.accepted_count).sum();
        assert_eq!(row.cycles, ts.len());
        assert!((row.m - emitted as f64 / ts.len() as f64).abs() < 1e-12);
        assert!((row.mean_accepted_draft - accepted as f64 / ts.len() as f64).abs() < 1e-12);

        let os: Vec<&OutputRecord> = outputs.iter().filter(|o| o.policy == row.policy).collect();
        let (mut ll, mut toks, mut exact) = (0.0, 0, 0);
        for o in &os {
            let prompt = &prompts.eval[o.prompt_id].tokens;
            let mut ctx = prompt.clone();
            for &t in &o.tokens {
                ll += target.next_distribution(&ctx).prob(t).ln();
                ctx.push(t);
            }
            toks += o.tokens.len();
            exact += (o.tokens == target.greedy_continuation(prompt, cfg.decode.max_new_tokens, None)) as usize;
            // traces concatenate to the output, up to the truncated last cycle
            let cat: Vec<usize> = ts.iter().filter(|t| t.prompt_id == o.prompt_id).flat_map(|t| t.emitted.clone()).collect();
            assert_eq!(&cat[..o.tokens.len()], &o.tokens[..]);
        }
        assert!((row.mean_target_loglik - ll / toks as f64).abs() < 1e-9);
        assert_eq!(row.exact_match_rate, exact as f64 / os.len() as f64);
    }
    assert_eq!(rows[0].exact_match_rate, 1.0);
}

#[test]
fn self_draft_gives_full_acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.draft = ModelConfig { order: 3, alpha: 0.1 };
    cfg.eval.policies = vec!["greedy".into()];
    train_models(&cfg).unwrap();
    eval(&cfg).unwrap();
    let rows = load_report(&Artifacts::new(tmp.path()).report_jsonl()).unwrap();
    // budget 24 = 3 full cycles of gamma + 1 = 7, then a truncated one
    let traces: Vec<TraceRecord> =
        parse_jsonl(&fs::read_to_string(Artifacts::new(tmp.path()).traces()).unwrap()).unwrap();
    assert!(traces.iter().all(|t| t.accepted_count == cfg.decode.gamma));
    assert_eq!(rows[0].m, (cfg.decode.gamma + 1) as f64);
}

#[test]
fn eval_guards() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    train_models(&cfg).unwrap();
    // judge policy without a verifier file
    let err = eval(&cfg).unwrap_err();
    assert!(format!("{err:#}").contains("verifier"));

    let art = Artifacts::new(tmp.path());
    let mut sets: PromptSets = serde_json::from_str(&fs::read_to_string(art.prompts()).unwrap()).unwrap();
    sets.eval[0].tokens = sets.label[3].tokens.clone();
    fs::write(art.prompts(), serde_json::to_string(&sets).unwrap()).unwrap();
    let no_judge = PipelineConfig { eval: selfjudge_cli::config::EvalConfig { policies: vec!["rejection".into()], thetas: vec![] }, ..cfg };
    assert!(format!("{:#}", eval(&no_judge).unwrap_err()).contains("labeling set"));
}

#[test]
fn artifacts_independent_of_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let one = PipelineConfig { threads: Some(1), ..small(&tmp.path().join("one")) };
    let many = PipelineConfig { threads: Some(4), ..small(&tmp.path().join("many")) };
    with_threads(one.threads, || run_all(&one)).unwrap();
    with_threads(many.threads, || run_all(&many)).unwrap();
    for name in [
        "target.model.json",
        "draft.model.json",
        "prompts.json",
        "dataset.jsonl",
        "dataset.summary.json",
        "verifier.json",
        "report.jsonl",
        "report.txt",
        "traces.jsonl",
        "outputs.jsonl",
    ] {
        assert_eq!(bytes(&one.out, name), bytes(&many.out, name), "{name}");
    }
}

#[test]
fn distribution_check_bounds_and_degenerate_agreement() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.check_distribution.vocab = 9;
    assert!(check_distribution(&cfg).is_err());
    cfg.check_distribution.vocab = 6;
    cfg.check_distribution.length = 5;
    assert!(check_distribution(&cfg).is_err());

    let (target, _) = check_models(6, 3).unwrap();
    let exact = exact_sequence_distribution(&target, &[0, 1], 3);
    assert!((exact.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let same = Decoder::new(&target, &target);
    let emp = sample_distribution(&same, &[0, 1], 3, 2, Policy::Rejection, 50_000, 3).unwrap();
    assert!(total_variation(&exact, &emp) < 0.02);
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_selfjudge")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(cli(&["check-theorem", "--out", out]).status.code(), Some(0));
    assert_eq!(cli(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(cli(&["eval", "--out", out, "--theta", "sideways"]).status.code(), Some(2));
    assert_eq!(cli(&["eval", "--out", out, "--policy", "rejection"]).status.code(), Some(2), "models missing");

    let config = tmp.path().join("strict.toml");
    fs::write(&config, "[check_distribution]\nsamples = 2000\ntolerance = 0.0\n").unwrap();
    let o = cli(&["check-distribution", "--config", config.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));

    fs::write(&config, "[check_distribution]\nvocab = 12\n").unwrap();
    assert_eq!(cli(&["check-distribution", "--config", config.to_str().unwrap(), "--out", out]).status.code(), Some(2));

    let o = cli(&["train-models", "--out", out, "--seed", "5", "--gamma", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let prov: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("target.model.json")).unwrap()).unwrap();
    assert_eq!(prov["provenance"]["seed"], 5);
    assert_eq!(prov["provenance"]["config"]["decode"]["gamma"], 3);
}
