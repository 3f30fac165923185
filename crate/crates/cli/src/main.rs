use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use selfjudge_cli::{
    check_distribution, check_theorem, eval, gen_labels, train_judge, train_models, with_threads, Outcome, Overrides,
    PipelineConfig, ThetaSpec,
};

#[derive(Parser)]
#[command(name = "selfjudge", version, about = "Speculative decoding with a self-supervised judge verifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML pipeline config; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (artifacts do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Draft tokens per cycle.
    #[arg(long, global = true)]
    gamma: Option<usize>,
    #[arg(long, global = true)]
    temperature: Option<f64>,
    /// rejection, greedy, topk:K, judge or judge:<theta>. Repeatable.
    #[arg(long, global = true)]
    policy: Vec<String>,
    /// Judge threshold: recall, f1 or a probability. Repeatable.
    #[arg(long, global = true)]
    theta: Vec<ThetaSpec>,
}

#[derive(Subcommand)]
enum Command {
    /// Train target and draft n-gram models and fix the prompt sets.
    TrainModels,
    /// Mine, score and label draft/target mismatches.
    GenLabels,
    /// Grid-search the logistic verifier and calibrate thresholds.
    TrainJudge,
    /// Decode held-out prompts under each policy and write the report.
    Eval,
    /// Monte-Carlo check that speculative sampling preserves the target distribution.
    CheckDistribution,
    /// Exact check that conditioning on the suffix never raises entropy.
    CheckTheorem,
    /// Run train-models, gen-labels, train-judge and eval in sequence.
    Pipeline,
}

fn resolve(common: &Common) -> Result<PipelineConfig> {
    let base = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    base.resolve(&Overrides {
        seed: common.seed,
        out: common.out.clone(),
        threads: common.threads,
        gamma: common.gamma,
        temperature: common.temperature,
        policies: common.policy.clone(),
        thetas: common.theta.clone(),
    })
}

fn run(command: &Command, cfg: &PipelineConfig) -> Result<Outcome> {
    match command {
        Command::TrainModels => train_models(cfg),
        Command::GenLabels => gen_labels(cfg),
        Command::TrainJudge => train_judge(cfg),
        Command::Eval => eval(cfg),
        Command::CheckDistribution => {
            let (outcome, r) = check_distribution(cfg)?;
            println!(
                "{} TV = {:.5} ({} samples, tolerance {})",
                r.check.policy, r.check.tv_distance, r.check.samples, r.check.tolerance
            );
            println!("accept-all control TV = {:.5} (must exceed the tolerance)", r.negative_control.tv_distance);
            println!("{}", if outcome == Outcome::Pass { "PASS" } else { "FAIL" });
            Ok(outcome)
        }
        Command::CheckTheorem => {
            let (outcome, r) = check_theorem(cfg)?;
            println!(
                "{} joints: {} monotonicity, {} strictness, {} identity violations ({} strict cases, max gap error {:.2e})",
                r.trials,
                r.monotonicity_violations,
                r.strictness_violations,
                r.identity_violations,
                r.strict_cases,
                r.max_gap_error
            );
            println!("{}", if outcome == Outcome::Pass { "PASS" } else { "FAIL" });
            Ok(outcome)
        }
        Command::Pipeline => {
            for step in [train_models, gen_labels, train_judge, eval] {
                step(cfg)?;
            }
            Ok(Outcome::Pass)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match resolve(&cli.common) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match with_threads(cfg.threads, || run(&cli.command, &cfg)) {
        Ok(Ok(Outcome::Pass)) => ExitCode::SUCCESS,
        Ok(Ok(Outcome::Fail)) => ExitCode::from(1),
        Ok(Err(e)) | Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
