//! Pipeline configuration: a TOML file with per-section defaults, overridden
//! by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use selfjudge_core::corpus::Tokenization;
use selfjudge_core::judge::TrainConfig;
use selfjudge_core::semlabel::LabelConfig;
use selfjudge_core::specdec::DecodeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusSource {
    /// Seeded samples from the built-in reference chain.
    Reference,
    /// A plain-text file, one sequence per line.
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub source: CorpusSource,
    pub path: Option<PathBuf>,
    pub tokenization: Tokenization,
    /// Sequences drawn from the reference chain.
    pub sequences: usize,
    pub length: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { source: CorpusSource::Reference, path: None, tokenization: Tokenization::Character, sequences: 400, length: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub label_count: usize,
    pub eval_count: usize,
    pub length: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self { label_count: 400, eval_count: 100, length: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub order: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub gamma: usize,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub eos: Option<usize>,
}

impl Default for DecodeSection {
    fn default() -> Self {
        let d = DecodeConfig::default();
        Self { gamma: d.gamma, max_new_tokens: 48, temperature: d.temperature, eos: d.eos }
    }
}

/// A verifier threshold: one of the calibrated values or a literal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaSpec {
    Recall,
    F1,
    Value(f64),
}

impl std::str::FromStr for ThetaSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "recall" => Ok(ThetaSpec::Recall),
            "f1" => Ok(ThetaSpec::F1),
            _ => s.parse().map(ThetaSpec::Value).map_err(|_| format!("theta must be recall, f1 or a number, got {s:?}")),
        }
    }
}

impl std::fmt::Display for ThetaSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ThetaSpec::Recall => write!(f, "recall"),
            ThetaSpec::F1 => write!(f, "f1"),
            ThetaSpec::Value(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for ThetaSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ThetaSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// `rejection`, `greedy`, `topk:K`, `judge` (one row per theta) or `judge:<theta>`.
    pub policies: Vec<String>,
    pub thetas: Vec<ThetaSpec>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { policies: vec!["rejection".into(), "greedy".into(), "judge".into()], thetas: vec![ThetaSpec::F1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistributionCheckConfig {
    pub vocab: usize,
    pub length: usize,
    pub samples: usize,
    pub gamma: usize,
    pub tolerance: f64,
}

impl Default for DistributionCheckConfig {
    fn default() -> Self {
        Self { vocab: 6, length: 3, samples: 200_000, gamma: 2, tolerance: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoremCheckConfig {
    pub trials: usize,
}

impl Default for TheoremCheckConfig {
    fn default() -> Self {
        Self { trials: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; `None` uses every core. Never affects artifacts.
    pub threads: Option<usize>,
    pub corpus: CorpusConfig,
    pub prompts: PromptConfig,
    pub target: ModelConfig,
    pub draft: ModelConfig,
    pub decode: DecodeSection,
    pub label: LabelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub check_distribution: DistributionCheckConfig,
    pub check_theorem: TheoremCheckConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("run"),
            threads: None,
            corpus: CorpusConfig::default(),
            prompts: PromptConfig::default(),
            target: ModelConfig { order: 3, alpha: 0.1 },
            draft: ModelConfig { order: 2, alpha: 0.1 },
            decode: DecodeSection::default(),
            label: LabelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            check_distribution: DistributionCheckConfig::default(),
            check_theorem: TheoremCheckConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub gamma: Option<usize>,
    pub temperature: Option<f64>,
    pub policies: Vec<String>,
    pub thetas: Vec<ThetaSpec>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if o.threads.is_some() {
            self.threads = o.threads;
        }
        if let Some(g) = o.gamma {
            self.decode.gamma = g;
        }
        if let Some(t) = o.temperature {
            self.decode.temperature = t;
        }
        if !o.policies.is_empty() {
            self.eval.policies = o.policies.clone();
        }
        if !o.thetas.is_empty() {
            self.eval.thetas = o.thetas.clone();
        }
        self.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target.order == 0 || self.draft.order == 0 {
            bail!("model orders must be at least 1");
        }
        if self.corpus.source == CorpusSource::Text {
            match &self.corpus.path {
                None => bail!("corpus.source = \"text\" needs corpus.path"),
                Some(p) if !p.is_file() => bail!("corpus file {} does not exist", p.display()),
                Some(_) => {}
            }
        }
        if self.prompts.length == 0 {
            bail!("prompts.length must be at least 1");
        }
        if self.decode.gamma == 0 || self.decode.max_new_tokens == 0 {
            bail!("decode.gamma and decode.max_new_tokens must be at least 1");
        }
        if !(self.decode.temperature >= 0.0 && self.decode.temperature.is_finite()) {
            bail!("temperature must be a finite non-negative number");
        }
        self.train.validate()?;
        for p in &self.eval.policies {
            if p != "judge" {
                p.parse::<selfjudge_core::specdec::Policy>()?;
            }
        }
        Ok(())
    }

    /// The config as echoed into artifacts. Output location and worker count
    /// are left out so they cannot change artifact bytes.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("out");
            map.remove("threads");
        }
        v
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            gamma: self.decode.gamma,
            max_new_tokens: self.decode.max_new_tokens,
            temperature: self.decode.temperature,
            seed: self.seed,
            policy: DecodeConfig::default().policy,
            eos: self.decode.eos,
        }
    }
}
