//! Pipeline configuration file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use symkbc::proposer::ProposerBackend;
use symkbc::rotate::RotatEConfig;
use symkbc::sparse::DEFAULT_SATURATION;
use symkbc::subgraph::ExtractorConfig;
use symkbc::trainer::TrainerConfig;
use symkbc::Split;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: "data/train.tsv".into(),
            valid: "data/valid.tsv".into(),
            test: "data/test.tsv".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityKind {
    Trigram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    pub provider: SimilarityKind,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self { provider: SimilarityKind::Trigram }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub enabled: bool,
    pub dim: usize,
    pub negatives_per_positive: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub gamma: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        let d = RotatEConfig::default();
        Self {
            enabled: true,
            dim: d.dim,
            negatives_per_positive: d.negatives_per_positive,
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr: d.lr,
            gamma: d.gamma,
        }
    }
}

impl EmbeddingConfig {
    pub fn rotate_config(&self, seed: u64) -> RotatEConfig {
        RotatEConfig {
            dim: self.dim,
            negatives_per_positive: self.negatives_per_positive,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            gamma: self.gamma,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundingConfig {
    pub saturation: u64,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self { saturation: DEFAULT_SATURATION }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub split: String,
    pub top_k: usize,
    pub annotations: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { split: "test".into(), top_k: 10, annotations: None }
    }
}

pub fn parse_split(s: &str) -> Result<Split> {
    match s {
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        other => bail!("unknown split `{other}` (expected valid or test)"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub extract: ExtractorConfig,
    pub proposer: ProposerBackend,
    pub similarity: SimilarityConfig,
    pub rotate: EmbeddingConfig,
    pub grounding: GroundingConfig,
    pub trainer: TrainerConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: "runs".into(),
            data: DataConfig::default(),
            extract: ExtractorConfig::default(),
            proposer: ProposerBackend::default(),
            similarity: SimilarityConfig::default(),
            rotate: EmbeddingConfig::default(),
            grounding: GroundingConfig::default(),
            trainer: TrainerConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.train);
        fix(&mut self.data.valid);
        fix(&mut self.data.test);
        fix(&mut self.output_dir);
        if let Some(a) = self.eval.annotations.as_mut() {
            fix(a);
        }
    }

    /// Checks values and that every referenced input file exists.
    pub fn validate(&self) -> Result<()> {
        for p in [&self.data.train, &self.data.valid, &self.data.test] {
            if !p.is_file() {
                bail!("data file not found: {}", p.display());
            }
        }
        if let Some(a) = &self.eval.annotations {
            if !a.is_file() {
                bail!("annotation file not found: {}", a.display());
            }
        }
        self.extract.validate()?;
        self.proposer.validate()?;
        parse_split(&self.eval.split)?;
        if self.rotate.enabled && self.rotate.dim == 0 {
            bail!("rotate.dim must be positive");
        }
        Ok(())
    }
}

/// The default configuration with every key written out and commented.
pub fn example() -> String {
    let d = PipelineConfig::default();
    let e = &d.extract;
    let p = &d.proposer;
    let r = &d.rotate;
    let t = &d.trainer;
    format!(
        r#"# symkbc pipeline configuration.
# Relative paths are resolved against the directory of this file.

# Base seed; every stage derives its own seed from it.
seed = {seed}
# Each stage writes into <output_dir>/<stage>-<config hash>/.
output_dir = "{out}"

[data]
# Tab-separated head, relation, tail; one triple per line.
train = "{train}"
valid = "{valid}"
test = "{test}"

[extract]
# Breadth-first hops around the target's two entities.
max_hops = {hops}
# Triples kept per expanded entity and hop.
max_neighbors_per_entity = {nbrs}
# Target triples sampled per relation.
max_subgraphs_per_relation = {subs}

[proposer]
# "offline-miner" enumerates paths inside each subgraph; "remote-chat" calls
# a chat-completion endpoint.
kind = "offline-miner"
# endpoint = "https://api.example.com/v1/chat/completions"
model_name = "{model}"
request_timeout_secs = {timeout:?}
max_retries = {retries}
# Name of the environment variable holding the bearer token.
api_key_env = "{key}"
max_in_flight = {inflight}
temperature = {temp:?}

[similarity]
# Maps relation phrases in proposed rules onto knowledge base relations.
provider = "trigram"

[rotate]
# Set to false to train the rule weights without an embedding model.
enabled = {r_on}
dim = {r_dim}
negatives_per_positive = {r_neg}
epochs = {r_ep}
batch_size = {r_bs}
lr = {r_lr:?}
gamma = {r_gamma:?}

[grounding]
# Cap for body counts; larger values are clamped.
saturation = {sat}

[trainer]
lr = {t_lr:?}
weight_decay = {t_wd:?}
# Learning rate is multiplied by gamma every step_size epochs.
step_size = {t_step}
gamma = {t_gamma:?}
# Stop after this many epochs without a better validation MRR.
patience = {t_pat}
max_epochs = {t_max}
batch_size = {t_bs}
# Freeze rule and embedding logits at zero (equal weights).
uniform_weights = {t_uni}
# "body": rule rows are body counts. "signed": +A/-C rows during training.
rule_signal = "body"

[eval]
split = "{split}"
# Tails listed by `explain`.
top_k = {topk}
# Tab-separated rule, path score (0, 0.5 or 1) lines for the rule report.
# annotations = "annotations.tsv"
"#,
        seed = d.seed,
        out = d.output_dir.display(),
        train = d.data.train.display(),
        valid = d.data.valid.display(),
        test = d.data.test.display(),
        hops = e.max_hops,
        nbrs = e.max_neighbors_per_entity,
        subs = e.max_subgraphs_per_relation,
        model = p.model_name,
        timeout = p.request_timeout_secs,
        retries = p.max_retries,
        key = p.api_key_env,
        inflight = p.max_in_flight,
        temp = p.temperature,
        r_on = r.enabled,
        r_dim = r.dim,
        r_neg = r.negatives_per_positive,
        r_ep = r.epochs,
        r_bs = r.batch_size,
        r_lr = r.lr,
        r_gamma = r.gamma,
        sat = d.grounding.saturation,
        t_lr = t.lr,
        t_wd = t.weight_decay,
        t_step = t.step_size,
        t_gamma = t.gamma,
        t_pat = t.patience,
        t_max = t.max_epochs,
        t_bs = t.batch_size,
        t_uni = t.uniform_weights,
        split = d.eval.split,
        topk = d.eval.top_k,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_parses_to_defaults() {
        let cfg: PipelineConfig = toml::from_str(&example()).unwrap();
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("[trainer]\nlearning_rate = 0.1\n").is_err());
    }
}
