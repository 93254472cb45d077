//! The shared JSON pipeline config and flag overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use xampler::corpus::Dataset;
use xampler::eval::ReportFormat;
use xampler::retrieval::{RetrievalMode, RetrievalSetting, ShotOrder};
use xampler::scorer::{HttpScorer, MockRule, MockScorer, PromptSpec, RetryPolicy, ScorerClient};
use xampler::trainer::TrainerConfig;

pub const CONFIG_VERSION: u32 = 1;

/// Everything except `Core` is bad input and exits with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(xampler::Error),
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_validation() => 1,
            CliError::Core(_) | CliError::Check(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Check(m) => f.write_str(m),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

impl From<xampler::Error> for CliError {
    fn from(e: xampler::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    /// Retrieval pool; the training set when unset.
    pub pool: Option<PathBuf>,
    pub eval: Vec<PathBuf>,
    pub mining_embeddings: Option<PathBuf>,
    /// Base embeddings of the pool (and of the eval sets unless `eval_embeddings` is set).
    pub embeddings: Option<PathBuf>,
    pub eval_embeddings: Option<PathBuf>,
    pub layer_embeddings: Vec<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub head: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockKind {
    SimilarityGated,
    LabelEcho,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    pub url: Option<String>,
    pub parallelism: usize,
    pub retry: RetryPolicy,
    pub mock_rule: MockKind,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            kind: ScorerKind::Mock,
            url: None,
            parallelism: 4,
            retry: RetryPolicy::default(),
            mock_rule: MockKind::SimilarityGated,
        }
    }
}

impl ScorerConfig {
    pub fn build(&self) -> CliResult<Box<dyn ScorerClient>> {
        Ok(match self.kind {
            ScorerKind::Mock => Box::new(MockScorer::new(match self.mock_rule {
                MockKind::SimilarityGated => MockRule::SimilarityGated,
                MockKind::LabelEcho => MockRule::LabelEcho,
            })),
            ScorerKind::Http => Box::new(HttpScorer::from_env_or(self.url.as_deref(), self.retry)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub mode: RetrievalMode,
    /// One per class in label-aware mode when unset, 10 otherwise.
    pub n_shots: Option<usize>,
    pub order: ShotOrder,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            mode: RetrievalMode::LabelAgnostic,
            n_shots: None,
            order: ShotOrder::Asc,
        }
    }
}

impl RetrievalConfig {
    pub fn setting(&self, pool: &Dataset) -> CliResult<RetrievalSetting> {
        let n = self.n_shots.unwrap_or(match self.mode {
            RetrievalMode::LabelAware => pool.label_set.len(),
            RetrievalMode::LabelAgnostic => 10,
        });
        Ok(RetrievalSetting::new(self.mode, n, &pool.label_set)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    /// Drives every random choice; copied into `trainer.seed`.
    pub seed: u64,
    pub paths: Paths,
    pub k: usize,
    pub k_values: Vec<usize>,
    pub shot_values: Vec<usize>,
    pub trainer: TrainerConfig,
    pub retrieval: RetrievalConfig,
    pub prompt: PromptSpec,
    pub scorer: ScorerConfig,
    pub format: ReportFormat,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            version: CONFIG_VERSION,
            seed: 0,
            paths: Paths::default(),
            k: xampler::dataconstruct::DEFAULT_K,
            k_values: vec![1, 2, 5, 10],
            shot_values: vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
            trainer: TrainerConfig::default(),
            retrieval: RetrievalConfig::default(),
            prompt: PromptSpec::default(),
            scorer: ScorerConfig::default(),
            format: ReportFormat::Csv,
        }
    }
}

impl PipelineConfig {
    /// Reads `file` (if any), applies `overrides` in order and validates.
    pub fn load(file: Option<&Path>, overrides: &[(String, Value)]) -> CliResult<Self> {
        let mut root = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?
            }
            None => Value::Object(Map::new()),
        };
        for (key, value) in overrides {
            set_path(&mut root, key, value.clone())?;
        }
        let mut cfg: PipelineConfig =
            serde_json::from_value(root).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Usage(format!(
                "config: unsupported version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        cfg.trainer.seed = cfg.seed;
        cfg.trainer.validate()?;
        cfg.prompt.validate()?;
        if cfg.scorer.parallelism == 0 {
            return Err(CliError::Usage("config: scorer.parallelism must be >= 1".into()));
        }
        Ok(cfg)
    }

    /// One-line JSON echo for report preambles.
    pub fn echo(&self) -> String {
        format!("effective config: {}", serde_json::to_string(self).expect("config serializes"))
    }
}

/// Sets `a.b.c` in a JSON object tree, creating intermediate objects.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> CliResult<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad config key {key:?}")));
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("config key {key:?}: {} is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("loop returns on the last part")
}

/// Parses `KEY=VALUE`; the value is JSON when it parses as JSON, a string otherwise.
pub fn parse_assignment(s: &str) -> CliResult<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// The value at a config path, or an error naming the key.
pub fn require<'a, T>(value: &'a Option<T>, key: &str) -> CliResult<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| CliError::Usage(format!("missing config key {key}")))
}
