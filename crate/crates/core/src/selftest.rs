//! End-to-end run on synthetic data with the similarity-gated mock scorer.
//!
//! Every stage reads the files the previous one wrote, exactly as the CLI
//! stages do. The whole pipeline runs twice in separate scratch directories
//! and the artifacts are compared byte for byte.

use std::fs;
use std::path::Path;

use crate::corpus::{load_candidates, load_dataset, save_candidates, save_dataset, Role};
use crate::dataconstruct::{construct_pairs, load_pairs, mine_candidates, save_pairs, ConstructOptions, Polarity};
use crate::embedding::{load_embeddings, save_embeddings};
use crate::error::{Error, Result};
use crate::eval::{emit_report, ReportFormat};
use crate::pipeline::{run_icl, run_knn, EvalData, IclScoring};
use crate::retrieval::{RetrievalMode, RetrievalSetting, ShotOrder};
use crate::scorer::{MockRule, MockScorer, PromptSpec, ScorerClient};
use crate::synthetic::{generate, SyntheticSpec};
use crate::trainer::{load_head, save_head, train, HeadMeta, RetrievalHead, TrainerConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestConfig {
    pub seed: u64,
    pub data: SyntheticSpec,
    pub k: usize,
    pub trainer: TrainerConfig,
    pub icl_shots: usize,
    pub parallelism: usize,
}

impl SelftestConfig {
    pub fn new(seed: u64) -> Self {
        SelftestConfig {
            seed,
            data: SyntheticSpec::default(),
            k: 10,
            trainer: TrainerConfig {
                // The head is tiny and starts at the identity; the usual
                // full-model rate would barely move it in 50 epochs.
                learning_rate: 5e-3,
                seed,
                ..TrainerConfig::default()
            },
            icl_shots: 3,
            parallelism: 4,
        }
    }
}

/// Numbers from one pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub pairs: usize,
    pub positives: usize,
    pub scorer_calls: usize,
    pub steps: u64,
    pub skipped_queries: usize,
    pub epoch_losses: Vec<f64>,
    pub identity_top1: f64,
    pub trained_top1: f64,
    pub identity_icl: f64,
    pub trained_icl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub summary: RunSummary,
    pub deterministic: bool,
    pub lines: Vec<String>,
}

impl SelftestReport {
    pub fn top1_gain(&self) -> f64 {
        100.0 * (self.summary.trained_top1 - self.summary.identity_top1)
    }

    pub fn loss_decreased(&self) -> bool {
        match (self.summary.epoch_losses.first(), self.summary.epoch_losses.last()) {
            (Some(first), Some(last)) => last < first,
            _ => false,
        }
    }

    /// `(name, passed)` for each property the run must satisfy.
    pub fn checks(&self) -> Vec<(&'static str, bool)> {
        vec![
            ("deterministic under seed", self.deterministic),
            ("trained top-1 >= identity top-1 + 10pp", self.top1_gain() >= 10.0),
            ("last-epoch loss < first-epoch loss", self.loss_decreased()),
        ]
    }

    pub fn passed(&self) -> bool {
        self.checks().iter().all(|(_, ok)| *ok)
    }
}

const ARTIFACTS: [&str; 5] = ["candidates.jsonl", "pairs.jsonl", "head.bin", "report_identity.csv", "report_trained.csv"];

pub fn run_selftest(cfg: &SelftestConfig) -> Result<SelftestReport> {
    let first = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let second = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let a = run_in(cfg, first.path())?;
    let b = run_in(cfg, second.path())?;
    let mut deterministic = a == b;
    for name in ARTIFACTS {
        let read = |dir: &Path| fs::read(dir.join(name)).map_err(|e| Error::io(dir.join(name), e));
        deterministic &= read(first.path())? == read(second.path())?;
    }

    let pct = |x: f64| format!("{:.2}", 100.0 * x);
    let losses = &a.epoch_losses;
    let mut lines = vec![
        format!("selftest seed={}", cfg.seed),
        format!(
            "data: train={} eval={}x{} classes={} dim={}",
            cfg.data.train_size,
            cfg.data.languages.len(),
            cfg.data.eval_per_language,
            cfg.data.classes,
            cfg.data.dim
        ),
        format!("mine: k={} candidate_sets={}", cfg.k, cfg.data.train_size),
        format!(
            "construct: pairs={} positive={} negative={} scorer_calls={}",
            a.pairs,
            a.positives,
            a.pairs - a.positives,
            a.scorer_calls
        ),
        format!(
            "train: epochs={} steps={} skipped_queries={} loss_first={:.6} loss_last={:.6}",
            losses.len(),
            a.steps,
            a.skipped_queries,
            losses.first().copied().unwrap_or(f64::NAN),
            losses.last().copied().unwrap_or(f64::NAN)
        ),
        format!(
            "top-1 label match: identity={} trained={}",
            pct(a.identity_top1),
            pct(a.trained_top1)
        ),
        format!(
            "eval-icl label_agnostic {}-shot: identity={} trained={}",
            cfg.icl_shots,
            pct(a.identity_icl),
            pct(a.trained_icl)
        ),
    ];
    let mut report = SelftestReport {
        summary: a,
        deterministic,
        lines: Vec::new(),
    };
    for (name, ok) in report.checks() {
        lines.push(format!("[{}] {name}", if ok { "PASS" } else { "FAIL" }));
    }
    report.lines = lines;
    Ok(report)
}

fn run_in(cfg: &SelftestConfig, dir: &Path) -> Result<RunSummary> {
    // Inputs.
    let data = generate(&cfg.data, cfg.seed)?;
    save_dataset(&data.train, dir.join("train.jsonl"))?;
    for ds in &data.eval_sets {
        save_dataset(ds, dir.join(format!("{}.jsonl", ds.name)))?;
    }
    save_embeddings(&data.base, dir.join("base.xemb"))?;
    save_embeddings(&data.mining, dir.join("mining.xemb"))?;
    let langs: Vec<String> = data.eval_sets.iter().map(|d| d.name.clone()).collect();
    drop(data);

    // mine
    let train_set = load_dataset(dir.join("train.jsonl"), Role::Train)?;
    let mining = load_embeddings(dir.join("mining.xemb"))?;
    save_candidates(&mine_candidates(&train_set, &mining, cfg.k)?, dir.join("candidates.jsonl"))?;

    // construct
    let cands = load_candidates(dir.join("candidates.jsonl"))?;
    let scorer = MockScorer::new(MockRule::SimilarityGated);
    let spec = PromptSpec::default();
    let opts = ConstructOptions {
        parallelism: cfg.parallelism,
        checkpoint: Some(dir.join("pairs.checkpoint.jsonl")),
        ..ConstructOptions::default()
    };
    save_pairs(&construct_pairs(&train_set, &cands, &scorer, &spec, &opts)?, dir.join("pairs.jsonl"))?;
    let scorer_calls = scorer.calls();

    // train
    let pairs = load_pairs(dir.join("pairs.jsonl"))?;
    let base = load_embeddings(dir.join("base.xemb"))?;
    let (head, log) = train(&pairs, &base, &cfg.trainer)?;
    let meta = HeadMeta {
        d_in: head.d_in(),
        d_out: head.d_out(),
        activation: head.activation(),
        tau: cfg.trainer.temperature,
        seed: cfg.trainer.seed,
        epoch: cfg.trainer.epochs,
    };
    save_head(&head, &meta, dir.join("head.bin"))?;

    // retrieve + eval
    let (trained, _) = load_head(dir.join("head.bin"))?;
    let identity = RetrievalHead::identity(base.dim(), base.dim(), trained.activation())?;
    let eval_sets = langs
        .iter()
        .map(|name| load_dataset(dir.join(format!("{name}.jsonl")), Role::Eval))
        .collect::<Result<Vec<_>>>()?;
    let eval = EvalData {
        pool: &train_set,
        pool_store: &base,
        eval_sets: &eval_sets,
        eval_store: &base,
    };
    let top1 = RetrievalSetting {
        mode: RetrievalMode::LabelAgnostic,
        n_shots: 1,
    };
    let icl = RetrievalSetting {
        mode: RetrievalMode::LabelAgnostic,
        n_shots: cfg.icl_shots,
    };
    let scoring = IclScoring {
        scorer: &scorer,
        spec: &spec,
        parallelism: cfg.parallelism,
        order: ShotOrder::Asc,
    };
    let mut accs = Vec::new();
    for (name, h) in [("identity", &identity), ("trained", &trained)] {
        let t = run_knn(eval, Some(h), &top1, "top1")?;
        let e = run_icl(eval, Some(h), &icl, scoring, name)?;
        emit_report(&e.records, ReportFormat::Csv, &[], dir.join(format!("report_{name}.csv")))?;
        accs.push((t.macro_accuracy()?, e.macro_accuracy()?));
    }

    Ok(RunSummary {
        pairs: pairs.len(),
        positives: pairs.iter().filter(|p| p.polarity == Polarity::Positive).count(),
        scorer_calls,
        steps: log.steps,
        skipped_queries: log.skipped_queries,
        epoch_losses: log.epoch_losses,
        identity_top1: accs[0].0,
        trained_top1: accs[1].0,
        identity_icl: accs[0].1,
        trained_icl: accs[1].1,
    })
}
