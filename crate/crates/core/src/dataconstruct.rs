//! Contrastive training data: mine the top-k similar pool examples for every
//! English query, score each (query, candidate) pair by 1-shot ICL and label
//! the candidate positive when the scorer then predicts the query's true label.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{write_json_line, CandidateSet, Dataset};
use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};
use crate::scorer::{render_prompt, score_all, PromptContext, PromptSpec, ScoreRequest, ScorerClient};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_CHECKPOINT_EVERY: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingPair {
    pub query_id: String,
    pub candidate_id: String,
    pub polarity: Polarity,
    /// 1-based rank in the query's candidate set.
    pub mined_rank: usize,
    pub mined_score: f64,
}

/// Mines candidates from the training pool itself, never returning the query.
pub fn mine_candidates(train: &Dataset, store: &EmbeddingStore, k: usize) -> Result<Vec<CandidateSet>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let rows = train
        .examples
        .iter()
        .map(|e| store.vector(&e.id).map(|v| (e.id.clone(), v)))
        .collect::<Result<Vec<_>>>()?;
    let pool = EmbeddingStore::from_rows(rows.iter().cloned(), store.dim(), store.provenance().clone())?;
    // from_rows rounds back to f32, which is lossless for rows widened from f32.
    let mut out = Vec::with_capacity(rows.len());
    let mut exclude = HashSet::with_capacity(1);
    for (id, vector) in &rows {
        exclude.clear();
        exclude.insert(id.clone());
        let hits = if pool.len() > 1 {
            pool.top_k(vector, k, &exclude)?
        } else {
            Vec::new()
        };
        let (candidate_ids, scores) = hits.into_iter().unzip();
        out.push(CandidateSet {
            query_id: id.clone(),
            candidate_ids,
            scores,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConstructOptions {
    /// Maximum scorer requests in flight.
    pub parallelism: usize,
    /// Completed pairs are appended here and skipped on a rerun.
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: usize,
}

impl Default for ConstructOptions {
    fn default() -> Self {
        ConstructOptions {
            parallelism: 4,
            checkpoint: None,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
        }
    }
}

struct Job<'a> {
    query: &'a crate::corpus::Example,
    candidate: &'a crate::corpus::Example,
    rank: usize,
    score: f64,
}

/// Scores every (query, candidate) pair once with a 1-shot prompt and splits
/// candidates into positives and negatives. Issues exactly one scorer call per
/// pair not already present in the checkpoint.
pub fn construct_pairs(
    train: &Dataset,
    cands: &[CandidateSet],
    scorer: &dyn ScorerClient,
    spec: &PromptSpec,
    opts: &ConstructOptions,
) -> Result<Vec<TrainingPair>> {
    spec.validate()?;
    let index = train.index();
    let lookup = |id: &str| {
        index
            .get(id)
            .map(|&i| &train.examples[i])
            .ok_or_else(|| Error::invalid(format!("id {id:?} is not in the training set")))
    };

    let mut done: HashMap<(String, String), TrainingPair> = HashMap::new();
    if let Some(path) = &opts.checkpoint {
        if path.exists() {
            for pair in load_pairs(path)? {
                done.insert((pair.query_id.clone(), pair.candidate_id.clone()), pair);
            }
            log::info!("resuming from checkpoint with {} scored pairs", done.len());
        }
    }

    let mut jobs = Vec::new();
    for set in cands {
        let query = lookup(&set.query_id)?;
        for (rank, (cid, &score)) in set.candidate_ids.iter().zip(&set.scores).enumerate() {
            if *cid == set.query_id {
                return Err(Error::invalid(format!("query {cid:?} is its own candidate")));
            }
            if done.contains_key(&(set.query_id.clone(), cid.clone())) {
                continue;
            }
            jobs.push(Job {
                query,
                candidate: lookup(cid)?,
                rank: rank + 1,
                score,
            });
        }
    }

    let chunk_size = opts.checkpoint_every.max(1);
    for chunk in jobs.chunks(chunk_size) {
        let requests = chunk
            .iter()
            .map(|job| one_shot_request(spec, train, job))
            .collect::<Result<Vec<_>>>()?;
        let results = score_all(scorer, &requests, opts.parallelism);
        let mut fresh = Vec::with_capacity(chunk.len());
        let mut failure = None;
        for (job, result) in chunk.iter().zip(results) {
            match result {
                Ok(pred) => {
                    let polarity = if pred.label == job.query.label {
                        Polarity::Positive
                    } else {
                        Polarity::Negative
                    };
                    fresh.push(TrainingPair {
                        query_id: job.query.id.clone(),
                        candidate_id: job.candidate.id.clone(),
                        polarity,
                        mined_rank: job.rank,
                        mined_score: job.score,
                    });
                }
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        }
        if let Some(path) = &opts.checkpoint {
            append_pairs(&fresh, path)?;
        }
        for pair in fresh {
            done.insert((pair.query_id.clone(), pair.candidate_id.clone()), pair);
        }
        if let Some(e) = failure {
            return Err(e);
        }
    }

    let mut out = Vec::with_capacity(done.len());
    for set in cands {
        for cid in &set.candidate_ids {
            let key = (set.query_id.clone(), cid.clone());
            out.push(done.remove(&key).expect("every pair was scored"));
        }
    }
    Ok(out)
}

fn one_shot_request(spec: &PromptSpec, train: &Dataset, job: &Job<'_>) -> Result<ScoreRequest> {
    let prompt = render_prompt(spec, std::slice::from_ref(job.candidate), &job.query.text)?;
    Ok(ScoreRequest::new(prompt, train.label_set.clone()).with_context(PromptContext {
        shot_labels: vec![job.candidate.label.clone()],
        top_shot_label: Some(job.candidate.label.clone()),
        query_label: Some(job.query.label.clone()),
    }))
}

/// Positive and negative candidate ids per query, in mined order.
pub fn split_by_query(pairs: &[TrainingPair]) -> Vec<(String, Vec<&TrainingPair>, Vec<&TrainingPair>)> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, (Vec<&TrainingPair>, Vec<&TrainingPair>)> = HashMap::new();
    for p in pairs {
        let entry = groups.entry(&p.query_id).or_insert_with(|| {
            order.push(&p.query_id);
            Default::default()
        });
        match p.polarity {
            Polarity::Positive => entry.0.push(p),
            Polarity::Negative => entry.1.push(p),
        }
    }
    order
        .into_iter()
        .map(|q| {
            let (pos, neg) = groups.remove(q).unwrap_or_default();
            (q.to_string(), pos, neg)
        })
        .collect()
}

pub fn save_pairs(pairs: &[TrainingPair], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for p in pairs {
        write_json_line(&mut out, p).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

fn append_pairs(pairs: &[TrainingPair], path: &Path) -> Result<()> {
    let io_err = |e| Error::io(path, e);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err)?;
    let mut out = BufWriter::new(file);
    for p in pairs {
        write_json_line(&mut out, p).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<TrainingPair>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let malformed = |line: usize, message: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: TrainingPair =
            serde_json::from_str(&line).map_err(|e| malformed(lineno, e.to_string()))?;
        if pair.mined_rank == 0 {
            return Err(malformed(lineno, "mined_rank must be >= 1".into()));
        }
        if !seen.insert((pair.query_id.clone(), pair.candidate_id.clone())) {
            return Err(malformed(
                lineno,
                format!(
                    "duplicate pair ({:?}, {:?})",
                    pair.query_id, pair.candidate_id
                ),
            ));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}
