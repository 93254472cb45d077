//! Retriever fine-tuning: a head over frozen base embeddings trained with
//! InfoNCE and AdamW on the constructed positive/negative pairs.

mod adamw;
mod head;
mod loss;

use std::collections::{HashMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataconstruct::{split_by_query, TrainingPair};
use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};

pub use adamw::{adamw_step, AdamWConfig, OptimizerState};
pub use head::{load_head, save_head, Activation, Encoded, HeadMeta, RetrievalHead};
pub use loss::{contrastive_loss, contrastive_loss_into};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub epochs: usize,
    /// Queries per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adamw: AdamWConfig,
    pub temperature: f64,
    pub seed: u64,
    /// Positives sampled per query each epoch.
    pub max_pos_per_query: usize,
    pub activation: Activation,
    /// Output dimension; the base dimension when unset.
    pub d_out: Option<usize>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            epochs: 50,
            batch_size: 16,
            learning_rate: 2e-5,
            adamw: AdamWConfig::default(),
            temperature: 0.05,
            seed: 0,
            max_pos_per_query: 1,
            activation: Activation::Identity,
            d_out: None,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        self.adamw.validate()?;
        if !(self.temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.max_pos_per_query == 0 {
            return Err(Error::invalid("batch size and positives per query must be >= 1"));
        }
        if self.d_out == Some(0) {
            return Err(Error::invalid("d_out must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean per-term loss of each epoch, in order.
    pub epoch_losses: Vec<f64>,
    /// Queries left out because no candidate was positive.
    pub skipped_queries: usize,
    pub steps: u64,
}

struct QueryGroup<'a> {
    id: &'a str,
    positives: Vec<&'a str>,
    negatives: Vec<&'a str>,
}

/// Trains a head from the identity initialisation. Deterministic in
/// `(pairs, store, cfg)`; the store is only read.
///
/// Each epoch shuffles the trainable queries, cuts them into batches of
/// `batch_size` (the last one may be short) and, per query, samples positives
/// and contrasts each against the query's mined negatives plus the other
/// queries' sampled positives in the batch.
pub fn train(
    pairs: &[TrainingPair],
    store: &EmbeddingStore,
    cfg: &TrainerConfig,
) -> Result<(RetrievalHead, TrainingLog)> {
    cfg.validate()?;
    let d_in = store.dim();
    let head = RetrievalHead::identity(d_in, cfg.d_out.unwrap_or(d_in), cfg.activation)?;
    train_from(head, pairs, store, cfg)
}

pub fn train_from(
    mut head: RetrievalHead,
    pairs: &[TrainingPair],
    store: &EmbeddingStore,
    cfg: &TrainerConfig,
) -> Result<(RetrievalHead, TrainingLog)> {
    cfg.validate()?;
    if head.d_in() != store.dim() {
        return Err(Error::DimensionMismatch {
            expected: head.d_in(),
            actual: store.dim(),
        });
    }

    let mut base: HashMap<&str, Vec<f64>> = HashMap::new();
    for p in pairs {
        for id in [&p.query_id, &p.candidate_id] {
            if !base.contains_key(id.as_str()) {
                base.insert(id, store.vector(id)?);
            }
        }
    }

    let mut skipped = 0;
    let mut groups = Vec::new();
    for (id, pos, neg) in split_by_query(pairs) {
        if pos.is_empty() {
            skipped += 1;
            continue;
        }
        let id = base.get_key_value(id.as_str()).map(|(k, _)| *k).expect("loaded above");
        groups.push(QueryGroup {
            id,
            positives: pos.iter().map(|p| p.candidate_id.as_str()).collect(),
            negatives: neg.iter().map(|p| p.candidate_id.as_str()).collect(),
        });
    }
    if groups.is_empty() {
        return Err(Error::Untrainable);
    }
    if skipped > 0 {
        log::warn!("skipping {skipped} queries without a positive candidate");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = OptimizerState::new(head.params().len());
    let mut grads = vec![0.0; head.params().len()];
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_terms = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let sampled: Vec<Vec<&str>> = batch
                .iter()
                .map(|&g| {
                    let n = cfg.max_pos_per_query.min(groups[g].positives.len());
                    groups[g].positives.choose_multiple(&mut rng, n).copied().collect()
                })
                .collect();
            let terms: usize = sampled.iter().map(Vec::len).sum();
            let weight = 1.0 / terms as f64;
            grads.iter_mut().for_each(|g| *g = 0.0);

            for (slot, &g) in batch.iter().enumerate() {
                let group = &groups[g];
                let own_pos: HashSet<&str> = group.positives.iter().copied().collect();
                let mut neg_ids: Vec<&str> = group.negatives.clone();
                let mut seen: HashSet<&str> = neg_ids.iter().copied().collect();
                for (other, picks) in sampled.iter().enumerate() {
                    if other == slot {
                        continue;
                    }
                    for &id in picks {
                        if id != group.id && !own_pos.contains(id) && seen.insert(id) {
                            neg_ids.push(id);
                        }
                    }
                }
                let negs: Vec<&[f64]> = neg_ids.iter().map(|id| base[id].as_slice()).collect();
                for &pos in &sampled[slot] {
                    let loss = contrastive_loss_into(
                        &head,
                        &base[group.id],
                        &base[pos],
                        &negs,
                        cfg.temperature,
                        weight,
                        &mut grads,
                    )?;
                    epoch_sum += loss;
                    epoch_terms += 1;
                }
            }
            adamw_step(head.params_mut(), &grads, &mut state, cfg.learning_rate, &cfg.adamw)?;
        }
        let mean = epoch_sum / epoch_terms as f64;
        log::debug!("epoch {} mean loss {mean:.6}", epoch_losses.len() + 1);
        epoch_losses.push(mean);
    }

    Ok((
        head,
        TrainingLog {
            epoch_losses,
            skipped_queries: skipped,
            steps: state.step,
        },
    ))
}
