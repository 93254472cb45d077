//! Dense example vectors: pooling of token states, cosine similarity and
//! exact top-k search.

mod xemb;

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use xemb::{load_embeddings, save_embeddings, write_embeddings, XEMB_MAGIC, XEMB_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    PositionWeightedMean,
    ProviderNative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub provider: String,
    pub layer: u32,
    pub pooling: Pooling,
}

/// Token-level hidden states of one text at one layer, `tokens × dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    tokens: usize,
    dim: usize,
    states: Vec<f64>,
}

impl HiddenStates {
    pub fn new(tokens: usize, dim: usize, states: Vec<f64>) -> Result<Self> {
        if tokens == 0 {
            return Err(Error::invalid("hidden states need at least one token"));
        }
        if states.len() != tokens * dim {
            return Err(Error::DimensionMismatch {
                expected: tokens * dim,
                actual: states.len(),
            });
        }
        if states.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("hidden states contain a non-finite value"));
        }
        Ok(HiddenStates {
            tokens,
            dim,
            states,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("ragged hidden-state rows"));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.states[t * self.dim..(t + 1) * self.dim]
    }
}

pub fn mean_pool(h: &HiddenStates) -> Vec<f64> {
    let weight = 1.0 / h.tokens as f64;
    weighted_pool(h, |_| weight)
}

/// Weighted average with weight `t / (1 + 2 + ... + T)` for the 1-indexed position `t`,
/// so later tokens count more.
pub fn position_weighted_mean_pool(h: &HiddenStates) -> Vec<f64> {
    let total = (h.tokens * (h.tokens + 1)) as f64 / 2.0;
    weighted_pool(h, |t| (t + 1) as f64 / total)
}

fn weighted_pool(h: &HiddenStates, weight: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; h.dim];
    for t in 0..h.tokens {
        let w = weight(t);
        for (o, x) in out.iter_mut().zip(h.row(t)) {
            *o += w * x;
        }
    }
    out
}

pub fn pool(h: &HiddenStates, pooling: Pooling) -> Result<Vec<f64>> {
    match pooling {
        Pooling::Mean => Ok(mean_pool(h)),
        Pooling::PositionWeightedMean => Ok(position_weighted_mean_pool(h)),
        Pooling::ProviderNative => Err(Error::invalid(
            "provider-native pooling is computed by the embedding provider",
        )),
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if !(na > 0.0 && nb > 0.0) || !na.is_finite() || !nb.is_finite() {
        return Err(Error::DegenerateEmbedding("zero-norm vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Orders hits by score descending, then id ascending.
pub(crate) fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Keeps the best `k` of `hits` under [`rank_order`], sorted.
pub(crate) fn select_top(mut hits: Vec<(String, f64)>, k: usize) -> Vec<(String, f64)> {
    let cmp = |a: &(String, f64), b: &(String, f64)| rank_order((&a.0, a.1), (&b.0, b.1));
    if k < hits.len() {
        hits.select_nth_unstable_by(k, cmp);
        hits.truncate(k);
    }
    hits.sort_by(cmp);
    hits
}

/// Row-major matrix of example vectors keyed by id. Values are kept as `f32`,
/// the on-disk precision, and widened to `f64` for arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
    provenance: Provenance,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>, provenance: Provenance) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value in row {:?}",
                ids[pos / dim.max(1)]
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate embedding id {id:?}")));
            }
        }
        Ok(EmbeddingStore {
            ids,
            dim,
            data,
            provenance,
            index,
        })
    }

    /// Builds a store from `f64` rows, rounding to `f32`.
    pub fn from_rows(
        rows: impl IntoIterator<Item = (String, Vec<f64>)>,
        dim: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (id, row) in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            ids.push(id);
            data.extend(row.iter().map(|&x| x as f32));
        }
        Self::new(ids, dim, data, provenance)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn raw(&self) -> &[f32] {
        &self.data
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn row_f32(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.row_f32(i).iter().map(|&x| f64::from(x)).collect()
    }

    pub fn vector(&self, id: &str) -> Result<Vec<f64>> {
        self.position(id)
            .map(|i| self.row(i))
            .ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }

    /// Exact top-k by cosine similarity, skipping `exclude`.
    pub fn top_k(
        &self,
        query: &[f64],
        k: usize,
        exclude: &HashSet<String>,
    ) -> Result<Vec<(String, f64)>> {
        top_k(self, query, k, exclude)
    }
}

/// Exact brute-force top-k by cosine similarity. Ties go to the smaller id.
pub fn top_k(
    store: &EmbeddingStore,
    query: &[f64],
    k: usize,
    exclude: &HashSet<String>,
) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::invalid("top_k needs k >= 1"));
    }
    if store.is_empty() {
        return Err(Error::invalid("top_k over an empty store"));
    }
    let mut hits = Vec::with_capacity(store.len());
    for (i, id) in store.ids.iter().enumerate() {
        if exclude.contains(id) {
            continue;
        }
        let score = cosine_similarity(query, &store.row(i))
            .map_err(|e| Error::DegenerateEmbedding(format!("{e} (row {id:?} or query)")))?;
        hits.push((id.clone(), score));
    }
    Ok(select_top(hits, k))
}
