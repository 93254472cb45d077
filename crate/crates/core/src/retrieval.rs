//! Few-shot example retrieval, KNN majority voting and ICL prediction.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example};
use crate::embedding::{cosine_similarity, l2_norm, rank_order, select_top, EmbeddingStore};
use crate::error::{Error, Result};
use crate::scorer::{render_prompt, score_labels, Prediction, PromptContext, PromptSpec, ScoreRequest, ScorerClient};
use crate::trainer::RetrievalHead;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    /// One shot per class.
    LabelAware,
    /// Most similar examples regardless of label.
    LabelAgnostic,
}

impl std::fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RetrievalMode::LabelAware => "label_aware",
            RetrievalMode::LabelAgnostic => "label_agnostic",
        })
    }
}

/// Order of shots in the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShotOrder {
    /// Least similar first, so the best shot sits next to the query.
    #[default]
    Asc,
    Desc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalSetting {
    pub mode: RetrievalMode,
    pub n_shots: usize,
}

impl RetrievalSetting {
    pub fn new(mode: RetrievalMode, n_shots: usize, label_set: &[String]) -> Result<Self> {
        let s = RetrievalSetting { mode, n_shots };
        s.validate(label_set)?;
        Ok(s)
    }

    pub fn validate(&self, label_set: &[String]) -> Result<()> {
        if self.n_shots == 0 {
            return Err(Error::invalid("n_shots must be >= 1"));
        }
        if self.mode == RetrievalMode::LabelAware && self.n_shots != label_set.len() {
            return Err(Error::invalid(format!(
                "label-aware retrieval needs one shot per class ({}), got {}",
                label_set.len(),
                self.n_shots
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub example: Example,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotList {
    pub query_id: String,
    /// Prompt order.
    pub shots: Vec<Shot>,
}

impl ShotList {
    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    /// The most similar shot; the smaller id wins a tie.
    pub fn top(&self) -> Option<&Shot> {
        self.shots.iter().min_by(|a, b| {
            rank_order((&a.example.id, a.score), (&b.example.id, b.score))
        })
    }

    pub fn examples(&self) -> Vec<Example> {
        self.shots.iter().map(|s| s.example.clone()).collect()
    }
}

/// A pool encoded once through a head (or plain normalization), ready to serve queries.
pub struct Retriever<'a> {
    pool: &'a Dataset,
    head: Option<&'a RetrievalHead>,
    encoded: Vec<Vec<f64>>,
}

impl<'a> Retriever<'a> {
    pub fn new(pool: &'a Dataset, pool_store: &EmbeddingStore, head: Option<&'a RetrievalHead>) -> Result<Self> {
        let encoded = pool
            .examples
            .iter()
            .map(|e| encode(head, &pool_store.vector(&e.id)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Retriever { pool, head, encoded })
    }

    pub fn pool(&self) -> &Dataset {
        self.pool
    }

    /// Every pool example except `query_id`, best first.
    fn ranked(&self, query_id: Option<&str>, query_base: &[f64]) -> Result<Vec<(usize, f64)>> {
        let q = encode(self.head, query_base)?;
        let mut hits = Vec::with_capacity(self.encoded.len());
        for (i, (ex, c)) in self.pool.examples.iter().zip(&self.encoded).enumerate() {
            if Some(ex.id.as_str()) == query_id {
                continue;
            }
            hits.push((i, cosine_similarity(&q, c)?));
        }
        Ok(hits)
    }

    pub fn retrieve(
        &self,
        query_id: Option<&str>,
        query_base: &[f64],
        setting: &RetrievalSetting,
        order: ShotOrder,
    ) -> Result<ShotList> {
        setting.validate(&self.pool.label_set)?;
        let hits = self.ranked(query_id, query_base)?;
        let examples = &self.pool.examples;
        let keyed = |hits: Vec<(usize, f64)>| -> Vec<(String, f64)> {
            hits.into_iter().map(|(i, s)| (examples[i].id.clone(), s)).collect()
        };

        let mut chosen: Vec<(String, f64)> = match setting.mode {
            RetrievalMode::LabelAgnostic => select_top(keyed(hits), setting.n_shots),
            RetrievalMode::LabelAware => {
                let mut best: HashMap<&str, (usize, f64)> = HashMap::new();
                for (i, s) in hits {
                    let label = examples[i].label.as_str();
                    let better = match best.get(label) {
                        None => true,
                        Some(&(j, t)) => {
                            rank_order((&examples[i].id, s), (&examples[j].id, t)) == Ordering::Less
                        }
                    };
                    if better {
                        best.insert(label, (i, s));
                    }
                }
                let mut picks = Vec::with_capacity(self.pool.label_set.len());
                for label in &self.pool.label_set {
                    let &(i, s) = best
                        .get(label.as_str())
                        .ok_or_else(|| Error::MissingClass(label.clone()))?;
                    picks.push((i, s));
                }
                let n = picks.len();
                select_top(keyed(picks), n)
            }
        };
        if order == ShotOrder::Asc {
            chosen.reverse();
        }
        let index = self.pool.index();
        Ok(ShotList {
            query_id: query_id.unwrap_or_default().to_string(),
            shots: chosen
                .into_iter()
                .map(|(id, score)| Shot {
                    example: examples[index[id.as_str()]].clone(),
                    score,
                })
                .collect(),
        })
    }
}

fn encode(head: Option<&RetrievalHead>, base: &[f64]) -> Result<Vec<f64>> {
    match head {
        Some(h) => h.encode(base),
        None => {
            let n = l2_norm(base);
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::DegenerateEmbedding("zero-norm base vector".into()));
            }
            Ok(base.iter().map(|x| x / n).collect())
        }
    }
}

/// One-off retrieval; prefer [`Retriever`] when serving many queries.
#[allow(clippy::too_many_arguments)]
pub fn retrieve(
    query_id: Option<&str>,
    query_base: &[f64],
    head: Option<&RetrievalHead>,
    pool: &Dataset,
    pool_store: &EmbeddingStore,
    setting: &RetrievalSetting,
    order: ShotOrder,
) -> Result<ShotList> {
    Retriever::new(pool, pool_store, head)?.retrieve(query_id, query_base, setting, order)
}

/// Majority label among the shots. Ties go to the larger summed similarity,
/// then to the earlier class in `label_set`.
pub fn knn_predict(shots: &ShotList, label_set: &[String]) -> Result<String> {
    if shots.is_empty() {
        return Err(Error::invalid("knn_predict needs at least one shot"));
    }
    let mut tally: Vec<(usize, f64)> = vec![(0, 0.0); label_set.len()];
    for shot in &shots.shots {
        let i = label_set
            .iter()
            .position(|l| *l == shot.example.label)
            .ok_or_else(|| Error::invalid(format!("shot label {:?} not in label set", shot.example.label)))?;
        tally[i].0 += 1;
        tally[i].1 += shot.score;
    }
    let mut best = 0;
    for i in 1..tally.len() {
        let (c, s) = tally[i];
        let (bc, bs) = tally[best];
        if c > bc || (c == bc && s > bs) {
            best = i;
        }
    }
    Ok(label_set[best].clone())
}

/// The score request for `query` with `shots` in prompt order. The query's own
/// label travels only in the out-of-band context.
pub fn icl_request(
    query: &Example,
    shots: &ShotList,
    spec: &PromptSpec,
    label_set: &[String],
) -> Result<ScoreRequest> {
    let prompt = render_prompt(spec, &shots.examples(), &query.text)?;
    Ok(ScoreRequest::new(prompt, label_set.to_vec()).with_context(PromptContext {
        shot_labels: shots.shots.iter().map(|s| s.example.label.clone()).collect(),
        top_shot_label: shots.top().map(|s| s.example.label.clone()),
        query_label: Some(query.label.clone()),
    }))
}

pub fn icl_predict(
    query: &Example,
    shots: &ShotList,
    scorer: &dyn ScorerClient,
    spec: &PromptSpec,
    label_set: &[String],
) -> Result<Prediction> {
    score_labels(scorer, &icl_request(query, shots, spec, label_set)?)
}
