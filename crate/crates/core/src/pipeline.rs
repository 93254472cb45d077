//! Evaluation runs that tie retrieval, KNN voting and ICL scoring to datasets.

use crate::corpus::{Dataset, Example};
use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};
use crate::eval::{evaluate_batched, Evaluation};
use crate::retrieval::{icl_request, knn_predict, RetrievalSetting, Retriever, ShotList, ShotOrder};
use crate::scorer::{score_all, PromptSpec, ScorerClient};
use crate::trainer::RetrievalHead;

/// An English pool plus per-language evaluation sets, each with base embeddings.
#[derive(Clone, Copy)]
pub struct EvalData<'a> {
    pub pool: &'a Dataset,
    pub pool_store: &'a EmbeddingStore,
    pub eval_sets: &'a [Dataset],
    pub eval_store: &'a EmbeddingStore,
}

/// How ICL prompts are built and scored.
#[derive(Clone, Copy)]
pub struct IclScoring<'a> {
    pub scorer: &'a dyn ScorerClient,
    pub spec: &'a PromptSpec,
    pub parallelism: usize,
    pub order: ShotOrder,
}

fn shots_for(
    retriever: &Retriever<'_>,
    store: &EmbeddingStore,
    ex: &Example,
    setting: &RetrievalSetting,
    order: ShotOrder,
) -> Result<ShotList> {
    let base = store.vector(&ex.id)?;
    retriever.retrieve(Some(&ex.id), &base, setting, order)
}

/// Retrieves shots for every eval example, in dataset order.
pub fn retrieve_all(
    data: EvalData<'_>,
    head: Option<&RetrievalHead>,
    setting: &RetrievalSetting,
    order: ShotOrder,
) -> Result<Vec<ShotList>> {
    let retriever = Retriever::new(data.pool, data.pool_store, head)?;
    data.eval_sets
        .iter()
        .flat_map(|d| &d.examples)
        .map(|ex| shots_for(&retriever, data.eval_store, ex, setting, order))
        .collect()
}

pub fn run_knn(
    data: EvalData<'_>,
    head: Option<&RetrievalHead>,
    setting: &RetrievalSetting,
    method: &str,
) -> Result<Evaluation> {
    setting.validate(&data.pool.label_set)?;
    let retriever = Retriever::new(data.pool, data.pool_store, head)?;
    evaluate_batched(
        data.eval_sets,
        |examples| {
            examples
                .iter()
                .map(|ex| {
                    let shots = shots_for(&retriever, data.eval_store, ex, setting, ShotOrder::Desc)?;
                    knn_predict(&shots, &data.pool.label_set)
                })
                .collect()
        },
        method,
        &setting_name(setting),
    )
}

pub fn run_icl(
    data: EvalData<'_>,
    head: Option<&RetrievalHead>,
    setting: &RetrievalSetting,
    scoring: IclScoring<'_>,
    method: &str,
) -> Result<Evaluation> {
    setting.validate(&data.pool.label_set)?;
    let retriever = Retriever::new(data.pool, data.pool_store, head)?;
    let label_set = &data.pool.label_set;
    evaluate_batched(
        data.eval_sets,
        |examples| {
            let requests: Vec<Result<_>> = examples
                .iter()
                .map(|ex| {
                    let shots = shots_for(&retriever, data.eval_store, ex, setting, scoring.order)?;
                    icl_request(ex, &shots, scoring.spec, label_set)
                })
                .collect();
            let ready: Vec<_> = requests.iter().filter_map(|r| r.as_ref().ok()).cloned().collect();
            let mut scored = score_all(scoring.scorer, &ready, scoring.parallelism).into_iter();
            requests
                .into_iter()
                .map(|r| match r {
                    Ok(_) => scored.next().expect("one result per request").map(|p| p.label),
                    Err(e) => Err(e),
                })
                .collect()
        },
        method,
        &setting_name(setting),
    )
}

pub fn setting_name(setting: &RetrievalSetting) -> String {
    format!("{}/{}-shot", setting.mode, setting.n_shots)
}

/// Fails when any language was aborted.
pub fn require_complete(ev: Evaluation) -> Result<Evaluation> {
    match ev.failures.first() {
        None => Ok(ev),
        Some(f) => Err(Error::invalid(format!(
            "evaluation of {} failed at {}: {}",
            f.language, f.example_id, f.message
        ))),
    }
}
