use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::dataconstruct::{construct_pairs, mine_candidates, ConstructOptions};
use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};
use crate::pipeline::{require_complete, run_icl, run_knn, EvalData, IclScoring};
use crate::retrieval::{RetrievalMode, RetrievalSetting};
use crate::trainer::{train, RetrievalHead, TrainerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Shots,
    K,
    Layer,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Shots => "shots",
            SweepAxis::K => "k",
            SweepAxis::Layer => "layer",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: usize,
    /// What actually ran; differs from `value` when it had to be clamped.
    pub effective_value: usize,
    pub macro_accuracy: f64,
}

impl SweepPoint {
    pub fn clamped(&self) -> bool {
        self.value != self.effective_value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub series: String,
    /// Strictly increasing in `value`.
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// Best point; the smaller value wins a tie.
    pub fn argmax(&self) -> Option<&SweepPoint> {
        self.points.iter().fold(None, |best: Option<&SweepPoint>, p| match best {
            Some(b) if b.macro_accuracy >= p.macro_accuracy => Some(b),
            _ => Some(p),
        })
    }
}

fn sorted_unique(values: &[usize]) -> Result<Vec<usize>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one point"));
    }
    let mut seen = HashSet::new();
    for &v in values {
        if !seen.insert(v) {
            return Err(Error::DuplicateSweepPoint(v));
        }
    }
    let mut out = values.to_vec();
    out.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotSweep {
    pub knn: Option<SweepResult>,
    pub icl: Option<SweepResult>,
}

/// Label-agnostic macro accuracy per shot count, for KNN voting and/or ICL.
pub fn sweep_shots(
    data: EvalData<'_>,
    head: Option<&RetrievalHead>,
    shots: &[usize],
    knn: bool,
    icl: Option<IclScoring<'_>>,
) -> Result<ShotSweep> {
    let values = sorted_unique(shots)?;
    if values[0] == 0 {
        return Err(Error::invalid("shot counts must be >= 1"));
    }
    let mut knn_points = Vec::new();
    let mut icl_points = Vec::new();
    for &n in &values {
        let setting = RetrievalSetting {
            mode: RetrievalMode::LabelAgnostic,
            n_shots: n,
        };
        if knn {
            let ev = require_complete(run_knn(data, head, &setting, "knn")?)?;
            knn_points.push(SweepPoint {
                value: n,
                effective_value: n,
                macro_accuracy: ev.macro_accuracy()?,
            });
        }
        if let Some(scoring) = icl {
            let ev = require_complete(run_icl(data, head, &setting, scoring, "icl")?)?;
            icl_points.push(SweepPoint {
                value: n,
                effective_value: n,
                macro_accuracy: ev.macro_accuracy()?,
            });
        }
    }
    let wrap = |series: &str, points: Vec<SweepPoint>| SweepResult {
        axis: SweepAxis::Shots,
        series: series.to_string(),
        points,
    };
    Ok(ShotSweep {
        knn: knn.then(|| wrap("knn", knn_points)),
        icl: icl.map(|_| wrap("icl", icl_points)),
    })
}

/// Everything needed to rerun construct → train → evaluate at several k.
#[derive(Clone, Copy)]
pub struct SweepKInputs<'a> {
    pub train: &'a Dataset,
    /// Similarity space used to mine candidates.
    pub mining_store: &'a EmbeddingStore,
    /// Evaluation data; `eval.pool_store` is also the frozen base the head trains on.
    pub eval: EvalData<'a>,
    pub scoring: IclScoring<'a>,
    pub trainer: &'a TrainerConfig,
    pub setting: RetrievalSetting,
}

/// k values above `|train| − 1` run as `|train| − 1` and are reported as clamped.
pub fn sweep_k(k_values: &[usize], inputs: &SweepKInputs<'_>) -> Result<SweepResult> {
    let values = sorted_unique(k_values)?;
    if values[0] == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let max_k = inputs.train.len().saturating_sub(1);
    if max_k == 0 {
        return Err(Error::invalid("k sweep needs at least two training examples"));
    }
    let mut points = Vec::with_capacity(values.len());
    for &k in &values {
        let effective = k.min(max_k);
        if effective != k {
            log::warn!("k={k} exceeds the pool; running with k={effective}");
        }
        let cands = mine_candidates(inputs.train, inputs.mining_store, effective)?;
        let opts = ConstructOptions {
            parallelism: inputs.scoring.parallelism,
            ..Default::default()
        };
        let pairs = construct_pairs(inputs.train, &cands, inputs.scoring.scorer, inputs.scoring.spec, &opts)?;
        let (head, _) = train(&pairs, inputs.eval.pool_store, inputs.trainer)?;
        let ev = require_complete(run_icl(inputs.eval, Some(&head), &inputs.setting, inputs.scoring, "xampler")?)?;
        points.push(SweepPoint {
            value: k,
            effective_value: effective,
            macro_accuracy: ev.macro_accuracy()?,
        });
    }
    Ok(SweepResult {
        axis: SweepAxis::K,
        series: "xampler".into(),
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSweep {
    pub result: SweepResult,
    pub best_layer: usize,
}

/// `n_shots`-shot KNN with the untrained retriever per layer; each store must
/// embed both the pool and the eval sets. Ties go to the lower layer.
pub fn sweep_layers(
    stores: &[(usize, EmbeddingStore)],
    pool: &Dataset,
    eval_sets: &[Dataset],
    n_shots: usize,
) -> Result<LayerSweep> {
    let layers: Vec<usize> = stores.iter().map(|(l, _)| *l).collect();
    let order = sorted_unique(&layers)?;
    let setting = RetrievalSetting {
        mode: RetrievalMode::LabelAgnostic,
        n_shots,
    };
    let mut points = Vec::with_capacity(stores.len());
    for layer in order {
        let store = &stores.iter().find(|(l, _)| *l == layer).expect("layer present").1;
        for ex in std::iter::once(pool).chain(eval_sets).flat_map(|d| &d.examples) {
            if store.position(&ex.id).is_none() {
                return Err(Error::MissingEmbedding(format!("{} (layer {layer})", ex.id)));
            }
        }
        let data = EvalData {
            pool,
            pool_store: store,
            eval_sets,
            eval_store: store,
        };
        let ev = require_complete(run_knn(data, None, &setting, "knn")?)?;
        points.push(SweepPoint {
            value: layer,
            effective_value: layer,
            macro_accuracy: ev.macro_accuracy()?,
        });
    }
    let result = SweepResult {
        axis: SweepAxis::Layer,
        series: format!("knn@{n_shots}"),
        points,
    };
    let best_layer = result.argmax().expect("at least one layer").value;
    Ok(LayerSweep { result, best_layer })
}
