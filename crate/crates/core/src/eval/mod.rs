//! Per-language accuracy, macro-averages across languages, sweeps and reports.

mod report;
mod sweep;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example};
use crate::error::{Error, Result};

pub use report::{emit_report, emit_sweeps, sweep_table, AblationTable, ReportFormat, ResultTable, AVG_ROW};
pub use sweep::{sweep_k, sweep_layers, sweep_shots, LayerSweep, ShotSweep, SweepAxis, SweepKInputs, SweepPoint, SweepResult};

/// Exact-match accuracy of one method on one language, kept as a fraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub language: String,
    pub method: String,
    pub setting: String,
    pub correct: usize,
    pub total: usize,
}

impl EvalRecord {
    pub fn new(
        language: impl Into<String>,
        method: impl Into<String>,
        setting: impl Into<String>,
        correct: usize,
        total: usize,
    ) -> Result<Self> {
        if total == 0 || correct > total {
            return Err(Error::invalid(format!("invalid accuracy fraction {correct}/{total}")));
        }
        Ok(EvalRecord {
            language: language.into(),
            method: method.into(),
            setting: setting.into(),
            correct,
            total,
        })
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageFailure {
    pub language: String,
    pub example_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evaluation {
    /// One record per language, sorted by language.
    pub records: Vec<EvalRecord>,
    /// Languages aborted by a prediction error.
    pub failures: Vec<LanguageFailure>,
}

impl Evaluation {
    pub fn macro_accuracy(&self) -> Result<f64> {
        macro_average(&self.records)
    }
}

/// Groups examples from all eval sets by language, in sorted language order.
pub fn by_language(eval_sets: &[Dataset]) -> BTreeMap<&str, Vec<&Example>> {
    let mut groups: BTreeMap<&str, Vec<&Example>> = BTreeMap::new();
    for ds in eval_sets {
        for ex in &ds.examples {
            groups.entry(ex.language.as_str()).or_default().push(ex);
        }
    }
    groups
}

/// Scores one language at a time; `predict` gets all of a language's examples
/// and returns one predicted label per example, in order.
pub fn evaluate_batched<F>(eval_sets: &[Dataset], mut predict: F, method: &str, setting: &str) -> Result<Evaluation>
where
    F: FnMut(&[&Example]) -> Vec<Result<String>>,
{
    let groups = by_language(eval_sets);
    if groups.is_empty() {
        return Err(Error::invalid("no evaluation examples"));
    }
    let mut out = Evaluation::default();
    for (language, examples) in groups {
        let predictions = predict(&examples);
        if predictions.len() != examples.len() {
            return Err(Error::invalid(format!(
                "predictor returned {} labels for {} examples",
                predictions.len(),
                examples.len()
            )));
        }
        let mut correct = 0;
        let mut failed = None;
        for (ex, pred) in examples.iter().zip(predictions) {
            match pred {
                Ok(label) => correct += usize::from(label == ex.label),
                Err(e) => {
                    failed = Some(LanguageFailure {
                        language: language.to_string(),
                        example_id: ex.id.clone(),
                        message: e.to_string(),
                    });
                    break;
                }
            }
        }
        match failed {
            Some(f) => {
                log::error!("evaluation of {} aborted at {}: {}", f.language, f.example_id, f.message);
                out.failures.push(f);
            }
            None => out
                .records
                .push(EvalRecord::new(language, method, setting, correct, examples.len())?),
        }
    }
    Ok(out)
}

pub fn evaluate<F>(eval_sets: &[Dataset], mut predict: F, method: &str, setting: &str) -> Result<Evaluation>
where
    F: FnMut(&Example) -> Result<String>,
{
    evaluate_batched(
        eval_sets,
        |examples| {
            let mut out = Vec::with_capacity(examples.len());
            for ex in examples {
                let p = predict(ex);
                let stop = p.is_err();
                out.push(p);
                if stop {
                    break;
                }
            }
            // Pad so lengths match; the first error already aborts the language.
            while out.len() < examples.len() {
                out.push(Err(Error::invalid("skipped after earlier failure")));
            }
            out
        },
        method,
        setting,
    )
}

/// Unweighted mean of per-language accuracies.
pub fn macro_average(records: &[EvalRecord]) -> Result<f64> {
    mean_accuracy(&records.iter().map(EvalRecord::accuracy).collect::<Vec<_>>())
}

pub fn mean_accuracy(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("cannot average an empty set of accuracies"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
