use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::{PromptContext, ScoreRequest, ScorerClient};
use crate::error::{Error, Result};

const HIT: f64 = 0.0;
const MISS: f64 = -10.0;

/// Behaviour of the deterministic in-process scorer. Rules read the prompt's
/// [`PromptContext`], never the prompt text.
#[derive(Debug, Clone, PartialEq)]
pub enum MockRule {
    /// Predicts the majority shot label, earlier continuations winning ties.
    /// With no shots every label scores the same.
    LabelEcho,
    /// Predicts the query's true label iff the most similar shot carries it,
    /// otherwise the first label in the set that is not the true label.
    SimilarityGated,
    /// Returns the given scores verbatim.
    Fixed(Vec<f64>),
    /// Replays recorded responses keyed by prompt and continuations.
    Replay(HashMap<(String, Vec<String>), Vec<f64>>),
}

#[derive(Debug)]
pub struct MockScorer {
    rule: MockRule,
    calls: AtomicUsize,
}

impl MockScorer {
    pub fn new(rule: MockRule) -> Self {
        MockScorer {
            rule,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn rule(&self) -> &MockRule {
        &self.rule
    }
}

impl ScorerClient for MockScorer {
    fn log_probs(&self, req: &ScoreRequest) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let labels = &req.continuations;
        match &self.rule {
            MockRule::LabelEcho => Ok(label_echo(labels, &req.context)),
            MockRule::SimilarityGated => Ok(similarity_gated(labels, &req.context)),
            MockRule::Fixed(scores) => Ok(scores.clone()),
            MockRule::Replay(recorded) => recorded
                .get(&(req.prompt_prefix.clone(), labels.clone()))
                .cloned()
                .ok_or_else(|| Error::Protocol("no recorded response for prompt".into())),
        }
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

fn label_echo(labels: &[String], ctx: &PromptContext) -> Vec<f64> {
    let n = ctx.shot_labels.len() as f64;
    let k = labels.len() as f64;
    labels
        .iter()
        .map(|l| {
            let count = ctx.shot_labels.iter().filter(|s| *s == l).count() as f64;
            ((count + 1.0) / (n + k)).ln()
        })
        .collect()
}

fn similarity_gated(labels: &[String], ctx: &PromptContext) -> Vec<f64> {
    let predicted = match (&ctx.query_label, &ctx.top_shot_label) {
        (Some(truth), Some(top)) if truth == top => Some(truth.as_str()),
        (Some(truth), _) => labels.iter().map(String::as_str).find(|l| *l != truth),
        (None, _) => None,
    };
    labels
        .iter()
        .map(|l| if Some(l.as_str()) == predicted { HIT } else { MISS })
        .collect()
}
