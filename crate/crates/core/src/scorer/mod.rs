//! Prompt rendering and label scoring against an LLM scorer.
//!
//! Each label is scored as a continuation of the prompt and the prediction is
//! the argmax. Scorers are either the in-process [`MockScorer`] or the remote
//! [`HttpScorer`] speaking the bridge wire protocol.

mod http;
mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::error::{Error, Result};

pub use http::{EmbedRequest, EmbedResponse, HttpScorer, RetryPolicy, ScoreBody, ScoreResponse, SCORER_URL_ENV};
pub use mock::{MockRule, MockScorer};

pub const SENTENCE_SLOT: &str = "[sentence]";
pub const LABEL_SLOT: &str = "[label]";
pub const DEFAULT_TEMPLATE: &str = "The topic of the news [sentence] is [label]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSpec {
    pub template: String,
    #[serde(default = "default_separator")]
    pub separator: String,
}

fn default_separator() -> String {
    "\n".to_string()
}

impl Default for PromptSpec {
    fn default() -> Self {
        PromptSpec {
            template: DEFAULT_TEMPLATE.to_string(),
            separator: default_separator(),
        }
    }
}

impl PromptSpec {
    pub fn new(template: impl Into<String>, separator: impl Into<String>) -> Result<Self> {
        let spec = PromptSpec {
            template: template.into(),
            separator: separator.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for slot in [SENTENCE_SLOT, LABEL_SLOT] {
            let n = self.template.matches(slot).count();
            if n != 1 {
                return Err(Error::Template(format!(
                    "template must contain {slot} exactly once, found {n}"
                )));
            }
        }
        if self.template.find(SENTENCE_SLOT) > self.template.find(LABEL_SLOT) {
            return Err(Error::Template(format!(
                "{SENTENCE_SLOT} must come before {LABEL_SLOT}"
            )));
        }
        Ok(())
    }

    /// Template text before the sentence slot.
    pub fn fixed_prefix(&self) -> &str {
        let end = self.template.find(SENTENCE_SLOT).unwrap_or(0);
        &self.template[..end]
    }

    fn shot(&self, text: &str, label: &str) -> String {
        self.template
            .replacen(SENTENCE_SLOT, text, 1)
            .replacen(LABEL_SLOT, label, 1)
    }

    fn query_clause(&self, text: &str) -> String {
        let cut = self.template.find(LABEL_SLOT).unwrap_or(self.template.len());
        self.template[..cut]
            .trim_end()
            .replacen(SENTENCE_SLOT, text, 1)
    }
}

/// Renders the shots with their labels followed by the query clause, which stops
/// right before the label slot. Whitespace in front of the slot is dropped so the
/// label continuation carries its own leading space.
pub fn render_prompt(spec: &PromptSpec, shots: &[Example], query_text: &str) -> Result<String> {
    spec.validate()?;
    let mut segments: Vec<String> = shots.iter().map(|s| spec.shot(&s.text, &s.label)).collect();
    segments.push(spec.query_clause(query_text));
    Ok(segments.join(&spec.separator))
}

/// Side-channel facts about a prompt, visible to the mock scorer only. They are
/// never rendered into the prompt nor sent over the wire.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptContext {
    /// Shot labels in prompt order.
    pub shot_labels: Vec<String>,
    /// Label of the most similar shot.
    pub top_shot_label: Option<String>,
    /// Ground truth of the query.
    pub query_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRequest {
    pub prompt_prefix: String,
    pub continuations: Vec<String>,
    pub context: PromptContext,
}

impl ScoreRequest {
    pub fn new(prompt_prefix: String, continuations: Vec<String>) -> Self {
        ScoreRequest {
            prompt_prefix,
            continuations,
            context: PromptContext::default(),
        }
    }

    pub fn with_context(mut self, context: PromptContext) -> Self {
        self.context = context;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    /// Log-domain score per continuation, higher is more probable.
    pub scores: Vec<f64>,
}

/// Anything that can assign log-probabilities to label continuations.
pub trait ScorerClient: Send + Sync {
    fn log_probs(&self, req: &ScoreRequest) -> Result<Vec<f64>>;

    /// Number of scoring calls served so far.
    fn calls(&self) -> usize {
        0
    }
}

impl<T: ScorerClient + ?Sized> ScorerClient for Box<T> {
    fn log_probs(&self, req: &ScoreRequest) -> Result<Vec<f64>> {
        (**self).log_probs(req)
    }

    fn calls(&self) -> usize {
        (**self).calls()
    }
}

/// Index of the largest score; earlier entries win ties.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        match best {
            Some(b) if scores[b].total_cmp(s).is_ge() => {}
            _ => best = Some(i),
        }
    }
    best
}

pub fn score_labels(client: &dyn ScorerClient, req: &ScoreRequest) -> Result<Prediction> {
    if req.continuations.is_empty() {
        return Err(Error::invalid("score request has no continuations"));
    }
    let scores = client.log_probs(req)?;
    if scores.len() != req.continuations.len() {
        return Err(Error::Protocol(format!(
            "scorer returned {} scores for {} continuations",
            scores.len(),
            req.continuations.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Protocol("scorer returned NaN".into()));
    }
    let best = argmax(&scores).expect("non-empty");
    Ok(Prediction {
        label: req.continuations[best].clone(),
        scores,
    })
}

/// Scores `requests` with up to `parallelism` in flight; results come back in request order.
pub fn score_all(
    client: &dyn ScorerClient,
    requests: &[ScoreRequest],
    parallelism: usize,
) -> Vec<Result<Prediction>> {
    let workers = parallelism.max(1).min(requests.len());
    if workers <= 1 {
        return requests.iter().map(|r| score_labels(client, r)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<Prediction>>>> =
        requests.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(req) = requests.get(i) else { break };
                let out = score_labels(client, req);
                *slots[i].lock().unwrap() = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every slot is filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shot(text: &str, label: &str) -> Example {
        Example {
            id: text.into(),
            text: text.into(),
            label: label.into(),
            language: "eng_Latn".into(),
        }
    }

    #[test]
    fn zero_shot_rendering() {
        let p = render_prompt(&PromptSpec::default(), &[], "rain tomorrow").unwrap();
        assert_eq!(p, "The topic of the news rain tomorrow is");
    }

    #[test]
    fn one_shot_rendering() {
        let p = render_prompt(
            &PromptSpec::default(),
            &[shot("goal scored", "sports")],
            "vote held",
        )
        .unwrap();
        // Expected string assembled by hand from the template.
        let expected = ["The topic of the news goal scored is sports", "The topic of the news vote held is"].join("\n");
        assert_eq!(p, expected);
    }

    #[test]
    fn shot_order_is_preserved() {
        let spec = PromptSpec::default();
        let a = shot("alpha", "x");
        let b = shot("beta", "y");
        let ab = render_prompt(&spec, &[a.clone(), b.clone()], "q").unwrap();
        let ba = render_prompt(&spec, &[b, a], "q").unwrap();
        let seg_ab: Vec<_> = ab.split('\n').collect();
        let seg_ba: Vec<_> = ba.split('\n').collect();
        assert_eq!(seg_ab[0], seg_ba[1]);
        assert_eq!(seg_ab[1], seg_ba[0]);
        assert_eq!(seg_ab[2], seg_ba[2]);
    }

    #[test]
    fn template_validation() {
        assert!(PromptSpec::new("no slots", "\n").is_err());
        assert!(PromptSpec::new("[sentence] [sentence] [label]", "\n").is_err());
        assert!(PromptSpec::new("[label] then [sentence]", "\n").is_err());
        let bad = PromptSpec {
            template: "only [sentence]".into(),
            separator: "\n".into(),
        };
        assert!(matches!(render_prompt(&bad, &[], "q"), Err(Error::Template(_))));
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax(&[]), None);
        assert_eq!(argmax(&[1.0, 1.0]), Some(0));
        assert_eq!(argmax(&[-1.0, -0.5, -2.0]), Some(1));
        assert_eq!(argmax(&[f64::NEG_INFINITY, -3.0]), Some(1));
    }

    #[test]
    fn score_labels_examples() {
        let single = MockScorer::new(MockRule::Fixed(vec![-42.0]));
        let req = ScoreRequest::new("p".into(), vec!["sports".into()]);
        assert_eq!(score_labels(&single, &req).unwrap().label, "sports");

        let fixed = MockScorer::new(MockRule::Fixed(vec![-1.0, -0.5, -2.0]));
        let req = ScoreRequest::new("p".into(), vec!["a".into(), "b".into(), "c".into()]);
        assert_eq!(score_labels(&fixed, &req).unwrap().label, "b");

        let tie = MockScorer::new(MockRule::Fixed(vec![0.0, 0.0]));
        let req = ScoreRequest::new("p".into(), vec!["a".into(), "b".into()]);
        assert_eq!(score_labels(&tie, &req).unwrap().label, "a");
    }

    #[test]
    fn wrong_arity_is_protocol_error() {
        let bad = MockScorer::new(MockRule::Fixed(vec![0.0, 1.0, 2.0]));
        let req = ScoreRequest::new("p".into(), vec!["a".into(), "b".into()]);
        assert!(matches!(score_labels(&bad, &req), Err(Error::Protocol(_))));
    }

    #[test]
    fn score_all_keeps_request_order() {
        let mock = MockScorer::new(MockRule::LabelEcho);
        let labels: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let reqs: Vec<_> = (0..50)
            .map(|i| {
                ScoreRequest::new(format!("p{i}"), labels.clone()).with_context(PromptContext {
                    shot_labels: vec![labels[i % 3].clone()],
                    ..Default::default()
                })
            })
            .collect();
        let out = score_all(&mock, &reqs, 4);
        for (i, p) in out.iter().enumerate() {
            assert_eq!(p.as_ref().unwrap().label, labels[i % 3]);
        }
        assert_eq!(mock.calls(), 50);
    }

    proptest! {
        #[test]
        fn argmax_survives_monotone_transform(
            scores in prop::collection::vec(-50.0f64..50.0, 1..10),
            scale in 0.1f64..2.0,
            shift in -10.0f64..10.0,
        ) {
            let labels: Vec<String> = (0..scores.len()).map(|i| format!("l{i}")).collect();
            let req = ScoreRequest::new("p".into(), labels);
            let raw = score_labels(&MockScorer::new(MockRule::Fixed(scores.clone())), &req).unwrap();
            let moved: Vec<f64> = scores.iter().map(|s| (s * scale + shift).exp().ln_1p()).collect();
            let transformed = score_labels(&MockScorer::new(MockRule::Fixed(moved)), &req).unwrap();
            prop_assert_eq!(raw.label, transformed.label);
        }

        #[test]
        fn prefix_occurs_once_per_segment(
            texts in prop::collection::vec("[a-z ]{1,12}", 0..8),
            query in "[a-z ]{1,12}",
        ) {
            let spec = PromptSpec::default();
            let shots: Vec<Example> = texts.iter().map(|t| shot(t, "lbl")).collect();
            let prompt = render_prompt(&spec, &shots, &query).unwrap();
            prop_assert_eq!(prompt.matches(spec.fixed_prefix()).count(), shots.len() + 1);
        }
    }
}
