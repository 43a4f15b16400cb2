//! Knowledge-enhanced pointwise reranking.
//!
//! A ranking model is asked whether one (question, caption, image) triple is
//! relevant; the relevance probability is the softmax of its first-token
//! logits for `Yes` against `No`. The top-K retrieval candidates are rescored
//! this way, sorted, cut to the top-N, and optionally filtered by a threshold.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{RelevanceScorer, ScoreRequest};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::index::RetrievalResult;
use crate::par::bounded_map;
use crate::threshold::Threshold;

/// Placeholder the multimodal model substitutes with image tokens.
pub const IMAGE_PLACEHOLDER: &str = "<image>";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    #[default]
    CaptionAware,
    CaptionAgnostic,
}

impl TemplateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::CaptionAware => "caption_aware",
            TemplateKind::CaptionAgnostic => "caption_agnostic",
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "caption_aware" => Ok(TemplateKind::CaptionAware),
            "caption_agnostic" => Ok(TemplateKind::CaptionAgnostic),
            other => Err(Error::invalid(format!("unknown template kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingPrompt {
    pub kind: TemplateKind,
    pub text: String,
    pub image_ref: String,
}

/// Renders the ranking instruction for one candidate image.
///
/// An empty caption is an error for [`TemplateKind::CaptionAware`]; callers
/// must pick [`TemplateKind::CaptionAgnostic`] themselves.
pub fn render_prompt(
    kind: TemplateKind,
    caption: &str,
    question: &str,
    image_ref: &str,
) -> Result<RankingPrompt> {
    if question.trim().is_empty() {
        return Err(Error::invalid("ranking prompt needs a non-empty question"));
    }
    let text = match kind {
        TemplateKind::CaptionAware => {
            if caption.trim().is_empty() {
                return Err(Error::invalid(
                    "caption-aware prompt needs a caption; use the caption-agnostic template",
                ));
            }
            format!(
                "{IMAGE_PLACEHOLDER} Image Caption:{caption} Question:{question} \
                 Based on the image and its caption, is the image relevant to the question? \
                 Answer \"Yes\" or \"No\"."
            )
        }
        TemplateKind::CaptionAgnostic => format!(
            "{IMAGE_PLACEHOLDER} Question:{question} \
             Is this image relevant to the question? Answer 'Yes' or 'No'."
        ),
    };
    Ok(RankingPrompt {
        kind,
        text,
        image_ref: image_ref.to_string(),
    })
}

/// First-token logits for the strings `"Yes"` and `"No"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitPair {
    pub logit_yes: f64,
    pub logit_no: f64,
}

impl LogitPair {
    pub fn new(logit_yes: f64, logit_no: f64) -> Self {
        Self {
            logit_yes,
            logit_no,
        }
    }
}

/// Probability of answering `Yes`: `exp(y) / (exp(y) + exp(n))`.
///
/// Evaluated as a logistic of `y - n` with the larger logit factored out, so
/// it never overflows and depends only on the difference.
pub fn relevance_probability(lp: LogitPair) -> Result<f64> {
    if !lp.logit_yes.is_finite() || !lp.logit_no.is_finite() {
        return Err(Error::NonFinite("relevance logits".into()));
    }
    let d = lp.logit_yes - lp.logit_no;
    Ok(if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankedCandidate {
    pub id: String,
    pub relevance_p: f64,
    /// Inner-product score from first-stage retrieval, kept for provenance only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankedSet {
    pub query_id: String,
    pub candidates: Vec<RerankedCandidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_applied: Option<Threshold>,
}

impl RerankedSet {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.id.as_str())
    }

    /// Views the set as a retrieval result, e.g. to rerank it again.
    pub fn to_retrieval(&self) -> RetrievalResult {
        RetrievalResult {
            query_id: self.query_id.clone(),
            candidates: self
                .candidates
                .iter()
                .map(|c| crate::index::ScoredId {
                    id: c.id.clone(),
                    score: c.retrieval_score.unwrap_or(c.relevance_p),
                })
                .collect(),
        }
    }
}

/// Descending relevance, ties by ascending id.
fn relevance_order(a: &RerankedCandidate, b: &RerankedCandidate) -> Ordering {
    b.relevance_p
        .total_cmp(&a.relevance_p)
        .then_with(|| a.id.cmp(&b.id))
}

/// Reranks retrieval candidates with a relevance scorer.
pub struct Reranker<'a> {
    scorer: &'a dyn RelevanceScorer,
    template: TemplateKind,
    max_inflight: usize,
}

impl<'a> Reranker<'a> {
    pub const DEFAULT_MAX_INFLIGHT: usize = 8;

    pub fn new(scorer: &'a dyn RelevanceScorer) -> Self {
        Self {
            scorer,
            template: TemplateKind::default(),
            max_inflight: Self::DEFAULT_MAX_INFLIGHT,
        }
    }

    pub fn template(mut self, template: TemplateKind) -> Self {
        self.template = template;
        self
    }

    pub fn max_inflight(mut self, max_inflight: usize) -> Self {
        self.max_inflight = max_inflight.max(1);
        self
    }

    /// Scores every candidate exactly once and keeps the `n` most relevant.
    ///
    /// A failure on any candidate fails the whole query; nothing is dropped
    /// silently.
    pub fn rerank(
        &self,
        candidates: &RetrievalResult,
        corpus: &Corpus,
        question: &str,
        n: usize,
    ) -> Result<RerankedSet> {
        if n == 0 {
            return Err(Error::invalid("N must be positive"));
        }
        let mut requests = Vec::with_capacity(candidates.candidates.len());
        for c in &candidates.candidates {
            let record = corpus.get(&c.id).ok_or_else(|| Error::DanglingReference {
                qid: candidates.query_id.clone(),
                id: c.id.clone(),
            })?;
            requests.push(ScoreRequest {
                question: question.to_string(),
                caption: record.caption.clone(),
                image_ref: record.image_ref.clone(),
                template: self.template,
            });
        }
        let scored = bounded_map(&requests, self.max_inflight, |req| self.scorer.score(req));

        let mut out = Vec::with_capacity(scored.len());
        for (c, logits) in candidates.candidates.iter().zip(scored) {
            let logits = logits.map_err(|source| Error::Candidate {
                candidate: c.id.clone(),
                source,
            })?;
            out.push(RerankedCandidate {
                id: c.id.clone(),
                relevance_p: relevance_probability(logits)?,
                retrieval_score: Some(c.score),
            });
        }
        out.sort_by(relevance_order);
        out.truncate(n);
        Ok(RerankedSet {
            query_id: candidates.query_id.clone(),
            candidates: out,
            threshold_applied: None,
        })
    }
}

/// Drops every candidate with `relevance_p < eta`. The result may be empty.
pub fn apply_threshold(set: &RerankedSet, threshold: &Threshold) -> Result<RerankedSet> {
    threshold.validate()?;
    Ok(RerankedSet {
        query_id: set.query_id.clone(),
        candidates: set
            .candidates
            .iter()
            .filter(|c| c.relevance_p >= threshold.eta)
            .cloned()
            .collect(),
        threshold_applied: Some(threshold.without_curves()),
    })
}
