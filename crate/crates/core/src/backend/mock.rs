//! Deterministic in-process backends.
//!
//! The oracle family needs to know which images are gold for which question;
//! that knowledge is built once from a corpus and QA set ([`GoldIndex`]).

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{
    EmbedRequest, Embedder, GenerateRequest, Generator, RelevanceScorer, ScoreRequest,
    TeacherForcedRequest, TeacherForcedResponse, TeacherForcedScorer,
};
use crate::corpus::{Corpus, QaExample};
use crate::error::BackendError;
use crate::rerank::LogitPair;

/// Relevance scorer backed by a closure; counts its calls.
pub struct FnScorer<F> {
    f: F,
    calls: AtomicUsize,
}

impl<F> FnScorer<F>
where
    F: Fn(&ScoreRequest) -> Result<LogitPair, BackendError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self {
            f,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F> RelevanceScorer for FnScorer<F>
where
    F: Fn(&ScoreRequest) -> Result<LogitPair, BackendError> + Send + Sync,
{
    fn score(&self, req: &ScoreRequest) -> Result<LogitPair, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.f)(req)
    }
}

pub struct FnTeacherForced<F> {
    f: F,
}

impl<F> FnTeacherForced<F>
where
    F: Fn(&TeacherForcedRequest) -> Result<TeacherForcedResponse, BackendError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F> TeacherForcedScorer for FnTeacherForced<F>
where
    F: Fn(&TeacherForcedRequest) -> Result<TeacherForcedResponse, BackendError> + Send + Sync,
{
    fn teacher_forced(
        &self,
        req: &TeacherForcedRequest,
    ) -> Result<TeacherForcedResponse, BackendError> {
        (self.f)(req)
    }
}

/// Teacher-forced scorer that ignores its images entirely.
#[derive(Debug, Clone)]
pub struct ImageBlindTeacherForced {
    logit: f64,
}

impl ImageBlindTeacherForced {
    pub fn new(logit: f64) -> Self {
        Self { logit }
    }

    /// The log-probabilities it reports for a sequence of `len` tokens.
    pub fn log_probs(&self, len: usize) -> Vec<f64> {
        (0..len).map(|t| -0.1 - 0.2 * t as f64).collect()
    }
}

impl TeacherForcedScorer for ImageBlindTeacherForced {
    fn teacher_forced(
        &self,
        req: &TeacherForcedRequest,
    ) -> Result<TeacherForcedResponse, BackendError> {
        let n = req.gold_tokens.len();
        Ok(TeacherForcedResponse {
            gold_token_logits: vec![self.logit; n],
            gold_token_log_probs: self.log_probs(n),
        })
    }
}

/// Unit-norm Gaussian vector seeded by the SHA-256 of the payload.
///
/// Text and image payloads share the same space, so identical strings embed
/// identically whatever their kind.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1) }
    }

    pub fn vector(&self, payload: &str) -> Vec<f32> {
        let digest = Sha256::digest(payload.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let v: Vec<f64> = (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = v
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        v.into_iter().map(|x| (x / norm) as f32).collect()
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, req: &EmbedRequest) -> Result<Vec<f32>, BackendError> {
        Ok(self.vector(&req.payload))
    }
}

/// Gold image locators and first answer for each question.
#[derive(Debug, Clone, Default)]
pub struct GoldIndex {
    by_question: HashMap<String, (HashSet<String>, String)>,
}

impl GoldIndex {
    pub fn from_dataset(corpus: &Corpus, qa: &[QaExample]) -> Self {
        let by_question = qa
            .iter()
            .map(|q| {
                let refs = q
                    .positive_ids
                    .iter()
                    .filter_map(|id| corpus.get(id))
                    .map(|r| r.image_ref.clone())
                    .collect();
                let answer = q.answers.first().cloned().unwrap_or_default();
                (q.question.clone(), (refs, answer))
            })
            .collect();
        Self { by_question }
    }

    pub fn is_gold(&self, question: &str, image_ref: &str) -> bool {
        self.by_question
            .get(question)
            .is_some_and(|(refs, _)| refs.contains(image_ref))
    }
}

/// `logit_yes = +margin` on gold images, `−margin` otherwise; `logit_no = 0`.
/// With `inverted` the labels flip, giving the adversarial scorer.
#[derive(Debug, Clone)]
pub struct OracleScorer {
    gold: Arc<GoldIndex>,
    margin: f64,
    inverted: bool,
}

impl OracleScorer {
    pub fn new(gold: Arc<GoldIndex>) -> Self {
        Self {
            gold,
            margin: 5.0,
            inverted: false,
        }
    }

    pub fn adversarial(gold: Arc<GoldIndex>) -> Self {
        Self {
            inverted: true,
            ..Self::new(gold)
        }
    }
}

impl RelevanceScorer for OracleScorer {
    fn score(&self, req: &ScoreRequest) -> Result<LogitPair, BackendError> {
        let gold = self.gold.is_gold(&req.question, &req.image_ref) != self.inverted;
        let yes = if gold { self.margin } else { -self.margin };
        Ok(LogitPair::new(yes, 0.0))
    }
}

/// Returns the same logits for every candidate.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub LogitPair);

impl RelevanceScorer for ConstantScorer {
    fn score(&self, _req: &ScoreRequest) -> Result<LogitPair, BackendError> {
        Ok(self.0)
    }
}

/// Answers with the first gold answer iff every gold image was supplied.
#[derive(Debug, Clone)]
pub struct EchoGenerator {
    gold: Arc<GoldIndex>,
}

impl EchoGenerator {
    pub const WRONG_ANSWER: &'static str = "unanswerable";

    pub fn new(gold: Arc<GoldIndex>) -> Self {
        Self { gold }
    }
}

impl Generator for EchoGenerator {
    fn generate(&self, req: &GenerateRequest) -> Result<String, BackendError> {
        let fed: HashSet<&str> = req.image_refs.iter().map(String::as_str).collect();
        Ok(match self.gold.by_question.get(&req.question) {
            Some((refs, answer)) if refs.iter().all(|r| fed.contains(r.as_str())) => answer.clone(),
            _ => Self::WRONG_ANSWER.to_string(),
        })
    }
}
