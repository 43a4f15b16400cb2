//! The retrieve → rerank → generate pipeline and its configuration.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::backend::http::{HttpBackend, HttpOptions};
use crate::backend::mock::{
    ConstantScorer, EchoGenerator, GoldIndex, HashEmbedder, ImageBlindTeacherForced, OracleScorer,
};
use crate::backend::{Embedder, GenerateRequest, Generator, RelevanceScorer, TeacherForcedScorer};
use crate::corpus::{Corpus, QaExample};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, EvalSettings, QueryOutcome};
use crate::index::{MipsSearch, RetrievalResult};
use crate::par::bounded_map;
use crate::rerank::{apply_threshold, LogitPair, RerankedSet, Reranker, TemplateKind};
use crate::threshold::Threshold;

/// Deterministic stand-ins selectable from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockBehavior {
    /// Embedder: SHA-256 seeded unit vectors.
    Hash,
    /// Scorer: +5 / −5 `Yes` logit on gold / non-gold images.
    Oracle,
    /// Scorer: equal logits for every image. Teacher-forced: ignores images.
    ImageBlind,
    /// Scorer: the oracle with labels swapped.
    Adversarial,
    /// Generator: the first gold answer iff all gold images were supplied.
    Echo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Http {
        endpoint: String,
    },
    Mock {
        behavior: MockBehavior,
        /// Vector size for the hash embedder.
        #[serde(default = "default_dim")]
        dim: usize,
    },
}

fn default_dim() -> usize {
    64
}

impl BackendSpec {
    pub fn mock(behavior: MockBehavior) -> Self {
        BackendSpec::Mock {
            behavior,
            dim: default_dim(),
        }
    }

    pub fn is_mock(&self) -> bool {
        matches!(self, BackendSpec::Mock { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendsConfig {
    pub embedder: BackendSpec,
    pub scorer: BackendSpec,
    pub generator: BackendSpec,
    #[serde(default = "default_teacher_forced")]
    pub teacher_forced: BackendSpec,
    #[serde(default)]
    pub http: HttpOptions,
}

fn default_teacher_forced() -> BackendSpec {
    BackendSpec::mock(MockBehavior::ImageBlind)
}

impl Default for BackendsConfig {
    fn default() -> Self {
        Self {
            embedder: BackendSpec::mock(MockBehavior::Hash),
            scorer: BackendSpec::mock(MockBehavior::Oracle),
            generator: BackendSpec::mock(MockBehavior::Echo),
            teacher_forced: default_teacher_forced(),
            http: HttpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Retrieval depth K.
    pub k: usize,
    /// Rerank depth N, `1 ≤ N ≤ K`.
    pub n: usize,
    pub threshold: Threshold,
    pub template: TemplateKind,
    pub backends: BackendsConfig,
    /// Concurrent scorer calls per query.
    pub max_inflight: usize,
    /// Queries processed concurrently.
    pub query_parallelism: usize,
    /// Fraction of queries allowed to fail before a run is an error.
    pub max_failure_rate: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 20,
            n: 2,
            threshold: Threshold::natural(),
            template: TemplateKind::CaptionAware,
            backends: BackendsConfig::default(),
            max_inflight: 8,
            query_parallelism: 4,
            max_failure_rate: 0.1,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// MultimodalQA default: one image per question.
    pub fn single_image() -> Self {
        Self {
            n: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n == 0 || self.n > self.k {
            return Err(Error::Config(format!(
                "need 1 <= N <= K, got N = {} and K = {}",
                self.n, self.k
            )));
        }
        if self.max_inflight == 0 || self.query_parallelism == 0 {
            return Err(Error::Config("parallelism limits must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(Error::Config("max_failure_rate must lie in [0, 1]".into()));
        }
        self.threshold
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn all_mock(&self) -> bool {
        let b = &self.backends;
        b.embedder.is_mock() && b.scorer.is_mock() && b.generator.is_mock()
    }
}

/// The live backend objects for one run.
pub struct Backends {
    pub embedder: Box<dyn Embedder>,
    pub scorer: Box<dyn RelevanceScorer>,
    pub generator: Box<dyn Generator>,
    pub teacher_forced: Box<dyn TeacherForcedScorer>,
}

impl Backends {
    /// Instantiates the configured backends. Mocks that need gold labels read
    /// them from `corpus` and `qa`.
    pub fn from_config(config: &BackendsConfig, corpus: &Corpus, qa: &[QaExample]) -> Result<Self> {
        let gold = Arc::new(GoldIndex::from_dataset(corpus, qa));
        let http = |endpoint: &str| HttpBackend::new(endpoint, config.http.clone());
        let wrong = |role: &str, b: MockBehavior| {
            Error::Config(format!("mock behavior {b:?} cannot serve as the {role}"))
        };

        let embedder: Box<dyn Embedder> = match &config.embedder {
            BackendSpec::Http { endpoint } => Box::new(http(endpoint)),
            BackendSpec::Mock {
                behavior: MockBehavior::Hash,
                dim,
            } => Box::new(HashEmbedder::new(*dim)),
            BackendSpec::Mock { behavior, .. } => return Err(wrong("embedder", *behavior)),
        };
        let scorer: Box<dyn RelevanceScorer> = match &config.scorer {
            BackendSpec::Http { endpoint } => Box::new(http(endpoint)),
            BackendSpec::Mock { behavior, .. } => match behavior {
                MockBehavior::Oracle => Box::new(OracleScorer::new(gold.clone())),
                MockBehavior::Adversarial => Box::new(OracleScorer::adversarial(gold.clone())),
                MockBehavior::ImageBlind => Box::new(ConstantScorer(LogitPair::new(0.0, 0.0))),
                b => return Err(wrong("scorer", *b)),
            },
        };
        let generator: Box<dyn Generator> = match &config.generator {
            BackendSpec::Http { endpoint } => Box::new(http(endpoint)),
            BackendSpec::Mock {
                behavior: MockBehavior::Echo,
                ..
            } => Box::new(EchoGenerator::new(gold.clone())),
            BackendSpec::Mock { behavior, .. } => return Err(wrong("generator", *behavior)),
        };
        let teacher_forced: Box<dyn TeacherForcedScorer> = match &config.teacher_forced {
            BackendSpec::Http { endpoint } => Box::new(http(endpoint)),
            BackendSpec::Mock {
                behavior: MockBehavior::ImageBlind,
                ..
            } => Box::new(ImageBlindTeacherForced::new(0.0)),
            BackendSpec::Mock { behavior, .. } => {
                return Err(wrong("teacher-forced scorer", *behavior))
            }
        };
        Ok(Self {
            embedder,
            scorer,
            generator,
            teacher_forced,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub qid: String,
    pub question: String,
    pub retrieved: RetrievalResult,
    /// Top-N after reranking, before the threshold.
    pub reranked: RerankedSet,
    /// Threshold survivors in reranked order; possibly empty.
    pub images_fed: Vec<String>,
    pub answer: String,
}

/// Per-query failure recorded during [`Pipeline::run_eval`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryFailure {
    pub qid: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub report: EvalReport,
    pub traces: Vec<PipelineTrace>,
    pub failures: Vec<QueryFailure>,
}

pub struct Pipeline<'a> {
    config: PipelineConfig,
    memory: &'a dyn MipsSearch,
    corpus: &'a Corpus,
    backends: &'a Backends,
    query_cache: Mutex<HashMap<String, Vec<f32>>>,
}

fn cache_key(question: &str) -> String {
    question
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl<'a> Pipeline<'a> {
    pub fn new(
        config: PipelineConfig,
        memory: &'a dyn MipsSearch,
        corpus: &'a Corpus,
        backends: &'a Backends,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            memory,
            corpus,
            backends,
            query_cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn embed_question(&self, question: &str) -> Result<Vec<f32>> {
        let key = cache_key(question);
        if let Some(v) = self.query_cache.lock().expect("cache poisoned").get(&key) {
            return Ok(v.clone());
        }
        let v = self.backends.embedder.embed_text(question)?;
        self.query_cache
            .lock()
            .expect("cache poisoned")
            .insert(key, v.clone());
        Ok(v)
    }

    /// Top-K retrieval for one question.
    pub fn retrieve(&self, qid: &str, question: &str) -> Result<RetrievalResult> {
        let stage = |stage, e| Error::Stage {
            stage,
            qid: qid.to_string(),
            source: Box::new(e),
        };
        let query = self
            .embed_question(question)
            .map_err(|e| stage("embed", e))?;
        self.memory
            .search(qid, &query, self.config.k)
            .map_err(|e| stage("retrieve", e))
    }

    pub fn run_query(&self, qid: &str, question: &str) -> Result<PipelineTrace> {
        let stage = |stage, e| Error::Stage {
            stage,
            qid: qid.to_string(),
            source: Box::new(e),
        };
        let retrieved = self.retrieve(qid, question)?;
        let reranked = Reranker::new(self.backends.scorer.as_ref())
            .template(self.config.template)
            .max_inflight(self.config.max_inflight)
            .rerank(&retrieved, self.corpus, question, self.config.n)
            .map_err(|e| stage("rerank", e))?;
        let kept = apply_threshold(&reranked, &self.config.threshold)
            .map_err(|e| stage("threshold", e))?;
        let images_fed: Vec<String> = kept.ids().map(str::to_string).collect();
        let image_refs = images_fed
            .iter()
            .map(|id| {
                self.corpus
                    .get(id)
                    .map(|r| r.image_ref.clone())
                    .expect("reranked ids come from the corpus")
            })
            .collect();
        let answer = self
            .backends
            .generator
            .generate(&GenerateRequest {
                question: question.to_string(),
                image_refs,
                greedy: true,
            })
            .map_err(|e| stage("generate", e.into()))?;
        Ok(PipelineTrace {
            qid: qid.to_string(),
            question: question.to_string(),
            retrieved,
            reranked,
            images_fed,
            answer,
        })
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings::for_depths(self.config.k, self.config.n)
    }

    /// Runs every query and scores the results. Failed queries are reported
    /// and excluded from the metrics; the run itself fails only when their
    /// share exceeds `max_failure_rate`.
    pub fn run_eval(&self, qa: &[QaExample]) -> Result<EvalRun> {
        let results = bounded_map(qa, self.config.query_parallelism, |q| {
            self.run_query(&q.qid, &q.question)
        });
        let mut traces = Vec::new();
        let mut outcomes = Vec::new();
        let mut failures = Vec::new();
        for (q, result) in qa.iter().zip(results) {
            match result {
                Ok(trace) => {
                    outcomes.push(outcome(q, &trace));
                    traces.push(trace);
                }
                Err(e) => {
                    log::warn!("query `{}` failed: {e}", q.qid);
                    failures.push(QueryFailure {
                        qid: q.qid.clone(),
                        error: e.to_string(),
                    });
                }
            }
        }
        if !qa.is_empty() {
            let rate = failures.len() as f64 / qa.len() as f64;
            if rate > self.config.max_failure_rate {
                return Err(Error::FailureRate {
                    failed: failures.len(),
                    total: qa.len(),
                    cap: self.config.max_failure_rate,
                });
            }
        }
        let report = evaluate(&outcomes, &self.eval_settings(), failures.len())?;
        Ok(EvalRun {
            report,
            traces,
            failures,
        })
    }
}

pub fn outcome(q: &QaExample, trace: &PipelineTrace) -> QueryOutcome {
    QueryOutcome {
        qid: q.qid.clone(),
        gold_ids: q.positive_ids.iter().cloned().collect(),
        answers: q.answers.clone(),
        retrieved_ids: trace.retrieved.ids().map(str::to_string).collect(),
        reranked_ids: Some(trace.reranked.ids().map(str::to_string).collect()),
        fed_ids: Some(trace.images_fed.clone()),
        prediction: trace.answer.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_setup() {
        let c = PipelineConfig::default();
        assert_eq!((c.k, c.n), (20, 2));
        assert_eq!(PipelineConfig::single_image().n, 1);
        assert_eq!(c.threshold, Threshold::natural());
        c.validate().unwrap();
    }

    #[test]
    fn n_above_k_is_config_error() {
        let c = PipelineConfig {
            k: 5,
            n: 6,
            ..Default::default()
        };
        assert!(matches!(c.validate().unwrap_err(), Error::Config(_)));
        assert!(PipelineConfig::from_toml("k = 3\nn = 4\n").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = PipelineConfig::default();
        c.backends.scorer = BackendSpec::Http {
            endpoint: "http://localhost:9000".into(),
        };
        c.threshold = Threshold::manual(0.8).unwrap();
        let text = c.to_toml();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let c = PipelineConfig::from_toml(
            r#"
            n = 1
            [backends.embedder]
            kind = "mock"
            behavior = "hash"
            dim = 32
            [backends.scorer]
            kind = "http"
            endpoint = "http://scorer:8080"
            [backends.generator]
            kind = "mock"
            behavior = "echo"
            "#,
        )
        .unwrap();
        assert_eq!(c.k, 20);
        assert_eq!(c.n, 1);
        assert!(!c.all_mock());
        assert_eq!(c.backends.http.retries, 2);
        assert_eq!(c.backends.http.timeout_secs, 30.0);
    }

    #[test]
    fn mismatched_mock_role_rejected() {
        let cfg = BackendsConfig {
            embedder: BackendSpec::mock(MockBehavior::Echo),
            ..Default::default()
        };
        assert!(Backends::from_config(&cfg, &Corpus::default(), &[]).is_err());
    }

    #[test]
    fn cache_key_normalises() {
        assert_eq!(cache_key("  What  colour? "), cache_key("what colour?"));
    }
}
