//! Retrieve → rerank → generate engine for multimodal retrieval-augmented QA.
//!
//! The crate is organised around the stages of the pipeline:
//!
//! * [`corpus`] holds image records and QA examples and their on-disk formats.
//! * [`index`] answers exact maximum-inner-product queries over embeddings.
//! * [`rerank`] turns first-token `Yes`/`No` logits into relevance
//!   probabilities, reranks the top-K into the top-N and filters by threshold.
//! * [`threshold`] calibrates the adaptive threshold from density curves.
//! * [`noise`] computes the noise-injected training quantities (forward
//!   diffusion distortion, logit contrast, token weights, reweighted loss).
//! * [`dataset`] builds ranking instruction data and noise-injected QA data.
//! * [`eval`] computes Recall@K, P/R/F1, exact match and key-entity accuracy.
//! * [`pipeline`] wires the stages together against pluggable [`backend`]s.
//!
//! All model calls go through the traits in [`backend`]; deterministic mocks
//! live in [`backend::mock`] and an HTTP transport in [`backend::http`].

pub mod backend;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod index;
pub mod noise;
mod par;
pub mod pipeline;
pub mod rerank;
pub mod synthetic;
pub mod tensor;
pub mod threshold;

pub use corpus::{Corpus, ImageRecord, QaExample, Split};
pub use error::{BackendError, Error, Result};
pub use eval::EvalReport;
pub use index::{EmbeddingMatrix, Memory, RetrievalResult};
pub use noise::{NoiseSchedule, TokenWeights};
pub use pipeline::{PipelineConfig, PipelineTrace};
pub use rerank::{LogitPair, RerankedSet, TemplateKind};
pub use tensor::ImageTensor;
pub use threshold::{Threshold, ThresholdSource};
