//! Model backends: the embedder, the relevance scorer, the teacher-forced
//! scorer and the answer generator.
//!
//! Each role is a trait. [`http`] talks to remote model servers over a small
//! JSON protocol; [`mock`] holds deterministic stand-ins for tests and demos.
//!
//! Wire schemas (all `POST`, JSON bodies):
//!
//! | path | request | response |
//! |------|---------|----------|
//! | `/embed` | `{"kind": "text"\|"image", "payload": str}` | `{"vector": [float]}` |
//! | `/score` | `{"question", "caption", "image_ref", "template": str}` | `{"logit_yes": float, "logit_no": float}` |
//! | `/teacher_forced` | `{"question", "image_refs": [..], "image_tensors": [..], "gold_tokens": [..]}` | `{"gold_token_logits": [float], "gold_token_log_probs": [float]}` |
//! | `/generate` | `{"question", "image_refs": [..], "greedy": true}` | `{"answer": str}` |
//!
//! `logit_yes`/`logit_no` are first-token logits for the exact strings `Yes`
//! and `No`; handling tokenizer variants is the server's job. Inline
//! `image_tensors` are base64 tensor encodings (see [`crate::tensor`]) and,
//! when present, take precedence over `image_refs`.

pub mod http;
pub mod mock;

use serde::{Deserialize, Serialize};

use crate::error::BackendError;
use crate::rerank::{LogitPair, TemplateKind};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedKind {
    Text,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub kind: EmbedKind,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f32>,
}

/// Dual encoder: text queries and images map into one inner-product space.
pub trait Embedder: Send + Sync {
    fn embed(&self, req: &EmbedRequest) -> Result<Vec<f32>, BackendError>;

    fn embed_text(&self, text: &str) -> Result<Vec<f32>, BackendError> {
        self.embed(&EmbedRequest {
            kind: EmbedKind::Text,
            payload: text.to_string(),
        })
    }

    fn embed_image(&self, image_ref: &str) -> Result<Vec<f32>, BackendError> {
        self.embed(&EmbedRequest {
            kind: EmbedKind::Image,
            payload: image_ref.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub question: String,
    pub caption: String,
    pub image_ref: String,
    pub template: TemplateKind,
}

/// Pointwise relevance model returning first-token Yes/No logits.
pub trait RelevanceScorer: Send + Sync {
    fn score(&self, req: &ScoreRequest) -> Result<LogitPair, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherForcedRequest {
    pub question: String,
    pub image_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub image_tensors: Vec<ImageTensor>,
    pub gold_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherForcedResponse {
    pub gold_token_logits: Vec<f64>,
    pub gold_token_log_probs: Vec<f64>,
}

/// Scores a gold answer token by token with the gold prefix fed back in.
pub trait TeacherForcedScorer: Send + Sync {
    fn teacher_forced(
        &self,
        req: &TeacherForcedRequest,
    ) -> Result<TeacherForcedResponse, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub question: String,
    /// Images in reranked order; may be empty.
    pub image_refs: Vec<String>,
    /// Greedy decoding, for reproducible answers.
    pub greedy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub answer: String,
}

pub trait Generator: Send + Sync {
    fn generate(&self, req: &GenerateRequest) -> Result<String, BackendError>;
}

/// Multimodal QA prompt: one image placeholder per image, then the question.
pub fn render_generation_prompt(req: &GenerateRequest) -> String {
    let mut out = String::new();
    for _ in &req.image_refs {
        out.push_str(crate::rerank::IMAGE_PLACEHOLDER);
        out.push(' ');
    }
    out.push_str(&req.question);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_prompt_layout() {
        let req = GenerateRequest {
            question: "How many?".into(),
            image_refs: vec!["a".into(), "b".into()],
            greedy: true,
        };
        assert_eq!(render_generation_prompt(&req), "<image> <image> How many?");
        let bare = GenerateRequest {
            image_refs: vec![],
            ..req
        };
        assert_eq!(render_generation_prompt(&bare), "How many?");
    }

    #[test]
    fn wire_field_names() {
        let req = ScoreRequest {
            question: "q".into(),
            caption: "c".into(),
            image_ref: "i".into(),
            template: TemplateKind::CaptionAgnostic,
        };
        let v = serde_json::to_value(&req).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"question":"q","caption":"c","image_ref":"i","template":"caption_agnostic"})
        );
        let embed = serde_json::to_value(EmbedRequest {
            kind: EmbedKind::Image,
            payload: "x".into(),
        })
        .unwrap();
        assert_eq!(embed, serde_json::json!({"kind":"image","payload":"x"}));
    }
}
