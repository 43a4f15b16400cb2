//! JSON-over-HTTP transport for remote model servers.

use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    EmbedRequest, EmbedResponse, Embedder, GenerateRequest, GenerateResponse, Generator,
    RelevanceScorer, ScoreRequest, TeacherForcedRequest, TeacherForcedResponse,
    TeacherForcedScorer,
};
use crate::error::BackendError;
use crate::rerank::LogitPair;

static REQUESTS_ATTEMPTED: AtomicU64 = AtomicU64::new(0);

/// Number of HTTP requests attempted by this process, retries included.
pub fn requests_attempted() -> u64 {
    REQUESTS_ATTEMPTED.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpOptions {
    pub timeout_secs: f64,
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for HttpOptions {
    fn default() -> Self {
        Self {
            timeout_secs: 30.0,
            retries: 2,
            backoff_ms: 200,
        }
    }
}

/// One model server. Implements every backend role; each role uses its own path.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    base_url: String,
    agent: ureq::Agent,
    options: HttpOptions,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, options: HttpOptions) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(options.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
            options,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, BackendError> {
        let url = format!("{}{}", self.base_url, path);
        let mut attempt = 0;
        loop {
            match self.post_once(&url, body) {
                Ok(resp) => return Ok(resp),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retryable(e)) => {
                    if attempt >= self.options.retries {
                        return Err(e);
                    }
                    let wait = self.options.backoff_ms.saturating_mul(1 << attempt);
                    log::debug!("retrying {url} in {wait} ms after: {e}");
                    thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
            }
        }
    }

    fn post_once<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        url: &str,
        body: &Req,
    ) -> Result<Resp, Attempt> {
        REQUESTS_ATTEMPTED.fetch_add(1, Ordering::SeqCst);
        let transport = |e: ureq::Error| {
            Attempt::Retryable(BackendError::Transport {
                endpoint: url.to_string(),
                message: e.to_string(),
            })
        };
        let mut resp = self.agent.post(url).send_json(body).map_err(transport)?;
        let status = resp.status().as_u16();
        if status >= 500 {
            return Err(Attempt::Retryable(BackendError::Transport {
                endpoint: url.to_string(),
                message: format!("http status {status}"),
            }));
        }
        if status >= 400 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Attempt::Fatal(BackendError::Rejected(format!(
                "{url} answered {status}: {text}"
            ))));
        }
        resp.body_mut()
            .read_json::<Resp>()
            .map_err(|e| Attempt::Fatal(BackendError::Protocol(format!("{url}: {e}"))))
    }
}

enum Attempt {
    Retryable(BackendError),
    Fatal(BackendError),
}

fn check_finite(what: &str, xs: impl IntoIterator<Item = f64>) -> Result<(), BackendError> {
    if xs.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(BackendError::Protocol(format!(
            "non-finite value in {what}"
        )))
    }
}

impl Embedder for HttpBackend {
    fn embed(&self, req: &EmbedRequest) -> Result<Vec<f32>, BackendError> {
        let resp: EmbedResponse = self.post("/embed", req)?;
        check_finite("embedding", resp.vector.iter().map(|&x| f64::from(x)))?;
        Ok(resp.vector)
    }
}

impl RelevanceScorer for HttpBackend {
    fn score(&self, req: &ScoreRequest) -> Result<LogitPair, BackendError> {
        let resp: LogitPair = self.post("/score", req)?;
        check_finite("relevance logits", [resp.logit_yes, resp.logit_no])?;
        Ok(resp)
    }
}

impl TeacherForcedScorer for HttpBackend {
    fn teacher_forced(
        &self,
        req: &TeacherForcedRequest,
    ) -> Result<TeacherForcedResponse, BackendError> {
        let resp: TeacherForcedResponse = self.post("/teacher_forced", req)?;
        check_finite("gold-token logits", resp.gold_token_logits.iter().copied())?;
        Ok(resp)
    }
}

impl Generator for HttpBackend {
    fn generate(&self, req: &GenerateRequest) -> Result<String, BackendError> {
        let resp: GenerateResponse = self.post("/generate", req)?;
        Ok(resp.answer)
    }
}
