use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use mmrag_core::backend::http::{requests_attempted, HttpBackend, HttpOptions};
use mmrag_core::backend::{
    Embedder, GenerateRequest, Generator, RelevanceScorer, ScoreRequest, TeacherForcedRequest,
    TeacherForcedScorer,
};
use mmrag_core::{BackendError, TemplateKind};
use serde_json::{json, Value};

/// One canned reply per incoming request, in order; the last one repeats.
struct Server {
    url: String,
    seen: Arc<Mutex<Vec<(String, Value)>>>,
}

fn serve(replies: Vec<(u16, String)>) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (i, stream) in listener.incoming().enumerate() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line
                .split_whitespace()
                .nth(1)
                .unwrap_or("")
                .to_string();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            log.lock()
                .unwrap()
                .push((path, serde_json::from_slice(&body).unwrap_or(Value::Null)));
            let (status, text) = &replies[i.min(replies.len() - 1)];
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
        }
    });
    Server { url, seen }
}

fn fast() -> HttpOptions {
    HttpOptions {
        timeout_secs: 5.0,
        retries: 2,
        backoff_ms: 1,
    }
}

fn score_request() -> ScoreRequest {
    ScoreRequest {
        question: "Which bird is this?".into(),
        caption: "A heron".into(),
        image_ref: "img/9.jpg".into(),
        template: TemplateKind::CaptionAgnostic,
    }
}

#[test]
fn score_round_trip_uses_wire_schema() {
    let server = serve(vec![(
        200,
        json!({"logit_yes": 2.5, "logit_no": -1.0}).to_string(),
    )]);
    let backend = HttpBackend::new(format!("{}/", server.url), fast());
    let lp = backend.score(&score_request()).unwrap();
    assert_eq!((lp.logit_yes, lp.logit_no), (2.5, -1.0));
    let seen = server.seen.lock().unwrap();
    assert_eq!(seen[0].0, "/score");
    assert_eq!(
        seen[0].1,
        json!({
            "question": "Which bird is this?",
            "caption": "A heron",
            "image_ref": "img/9.jpg",
            "template": "caption_agnostic",
        })
    );
}

#[test]
fn every_role_hits_its_own_path() {
    let server = serve(vec![
        (200, json!({"vector": [0.5, -0.5]}).to_string()),
        (
            200,
            json!({"gold_token_logits": [1.0], "gold_token_log_probs": [-0.2]}).to_string(),
        ),
        (200, json!({"answer": "blue"}).to_string()),
    ]);
    let backend = HttpBackend::new(server.url.clone(), fast());
    assert_eq!(backend.embed_text("q").unwrap(), vec![0.5, -0.5]);
    let tf = backend
        .teacher_forced(&TeacherForcedRequest {
            question: "q".into(),
            image_refs: vec!["a.jpg".into()],
            image_tensors: Vec::new(),
            gold_tokens: vec!["blue".into()],
        })
        .unwrap();
    assert_eq!(tf.gold_token_log_probs, vec![-0.2]);
    let answer = backend
        .generate(&GenerateRequest {
            question: "q".into(),
            image_refs: Vec::new(),
            greedy: true,
        })
        .unwrap();
    assert_eq!(answer, "blue");
    let paths: Vec<String> = server
        .seen
        .lock()
        .unwrap()
        .iter()
        .map(|s| s.0.clone())
        .collect();
    assert_eq!(paths, ["/embed", "/teacher_forced", "/generate"]);
}

#[test]
fn server_errors_are_retried_then_succeed() {
    let server = serve(vec![
        (503, "{}".into()),
        (500, "{}".into()),
        (200, json!({"logit_yes": 0.0, "logit_no": 0.0}).to_string()),
    ]);
    let backend = HttpBackend::new(server.url.clone(), fast());
    assert!(backend.score(&score_request()).is_ok());
    assert_eq!(server.seen.lock().unwrap().len(), 3);
}

#[test]
fn retry_budget_is_bounded() {
    let server = serve(vec![(502, "{}".into())]);
    let backend = HttpBackend::new(server.url.clone(), fast());
    let before = requests_attempted();
    let err = backend.score(&score_request()).unwrap_err();
    assert!(matches!(err, BackendError::Transport { .. }), "{err:?}");
    assert_eq!(server.seen.lock().unwrap().len(), 3);
    assert!(requests_attempted() - before >= 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = serve(vec![(422, r#"{"detail":"bad"}"#.into())]);
    let backend = HttpBackend::new(server.url.clone(), fast());
    let err = backend.score(&score_request()).unwrap_err();
    assert!(
        matches!(err, BackendError::Rejected(ref m) if m.contains("422")),
        "{err:?}"
    );
    assert_eq!(server.seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_or_non_finite_replies_are_protocol_errors() {
    let server = serve(vec![
        (200, r#"{"logit_yes": 1.0}"#.into()),
        (200, r#"{"vector": [1.0, 1e400]}"#.into()),
    ]);
    let backend = HttpBackend::new(server.url.clone(), fast());
    assert!(matches!(
        backend.score(&score_request()).unwrap_err(),
        BackendError::Protocol(_)
    ));
    assert!(matches!(
        backend.embed_text("q").unwrap_err(),
        BackendError::Protocol(_)
    ));
}

#[test]
fn unreachable_server_is_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let backend = HttpBackend::new(
        format!("http://127.0.0.1:{port}"),
        HttpOptions {
            retries: 0,
            ..fast()
        },
    );
    assert!(matches!(
        backend.embed_text("q").unwrap_err(),
        BackendError::Transport { .. }
    ));
}
