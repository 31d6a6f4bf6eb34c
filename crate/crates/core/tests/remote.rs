mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use common::{dead_url, MockServer};
use screen_affect::predict::{dispatch, HttpLlmClient, LlmClient, LlmError, LlmRequest};
use screen_affect::retry::RetryPolicy;
use screen_affect::sentiment::{
    classify, classify_all, RemoteBackend, SentimentBackend, SentimentError, SentimentTriple,
};

const FAST: RetryPolicy = RetryPolicy::new(3, Duration::from_millis(1));

fn triple_json(p: f64, q: f64, r: f64) -> String {
    format!(r#"{{"positive": {p}, "neutral": {q}, "negative": {r}}}"#)
}

fn backend(url: &str) -> RemoteBackend {
    RemoteBackend::new(url).with_retry(FAST)
}

#[test]
fn classify_posts_raw_text() {
    let server = MockServer::start(|_, path, _| {
        assert_eq!(path, "/classify");
        (200, triple_json(0.7, 0.2, 0.1))
    });
    let t = classify("I LOVE this!", &backend(&server.url)).unwrap();
    assert!((t.p_pos - 0.7).abs() < 1e-12 && (t.p_neg - 0.1).abs() < 1e-12);
    let body: serde_json::Value = serde_json::from_str(&server.bodies.lock().unwrap()[0]).unwrap();
    assert_eq!(body, serde_json::json!({"text": "I LOVE this!"}));
}

#[test]
fn blank_text_skips_the_service() {
    let server = MockServer::start(|_, _, _| (200, triple_json(1.0, 0.0, 0.0)));
    assert_eq!(
        classify("   ", &backend(&server.url)).unwrap(),
        SentimentTriple::NEUTRAL
    );
    assert_eq!(server.hits(), 0);
}

#[test]
fn server_errors_are_retried() {
    let server = MockServer::start(|n, _, _| {
        if n < 2 {
            (503, "{}".into())
        } else {
            (200, triple_json(0.0, 0.0, 1.0))
        }
    });
    let t = classify("meh", &backend(&server.url)).unwrap();
    assert_eq!(t.p_neg, 1.0);
    assert_eq!(server.hits(), 3);
}

#[test]
fn persistent_failure_is_unavailable() {
    let server = MockServer::start(|_, _, _| (503, "{}".into()));
    match classify("text", &backend(&server.url)) {
        Err(SentimentError::BackendUnavailable { attempts, .. }) => assert_eq!(attempts, 4),
        other => panic!("{other:?}"),
    }
    assert_eq!(server.hits(), 4);

    assert!(matches!(
        classify("text", &backend(&dead_url())),
        Err(SentimentError::BackendUnavailable { attempts: 4, .. })
    ));
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(|_, _, _| (413, "{}".into()));
    assert!(matches!(
        classify("text", &backend(&server.url)),
        Err(SentimentError::Rejected { status: 413 })
    ));
    assert_eq!(server.hits(), 1);
}

#[test]
fn bad_wire_triples_are_rejected() {
    for body in [
        triple_json(0.5, 0.5, 0.5),
        triple_json(1.2, -0.1, -0.1),
        r#"{"positive": 1.0}"#.to_string(),
        "not json".to_string(),
    ] {
        let server = MockServer::start(move |_, _, _| (200, body.clone()));
        assert!(matches!(
            classify("text", &backend(&server.url)),
            Err(SentimentError::MalformedResponse(_))
        ));
    }
}

#[test]
fn wire_tolerance_then_renormalised() {
    let server = MockServer::start(|_, _, _| (200, triple_json(0.6000004, 0.3, 0.1)));
    let t = classify("text", &backend(&server.url)).unwrap();
    assert!((t.p_pos + t.p_neu + t.p_neg - 1.0).abs() < 1e-12);
}

#[test]
fn long_text_is_chunked_and_averaged() {
    // Chunks starting with "a" are positive, others negative.
    let server = MockServer::start(|_, _, body| {
        let v: serde_json::Value = serde_json::from_str(body).unwrap();
        let text = v["text"].as_str().unwrap();
        assert!(text.chars().count() <= 100);
        if text.starts_with('a') {
            (200, triple_json(1.0, 0.0, 0.0))
        } else {
            (200, triple_json(0.0, 0.0, 1.0))
        }
    });
    let words: Vec<String> = std::iter::repeat_n("aaaa".to_string(), 20)
        .chain(std::iter::repeat_n("bbbb".to_string(), 40))
        .collect();
    let text = words.join(" ");
    let b = backend(&server.url).with_max_chars(100);
    let t = classify(&text, &b).unwrap();
    assert_eq!(server.hits(), 3);
    assert!((t.p_pos - 1.0 / 3.0).abs() < 1e-12);
    assert!((t.p_neg - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn in_flight_requests_are_capped() {
    let active = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (a, p) = (active.clone(), peak.clone());
    let server = MockServer::start(move |_, _, _| {
        let now = a.fetch_add(1, Ordering::SeqCst) + 1;
        p.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(20));
        a.fetch_sub(1, Ordering::SeqCst);
        (200, triple_json(0.2, 0.6, 0.2))
    });
    let b = backend(&server.url).with_max_in_flight(2);
    assert_eq!(b.max_in_flight(), 2);
    let texts: Vec<String> = (0..12).map(|i| format!("text {i}")).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let results = classify_all(&refs, &b);
    assert!(results.iter().all(Result::is_ok));
    assert!(peak.load(Ordering::SeqCst) <= 2);
    assert_eq!(server.hits(), 12);
}

#[test]
fn llm_wire_format() {
    let server = MockServer::start(|_, _, body| {
        let v: serde_json::Value = serde_json::from_str(body).unwrap();
        assert_eq!(v["model"], "m1");
        assert_eq!(v["temperature"], 0.0);
        assert!(v["prompt"].as_str().unwrap().starts_with("Hello"));
        (200, r#"{"text": "Active: [3]"}"#.into())
    });
    let client = HttpLlmClient::new(format!("{}/v1/complete", server.url));
    let text = client
        .complete(&LlmRequest::new("Hello there", "m1"))
        .unwrap();
    assert_eq!(text, "Active: [3]");
}

#[test]
fn llm_dispatch_retries_then_fails() {
    let server = MockServer::start(|n, _, _| {
        if n < 2 {
            (500, "{}".into())
        } else {
            (200, r#"{"text": "ok"}"#.into())
        }
    });
    let client = HttpLlmClient::new(server.url.clone());
    let req = LlmRequest::new("p", "m");
    assert_eq!(dispatch(&req, &client, &FAST).unwrap(), "ok");
    assert_eq!(server.hits(), 3);

    let down = HttpLlmClient::new(dead_url());
    match dispatch(&req, &down, &FAST) {
        Err(LlmError::Transport { attempts, .. }) => assert_eq!(attempts, 4),
        other => panic!("{other:?}"),
    }
}
