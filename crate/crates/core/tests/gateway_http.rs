//! Gateway against a local fake provider.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use energy_arena::gateway::{CompletionRequest, Gateway, GatewayError, Provider, ProviderConfig, ProviderKind};
use energy_arena::session::GenerationParams;

#[derive(Default)]
struct Fake {
    hits: AtomicUsize,
    /// Status for each attempt in turn; 200 once the list runs out.
    script: Vec<u16>,
    delay: Duration,
    seen: Mutex<Vec<(HeaderMap, Value)>>,
    body: Value,
}

async fn handle(
    State(fake): State<Arc<Fake>>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> (StatusCode, Json<Value>) {
    let n = fake.hits.fetch_add(1, Ordering::SeqCst);
    fake.seen.lock().unwrap().push((headers, body));
    tokio::time::sleep(fake.delay).await;
    match fake.script.get(n) {
        Some(&code) if code != 200 => (
            StatusCode::from_u16(code).unwrap(),
            Json(json!({ "error": { "message": format!("scripted {code}") } })),
        ),
        _ => (StatusCode::OK, Json(fake.body.clone())),
    }
}

fn openai_ok(text: &str) -> Value {
    json!({
        "choices": [{ "message": { "role": "assistant", "content": text }, "finish_reason": "stop" }],
        "usage": { "prompt_tokens": 5, "completion_tokens": 7 }
    })
}

async fn serve(fake: Fake) -> (String, Arc<Fake>) {
    let fake = Arc::new(fake);
    let app = Router::new()
        .route("/v1/chat/completions", post(handle))
        .route("/v1/messages", post(handle))
        .with_state(Arc::clone(&fake));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1"), fake)
}

fn config(base_url: &str, kind: ProviderKind, key_env: &str) -> ProviderConfig {
    ProviderConfig {
        provider_id: "fake".into(),
        kind: Some(kind),
        base_url: Some(base_url.into()),
        api_key_env: Some(key_env.into()),
        timeout_ms: 2_000,
        max_retries: 2,
        backoff_ms: 10,
        mock: None,
    }
}

fn request() -> CompletionRequest {
    let mut p = GenerationParams::new();
    p.insert("temperature".into(), json!(0.3));
    CompletionRequest {
        model_id: "fake-model".into(),
        question: "¿Cuánta energía consume una respuesta?".into(),
        generation_params: p,
    }
}

#[tokio::test]
async fn transient_errors_are_retried() {
    std::env::set_var("ARENA_TEST_KEY_RETRY", "sk-retry");
    let (url, fake) = serve(Fake {
        script: vec![500, 503],
        body: openai_ok("hola"),
        ..Default::default()
    })
    .await;
    let p = Provider::new(config(&url, ProviderKind::OpenAi, "ARENA_TEST_KEY_RETRY")).unwrap();
    let r = p.complete(&request()).await.unwrap();
    assert_eq!(r.text, "hola");
    assert_eq!(r.retries, 2);
    assert_eq!(r.finish_reason, "stop");
    assert_eq!(r.model_id, "fake-model");
    assert_eq!(r.token_counts.map(|t| (t.prompt, t.completion)), Some((5, 7)));
    assert_eq!(fake.hits.load(Ordering::SeqCst), 3);

    let seen = fake.seen.lock().unwrap();
    let (headers, body) = &seen[0];
    assert_eq!(headers["authorization"], "Bearer sk-retry");
    assert_eq!(body["model"], "fake-model");
    assert_eq!(body["temperature"], json!(0.3));
    assert_eq!(body["messages"][0]["content"], "¿Cuánta energía consume una respuesta?");
}

#[tokio::test]
async fn retries_are_bounded() {
    std::env::set_var("ARENA_TEST_KEY_BOUND", "k");
    let (url, fake) = serve(Fake {
        script: vec![429, 502, 500, 500, 500],
        body: openai_ok("late"),
        ..Default::default()
    })
    .await;
    let p = Provider::new(config(&url, ProviderKind::OpenAi, "ARENA_TEST_KEY_BOUND")).unwrap();
    match p.complete(&request()).await {
        Err(GatewayError::Provider { status, retries, .. }) => {
            assert_eq!(status, Some(500));
            assert_eq!(retries, 2);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(fake.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn auth_and_client_errors_are_not_retried() {
    std::env::set_var("ARENA_TEST_KEY_AUTH", "bad");
    let (url, fake) = serve(Fake {
        script: vec![401],
        body: openai_ok("never"),
        ..Default::default()
    })
    .await;
    let p = Provider::new(config(&url, ProviderKind::OpenAi, "ARENA_TEST_KEY_AUTH")).unwrap();
    assert!(matches!(p.complete(&request()).await, Err(GatewayError::Auth { .. })));
    assert_eq!(fake.hits.load(Ordering::SeqCst), 1);

    let (url, fake) = serve(Fake {
        script: vec![400],
        body: openai_ok("never"),
        ..Default::default()
    })
    .await;
    let p = Provider::new(config(&url, ProviderKind::OpenAi, "ARENA_TEST_KEY_AUTH")).unwrap();
    match p.complete(&request()).await {
        Err(GatewayError::Provider { status, retries, .. }) => assert_eq!((status, retries), (Some(400), 0)),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(fake.hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn missing_key_makes_no_request() {
    let (url, fake) = serve(Fake {
        body: openai_ok("x"),
        ..Default::default()
    })
    .await;
    let p = Provider::new(config(&url, ProviderKind::OpenAi, "ARENA_TEST_KEY_NEVER_SET")).unwrap();
    assert!(matches!(p.complete(&request()).await, Err(GatewayError::Auth { .. })));
    assert_eq!(fake.hits.load(Ordering::SeqCst), 0);
}

#[tokio::test]
async fn slow_provider_times_out() {
    std::env::set_var("ARENA_TEST_KEY_SLOW", "k");
    let (url, fake) = serve(Fake {
        delay: Duration::from_millis(400),
        body: openai_ok("slow"),
        ..Default::default()
    })
    .await;
    let mut cfg = config(&url, ProviderKind::OpenAi, "ARENA_TEST_KEY_SLOW");
    cfg.timeout_ms = 80;
    cfg.max_retries = 1;
    let p = Provider::new(cfg).unwrap();
    let started = std::time::Instant::now();
    match p.complete(&request()).await {
        Err(GatewayError::Timeout { retries, .. }) => assert_eq!(retries, 1),
        other => panic!("unexpected {other:?}"),
    }
    assert!(started.elapsed() < Duration::from_millis(400));
    assert_eq!(fake.hits.load(Ordering::SeqCst), 2);
}

#[tokio::test]
async fn anthropic_dialect() {
    std::env::set_var("ARENA_TEST_KEY_ANTHROPIC", "ak");
    let (url, fake) = serve(Fake {
        body: json!({
            "content": [{ "type": "text", "text": "Hola, " }, { "type": "text", "text": "mundo" }],
            "stop_reason": "end_turn",
            "usage": { "input_tokens": 3, "output_tokens": 2 }
        }),
        ..Default::default()
    })
    .await;
    let p = Provider::new(config(&url, ProviderKind::Anthropic, "ARENA_TEST_KEY_ANTHROPIC")).unwrap();
    let r = p.complete(&request()).await.unwrap();
    assert_eq!(r.text, "Hola, mundo");
    assert_eq!(r.finish_reason, "end_turn");
    assert_eq!(r.retries, 0);
    let seen = fake.seen.lock().unwrap();
    let (headers, body) = &seen[0];
    assert_eq!(headers["x-api-key"], "ak");
    assert_eq!(headers["anthropic-version"], "2023-06-01");
    assert!(headers.get("authorization").is_none());
    assert_eq!(body["max_tokens"], 1024);
    assert_eq!(body["temperature"], json!(0.3));
}

#[tokio::test]
async fn empty_text_needs_a_refusal_reason() {
    std::env::set_var("ARENA_TEST_KEY_EMPTY", "k");
    let empty = |reason: &str| json!({ "choices": [{ "message": { "role": "assistant", "content": "" }, "finish_reason": reason }] });
    let (url, _) = serve(Fake {
        body: empty("stop"),
        ..Default::default()
    })
    .await;
    let p = Provider::new(config(&url, ProviderKind::OpenAi, "ARENA_TEST_KEY_EMPTY")).unwrap();
    assert!(matches!(
        p.complete(&request()).await,
        Err(GatewayError::Provider { .. })
    ));

    let (url, _) = serve(Fake {
        body: empty("content_filter"),
        ..Default::default()
    })
    .await;
    let p = Provider::new(config(&url, ProviderKind::OpenAi, "ARENA_TEST_KEY_EMPTY")).unwrap();
    let r = p.complete(&request()).await.unwrap();
    assert_eq!((r.text.as_str(), r.finish_reason.as_str()), ("", "content_filter"));
}

#[tokio::test]
async fn gateway_routes_by_provider_id() {
    std::env::set_var("ARENA_TEST_KEY_ROUTE", "k");
    let (url, _) = serve(Fake {
        body: openai_ok("routed"),
        ..Default::default()
    })
    .await;
    let g = Gateway::new([
        config(&url, ProviderKind::OpenAi, "ARENA_TEST_KEY_ROUTE"),
        ProviderConfig::mock("mock"),
    ])
    .unwrap();
    assert_eq!(g.complete("fake", &request()).await.unwrap().text, "routed");
    assert!(g
        .complete("mock", &request())
        .await
        .unwrap()
        .text
        .starts_with("Response "));
    assert!(matches!(
        g.complete("nope", &request()).await,
        Err(GatewayError::UnknownProvider(_))
    ));
}
