use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rulewright_cli::config::{CorpusSource, Loaded, ServiceConfig};
use rulewright_cli::service::router;
use rulewright_core::cnl::{parse_text, CnlGrammar};
use rulewright_core::corpus::{generate_synthetic, save_jsonl, split, GeneratorConfig, SplitSpec};
use rulewright_core::pipeline::{ScorerKind, ScorerSpec};
use rulewright_core::trie::MarkerPolicy;
use serde_json::{json, Value};
use tower::ServiceExt;

fn write_corpus(dir: &Path) -> std::path::PathBuf {
    let g = CnlGrammar::miniloan();
    let corpus = generate_synthetic(&GeneratorConfig::miniloan(4, 150), &g).unwrap();
    let corpus = split(&corpus, &SplitSpec::standard(4)).unwrap();
    let path = dir.join("corpus.jsonl");
    save_jsonl(&corpus, &path).unwrap();
    path
}

fn config_with_corpus(dir: &Path) -> ServiceConfig {
    ServiceConfig {
        corpus: vec![CorpusSource {
            path: write_corpus(dir),
            ..CorpusSource::default()
        }],
        scorer: ScorerSpec::of(ScorerKind::Mixture),
        marker_policy: MarkerPolicy::None,
        ..ServiceConfig::default()
    }
}

fn app(config: ServiceConfig) -> Router {
    router(Arc::new(Loaded::build(config).unwrap()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map_or(Body::empty(), |b| Body::from(b.to_string()))).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Value) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, Some(&body.to_string())).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

const RULE: &str = "if customer age is greater than 18 and loan amount is at most 250000.50 then set the rate to 4.50";

#[tokio::test]
async fn translate_returns_ranked_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(config_with_corpus(dir.path()));
    let g = CnlGrammar::miniloan();
    for constrained in [true, false] {
        let (status, body) = call_json(
            &app,
            "POST",
            "/api/translate",
            json!({ "nl": "approve when the customer age is over 30", "beam_width": 4, "constrained": constrained, "max_candidates": 3 }),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_eq!(body["scorer"], "mixture");
        assert_eq!(body["constrained"], constrained);
        let candidates = body["candidates"].as_array().unwrap();
        assert!(!candidates.is_empty() && candidates.len() <= 3);
        let scores: Vec<f64> = candidates.iter().map(|c| c["score"].as_f64().unwrap()).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]), "{scores:?}");
        for c in candidates {
            let parses = parse_text(c["cnl"].as_str().unwrap(), &g).is_ok();
            assert_eq!(c["valid"], parses);
            assert_eq!(c["parse_error"].is_null(), parses);
            if constrained {
                assert!(parses, "{c}");
            }
        }
    }
}

#[tokio::test]
async fn translate_rejects_bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(config_with_corpus(dir.path()));
    for (body, want) in [
        (json!({ "nl": "   " }), StatusCode::BAD_REQUEST),
        (json!({ "nl": "approve", "scorer": "ngram" }), StatusCode::BAD_REQUEST),
        (json!({ "nl": "approve", "beam_width": 0 }), StatusCode::BAD_REQUEST),
        (json!({ "nl": "approve", "max_candidates": 0 }), StatusCode::BAD_REQUEST),
        (json!({ "nl": 5 }), StatusCode::UNPROCESSABLE_ENTITY),
        (json!({ "text": "approve" }), StatusCode::UNPROCESSABLE_ENTITY),
    ] {
        let (status, out) = call_json(&app, "POST", "/api/translate", body.clone()).await;
        assert_eq!(status, want, "{body}");
        assert!(out["error"].is_string());
    }
    let (status, _) = call(&app, "POST", "/api/translate", Some("{not json")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, body) = call_json(&app, "POST", "/api/translate", json!({ "nl": "approve", "scorer": "mixture" })).await;
    assert_eq!(status, StatusCode::OK, "{body}");
}

#[tokio::test]
async fn corpus_endpoints_need_a_corpus() {
    let app = app(ServiceConfig::default());
    let (status, _) = call_json(&app, "POST", "/api/translate", json!({ "nl": "approve the loan" })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, "GET", "/api/corpus/stats", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    // grammar-only endpoints still work
    let (status, body) = call_json(&app, "POST", "/api/validate", json!({ "cnl": RULE })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["valid"], true);
}

#[tokio::test]
async fn corpus_stats_report_splits() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(config_with_corpus(dir.path()));
    let (status, bytes) = call(&app, "GET", "/api/corpus/stats", None).await;
    assert_eq!(status, StatusCode::OK);
    let body: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(body["pairs"], 150);
    assert_eq!(body["splits"], json!({ "train": 105, "test": 36, "validation": 9, "unassigned": 0 }));
    assert_eq!(body["grammar_bound"], true);
    assert_eq!(body["trie_scope"], "train-only");
    // splits are stored per pair; the seed is not
    assert!(body["seed"].is_null());
}

#[tokio::test]
async fn validate_reports_summary_or_error() {
    let app = app(ServiceConfig::default());
    let (status, body) = call_json(&app, "POST", "/api/validate", json!({ "cnl": RULE })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["summary"]["clauses"], 2);
    assert_eq!(body["summary"]["actions"], json!(["set the rate to <NUM>"]));
    assert!(body["error"].is_null());

    let (status, body) =
        call_json(&app, "POST", "/api/validate", json!({ "cnl": "if customer age is greater than then approve the loan" }))
            .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["valid"], false);
    assert_eq!(body["error"]["position"], 6);
    assert_eq!(body["error"]["found"], "then");
    assert!(body["error"]["expected"].as_array().unwrap().contains(&json!("<NUM>")));
    assert!(body["error"]["message"].is_string());

    let (status, body) = call_json(&app, "POST", "/api/validate", json!({ "cnl": "if customer \"open" })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["valid"], false);
    assert_eq!(body["error"]["offset"], 12);

    let (status, _) = call_json(&app, "POST", "/api/validate", json!({ "cnl": " \t" })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn transpile_then_execute() {
    let app = app(ServiceConfig::default());
    let (status, bytes) = call(&app, "POST", "/api/transpile", Some(&json!({ "cnl": RULE, "name": "r1" }).to_string())).await;
    assert_eq!(status, StatusCode::OK);
    let text = String::from_utf8(bytes).unwrap();
    // decimals keep their written form
    assert!(text.contains("250000.50") && text.contains("4.50"), "{text}");
    let program: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(program["name"], "r1");

    let body = format!(r#"{{"program": {text}, "record": {{"customer.age": 40, "loan.amount": 1000}}}}"#);
    let (status, bytes) = call(&app, "POST", "/api/execute", Some(&body)).await;
    assert_eq!(status, StatusCode::OK);
    let trace: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(trace["fired"], true);
    assert_eq!(trace["predicates"].as_array().unwrap().len(), 2);
    assert!(trace["error"].is_null());
    assert_eq!(serde_json::to_string(&trace["updates"]).unwrap(), r#"{"loan.rate":4.50}"#);

    let body = format!(r#"{{"program": {text}, "record": {{"customer.age": "old"}}}}"#);
    let (status, bytes) = call(&app, "POST", "/api/execute", Some(&body)).await;
    assert_eq!(status, StatusCode::OK);
    let trace: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(trace["fired"], false);
    assert_eq!(trace["error"]["kind"], "type_mismatch");
    assert_eq!(trace["error"]["key"], "customer.age");
    assert_eq!(trace["error"]["found"], "string");

    let (status, _) = call_json(&app, "POST", "/api/execute", json!({ "program": { "name": "x" }, "record": {} })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call_json(&app, "POST", "/api/execute", json!({ "program": program, "record": { "a": [1] } })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn transpile_parse_failure_is_unprocessable() {
    let app = app(ServiceConfig::default());
    let (status, body) = call_json(&app, "POST", "/api/transpile", json!({ "cnl": "if customer age then" })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["position"], 3);
    assert_eq!(body["found"], "then");
    assert!(!body["expected"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn concurrent_requests_get_identical_answers() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(config_with_corpus(dir.path()));
    let request = json!({ "nl": "reject the loan when the amount is above 5000", "beam_width": 3 });
    let (_, first) = call(&app, "POST", "/api/translate", Some(&request.to_string())).await;
    let mut handles = Vec::new();
    for i in 0..16 {
        let app = app.clone();
        let request = request.to_string();
        handles.push(tokio::spawn(async move {
            // interleave unrelated requests to catch shared state
            if i % 2 == 0 {
                call(&app, "POST", "/api/validate", Some(&json!({ "cnl": RULE }).to_string())).await;
            }
            call(&app, "POST", "/api/translate", Some(&request)).await
        }));
    }
    for h in handles {
        let (status, bytes) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        assert_eq!(bytes, first);
    }
}

#[tokio::test]
async fn static_assets_are_served() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>ui</html>").unwrap();
    std::fs::write(dir.path().join("app.js"), "console.log(1)").unwrap();
    let app = app(ServiceConfig {
        static_dir: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    });
    let (status, body) = call(&app, "GET", "/", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<html>ui</html>");
    let (status, body) = call(&app, "GET", "/app.js", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"console.log(1)");
    let (status, _) = call(&app, "GET", "/missing.css", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = call(&app, "GET", "/api/nothing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(serde_json::from_slice::<Value>(&body).unwrap()["error"].is_string());
}

#[tokio::test]
async fn unreachable_scorer_is_service_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let scorer: ScorerSpec = serde_json::from_value(json!({
        "kind": "remote",
        "endpoint": { "base_url": format!("http://127.0.0.1:{port}"), "max_retries": 0, "timeout_secs": 2.0, "token_env": null }
    }))
    .unwrap();
    let app = app(ServiceConfig {
        scorer,
        ..config_with_corpus(dir.path())
    });
    let (status, body) = call_json(&app, "POST", "/api/translate", json!({ "nl": "approve the loan" })).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE, "{body}");
    assert!(body["error"].as_str().unwrap().contains("unavailable"));
}
