//! HTTP API over the translation pipeline, plus static UI assets.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rulewright_core::cnl::{parse_text, serialize, CnlError, CnlGrammar};
use rulewright_core::decoder::{DecodeError, Hypothesis, ScoreError};
use rulewright_core::rules::{execute, transpile, ExecuteError, ExecutionTrace, Record, RuleProgram};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::config::Loaded;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: serde_json::Value,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(r.status(), r.body_text())
    }
}

/// `Json` whose rejections carry a JSON error body.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let Json(value) = Json::<T>::from_request(req, state).await?;
        Ok(ApiJson(value))
    }
}

/// Parse failure as reported to clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub message: String,
    /// Token index of the failure; absent for tokenization errors.
    pub position: Option<usize>,
    /// Character offset, for tokenization errors.
    pub offset: Option<usize>,
    pub expected: Vec<String>,
    pub found: Option<String>,
}

impl From<&CnlError> for ErrorPayload {
    fn from(e: &CnlError) -> Self {
        match e {
            CnlError::Parse(p) => ErrorPayload {
                message: e.to_string(),
                position: Some(p.position),
                offset: None,
                expected: p.expected.iter().cloned().collect(),
                found: p.found.clone(),
            },
            CnlError::Tokenize(t) => ErrorPayload {
                message: e.to_string(),
                position: None,
                offset: Some(match t {
                    rulewright_core::cnl::TokenizeError::UnterminatedQuote { offset } => *offset,
                }),
                expected: Vec::new(),
                found: None,
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslateRequest {
    pub nl: String,
    pub beam_width: Option<usize>,
    pub constrained: Option<bool>,
    pub max_candidates: Option<usize>,
    /// Must name the configured scorer when given.
    pub scorer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub cnl: String,
    pub score: f64,
    pub valid: bool,
    pub finished: bool,
    pub parse_error: Option<ErrorPayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateResponse {
    pub scorer: String,
    pub constrained: bool,
    pub candidates: Vec<Candidate>,
    pub constraint_exhausted: bool,
}

fn candidate(h: &Hypothesis, grammar: &CnlGrammar) -> Candidate {
    let parsed = parse_text(&h.text, grammar);
    Candidate {
        cnl: h.text.clone(),
        score: h.score,
        valid: parsed.is_ok(),
        finished: h.finished,
        parse_error: parsed.err().as_ref().map(ErrorPayload::from),
    }
}

/// Shared by the HTTP handler and the `translate` command.
pub fn translate_nl(loaded: &Loaded, req: &TranslateRequest) -> Result<TranslateResponse, ApiError> {
    if req.nl.trim().is_empty() {
        return Err(ApiError::bad_request("nl must not be empty"));
    }
    let pipeline = loaded
        .pipeline
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no corpus is configured"))?;
    let label = pipeline.config.scorer.label();
    if let Some(s) = &req.scorer {
        if s != label {
            return Err(ApiError::bad_request(format!("scorer {s:?} is not available; configured scorer is {label:?}")));
        }
    }
    let mut beam = pipeline.config.beam.clone();
    if let Some(w) = req.beam_width {
        beam.beam_width = w;
    }
    if let Some(c) = req.constrained {
        beam.constrained = c;
    }
    if beam.beam_width == 0 {
        return Err(ApiError::bad_request("beam_width must be at least 1"));
    }
    let max = req.max_candidates.unwrap_or(loaded.config.max_candidates);
    if max == 0 {
        return Err(ApiError::bad_request("max_candidates must be at least 1"));
    }
    let result = pipeline.decode(&req.nl, &beam).map_err(|e| match e {
        DecodeError::Score(ScoreError::EndpointUnavailable(m)) => {
            ApiError::new(StatusCode::SERVICE_UNAVAILABLE, format!("scoring endpoint unavailable: {m}"))
        }
        e @ DecodeError::Score(_) => ApiError::new(StatusCode::BAD_GATEWAY, e.to_string()),
        e => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    })?;
    let pool = if result.hypotheses.is_empty() {
        &result.partials
    } else {
        &result.hypotheses
    };
    let mut candidates: Vec<Candidate> = pool.iter().map(|h| candidate(h, &loaded.grammar)).collect();
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
    candidates.truncate(max);
    Ok(TranslateResponse {
        scorer: label.to_string(),
        constrained: beam.constrained,
        candidates,
        constraint_exhausted: result.constraint_exhausted,
    })
}

async fn translate(
    State(state): State<Arc<Loaded>>,
    ApiJson(req): ApiJson<TranslateRequest>,
) -> Result<Json<TranslateResponse>, ApiError> {
    let out = tokio::task::spawn_blocking(move || translate_nl(&state, &req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateRequest {
    pub cnl: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AstSummary {
    pub clauses: usize,
    pub actions: Vec<String>,
    /// Canonical text of the parsed rule.
    pub normalized: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateResponse {
    pub valid: bool,
    pub summary: Option<AstSummary>,
    pub error: Option<ErrorPayload>,
}

async fn validate(
    State(state): State<Arc<Loaded>>,
    ApiJson(req): ApiJson<ValidateRequest>,
) -> Result<Json<ValidateResponse>, ApiError> {
    if req.cnl.trim().is_empty() {
        return Err(ApiError::bad_request("cnl must not be empty"));
    }
    Ok(Json(match parse_text(&req.cnl, &state.grammar) {
        Ok(ast) => ValidateResponse {
            valid: true,
            summary: Some(AstSummary {
                clauses: ast.condition.clauses().len(),
                actions: ast.actions.iter().map(|a| a.template.clone()).collect(),
                normalized: serialize(&ast),
            }),
            error: None,
        },
        Err(e) => ValidateResponse {
            valid: false,
            summary: None,
            error: Some(ErrorPayload::from(&e)),
        },
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranspileRequest {
    pub cnl: String,
    pub name: Option<String>,
}

async fn transpile_rule(
    State(state): State<Arc<Loaded>>,
    ApiJson(req): ApiJson<TranspileRequest>,
) -> Result<Response, ApiError> {
    let ast = parse_text(&req.cnl, &state.grammar).map_err(|e| ApiError {
        status: StatusCode::UNPROCESSABLE_ENTITY,
        body: serde_json::to_value(ErrorPayload::from(&e)).expect("payload serializes"),
    })?;
    let name = req.name.as_deref().unwrap_or("rule");
    let program = transpile(&ast, &state.grammar, name)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    // the program's own JSON form keeps decimal literals as written
    Ok(([("content-type", "application/json")], program.to_json()).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecuteRequest {
    pub program: RuleProgram,
    pub record: Record,
}

#[derive(Debug, Serialize)]
pub struct ExecuteResponse {
    #[serde(flatten)]
    pub trace: ExecutionTrace,
    pub error: Option<ExecuteErrorPayload>,
}

#[derive(Debug, Serialize)]
pub struct ExecuteErrorPayload {
    pub kind: &'static str,
    pub message: String,
    pub key: String,
    pub op: &'static str,
    pub value: String,
    pub found: &'static str,
}

impl From<ExecuteError> for ExecuteErrorPayload {
    fn from(e: ExecuteError) -> Self {
        let message = e.to_string();
        match e {
            ExecuteError::TypeMismatch { key, op, value, found } => ExecuteErrorPayload {
                kind: "type_mismatch",
                message,
                key,
                op,
                value,
                found,
            },
        }
    }
}

async fn execute_rule(ApiJson(req): ApiJson<ExecuteRequest>) -> Json<ExecuteResponse> {
    Json(match execute(&req.program, &req.record) {
        Ok(trace) => ExecuteResponse { trace, error: None },
        Err(e) => ExecuteResponse {
            trace: ExecutionTrace::default(),
            error: Some(e.into()),
        },
    })
}

async fn corpus_stats(State(state): State<Arc<Loaded>>) -> Result<Json<serde_json::Value>, ApiError> {
    let (Some(corpus), Some(pipeline)) = (&state.corpus, &state.pipeline) else {
        return Err(ApiError::new(StatusCode::CONFLICT, "no corpus is configured"));
    };
    Ok(Json(json!({
        "pairs": corpus.len(),
        "splits": corpus.counts(),
        "grammar_bound": corpus.grammar_bound,
        "trie_scope": pipeline.config.beam.trie_scope,
        "trie_statements": pipeline.trie.len(),
        "scorer": pipeline.config.scorer.label(),
        "provenance": corpus.provenance,
        "seed": corpus.seed,
    })))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not found")
}

pub fn router(state: Arc<Loaded>) -> Router {
    let api = Router::new()
        .route("/translate", post(translate))
        .route("/validate", post(validate))
        .route("/transpile", post(transpile_rule))
        .route("/execute", post(execute_rule))
        .route("/corpus/stats", get(corpus_stats))
        .fallback(not_found);
    let app = Router::new().nest("/api", api);
    let app = match &state.config.static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => app.fallback(not_found),
    };
    app.with_state(state)
}

pub async fn serve(state: Arc<Loaded>, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    tracing::info!(address = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
