//! Suggestion service: a typed prefix goes in, ranked SQL queries with their
//! canonical questions come out.
//!
//! The engine is loaded once, after the listener is up; until then every
//! route answers 503.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::extract::{Query, Request, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use prefixsql_core::baselines::{BaselineError, HistoricalIndex, Ranker};
use prefixsql_core::corpus::tokenize_question;
use prefixsql_core::digest::file_digest;
use prefixsql_core::metrics::{read_predictions, MetricError};
use prefixsql_core::prefixbench::{read_bench, BenchError};
use prefixsql_core::questiongen::{canonical_question, default_rules, load_rules, CanonicalRule, OpStyle, QuestionGenError};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub const DEFAULT_K: usize = 5;
pub const MAX_K: usize = 50;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Index(#[from] BaselineError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Predictions(#[from] MetricError),
    #[error(transparent)]
    Rules(#[from] QuestionGenError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("predictor file mode needs --bench to map prefixes to prediction ids")]
    MissingBench,
    #[error("invalid CORS origin {0:?}")]
    BadOrigin(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PredictorSpec {
    MostFrequent,
    PrefixNn,
    File(PathBuf),
}

impl FromStr for PredictorSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "most-frequent" => Ok(PredictorSpec::MostFrequent),
            "prefix-nn" => Ok(PredictorSpec::PrefixNn),
            _ => match s.strip_prefix("file:") {
                Some(path) if !path.is_empty() => Ok(PredictorSpec::File(PathBuf::from(path))),
                _ => Err(format!(
                    "unknown predictor {s:?} (expected most-frequent, prefix-nn or file:<predictions.jsonl>)"
                )),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub index_path: PathBuf,
    pub predictor: PredictorSpec,
    /// Benchmark used by the file predictor to resolve prefix ids.
    pub bench_path: Option<PathBuf>,
    pub rules_path: Option<PathBuf>,
    pub op_style: OpStyle,
}

enum Predictor {
    MostFrequent,
    PrefixNn,
    File(HashMap<Vec<String>, Vec<String>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub rank: usize,
    pub sql: String,
    pub question: Option<String>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestResponse {
    pub suggestions: Vec<Suggestion>,
    pub prefix_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub index_digest: String,
}

/// Immutable state behind `/suggest`.
pub struct Engine {
    ranker: Ranker,
    predictor: Predictor,
    rules: Vec<CanonicalRule>,
    op_style: OpStyle,
    index_digest: String,
    frequency_total: usize,
}

impl Engine {
    pub fn load(config: &EngineConfig) -> Result<Self, ServiceError> {
        let index = HistoricalIndex::load(&config.index_path)?;
        let index_digest = file_digest(&config.index_path).map_err(|source| ServiceError::Io {
            path: config.index_path.clone(),
            source,
        })?;
        let rules = match &config.rules_path {
            Some(path) => load_rules(path)?,
            None => default_rules(),
        };
        let predictor = match &config.predictor {
            PredictorSpec::MostFrequent => Predictor::MostFrequent,
            PredictorSpec::PrefixNn => Predictor::PrefixNn,
            PredictorSpec::File(path) => {
                let bench_path = config.bench_path.as_ref().ok_or(ServiceError::MissingBench)?;
                let bench = read_bench(bench_path)?;
                let ranked: HashMap<String, Vec<String>> = read_predictions(path)?
                    .into_iter()
                    .map(|p| (p.prefix_id, p.ranked_sqls))
                    .collect();
                let by_tokens = bench
                    .into_iter()
                    .filter_map(|i| ranked.get(&i.prefix_id).map(|r| (i.prefix_tokens, r.clone())))
                    .collect();
                Predictor::File(by_tokens)
            }
        };
        Ok(Self::new(index, predictor, rules, config.op_style.clone(), index_digest))
    }

    fn new(index: HistoricalIndex, predictor: Predictor, rules: Vec<CanonicalRule>, op_style: OpStyle, index_digest: String) -> Self {
        let frequency_total = index.sql_frequency.values().sum();
        Self {
            ranker: Ranker::new(index),
            predictor,
            rules,
            op_style,
            index_digest,
            frequency_total,
        }
    }

    /// Engine over an in-memory index with the prefix-NN predictor.
    pub fn from_index(index: HistoricalIndex, index_digest: impl Into<String>) -> Self {
        Self::new(index, Predictor::PrefixNn, default_rules(), OpStyle::words(), index_digest.into())
    }

    pub fn index_digest(&self) -> &str {
        &self.index_digest
    }

    pub fn suggest(&self, prefix: &str, k: usize) -> SuggestResponse {
        let tokens = tokenize_question(prefix);
        let scored: Vec<(String, f64)> = match &self.predictor {
            Predictor::PrefixNn => self
                .ranker
                .prefix_nn(&tokens, k)
                .into_iter()
                .map(|s| (s.sql, s.score))
                .collect(),
            Predictor::MostFrequent => {
                let freq = &self.ranker.index().sql_frequency;
                let total = self.frequency_total.max(1) as f64;
                self.ranker
                    .most_frequent(k)
                    .into_iter()
                    .map(|sql| {
                        let share = freq.get(&sql).copied().unwrap_or(0) as f64 / total;
                        (sql, share)
                    })
                    .collect()
            }
            Predictor::File(by_tokens) => {
                let mut seen = std::collections::HashSet::new();
                by_tokens
                    .get(&tokens)
                    .map(|ranked| {
                        ranked
                            .iter()
                            .filter(|s| seen.insert(s.as_str()))
                            .take(k)
                            .enumerate()
                            .map(|(i, s)| (s.clone(), 1.0 / (i + 1) as f64))
                            .collect()
                    })
                    .unwrap_or_default()
            }
        };
        let suggestions = scored
            .into_iter()
            .enumerate()
            .map(|(i, (sql, score))| Suggestion {
                rank: i + 1,
                question: canonical_question(&sql, &self.rules, &self.op_style),
                sql,
                score,
            })
            .collect();
        SuggestResponse {
            suggestions,
            prefix_tokens: tokens,
        }
    }
}

/// Shared handle; empty until the engine has loaded.
#[derive(Clone, Default)]
pub struct AppState {
    engine: Arc<OnceLock<Engine>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ready(engine: Engine) -> Self {
        let state = Self::new();
        state.install(engine);
        state
    }

    /// Installs the engine. Only the first call has an effect.
    pub fn install(&self, engine: Engine) -> bool {
        self.engine.set(engine).is_ok()
    }

    pub fn engine(&self) -> Option<&Engine> {
        self.engine.get()
    }
}

#[derive(Debug, Deserialize)]
struct SuggestParams {
    prefix: Option<String>,
    k: Option<String>,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

fn not_ready() -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "index is still loading")
}

async fn suggest(State(state): State<AppState>, Query(params): Query<SuggestParams>) -> Response {
    let prefix = match params.prefix.as_deref().map(str::trim) {
        Some(p) if !p.is_empty() => p.to_string(),
        _ => return error(StatusCode::BAD_REQUEST, "missing or empty prefix"),
    };
    let k = match params.k.as_deref() {
        None => DEFAULT_K,
        Some(raw) => match raw.parse::<usize>() {
            Ok(k) if (1..=MAX_K).contains(&k) => k,
            _ => return error(StatusCode::BAD_REQUEST, format!("k must be an integer in 1..={MAX_K}")),
        },
    };
    let Some(engine) = state.engine() else {
        return not_ready();
    };
    Json(engine.suggest(&prefix, k)).into_response()
}

async fn healthz(State(state): State<AppState>) -> Response {
    match state.engine() {
        Some(engine) => Json(Health {
            status: "ok".into(),
            index_digest: engine.index_digest.clone(),
        })
        .into_response(),
        None => not_ready(),
    }
}

async fn access_log(request: Request, next: Next) -> Response {
    let start = Instant::now();
    let method = request.method().to_string();
    let path = request.uri().path().to_string();
    let query = request.uri().query().unwrap_or("").to_string();
    let response = next.run(request).await;
    let entry = serde_json::json!({
        "method": method,
        "path": path,
        "query": query,
        "status": response.status().as_u16(),
        "latency_ms": start.elapsed().as_secs_f64() * 1000.0,
    });
    log::info!(target: "access", "{entry}");
    response
}

/// Builds the router. `cors_origin` of `None` or `"*"` allows any origin.
pub fn router(state: AppState, cors_origin: Option<&str>) -> Result<Router, ServiceError> {
    let origin = match cors_origin {
        None | Some("*") => AllowOrigin::any(),
        Some(o) => AllowOrigin::exact(HeaderValue::from_str(o).map_err(|_| ServiceError::BadOrigin(o.to_string()))?),
    };
    let cors = CorsLayer::new().allow_origin(origin).allow_methods([Method::GET]);
    Ok(Router::new()
        .route("/suggest", get(suggest))
        .route("/healthz", get(healthz))
        .layer(middleware::from_fn(access_log))
        .layer(cors)
        .with_state(state))
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub engine: EngineConfig,
    pub host: String,
    pub port: u16,
    pub cors_origin: Option<String>,
}

/// Binds the listener, loads the engine in the background and serves until
/// the process stops.
pub async fn serve(config: ServeConfig) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let state = AppState::new();
    let app = router(state.clone(), config.cors_origin.as_deref())?;
    let addr: SocketAddr = format!("{}:{}", config.host, config.port).parse()?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);

    let engine_config = config.engine.clone();
    let loader = tokio::task::spawn_blocking(move || Engine::load(&engine_config));
    let loading = state.clone();
    tokio::spawn(async move {
        match loader.await {
            Ok(Ok(engine)) => {
                log::info!("index loaded ({})", engine.index_digest());
                loading.install(engine);
            }
            Ok(Err(e)) => {
                log::error!("failed to load index: {e}");
                std::process::exit(1);
            }
            Err(e) => {
                log::error!("index loader panicked: {e}");
                std::process::exit(1);
            }
        }
    });
    axum::serve(listener, app).await?;
    Ok(())
}
