use std::path::{Path, PathBuf};
use std::time::Instant;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use prefixsql_core::baselines::build_index;
use prefixsql_core::corpus::{load_corpus, load_schemas, CorpusFormat};
use prefixsql_core::digest::file_digest;
use prefixsql_core::metrics::{predictions_to_jsonl, PredictionRecord};
use prefixsql_core::prefixbench::{bench_to_jsonl, build_bench, PrefixInstance};
use prefixsql_core::questiongen::OpStyle;
use prefixsql_core::splitter::{provided_split, SplitName};
use prefixsql_service::{router, AppState, Engine, EngineConfig, PredictorSpec, SuggestResponse};
use serde_json::Value;
use tower::ServiceExt;

fn core_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn train_bench() -> Vec<PrefixInstance> {
    let schemas = load_schemas(&core_fixture("mini_geo_schema.json")).unwrap();
    let corpus = load_corpus(&core_fixture("mini_geo.jsonl"), CorpusFormat::CanonicalJsonl, schemas).unwrap();
    let split = provided_split(&corpus).unwrap();
    build_bench(&corpus, &split)
        .unwrap()
        .into_iter()
        .filter(|i| i.split_name == SplitName::Train)
        .collect()
}

struct Fixture {
    dir: tempfile::TempDir,
    index_path: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let index_path = dir.path().join("index.json");
    std::fs::write(&index_path, build_index(&train_bench()).unwrap().to_json()).unwrap();
    Fixture { dir, index_path }
}

fn config(fx: &Fixture, predictor: PredictorSpec) -> EngineConfig {
    EngineConfig {
        index_path: fx.index_path.clone(),
        predictor,
        bench_path: None,
        rules_path: None,
        op_style: OpStyle::words(),
    }
}

fn app(engine: Engine) -> Router {
    router(AppState::ready(engine), None).unwrap()
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let response = app
        .clone()
        .oneshot(Request::builder().uri(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

#[tokio::test]
async fn not_ready_until_engine_installed() {
    let fx = fixture();
    let state = AppState::new();
    let app = router(state.clone(), None).unwrap();
    assert_eq!(get(&app, "/healthz").await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(get(&app, "/suggest?prefix=what").await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert!(state.install(Engine::load(&config(&fx, PredictorSpec::PrefixNn)).unwrap()));
    assert_eq!(get(&app, "/healthz").await.0, StatusCode::OK);
}

#[tokio::test]
async fn healthz_echoes_index_digest() {
    let fx = fixture();
    let app = app(Engine::load(&config(&fx, PredictorSpec::PrefixNn)).unwrap());
    let (status, body) = get(&app, "/healthz").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["index_digest"], file_digest(&fx.index_path).unwrap());
}

#[tokio::test]
async fn what_rivers_matches_golden_body() {
    let fx = fixture();
    let app = app(Engine::load(&config(&fx, PredictorSpec::PrefixNn)).unwrap());
    let (status, body) = get(&app, "/suggest?prefix=what%20rivers&k=5").await;
    assert_eq!(status, StatusCode::OK);
    let golden: Value = serde_json::from_str(
        &std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/suggest_what_rivers.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(body, golden);
}

#[tokio::test]
async fn train_prefix_gets_its_gold_first() {
    let fx = fixture();
    let app = app(Engine::load(&config(&fx, PredictorSpec::PrefixNn)).unwrap());
    for inst in train_bench() {
        let prefix = inst.prefix_tokens.join("%20").replace('?', "%3F");
        let (status, body) = get(&app, &format!("/suggest?prefix={prefix}&k=5")).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body["suggestions"][0]["sql"], inst.gold_sqls[0].as_str(), "{}", inst.prefix_id);
    }
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let fx = fixture();
    let app = app(Engine::load(&config(&fx, PredictorSpec::PrefixNn)).unwrap());
    for uri in [
        "/suggest",
        "/suggest?prefix=",
        "/suggest?prefix=%20%20",
        "/suggest?prefix=what&k=0",
        "/suggest?prefix=what&k=51",
        "/suggest?prefix=what&k=-1",
        "/suggest?prefix=what&k=five",
    ] {
        let (status, body) = get(&app, uri).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
        assert!(body["error"].is_string());
    }
}

#[tokio::test]
async fn ranks_are_contiguous_and_sqls_distinct() {
    let fx = fixture();
    let app = app(Engine::load(&config(&fx, PredictorSpec::PrefixNn)).unwrap());
    for (uri, expected) in [("/suggest?prefix=what", 5), ("/suggest?prefix=which%20states&k=50", 8), ("/suggest?prefix=zzz&k=3", 3)] {
        let (_, body) = get(&app, uri).await;
        let parsed: SuggestResponse = serde_json::from_value(body).unwrap();
        // the fixture train split has six distinct SQLs
        assert_eq!(parsed.suggestions.len(), expected.min(6), "{uri}");
        let mut sqls = std::collections::HashSet::new();
        for (i, s) in parsed.suggestions.iter().enumerate() {
            assert_eq!(s.rank, i + 1);
            assert!(s.score >= 0.0);
            assert!(sqls.insert(s.sql.clone()));
        }
    }
}

#[tokio::test]
async fn identical_requests_return_identical_bodies() {
    let fx = fixture();
    let app = app(Engine::load(&config(&fx, PredictorSpec::PrefixNn)).unwrap());
    let handles: Vec<_> = (0..16)
        .map(|_| {
            let app = app.clone();
            tokio::spawn(async move { get(&app, "/suggest?prefix=what%20is%20the&k=10").await })
        })
        .collect();
    let mut bodies = Vec::new();
    for h in handles {
        bodies.push(h.await.unwrap());
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn most_frequent_predictor() {
    let fx = fixture();
    let app = app(Engine::load(&config(&fx, PredictorSpec::MostFrequent)).unwrap());
    let (_, body) = get(&app, "/suggest?prefix=anything&k=2").await;
    let parsed: SuggestResponse = serde_json::from_value(body).unwrap();
    assert_eq!(parsed.suggestions[0].sql, "SELECT river_name FROM river WHERE traverse = 'texas'");
    assert_eq!(parsed.suggestions.len(), 2);
    assert!(parsed.suggestions[0].score >= parsed.suggestions[1].score);
}

#[tokio::test]
async fn file_predictor_serves_external_rankings() {
    let fx = fixture();
    let bench = train_bench();
    let bench_path = fx.dir.path().join("bench_train.jsonl");
    std::fs::write(&bench_path, bench_to_jsonl(&bench)).unwrap();
    let target = bench.iter().find(|i| i.prefix_tokens == ["how", "many"]).unwrap();
    let preds = vec![PredictionRecord::new(
        target.prefix_id.clone(),
        vec!["SELECT COUNT ( * ) FROM city".into(), "SELECT name FROM t".into()],
    )];
    let preds_path = fx.dir.path().join("preds.jsonl");
    std::fs::write(&preds_path, predictions_to_jsonl(&preds)).unwrap();

    let mut cfg = config(&fx, PredictorSpec::File(preds_path.clone()));
    assert!(Engine::load(&cfg).is_err());
    cfg.bench_path = Some(bench_path);
    let app = app(Engine::load(&cfg).unwrap());
    let (_, body) = get(&app, "/suggest?prefix=How%20many&k=5").await;
    let parsed: SuggestResponse = serde_json::from_value(body).unwrap();
    assert_eq!(parsed.suggestions.len(), 2);
    assert_eq!(parsed.suggestions[0].question.as_deref(), Some("Find COUNT(*) ."));
    assert_eq!(parsed.suggestions[1].score, 0.5);
    let (_, body) = get(&app, "/suggest?prefix=unseen").await;
    assert_eq!(body["suggestions"], Value::Array(vec![]));
}

#[tokio::test]
async fn cors_header_follows_configured_origin() {
    let fx = fixture();
    let engine = Engine::load(&config(&fx, PredictorSpec::PrefixNn)).unwrap();
    let app = router(AppState::ready(engine), Some("http://localhost:5173")).unwrap();
    let response = app
        .oneshot(
            Request::builder()
                .uri("/healthz")
                .header("origin", "http://localhost:5173")
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    assert_eq!(
        response.headers().get("access-control-allow-origin").unwrap(),
        "http://localhost:5173"
    );
    assert!(router(AppState::new(), Some("bad\norigin")).is_err());
}

#[test]
fn predictor_spec_parsing() {
    assert_eq!("prefix-nn".parse(), Ok(PredictorSpec::PrefixNn));
    assert_eq!("most-frequent".parse(), Ok(PredictorSpec::MostFrequent));
    assert_eq!("file:p.jsonl".parse(), Ok(PredictorSpec::File("p.jsonl".into())));
    assert!("file:".parse::<PredictorSpec>().is_err());
    assert!("t5".parse::<PredictorSpec>().is_err());
}

#[tokio::test]
async fn p95_latency_under_budget() {
    let fx = fixture();
    let app = app(Engine::load(&config(&fx, PredictorSpec::PrefixNn)).unwrap());
    let prefixes = ["what", "what%20rivers", "how%20many%20states", "which%20states%20border", "zzz"];
    let mut latencies = Vec::new();
    for i in 0..400 {
        let uri = format!("/suggest?prefix={}&k=10", prefixes[i % prefixes.len()]);
        let start = Instant::now();
        let (status, _) = get(&app, &uri).await;
        latencies.push(start.elapsed().as_secs_f64() * 1000.0);
        assert_eq!(status, StatusCode::OK);
    }
    latencies.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p95 = latencies[latencies.len() * 95 / 100];
    assert!(p95 < 50.0, "p95 {p95:.2} ms");
}
