use std::collections::HashMap;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use futures::future::join_all;
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use xnlp_core::gateway::{BackendConfig, BackendKind, Gateway, MockRule, MockScript};
use xnlp_core::registry::{load_builtin_catalog, TaskRegistry};
use xnlp_core::session::{Orchestrator, PipelineConfig, SessionStore, DEFAULT_TTL};
use xnlp_server::{app, serve, serve_on, AppState, ErrorCode, ServerConfig, StartupError, MAX_BODY_BYTES};

struct Schemas {
    validators: HashMap<&'static str, jsonschema::Validator>,
}

fn load(name: &str) -> Value {
    let path = format!("{}/tests/schemas/{name}.json", env!("CARGO_MANIFEST_DIR"));
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn schemas() -> &'static Schemas {
    static S: OnceLock<Schemas> = OnceLock::new();
    S.get_or_init(|| {
        let registry: &'static jsonschema::Registry = Box::leak(Box::new(
            jsonschema::Registry::new()
                .add("urn:xnlp:task", jsonschema::Resource::from_contents(load("task")))
                .unwrap()
                .add("urn:xnlp:render", jsonschema::Resource::from_contents(load("render")))
                .unwrap()
                .prepare()
                .unwrap(),
        ));
        let mut validators = HashMap::new();
        for name in ["health", "task", "task_list", "error", "rationale", "render", "session"] {
            let v = jsonschema::options()
                .with_registry(registry)
                .should_validate_formats(true)
                .build(&load(name))
                .unwrap_or_else(|e| panic!("schema {name}: {e}"));
            validators.insert(name, v);
        }
        Schemas { validators }
    })
}

#[track_caller]
fn conforms(schema: &str, body: &Value) {
    let v = &schemas().validators[schema];
    let errors: Vec<String> = v.iter_errors(body).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{schema} schema violations: {errors:#?}\nbody: {body:#}");
}

struct Server {
    base: String,
    client: Client,
    stop: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<Result<(), StartupError>>,
}

impl Server {
    async fn start(gateway: Gateway) -> Self {
        Self::start_with(gateway, None).await
    }

    async fn start_with(gateway: Gateway, cors: Option<&str>) -> Self {
        let registry = TaskRegistry::new(load_builtin_catalog().unwrap());
        let orch = Orchestrator::new(
            registry,
            gateway,
            SessionStore::in_memory(DEFAULT_TTL),
            PipelineConfig::default(),
        );
        let state = AppState::new(orch);
        let router = app(state.clone(), cors).unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel();
        let task = tokio::spawn(serve_on(listener, router, state, async {
            let _ = rx.await;
        }));
        Server {
            base,
            client: Client::new(),
            stop: Some(tx),
            task,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.client.get(self.url(path)).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    async fn post(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        let r = self.client.post(self.url(path)).json(body).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    async fn post_raw(&self, path: &str, body: String) -> (StatusCode, Value) {
        let r = self
            .client
            .post(self.url(path))
            .header("content-type", "application/json")
            .body(body)
            .send()
            .await
            .unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }
}

fn bundled() -> Gateway {
    Gateway::mock(MockScript::bundled())
}

fn unreachable_backend() -> Gateway {
    let cfg = BackendConfig {
        kind: BackendKind::Http,
        endpoint: Some("http://127.0.0.1:9/v1".into()),
        timeout: Duration::from_millis(500),
        retries: 1,
        backoff: Duration::from_millis(10),
        ..BackendConfig::default()
    };
    Gateway::from_config(&cfg).unwrap()
}

fn custom_task(id: &str) -> Value {
    json!({
        "id": id,
        "name": "Chemical NER",
        "category": "information-extraction",
        "description": "Find chemical compound names.",
        "demonstration": {
            "input": "Aspirin contains acetylsalicylic acid.",
            "output": "(CHEM: \"Aspirin\") ; (CHEM: \"acetylsalicylic acid\")"
        },
        "label_set": ["CHEM"],
        "executing_format": "(CHEM: span text)",
        "tier": "span"
    })
}

#[track_caller]
fn expect_error(status: StatusCode, body: &Value, want_status: StatusCode, want_code: ErrorCode) {
    assert_eq!(status, want_status, "body: {body}");
    conforms("error", body);
    assert_eq!(body["code"], want_code.as_str(), "body: {body}");
}

#[tokio::test]
async fn health_and_task_catalog() {
    let s = Server::start(bundled()).await;
    let (st, body) = s.get("/api/health").await;
    assert_eq!(st, StatusCode::OK);
    conforms("health", &body);
    assert_eq!(body, json!({"status": "ok"}));

    let (st, body) = s.get("/api/tasks").await;
    assert_eq!(st, StatusCode::OK);
    conforms("task_list", &body);
    assert!(body.as_array().unwrap().len() >= 12);

    let (st, body) = s.get("/api/tasks/ner").await;
    assert_eq!(st, StatusCode::OK);
    conforms("task", &body);
    assert_eq!(body["tier"], "span");

    let (st, body) = s.get("/api/tasks/no-such-task").await;
    expect_error(st, &body, StatusCode::NOT_FOUND, ErrorCode::TaskNotFound);
}

#[tokio::test]
async fn register_task_contract() {
    let s = Server::start(bundled()).await;
    let (st, body) = s.post("/api/tasks", &custom_task("chem-ner")).await;
    assert_eq!(st, StatusCode::CREATED, "{body}");
    conforms("task", &body);
    assert_eq!(body["origin"], "user-defined");

    let (st, body) = s.get("/api/tasks/chem-ner").await;
    assert_eq!(st, StatusCode::OK);
    conforms("task", &body);

    let (st, body) = s.post("/api/tasks", &custom_task("chem-ner")).await;
    expect_error(st, &body, StatusCode::CONFLICT, ErrorCode::InvalidTaskSpec);
    let (st, body) = s.post("/api/tasks", &custom_task("ner")).await;
    expect_error(st, &body, StatusCode::CONFLICT, ErrorCode::InvalidTaskSpec);

    let (st, body) = s.post_raw("/api/tasks", "{\"id\": ".into()).await;
    expect_error(st, &body, StatusCode::BAD_REQUEST, ErrorCode::InvalidTaskSpec);

    let mut bad = custom_task("Bad Id");
    bad["demonstration"]["output"] = json!("(CHEM: \"Aspirin\"");
    bad["executing_format"] = json!("(rel: (A: x), (B: y))");
    let (st, body) = s.post("/api/tasks", &bad).await;
    expect_error(st, &body, StatusCode::UNPROCESSABLE_ENTITY, ErrorCode::ValidationFailed);
    let violations = body["violations"].as_array().unwrap();
    assert!(violations.len() >= 3, "{violations:?}");
    assert!(violations.iter().any(|v| v.as_str().unwrap().contains("id")));
    assert!(violations.iter().any(|v| v.as_str().unwrap().contains("demonstration output")));
    assert!(violations.iter().any(|v| v.as_str().unwrap().contains("executing format")));
}

#[tokio::test]
async fn session_lifecycle_contract() {
    let s = Server::start(bundled()).await;
    let (st, body) = s
        .post("/api/sessions", &json!({"task_id": "ner", "text": "John lives in Paris."}))
        .await;
    assert_eq!(st, StatusCode::CREATED, "{body}");
    conforms("session", &body);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["issues"], json!([]));
    let render = &body["render"];
    conforms("render", render);
    assert_eq!(render["text"], "John lives in Paris.");
    let ents: Vec<(String, Value)> = render["entities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| (e["label"].as_str().unwrap().to_string(), e["fragments"].clone()))
        .collect();
    assert_eq!(
        ents,
        vec![("PER".to_string(), json!([[0, 4]])), ("LOC".to_string(), json!([[14, 19]]))]
    );
    let id = body["id"].as_str().unwrap().to_string();

    let (st, got) = s.get(&format!("/api/sessions/{id}")).await;
    assert_eq!(st, StatusCode::OK);
    conforms("session", &got);
    assert_eq!(got["render"], body["render"]);

    let r = s.client.get(s.url(&format!("/api/sessions/{id}/standoff"))).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert!(r.headers()["content-type"].to_str().unwrap().starts_with("text/plain"));
    let text = r.text().await.unwrap();
    assert_eq!(text, "T1\tPER 0 4\tJohn\nT2\tLOC 14 19\tParis\n");

    let (st, body) = s.post(&format!("/api/sessions/{id}/rationale"), &json!({})).await;
    assert_eq!(st, StatusCode::OK, "{body}");
    conforms("rationale", &body);
    assert_eq!(body["session_id"], id.as_str());

    let (st, body) = s
        .post(
            &format!("/api/sessions/{id}/feedback"),
            &json!({"feedback": "The above prediction is not all right. Please label Paris as GPE."}),
        )
        .await;
    assert_eq!(st, StatusCode::OK, "{body}");
    conforms("session", &body);
    let labels: Vec<&str> = body["render"]["entities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["label"].as_str().unwrap())
        .collect();
    assert_eq!(labels, ["PER", "GPE"]);
    assert!(body["rationale"].is_string());
}

#[tokio::test]
async fn every_error_code_is_induced() {
    let s = Server::start(bundled()).await;
    let down = Server::start(unreachable_backend()).await;
    let (_, ok) = s
        .post("/api/sessions", &json!({"task_id": "ner", "text": "John lives in Paris."}))
        .await;
    let id = ok["id"].as_str().unwrap().to_string();
    let ghost = "00000000-0000-4000-8000-000000000000";
    let huge = format!("{{\"task_id\":\"ner\",\"text\":\"{}\"}}", "a".repeat(MAX_BODY_BYTES + 1));

    let mut seen = Vec::new();
    let cases: Vec<(&str, (StatusCode, Value), StatusCode, ErrorCode)> = vec![
        (
            "unknown task on session start",
            s.post("/api/sessions", &json!({"task_id": "nope", "text": "x"})).await,
            StatusCode::NOT_FOUND,
            ErrorCode::TaskNotFound,
        ),
        ("unknown task lookup", s.get("/api/tasks/nope").await, StatusCode::NOT_FOUND, ErrorCode::TaskNotFound),
        (
            "malformed task body",
            s.post_raw("/api/tasks", "not json".into()).await,
            StatusCode::BAD_REQUEST,
            ErrorCode::InvalidTaskSpec,
        ),
        (
            "duplicate task id",
            s.post("/api/tasks", &custom_task("ner")).await,
            StatusCode::CONFLICT,
            ErrorCode::InvalidTaskSpec,
        ),
        (
            "unknown session",
            s.get(&format!("/api/sessions/{ghost}")).await,
            StatusCode::NOT_FOUND,
            ErrorCode::SessionNotFound,
        ),
        (
            "non-uuid session id",
            s.get("/api/sessions/..%2F..%2Fetc%2Fpasswd").await,
            StatusCode::NOT_FOUND,
            ErrorCode::SessionNotFound,
        ),
        (
            "rationale for unknown session",
            s.post(&format!("/api/sessions/{ghost}/rationale"), &json!({})).await,
            StatusCode::NOT_FOUND,
            ErrorCode::SessionNotFound,
        ),
        (
            "feedback for unknown session",
            s.post(&format!("/api/sessions/{ghost}/feedback"), &json!({"feedback": "x"})).await,
            StatusCode::NOT_FOUND,
            ErrorCode::SessionNotFound,
        ),
        (
            "standoff for unknown session",
            s.get(&format!("/api/sessions/{ghost}/standoff")).await,
            StatusCode::NOT_FOUND,
            ErrorCode::SessionNotFound,
        ),
        (
            "backend down on session start",
            down.post("/api/sessions", &json!({"task_id": "ner", "text": "John lives in Paris."})).await,
            StatusCode::SERVICE_UNAVAILABLE,
            ErrorCode::BackendUnavailable,
        ),
        (
            "empty input text",
            s.post("/api/sessions", &json!({"task_id": "ner", "text": "   "})).await,
            StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::ValidationFailed,
        ),
        (
            "missing field",
            s.post("/api/sessions", &json!({"task_id": "ner"})).await,
            StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::ValidationFailed,
        ),
        (
            "empty feedback",
            s.post(&format!("/api/sessions/{id}/feedback"), &json!({"feedback": " "})).await,
            StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::ValidationFailed,
        ),
        (
            "invalid task spec",
            s.post("/api/tasks", &custom_task("-bad-")).await,
            StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::ValidationFailed,
        ),
        (
            "oversized session body",
            s.post_raw("/api/sessions", huge.clone()).await,
            StatusCode::PAYLOAD_TOO_LARGE,
            ErrorCode::PayloadTooLarge,
        ),
        (
            "oversized task body",
            s.post_raw("/api/tasks", huge).await,
            StatusCode::PAYLOAD_TOO_LARGE,
            ErrorCode::PayloadTooLarge,
        ),
    ];
    for (what, (status, body), want_status, want_code) in cases {
        assert_eq!(status, want_status, "{what}: {body}");
        conforms("error", &body);
        assert_eq!(body["code"], want_code.as_str(), "{what}");
        seen.push(want_code);
    }
    for code in ErrorCode::ALL {
        assert!(seen.contains(&code), "{} never induced", code.as_str());
    }
}

#[tokio::test]
async fn failed_session_is_stored_and_reported() {
    let down = Server::start(unreachable_backend()).await;
    let (st, body) = down
        .post("/api/sessions", &json!({"task_id": "ner", "text": "John lives in Paris."}))
        .await;
    expect_error(st, &body, StatusCode::SERVICE_UNAVAILABLE, ErrorCode::BackendUnavailable);
    let id = body["session_id"].as_str().unwrap();
    assert!(!body["message"].as_str().unwrap().contains("127.0.0.1:9"));

    let (st, got) = down.get(&format!("/api/sessions/{id}")).await;
    assert_eq!(st, StatusCode::OK);
    conforms("session", &got);
    assert_eq!(got["status"], "failed");
    assert!(got["render"].is_null());

    let (st, body) = down.get(&format!("/api/sessions/{id}/standoff")).await;
    expect_error(st, &body, StatusCode::UNPROCESSABLE_ENTITY, ErrorCode::ValidationFailed);
    let (st, body) = down.post(&format!("/api/sessions/{id}/rationale"), &json!({})).await;
    expect_error(st, &body, StatusCode::UNPROCESSABLE_ENTITY, ErrorCode::ValidationFailed);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn fifty_concurrent_predictions_stay_separate() {
    let n = 50;
    let inputs: Vec<String> = (0..n).map(|i| format!("Person{i} moved to Town{i}x.")).collect();
    let rules = (0..n)
        .map(|i| MockRule {
            pattern: inputs[i].clone(),
            response: format!("(PER: \"Person{i}\") ; (LOC: \"Town{i}x\")"),
        })
        .collect();
    let s = Arc::new(Server::start(Gateway::mock(MockScript::new(rules, "nothing"))).await);

    let calls = inputs.iter().cloned().map(|text| {
        let s = s.clone();
        async move {
            let (st, body) = s.post("/api/sessions", &json!({"task_id": "ner", "text": text})).await;
            (text, st, body)
        }
    });
    let results = join_all(calls).await;
    let mut ids = std::collections::HashSet::new();
    for (i, (text, st, body)) in results.into_iter().enumerate() {
        assert_eq!(st, StatusCode::CREATED, "{body}");
        conforms("session", &body);
        assert_eq!(body["status"], "ok");
        assert_eq!(body["input_text"], text.as_str());
        let render = &body["render"];
        assert_eq!(render["text"], text.as_str());
        let surfaces: Vec<String> = render["entities"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| {
                let [a, b] = [e["fragments"][0][0].as_u64().unwrap(), e["fragments"][0][1].as_u64().unwrap()];
                text.chars().skip(a as usize).take((b - a) as usize).collect()
            })
            .collect();
        assert_eq!(surfaces, [format!("Person{i}"), format!("Town{i}x")]);
        assert!(ids.insert(body["id"].as_str().unwrap().to_string()));

        let (st, again) = s.get(&format!("/api/sessions/{}", body["id"].as_str().unwrap())).await;
        assert_eq!(st, StatusCode::OK);
        assert_eq!(again["input_text"], text.as_str());
    }
    assert_eq!(ids.len(), n);
}

#[tokio::test]
async fn cors_preflight_allows_configured_origin() {
    let s = Server::start_with(bundled(), Some("http://localhost:5173")).await;
    let r = s
        .client
        .request(reqwest::Method::OPTIONS, s.url("/api/sessions"))
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .header("access-control-request-headers", "content-type")
        .send()
        .await
        .unwrap();
    assert!(r.status().is_success());
    assert_eq!(r.headers()["access-control-allow-origin"], "http://localhost:5173");

    let r = s
        .client
        .get(s.url("/api/health"))
        .header("origin", "http://evil.example")
        .send()
        .await
        .unwrap();
    assert!(r.headers().get("access-control-allow-origin").is_none());
}

#[tokio::test]
async fn graceful_shutdown_is_prompt() {
    let mut s = Server::start(bundled()).await;
    let (st, _) = s.get("/api/health").await;
    assert_eq!(st, StatusCode::OK);
    let started = Instant::now();
    s.stop.take().unwrap().send(()).unwrap();
    let res = tokio::time::timeout(Duration::from_secs(11), &mut s.task).await;
    assert!(matches!(res, Ok(Ok(Ok(())))), "{res:?}");
    assert!(started.elapsed() < Duration::from_secs(10));
}

#[tokio::test]
async fn port_in_use_fails_startup() {
    let holder = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let cfg = ServerConfig {
        addr: holder.local_addr().unwrap(),
        ..ServerConfig::default()
    };
    let err = serve(cfg, std::future::pending()).await.unwrap_err();
    assert!(matches!(err, StartupError::Bind { .. }), "{err}");
}

#[tokio::test]
async fn registered_tasks_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServerConfig {
        catalog: Some(dir.path().join("user_tasks.toml")),
        session_store: Some(dir.path().join("sessions")),
        ..ServerConfig::default()
    };
    let state = AppState::from_config(&cfg).unwrap();
    state
        .orchestrator()
        .registry()
        .register(serde_json::from_value(custom_task("chem-ner")).unwrap())
        .unwrap();
    let again = AppState::from_config(&cfg).unwrap();
    assert!(again.orchestrator().registry().get("chem-ner").is_some());
}
