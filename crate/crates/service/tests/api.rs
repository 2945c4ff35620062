//! Scripted HTTP client against a live server on an ephemeral port.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use reqwest::StatusCode;
use serde_json::{json, Value};
use supportsim_core::dialogue::{parse_dialogue, Dialogue};
use supportsim_core::sft::ExportMode;
use supportsim_service::agents::{Agent, AgentError, AgentRegistry, ReplayAgent};
use supportsim_service::model::{Event, Turn, INTERACTIVE_DIMENSIONS};
use supportsim_service::store::read_stream;
use supportsim_service::{AppState, QualityCorpus, ServiceConfig};
use supportsim_core::gateway::GatewayError;

fn demo_dialogue(id: &str) -> Dialogue {
    let mut d = parse_dialogue(include_str!("../../../data/demo_dialogue.json"), "p", &Default::default()).unwrap();
    d.id = id.into();
    d
}

struct Failing;

impl Agent for Failing {
    fn reply(&self, _: &str, _: ExportMode, _: &[Turn], _: &str) -> Result<String, AgentError> {
        Err(AgentError::Gateway(GatewayError::Transport { attempts: 3, message: "status 503".into() }))
    }
}

fn agents() -> AgentRegistry {
    let mut m: AgentRegistry = BTreeMap::new();
    m.insert("replay".into(), Arc::new(ReplayAgent::new(&[demo_dialogue("r1"), demo_dialogue("r2")]).unwrap()));
    m.insert("other".into(), Arc::new(ReplayAgent::new(&[demo_dialogue("r3")]).unwrap()));
    m.insert("down".into(), Arc::new(Failing));
    m
}

fn corpora() -> Vec<QualityCorpus> {
    vec![
        QualityCorpus { name: "alpha".into(), dialogues: (1..=4).map(|i| demo_dialogue(&format!("a{i}"))).collect() },
        QualityCorpus { name: "beta".into(), dialogues: (1..=3).map(|i| demo_dialogue(&format!("b{i}"))).collect() },
    ]
}

struct Server {
    base: String,
    client: reqwest::Client,
    _task: tokio::task::JoinHandle<()>,
}

async fn start(dir: &Path) -> Server {
    let state = AppState::open(dir, agents(), corpora(), ServiceConfig::default()).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let task = tokio::spawn(async move {
        supportsim_service::serve(listener, state).await.unwrap();
    });
    Server { base, client: reqwest::Client::new(), _task: task }
}

impl Server {
    async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let r = self.client.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap();
        let status = r.status();
        let text = r.text().await.unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    async fn get(&self, path: &str) -> (StatusCode, String) {
        let r = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status(), r.text().await.unwrap())
    }

    async fn session(&self, model: &str, evaluator: &str) -> String {
        let (s, v) = self.post("/sessions", json!({"agent_config": {"model": model}, "evaluator_id": evaluator})).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["id"].as_str().unwrap().to_string()
    }

    async fn chat(&self, id: &str, n: usize) {
        for i in 0..n {
            let (s, v) = self.post(&format!("/sessions/{id}/messages"), json!({"text": format!("message {i}")})).await;
            assert_eq!(s, StatusCode::OK, "{v}");
        }
    }
}

fn ratings(r: [u8; 5]) -> Value {
    json!({"fluency": r[0], "identification": r[1], "comforting": r[2], "suggestion": r[3], "overall": r[4]})
}

#[tokio::test]
async fn session_creation_rules() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path()).await;
    let a = srv.session("replay", "e1").await;
    let b = srv.session("replay", "e1").await;
    assert_ne!(a, b);
    let (s, _) = srv.post("/sessions", json!({"agent_config": {"model": "replay"}, "evaluator_id": " "})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, v) = srv.post("/sessions", json!({"agent_config": {"model": "nope"}, "evaluator_id": "e"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("nope"));
    let (s, _) = srv.post("/sessions", json!({"evaluator_id": "e"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = srv.get("/sessions/zzz").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn rating_gate_and_state_machine() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path()).await;
    let id = srv.session("replay", "e1").await;
    srv.chat(&id, 7).await;
    let (s, v) = srv.post(&format!("/sessions/{id}/ratings"), ratings([3, 3, 3, 3, 3])).await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");
    srv.chat(&id, 1).await;
    let (_, raw) = srv.get(&format!("/sessions/{id}")).await;
    let v: Value = serde_json::from_str(&raw).unwrap();
    assert_eq!(v["state"], "ready_to_rate");
    assert_eq!(v["pairs"], 8);
    // Chat may continue past the threshold.
    srv.chat(&id, 1).await;
    let (s, _) = srv.post(&format!("/sessions/{id}/ratings"), ratings([4, 0, 0, 0, 0])).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = srv.post(&format!("/sessions/{id}/ratings"), json!({"fluency": 1})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, v) = srv.post(&format!("/sessions/{id}/ratings"), ratings([3, 2, 2, 3, 3])).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["state"], "rated");
    let (s, _) = srv.post(&format!("/sessions/{id}/ratings"), ratings([3, 2, 2, 3, 3])).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = srv.post(&format!("/sessions/{id}/messages"), json!({"text": "hello?"})).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn replay_agent_replies_are_deterministic() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let mut transcripts = Vec::new();
    for dir in [&d1, &d2] {
        let srv = start(dir.path()).await;
        let id = srv.session("replay", "e").await;
        srv.chat(&id, 3).await;
        let (_, raw) = srv.get(&format!("/sessions/{id}")).await;
        let v: Value = serde_json::from_str(&raw).unwrap();
        let texts: Vec<String> = v["turns"].as_array().unwrap().iter().map(|t| t["text"].as_str().unwrap().to_string()).collect();
        transcripts.push(texts);
    }
    assert_eq!(transcripts[0], transcripts[1]);
}

#[tokio::test]
async fn gateway_failure_is_502_and_not_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path()).await;
    let id = srv.session("down", "e").await;
    let (s, v) = srv.post(&format!("/sessions/{id}/messages"), json!({"text": "hi"})).await;
    assert_eq!(s, StatusCode::BAD_GATEWAY);
    assert_eq!(v["retryable"], true);
    let (_, raw) = srv.get(&format!("/sessions/{id}")).await;
    let v: Value = serde_json::from_str(&raw).unwrap();
    assert_eq!(v["turns"].as_array().unwrap().len(), 0);
}

#[tokio::test]
async fn report_means_match_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path()).await;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for i in 0..50 {
        let model = if rng.gen_bool(0.5) { "replay" } else { "other" };
        let id = srv.session(model, &format!("e{}", i % 7)).await;
        srv.chat(&id, 8 + rng.gen_range(0..3)).await;
        if rng.gen_bool(0.8) {
            let r: [u8; 5] = std::array::from_fn(|_| rng.gen_range(0..=3));
            let (s, _) = srv.post(&format!("/sessions/{id}/ratings"), ratings(r)).await;
            assert_eq!(s, StatusCode::OK);
        }
    }
    let (_, raw) = srv.get("/reports/interactive").await;
    let report: Value = serde_json::from_str(&raw).unwrap();

    // Fold the raw log independently of the service.
    let mut model_of = HashMap::new();
    let mut sums: BTreeMap<String, (usize, [u64; 5])> = BTreeMap::new();
    for e in read_stream(&dir.path().join("sessions.jsonl")).unwrap() {
        match e {
            Event::SessionCreated { id, agent_config, .. } => {
                model_of.insert(id, agent_config.label());
            }
            Event::SessionRated { id, ratings, .. } => {
                let e = sums.entry(model_of[&id].clone()).or_default();
                e.0 += 1;
                for (s, v) in e.1.iter_mut().zip(ratings.values()) {
                    *s += v as u64;
                }
            }
            _ => {}
        }
    }
    assert_eq!(report["models"].as_object().unwrap().len(), sums.len());
    for (model, (n, s)) in sums {
        let m = &report["models"][&model];
        assert_eq!(m["sessions"], n);
        for (d, sum) in INTERACTIVE_DIMENSIONS.iter().zip(s) {
            assert_eq!(m["means"][d].as_f64().unwrap(), sum as f64 / n as f64, "{model} {d}");
        }
    }
    let (s, csv) = srv.get("/reports/interactive?format=csv").await;
    assert_eq!(s, StatusCode::OK);
    assert!(csv.starts_with("section,model,model_b,dimension"));
    let (s, _) = srv.get("/reports/interactive?format=xml").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn comparisons_are_counted() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path()).await;
    let c = |outcome: &str| json!({"evaluator_id": "e", "model_a": "replay", "model_b": "other", "dimension": "overall", "outcome": outcome});
    assert_eq!(srv.post("/comparisons", c("win")).await.0, StatusCode::CREATED);
    let (_, raw) = srv.get("/reports/interactive").await;
    let v: Value = serde_json::from_str(&raw).unwrap();
    assert_eq!(v["comparisons"][0]["win"], 1);
    assert_eq!(v["comparisons"][0]["loss"], 0);
    assert_eq!(v["comparisons"][0]["tie"], 0);
    let same = json!({"evaluator_id": "e", "model_a": "replay", "model_b": "replay", "dimension": "overall", "outcome": "tie"});
    assert_eq!(srv.post("/comparisons", same).await.0, StatusCode::BAD_REQUEST);
    let bad_dim = json!({"evaluator_id": "e", "model_a": "replay", "model_b": "other", "dimension": "speed", "outcome": "tie"});
    assert_eq!(srv.post("/comparisons", bad_dim).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(srv.post("/comparisons", c("draw")).await.0, StatusCode::BAD_REQUEST);
}

fn scores(v: u8) -> Value {
    json!({"informativeness": v, "understanding": v, "helpfulness": v, "safety": 3, "specificity": v, "humanlikeness": v})
}

#[tokio::test]
async fn quality_tasks_go_to_three_distinct_evaluators() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path()).await;
    let evaluators: Vec<String> = (0..6).map(|i| format!("w{i}")).collect();
    let mut served: HashMap<String, Vec<String>> = HashMap::new();
    let mut corpus_order = Vec::new();
    'outer: loop {
        let mut progressed = false;
        for e in &evaluators {
            let (s, raw) = srv.get(&format!("/tasks/next?evaluator_id={e}")).await;
            if s == StatusCode::NO_CONTENT {
                continue;
            }
            assert_eq!(s, StatusCode::OK);
            let t: Value = serde_json::from_str(&raw).unwrap();
            // Asking again before answering returns the same task.
            let (_, again) = srv.get(&format!("/tasks/next?evaluator_id={e}")).await;
            assert_eq!(serde_json::from_str::<Value>(&again).unwrap()["task_id"], t["task_id"]);
            corpus_order.push(t["corpus"].as_str().unwrap().to_string());
            let key = format!("{}/{}", t["corpus"].as_str().unwrap(), t["dialogue_id"].as_str().unwrap());
            served.entry(key).or_default().push(e.clone());
            let task = t["task_id"].as_str().unwrap();
            let (s, v) = srv.post(&format!("/tasks/{task}/quality"), json!({"evaluator_id": e, "scores": scores(2)})).await;
            assert_eq!(s, StatusCode::CREATED, "{v}");
            let (s, _) = srv.post(&format!("/tasks/{task}/quality"), json!({"evaluator_id": e, "scores": scores(2)})).await;
            assert_eq!(s, StatusCode::CONFLICT);
            progressed = true;
        }
        if !progressed {
            break 'outer;
        }
    }
    assert_eq!(served.len(), 7);
    for (k, es) in &served {
        assert_eq!(es.len(), 3, "{k}");
        assert_eq!(es.iter().collect::<HashSet<_>>().len(), 3, "{k}");
    }
    // Round-robin: the first assignments alternate between corpora.
    assert_eq!(&corpus_order[..4], ["alpha", "beta", "alpha", "beta"]);

    let (_, raw) = srv.get("/reports/quality").await;
    let v: Value = serde_json::from_str(&raw).unwrap();
    assert_eq!(v["corpora"]["alpha"]["judgments"], 12);
    assert_eq!(v["corpora"]["beta"]["dialogues"], 3);
    assert_eq!(v["corpora"]["alpha"]["means"]["safety"], 3.0);
    let (_, csv) = srv.get("/reports/quality?format=csv").await;
    assert!(csv.contains("alpha,safety,12,4,3.0000"));
}

#[tokio::test]
async fn quality_score_validation() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path()).await;
    let (_, raw) = srv.get("/tasks/next?evaluator_id=w").await;
    let t: Value = serde_json::from_str(&raw).unwrap();
    let task = t["task_id"].as_str().unwrap();
    assert_eq!(t["turns"].as_array().unwrap().len(), 20);
    let (s, _) = srv.post(&format!("/tasks/{task}/quality"), json!({"evaluator_id": "w", "scores": scores(5)})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = srv.post(&format!("/tasks/{task}/quality"), json!({"evaluator_id": "x", "scores": scores(1)})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = srv.post("/tasks/t999/quality", json!({"evaluator_id": "w", "scores": scores(1)})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = srv.get("/tasks/next").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let id = {
        let srv = start(dir.path()).await;
        let id = srv.session("replay", "e").await;
        srv.chat(&id, 8).await;
        srv.post(&format!("/sessions/{id}/ratings"), ratings([1, 2, 3, 2, 1])).await;
        id
    };
    let srv = start(dir.path()).await;
    let (_, raw) = srv.get(&format!("/sessions/{id}")).await;
    let v: Value = serde_json::from_str(&raw).unwrap();
    assert_eq!(v["state"], "rated");
    assert_eq!(v["turns"].as_array().unwrap().len(), 16);
    let next = srv.session("replay", "e").await;
    assert_ne!(next, id);
}

#[tokio::test]
async fn ui_config_and_cors() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(dir.path()).await;
    let r = srv
        .client
        .get(format!("{}/ui-config", srv.base))
        .header("Origin", "http://localhost:5173")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert!(r.headers().contains_key("access-control-allow-origin"));
    let v: Value = r.json().await.unwrap();
    assert_eq!(v["min_turns"], 8);
    assert_eq!(v["score_max"], 3);
    assert_eq!(v["interactive_dimensions"].as_array().unwrap().len(), 5);
    assert_eq!(v["quality_criteria"].as_array().unwrap().len(), 6);
    assert_eq!(v["agents"], json!(["down", "other", "replay"]));
}
