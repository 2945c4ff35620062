//! HttpGateway against a scripted local server: retries, caching and
//! credential hygiene.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use supportsim_core::gateway::{ChatGateway, ChatMessage, ChatRequest, GatewayConfig, GatewayError, HttpGateway};

#[derive(Debug, Clone, Default)]
struct Seen {
    authorization: Option<String>,
    body: String,
}

/// Serves `script` (status, body) one response per connection, then stops.
fn serve(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in script {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut seen = Seen::default();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    seen.authorization = Some(line["authorization:".len()..].trim().to_string());
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            seen.body = String::from_utf8(buf).unwrap();
            log.lock().unwrap().push(seen);
            let reason = if status == 200 { "OK" } else { "Status" };
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen)
}

fn ok_body(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 7, "completion_tokens": 3}
    })
    .to_string()
}

fn config(endpoint: String) -> GatewayConfig {
    GatewayConfig {
        endpoint,
        credential_env: None,
        timeout_secs: 10,
        max_retries: 3,
        backoff_base_ms: 5,
        backoff_ceiling_ms: 20,
        rate_limit_per_minute: 6000,
        max_in_flight: 2,
        cache_dir: None,
    }
}

fn request() -> ChatRequest {
    ChatRequest::new("gpt-4", vec![ChatMessage::user("hello there")]).tagged("test")
}

#[test]
fn retries_after_rate_limit() {
    let (url, seen) = serve(vec![(429, "{}".into()), (200, ok_body("hi"))]);
    let gw = HttpGateway::new(config(url)).unwrap();
    let c = gw.complete(&request()).unwrap();
    assert_eq!(c.text, "hi");
    assert_eq!(c.usage.prompt_tokens, 7);
    assert_eq!(gw.network_calls(), 2);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    let body: serde_json::Value = serde_json::from_str(&seen[1].body).unwrap();
    assert_eq!(body["model"], "gpt-4");
    assert_eq!(body["messages"][0]["content"], "hello there");
}

#[test]
fn client_errors_are_not_retried() {
    let (url, _) = serve(vec![(400, "{\"error\":\"bad\"}".into()), (200, ok_body("late"))]);
    let gw = HttpGateway::new(config(url)).unwrap();
    match gw.complete(&request()) {
        Err(GatewayError::Request { status: 400, .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(gw.network_calls(), 1);
}

#[test]
fn gives_up_after_max_retries() {
    let (url, _) = serve(vec![(503, "{}".into()); 4]);
    let gw = HttpGateway::new(config(url)).unwrap();
    let err = gw.complete(&request()).unwrap_err();
    assert!(matches!(err, GatewayError::Transport { attempts: 4, .. }), "{err:?}");
    assert!(err.is_retryable());
    assert_eq!(gw.network_calls(), 4);
}

#[test]
fn cache_hit_skips_network() {
    let dir = tempfile::tempdir().unwrap();
    let (url, _) = serve(vec![(200, ok_body("cached"))]);
    let mut cfg = config(url);
    cfg.cache_dir = Some(dir.path().to_path_buf());
    let first = HttpGateway::new(cfg.clone()).unwrap();
    assert_eq!(first.complete(&request()).unwrap().text, "cached");
    assert_eq!(first.network_calls(), 1);

    // A fresh gateway on the same cache never touches the (now closed) server.
    let second = HttpGateway::new(cfg).unwrap();
    assert_eq!(second.complete(&request()).unwrap().text, "cached");
    assert_eq!(second.network_calls(), 0);
}

struct Capture(Mutex<Vec<String>>);

impl log::Log for Capture {
    fn enabled(&self, _: &log::Metadata<'_>) -> bool {
        true
    }
    fn log(&self, record: &log::Record<'_>) {
        self.0.lock().unwrap().push(format!("{}", record.args()));
    }
    fn flush(&self) {}
}

#[test]
fn credential_stays_out_of_artifacts() {
    static CAPTURE: Capture = Capture(Mutex::new(Vec::new()));
    let _ = log::set_logger(&CAPTURE);
    log::set_max_level(log::LevelFilter::Trace);

    let secret = "sk-test-7f3a9c1e-do-not-leak";
    std::env::set_var("SUPPORTSIM_GATEWAY_TEST_KEY", secret);
    let dir = tempfile::tempdir().unwrap();
    let (url, seen) = serve(vec![(429, "{}".into()), (500, "{}".into()), (200, ok_body("fine"))]);
    let mut cfg = config(url);
    cfg.cache_dir = Some(dir.path().to_path_buf());
    cfg.credential_env = Some("SUPPORTSIM_GATEWAY_TEST_KEY".into());
    let gw = HttpGateway::new(cfg.clone()).unwrap();
    gw.complete(&request()).unwrap();

    // The key did reach the server.
    assert!(seen.lock().unwrap().iter().all(|s| s.authorization.as_deref() == Some(&format!("Bearer {secret}"))));

    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let raw = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        assert!(!raw.contains(secret));
    }
    let logs = CAPTURE.0.lock().unwrap();
    assert!(logs.iter().any(|l| l.contains("retrying")), "{logs:?}");
    assert!(logs.iter().all(|l| !l.contains(secret)));
    assert!(!serde_json::to_string(&cfg).unwrap().contains(secret));
    assert!(!format!("{cfg:?}").contains(secret));
}

#[test]
fn missing_credential_is_a_config_error() {
    let mut cfg = config("http://127.0.0.1:9/unused".into());
    cfg.credential_env = Some("SUPPORTSIM_SURELY_UNSET_VARIABLE".into());
    let gw = HttpGateway::new(cfg).unwrap();
    let err = gw.complete(&request()).unwrap_err();
    assert!(matches!(err, GatewayError::Config(_)));
    assert!(err.to_string().contains("SUPPORTSIM_SURELY_UNSET_VARIABLE"));
    assert_eq!(gw.network_calls(), 0);
}
