#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use egostream::api::AppState;
use egostream::ApiEvent;
use egostream_core::Config;
use futures::StreamExt;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn cooking_video() -> PathBuf {
    fixtures().join("cooking/cooking_120s.json")
}

pub fn cooking_script() -> Value {
    let dir = fixtures().join("cooking");
    json!({
        "annotations": dir.join("annotations.jsonl"),
        "qa": dir.join("qa.jsonl"),
        "transcript": dir.join("transcript.txt"),
    })
}

/// Writes a synthetic clip descriptor and returns its path.
pub fn synthetic_clip(dir: &Path, name: &str, seconds: f64, fps: f64) -> PathBuf {
    let path = dir.join(name);
    let desc = json!({"fps": fps, "duration_s": seconds, "width": 32, "height": 18, "pattern": "pan", "amplitude": 1});
    std::fs::write(&path, desc.to_string()).unwrap();
    path
}

pub struct TestServer {
    pub base: String,
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    pub http: reqwest::Client,
    _uploads: tempfile::TempDir,
}

impl TestServer {
    pub async fn start(mut cfg: Config) -> Self {
        let uploads = tempfile::tempdir().unwrap();
        cfg.api.upload_dir = Some(uploads.path().to_path_buf());
        let state = AppState::new(cfg, None).unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let app = egostream::router(state.clone());
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        TestServer {
            base: format!("http://{addr}"),
            addr,
            state,
            http: reqwest::Client::new(),
            _uploads: uploads,
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn ws_url(&self, path: &str) -> String {
        format!("ws://{}{path}", self.addr)
    }

    pub async fn register(&self, body: Value) -> (u16, Value) {
        let resp = self.http.post(self.url("/streams")).json(&body).send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn register_file(&self, path: &Path, rate: f64, script: Value) -> String {
        let (status, body) = self
            .register(json!({
                "source": {"kind": "local_file", "uri": path, "playback_rate": rate},
                "script": script,
            }))
            .await;
        assert_eq!(status, 200, "{body}");
        body["stream_id"].as_str().unwrap().to_string()
    }

    pub async fn status(&self, id: &str) -> Value {
        self.http.get(self.url(&format!("/streams/{id}"))).send().await.unwrap().json().await.unwrap()
    }

    /// Polls until ingest ended and every memory tick ran.
    pub async fn wait_finished(&self, id: &str, limit: Duration) -> Value {
        let start = Instant::now();
        loop {
            let s = self.status(id).await;
            if s["finished"] == json!(true) {
                return s;
            }
            assert!(start.elapsed() < limit, "stream {id} did not finish: {s}");
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
    }

    pub async fn query(&self, id: &str, text: &str) -> (u16, Value) {
        let resp = self
            .http
            .post(self.url(&format!("/streams/{id}/query")))
            .json(&json!({ "text": text }))
            .send()
            .await
            .unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }
}

pub type Socket = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

pub async fn connect(url: &str) -> Socket {
    tokio_tungstenite::connect_async(url).await.unwrap().0
}

/// Next event, or `None` on close or after `wait` without one.
pub async fn next_event(ws: &mut Socket, wait: Duration) -> Option<ApiEvent> {
    let deadline = Instant::now() + wait;
    loop {
        let left = deadline.checked_duration_since(Instant::now())?;
        match tokio::time::timeout(left, ws.next()).await {
            Ok(Some(Ok(Message::Text(t)))) => return Some(serde_json::from_str(&t).unwrap()),
            Ok(Some(Ok(Message::Close(_)))) | Ok(None) | Ok(Some(Err(_))) | Err(_) => return None,
            Ok(Some(Ok(_))) => {}
        }
    }
}

/// Config with every timing knob left at its default.
pub fn config() -> Config {
    Config::default()
}
