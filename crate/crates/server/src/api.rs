//! Routes: stream registration, event and frame sockets, text queries,
//! memory pages, uploads and stored media.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::ws::rejection::WebSocketUpgradeRejection;
use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, Multipart, Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use egostream_core::ingest::{SourceKind, StreamSource};
use egostream_core::media::MediaStore;
use egostream_core::memory::MemoryEntryView;
use egostream_core::retrieval::RetrievalIndex;
use egostream_core::script::ScriptPaths;
use egostream_core::Config;
use serde::{Deserialize, Serialize};

use crate::runtime::{RuntimeDeps, StartError, StreamRuntime};

/// WebSocket close code for policy violations; used for slow consumers.
const CLOSE_POLICY: u16 = 1008;
const SLOW_CONSUMER: &str = "slow_consumer";
const CLOSE_LINGER: Duration = Duration::from_secs(5);

pub struct AppState {
    deps: RuntimeDeps,
    streams: RwLock<HashMap<String, Arc<StreamRuntime>>>,
    next_id: AtomicU64,
    upload_dir: PathBuf,
}

impl AppState {
    pub fn new(config: Config, retrieval: Option<Arc<RetrievalIndex>>) -> std::io::Result<Arc<Self>> {
        let upload_dir = config
            .api
            .upload_dir
            .clone()
            .unwrap_or_else(|| std::env::temp_dir().join(format!("egostream-uploads-{}", std::process::id())));
        std::fs::create_dir_all(&upload_dir)?;
        Ok(Arc::new(AppState {
            deps: RuntimeDeps {
                config: Arc::new(config),
                media: MediaStore::new(),
                retrieval,
            },
            streams: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            upload_dir,
        }))
    }

    pub fn config(&self) -> &Config {
        &self.deps.config
    }

    pub fn media(&self) -> &MediaStore {
        &self.deps.media
    }

    pub fn stream(&self, id: &str) -> Option<Arc<StreamRuntime>> {
        self.streams.read().expect("stream registry lock").get(id).cloned()
    }

    fn is_registered(&self, source: &StreamSource) -> bool {
        self.streams
            .read()
            .expect("stream registry lock")
            .values()
            .any(|s| s.source().kind == source.kind && s.source().uri == source.uri)
    }

    /// Starts a stream on a blocking thread and registers it.
    pub async fn register(self: &Arc<Self>, source: StreamSource, script: ScriptPaths) -> Result<String, ApiError> {
        if self.is_registered(&source) {
            return Err(ApiError::new(StatusCode::CONFLICT, "already_registered", format!("{} is already registered", source.uri)));
        }
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let state = self.clone();
        let (sid, src) = (id.clone(), source.clone());
        let runtime = tokio::task::spawn_blocking(move || StreamRuntime::start(sid, src, &script, &state.deps))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))?
            .map_err(start_error)?;
        let mut streams = self.streams.write().expect("stream registry lock");
        if streams
            .values()
            .any(|s| s.source().kind == source.kind && s.source().uri == source.uri)
        {
            drop(streams);
            tokio::task::spawn_blocking(move || runtime.shutdown());
            return Err(ApiError::new(StatusCode::CONFLICT, "already_registered", format!("{} is already registered", source.uri)));
        }
        streams.insert(id.clone(), runtime);
        Ok(id)
    }

    /// Removes a stream and stops its loops.
    pub async fn remove(&self, id: &str) -> bool {
        let rt = self.streams.write().expect("stream registry lock").remove(id);
        match rt {
            Some(rt) => {
                let _ = tokio::task::spawn_blocking(move || rt.shutdown()).await;
                true
            }
            None => false,
        }
    }

    pub async fn shutdown_all(&self) {
        let all: Vec<_> = self.streams.write().expect("stream registry lock").drain().map(|(_, s)| s).collect();
        let _ = tokio::task::spawn_blocking(move || all.iter().for_each(|s| s.shutdown())).await;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
            },
        }
    }

    fn not_found(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "unknown_stream", format!("no stream {id}"))
    }

    fn bad_request(code: &str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.body }))).into_response()
    }
}

fn start_error(e: StartError) -> ApiError {
    let code = e.code();
    let status = match code {
        "connect_failed" | "adapter_unreachable" | "adapter_timeout" => StatusCode::BAD_GATEWAY,
        _ => StatusCode::BAD_REQUEST,
    };
    ApiError::new(status, code, e.to_string())
}

pub fn router(state: Arc<AppState>) -> Router {
    let upload_limit = state.config().api.upload_max_bytes;
    Router::new()
        .route("/healthz", get(|| async { Json(serde_json::json!({"ok": true})) }))
        .route("/streams", post(create_stream).get(list_streams))
        .route("/streams/{id}", get(stream_status).delete(delete_stream))
        .route("/streams/{id}/events", get(events_ws))
        .route("/streams/{id}/frames", get(frames_ws))
        .route("/streams/{id}/query", post(query))
        .route("/streams/{id}/memory", get(memory_page))
        .route("/upload", post(upload).layer(DefaultBodyLimit::max(upload_limit)))
        .route("/media/{id}", get(media))
        .fallback(static_file)
        .with_state(state)
}

#[derive(Debug, Deserialize)]
struct CreateStream {
    source: StreamSource,
    #[serde(default)]
    script: Option<ScriptPaths>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub stream_id: String,
}

async fn create_stream(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateStream>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<Created>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::bad_request("malformed", e.body_text()))?;
    let stream_id = state.register(req.source, req.script.unwrap_or_default()).await?;
    Ok(Json(Created { stream_id }))
}

async fn list_streams(State(state): State<Arc<AppState>>) -> Json<Vec<crate::runtime::StreamStatus>> {
    let streams: Vec<_> = state.streams.read().expect("stream registry lock").values().cloned().collect();
    let mut out: Vec<_> = streams.iter().map(|s| s.status()).collect();
    out.sort_by(|a, b| a.stream_id.cmp(&b.stream_id));
    Json(out)
}

async fn stream_status(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<crate::runtime::StreamStatus>, ApiError> {
    let rt = state.stream(&id).ok_or_else(|| ApiError::not_found(&id))?;
    Ok(Json(rt.status()))
}

async fn delete_stream(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<StatusCode, ApiError> {
    if state.remove(&id).await {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(ApiError::not_found(&id))
    }
}

async fn events_ws(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    ws: Result<WebSocketUpgrade, WebSocketUpgradeRejection>,
) -> Result<Response, ApiError> {
    let rt = state.stream(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let ws = ws.map_err(|e| ApiError::new(e.status(), "not_websocket", e.body_text()))?;
    let timeout = Duration::from_secs_f64(state.config().api.slow_consumer_timeout_s.max(0.05));
    let sub = rt.hub().subscribe();
    Ok(ws.on_upgrade(move |socket| push_events(socket, sub, timeout)))
}

async fn close(socket: &mut WebSocket, code: u16, reason: &str, timeout: Duration) {
    let frame = CloseFrame {
        code,
        reason: reason.into(),
    };
    if !matches!(tokio::time::timeout(timeout, socket.send(Message::Close(Some(frame)))).await, Ok(Ok(()))) {
        return;
    }
    // Linger for the peer's close reply; dropping the socket while it still
    // writes would reset the connection and lose the close frame.
    let _ = tokio::time::timeout(CLOSE_LINGER, async {
        while let Some(Ok(msg)) = socket.recv().await {
            if matches!(msg, Message::Close(_)) {
                break;
            }
        }
    })
    .await;
}

/// Pushes events until the stream goes away or the client stops keeping up.
/// A client is too slow when its queue overflows, a send stalls, or it
/// answers nothing (not even a ping) for the whole timeout.
async fn push_events(mut socket: WebSocket, mut sub: crate::events::Subscription, timeout: Duration) {
    let mut ping = tokio::time::interval(timeout / 3);
    ping.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    ping.tick().await;
    let mut last_heard = Instant::now();
    loop {
        tokio::select! {
            ev = sub.recv() => {
                let Some(ev) = ev else {
                    if sub.overflowed() {
                        close(&mut socket, CLOSE_POLICY, SLOW_CONSUMER, timeout).await;
                    } else {
                        close(&mut socket, 1000, "stream closed", timeout).await;
                    }
                    return;
                };
                let text = serde_json::to_string(&ev).expect("events serialize");
                match tokio::time::timeout(timeout, socket.send(Message::Text(text.into()))).await {
                    Ok(Ok(())) => {}
                    Ok(Err(_)) => return,
                    Err(_) => {
                        close(&mut socket, CLOSE_POLICY, SLOW_CONSUMER, Duration::from_millis(100)).await;
                        return;
                    }
                }
            }
            msg = socket.recv() => {
                match msg {
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                    Some(Ok(_)) => last_heard = Instant::now(),
                }
            }
            _ = ping.tick() => {
                if last_heard.elapsed() >= timeout {
                    tracing::info!("closing slow event consumer");
                    close(&mut socket, CLOSE_POLICY, SLOW_CONSUMER, Duration::from_millis(100)).await;
                    return;
                }
                if tokio::time::timeout(timeout, socket.send(Message::Ping(Bytes::new()))).await.is_err() {
                    close(&mut socket, CLOSE_POLICY, SLOW_CONSUMER, Duration::from_millis(100)).await;
                    return;
                }
            }
        }
    }
}

async fn frames_ws(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    ws: Result<WebSocketUpgrade, WebSocketUpgradeRejection>,
) -> Result<Response, ApiError> {
    let rt = state.stream(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let ws = ws.map_err(|e| ApiError::new(e.status(), "not_websocket", e.body_text()))?;
    let rx = rt.frames();
    Ok(ws.on_upgrade(move |socket| push_frames(socket, rx)))
}

/// Binary messages: 8-byte little-endian f64 media time, then the JPEG.
/// Only the latest frame is kept per client, so a slow client skips frames.
async fn push_frames(mut socket: WebSocket, mut rx: tokio::sync::watch::Receiver<crate::runtime::DisplaySlot>) {
    let mut sent_seq = 0;
    loop {
        let slot = rx.borrow_and_update().clone();
        if let Some((t, jpeg)) = slot.frame.filter(|_| slot.seq != sent_seq) {
            sent_seq = slot.seq;
            let mut msg = Vec::with_capacity(8 + jpeg.len());
            msg.extend_from_slice(&t.to_le_bytes());
            msg.extend_from_slice(&jpeg);
            if socket.send(Message::Binary(msg.into())).await.is_err() {
                return;
            }
        }
        if slot.ended {
            close(&mut socket, 1000, "end of stream", Duration::from_secs(1)).await;
            return;
        }
        tokio::select! {
            changed = rx.changed() => if changed.is_err() {
                close(&mut socket, 1000, "stream closed", Duration::from_secs(1)).await;
                return;
            },
            msg = socket.recv() => if matches!(msg, Some(Ok(Message::Close(_))) | None | Some(Err(_))) {
                return;
            },
        }
    }
}

#[derive(Debug, Deserialize)]
struct QueryBody {
    text: String,
}

async fn query(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<QueryBody>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, ApiError> {
    let rt = state.stream(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let Json(body) = body.map_err(|e| ApiError::bad_request("malformed", e.body_text()))?;
    let text = body.text.trim().to_string();
    if text.is_empty() {
        return Err(ApiError::bad_request("empty_query", "query text is empty"));
    }
    let started = Instant::now();
    let rx = rt
        .submit_text(text.clone())
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "stream_stopped", "stream is shutting down"))?;
    match tokio::time::timeout(rt.processing_deadline(), rx).await {
        Ok(Ok(response)) => Ok(Json(response).into_response()),
        Ok(Err(_)) => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "stream_stopped", "stream stopped before answering")),
        Err(_) => {
            rt.publish_timeout(&text, started.elapsed());
            Err(ApiError::new(
                StatusCode::REQUEST_TIMEOUT,
                "processing_timeout",
                "no reply before the processing deadline",
            ))
        }
    }
}

#[derive(Debug, Deserialize)]
struct MemoryQuery {
    from: Option<f64>,
    to: Option<f64>,
    #[serde(default)]
    page: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MemoryPage {
    pub entries: Vec<MemoryEntryView>,
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub next_page: Option<usize>,
}

async fn memory_page(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    q: Result<Query<MemoryQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<MemoryPage>, ApiError> {
    let rt = state.stream(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let Query(q) = q.map_err(|e| ApiError::bad_request("bad_range", e.body_text()))?;
    let lo = q.from.unwrap_or(0.0);
    let hi = q.to.unwrap_or(f64::MAX);
    if !lo.is_finite() || !hi.is_finite() || lo < 0.0 || lo > hi {
        return Err(ApiError::bad_request("bad_range", format!("bad range [{lo}, {hi}]")));
    }
    let log = rt.log();
    let entries = log
        .query_by_time(lo, hi)
        .map_err(|e| ApiError::bad_request("bad_range", e.to_string()))?;
    let page_size = state.config().api.page_size.max(1);
    let total = entries.len();
    let start = q.page.saturating_mul(page_size).min(total);
    let end = (start + page_size).min(total);
    Ok(Json(MemoryPage {
        entries: entries[start..end].iter().map(|e| e.view()).collect(),
        page: q.page,
        page_size,
        total,
        next_page: (end < total).then_some(q.page + 1),
    }))
}

fn safe_name(name: &str) -> String {
    let base = Path::new(name).file_name().and_then(|n| n.to_str()).unwrap_or("upload");
    let cleaned: String = base
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect();
    if cleaned.trim_matches('.').is_empty() {
        "upload".into()
    } else {
        cleaned
    }
}

/// Multipart fields: `file` (the video), optional `rate`, and optional
/// `annotations`, `qa` and `transcript` replay scripts.
async fn upload(State(state): State<Arc<AppState>>, mut form: Multipart) -> Result<Json<Created>, ApiError> {
    let n = state.next_id.fetch_add(1, Ordering::Relaxed);
    let dir = state.upload_dir.join(format!("u{n}"));
    tokio::fs::create_dir_all(&dir)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let mut video: Option<PathBuf> = None;
    let mut rate = state.config().api.default_upload_rate;
    let mut script = ScriptPaths::default();
    let multipart_error = |e: axum::extract::multipart::MultipartError| {
        let status = e.status();
        let code = if status == StatusCode::PAYLOAD_TOO_LARGE { "too_large" } else { "malformed" };
        ApiError::new(status, code, e.body_text())
    };
    while let Some(mut field) = form.next_field().await.map_err(multipart_error)? {
        let name = field.name().unwrap_or_default().to_string();
        match name.as_str() {
            "rate" => {
                let text = field.text().await.map_err(multipart_error)?;
                rate = text
                    .trim()
                    .parse()
                    .map_err(|_| ApiError::bad_request("invalid_source", format!("bad rate {text:?}")))?;
            }
            "file" | "annotations" | "qa" | "transcript" => {
                let fname = match name.as_str() {
                    "file" => safe_name(field.file_name().unwrap_or("video")),
                    other => format!("{other}.script"),
                };
                let path = dir.join(fname);
                let mut out = tokio::fs::File::create(&path)
                    .await
                    .map_err(|e| ApiError::internal(e.to_string()))?;
                while let Some(chunk) = field.chunk().await.map_err(multipart_error)? {
                    tokio::io::AsyncWriteExt::write_all(&mut out, &chunk)
                        .await
                        .map_err(|e| ApiError::internal(e.to_string()))?;
                }
                match name.as_str() {
                    "file" => video = Some(path),
                    "annotations" => script.annotations = Some(path),
                    "qa" => script.qa = Some(path),
                    _ => script.transcript = Some(path),
                }
            }
            _ => {}
        }
    }
    let video = video.ok_or_else(|| ApiError::bad_request("malformed", "missing multipart field \"file\""))?;
    let source = StreamSource {
        kind: SourceKind::LocalFile,
        uri: video.to_string_lossy().into_owned(),
        playback_rate: rate,
    };
    let stream_id = state.register(source, script).await?;
    Ok(Json(Created { stream_id }))
}

async fn media(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let blob = state
        .media()
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_media", format!("no media {id}")))?;
    Ok(([(header::CONTENT_TYPE, blob.mime)], Bytes::from(blob.bytes.to_vec())).into_response())
}

/// Serves the web client's files from `api.static_dir`; `/` maps to `index.html`.
async fn static_file(State(state): State<Arc<AppState>>, uri: axum::http::Uri) -> Result<Response, ApiError> {
    let missing = || ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no route {}", uri.path()));
    let root = state.config().api.static_dir.clone().ok_or_else(missing)?;
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    if rel.split('/').any(|part| part == ".." || part.is_empty()) {
        return Err(missing());
    }
    let path = root.join(rel);
    let bytes = tokio::fs::read(&path).await.map_err(|_| missing())?;
    let mime = match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}
