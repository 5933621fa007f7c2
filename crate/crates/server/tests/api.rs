mod common;

use std::time::{Duration, Instant};

use common::*;
use egostream::EventKind;
use futures::StreamExt;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::protocol::frame::coding::CloseCode;
use tokio_tungstenite::tungstenite::Message;

const FAST: f64 = 10.0;

#[tokio::test(flavor = "multi_thread")]
async fn register_then_duplicate_conflicts() {
    let srv = TestServer::start(config()).await;
    let dir = tempfile::tempdir().unwrap();
    let clip = synthetic_clip(dir.path(), "a.json", 2.0, 10.0);
    let id = srv.register_file(&clip, 4.0, Value::Null).await;
    let (status, body) = srv
        .register(json!({"source": {"kind": "local_file", "uri": clip, "playback_rate": 4.0}}))
        .await;
    assert_eq!(status, 409, "{body}");
    assert_eq!(body["error"]["code"], "already_registered");

    let resp = srv.http.delete(srv.url(&format!("/streams/{id}"))).send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 204);
    let resp = srv.http.get(srv.url(&format!("/streams/{id}"))).send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 404);
    // Free again after removal.
    srv.register_file(&clip, 4.0, Value::Null).await;
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_registrations_are_rejected() {
    let srv = TestServer::start(config()).await;
    let (status, body) = srv
        .register(json!({"source": {"kind": "local_file", "uri": "/no/such/file.mp4"}}))
        .await;
    assert_eq!((status, body["error"]["code"].as_str()), (400, Some("not_found")));

    let resp = srv
        .http
        .post(srv.url("/streams"))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);

    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let started = Instant::now();
    let (status, body) = srv
        .register(json!({"source": {"kind": "rtmp_url", "uri": format!("rtmp://127.0.0.1:{port}/live/x")}}))
        .await;
    assert_eq!(status, 502, "{body}");
    assert_eq!(body["error"]["code"], "connect_failed");
    assert!(started.elapsed() < Duration::from_secs(5));
}

#[tokio::test(flavor = "multi_thread")]
async fn unreachable_model_adapter_fails_registration() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut cfg = config();
    cfg.models.chat.as_mut().unwrap().endpoint = format!("http://127.0.0.1:{port}/");
    cfg.models.chat.as_mut().unwrap().timeout_ms = 300;
    let srv = TestServer::start(cfg).await;
    let dir = tempfile::tempdir().unwrap();
    let clip = synthetic_clip(dir.path(), "a.json", 2.0, 10.0);
    let (status, body) = srv
        .register(json!({"source": {"kind": "local_file", "uri": clip}}))
        .await;
    assert_eq!(status, 502, "{body}");
    assert_eq!(body["error"]["code"], "adapter_unreachable");
}

#[tokio::test(flavor = "multi_thread")]
async fn replay_pushes_ticks_and_voice_answers() {
    let srv = TestServer::start(config()).await;
    let id = srv.register_file(&cooking_video(), FAST, cooking_script()).await;
    let mut ws = connect(&srv.ws_url(&format!("/streams/{id}/events"))).await;
    let mut events = Vec::new();
    while let Some(ev) = next_event(&mut ws, Duration::from_secs(5)).await {
        let ended = ev.kind == EventKind::StateChange && ev.payload["component"] == "ingest";
        events.push(ev);
        if ended {
            break;
        }
    }
    let status = srv.wait_finished(&id, Duration::from_secs(10)).await;
    // Trailing ticks and replies can land after the ingest end event.
    while let Some(ev) = next_event(&mut ws, Duration::from_millis(500)).await {
        events.push(ev);
    }
    let seqs: Vec<u64> = events.iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (1..=events.len() as u64).collect::<Vec<_>>());

    let ticks = events.iter().filter(|e| e.kind == EventKind::MemoryTick).count();
    assert!((23..=24).contains(&ticks), "{ticks} ticks");
    assert_eq!(status["memory"]["entries"], json!(ticks));

    let answers: Vec<&Value> = events
        .iter()
        .filter(|e| e.kind == EventKind::Response)
        .map(|e| &e.payload)
        .collect();
    let queries: Vec<&str> = answers.iter().map(|a| a["query"].as_str().unwrap()).collect();
    assert_eq!(queries, ["what am I doing now?", "when did I add sugar"]);
    assert!(answers[1]["text"].as_str().unwrap().contains("58.0s"), "{}", answers[1]);
    assert!(events.iter().any(|e| e.kind == EventKind::StateChange && e.payload["state"] == "awake"));
}

#[tokio::test(flavor = "multi_thread")]
async fn text_queries_answer_and_mirror_once() {
    let srv = TestServer::start(config()).await;
    let id = srv.register_file(&cooking_video(), FAST, cooking_script()).await;
    srv.wait_finished(&id, Duration::from_secs(20)).await;
    // Let the voice replies drain before counting.
    tokio::time::sleep(Duration::from_millis(300)).await;

    let mut ws = connect(&srv.ws_url(&format!("/streams/{id}/events"))).await;
    let (status, body) = srv.query(&id, "When did I add sugar?").await;
    assert_eq!(status, 200, "{body}");
    assert!(body["text"].as_str().unwrap().contains("58.0s"), "{body}");
    assert_eq!(body["media"]["kind"], "grounding");
    assert_eq!(body["media"]["hits"][0]["display"], "58.0s");

    let ev = next_event(&mut ws, Duration::from_secs(2)).await.expect("mirrored response");
    assert_eq!((ev.seq, ev.kind), (1, EventKind::Response));
    assert_eq!(ev.payload["query"], "When did I add sugar?");
    assert!(next_event(&mut ws, Duration::from_millis(500)).await.is_none());

    let audio = body["tts_audio"]["uri"].as_str().unwrap();
    let resp = srv.http.get(srv.url(audio)).send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 200);
    assert_eq!(resp.headers()["content-type"], "audio/wav");

    let (status, body) = srv.query(&id, "   ").await;
    assert_eq!((status, body["error"]["code"].as_str()), (400, Some("empty_query")));
    let (status, _) = srv.query("s999", "hello").await;
    assert_eq!(status, 404);
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_queries_are_answered_in_order() {
    let srv = TestServer::start(config()).await;
    let id = srv.register_file(&cooking_video(), FAST, cooking_script()).await;
    srv.wait_finished(&id, Duration::from_secs(20)).await;
    tokio::time::sleep(Duration::from_millis(300)).await;
    let mut ws = connect(&srv.ws_url(&format!("/streams/{id}/events"))).await;

    let questions = ["When did I add sugar?", "summarize what I have done", "show me how to cut the tomato", "when did I crack the egg"];
    let mut tasks = Vec::new();
    for (i, q) in questions.iter().enumerate() {
        let (http, url) = (srv.http.clone(), srv.url(&format!("/streams/{id}/query")));
        let q = q.to_string();
        tasks.push(tokio::spawn(async move {
            tokio::time::sleep(Duration::from_millis(15 * i as u64)).await;
            http.post(url).json(&json!({ "text": q })).send().await.unwrap().status().as_u16()
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), 200);
    }
    let mut got = Vec::new();
    while let Some(ev) = next_event(&mut ws, Duration::from_millis(500)).await {
        assert_eq!(ev.kind, EventKind::Response);
        got.push(ev.payload["query"].as_str().unwrap().to_string());
    }
    assert_eq!(got, questions);
}

#[tokio::test(flavor = "multi_thread")]
async fn memory_pages_and_ranges() {
    let mut cfg = config();
    cfg.api.page_size = 5;
    let srv = TestServer::start(cfg).await;
    let id = srv.register_file(&cooking_video(), FAST, cooking_script()).await;
    let status = srv.wait_finished(&id, Duration::from_secs(20)).await;
    let total = status["memory"]["entries"].as_u64().unwrap() as usize;

    let mut all = Vec::new();
    let mut page = Some(0);
    while let Some(p) = page {
        let body: Value = srv
            .http
            .get(srv.url(&format!("/streams/{id}/memory?page={p}")))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        assert_eq!(body["total"], json!(total));
        assert!(body["entries"].as_array().unwrap().len() <= 5);
        all.extend(body["entries"].as_array().unwrap().clone());
        page = body["next_page"].as_u64();
    }
    assert_eq!(all.len(), total);
    let starts: Vec<f64> = all.iter().map(|e| e["t_start"].as_f64().unwrap()).collect();
    assert!(starts.windows(2).all(|w| w[0] < w[1]));

    let body: Value = srv
        .http
        .get(srv.url(&format!("/streams/{id}/memory?from=56&to=57")))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let entries = body["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 1, "{body}");
    assert_eq!(entries[0]["display"], "58.0s");
    assert!(entries[0]["description"].as_str().unwrap().contains("sugar"));

    for bad in ["from=10&to=5", "from=abc", "from=-1"] {
        let resp = srv.http.get(srv.url(&format!("/streams/{id}/memory?{bad}"))).send().await.unwrap();
        assert_eq!(resp.status().as_u16(), 400, "{bad}");
    }
    let resp = srv.http.get(srv.url("/streams/nope/memory")).send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 404);
}

#[tokio::test(flavor = "multi_thread")]
async fn frame_relay_keeps_display_rate_and_closes_at_eof() {
    let srv = TestServer::start(config()).await;
    let dir = tempfile::tempdir().unwrap();
    let clip = synthetic_clip(dir.path(), "frames.json", 4.0, 30.0);
    let id = srv.register_file(&clip, 1.0, Value::Null).await;
    let mut ws = connect(&srv.ws_url(&format!("/streams/{id}/frames"))).await;
    let mut stamps = Vec::new();
    let mut clean_close = false;
    let start = Instant::now();
    while let Ok(Some(msg)) = tokio::time::timeout(Duration::from_secs(3), ws.next()).await {
        match msg.unwrap() {
            Message::Binary(b) => {
                assert!(b.len() > 10);
                assert_eq!(&b[8..10], &[0xFF, 0xD8], "JPEG payload");
                let t = f64::from_le_bytes(b[..8].try_into().unwrap());
                stamps.push((start.elapsed().as_secs_f64(), t));
            }
            Message::Close(frame) => {
                clean_close = frame.is_none_or(|f| f.code == CloseCode::Normal);
                break;
            }
            _ => {}
        }
    }
    assert!(clean_close, "frame socket should close normally at end of stream");
    assert!(stamps.windows(2).all(|w| w[0].1 < w[1].1));
    // Steady state: skip the first half second.
    let steady: Vec<_> = stamps.iter().filter(|(wall, _)| *wall >= 0.5).collect();
    let span = steady.last().unwrap().0 - steady[0].0;
    let fps = (steady.len() - 1) as f64 / span;
    assert!((8.0..=12.0).contains(&fps), "{fps} fps over {span} s");
}

#[tokio::test(flavor = "multi_thread")]
async fn stalled_event_consumer_is_disconnected() {
    let mut cfg = config();
    cfg.api.slow_consumer_timeout_s = 1.0;
    let srv = TestServer::start(cfg).await;
    let id = srv.register_file(&cooking_video(), 4.0, cooking_script()).await;
    let mut ws = connect(&srv.ws_url(&format!("/streams/{id}/events"))).await;

    // Stall: read nothing for three timeouts while the backend keeps going.
    let before = srv.status(&id).await["ingest"]["frames_decoded"].as_u64().unwrap();
    tokio::time::sleep(Duration::from_secs(3)).await;
    let after = srv.status(&id).await["ingest"]["frames_decoded"].as_u64().unwrap();
    assert!(after > before + 100, "backend stalled: {before} -> {after}");

    let mut close = None;
    while let Ok(Some(msg)) = tokio::time::timeout(Duration::from_secs(3), ws.next()).await {
        match msg {
            Ok(Message::Close(frame)) => {
                close = frame;
                break;
            }
            Ok(_) => {}
            Err(_) => break,
        }
    }
    let close = close.expect("server sends a close frame");
    assert_eq!(close.code, CloseCode::Policy);
    assert_eq!(close.reason.as_str(), "slow_consumer");

    // A consumer that keeps reading stays connected.
    let mut live = connect(&srv.ws_url(&format!("/streams/{id}/events"))).await;
    let start = Instant::now();
    let mut got = 0;
    while start.elapsed() < Duration::from_secs(3) {
        match tokio::time::timeout(Duration::from_millis(200), live.next()).await {
            Ok(Some(Ok(Message::Text(_)))) => got += 1,
            Ok(Some(Ok(Message::Close(f)))) => panic!("reading client closed: {f:?}"),
            _ => {}
        }
    }
    assert!(got > 0);
    live.close(None).await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn upload_replays_with_scripts_and_rejects_bad_input() {
    let mut cfg = config();
    cfg.api.upload_max_bytes = 64 * 1024;
    let srv = TestServer::start(cfg).await;
    let part = |path: std::path::PathBuf, name: &str| {
        reqwest::multipart::Part::bytes(std::fs::read(path).unwrap()).file_name(name.to_string())
    };
    let cooking = fixtures().join("cooking");
    let form = reqwest::multipart::Form::new()
        .part("file", part(cooking_video(), "cooking.json"))
        .text("rate", "10")
        .part("annotations", part(cooking.join("annotations.jsonl"), "a.jsonl"))
        .part("qa", part(cooking.join("qa.jsonl"), "qa.jsonl"))
        .part("transcript", part(cooking.join("transcript.txt"), "t.txt"));
    let resp = srv.http.post(srv.url("/upload")).multipart(form).send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 200);
    let id = resp.json::<Value>().await.unwrap()["stream_id"].as_str().unwrap().to_string();
    let status = srv.wait_finished(&id, Duration::from_secs(20)).await;
    assert_eq!(status["source"]["playback_rate"], json!(10.0));
    let (code, body) = srv.query(&id, "When did I add sugar?").await;
    assert_eq!(code, 200);
    assert!(body["text"].as_str().unwrap().contains("58.0s"));

    let form = reqwest::multipart::Form::new()
        .part("file", reqwest::multipart::Part::bytes(b"just some text".to_vec()).file_name("notes.txt"));
    let resp = srv.http.post(srv.url("/upload")).multipart(form).send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 400);

    let form = reqwest::multipart::Form::new()
        .part("file", reqwest::multipart::Part::bytes(vec![0u8; 256 * 1024]).file_name("big.mp4"));
    let resp = srv.http.post(srv.url("/upload")).multipart(form).send().await.unwrap();
    assert_eq!(resp.status().as_u16(), 413);
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_streams_are_404_everywhere() {
    let srv = TestServer::start(config()).await;
    for path in ["/streams/x", "/streams/x/memory", "/streams/x/events", "/streams/x/frames", "/media/x"] {
        let resp = srv.http.get(srv.url(path)).send().await.unwrap();
        assert_eq!(resp.status().as_u16(), 404, "{path}");
    }
    let err = tokio_tungstenite::connect_async(srv.ws_url("/streams/x/events")).await.unwrap_err();
    assert!(err.to_string().contains("404"), "{err}");
}
