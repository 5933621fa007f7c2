#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use egostream_core::config::Config;
use egostream_core::gateway::ModelGateway;
use egostream_core::media::MediaStore;
use egostream_core::memory::{MemoryLog, SharedMemoryLog};
use egostream_core::orchestrator::run_memory_loop;
use egostream_core::script::{ReplayScript, ScriptPaths};
use egostream_core::speech::SpeechGateway;
use egostream_core::{Frame, MediaTime};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn cooking_paths() -> ScriptPaths {
    let dir = fixtures().join("cooking");
    ScriptPaths {
        annotations: Some(dir.join("annotations.jsonl")),
        qa: Some(dir.join("qa.jsonl")),
        transcript: Some(dir.join("transcript.txt")),
    }
}

pub fn cooking_script() -> Arc<ReplayScript> {
    Arc::new(ReplayScript::load(&cooking_paths()).expect("cooking fixture loads"))
}

pub fn t(s: f64) -> MediaTime {
    MediaTime::new(s).unwrap()
}

pub fn gateway(script: &Arc<ReplayScript>) -> ModelGateway {
    ModelGateway::mock(script.clone(), Config::default().memory.embed_dim, MediaStore::new())
}

pub fn speech(script: &ReplayScript) -> SpeechGateway {
    SpeechGateway::mock(script, Config::default().session.wake_keywords, MediaStore::new())
}

/// Sampled frames of a replay: `hz` per second over `[0, duration_s)`.
pub fn sampled_frames(duration_s: f64, hz: f64) -> Vec<Frame> {
    let n = (duration_s * hz).round() as u64;
    (0..n)
        .map(|i| {
            let shade = (i % 256) as u8;
            Frame::solid(i, t(i as f64 / hz), 16, 9, [shade, 128, 255 - shade])
        })
        .collect()
}

pub fn empty_log() -> MemoryLog {
    let cfg = Config::default();
    MemoryLog::new("cooking", cfg.memory.period_s, cfg.memory.window_s)
}

/// Memory log after a full 120 s cooking replay sampled at 2 Hz.
pub fn cooking_log(script: &Arc<ReplayScript>) -> MemoryLog {
    let gw = gateway(script);
    let shared = SharedMemoryLog::new(empty_log());
    run_memory_loop(sampled_frames(120.0, 2.0), &shared, gw.captioner(), gw.embedder());
    let log = shared.snapshot();
    (*log).clone()
}

/// Retrieval index over the how-to fixture narrations.
pub fn howto_index(embedder: &dyn egostream_core::gateway::TextEmbedder) -> egostream_core::retrieval::RetrievalIndex {
    use egostream_core::corpus::{read_jsonl, ClipInput};
    use egostream_core::gateway::embed_normalized;
    use egostream_core::retrieval::{RetrievalIndex, RetrievalRecord};
    let clips: Vec<ClipInput> = read_jsonl(&fixtures().join("howto/clips.jsonl")).unwrap();
    let records = clips
        .into_iter()
        .map(|c| RetrievalRecord {
            feature: embed_normalized(embedder, &c.narration).unwrap(),
            video_id: c.clip_id,
            title: c.narration,
            source_uri: c.path.to_string_lossy().into_owned(),
            duration_s: 4.0,
        })
        .collect();
    RetrievalIndex::from_records(embedder.dim(), records).unwrap()
}

/// Encodes a test-pattern MP4 with ffmpeg, or `None` when ffmpeg is missing.
pub fn make_mp4(path: &std::path::Path, seconds: f64, with_audio: bool) -> Option<()> {
    let ffmpeg = egostream_core::ingest::ffmpeg::locate_ffmpeg(None)?;
    let dur = format!("{seconds}");
    let mut cmd = std::process::Command::new(ffmpeg);
    cmd.args(["-v", "error", "-y", "-f", "lavfi", "-i"])
        .arg(format!("testsrc=size=160x90:rate=30:duration={dur}"));
    if with_audio {
        cmd.args(["-f", "lavfi", "-i"])
            .arg(format!("sine=frequency=440:sample_rate=16000:duration={dur}"))
            .args(["-c:a", "aac", "-shortest"]);
    }
    cmd.args(["-c:v", "libx264", "-pix_fmt", "yuv420p"]).arg(path);
    let status = cmd.status().ok()?;
    status.success().then_some(())
}
