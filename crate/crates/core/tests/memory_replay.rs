mod common;


use common::*;
use egostream_core::gateway::{AdapterError, Captioner};
use egostream_core::memory::{MemoryError, MemoryLog, SharedMemoryLog};
use egostream_core::orchestrator::{dispatch, run_memory_loop, snapshot_for_dispatch, Assistant, MemoryLoop};
use egostream_core::timeline::format_timestamp;
use egostream_core::{Config, Frame};
use proptest::prelude::*;

#[test]
fn full_replay_yields_monotone_entries_without_large_gaps() {
    let script = cooking_script();
    let log = cooking_log(&script);
    let entries = log.all_entries().unwrap();
    assert!((23..=24).contains(&entries.len()), "{} entries", entries.len());
    for pair in entries.windows(2) {
        assert!(pair[0].t_start < pair[1].t_start);
        assert!(pair[1].t_end.seconds() - pair[0].t_end.seconds() <= 10.0);
    }
    assert!(entries[0].t_end.seconds() <= 10.0);
    assert_eq!(log.health().ticks_skipped, 0);
}

#[test]
fn sugar_tick_covers_the_annotation() {
    let log = cooking_log(&cooking_script());
    let hits = log.query_by_time(56.0, 57.0).unwrap();
    let sugar: Vec<_> = hits.iter().filter(|e| e.description == "adds sugar to the bowl").collect();
    assert_eq!(sugar.len(), 1);
    assert_eq!((sugar[0].t_start.seconds(), sugar[0].t_end.seconds()), (56.0, 60.0));
    assert_eq!(format_timestamp(sugar[0].t_start.midpoint(sugar[0].t_end)), "58.0s");
}

#[test]
fn queries_do_not_change_the_entry_count() {
    let script = cooking_script();
    let baseline = cooking_log(&script).len();

    let gw = gateway(&script);
    let assistant = Assistant::new(gw.clone(), speech(&script), None, &Config::default());
    let shared = SharedMemoryLog::new(empty_log());
    let mut lp = MemoryLoop::new(5.0, 4.0).retain_at_least(10.0);
    let mut answered = 0;
    for frame in sampled_frames(120.0, 2.0) {
        let now = frame.media_time;
        lp.on_frame(frame, &shared, gw.captioner(), gw.embedder());
        let q = match now.seconds() {
            s if s == 36.0 => "what am I doing now?",
            s if s == 74.5 => "when did I add sugar",
            s if s == 90.0 => "what are the remaining steps to finish the pancake?",
            _ => continue,
        };
        let snap = snapshot_for_dispatch(&shared, lp.recent_frames(), now);
        let resp = dispatch(q, &snap, &assistant);
        assert!(resp.error.is_none(), "{q}: {:?}", resp.error);
        answered += 1;
    }
    assert_eq!(answered, 3);
    assert_eq!(shared.snapshot().len(), baseline);
}

/// Fails every window ending in `[40, 60)`, as if the captioner were down.
struct FlakyCaptioner<C>(C);

impl<C: Captioner> Captioner for FlakyCaptioner<C> {
    fn caption(&self, frames: &[Frame]) -> Result<String, AdapterError> {
        let end = frames.iter().map(|f| f.media_time.seconds()).fold(0.0, f64::max);
        if (40.0..60.0).contains(&end) {
            return Err(AdapterError::Unreachable("captioner offline".into()));
        }
        self.0.caption(frames)
    }
}

#[test]
fn outage_costs_exactly_the_missed_ticks() {
    let script = cooking_script();
    let baseline = cooking_log(&script).len();
    let gw = gateway(&script);
    let flaky = FlakyCaptioner(egostream_core::gateway::mock::ScriptedCaptioner::new(script.clone()));
    let shared = SharedMemoryLog::new(empty_log());
    let outcomes = run_memory_loop(sampled_frames(120.0, 2.0), &shared, &flaky, gw.embedder());
    let log = shared.snapshot();
    assert_eq!(log.len(), baseline - 4);
    let gaps: Vec<f64> = log.health().gaps.iter().map(|g| g.window_end.seconds()).collect();
    assert_eq!(gaps, [40.0, 45.0, 50.0, 55.0]);
    assert_eq!(outcomes.iter().filter(|o| o.error.is_some()).count(), 4);
    assert!(log.all_entries().unwrap().iter().any(|e| e.t_end.seconds() == 60.0));
}

#[test]
fn snapshots_taken_before_a_tick_do_not_see_it() {
    let script = cooking_script();
    let gw = gateway(&script);
    let shared = SharedMemoryLog::new(empty_log());
    let frames = sampled_frames(120.0, 2.0);
    let (head, tail) = frames.split_at(60);
    run_memory_loop(head.to_vec(), &shared, gw.captioner(), gw.embedder());
    let before = shared.snapshot();
    let n = before.len();
    let mut lp = MemoryLoop::new(5.0, 4.0);
    for f in head {
        lp.on_frame(f.clone(), &SharedMemoryLog::new(empty_log()), gw.captioner(), gw.embedder());
    }
    for f in tail {
        lp.on_frame(f.clone(), &shared, gw.captioner(), gw.embedder());
    }
    assert_eq!(before.len(), n);
    assert!(shared.snapshot().len() > n);
}

#[test]
fn round_trip_of_the_replay_log() {
    let log = cooking_log(&cooking_script());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("memory.jsonl");
    log.persist(&path).unwrap();
    let back = MemoryLog::load(&path).unwrap();
    assert_eq!(back.all_entries().unwrap(), log.all_entries().unwrap());

    let raw = std::fs::read_to_string(&path).unwrap();
    let cut = raw.len() - raw.lines().last().unwrap().len() / 2 - 1;
    std::fs::write(&path, &raw[..cut]).unwrap();
    match MemoryLog::load(&path) {
        Err(MemoryError::CorruptRecord { line, .. }) => assert_eq!(line, log.len() + 1),
        other => panic!("expected corrupt_record, got {other:?}"),
    }
}

fn unit(raw: &[f32]) -> Option<Vec<f32>> {
    let n = raw.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    (n > 1e-3).then(|| raw.iter().map(|x| (f64::from(*x) / n) as f32).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn persisted_logs_load_back_identically(
        spans in prop::collection::vec((0.0f64..3.0, 0.1f64..4.0, "[a-z ]{1,24}", prop::collection::vec(-1.0f32..1.0, 8)), 0..30),
        spill in prop::option::of(1usize..8),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let mut log = MemoryLog::new("prop", 5.0, 4.0);
        if let Some(threshold) = spill {
            log = log.with_spill(threshold, dir.path().to_path_buf());
        }
        let mut start = 0.0;
        for (advance, len, desc, raw) in spans {
            start += advance;
            let Some(emb) = unit(&raw) else { continue };
            log.append(t(start), t(start + len), desc, emb).unwrap();
        }
        let path = dir.path().join("log.jsonl");
        log.persist(&path).unwrap();
        let back = MemoryLog::load(&path).unwrap();
        prop_assert_eq!(back.len(), log.len());
        prop_assert_eq!(back.all_entries().unwrap(), log.all_entries().unwrap());
        prop_assert_eq!(back.period_s(), log.period_s());
    }
}
