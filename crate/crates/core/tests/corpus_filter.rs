
use std::path::{Path, PathBuf};

use egostream_core::config::IngestConfig;
use egostream_core::corpus::{
    build_manifest, filter_corpus, filter_scored, motion_score, motion_score_frames, ClipInput, MotionMeasure, ScoredClip,
};
use egostream_core::gateway::mock::{HashingEmbedder, DEFAULT_EMBED_SEED};
use egostream_core::ingest::decode::{Pattern, SyntheticClip};
use egostream_core::retrieval::RetrievalIndex;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const COMMON: [&str; 4] = ["cut the carrot", "stir the soup", "pour the milk", "wash the bowl"];
const SQUEEZE: [usize; 3] = [3, 17, 42];
const KNEAD: [usize; 2] = [5, 55];

fn write_clip(dir: &Path, name: &str, clip: &SyntheticClip) -> PathBuf {
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_string(clip).unwrap()).unwrap();
    path
}

/// 100 clips: every tenth flickers (score 1), every tenth + 1 is missing,
/// the rest are still (score 0). Five clips use verbs seen fewer than four times.
fn hundred_clip_corpus(dir: &Path) -> Vec<ClipInput> {
    (0..100)
        .map(|i| {
            let name = format!("clip{i:03}");
            let path = match i % 10 {
                0 => write_clip(dir, &name, &SyntheticClip::new(Pattern::Flicker, 5.0, 1.0).with_size(8, 6)),
                1 => dir.join(format!("{name}.missing.json")),
                _ if i % 2 == 0 => write_clip(dir, &name, &SyntheticClip::new(Pattern::Static, 5.0, 1.0).with_size(8, 6)),
                _ => write_clip(dir, &name, &SyntheticClip::new(Pattern::Gradient, 5.0, 1.0).with_size(8, 6)),
            };
            let narration = if SQUEEZE.contains(&i) {
                "squeeze the lemon".to_string()
            } else if KNEAD.contains(&i) {
                "knead the dough".to_string()
            } else {
                COMMON[i % 4].to_string()
            };
            ClipInput {
                clip_id: name,
                path,
                narration,
            }
        })
        .collect()
}

#[test]
fn hundred_clips_partition_as_constructed() {
    let dir = tempfile::tempdir().unwrap();
    let clips = hundred_clip_corpus(dir.path());
    let (kept, report) = filter_corpus(&clips, 0.5, 4, &IngestConfig::default()).unwrap();
    assert_eq!(
        (report.total, report.kept, report.dropped_motion, report.dropped_verb_freq, report.undecodable),
        (100, 75, 20, 5, 10)
    );
    assert_eq!(report.kept + report.dropped_motion + report.dropped_verb_freq, report.total);
    assert_eq!(kept.len(), 75);
    assert!(kept.windows(2).all(|w| w[0].clip_id < w[1].clip_id));
    assert!(kept.iter().all(|c| c.motion_score == 0.0 && c.verbs.len() == 1));

    // Vacuous thresholds keep everything that decodes.
    let (_, loose) = filter_corpus(&clips, 1.01, 1, &IngestConfig::default()).unwrap();
    assert_eq!((loose.kept, loose.dropped_motion), (90, 10));
}

#[test]
fn shuffled_corpus_gives_the_same_result() {
    let dir = tempfile::tempdir().unwrap();
    let clips = hundred_clip_corpus(dir.path());
    let cfg = IngestConfig::default();
    let baseline = filter_corpus(&clips, 0.5, 4, &cfg).unwrap();
    let mut shuffled = clips.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(11));
    assert_eq!(filter_corpus(&shuffled, 0.5, 4, &cfg).unwrap(), baseline);
}

fn scored(i: usize, score: Option<f64>, narration: &str) -> ScoredClip {
    ScoredClip {
        clip: ClipInput {
            clip_id: format!("c{i:03}"),
            path: PathBuf::from(format!("c{i:03}.json")),
            narration: narration.into(),
        },
        motion: score
            .map(|score| MotionMeasure {
                score,
                duration_s: Some(1.0),
            })
            .ok_or_else(|| "undecodable".to_string()),
    }
}

const NARRATIONS: &[&str] = &[
    "cut the carrot", "stir the soup", "pour the milk and stir", "squeeze the lemon", "knead the dough", "slice bread",
    "peel and cut the potato",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn filter_is_order_insensitive_and_conserves_counts(
        rows in prop::collection::vec((prop::option::weighted(0.9, 0.0f64..1.0), prop::sample::select(NARRATIONS)), 0..60),
        theta_m in 0.01f64..1.01,
        theta_v in 1u64..6,
        seed in any::<u64>(),
    ) {
        let clips: Vec<ScoredClip> = rows.iter().enumerate().map(|(i, (s, n))| scored(i, *s, n)).collect();
        let (kept, report) = filter_scored(clips.clone(), theta_m, theta_v).unwrap();
        prop_assert_eq!(report.kept + report.dropped_motion + report.dropped_verb_freq, report.total);
        prop_assert_eq!(report.kept as usize, kept.len());
        let mut shuffled = clips;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(filter_scored(shuffled, theta_m, theta_v).unwrap(), (kept, report));
    }
}

#[test]
fn one_rare_verb_drops_its_clip() {
    let mut clips: Vec<ScoredClip> = (0..6).map(|i| scored(i, Some(0.1), "cut the carrot")).collect();
    clips.push(scored(6, Some(0.1), "squeeze three oranges"));
    let (kept, report) = filter_scored(clips, 0.5, 5).unwrap();
    assert_eq!((report.kept, report.dropped_verb_freq), (6, 1));
    assert!(kept.iter().all(|c| c.clip_id != "c006"));
}

#[test]
fn motion_scores_of_known_patterns() {
    let cfg = IngestConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let still = write_clip(dir.path(), "still", &SyntheticClip::new(Pattern::Static, 10.0, 1.0));
    let flicker = write_clip(dir.path(), "flicker", &SyntheticClip::new(Pattern::Flicker, 10.0, 1.0));
    let pan = write_clip(dir.path(), "pan", &SyntheticClip::new(Pattern::Pan, 10.0, 2.0).with_amplitude(3.0));
    assert_eq!(motion_score(&still, &cfg).unwrap().score, 0.0);
    assert_eq!(motion_score(&flicker, &cfg).unwrap().score, 1.0);
    let a = motion_score(&pan, &cfg).unwrap().score;
    let b = motion_score(&pan, &cfg).unwrap().score;
    assert!(a > 0.0 && (a - b).abs() < 1e-6);
}

#[test]
fn more_noise_means_more_motion() {
    let mut last = -1.0;
    for amplitude in [0.0, 4.0, 16.0, 48.0, 100.0] {
        let clip = SyntheticClip::new(Pattern::Noise, 10.0, 1.0).with_amplitude(amplitude);
        let frames: Vec<_> = (0..clip.frame_count())
            .map(|i| egostream_core::ingest::decode::RawFrame {
                t: None,
                width: clip.width,
                height: clip.height,
                pixels: clip.render(i),
            })
            .collect();
        let score = motion_score_frames(&frames).unwrap();
        assert!(score > last, "amplitude {amplitude}: {score} <= {last}");
        last = score;
    }
}

#[test]
fn manifest_is_deterministic_and_loads_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let clips: Vec<ScoredClip> = (0..10).map(|i| scored(i, Some(0.05), COMMON[i % 4])).collect();
    let (kept, _) = filter_scored(clips, 0.5, 1).unwrap();
    let embedder = HashingEmbedder::new(256, DEFAULT_EMBED_SEED);
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    assert_eq!(build_manifest(&kept, &embedder, &a).unwrap(), 10);
    build_manifest(&kept, &embedder, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let index = RetrievalIndex::build(&a, Some(256)).unwrap();
    assert_eq!((index.len(), index.normalized_on_load()), (10, 0));

    let empty = dir.path().join("empty.jsonl");
    assert_eq!(build_manifest(&[], &embedder, &empty).unwrap(), 0);
    assert!(RetrievalIndex::build(&empty, None).unwrap().is_empty());
}
