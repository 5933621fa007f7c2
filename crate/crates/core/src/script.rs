//! Replay fixtures driving the deterministic mock adapters.
//!
//! * annotation track, JSON Lines `{t_start, t_end, description}`: what the
//!   mock captioner "sees";
//! * QA table, JSON Lines `{t, question, answer}`: what the mock chat model says;
//! * scripted transcript, text lines `<media_time> <utterance>`: what the
//!   mock ASR hears.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeline::MediaTime;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub t_start: MediaTime,
    pub t_end: MediaTime,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaEntry {
    pub t: MediaTime,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedUtterance {
    pub t: MediaTime,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayScript {
    pub annotations: Vec<Annotation>,
    pub qa: Vec<QaEntry>,
    pub transcript: Vec<ScriptedUtterance>,
}

/// Optional fixture paths attached to a stream registration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String, ScriptError> {
    std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(raw: &str) -> Result<Vec<T>, ScriptError> {
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ScriptError::Line {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn parse_annotations(raw: &str) -> Result<Vec<Annotation>, ScriptError> {
    let mut rows: Vec<Annotation> = parse_jsonl(raw)?;
    for (i, a) in rows.iter().enumerate() {
        if a.t_start > a.t_end {
            return Err(ScriptError::Line {
                line: i + 1,
                message: "annotation ends before it starts".into(),
            });
        }
    }
    rows.sort_by(|a, b| a.t_start.cmp(&b.t_start));
    Ok(rows)
}

pub fn parse_qa(raw: &str) -> Result<Vec<QaEntry>, ScriptError> {
    parse_jsonl(raw)
}

/// Parses `<media_time> <utterance>` lines; `#` starts a comment line.
pub fn parse_transcript(raw: &str) -> Result<Vec<ScriptedUtterance>, ScriptError> {
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (ts, text) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let t = ts
            .parse::<f64>()
            .ok()
            .and_then(|v| MediaTime::new(v).ok())
            .ok_or_else(|| ScriptError::Line {
                line: i + 1,
                message: format!("bad media time {ts:?}"),
            })?;
        out.push(ScriptedUtterance {
            t,
            text: text.trim().to_string(),
        });
    }
    out.sort_by(|a, b| a.t.cmp(&b.t));
    Ok(out)
}

impl ReplayScript {
    pub fn load(paths: &ScriptPaths) -> Result<ReplayScript, ScriptError> {
        let mut script = ReplayScript::default();
        if let Some(p) = &paths.annotations {
            script.annotations = parse_annotations(&read(p)?)?;
        }
        if let Some(p) = &paths.qa {
            script.qa = parse_qa(&read(p)?)?;
        }
        if let Some(p) = &paths.transcript {
            script.transcript = parse_transcript(&read(p)?)?;
        }
        Ok(script)
    }

    /// The annotation overlapping `[lo, hi]` the most; earliest wins ties.
    pub fn annotation_for(&self, lo: MediaTime, hi: MediaTime) -> Option<&Annotation> {
        let mut best: Option<(&Annotation, f64)> = None;
        for a in &self.annotations {
            let overlap = hi.seconds().min(a.t_end.seconds()) - lo.seconds().max(a.t_start.seconds());
            let point_hit = lo == hi && a.t_start <= lo && lo <= a.t_end;
            if overlap > 0.0 || point_hit {
                let score = overlap.max(0.0);
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((a, score));
                }
            }
        }
        best.map(|(a, _)| a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: f64) -> MediaTime {
        MediaTime::new(s).unwrap()
    }

    #[test]
    fn transcript_lines() {
        let rows = parse_transcript("# comment\n58.5 hey vinci when did I add sugar\n\n3 hi\n").unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].t, t(3.0));
        assert_eq!(rows[1].text, "hey vinci when did I add sugar");
        assert!(matches!(parse_transcript("x hello"), Err(ScriptError::Line { line: 1, .. })));
    }

    #[test]
    fn annotation_lookup_prefers_largest_overlap() {
        let raw = r#"{"t_start":50,"t_end":54,"description":"adds flour to the bowl"}
{"t_start":55,"t_end":59,"description":"adds sugar to the bowl"}"#;
        let script = ReplayScript {
            annotations: parse_annotations(raw).unwrap(),
            ..Default::default()
        };
        assert_eq!(script.annotation_for(t(55.0), t(59.0)).unwrap().description, "adds sugar to the bowl");
        assert_eq!(script.annotation_for(t(56.0), t(60.0)).unwrap().description, "adds sugar to the bowl");
        assert_eq!(script.annotation_for(t(51.0), t(55.0)).unwrap().description, "adds flour to the bowl");
        assert!(script.annotation_for(t(60.0), t(64.0)).is_none());
    }

    #[test]
    fn bad_jsonl_reports_line() {
        let err = parse_qa("{\"t\":1,\"question\":\"q\",\"answer\":\"a\"}\n{oops").unwrap_err();
        assert!(matches!(err, ScriptError::Line { line: 2, .. }));
    }
}
