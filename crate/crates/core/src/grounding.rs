//! Questions about the past, answered from the memory log.

use serde::Serialize;
use thiserror::Error;

use crate::gateway::{embed_normalized, AdapterError, Captioner, ChatModel, TextEmbedder};
use crate::memory::{MemoryError, MemoryLog};
use crate::text::content_lemmas;
use crate::timeline::{format_timestamp, Frame, MediaTime};

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error("no memory entry matches the query")]
    NoMatch,
    #[error("query is empty")]
    EmptyQuery,
    #[error("memory log is empty")]
    EmptyLog,
    #[error("no memory entries in [{0}, {1}]")]
    EmptyWindow(f64, f64),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

impl GroundingError {
    pub fn code(&self) -> &'static str {
        match self {
            GroundingError::NoMatch => "no_match",
            GroundingError::EmptyQuery => "empty_query",
            GroundingError::EmptyLog => "empty_log",
            GroundingError::EmptyWindow(..) => "empty_window",
            GroundingError::Adapter(e) => e.code(),
            GroundingError::Memory(_) => "memory_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundingHit {
    pub entry_id: u64,
    pub t_start: MediaTime,
    pub t_end: MediaTime,
    pub score: f64,
    pub description: String,
    /// Span midpoint, e.g. `"58.0s"`.
    pub display: String,
    /// The query clause this hit answers, for multi-action queries.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clause: Option<String>,
}

/// Scores every entry against the query and keeps those at or above `tau`,
/// best first.
pub fn ground(
    query: &str,
    log: &MemoryLog,
    embedder: &dyn TextEmbedder,
    tau: f64,
    max_hits: usize,
) -> Result<Vec<GroundingHit>, GroundingError> {
    if query.trim().is_empty() {
        return Err(GroundingError::EmptyQuery);
    }
    if log.is_empty() {
        return Err(GroundingError::EmptyLog);
    }
    let q = match embed_normalized(embedder, query) {
        Err(AdapterError::EmptyText) => return Err(GroundingError::EmptyQuery),
        other => other?,
    };
    let hits: Vec<GroundingHit> = log
        .query_by_text(&q, max_hits, tau)?
        .into_iter()
        .map(|s| GroundingHit {
            entry_id: s.entry.id,
            t_start: s.entry.t_start,
            t_end: s.entry.t_end,
            score: s.score,
            display: format_timestamp(s.entry.t_start.midpoint(s.entry.t_end)),
            description: s.entry.description,
            clause: None,
        })
        .collect();
    if hits.is_empty() {
        return Err(GroundingError::NoMatch);
    }
    Ok(hits)
}

/// Question openers removed from the front of a clause.
const CLAUSE_LEADS: &[&str] = &[
    "when did i", "when did you", "when did we", "when was", "when were", "what time did i", "at what point did i",
    "how long ago did i",
];

fn strip_lead(clause: &str) -> String {
    let words: Vec<&str> = clause.split_whitespace().collect();
    let lower: Vec<String> = words
        .iter()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .collect();
    for lead in CLAUSE_LEADS {
        let n = lead.split(' ').count();
        if lower.len() > n && lower[..n].join(" ") == *lead {
            return words[n..].join(" ");
        }
    }
    clause.to_string()
}

/// Splits a query into action clauses on "and" and commas, dropping a
/// leading question opener. Clauses without any content word are dropped.
pub fn split_clauses(query: &str) -> Vec<String> {
    let mut clauses = Vec::new();
    for part in query.split([',', ';']) {
        let mut current: Vec<&str> = Vec::new();
        for word in part.split_whitespace() {
            let bare = word.trim_matches(|c: char| !c.is_alphanumeric());
            if bare.eq_ignore_ascii_case("and") || bare == "&" {
                clauses.push(current.join(" "));
                current.clear();
            } else {
                current.push(word);
            }
        }
        clauses.push(current.join(" "));
    }
    clauses
        .into_iter()
        .map(|c| strip_lead(c.trim()).trim_end_matches(['?', '.', '!']).to_string())
        .filter(|c| !content_lemmas(c).is_empty())
        .collect()
}

/// Grounds each clause on its own and returns the best hit per clause, in
/// clause order. A clause with no match contributes nothing.
pub fn ground_multi(
    query: &str,
    log: &MemoryLog,
    embedder: &dyn TextEmbedder,
    tau: f64,
) -> Result<Vec<GroundingHit>, GroundingError> {
    let clauses = split_clauses(query);
    if clauses.len() <= 1 {
        return ground(query, log, embedder, tau, 1);
    }
    let mut hits = Vec::new();
    for clause in clauses {
        match ground(&clause, log, embedder, tau, 1) {
            Ok(found) => hits.extend(found.into_iter().map(|mut h| {
                h.clause = Some(clause.clone());
                h
            })),
            Err(GroundingError::NoMatch | GroundingError::EmptyQuery) => {}
            Err(e) => return Err(e),
        }
    }
    if hits.is_empty() {
        return Err(GroundingError::NoMatch);
    }
    Ok(hits)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub t_start: MediaTime,
    pub t_end: MediaTime,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSummary {
    pub steps: Vec<Step>,
    pub source_entry_ids: Vec<u64>,
}

/// Entries overlapping `[t_lo, t_hi]` with consecutive duplicates merged,
/// rewritten by the chat model (the mock keeps them verbatim).
pub fn summarize(log: &MemoryLog, t_lo: f64, t_hi: f64, chat: &dyn ChatModel) -> Result<StepSummary, GroundingError> {
    let entries = log.query_by_time(t_lo, t_hi)?;
    if entries.is_empty() {
        return Err(GroundingError::EmptyWindow(t_lo, t_hi));
    }
    let mut steps: Vec<Step> = Vec::new();
    for e in &entries {
        match steps.last_mut() {
            Some(last) if last.text == e.description => last.t_end = last.t_end.max(e.t_end),
            _ => steps.push(Step {
                t_start: e.t_start,
                t_end: e.t_end,
                text: e.description.clone(),
            }),
        }
    }
    let texts: Vec<String> = steps.iter().map(|s| s.text.clone()).collect();
    let rewritten = chat.rewrite_steps(&texts)?;
    if rewritten.len() != steps.len() || rewritten.iter().any(|t| t.trim().is_empty()) {
        return Err(AdapterError::MalformedReply(format!(
            "expected {} non-empty steps, got {}",
            steps.len(),
            rewritten.len()
        ))
        .into());
    }
    for (step, text) in steps.iter_mut().zip(rewritten) {
        step.text = text;
    }
    Ok(StepSummary {
        steps,
        source_entry_ids: entries.iter().map(|e| e.id).collect(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct PlanOptions {
    pub recent_k: usize,
    /// Maximum document length in characters. History lines are dropped
    /// oldest first to fit; CURRENT and QUESTION are never cut.
    pub budget_chars: usize,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            recent_k: 10,
            budget_chars: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextDocument {
    pub history: Vec<String>,
    pub current: String,
    pub question: String,
}

pub const UNAVAILABLE_VIEW: &str = "(current view unavailable)";

impl ContextDocument {
    pub fn render(&self) -> String {
        let mut out = String::from("HISTORY\n");
        for line in &self.history {
            out.push_str(line);
            out.push('\n');
        }
        out.push_str("CURRENT\n");
        out.push_str(&self.current);
        out.push_str("\nQUESTION\n");
        out.push_str(&self.question);
        out.push('\n');
        out
    }
}

/// Context for planning questions: the latest memory entries, a caption of
/// the current frames and the question.
pub fn plan_context(
    query: &str,
    log: &MemoryLog,
    current_frames: &[Frame],
    captioner: &dyn Captioner,
    opts: PlanOptions,
) -> ContextDocument {
    let current = if current_frames.is_empty() {
        UNAVAILABLE_VIEW.to_string()
    } else {
        captioner
            .caption(current_frames)
            .ok()
            .filter(|c| !c.trim().is_empty())
            .unwrap_or_else(|| UNAVAILABLE_VIEW.to_string())
    };
    let history: Vec<String> = log
        .latest(opts.recent_k)
        .iter()
        .map(|e| format!("[{}] {}", format_timestamp(e.t_start.midpoint(e.t_end)), e.description))
        .collect();
    let mut doc = ContextDocument {
        history,
        current,
        question: query.trim().to_string(),
    };
    while !doc.history.is_empty() && doc.render().chars().count() > opts.budget_chars {
        doc.history.remove(0);
    }
    doc
}
