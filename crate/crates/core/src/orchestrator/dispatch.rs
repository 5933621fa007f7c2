use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::config::Config;
use crate::gateway::{needs_generation, AdapterError, GeneratedClip, Intent, IntentKind, ModelGateway};
use crate::grounding::{
    ground, ground_multi, plan_context, split_clauses, summarize, GroundingError, GroundingHit, PlanOptions, StepSummary,
};
use crate::memory::MemoryLog;
use crate::retrieval::{RetrievalHit, RetrievalIndex};
use crate::speech::{AudioRef, SpeechGateway};
use crate::timeline::{Frame, MediaTime};

pub const NO_RECALL_TEXT: &str = "I don't recall seeing that.";
pub const TIMEOUT_TEXT: &str = "Sorry, that took too long. Please ask again.";

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponseMedia {
    Grounding { hits: Vec<GroundingHit> },
    Summary { summary: StepSummary },
    Retrieval { results: Vec<RetrievalHit> },
    Clip { clip: GeneratedClip },
}

impl ResponseMedia {
    pub fn intent_kind(&self) -> IntentKind {
        match self {
            ResponseMedia::Grounding { .. } => IntentKind::Grounding,
            ResponseMedia::Summary { .. } => IntentKind::Summarize,
            ResponseMedia::Retrieval { .. } => IntentKind::Retrieve,
            ResponseMedia::Clip { .. } => IntentKind::Generate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResponseError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssistantResponse {
    pub query: String,
    pub intent: Intent,
    pub text: String,
    pub media: Option<ResponseMedia>,
    pub tts_audio: Option<AudioRef>,
    pub t_issued: MediaTime,
    pub latency_ms: f64,
    pub error: Option<ResponseError>,
}

impl AssistantResponse {
    /// Response for a query that missed the processing deadline.
    pub fn timed_out(query: &str, intent: Intent, t_issued: MediaTime, latency_ms: f64) -> Self {
        AssistantResponse {
            query: query.to_string(),
            intent,
            text: TIMEOUT_TEXT.into(),
            media: None,
            tts_audio: None,
            t_issued,
            latency_ms,
            error: Some(ResponseError {
                code: "processing_timeout".into(),
                message: "no reply before the processing deadline".into(),
            }),
        }
    }
}

/// What a query is answered against: a memory snapshot and the most recent
/// sampled frames, oldest first.
#[derive(Debug, Clone)]
pub struct DispatchSnapshot {
    pub log: Arc<MemoryLog>,
    pub frames: Vec<Frame>,
    pub now: MediaTime,
}

/// Everything dispatch needs besides the snapshot.
#[derive(Debug, Clone)]
pub struct Assistant {
    pub gateway: ModelGateway,
    pub speech: SpeechGateway,
    pub retrieval: Option<Arc<RetrievalIndex>>,
    pub tau: f64,
    pub max_hits: usize,
    pub plan: PlanOptions,
    pub retrieval_k: usize,
    pub chat_frames: usize,
}

impl Assistant {
    pub fn new(gateway: ModelGateway, speech: SpeechGateway, retrieval: Option<Arc<RetrievalIndex>>, cfg: &Config) -> Self {
        Assistant {
            gateway,
            speech,
            retrieval,
            tau: cfg.grounding.tau,
            max_hits: cfg.grounding.max_hits.max(1),
            plan: PlanOptions {
                recent_k: cfg.grounding.recent_k,
                budget_chars: cfg.grounding.context_budget,
            },
            retrieval_k: cfg.retrieval.k.max(1),
            chat_frames: cfg.ingest.chat_frames.max(1),
        }
    }
}

struct Answer {
    text: String,
    media: Option<ResponseMedia>,
    error: Option<ResponseError>,
}

impl Answer {
    fn text(text: String) -> Self {
        Answer {
            text,
            media: None,
            error: None,
        }
    }

    fn failed(code: &str, message: String) -> Self {
        Answer {
            text: format!("Sorry, I couldn't do that right now ({code})."),
            media: None,
            error: Some(ResponseError {
                code: code.into(),
                message,
            }),
        }
    }

    fn adapter(e: AdapterError) -> Self {
        Answer::failed(e.code(), e.to_string())
    }
}

/// Routes the query and answers it from the snapshot. Always returns a
/// response; failures become apology text with an error code.
pub fn dispatch(query: &str, snap: &DispatchSnapshot, a: &Assistant) -> AssistantResponse {
    let started = Instant::now();
    let intent = a.gateway.route(query);
    let recent = &snap.frames[snap.frames.len().saturating_sub(a.chat_frames)..];
    let answer = match intent.kind {
        IntentKind::CurrentScene => chat(a, recent, None, query, snap.now),
        IntentKind::Grounding => answer_grounding(query, snap, a),
        IntentKind::Summarize => answer_summary(snap, a),
        IntentKind::Plan => {
            let doc = plan_context(query, &snap.log, recent, a.gateway.captioner(), a.plan);
            chat(a, recent, Some(doc.render()), query, snap.now)
        }
        IntentKind::Retrieve => answer_retrieval(&intent.argument, a),
        IntentKind::Generate => answer_generation(query, recent, a, snap.now),
    };
    let tts_audio = match a.speech.synthesize(&answer.text) {
        Ok(audio) => Some(audio),
        Err(e) => {
            tracing::warn!(error = %e, "text-to-speech failed; responding without audio");
            None
        }
    };
    AssistantResponse {
        query: query.to_string(),
        intent,
        text: answer.text,
        media: answer.media,
        tts_audio,
        t_issued: snap.now,
        latency_ms: started.elapsed().as_secs_f64() * 1000.0,
        error: answer.error,
    }
}

fn chat(a: &Assistant, frames: &[Frame], context: Option<String>, query: &str, now: MediaTime) -> Answer {
    match a.gateway.chat(frames, context, query, now) {
        Ok(text) => Answer::text(text),
        Err(e) => Answer::adapter(e),
    }
}

fn answer_grounding(query: &str, snap: &DispatchSnapshot, a: &Assistant) -> Answer {
    let embedder = a.gateway.embedder();
    let multi = split_clauses(query).len() > 1;
    let result = if multi {
        ground_multi(query, &snap.log, embedder, a.tau)
    } else {
        ground(query, &snap.log, embedder, a.tau, a.max_hits)
    };
    match result {
        Ok(hits) => {
            let text = if multi {
                let parts: Vec<String> = hits
                    .iter()
                    .map(|h| format!("{} at {}", h.clause.as_deref().unwrap_or(&h.description), h.display))
                    .collect();
                format!("{}.", parts.join("; "))
            } else {
                format!("That was at {}: {}.", hits[0].display, hits[0].description)
            };
            Answer {
                text,
                media: Some(ResponseMedia::Grounding { hits }),
                error: None,
            }
        }
        Err(GroundingError::NoMatch | GroundingError::EmptyLog) => Answer {
            text: NO_RECALL_TEXT.into(),
            media: Some(ResponseMedia::Grounding { hits: Vec::new() }),
            error: None,
        },
        Err(e) => Answer::failed(e.code(), e.to_string()),
    }
}

fn answer_summary(snap: &DispatchSnapshot, a: &Assistant) -> Answer {
    match summarize(&snap.log, 0.0, snap.now.seconds().max(0.0), a.gateway.chat_model()) {
        Ok(summary) => {
            let mut text = String::from("Here is what you have done so far:");
            for (i, step) in summary.steps.iter().enumerate() {
                text.push_str(&format!("\n{}. {}", i + 1, step.text));
            }
            Answer {
                text,
                media: Some(ResponseMedia::Summary { summary }),
                error: None,
            }
        }
        Err(GroundingError::EmptyWindow(..)) => Answer::text("I haven't seen anything to summarize yet.".into()),
        Err(e) => Answer::failed(e.code(), e.to_string()),
    }
}

fn answer_retrieval(argument: &str, a: &Assistant) -> Answer {
    let Some(index) = &a.retrieval else {
        return Answer::failed("retrieval_unavailable", "no retrieval index is loaded".into());
    };
    match index.search(argument, a.gateway.embedder(), a.retrieval_k) {
        Ok(results) if results.is_empty() => Answer {
            text: "I couldn't find a matching how-to video.".into(),
            media: Some(ResponseMedia::Retrieval { results }),
            error: None,
        },
        Ok(results) => {
            let titles: Vec<&str> = results.iter().map(|r| r.title.as_str()).collect();
            Answer {
                text: format!("Here are {} how-to videos: {}.", results.len(), titles.join("; ")),
                media: Some(ResponseMedia::Retrieval { results }),
                error: None,
            }
        }
        Err(e) => Answer::failed(e.code(), e.to_string()),
    }
}

fn answer_generation(query: &str, frames: &[Frame], a: &Assistant, now: MediaTime) -> Answer {
    let decision = needs_generation(query);
    if !decision.generate {
        return chat(a, frames, None, query, now);
    }
    let Some(last) = frames.last() else {
        return Answer::failed("no_frame", "no frame has been sampled yet".into());
    };
    match a.gateway.generate_demo(last, &decision.prompt) {
        Ok(clip) => Answer {
            text: format!("Here is a {:.1} s clip of what that looks like.", clip.duration_s),
            media: Some(ResponseMedia::Clip { clip }),
            error: None,
        },
        Err(e) => Answer::adapter(e),
    }
}
