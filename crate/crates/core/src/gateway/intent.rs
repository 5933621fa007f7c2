use serde::{Deserialize, Serialize};

use crate::text::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentKind {
    CurrentScene,
    Grounding,
    Summarize,
    Plan,
    Generate,
    Retrieve,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub kind: IntentKind,
    pub argument: String,
}

const GROUNDING: &[&str] = &["when did", "when was", "when were", "what time", "at what point", "how long ago"];
const SUMMARIZE: &[&str] = &["summarize", "summarise", "summary", "what have i done", "recap"];
const PLAN: &[&str] = &[
    "what should i do next",
    "what do i do next",
    "remaining steps",
    "next step",
    "next steps",
    "whats next",
    "what is next",
    "what remains",
    "what is left",
    "whats left",
];
const VISUAL: &[&str] = &[
    "show me",
    "demonstrate",
    "generate",
    "visualize",
    "visualise",
    "looks like",
    "look like",
    "predict the next action",
];

/// `phrase` occurs in `norm` on token boundaries. Both must be normalised.
fn has_phrase(norm: &str, phrase: &str) -> bool {
    let padded = format!(" {norm} ");
    padded.contains(&format!(" {phrase} "))
}

fn any_phrase(norm: &str, phrases: &[&str]) -> bool {
    phrases.iter().any(|p| has_phrase(norm, p))
}

fn is_retrieval(norm: &str) -> bool {
    let visual_how = (has_phrase(norm, "show me") || has_phrase(norm, "demonstrate")) && has_phrase(norm, "how");
    visual_how || norm.starts_with("how to ") || has_phrase(norm, "tutorial")
}

/// Deterministic rule cascade; the default branch makes it total.
pub fn route_intent(query: &str) -> Intent {
    let norm = normalize(query);
    let kind = if any_phrase(&norm, GROUNDING) {
        IntentKind::Grounding
    } else if any_phrase(&norm, SUMMARIZE) {
        IntentKind::Summarize
    } else if any_phrase(&norm, PLAN) {
        IntentKind::Plan
    } else if is_retrieval(&norm) {
        IntentKind::Retrieve
    } else if any_phrase(&norm, VISUAL) {
        IntentKind::Generate
    } else {
        IntentKind::CurrentScene
    };
    Intent {
        kind,
        argument: query.split_whitespace().collect::<Vec<_>>().join(" "),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationDecision {
    pub generate: bool,
    pub prompt: String,
}

/// Whether the query asks for a visual demonstration rather than a textual
/// answer. The prompt is the query itself.
pub fn needs_generation(query: &str) -> GenerationDecision {
    let norm = normalize(query);
    let generate = !norm.is_empty() && !is_retrieval(&norm) && any_phrase(&norm, VISUAL);
    GenerationDecision {
        generate,
        prompt: query.trim().to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn routing_examples() {
        assert_eq!(route_intent("When did I add sugar?").kind, IntentKind::Grounding);
        assert_eq!(route_intent("what am I doing now?").kind, IntentKind::CurrentScene);
        assert_eq!(route_intent("show me how to cut the tomato").kind, IntentKind::Retrieve);
        assert_eq!(route_intent("How to cut the tomato").kind, IntentKind::Retrieve);
        assert_eq!(route_intent("Can you summarize what I did?").kind, IntentKind::Summarize);
        assert_eq!(route_intent("what have I done so far").kind, IntentKind::Summarize);
        assert_eq!(route_intent("what is the next step?").kind, IntentKind::Plan);
        assert_eq!(route_intent("What are the remaining steps to finish the salad?").kind, IntentKind::Plan);
        assert_eq!(route_intent("show me what the next action looks like").kind, IntentKind::Generate);
        assert_eq!(route_intent("predict the next action").kind, IntentKind::Generate);
        // token boundaries: "whenever" is not "when"
        assert_eq!(route_intent("whenever did it rain").kind, IntentKind::CurrentScene);
    }

    #[test]
    fn argument_is_cleaned() {
        assert_eq!(route_intent("  when did   I add sugar? ").argument, "when did I add sugar?");
    }

    #[test]
    fn generation_gate() {
        let d = needs_generation("show me what the next action looks like");
        assert!(d.generate);
        assert_eq!(d.prompt, "show me what the next action looks like");
        assert!(!needs_generation("what is the next step?").generate);
        assert!(!needs_generation("").generate);
        assert!(!needs_generation("  ?! ").generate);
        assert!(!needs_generation("show me how to cut the tomato").generate);
    }

    proptest! {
        #[test]
        fn routing_is_total_and_deterministic(s in "\\PC{0,80}") {
            let a = route_intent(&s);
            let b = route_intent(&s);
            prop_assert_eq!(a, b);
        }
    }
}
