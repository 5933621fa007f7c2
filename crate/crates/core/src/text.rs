//! Lexical helpers shared by wake matching, the mock encoders, clause
//! splitting and verb extraction.

/// Lowercases, replaces every non-alphanumeric character (apostrophes are
/// dropped, everything else becomes a space) and collapses whitespace.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.chars() {
        if ch == '\'' || ch == '\u{2019}' {
            continue;
        }
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

pub fn tokens(text: &str) -> Vec<String> {
    normalize(text).split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect()
}

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

pub fn is_action_verb(lemma: &str) -> bool {
    ACTION_VERBS.binary_search(&lemma).is_ok()
}

/// Reduces an inflected token to a base form. Candidate stems are checked
/// against the verb lexicon first so that e.g. "adding" maps to "add" and
/// "cutting" to "cut"; anything else falls back to plural stripping.
pub fn lemma(token: &str) -> String {
    if is_action_verb(token) {
        return token.to_string();
    }
    for cand in verb_candidates(token) {
        if is_action_verb(&cand) {
            return cand;
        }
    }
    if let Some(stem) = token.strip_suffix("ies") {
        if stem.len() >= 2 {
            return format!("{stem}y");
        }
    }
    for suffix in ["sses", "shes", "ches", "xes"] {
        if token.ends_with(suffix) {
            return token[..token.len() - 2].to_string();
        }
    }
    if token.len() > 3 && token.ends_with('s') && !token.ends_with("ss") && !token.ends_with("us") {
        return token[..token.len() - 1].to_string();
    }
    token.to_string()
}

fn verb_candidates(token: &str) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(stem) = token.strip_suffix("ies") {
        out.push(format!("{stem}y"));
    }
    if let Some(stem) = token.strip_suffix("es") {
        out.push(stem.to_string());
    }
    if let Some(stem) = token.strip_suffix('s') {
        out.push(stem.to_string());
    }
    for suffix in ["ing", "ed"] {
        if let Some(stem) = token.strip_suffix(suffix) {
            if stem.len() < 2 {
                continue;
            }
            out.push(stem.to_string());
            out.push(format!("{stem}e"));
            let b = stem.as_bytes();
            if b.len() >= 3 && b[b.len() - 1] == b[b.len() - 2] {
                out.push(stem[..stem.len() - 1].to_string());
            }
            if suffix == "ed" {
                if let Some(s) = stem.strip_suffix('i') {
                    out.push(format!("{s}y"));
                }
            }
        }
    }
    out
}

/// Lemmas of the non-stopword tokens. Falls back to every token when the
/// text consists only of stopwords.
pub fn content_lemmas(text: &str) -> Vec<String> {
    let toks = tokens(text);
    let content: Vec<String> = toks
        .iter()
        .filter(|t| !is_stopword(t))
        .map(|t| lemma(t))
        .collect();
    if content.is_empty() {
        toks.iter().map(|t| lemma(t)).collect()
    } else {
        content
    }
}

/// Tokens of `text` whose lemma is in the action-verb lexicon, as they appear.
pub fn extract_verbs(text: &str) -> Vec<String> {
    tokens(text)
        .into_iter()
        .filter(|t| is_action_verb(&lemma(t)))
        .collect()
}

/// 64-bit FNV-1a, salted with `seed`. Stable across platforms and releases.
pub fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

// Sorted; binary searched.
const STOPWORDS: &[&str] = &[
    "a", "about", "am", "an", "and", "any", "are", "as", "at", "be", "been", "being", "but", "by",
    "can", "could", "did", "do", "does", "doing", "for", "from", "had", "has", "have", "having",
    "he", "her", "here", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "just",
    "me", "my", "myself", "now", "of", "on", "onto", "or", "our", "she", "so", "some", "that",
    "the", "their", "them", "then", "there", "these", "they", "this", "those", "time", "to",
    "up", "us", "was", "we", "were", "what", "when", "where", "which", "while", "who", "why",
    "will", "with", "would", "you", "your",
];

// Sorted; binary searched. Common English action verbs (base forms).
const ACTION_VERBS: &[&str] = &[
    "add", "adjust", "apply", "arrange", "assemble", "attach", "bake", "beat", "bend", "blend",
    "boil", "break", "bring", "brush", "build", "carry", "catch", "check", "chop", "clean", "clear",
    "climb", "close", "coat", "collect", "combine", "connect", "cook", "cool", "cover", "crack",
    "cross", "crush", "cut", "dice", "dig", "dip", "drain", "draw", "drill", "drink", "drive",
    "drop", "dry", "dust", "eat", "empty", "fill", "flip", "fold", "fry", "garnish", "get", "give",
    "glue", "grab", "grate", "grill", "grind", "hammer", "hang", "heat", "hold", "insert", "knead",
    "knock", "lay", "lift", "light", "load", "lock", "look", "make", "mash", "measure", "melt",
    "mix", "move", "open", "pack", "paint", "paste", "peel", "pick", "pinch", "place", "plant",
    "play", "plug", "point", "pour", "prepare", "press", "pull", "push", "put", "reach", "read",
    "release", "remove", "rinse", "roll", "rotate", "rub", "saw", "scoop", "scrape", "scrub",
    "season", "separate", "serve", "set", "sew", "shake", "shape", "sharpen", "shred", "sieve",
    "sift", "simmer", "slice", "slide", "smooth", "soak", "spin", "spoon", "spray", "spread",
    "sprinkle", "squeeze", "stack", "steam", "stir", "stop", "store", "strain", "stretch", "stuff",
    "sweep", "swing", "take", "tap", "taste", "throw", "tie", "tighten", "toss", "touch",
    "transfer", "trim", "turn", "twist", "type", "unlock", "unscrew", "use", "walk", "wash",
    "weigh", "whip", "whisk", "wipe", "wrap", "write",
];
