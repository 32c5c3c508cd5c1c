//! Rule-based stand-ins for the Phase-2 agents: planning, answering from
//! evidence, judging and annotating.

use serde_json::json;

use crate::domain::{Canvas, FrameId, Relation, SpeakerId};
use crate::prompts::{parse_evidence, read_section, EvidenceBlock};
use crate::scene::lexicon::{
    canonical_color, canonical_room, match_object, match_room, number_value, number_word, plural,
};
use crate::scene::{objects_in_text, tokenize, SceneState};

/// Words a query or judgement ignores.
const STOPWORDS: &[&str] = &[
    "a", "an", "the", "it", "its", "it's", "was", "is", "were", "are", "be", "of", "in", "on", "my", "your", "me", "i",
    "you", "what", "which", "that", "this", "there", "like", "to", "do", "did", "does", "can", "could", "remind",
    "tell", "please", "present", "room", "we", "our", "and", "or", "think", "believe", "remember", "recall", "with",
    "for", "at", "about", "by", "has", "have", "had", "one's",
];
const AUXILIARIES: &[&str] =
    &["is", "was", "are", "were", "do", "does", "did", "can", "could", "has", "have", "had", "will", "would", "should"];
const NEGATION_WORDS: &[&str] =
    &["no", "not", "never", "none", "nothing", "neither", "nor", "isn't", "wasn't", "don't", "didn't"];
pub const ABSTAIN: &str = "not specified";

/// Rooms, objects and colour words of `text`, in that order.
pub(crate) fn keywords(text: &str) -> Vec<String> {
    let toks = tokenize(text);
    let toks: Vec<&str> = toks.iter().map(String::as_str).collect();
    let (mut rooms, mut objects, mut attrs, mut others) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut i = 0;
    while i < toks.len() {
        if let Some((r, n)) = match_room(&toks[i..]) {
            rooms.push(r.to_string());
            i += n;
            continue;
        }
        if let Some((o, n, _)) = match_object(&toks[i..]) {
            objects.push(o.to_string());
            i += n;
            continue;
        }
        let t = toks[i];
        if t == "color" || t == "colour" || t == "colors" || t == "colours" {
            attrs.push("color".to_string());
        } else if let Some(c) = canonical_color(t) {
            attrs.push(c.to_string());
        } else if t.len() > 2 && t.chars().all(char::is_alphanumeric) && !STOPWORDS.contains(&t) {
            others.push(t.to_string());
        }
        i += 1;
    }
    let mut out: Vec<String> = Vec::new();
    for k in rooms.into_iter().chain(objects).chain(attrs) {
        if !out.contains(&k) {
            out.push(k);
        }
    }
    if out.is_empty() {
        for k in others {
            if !out.contains(&k) {
                out.push(k);
            }
        }
    }
    out
}

fn asker(user: &str) -> SpeakerId {
    read_section(user, "asker").and_then(|a| a.trim().parse().ok()).unwrap_or(SpeakerId::A)
}

/// POV from deixis, one retrieval over the question keywords, then answer.
pub fn planner(user: &str) -> String {
    let question = read_section(user, "question").unwrap_or("").trim();
    let asker = asker(user);
    let toks = tokenize(question);
    let pov = if toks.iter().any(|t| t == "my" || t == "mine") {
        asker.as_str().to_string()
    } else if toks.iter().any(|t| t == "your" || t == "yours") {
        asker.other().as_str().to_string()
    } else {
        "BOTH".to_string()
    };
    let kw = keywords(question);
    let query = if kw.is_empty() { question.to_string() } else { kw.join(" ") };
    format!("<answer><item>POV {pov}</item><item>RAG[5] {query}</item><item>FINAL_ANSWER {question}</item></answer>")
}

/// RAG steps become keyword queries; other steps pass through.
pub fn refiner(user: &str) -> String {
    let step = read_section(user, "step").unwrap_or("").trim();
    let question = read_section(user, "question").unwrap_or("");
    let refined = match step.strip_prefix("RAG") {
        Some(rest) => {
            let instruction = rest.split_once(']').map_or(rest, |(_, r)| r);
            let kw = keywords(&format!("{instruction} . {question}"));
            if kw.is_empty() {
                instruction.trim().to_string()
            } else {
                kw.join(" ")
            }
        }
        None => step.split_once(' ').map_or("", |(_, r)| r).trim().to_string(),
    };
    format!("<answer>{refined}</answer>")
}

/// Lists evidence frames that mention any keyword of the instruction.
pub fn processor(user: &str) -> String {
    let instruction = read_section(user, "instruction").unwrap_or("");
    let blocks = parse_evidence(read_section(user, "evidence").unwrap_or(""));
    let kw = keywords(instruction);
    let hits: Vec<String> = blocks
        .iter()
        .filter(|b| {
            let text = format!("{} {}", b.metadata, b.summary.as_deref().unwrap_or("")).to_lowercase();
            kw.is_empty() || kw.iter().any(|k| text.contains(k.as_str()))
        })
        .map(|b| format!("{} ({})", b.version.frame(), b.label()))
        .collect();
    if hits.is_empty() {
        "No relevant frames.".to_string()
    } else {
        format!("Relevant frames: {}.", hits.join(", "))
    }
}

/// What the answerer knows about one retrieved frame.
struct Seen {
    frame: FrameId,
    label: String,
    state: SceneState,
    triplets: Vec<crate::domain::Triplet>,
}

fn seen(block: &EvidenceBlock, attachments: &[Canvas]) -> Seen {
    let mut state = block
        .attachment
        .and_then(|i| attachments.get(i.checked_sub(1)?))
        .map(|c| SceneState::from_registry(&c.registry))
        .unwrap_or_default();
    if let Some(summary) = &block.summary {
        let text = objects_in_text(summary);
        if state.scene.is_none() {
            state.scene = text.scene.clone();
        }
        for o in text.objects {
            match state.objects.iter_mut().find(|x| x.name == o.name) {
                Some(x) => x.add_words(&o.words().map(str::to_string).collect::<Vec<_>>(), false),
                None => state.objects.push(o),
            }
        }
    }
    let label = match block.label() {
        "" => state.scene.clone().unwrap_or_default(),
        l => l.to_string(),
    };
    Seen { frame: block.version.frame(), label, state, triplets: block.triplets.clone() }
}

fn room_matches(label: &str, room: &str) -> bool {
    let label = label.to_lowercase();
    canonical_room(&label).is_some_and(|r| r == room) || label == room || label.ends_with(&format!(" {room}"))
}

/// Question words classified as rooms, objects and colours, in order.
struct QuestionTerms {
    rooms: Vec<String>,
    objects: Vec<String>,
    colors: Vec<String>,
}

fn terms(question: &str) -> QuestionTerms {
    let toks = tokenize(question);
    let toks: Vec<&str> = toks.iter().map(String::as_str).collect();
    let mut q = QuestionTerms { rooms: Vec::new(), objects: Vec::new(), colors: Vec::new() };
    let mut i = 0;
    while i < toks.len() {
        if let Some((r, n)) = match_room(&toks[i..]) {
            q.rooms.push(r.to_string());
            i += n;
        } else if let Some((o, n, _)) = match_object(&toks[i..]) {
            q.objects.push(o.to_string());
            i += n;
        } else {
            if let Some(c) = canonical_color(toks[i]) {
                q.colors.push(c.to_string());
            }
            i += 1;
        }
    }
    q
}

/// How well a frame matches the qualifiers of a question (every term
/// except the object asked about).
fn qualifier_score(s: &Seen, q: &QuestionTerms, subject: &str) -> usize {
    let rooms =
        q.rooms.iter().filter(|r| room_matches(&s.label, r) || s.state.scene.as_deref() == Some(r.as_str())).count();
    let objects = q.objects.iter().filter(|o| o.as_str() != subject && s.state.get(o).is_some()).count();
    let colors = q
        .colors
        .iter()
        .filter(|c| s.state.objects.iter().any(|o| o.name != subject && o.colors().contains(&c.as_str())))
        .count();
    rooms + objects + colors
}

fn best<'a>(seen: &'a [Seen], q: &QuestionTerms, subject: &str, usable: impl Fn(&Seen) -> bool) -> Option<&'a Seen> {
    let mut top: Option<(&Seen, usize)> = None;
    for s in seen.iter().filter(|s| usable(s)) {
        let score = qualifier_score(s, q, subject);
        if top.is_none_or(|(_, b)| score > b) {
            top = Some((s, score));
        }
    }
    top.map(|(s, _)| s)
}

fn direction_of(toks: &[String]) -> Option<Relation> {
    toks.iter().find_map(|t| match t.as_str() {
        "north" => Some(Relation::NorthOf),
        "south" => Some(Relation::SouthOf),
        "east" => Some(Relation::EastOf),
        "west" => Some(Relation::WestOf),
        _ => None,
    })
}

fn frame_for<'a>(seen: &'a [Seen], room: &str) -> Option<&'a Seen> {
    seen.iter().find(|s| room_matches(&s.label, room))
}

fn relation_between(seen: &[Seen], a: FrameId, b: FrameId) -> Option<Relation> {
    seen.iter().flat_map(|s| &s.triplets).find_map(|t| {
        if t.subject == a && t.object == b {
            Some(t.predicate)
        } else if t.subject == b && t.object == a {
            Some(t.predicate.inverse())
        } else {
            None
        }
    })
}

fn the(label: &str) -> String {
    format!("the {label}")
}

/// Answers from evidence by question shape; abstains when nothing fits.
fn answer(question: &str, seen: &[Seen], directive: bool) -> String {
    if seen.is_empty() {
        return ABSTAIN.to_string();
    }
    let lower = question.to_lowercase();
    let toks = tokenize(&lower);
    let q = terms(&lower);
    let binary = toks.first().is_some_and(|t| AUXILIARIES.contains(&t.as_str()));
    if !directive && (lower.starts_with("do you remember") || lower.starts_with("do you recall")) {
        return "yes".to_string();
    }

    if let Some(dir) = direction_of(&toks) {
        if q.rooms.len() >= 2 {
            let (Some(a), Some(b)) = (frame_for(seen, &q.rooms[0]), frame_for(seen, &q.rooms[1])) else {
                return ABSTAIN.to_string();
            };
            return match relation_between(seen, a.frame, b.frame) {
                Some(r) if binary => if r == dir { "yes" } else { "no" }.to_string(),
                Some(r) => r.direction_word().map_or(ABSTAIN.to_string(), str::to_string),
                None => ABSTAIN.to_string(),
            };
        }
    }
    if toks.iter().any(|t| t == "before" || t == "after") && !q.rooms.is_empty() {
        let Some(anchor) = frame_for(seen, &q.rooms[0]) else { return ABSTAIN.to_string() };
        let same: Vec<&Seen> = seen.iter().filter(|s| s.frame.speaker == anchor.frame.speaker).collect();
        let pick = if toks.iter().any(|t| t == "before") {
            same.iter().filter(|s| s.frame.ordinal < anchor.frame.ordinal).max_by_key(|s| s.frame.ordinal)
        } else {
            same.iter().filter(|s| s.frame.ordinal > anchor.frame.ordinal).min_by_key(|s| s.frame.ordinal)
        };
        return pick.map_or(ABSTAIN.to_string(), |s| the(&s.label));
    }
    if lower.contains("how many") {
        let Some(subject) = q.objects.first() else { return ABSTAIN.to_string() };
        return match best(seen, &q, subject, |s| s.state.get(subject).is_some()) {
            Some(s) => {
                let n = s.state.get(subject).map_or(1, |o| o.count());
                if n > 1 {
                    format!("{} {}", number_word(n), plural(subject))
                } else {
                    format!("one {subject}")
                }
            }
            None => ABSTAIN.to_string(),
        };
    }
    if toks.iter().any(|t| t == "color" || t == "colour" || t == "colors" || t == "colours") {
        let Some(subject) = q.objects.first() else { return ABSTAIN.to_string() };
        let colored = |s: &Seen| s.state.get(subject).is_some_and(|o| !o.colors().is_empty());
        return match best(seen, &q, subject, colored) {
            Some(s) => s.state.get(subject).map(|o| o.colors().join(" and ")).unwrap_or_else(|| ABSTAIN.to_string()),
            None => ABSTAIN.to_string(),
        };
    }
    if (lower.contains("which room") || lower.contains("what room") || lower.starts_with("where"))
        && !q.objects.is_empty()
    {
        let subject = &q.objects[0];
        return best(seen, &q, subject, |s| s.state.get(subject).is_some())
            .map_or(ABSTAIN.to_string(), |s| the(&s.label));
    }
    if binary {
        if let Some(subject) = q.objects.first() {
            let found = best(seen, &q, subject, |s| s.state.get(subject).is_some());
            return if found.is_some() { "yes" } else { "no" }.to_string();
        }
    }
    ABSTAIN.to_string()
}

pub fn answerer(user: &str, attachments: &[Canvas]) -> String {
    let question = read_section(user, "question").unwrap_or("");
    let blocks = parse_evidence(read_section(user, "evidence").unwrap_or(""));
    let seen: Vec<Seen> = blocks.iter().map(|b| seen(b, attachments)).collect();
    let directive = read_section(user, "directive").is_some_and(|d| !d.trim().is_empty());
    let frames: Vec<String> = seen.iter().map(|s| s.frame.to_string()).collect();
    let ans = answer(question, &seen, directive);
    format!(
        "<think>Evidence frames: {}.</think><answer>{ans}</answer>",
        if frames.is_empty() { "none".into() } else { frames.join(", ") }
    )
}

const SYNONYMS: &[(&str, &str)] = &[
    ("yeah", "yes"),
    ("yep", "yes"),
    ("correct", "yes"),
    ("true", "yes"),
    ("nope", "no"),
    ("false", "no"),
    ("couch", "sofa"),
    ("colour", "color"),
    ("stairs", "staircase"),
    ("stair", "staircase"),
];

/// Lowercased content tokens with numbers spelled out and synonyms merged.
pub(crate) fn normalize_answer(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .map(|t| match number_value(&t).or_else(|| t.parse::<u32>().ok().filter(|n| *n >= 1)) {
            Some(n) if n >= 1 => number_word(n),
            _ => t,
        })
        .map(|t| canonical_color(&t).map(str::to_string).unwrap_or(t))
        .map(|t| SYNONYMS.iter().find(|(a, _)| *a == t).map_or(t, |(_, b)| b.to_string()))
        .filter(|t| !STOPWORDS.contains(&t.as_str()) || NEGATION_WORDS.contains(&t.as_str()))
        .collect()
}

fn negations(tokens: &[String]) -> usize {
    tokens.iter().filter(|t| NEGATION_WORDS.contains(&t.as_str()) || t.ends_with("n't")).count()
}

fn contains_run(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// SAME when the normalized answers are equal or one contains the other,
/// unless exactly one of them is negated.
pub fn judge(user: &str) -> String {
    let response = normalize_answer(read_section(user, "llm_response").unwrap_or(""));
    let gold = normalize_answer(read_section(user, "correct_response").unwrap_or(""));
    let negation_differs = negations(&response) % 2 != negations(&gold) % 2;
    let strip = |v: &[String]| v.iter().filter(|t| !NEGATION_WORDS.contains(&t.as_str())).cloned().collect::<Vec<_>>();
    let (r, g) = (strip(&response), strip(&gold));
    let same = !negation_differs
        && !response.is_empty()
        && !gold.is_empty()
        && (response == gold || contains_run(&r, &g) || contains_run(&g, &r));
    let (verdict, why) = if same {
        ("SAME", format!("normalized answers agree: {:?} vs {:?}", response.join(" "), gold.join(" ")))
    } else {
        ("DIFFERENT", format!("normalized answers differ: {:?} vs {:?}", response.join(" "), gold.join(" ")))
    };
    format!("<reasoning>{why}</reasoning><answer>{verdict}</answer>")
}

const RELATIONAL_MARKERS: &[&str] = &[
    "north", "south", "east", "west", "before", "after", "first", "last", "next", "between", "from", "then", "earlier",
];
const MISSING_MARKERS: &[&str] =
    &["not mentioned", "unknown", "don't know", "do not know", "never said", "not specified", "no idea"];

pub fn annotator(user: &str) -> String {
    let question = read_section(user, "question").unwrap_or("").to_lowercase();
    let gold = read_section(user, "gold_answer").unwrap_or("").to_lowercase();
    let toks = tokenize(&question);
    let relational = toks.iter().any(|t| RELATIONAL_MARKERS.contains(&t.as_str())) || terms(&question).rooms.len() >= 2;
    let binary = toks.first().is_some_and(|t| AUXILIARIES.contains(&t.as_str()));
    let list = question.contains(" or ");
    let missing = MISSING_MARKERS.iter().any(|m| gold.contains(m));
    json!({
        "complexity_type": if relational { "relational" } else { "local" },
        "question_type": if binary { "binary" } else { "open" },
        "constraint_type": if list { "list" } else { "free" },
        "validity_type": if missing { "missing" } else { "valid" },
    })
    .to_string()
}
