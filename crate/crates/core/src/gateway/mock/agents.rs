//! Rule-based stand-ins for the Phase-1 agents.

use std::sync::LazyLock;

use regex::Regex;
use serde_json::{json, Value};

use crate::domain::{BBox, FrameId, ObjectRegistry};
use crate::prompts::{read_numbered, read_section};
use crate::scene::lexicon::{canonical_object, canonical_room, DIRECTIONS};
use crate::scene::{objects_in_text, parse_descriptor, sentences, statement, tokenize, SceneObject, SceneState};

fn json_line(v: Value) -> String {
    v.to_string()
}

/// Utterance text without the `[Turn N] X:` prefix.
pub(crate) fn utterance_text(rendered: &str) -> &str {
    let t = rendered.trim();
    if t.starts_with("[Turn") {
        if let Some(i) = t.find("]: ").or_else(|| t.find(": ")) {
            let rest = &t[i..];
            let skip = rest.find(": ").map(|k| k + 2).unwrap_or(0);
            return rest[skip..].trim();
        }
    }
    t
}

static LOCATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?x)
        (?:\b(?:i'?m|i\s+am|we'?re|we\s+are)\s+(?:now\s+|still\s+|back\s+)?(?:in|at|inside)\b
          | \bmade\s+it\s+(?:to|into)\b
          | ^\s*(?:in|inside)\b
        )(?P<rest>.*)$",
    )
    .unwrap()
});
static OUTSIDE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:i'?m|i\s+am|we'?re|we\s+are)\s+(?:now\s+|still\s+)?(?P<rest>outside\b.*)$").unwrap()
});
static MOVEMENT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:moved|move|went|go|going|walked|walk|came|headed|head)\b|\bgets\s+me\b|\bleads\s+to\b|\bfrom\b")
        .unwrap()
});

const FILLERS: &[&str] = &[
    "ok", "okay", "k", "yeah", "yes", "yep", "no", "nope", "hi", "hey", "hello", "so", "well", "maybe", "sure",
    "alright", "cool", "great", "thanks", "hmm", "um", "uh", "oh", "there", "lol",
];
const STOP_PREFIXES: &[&str] = &[
    "let me",
    "let's",
    "lets",
    "can you",
    "could you",
    "do you",
    "did you",
    "what",
    "where",
    "how",
    "which",
    "are you",
    "have you",
    "should we",
    "shall we",
    "i'll",
    "ill",
    "i will",
];
const NEGATIONS: &[&str] = &["no", "not", "nothing", "isn't", "it's not", "don't", "doesn't", "n't"];

fn observer_json(meta: &str, relation: &str, imagery: &str, action: &str) -> String {
    json_line(json!({ "frame_meta": meta, "relation": relation, "imagery": imagery, "action": action }))
}

fn active_label(section: &str) -> Option<String> {
    let s = section.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("none") {
        return None;
    }
    Some(s.split_once('|').map(|(_, l)| l.trim()).unwrap_or("").to_string())
}

fn strip_fillers(text: &str) -> String {
    let mut rest = text.trim();
    loop {
        let word_end = rest.find(|c: char| !(c.is_alphanumeric() || c == '\'')).unwrap_or(rest.len());
        let word = &rest[..word_end];
        if word.is_empty() || !FILLERS.contains(&word) {
            return rest.to_string();
        }
        rest = rest[word_end..].trim_start_matches(|c: char| !c.is_alphanumeric()).trim_start();
    }
}

fn has_negation(lower: &str) -> bool {
    let toks = tokenize(lower);
    toks.iter().any(|t| NEGATIONS.contains(&t.as_str()) || t.ends_with("n't"))
}

/// Observer: location phrases open or continue a frame, movement sets a
/// relation hint, object mentions continue, everything else is skipped.
pub fn observer(user: &str) -> String {
    let target = utterance_text(read_section(user, "target").unwrap_or(""));
    let active = active_label(read_section(user, "active_frame").unwrap_or(""));
    let lower = target.to_lowercase().replace('\u{2019}', "'");

    let location = LOCATION
        .captures(&lower)
        .or_else(|| OUTSIDE.captures(&lower))
        .map(|c| c.name("rest").map_or("", |m| m.as_str()).trim().to_string());
    if let Some(rest) = location {
        let room = parse_descriptor(&rest).room.or_else(|| canonical_room(&rest).map(str::to_string));
        if let Some(room) = room {
            let offset = lower.len() - rest.len();
            let phrase = target.get(offset..).unwrap_or(&rest).trim().trim_end_matches(['.', '!', '?']).to_string();
            return match &active {
                Some(label) if canonical_room(label).is_some_and(|r| r == room) => {
                    observer_json(label, "", target.trim(), "[CONTINUE]")
                }
                _ => observer_json(&room, "", &phrase, "[NEW]"),
            };
        }
    }

    let rest = strip_fillers(&lower);
    if rest.trim_matches(|c: char| !c.is_alphanumeric()).is_empty() {
        return observer_json("", "", "", "[SKIP]");
    }
    if STOP_PREFIXES
        .iter()
        .any(|p| rest.starts_with(p) && rest[p.len()..].chars().next().is_none_or(|c| !c.is_alphanumeric()))
    {
        return observer_json("", "", "", "[SKIP]");
    }
    let toks = tokenize(&rest);
    if toks.iter().any(|t| DIRECTIONS.contains(&t.as_str())) && MOVEMENT.is_match(&rest) {
        return observer_json(active.as_deref().unwrap_or(""), target.trim(), "", "[SKIP]");
    }
    if has_negation(&rest) {
        return observer_json("", "", "", "[SKIP]");
    }
    let d = parse_descriptor(&rest);
    if d.mentions.iter().any(|m| m.name.is_some() || !m.modifiers.is_empty()) {
        let offset = lower.len() - rest.len();
        let imagery = target.get(offset..).unwrap_or(&rest).trim().to_string();
        return match &active {
            Some(label) => observer_json(label, "", &imagery, "[CONTINUE]"),
            None => observer_json(d.room.as_deref().unwrap_or(""), "", &imagery, "[NEW]"),
        };
    }
    observer_json("", "", "", "[SKIP]")
}

/// Decomposer: facts of the replayed prompt history, or of the descriptor
/// when there is no usable history.
pub fn decomposer(user: &str) -> String {
    let prompts: Vec<&str> =
        read_section(user, "prompts").unwrap_or("").lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let target = read_section(user, "target").unwrap_or("");
    let state = SceneState::replay(&prompts).ok().filter(|_| !prompts.is_empty()).unwrap_or_else(|| {
        let d = parse_descriptor(target);
        let mut state = SceneState { scene: d.room.clone(), objects: Vec::new() };
        for (name, m) in d.named() {
            state.objects.push(m.to_object(name, d.outline_for(m)));
        }
        state
    });
    json_line(json!({ "facts": state.facts() }))
}

pub fn captioner(registry: Option<&ObjectRegistry>) -> String {
    let Some(reg) = registry else {
        return "No image is attached.".to_string();
    };
    let state = SceneState::from_registry(reg);
    let mut out = Vec::new();
    if let Some(s) = &state.scene {
        out.push(format!("The scene is {} {s}.", crate::scene::lexicon::article(s)));
    }
    for o in &state.objects {
        out.push(format!("{} drawn in {} outline.", capitalize(&with_article(o)), o.outline.word()));
    }
    if out.is_empty() {
        out.push("An empty white canvas.".to_string());
    }
    out.join(" ")
}

fn with_article(o: &SceneObject) -> String {
    let np = o.noun_phrase();
    if o.count() > 1 {
        np
    } else {
        format!("{} {np}", crate::scene::lexicon::article(&np))
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().collect::<String>() + c.as_str()).unwrap_or_default()
}

static FACT_EXISTS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^there (?:is|are) (?:an? |(?P<n>\w+) )?(?P<name>.+)$").unwrap());
static FACT_SCENE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^the scene is (?:an? )?(?P<room>.+)$").unwrap());
static FACT_HAS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^the (?P<name>.+?) (?:has|have) (?:an? )?(?P<part>.+)$").unwrap());
static FACT_ATTR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^the (?P<name>.+?) (?:is|are) (?P<attr>.+)$").unwrap());

fn find_object<'a>(reg: &'a ObjectRegistry, raw: &str) -> Option<&'a crate::domain::CanvasObject> {
    let raw = raw.trim();
    let canon = canonical_object(raw).map(str::to_string);
    reg.objects.iter().find(|o| o.name == raw || canon.as_deref() == Some(o.name.as_str()))
}

fn check_fact(reg: &ObjectRegistry, full: BBox, fact: &str) -> (bool, Option<BBox>) {
    let f = fact.trim().trim_end_matches('.').to_lowercase();
    if let Some(c) = FACT_SCENE.captures(&f) {
        let room = canonical_room(&c["room"]).map(str::to_string).unwrap_or_else(|| c["room"].to_string());
        let ok = reg.scene.as_deref() == Some(room.as_str());
        return (ok, ok.then_some(full));
    }
    if let Some(c) = FACT_EXISTS.captures(&f) {
        let want = c.name("n").and_then(|n| crate::scene::lexicon::number_value(n.as_str())).unwrap_or(1);
        return match find_object(reg, &c["name"]) {
            Some(o) => {
                let ok = SceneState::from_registry(&ObjectRegistry { scene: None, objects: vec![o.clone()] }).objects
                    [0]
                .count()
                    == want;
                (ok, ok.then_some(o.bbox))
            }
            None => (false, None),
        };
    }
    if let Some(c) = FACT_HAS.captures(&f) {
        return match find_object(reg, &c["name"]) {
            Some(o) if o.attributes.iter().any(|a| a == &c["part"]) => (true, Some(o.bbox)),
            _ => (false, None),
        };
    }
    if let Some(c) = FACT_ATTR.captures(&f) {
        return match find_object(reg, &c["name"]) {
            Some(o) if o.attributes.iter().any(|a| a == &c["attr"]) => (true, Some(o.bbox)),
            _ => (false, None),
        };
    }
    (false, None)
}

/// Fact checker: each fact is checked against the attached canvas registry.
pub fn checker(user: &str, registry: Option<&ObjectRegistry>, size: (u32, u32)) -> String {
    let facts = read_numbered(read_section(user, "facts").unwrap_or(""));
    let empty = ObjectRegistry::default();
    let reg = registry.unwrap_or(&empty);
    let full = BBox::new(0, 0, size.1 as i64, size.0 as i64);
    let items: Vec<Value> = facts
        .iter()
        .map(|f| {
            let (verdict, bbox) = check_fact(reg, full, f);
            json!({ "fact": f, "box": bbox, "verdict": verdict })
        })
        .collect();
    Value::Array(items).to_string()
}

fn mentions_object(sentence: &str, name: &str) -> bool {
    parse_descriptor(sentence).named().any(|(n, _)| n == name)
}

fn is_hedged(sentence: &str) -> bool {
    parse_descriptor(sentence).hedged
}

/// Summarizer: one statement per mention; updates replace weaker
/// statements about the same object and keep conflicting ones apart.
pub fn summarizer(user: &str) -> String {
    let target = read_section(user, "target").unwrap_or("");
    let meta = read_section(user, "frame_meta").unwrap_or("");
    let previous = read_section(user, "previous").unwrap_or("").trim();
    let d = parse_descriptor(target);
    let mut out: Vec<String> = if previous.is_empty() { Vec::new() } else { sentences(previous) };
    if previous.is_empty() {
        let room = d.room.clone().or_else(|| canonical_room(&meta.to_lowercase()).map(str::to_string));
        if let Some(r) = &room {
            out.push(format!("The scene is {} {r}", crate::scene::lexicon::article(r)));
        }
        for (name, m) in d.named() {
            out.push(statement(&m.to_object(name, d.outline_for(m)), d.hedged).trim_end_matches('.').to_string());
        }
        if let Some(r) = &room {
            for a in crate::scene::lexicon::assumptions_for(r) {
                if !d.named().any(|(n, _)| n == *a) {
                    out.push(format!("It likely has {} {a}", crate::scene::lexicon::article(a)));
                }
            }
        }
        if out.is_empty() {
            out.push(format!("The scene shows {}", target.trim().trim_end_matches('.')));
        }
    } else {
        let last_named = out.iter().rev().find_map(|s| parse_descriptor(s).named().last().map(|(n, _)| n.to_string()));
        for m in &d.mentions {
            let Some(name) = m.name.clone().or_else(|| last_named.clone()) else { continue };
            let mut obj = m.to_object(&name, d.outline_for(m));
            if d.correction {
                out.retain(|s| !mentions_object(s, &name));
            } else {
                let prior =
                    out.iter().filter(|s| mentions_object(s, &name) && !is_hedged(s)).cloned().collect::<Vec<_>>();
                let merged = objects_in_text(&prior.join(". "));
                let base = merged.get(&name).cloned();
                let new_colors: Vec<String> = obj.colors().iter().map(|c| c.to_string()).collect();
                let compatible = |s: &String| {
                    let st = objects_in_text(s);
                    st.get(&name).is_some_and(|o| o.colors().iter().all(|c| new_colors.iter().any(|n| n == c)))
                };
                out.retain(|s| !(mentions_object(s, &name) && (is_hedged(s) || compatible(s))));
                if let Some(mut b) = base.filter(|b| b.colors().iter().all(|c| new_colors.iter().any(|n| n == c))) {
                    b.add_words(&obj.words().map(str::to_string).collect::<Vec<_>>(), true);
                    if m.count.is_some() {
                        b.set_count(m.count);
                    }
                    b.set_position(m.position.as_deref());
                    b.set_part(m.part.as_deref());
                    obj = b;
                }
            }
            let s = statement(&obj, d.hedged).trim_end_matches('.').to_string();
            if !out.contains(&s) {
                out.push(s);
            }
        }
    }
    let text = out.iter().map(|s| format!("{}.", s.trim_end_matches('.'))).collect::<Vec<_>>().join(" ");
    json_line(json!({ "scene": text }))
}

fn parse_frame_line(line: &str) -> Option<(FrameId, String)> {
    let (_, rest) = line.split_once(':')?;
    let rest = rest.trim();
    if rest.eq_ignore_ascii_case("none") {
        return None;
    }
    let (id, label) = match rest.split_once(' ') {
        Some((id, l)) => (id, l.trim().trim_start_matches('(').trim_end_matches(')').to_string()),
        None => (rest, String::new()),
    };
    Some((FrameId::parse(id).ok()?, label))
}

static FROM: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bfrom\b").unwrap());
static TOWARD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(?:gets\s+me|leads\s+to|takes\s+me|to\s+get\s+to)\b").unwrap());
static NEXT_TO: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(?:next\s+to|beside|adjacent\s+to)\b").unwrap());

fn rooms_in(text: &str) -> Vec<String> {
    let toks = tokenize(text);
    let toks: Vec<&str> = toks.iter().map(String::as_str).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        match crate::scene::lexicon::match_room(&toks[i..]) {
            Some((r, n)) => {
                out.push(r.to_string());
                i += n;
            }
            None => i += 1,
        }
    }
    out
}

/// Linker: directional movement and adjacency phrases between the frames
/// offered in the request.
pub fn linker(user: &str) -> String {
    let hint = read_section(user, "directive").unwrap_or("").to_lowercase();
    let frames_text = read_section(user, "frames").unwrap_or("");
    let mut prev = None;
    let mut curr = None;
    let mut next = None;
    for line in frames_text.lines() {
        let slot = parse_frame_line(line);
        match line.trim().split(':').next().unwrap_or("") {
            "PREV_FRAME" => prev = slot,
            "CURR_FRAME" => curr = slot,
            "NEXT_FRAME" => next = slot,
            _ => {}
        }
    }
    let empty = || json_line(json!({ "triplets": [] }));
    let Some(curr) = curr else { return empty() };
    let others: Vec<(FrameId, String)> = [prev.clone(), next].into_iter().flatten().collect();
    let by_room = |room: &str| -> Option<FrameId> {
        others.iter().find(|(_, l)| canonical_room(l).is_some_and(|r| r == room)).map(|(f, _)| *f)
    };
    let rooms = rooms_in(&hint);
    let direction = tokenize(&hint).into_iter().find(|t| DIRECTIONS.contains(&t.as_str()));
    let triplet = |s: FrameId, p: String, o: FrameId| json!({ "subject": s.to_string(), "predicate": p, "object": o.to_string() });

    let out = if let Some(d) = direction {
        let pred = format!("{d}_of");
        if TOWARD.is_match(&hint) {
            rooms.first().and_then(|r| by_room(r)).map(|dest| triplet(dest, pred, curr.0))
        } else if FROM.is_match(&hint) {
            let origin = match rooms.first() {
                Some(r) => by_room(r),
                None => prev.as_ref().map(|p| p.0),
            };
            origin.map(|o| triplet(curr.0, pred, o))
        } else {
            None
        }
    } else if NEXT_TO.is_match(&hint) {
        match rooms.as_slice() {
            [a, b, ..] => {
                let fa = by_room(a).or_else(|| canonical_room(&curr.1).filter(|r| r == a).map(|_| curr.0));
                let fb = by_room(b).or_else(|| canonical_room(&curr.1).filter(|r| r == b).map(|_| curr.0));
                fa.zip(fb).filter(|(x, y)| x != y).map(|(x, y)| triplet(y, "is_next_to".into(), x))
            }
            [a] => by_room(a).map(|f| triplet(curr.0, "is_next_to".into(), f)),
            [] => None,
        }
    } else {
        None
    };
    json_line(json!({ "triplets": out.into_iter().collect::<Vec<_>>() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::EditAction;
    use crate::domain::{SpeakerId, Utterance};
    use crate::gateway::parse::{parse_linker_output, parse_observer_output};
    use crate::prompts::{linker_request, observer_request, FrameSlots};

    fn observe(text: &str, active: Option<(&str, &str)>) -> crate::domain::ObserverDecision {
        let active = active.map(|(id, l)| (FrameId::parse(id).unwrap(), l));
        let req = observer_request(&[], active, &[], &Utterance::new(1, SpeakerId::B, text));
        parse_observer_output(&observer(req.user_text())).unwrap()
    }

    #[test]
    fn observer_follows_the_labelled_traces() {
        let d = observe("Im in a home office", Some(("B_2", "kitchen")));
        assert_eq!(
            (d.action, d.frame_meta.as_str(), d.scene_descriptor.as_str()),
            (EditAction::New, "home office", "a home office")
        );
        assert_eq!(observe("ok let me move around", None).action, EditAction::Skip);
        assert_eq!(observe("It also has a drum set in it", Some(("B_3", "home office"))).action, EditAction::Continue);
        assert_eq!(observe("2 guitars on the wall", Some(("B_3", "home office"))).action, EditAction::Continue);
        let d = observe("I moved north from a kitchen to get here", Some(("B_3", "home office")));
        assert_eq!(d.action, EditAction::Skip);
        assert!(d.relation_hint.is_some());
        assert_eq!(observe("In the bathroom again", Some(("B_2", "bathroom"))).action, EditAction::Continue);
        assert_eq!(observe("maybe", Some(("B_2", "bathroom"))).action, EditAction::Skip);
        assert_eq!(observe("Red tub", Some(("B_2", "bathroom"))).action, EditAction::Continue);
        assert_eq!(observe("Hi there. Looks like I'm outside", None).action, EditAction::New);
        assert_eq!(
            observe("OK, can you find this room with blue wall?", Some(("A_2", "childs room"))).action,
            EditAction::Skip
        );
        assert_eq!(observe("It's not yellow?", Some(("B_2", "childs room"))).action, EditAction::Skip);
        assert_eq!(observe("ill find you", Some(("B_2", "childs room"))).action, EditAction::Skip);
        let d = observe("west gets me bathroom. It has a red rug", Some(("B_1", "hallway")));
        assert_eq!(d.action, EditAction::Skip);
        assert!(d.relation_hint.is_some());
    }

    fn link(hint: &str, prev: Option<&str>, curr: &str, meta: &[(&str, &str)]) -> Vec<(String, String, String)> {
        let slots = FrameSlots {
            prev: prev.map(|p| FrameId::parse(p).unwrap()),
            curr: Some(FrameId::parse(curr).unwrap()),
            next: None,
        };
        let meta: Vec<(FrameId, String)> =
            meta.iter().map(|(f, l)| (FrameId::parse(f).unwrap(), l.to_string())).collect();
        let req = linker_request(hint, &[], &slots, &meta);
        parse_linker_output(&linker(req.user_text()))
            .unwrap()
            .into_iter()
            .map(|t| (t.subject, t.predicate, t.object))
            .collect()
    }

    #[test]
    fn linker_directionality() {
        let meta = [("B_2", "kitchen"), ("B_3", "home office")];
        assert_eq!(
            link("I moved north from a kitchen to get here", Some("B_2"), "B_3", &meta),
            vec![("B_3".into(), "north_of".into(), "B_2".into())]
        );
        assert!(link("west gets me bathroom. It has a red rug", None, "B_1", &[("B_1", "hallway")]).is_empty());
        assert!(link("ok sure", Some("B_2"), "B_3", &meta).is_empty());
        assert!(link("I came south from the garage", Some("B_2"), "B_3", &meta).is_empty());
        let meta = [("A_1", "kitchen"), ("A_2", "hallway")];
        assert_eq!(
            link("Kitchen next to Hall", Some("A_1"), "A_2", &meta),
            vec![("A_2".into(), "is_next_to".into(), "A_1".into())]
        );
    }

    #[test]
    fn summarizer_keeps_conflicting_attributes_apart() {
        let req = crate::prompts::summarizer_request(
            "white toilet and yellow rug",
            Some("There is a red rug."),
            "bathroom",
            &[],
        );
        let out = crate::gateway::parse::parse_scene_output(&summarizer(req.user_text())).unwrap();
        assert!(out.contains("red rug"), "{out}");
        assert!(out.contains("yellow rug"), "{out}");
        assert!(out.contains("white toilet"), "{out}");
        let req = crate::prompts::summarizer_request("Actually, it's blue", Some("The wall is green."), "bedroom", &[]);
        let out = crate::gateway::parse::parse_scene_output(&summarizer(req.user_text())).unwrap();
        assert_eq!(out, "There is a blue wall.");
        let req = crate::prompts::summarizer_request("in bedroom", None, "bedroom", &[]);
        let out = crate::gateway::parse::parse_scene_output(&summarizer(req.user_text())).unwrap();
        assert!(out.starts_with("The scene is a bedroom."), "{out}");
    }

    #[test]
    fn decomposer_covers_descriptor_without_history() {
        let req = crate::prompts::decomposer_request(&[], "a red cat on a sofa");
        let facts = crate::gateway::parse::parse_facts_output(&decomposer(req.user_text())).unwrap();
        assert_eq!(facts, vec!["There is a cat", "The cat is red", "The cat is on a sofa"]);
    }
}
