//! A small controlled language for minimalist indoor scenes.
//!
//! Three directions are covered:
//! - free text (scene descriptors, summaries, facts) to [`Descriptor`];
//! - intended scene to image prompt (creation and edit grammars);
//! - image prompt back to operations, so a prompt history can be replayed.
//!
//! The composer enforces the style rules: confirmed and positioned objects
//! are black, confirmed objects with only a relative position are red, and
//! anything assumed or hedged is blue.

pub mod lexicon;

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ObjectRegistry, Outline};
use lexicon::*;

pub const CREATION_PREAMBLE: &str = "A clean, minimalist, iconic scene.";
pub const CREATION_SUFFIX: &str = "Solid white background, no shadows.";
/// Separator between the delete and add halves of a move or rescale.
pub const MOVE_SEPARATOR: &str = "$$$";
/// At most this many assumed (blue) entities in a creation prompt.
pub const ASSUMPTION_BUDGET: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompositionError {
    #[error("creation prompt would carry {0} assumed entities (limit {ASSUMPTION_BUDGET})")]
    AssumptionBudgetExceeded(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("empty prompt")]
    Empty,
    #[error("unrecognized prompt sentence {0:?}")]
    UnrecognizedSentence(String),
}

/// One object of an intended or rendered scene.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub outline: Outline,
    pub attributes: Vec<String>,
}

/// How an attribute string is rendered and checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttrKind {
    Count(u32),
    Word,
    Position,
    Part,
}

pub fn attr_kind(attr: &str) -> AttrKind {
    if let Ok(n) = attr.parse::<u32>() {
        return AttrKind::Count(n);
    }
    let first = attr.split_whitespace().next().unwrap_or("");
    if !attr.contains(' ') {
        AttrKind::Word
    } else if PREPOSITIONS.contains(&first) {
        AttrKind::Position
    } else {
        AttrKind::Part
    }
}

impl SceneObject {
    pub fn new(name: impl Into<String>, outline: Outline) -> Self {
        SceneObject { name: name.into(), outline, attributes: Vec::new() }
    }

    pub fn with_attrs(mut self, attrs: &[&str]) -> Self {
        self.attributes.extend(attrs.iter().map(|a| a.to_string()));
        self
    }

    pub fn count(&self) -> u32 {
        self.attributes
            .iter()
            .find_map(|a| match attr_kind(a) {
                AttrKind::Count(n) => Some(n),
                _ => None,
            })
            .unwrap_or(1)
    }

    fn of_kind(&self, kind: fn(AttrKind) -> bool) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(String::as_str).filter(move |a| kind(attr_kind(a)))
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.of_kind(|k| k == AttrKind::Word)
    }

    pub fn colors(&self) -> Vec<&str> {
        self.words().filter(|w| is_color(w)).collect()
    }

    pub fn position(&self) -> Option<&str> {
        self.of_kind(|k| k == AttrKind::Position).next()
    }

    pub fn part(&self) -> Option<&str> {
        self.of_kind(|k| k == AttrKind::Part).next()
    }

    /// Noun phrase without outline, e.g. `two guitars on the wall`.
    pub fn noun_phrase(&self) -> String {
        self.render(false)
    }

    /// Prompt item, e.g. `a bed (in black outline) that has a red bedspread`.
    pub fn prompt_item(&self) -> String {
        self.render(true)
    }

    fn render(&self, outline: bool) -> String {
        let n = self.count();
        let words: Vec<&str> = self.words().collect();
        let mut head: Vec<String> = Vec::new();
        let noun = if n > 1 { plural(&self.name) } else { self.name.clone() };
        let first = words.first().copied().unwrap_or(noun.as_str());
        head.push(if n > 1 { number_word(n) } else { article(first).to_string() });
        head.extend(words.iter().map(|w| w.to_string()));
        head.push(noun);
        let mut out = head.join(" ");
        if outline {
            out.push_str(&format!(" (in {} outline)", self.outline.word()));
        }
        if let Some(pos) = self.position() {
            out.push(' ');
            out.push_str(pos);
        }
        if let Some(part) = self.part() {
            out.push_str(&format!(" that has {} {part}", article(part)));
        }
        out
    }

    pub(crate) fn set_count(&mut self, n: Option<u32>) {
        self.attributes.retain(|a| !matches!(attr_kind(a), AttrKind::Count(_)));
        if let Some(n) = n.filter(|&n| n > 1) {
            self.attributes.insert(0, n.to_string());
        }
    }

    pub(crate) fn set_position(&mut self, pos: Option<&str>) {
        if let Some(p) = pos {
            self.attributes.retain(|a| attr_kind(a) != AttrKind::Position);
            self.attributes.push(p.to_string());
        }
    }

    pub(crate) fn set_part(&mut self, part: Option<&str>) {
        if let Some(p) = part {
            self.attributes.retain(|a| attr_kind(a) != AttrKind::Part);
            self.attributes.push(p.to_string());
        }
    }

    pub(crate) fn add_words(&mut self, words: &[String], replace_colors: bool) {
        if replace_colors && words.iter().any(|w| is_color(w)) {
            self.attributes.retain(|a| !(attr_kind(a) == AttrKind::Word && is_color(a)));
        }
        // Words sit after any count and before positional phrases.
        let insert_at =
            self.attributes.iter().position(|a| matches!(attr_kind(a), AttrKind::Position | AttrKind::Part));
        let mut at = insert_at.unwrap_or(self.attributes.len());
        for w in words {
            if !self.attributes.contains(w) {
                self.attributes.insert(at, w.clone());
                at += 1;
            }
        }
    }
}

fn rank(o: Outline) -> u8 {
    match o {
        Outline::Blue => 0,
        Outline::Red => 1,
        Outline::Black => 2,
    }
}

/// What an utterance says about one object.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Mention {
    /// `None` for a pronoun (`it's blue`).
    pub name: Option<String>,
    pub modifiers: Vec<String>,
    pub count: Option<u32>,
    pub position: Option<String>,
    pub part: Option<String>,
    pub relative: bool,
    pub op: MentionOp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MentionOp {
    #[default]
    Describe,
    Remove,
    Move,
    Rescale,
}

impl Mention {
    pub fn to_object(&self, name: &str, outline: Outline) -> SceneObject {
        let mut o = SceneObject::new(name, outline);
        o.set_count(self.count);
        o.add_words(&self.modifiers, false);
        o.set_position(self.position.as_deref());
        o.set_part(self.part.as_deref());
        o
    }

    fn merge_from(&mut self, other: Mention) {
        for m in other.modifiers {
            if !self.modifiers.contains(&m) {
                self.modifiers.push(m);
            }
        }
        self.count = other.count.or(self.count);
        self.position = other.position.or(self.position.take());
        self.part = other.part.or(self.part.take());
        self.relative |= other.relative;
        if other.op != MentionOp::Describe {
            self.op = other.op;
        }
    }
}

/// Structured reading of a piece of scene text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Descriptor {
    pub room: Option<String>,
    pub mentions: Vec<Mention>,
    /// Objects named only as reference points (`on the wall`).
    pub landmarks: Vec<String>,
    pub hedged: bool,
    pub correction: bool,
}

impl Descriptor {
    pub fn outline_for(&self, m: &Mention) -> Outline {
        if self.hedged {
            Outline::Blue
        } else if m.relative {
            Outline::Red
        } else {
            Outline::Black
        }
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Mention)> {
        self.mentions.iter().filter_map(|m| m.name.as_deref().map(|n| (n, m)))
    }
}

static TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[a-z0-9']+|[.,;:!?]").unwrap());

pub(crate) fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase().replace(['\u{2019}', '\u{2018}'], "'");
    TOKEN_RE.find_iter(&lower).map(|m| m.as_str().trim_matches('\'').to_string()).filter(|t| !t.is_empty()).collect()
}

pub(crate) fn is_punct(t: &str) -> bool {
    matches!(t, "." | "," | ";" | ":" | "!" | "?")
}

const COPULAS: &[&str] = &["is", "are", "was", "were", "looks", "look"];
const REMOVE_VERBS: &[&str] = &["remove", "removed", "removes", "delete", "deleted"];
const MOVE_VERBS: &[&str] = &["move", "moved", "moves", "put", "place", "placed"];
const PRONOUNS: &[&str] = &["it", "it's", "its", "that", "that's", "they", "they're"];
const PHRASE_STOPS: &[&str] = &["and", "with", "that", "which", "but", "so", "too", "also", "again"];

pub fn parse_descriptor(text: &str) -> Descriptor {
    let toks = tokenize(text);
    let toks: Vec<&str> = toks.iter().map(String::as_str).collect();
    let mut d = Descriptor::default();
    let mut mods: Vec<&str> = Vec::new();
    let mut count: Option<u32> = None;
    let mut op = MentionOp::Describe;
    let mut i = 0;
    while i < toks.len() {
        let t = toks[i];
        if is_punct(t) {
            mods.clear();
            count = None;
            if t != "," {
                op = MentionOp::Describe;
            }
            i += 1;
            continue;
        }
        if HEDGES.contains(&t) {
            d.hedged = true;
        }
        if CORRECTIONS.contains(&t) && (t != "mean" || i > 0 && toks[i - 1] == "i") {
            d.correction = true;
        }
        if REMOVE_VERBS.contains(&t) {
            op = MentionOp::Remove;
            i += 1;
            continue;
        }
        if MOVE_VERBS.contains(&t) {
            op = MentionOp::Move;
            i += 1;
            continue;
        }
        if t == "make" {
            op = MentionOp::Rescale;
            i += 1;
            continue;
        }
        if let Some((room, n)) = match_room(&toks[i..]) {
            if d.room.is_none() {
                d.room = Some(room.to_string());
            }
            mods.clear();
            count = None;
            i += n;
            continue;
        }
        if let Some((obj, n, _)) = match_object(&toks[i..]) {
            i += n;
            let mut m = Mention { name: Some(obj.to_string()), op, ..Mention::default() };
            m.count = count;
            let mut raw_mods: Vec<&str> = mods.clone();
            // `the wall is green`, `make the lamp bigger`
            let mut j = i;
            if j < toks.len() && COPULAS.contains(&toks[j]) {
                j += 1;
            }
            let tail_start = j;
            while j < toks.len()
                && (canonical_modifier(toks[j]).is_some()
                    || (toks[j] == "and"
                        && j + 1 < toks.len()
                        && canonical_modifier(toks[j + 1]).is_some()
                        && j > tail_start))
            {
                j += 1;
            }
            if j > tail_start {
                raw_mods.extend(&toks[tail_start..j]);
                i = j;
            }
            if let Some(whole) = whole_of(obj) {
                let mut part_words: Vec<String> =
                    raw_mods.iter().map(|w| canonical_modifier(w).unwrap_or(w).to_string()).collect();
                while part_words.first().is_some_and(|w| w == "and") {
                    part_words.remove(0);
                }
                part_words.push(obj.to_string());
                m.name = Some(whole.to_string());
                m.part = Some(part_words.join(" "));
                m.count = None;
            } else {
                m.modifiers = raw_mods.iter().filter_map(|w| canonical_modifier(w)).map(str::to_string).collect();
            }
            // Positional phrase.
            if i < toks.len() && PREPOSITIONS.contains(&toks[i]) {
                let prep = toks[i];
                let follows = toks.get(i + 1).copied().unwrap_or("");
                let blocked = prep == "in"
                    && (matches!(follows, "it" | "here" | "there" | "my" | "your")
                        || match_room(&toks[i + 1..]).is_some())
                    || prep == "next" && follows != "to";
                if !blocked {
                    let mut j = i + 1;
                    while j < toks.len() && j - i < 6 && !is_punct(toks[j]) && !PHRASE_STOPS.contains(&toks[j]) {
                        j += 1;
                    }
                    if j > i + 1 {
                        let phrase: Vec<&str> = toks[i..j].to_vec();
                        for k in 1..phrase.len() {
                            if let Some((lm, _, _)) = match_object(&phrase[k..]) {
                                if Some(lm) != m.name.as_deref() && !d.landmarks.iter().any(|l| l == lm) {
                                    d.landmarks.push(lm.to_string());
                                }
                                break;
                            }
                        }
                        m.relative = RELATIVE_PREPOSITIONS.contains(&prep);
                        m.position = Some(phrase.join(" "));
                        i = j;
                    }
                }
            }
            d.mentions.push(m);
            mods.clear();
            count = None;
            op = MentionOp::Describe;
            continue;
        }
        if let Some(n) = number_value(t) {
            count = Some(n);
            i += 1;
            continue;
        }
        if canonical_modifier(t).is_some() {
            mods.push(t);
            i += 1;
            continue;
        }
        if t == "and" && !mods.is_empty() && toks.get(i + 1).is_some_and(|n| canonical_modifier(n).is_some()) {
            mods.push(t);
            i += 1;
            continue;
        }
        if ARTICLES.contains(&t) || (t == "of" && count.is_some()) {
            i += 1;
            continue;
        }
        mods.clear();
        count = None;
        i += 1;
    }
    if d.mentions.is_empty() && toks.iter().any(|t| PRONOUNS.contains(t)) {
        let modifiers: Vec<String> = toks.iter().filter_map(|t| canonical_modifier(t)).map(str::to_string).collect();
        if !modifiers.is_empty() {
            d.mentions.push(Mention { name: None, modifiers, ..Mention::default() });
        }
    }
    // One mention per object name.
    let mut merged: Vec<Mention> = Vec::new();
    for m in std::mem::take(&mut d.mentions) {
        match merged.iter_mut().find(|x| x.name.is_some() && x.name == m.name) {
            Some(x) => x.merge_from(m),
            None => merged.push(m),
        }
    }
    d.landmarks.retain(|l| !merged.iter().any(|m| m.name.as_deref() == Some(l.as_str())));
    d.mentions = merged;
    d
}

/// An intended or replayed scene.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SceneState {
    pub scene: Option<String>,
    pub objects: Vec<SceneObject>,
}

impl SceneState {
    pub fn get(&self, name: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.name == name)
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.name == name)
    }

    pub fn from_registry(reg: &ObjectRegistry) -> Self {
        SceneState {
            scene: reg.scene.clone(),
            objects: reg
                .objects
                .iter()
                .map(|o| SceneObject { name: o.name.clone(), outline: o.outline, attributes: o.attributes.clone() })
                .collect(),
        }
    }

    fn upsert(&mut self, obj: SceneObject) {
        match self.index(&obj.name) {
            Some(i) => self.objects[i] = obj,
            None => self.objects.push(obj),
        }
    }

    pub fn apply(&mut self, ops: &[PromptOp]) {
        for op in ops {
            match op {
                PromptOp::Create { scene, objects } => {
                    self.scene = scene.clone();
                    self.objects.clear();
                    for o in objects {
                        self.upsert(o.clone());
                    }
                }
                PromptOp::Add(o) => self.upsert(o.clone()),
                PromptOp::Remove(name) => self.objects.retain(|o| &o.name != name),
                PromptOp::Replace { target, with } => match self.index(target) {
                    Some(i) => {
                        self.objects[i] = with.clone();
                        let dup = self
                            .objects
                            .iter()
                            .enumerate()
                            .find(|(k, o)| *k != i && o.name == with.name)
                            .map(|(k, _)| k);
                        if let Some(k) = dup {
                            self.objects.remove(k);
                        }
                    }
                    None => self.upsert(with.clone()),
                },
                PromptOp::Move { target, with } => {
                    self.objects.retain(|o| &o.name != target);
                    self.upsert(with.clone());
                }
                PromptOp::Keep(_) => {}
            }
        }
    }

    /// Replays a prompt history from an empty scene.
    pub fn replay<S: AsRef<str>>(prompts: &[S]) -> Result<SceneState, GrammarError> {
        let mut state = SceneState::default();
        for p in prompts {
            state.apply(&parse_prompt(p.as_ref())?);
        }
        Ok(state)
    }

    /// Atomic facts for every confirmed (black or red) object, scene last.
    pub fn facts(&self) -> Vec<String> {
        let mut facts = Vec::new();
        for o in self.objects.iter().filter(|o| o.outline != Outline::Blue) {
            let n = o.count();
            let (subject, verb) = if n > 1 {
                facts.push(format!("There are {} {}", number_word(n), plural(&o.name)));
                (format!("The {}", plural(&o.name)), "are")
            } else {
                facts.push(format!("There is {} {}", article(&o.name), o.name));
                (format!("The {}", o.name), "is")
            };
            for w in o.words() {
                facts.push(format!("{subject} {verb} {w}"));
            }
            if let Some(p) = o.position() {
                facts.push(format!("{subject} {verb} {p}"));
            }
            if let Some(p) = o.part() {
                let has = if n > 1 { "have" } else { "has" };
                facts.push(format!("{subject} {has} {} {p}", article(p)));
            }
        }
        if let Some(scene) = &self.scene {
            facts.push(format!("The scene is {} {scene}", article(scene)));
        }
        facts
    }
}

fn join_list(items: &[String]) -> String {
    match items.len() {
        0 => String::new(),
        1 => items[0].clone(),
        2 => format!("{} and {}", items[0], items[1]),
        n => format!("{}, and {}", items[..n - 1].join(", "), items[n - 1]),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// Intended scene for a brand-new frame, before rendering.
pub fn plan_creation(descriptor: &str, frame_meta: &str) -> Result<SceneState, CompositionError> {
    let d = parse_descriptor(descriptor);
    let room = d.room.clone().or_else(|| canonical_room(&frame_meta.to_lowercase()).map(str::to_string));
    let mut state = SceneState { scene: room.clone(), objects: Vec::new() };
    for (name, m) in d.named() {
        if m.op != MentionOp::Remove {
            state.upsert(m.to_object(name, d.outline_for(m)));
        }
    }
    for lm in &d.landmarks {
        if state.get(lm).is_none() {
            state.upsert(SceneObject::new(lm.as_str(), Outline::Blue));
        }
    }
    let names: Vec<String> = state.objects.iter().map(|o| o.name.clone()).collect();
    for n in names {
        if let Some(pair) = structural_pair(&n) {
            if state.get(pair).is_none() {
                state.upsert(SceneObject::new(pair, Outline::Blue));
            }
        }
    }
    if let Some(room) = &room {
        for a in assumptions_for(room) {
            if state.objects.len() >= ASSUMPTION_BUDGET {
                break;
            }
            if state.get(a).is_none() {
                state.upsert(SceneObject::new(*a, Outline::Blue));
            }
        }
    }
    if state.objects.is_empty() && room.is_none() {
        let words: Vec<String> =
            tokenize(descriptor).into_iter().filter(|t| !is_punct(t) && !ARTICLES.contains(&t.as_str())).collect();
        if let Some(last) = words.last() {
            state.upsert(SceneObject::new(last.as_str(), Outline::Black));
        }
    }
    let assumed = state.objects.iter().filter(|o| o.outline == Outline::Blue).count();
    if assumed > ASSUMPTION_BUDGET {
        return Err(CompositionError::AssumptionBudgetExceeded(assumed));
    }
    Ok(state)
}

pub fn render_creation(state: &SceneState) -> String {
    let items: Vec<String> = state.objects.iter().map(SceneObject::prompt_item).collect();
    let body = match &state.scene {
        Some(room) if items.is_empty() => format!("In {} {room}.", article(room)),
        Some(room) => format!("In {} {room}, {}.", article(room), join_list(&items)),
        None if items.is_empty() => "An empty room.".to_string(),
        None => format!("{}.", capitalize(&join_list(&items))),
    };
    format!("{CREATION_PREAMBLE} {body} {CREATION_SUFFIX}")
}

/// Creation prompt for a new frame.
pub fn compose_creation(descriptor: &str, frame_meta: &str) -> Result<(String, SceneState), CompositionError> {
    let state = plan_creation(descriptor, frame_meta)?;
    Ok((render_creation(&state), state))
}

/// Edit prompt turning `current` into the scene `descriptor` asks for.
/// Returns the prompt and the intended result.
pub fn compose_edit(descriptor: &str, current: &SceneState) -> (String, SceneState) {
    let d = parse_descriptor(descriptor);
    let mut state = current.clone();
    let mut touched: BTreeSet<String> = BTreeSet::new();
    let mut sentences: Vec<String> = Vec::new();
    let mentioned: BTreeSet<&str> = d.named().map(|(n, _)| n).collect();

    let add_assumed = |state: &mut SceneState, sentences: &mut Vec<String>, name: &str| {
        if state.get(name).is_none() && !mentioned.contains(name) {
            let o = SceneObject::new(name, Outline::Blue);
            sentences.push(format!("Add {}.", o.prompt_item()));
            state.upsert(o);
        }
    };
    for lm in &d.landmarks {
        add_assumed(&mut state, &mut sentences, lm);
        if let Some(pair) = structural_pair(lm) {
            add_assumed(&mut state, &mut sentences, pair);
        }
    }
    for (name, _) in d.named() {
        if let Some(pair) = structural_pair(name) {
            add_assumed(&mut state, &mut sentences, pair);
        }
    }

    let pronoun_target = current.objects.last().map(|o| o.name.clone());
    for m in &d.mentions {
        let Some(name) = m.name.clone().or_else(|| pronoun_target.clone()) else { continue };
        let existing = state.get(&name).cloned();
        let wanted = d.outline_for(m);
        match (m.op, existing) {
            (MentionOp::Remove, Some(_)) => {
                sentences.push(format!("Remove the {name}."));
                state.objects.retain(|o| o.name != name);
                touched.insert(name);
            }
            (MentionOp::Remove, None) => {}
            (MentionOp::Move | MentionOp::Rescale, Some(old)) => {
                let mut new = old.clone();
                new.add_words(&m.modifiers, true);
                if m.op == MentionOp::Move {
                    new.set_position(m.position.as_deref());
                    new.outline = if m.relative { Outline::Red } else { Outline::Black };
                }
                sentences.push(format!(
                    "DELETE the {name} (in {} outline) {MOVE_SEPARATOR} ADD {}.",
                    old.outline.word(),
                    new.prompt_item()
                ));
                state.objects.retain(|o| o.name != name);
                state.objects.push(new);
                touched.insert(name);
            }
            (_, Some(old)) => {
                let mut new = old.clone();
                new.set_count(m.count.or(Some(old.count())));
                new.add_words(&m.modifiers, true);
                new.set_position(m.position.as_deref());
                new.set_part(m.part.as_deref());
                if rank(wanted) > rank(old.outline) {
                    new.outline = wanted;
                }
                if new != old {
                    sentences.push(format!(
                        "Replace the {name} (in {} outline) with {}.",
                        old.outline.word(),
                        new.prompt_item()
                    ));
                    state.upsert(new);
                    touched.insert(name);
                }
            }
            (_, None) => {
                let o = m.to_object(&name, wanted);
                sentences.push(format!("Add {}.", o.prompt_item()));
                state.upsert(o);
                touched.insert(name);
            }
        }
    }
    let kept: Vec<String> =
        current.objects.iter().filter(|o| !touched.contains(&o.name)).map(|o| o.name.clone()).collect();
    if !kept.is_empty() {
        sentences.push(format!("Keep the {} unchanged.", join_list(&kept)));
    }
    if sentences.is_empty() {
        sentences.push("Keep the scene unchanged.".to_string());
    }
    (sentences.join(" "), state)
}

/// One operation of an image prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptOp {
    Create { scene: Option<String>, objects: Vec<SceneObject> },
    Add(SceneObject),
    Remove(String),
    Replace { target: String, with: SceneObject },
    Move { target: String, with: SceneObject },
    Keep(Vec<String>),
}

static ITEM_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(.*?)\s*\(in (black|red|blue) outline\)\s*(.*)$").unwrap());
static REPLACE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^Replace the (.+?) \(in (?:black|red|blue) outline\) with (.+)$").unwrap());
static REMOVE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^Remove the (.+?)(?: \(in (?:black|red|blue) outline\))?$").unwrap());
static MOVE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^DELETE the (.+?)(?: \(in (?:black|red|blue) outline\))? \$\$\$ ADD (.+)$").unwrap());
static KEEP_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^Keep the (.+) unchanged$").unwrap());
static ITEM_AND_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\) [^,]*? and (?:a|an|the|\d+|two|three|four|five|six|seven|eight|nine|ten) ").unwrap()
});

fn object_name(raw: &str) -> String {
    let raw = raw.trim().to_lowercase();
    canonical_object(&raw).map(str::to_string).unwrap_or(raw)
}

fn parse_item(text: &str) -> SceneObject {
    let text = text.trim();
    let (pre, outline, rest) = match ITEM_RE.captures(text) {
        Some(c) => (c[1].to_string(), Outline::from_word(&c[2]).unwrap_or(Outline::Black), c[3].trim().to_string()),
        None => (text.to_string(), Outline::Black, String::new()),
    };
    let d = parse_descriptor(&pre);
    let mut obj = match d.named().next() {
        Some((name, m)) => m.to_object(name, outline),
        None => {
            let last = tokenize(&pre).into_iter().rfind(|t| !is_punct(t)).unwrap_or_default();
            SceneObject::new(last, outline)
        }
    };
    let (pos, part) = match rest.split_once("that has ") {
        Some((p, part)) => (p.trim().to_string(), Some(part.trim().to_string())),
        None => (rest.trim().to_string(), None),
    };
    if !pos.is_empty() {
        obj.set_position(Some(pos.trim_end_matches('.')));
    }
    if let Some(part) = part {
        let part = part.trim_end_matches('.');
        let part = part.strip_prefix("an ").or_else(|| part.strip_prefix("a ")).unwrap_or(part);
        obj.set_part(Some(part));
    }
    obj
}

fn split_items(list: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in list.split(", ") {
        let chunk = chunk.trim();
        let chunk = chunk.strip_prefix("and ").unwrap_or(chunk);
        let mut rest = chunk;
        while let Some(m) = ITEM_AND_RE.find(rest) {
            let cut = m.as_str().rfind(" and ").map(|k| m.start() + k).unwrap_or(m.end());
            out.push(rest[..cut].trim().to_string());
            rest = rest[cut + 5..].trim_start();
        }
        if !rest.is_empty() {
            out.push(rest.to_string());
        }
    }
    out
}

fn split_names(list: &str) -> Vec<String> {
    list.split(", ")
        .flat_map(|c| c.split(" and "))
        .map(|c| c.trim().strip_prefix("and ").unwrap_or(c.trim()))
        .filter(|c| !c.is_empty())
        .map(object_name)
        .collect()
}

/// Splits text at periods followed by whitespace or the end.
pub fn sentences(prompt: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = prompt.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if c == '.' && chars.get(i + 1).is_none_or(|n| n.is_whitespace()) {
            if !cur.trim().is_empty() {
                out.push(cur.trim().to_string());
            }
            cur.clear();
        } else {
            cur.push(c);
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

/// Parses a creation or edit prompt produced by [`compose_creation`] or
/// [`compose_edit`].
pub fn parse_prompt(prompt: &str) -> Result<Vec<PromptOp>, GrammarError> {
    let sents = sentences(prompt);
    if sents.is_empty() {
        return Err(GrammarError::Empty);
    }
    let preamble = CREATION_PREAMBLE.trim_end_matches('.');
    if sents[0] == preamble {
        let suffix = CREATION_SUFFIX.trim_end_matches('.');
        let body: Vec<&String> = sents[1..].iter().filter(|s| s.as_str() != suffix).collect();
        let body = body.first().map(|s| s.as_str()).unwrap_or("");
        let (scene, list) = match body.strip_prefix("In ") {
            Some(rest) => {
                let (room, list) = rest.split_once(", ").unwrap_or((rest, ""));
                let room = room.trim();
                let room = room
                    .strip_prefix("an ")
                    .or_else(|| room.strip_prefix("a "))
                    .or_else(|| room.strip_prefix("the "))
                    .unwrap_or(room);
                let room =
                    canonical_room(&room.to_lowercase()).map(str::to_string).unwrap_or_else(|| room.to_lowercase());
                (Some(room), list)
            }
            None if body == "An empty room" => (None, ""),
            None => (None, body),
        };
        let objects = split_items(list).iter().map(|s| parse_item(s)).collect();
        return Ok(vec![PromptOp::Create { scene, objects }]);
    }
    let mut ops = Vec::new();
    for s in sents {
        if s == "Keep the scene unchanged" {
            ops.push(PromptOp::Keep(Vec::new()));
        } else if let Some(c) = MOVE_RE.captures(&s) {
            ops.push(PromptOp::Move { target: object_name(&c[1]), with: parse_item(&c[2]) });
        } else if let Some(c) = REPLACE_RE.captures(&s) {
            ops.push(PromptOp::Replace { target: object_name(&c[1]), with: parse_item(&c[2]) });
        } else if let Some(c) = REMOVE_RE.captures(&s) {
            ops.push(PromptOp::Remove(object_name(&c[1])));
        } else if let Some(c) = KEEP_RE.captures(&s) {
            ops.push(PromptOp::Keep(split_names(&c[1])));
        } else if let Some(rest) = s.strip_prefix("Add ") {
            ops.push(PromptOp::Add(parse_item(rest)));
        } else {
            return Err(GrammarError::UnrecognizedSentence(s));
        }
    }
    Ok(ops)
}

/// Summary sentence for one mention, e.g. `There are two guitars on the wall.`
pub fn statement(obj: &SceneObject, hedged: bool) -> String {
    if hedged {
        return format!("There might be {}.", obj.noun_phrase());
    }
    let verb = if obj.count() > 1 { "are" } else { "is" };
    format!("There {verb} {}.", obj.noun_phrase())
}

/// Objects described by a block of prose (summaries, evidence text).
pub fn objects_in_text(text: &str) -> SceneState {
    let mut state = SceneState::default();
    let mut last: Option<String> = None;
    for s in sentences(text) {
        let d = parse_descriptor(&s);
        if state.scene.is_none() {
            state.scene = d.room.clone();
        }
        for m in &d.mentions {
            let Some(name) = m.name.clone().or_else(|| last.clone()) else { continue };
            let outline = d.outline_for(m);
            match state.objects.iter_mut().find(|o| o.name == name) {
                Some(o) => {
                    o.add_words(&m.modifiers, false);
                    if m.count.is_some() {
                        o.set_count(m.count);
                    }
                    o.set_position(m.position.as_deref());
                    o.set_part(m.part.as_deref());
                    if rank(outline) > rank(o.outline) {
                        o.outline = outline;
                    }
                }
                None => state.objects.push(m.to_object(&name, outline)),
            }
            last = Some(name);
        }
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(s: &SceneState) -> Vec<(&str, Outline)> {
        s.objects.iter().map(|o| (o.name.as_str(), o.outline)).collect()
    }

    #[test]
    fn bedroom_creation_fills_assumptions_in_blue() {
        let (prompt, state) = compose_creation("a bedroom", "bedroom").unwrap();
        assert_eq!(
            prompt,
            "A clean, minimalist, iconic scene. In a bedroom, a bed (in blue outline), a nightstand (in blue outline), \
             and a lamp (in blue outline). Solid white background, no shadows."
        );
        assert_eq!(state.objects.len(), 3);
        assert!(state.objects.iter().all(|o| o.outline == Outline::Blue));
    }

    #[test]
    fn home_office_creation_has_one_blue_desk() {
        let (_, state) = compose_creation("a home office", "home office").unwrap();
        assert_eq!(names(&state), vec![("desk", Outline::Blue)]);
        assert_eq!(state.scene.as_deref(), Some("home office"));
    }

    #[test]
    fn explicit_objects_are_black_and_relative_ones_red() {
        let d = parse_descriptor("a lamp near the window and a red rug");
        let outlines: Vec<_> = d.named().map(|(n, m)| (n.to_string(), d.outline_for(m))).collect();
        assert_eq!(outlines, vec![("lamp".to_string(), Outline::Red), ("rug".to_string(), Outline::Black)]);
        assert_eq!(d.landmarks, vec!["window".to_string()]);
    }

    #[test]
    fn part_of_attaches_to_the_whole() {
        let current = plan_creation("a bedroom", "bedroom").unwrap();
        let (prompt, after) = compose_edit("the bedspread is red and grey stripped", &current);
        assert_eq!(
            prompt,
            "Replace the bed (in blue outline) with a bed (in black outline) that has a red and grey striped bedspread. \
             Keep the nightstand and lamp unchanged."
        );
        assert_eq!(after.get("bed").unwrap().part(), Some("red and grey striped bedspread"));
    }

    #[test]
    fn counted_objects_with_position_and_landmark() {
        let current = SceneState {
            scene: Some("home office".into()),
            objects: vec![SceneObject::new("desk", Outline::Blue), SceneObject::new("drum set", Outline::Black)],
        };
        let (prompt, after) = compose_edit("2 guitars on the wall", &current);
        assert_eq!(
            prompt,
            "Add a wall (in blue outline). Add a floor (in blue outline). Add two guitars (in black outline) on the wall. \
             Keep the desk and drum set unchanged."
        );
        let g = after.get("guitar").unwrap();
        assert_eq!(g.count(), 2);
        assert_eq!(g.position(), Some("on the wall"));
    }

    #[test]
    fn move_uses_delete_add_separator() {
        let current = plan_creation("a bedroom", "bedroom").unwrap();
        let (prompt, _) = compose_edit("move the lamp near the window", &current);
        assert!(prompt.starts_with("Add a window (in blue outline). DELETE the lamp (in blue outline) $$$ ADD a lamp (in red outline) near the window."), "{prompt}");
    }

    #[test]
    fn prompts_round_trip_through_the_interpreter() {
        let (p1, s1) = compose_creation("a bedroom", "bedroom").unwrap();
        let (p2, s2) = compose_edit("the bedspread is red and grey striped", &s1);
        let (p3, s3) = compose_edit("a window at the back and 2 guitars on the wall", &s2);
        let (p4, s4) = compose_edit("move the lamp near the window", &s3);
        let (p5, s5) = compose_edit("remove the nightstand", &s4);
        assert_eq!(SceneState::replay(&[&p1]).unwrap(), s1);
        assert_eq!(SceneState::replay(&[&p1, &p2]).unwrap(), s2);
        assert_eq!(SceneState::replay(&[&p1, &p2, &p3]).unwrap(), s3);
        assert_eq!(SceneState::replay(&[&p1, &p2, &p3, &p4]).unwrap(), s4);
        assert_eq!(SceneState::replay(&[&p1, &p2, &p3, &p4, &p5]).unwrap(), s5);
        assert!(s5.get("nightstand").is_none());
    }

    #[test]
    fn facts_cover_confirmed_objects_only() {
        let s = plan_creation("a red cat on a sofa", "").unwrap();
        let facts = s.facts();
        for f in ["There is a cat", "The cat is red", "The cat is on a sofa"] {
            assert!(facts.contains(&f.to_string()), "{facts:?}");
        }
        assert!(!facts.iter().any(|f| f.contains("sofa") && f.starts_with("There")));
    }

    #[test]
    fn pronoun_attribute_applies_to_last_object() {
        let current =
            SceneState { scene: None, objects: vec![SceneObject::new("wall", Outline::Black).with_attrs(&["green"])] };
        let (_, after) = compose_edit("Actually, it's blue", &current);
        assert_eq!(after.get("wall").unwrap().colors(), vec!["blue"]);
    }

    #[test]
    fn assumption_budget_is_enforced() {
        let err = plan_creation("maybe a lamp, maybe a rug, maybe a desk and maybe a chair", "").unwrap_err();
        assert_eq!(err, CompositionError::AssumptionBudgetExceeded(4));
    }

    #[test]
    fn summaries_parse_back_into_objects() {
        let s = objects_in_text("The scene is a bathroom. There is a white toilet. There is a yellow rug. There are two guitars on the wall.");
        assert_eq!(s.scene.as_deref(), Some("bathroom"));
        assert_eq!(s.get("rug").unwrap().colors(), vec!["yellow"]);
        assert_eq!(s.get("guitar").unwrap().count(), 2);
    }

    #[test]
    fn staircase_aliases() {
        let d = parse_descriptor("mine has wooden brown stair case");
        let (name, m) = d.named().next().unwrap();
        assert_eq!(name, "staircase");
        assert_eq!(m.modifiers, vec!["wooden", "brown"]);
    }
}
