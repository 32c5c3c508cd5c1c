//! Total parsers for every structured output the agents emit. Each returns
//! a value or a typed [`ParseError`] and never panics.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::json::{all_tags, find_array, find_object, last_tag};
use crate::domain::{
    Annotation, AtomicFact, BBox, Complexity, Constraint, EditAction, Equivalence, FactVerdict, JudgeVerdict,
    ObserverDecision, Plan, PlanStep, QuestionKind, Validity,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unparsable output: {0}")]
    UnparsableOutput(String),
    #[error("unknown action token {0:?}")]
    UnknownAction(String),
    #[error("unknown plan command {0:?}")]
    UnknownCommand(String),
    #[error("malformed RAG count {0:?}")]
    MalformedRagCount(String),
    #[error("expected {expected} verdicts, got {got}")]
    VerdictCountMismatch { expected: usize, got: usize },
    #[error("unknown label {0}")]
    UnknownLabel(String),
}

fn unparsable(what: &str) -> ParseError {
    ParseError::UnparsableOutput(what.to_string())
}

fn str_field<'a>(m: &'a Map<String, Value>, key: &str) -> &'a str {
    m.get(key).and_then(Value::as_str).unwrap_or("")
}

/// Observer JSON (`frame_meta`, `relation`, `imagery`, `action`).
///
/// `frame_meta` has the form `Scene Label: Non-visual info`; the label and
/// the info are split into `frame_meta` and `metadata`.
pub fn parse_observer_output(raw: &str) -> Result<ObserverDecision, ParseError> {
    let obj = find_object(raw, |m| m.contains_key("action")).ok_or_else(|| unparsable("no observer JSON object"))?;
    let token = obj.get("action").and_then(Value::as_str).ok_or_else(|| unparsable("action is not a string"))?;
    let action = EditAction::from_token(token).ok_or_else(|| ParseError::UnknownAction(token.to_string()))?;
    let meta = str_field(&obj, "frame_meta").trim();
    let (label, info) = match meta.split_once(':') {
        Some((l, i)) => (l.trim(), i.trim()),
        None => (meta, ""),
    };
    let relation = str_field(&obj, "relation").trim();
    let relation_hint = (!relation.is_empty()
        && !matches!(relation.to_ascii_lowercase().as_str(), "none" | "null" | "n/a" | "[relation_meta]"))
    .then(|| relation.to_string());
    let imagery = str_field(&obj, "imagery").trim();
    let scene_descriptor = match action {
        EditAction::Skip => String::new(),
        _ if !imagery.is_empty() => imagery.to_string(),
        _ if !label.is_empty() => label.to_string(),
        _ => return Err(unparsable("NEW/CONTINUE without imagery")),
    };
    Ok(ObserverDecision {
        action,
        scene_descriptor,
        metadata: info.to_string(),
        frame_meta: label.to_string(),
        relation_hint,
    })
}

static ITEM_NUMBERING: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(?:step\s*\d+\s*[:.)\-]?|\d+\s*[.):\-])\s*").unwrap());
static COMMAND: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^(POV|RAG|PROCESS|FINAL[_ ]ANSWER)\b").unwrap());
static RAG_COUNT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^\s*\[\s*(?:k\s*=\s*)?([^\]]*?)\s*\]").unwrap());

fn clean_instruction(rest: &str) -> String {
    rest.trim().trim_start_matches([':', '-']).trim().to_string()
}

fn parse_plan_item(item: &str) -> Result<PlanStep, ParseError> {
    let item = item.trim();
    let item = ITEM_NUMBERING.replace(item, "");
    let item = item.trim();
    let Some(m) = COMMAND.find(item) else {
        let word = item.split_whitespace().next().unwrap_or("").to_string();
        return Err(ParseError::UnknownCommand(word));
    };
    let rest = &item[m.end()..];
    let word = m.as_str().to_ascii_uppercase().replace(' ', "_");
    Ok(match word.as_str() {
        "POV" => PlanStep::pov(clean_instruction(rest)),
        "PROCESS" => PlanStep::process(clean_instruction(rest)),
        "FINAL_ANSWER" => PlanStep::final_answer(clean_instruction(rest)),
        _ => {
            let c = RAG_COUNT.captures(rest).ok_or_else(|| ParseError::MalformedRagCount(String::new()))?;
            let digits = &c[1];
            let n = (!digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()))
                .then(|| digits.parse::<u32>().ok())
                .flatten()
                .filter(|&n| n >= 1)
                .ok_or_else(|| ParseError::MalformedRagCount(digits.to_string()))?;
            PlanStep::rag(n, clean_instruction(&rest[c.get(0).map_or(0, |g| g.end())..]))
        }
    })
}

/// Planner `<answer><item>…</item>…</answer>` output.
pub fn parse_planner_output(raw: &str) -> Result<Plan, ParseError> {
    let body = last_tag(raw, "answer").ok_or_else(|| unparsable("no <answer> span"))?;
    let items = all_tags(body, "item");
    if items.is_empty() {
        return Err(unparsable("no <item> elements"));
    }
    let steps = items.into_iter().map(parse_plan_item).collect::<Result<Vec<_>, _>>()?;
    Ok(Plan { steps })
}

/// A linker triplet before frame-id and predicate validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletCandidate {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

pub fn parse_linker_output(raw: &str) -> Result<Vec<TripletCandidate>, ParseError> {
    let obj = find_object(raw, |m| m.get("triplets").is_some_and(Value::is_array))
        .ok_or_else(|| unparsable("no JSON object with a triplets array"))?;
    let items = obj["triplets"].as_array().map(Vec::as_slice).unwrap_or(&[]);
    Ok(items
        .iter()
        .map(|t| {
            let field = |k: &str| t.get(k).and_then(Value::as_str).unwrap_or("").trim().to_string();
            TripletCandidate { subject: field("subject"), predicate: field("predicate"), object: field("object") }
        })
        .collect())
}

fn verdict_value(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" | "yes" => Some(true),
            "false" | "no" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

fn box_value(v: Option<&Value>) -> Option<BBox> {
    let a = v?.as_array()?;
    if a.len() != 4 {
        return None;
    }
    let mut n = [0i64; 4];
    for (slot, x) in n.iter_mut().zip(a) {
        let f = x.as_f64()?;
        if !f.is_finite() || f.abs() > 1e12 {
            return None;
        }
        *slot = f.round() as i64;
    }
    Some(BBox::new(n[0], n[1], n[2], n[3]))
}

fn norm_fact(s: &str) -> String {
    s.trim().trim_end_matches('.').to_lowercase()
}

/// Fact-checker verdict list, aligned to the submitted `facts`: by text
/// when the returned fact texts are a permutation of the submitted ones,
/// positionally otherwise.
pub fn parse_fact_checker_output(raw: &str, facts: &[AtomicFact]) -> Result<Vec<FactVerdict>, ParseError> {
    let is_verdict = |v: &Value| v.as_object().is_some_and(|o| o.contains_key("verdict"));
    let arr = find_array(raw, |a| !a.is_empty() && a.iter().all(is_verdict))
        .or_else(|| find_array(raw, |a| a.is_empty()))
        .ok_or_else(|| unparsable("no verdict array"))?;
    if arr.len() != facts.len() {
        return Err(ParseError::VerdictCountMismatch { expected: facts.len(), got: arr.len() });
    }
    let mut parsed = Vec::with_capacity(arr.len());
    for item in &arr {
        let verdict = verdict_value(&item["verdict"]).ok_or_else(|| unparsable("verdict is not a boolean"))?;
        let text = item.get("fact").and_then(Value::as_str).unwrap_or("");
        let bbox = if verdict { box_value(item.get("box")) } else { None };
        parsed.push((norm_fact(text), verdict, bbox));
    }
    let mut submitted: Vec<String> = facts.iter().map(|f| norm_fact(&f.text)).collect();
    let mut returned: Vec<String> = parsed.iter().map(|p| p.0.clone()).collect();
    submitted.sort();
    returned.sort();
    let by_text = submitted == returned;
    let mut used = vec![false; parsed.len()];
    let mut out = Vec::with_capacity(facts.len());
    for (i, fact) in facts.iter().enumerate() {
        let k = if by_text {
            let key = norm_fact(&fact.text);
            (0..parsed.len()).find(|&k| !used[k] && parsed[k].0 == key).unwrap_or(i)
        } else {
            i
        };
        used[k] = true;
        out.push(FactVerdict { fact: fact.clone(), verdict: parsed[k].1, bbox: parsed[k].2 });
    }
    Ok(out)
}

pub fn parse_judge_output(raw: &str) -> Result<JudgeVerdict, ParseError> {
    let answer = last_tag(raw, "answer").ok_or_else(|| unparsable("no <answer> span"))?;
    let token = answer.trim().trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace());
    let verdict = if token.eq_ignore_ascii_case("same") {
        Equivalence::Same
    } else if token.eq_ignore_ascii_case("different") {
        Equivalence::Different
    } else {
        return Err(unparsable("verdict must be SAME or DIFFERENT"));
    };
    let reasoning = last_tag(raw, "reasoning").or_else(|| last_tag(raw, "think")).unwrap_or("").trim().to_string();
    Ok(JudgeVerdict { verdict, reasoning })
}

fn label<T: for<'de> Deserialize<'de>>(obj: &Map<String, Value>, key: &str) -> Result<T, ParseError> {
    let raw = obj
        .get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| ParseError::UnparsableOutput(format!("missing key {key}")))?;
    let token = raw.trim().to_ascii_lowercase();
    serde_json::from_value(Value::String(token)).map_err(|_| ParseError::UnknownLabel(format!("{key}={raw}")))
}

pub fn parse_annotator_output(raw: &str) -> Result<Annotation, ParseError> {
    let obj =
        find_object(raw, |m| m.contains_key("complexity_type")).ok_or_else(|| unparsable("no annotation JSON"))?;
    Ok(Annotation {
        complexity: label::<Complexity>(&obj, "complexity_type")?,
        question_kind: label::<QuestionKind>(&obj, "question_type")?,
        constraint: label::<Constraint>(&obj, "constraint_type")?,
        validity: label::<Validity>(&obj, "validity_type")?,
    })
}

/// Fact decomposer output: `{"facts": [...]}` or a bare string array.
pub fn parse_facts_output(raw: &str) -> Result<Vec<String>, ParseError> {
    let strings = |a: &[Value]| a.iter().map(|v| v.as_str().map(|s| s.trim().to_string())).collect::<Option<Vec<_>>>();
    if let Some(obj) = find_object(raw, |m| m.get("facts").is_some_and(Value::is_array)) {
        return strings(obj["facts"].as_array().map(Vec::as_slice).unwrap_or(&[]))
            .ok_or_else(|| unparsable("facts must be strings"));
    }
    let arr = find_array(raw, |a| a.iter().all(Value::is_string)).ok_or_else(|| unparsable("no facts list"))?;
    strings(&arr).ok_or_else(|| unparsable("facts must be strings"))
}

/// Summarizer and constructor output: `{"scene": "..."}`; plain text is
/// accepted as the scene itself.
pub fn parse_scene_output(raw: &str) -> Result<String, ParseError> {
    if let Some(obj) = find_object(raw, |m| m.get("scene").is_some_and(Value::is_string)) {
        return Ok(str_field(&obj, "scene").trim().to_string());
    }
    let text = strip_think(raw);
    if text.is_empty() {
        Err(unparsable("empty scene output"))
    } else {
        Ok(text)
    }
}

fn strip_think(raw: &str) -> String {
    let lower = raw.to_ascii_lowercase();
    match lower.rfind("</think>") {
        Some(i) => raw[i + "</think>".len()..].trim().to_string(),
        None => raw.trim().to_string(),
    }
}

/// Final answerer (and refiner) output: the last `<answer>` span, or the
/// whole text after any thinking block.
pub fn parse_answer_output(raw: &str) -> String {
    match last_tag(raw, "answer") {
        Some(a) => a.trim().to_string(),
        None => strip_think(raw),
    }
}
