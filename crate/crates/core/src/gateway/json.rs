//! Extraction of structured payloads from free-form model output.

use std::sync::LazyLock;

use regex::Regex;
use serde_json::{Map, Value};

static TRAILING_COMMA: LazyLock<Regex> = LazyLock::new(|| Regex::new(r",(\s*[}\]])").unwrap());

fn strip_fences(raw: &str) -> String {
    raw.lines().filter(|l| !l.trim_start().starts_with("```")).collect::<Vec<_>>().join("\n")
}

/// Byte index of the bracket closing the one at `start`, string-aware.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' | b'[' => depth += 1,
            b'}' | b']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_lenient(candidate: &str) -> Option<Value> {
    serde_json::from_str(candidate)
        .ok()
        .or_else(|| serde_json::from_str(&TRAILING_COMMA.replace_all(candidate, "$1")).ok())
}

/// Every JSON value opened by `open` (`{` or `[`) found in `raw`, scanning
/// outermost spans first. Spans that fail to parse are searched for nested
/// candidates.
pub fn embedded_values(raw: &str, open: u8) -> Vec<Value> {
    let text = strip_fences(raw);
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == open {
            if let Some(end) = balanced_end(&text, i) {
                if let Some(v) = parse_lenient(&text[i..=end]) {
                    out.push(v);
                    i = end + 1;
                    continue;
                }
            }
        }
        i += 1;
    }
    out
}

/// First embedded JSON object satisfying `accept`.
pub fn find_object(raw: &str, accept: impl Fn(&Map<String, Value>) -> bool) -> Option<Map<String, Value>> {
    embedded_values(raw, b'{').into_iter().find_map(|v| match v {
        Value::Object(m) if accept(&m) => Some(m),
        _ => None,
    })
}

/// First embedded JSON array satisfying `accept`.
pub fn find_array(raw: &str, accept: impl Fn(&[Value]) -> bool) -> Option<Vec<Value>> {
    embedded_values(raw, b'[').into_iter().find_map(|v| match v {
        Value::Array(a) if accept(&a) => Some(a),
        _ => None,
    })
}

/// Body of the last complete `<tag>…</tag>` span (tag names match
/// ASCII-case-insensitively).
pub fn last_tag<'a>(raw: &'a str, tag: &str) -> Option<&'a str> {
    let lower = raw.to_ascii_lowercase();
    let open = format!("<{}>", tag.to_ascii_lowercase());
    let close = format!("</{}>", tag.to_ascii_lowercase());
    let mut starts: Vec<usize> = lower.match_indices(&open).map(|(i, _)| i).collect();
    starts.reverse();
    for s in starts {
        let body = s + open.len();
        if let Some(e) = lower[body..].find(&close) {
            return Some(&raw[body..body + e]);
        }
    }
    None
}

/// Body of the first complete `<tag>…</tag>` span.
pub fn first_tag<'a>(raw: &'a str, tag: &str) -> Option<&'a str> {
    all_tags(raw, tag).into_iter().next()
}

/// Bodies of all non-overlapping `<tag>…</tag>` spans in order.
pub fn all_tags<'a>(raw: &'a str, tag: &str) -> Vec<&'a str> {
    let lower = raw.to_ascii_lowercase();
    let open = format!("<{}>", tag.to_ascii_lowercase());
    let close = format!("</{}>", tag.to_ascii_lowercase());
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(s) = lower[pos..].find(&open) {
        let body = pos + s + open.len();
        match lower[body..].find(&close) {
            Some(e) => {
                out.push(&raw[body..body + e]);
                pos = body + e + close.len();
            }
            None => break,
        }
    }
    out
}
