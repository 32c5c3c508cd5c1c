//! Cross-frame relation extraction and the relation graph.

use std::collections::{BTreeSet, HashSet};

use thiserror::Error;

use crate::domain::{FrameId, Relation, Triplet};
use crate::gateway::parse::{parse_linker_output, ParseError, TripletCandidate};
use crate::gateway::{GatewayError, ModelBackend};
use crate::prompts::{linker_request, FrameSlots};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("link extraction needs a current frame")]
    NoCurrentFrame,
    #[error("unknown frame {0}")]
    UnknownFrame(FrameId),
    #[error("malformed triplet line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Maps a raw predicate onto the canonical vocabulary: lowercase,
/// non-alphanumerics to underscores, then a small alias table.
pub fn normalize_predicate(raw: &str) -> Option<Relation> {
    let mut s = String::with_capacity(raw.len());
    for c in raw.trim().chars() {
        let c = if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' };
        if !(c == '_' && s.ends_with('_')) {
            s.push(c);
        }
    }
    let s = s.trim_matches('_');
    if let Some(r) = Relation::from_canonical(s) {
        return Some(r);
    }
    if let Some(r) = Relation::from_canonical(&format!("is_{s}")) {
        return Some(r);
    }
    Some(match s {
        "north" | "northof" => Relation::NorthOf,
        "south" | "southof" => Relation::SouthOf,
        "east" | "eastof" => Relation::EastOf,
        "west" | "westof" => Relation::WestOf,
        "adjacent_to" | "is_adjacent_to" | "beside" | "next_to_each_other" | "connected_to" | "is_connected_to" => {
            Relation::NextTo
        }
        "same" | "same_place_as" | "identical_to" => Relation::SameAs,
        "revisit" | "revisits" | "revisited" => Relation::RevisitOf,
        _ => return None,
    })
}

/// Validates one candidate against the offered slots.
fn validate(c: &TripletCandidate, slots: &FrameSlots) -> Result<Triplet, String> {
    let offered: Vec<FrameId> = slots.ids().map(FrameId::frame).collect();
    let frame = |text: &str| -> Result<FrameId, String> {
        let id = FrameId::parse(text).map_err(|e| e.to_string())?.frame();
        if offered.contains(&id) {
            Ok(id)
        } else {
            Err(format!("{id} is not an offered frame"))
        }
    };
    let subject = frame(&c.subject)?;
    let object = frame(&c.object)?;
    let predicate = normalize_predicate(&c.predicate).ok_or_else(|| format!("unknown predicate {:?}", c.predicate))?;
    if subject == object {
        return Err(format!("self-relation on {subject}"));
    }
    Ok(Triplet { subject, predicate, object })
}

/// Asks the linker for relations stated by `hint`. Candidates that name
/// frames outside the slots or an unknown predicate are dropped and
/// reported in the returned diagnostics.
pub fn extract_links(
    hint: &str,
    context: &[String],
    slots: &FrameSlots,
    meta: &[(FrameId, String)],
    backend: &dyn ModelBackend,
) -> Result<(Vec<Triplet>, Vec<String>), LinkError> {
    if slots.curr.is_none() {
        return Err(LinkError::NoCurrentFrame);
    }
    let raw = backend.chat(&linker_request(hint, context, slots, meta))?;
    let mut out = Vec::new();
    let mut diagnostics = Vec::new();
    for c in parse_linker_output(&raw)? {
        match validate(&c, slots) {
            Ok(t) if !out.contains(&t) => out.push(t),
            Ok(_) => {}
            Err(why) => diagnostics.push(format!("dropped triplet {} {} {}: {why}", c.subject, c.predicate, c.object)),
        }
    }
    Ok((out, diagnostics))
}

/// Triplets between known frames, kept in insertion order. Inverses are
/// answered at query time rather than stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelationGraph {
    frames: BTreeSet<FrameId>,
    triplets: Vec<Triplet>,
    seen: HashSet<Triplet>,
}

impl RelationGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes `frame` (any version of it) a valid triplet endpoint.
    pub fn register_frame(&mut self, frame: FrameId) {
        self.frames.insert(frame.frame());
    }

    pub fn knows(&self, frame: FrameId) -> bool {
        self.frames.contains(&frame.frame())
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    /// Idempotent insert. Returns whether the triplet was new.
    pub fn insert(&mut self, t: Triplet) -> Result<bool, LinkError> {
        let t = Triplet { subject: t.subject.frame(), predicate: t.predicate, object: t.object.frame() };
        for f in [t.subject, t.object] {
            if !self.knows(f) {
                return Err(LinkError::UnknownFrame(f));
            }
        }
        if !self.seen.insert(t) {
            return Ok(false);
        }
        self.triplets.push(t);
        Ok(true)
    }

    /// Triplets incident to `frame` in insertion order. With a predicate,
    /// stored triplets under its inverse are returned flipped, and
    /// symmetric relations are oriented with `frame` as subject.
    pub fn neighbors(&self, frame: FrameId, predicate: Option<Relation>) -> Result<Vec<Triplet>, LinkError> {
        let frame = frame.frame();
        if !self.knows(frame) {
            return Err(LinkError::UnknownFrame(frame));
        }
        let mut out: Vec<Triplet> = Vec::new();
        for t in self.triplets.iter().filter(|t| t.subject == frame || t.object == frame) {
            let hit = match predicate {
                None => Some(*t),
                Some(p) if t.predicate == p && (p.inverse() != p || t.subject == frame) => Some(*t),
                Some(p) if t.predicate.inverse() == p => {
                    Some(Triplet { subject: t.object, predicate: p, object: t.subject })
                }
                Some(_) => None,
            };
            if let Some(h) = hit.filter(|h| !out.contains(h)) {
                out.push(h);
            }
        }
        Ok(out)
    }

    /// Triplets touching any hit, deduplicated and sorted.
    pub fn triplets_for(&self, hits: &[FrameId]) -> Vec<Triplet> {
        let hits: BTreeSet<FrameId> = hits.iter().map(|h| h.frame()).collect();
        let set: BTreeSet<Triplet> =
            self.triplets.iter().filter(|t| hits.contains(&t.subject) || hits.contains(&t.object)).copied().collect();
        set.into_iter().collect()
    }

    /// One `{subject, predicate, object}` JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.triplets.iter().map(|t| serde_json::to_string(t).expect("triplets serialize") + "\n").collect()
    }

    /// Reads triplets written by [`RelationGraph::to_jsonl`] into a graph
    /// whose frames are already registered.
    pub fn load_jsonl(&mut self, text: &str) -> Result<(), LinkError> {
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let t: Triplet =
                serde_json::from_str(line).map_err(|e| LinkError::Format { line: i + 1, message: e.to_string() })?;
            self.insert(t)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SpeakerId;
    use crate::gateway::mock::{MockBackend, ScriptedBackend};
    use crate::gateway::RoleTag;
    use proptest::prelude::*;

    fn b(n: u32) -> FrameId {
        FrameId::new(SpeakerId::B, n)
    }

    fn graph(n: u32) -> RelationGraph {
        let mut g = RelationGraph::new();
        (1..=n).for_each(|i| g.register_frame(b(i)));
        g
    }

    #[test]
    fn predicate_aliases() {
        assert_eq!(normalize_predicate("north_of"), Some(Relation::NorthOf));
        assert_eq!(normalize_predicate("Is North Of"), Some(Relation::NorthOf));
        assert_eq!(normalize_predicate("next-to"), Some(Relation::NextTo));
        assert_eq!(normalize_predicate("likes"), None);
    }

    #[test]
    fn moving_north_links_current_to_previous() {
        let slots = FrameSlots { prev: Some(b(2)), curr: Some(b(3)), next: None };
        let meta = vec![(b(2), "kitchen".to_string()), (b(3), "home office".to_string())];
        let (t, _) =
            extract_links("I moved north from a kitchen to get here", &[], &slots, &meta, &MockBackend::new(0))
                .unwrap();
        assert_eq!(t, vec![Triplet { subject: b(3), predicate: Relation::NorthOf, object: b(2) }]);
        let (t, _) = extract_links("ok cool", &[], &slots, &meta, &MockBackend::new(0)).unwrap();
        assert!(t.is_empty());
        let none = FrameSlots::default();
        assert_eq!(extract_links("x", &[], &none, &[], &MockBackend::new(0)).unwrap_err(), LinkError::NoCurrentFrame);
    }

    #[test]
    fn invalid_candidates_are_dropped() {
        let s = ScriptedBackend::new(0);
        s.push(
            RoleTag::Linker,
            r#"{"triplets":[{"subject":"B_9","predicate":"north_of","object":"B_2"},
                {"subject":"B_3","predicate":"likes","object":"B_2"},
                {"subject":"B_3","predicate":"north_of","object":"B_2"}]}"#,
        );
        let slots = FrameSlots { prev: Some(b(2)), curr: Some(b(3)), next: None };
        let (t, diag) = extract_links("north", &[], &slots, &[], &s).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(diag.len(), 2);
    }

    #[test]
    fn graph_queries() {
        let mut g = graph(3);
        let t = Triplet { subject: b(3), predicate: Relation::NorthOf, object: b(2) };
        assert!(g.insert(t).unwrap());
        assert!(!g.insert(t).unwrap());
        assert_eq!(g.len(), 1);
        assert_eq!(g.neighbors(b(2), None).unwrap(), vec![t]);
        assert_eq!(
            g.neighbors(b(2), Some(Relation::SouthOf)).unwrap(),
            vec![Triplet { subject: b(2), predicate: Relation::SouthOf, object: b(3) }]
        );
        assert_eq!(g.neighbors(b(9), None).unwrap_err(), LinkError::UnknownFrame(b(9)));
        assert_eq!(g.triplets_for(&[b(3)]), vec![t]);
        assert_eq!(g.triplets_for(&[b(2), b(3)]).len(), 1);
        assert!(g.triplets_for(&[]).is_empty());
        assert_eq!(
            g.insert(Triplet { subject: b(9), predicate: Relation::NextTo, object: b(2) }).unwrap_err(),
            LinkError::UnknownFrame(b(9))
        );
        let mut h = graph(3);
        h.load_jsonl(&g.to_jsonl()).unwrap();
        assert_eq!(h.triplets(), g.triplets());
        assert_eq!(g.to_jsonl(), "{\"subject\":\"B_3\",\"predicate\":\"is_north_of\",\"object\":\"B_2\"}\n");
    }

    fn arb_triplet() -> impl Strategy<Value = Triplet> {
        (1u32..8, 0usize..7, 1u32..8).prop_map(|(s, p, o)| Triplet {
            subject: b(s),
            predicate: Relation::ALL[p],
            object: b(o),
        })
    }

    proptest! {
        #[test]
        fn referential_integrity(ops in proptest::collection::vec(arb_triplet(), 0..40)) {
            let mut g = graph(5);
            for t in ops {
                let ok = g.insert(t).is_ok();
                prop_assert_eq!(ok, t.subject.ordinal <= 5 && t.object.ordinal <= 5);
            }
            for t in g.triplets() {
                prop_assert!(g.knows(t.subject) && g.knows(t.object));
            }
        }

        #[test]
        fn order_independent_queries(ts in proptest::collection::vec(arb_triplet(), 0..20), hits in proptest::collection::vec(1u32..8, 0..4)) {
            let mut g1 = graph(7);
            let mut g2 = graph(7);
            for t in &ts { g1.insert(*t).unwrap(); }
            for t in ts.iter().rev() { g2.insert(*t).unwrap(); }
            let hits: Vec<FrameId> = hits.into_iter().map(b).collect();
            prop_assert_eq!(g1.triplets_for(&hits), g2.triplets_for(&hits));
        }

        #[test]
        fn inverse_queries_are_symmetric(t in arb_triplet()) {
            let mut g = graph(7);
            g.insert(t).unwrap();
            let flipped = Triplet { subject: t.object, predicate: t.predicate.inverse(), object: t.subject };
            prop_assert!(g.neighbors(t.object, Some(t.predicate.inverse())).unwrap().contains(&flipped));
            prop_assert!(g.neighbors(t.subject, Some(t.predicate)).unwrap().contains(&t));
        }
    }
}
