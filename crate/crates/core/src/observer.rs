//! Scene segmentation: context windows, observer calls and routing of
//! edit actions to each speaker's frame sequence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Dialogue, EditAction, FrameId, ObserverDecision, SpeakerId, Utterance};
use crate::gateway::parse::parse_observer_output;
use crate::gateway::{GatewayError, ModelBackend};
use crate::prompts::{observer_request, SCENE_CHANGE};

/// One speaker's side of the perspective state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerState {
    pub active_frame: Option<FrameId>,
    pub next_ordinal: u32,
    /// Turns linked to each frame (sequence 1 ids), in processing order.
    pub frame_turn_spans: BTreeMap<FrameId, Vec<u32>>,
    /// Number of stored versions per frame.
    pub versions: BTreeMap<FrameId, u32>,
}

impl SpeakerState {
    fn new(offset: u32) -> Self {
        SpeakerState {
            active_frame: None,
            next_ordinal: offset + 1,
            frame_turn_spans: BTreeMap::new(),
            versions: BTreeMap::new(),
        }
    }

    /// The frame allocated just before `frame`, if any.
    pub fn preceding(&self, frame: FrameId) -> Option<FrameId> {
        self.frame_turn_spans.keys().filter(|f| f.ordinal < frame.ordinal).max_by_key(|f| f.ordinal).copied()
    }

    pub fn following(&self, frame: FrameId) -> Option<FrameId> {
        self.frame_turn_spans.keys().filter(|f| f.ordinal > frame.ordinal).min_by_key(|f| f.ordinal).copied()
    }
}

/// Both speakers' frame sequences, kept from the answerer's viewpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerspectiveState {
    pub a: SpeakerState,
    pub b: SpeakerState,
}

impl PerspectiveState {
    pub fn new(offsets: [u32; 2]) -> Self {
        PerspectiveState { a: SpeakerState::new(offsets[0]), b: SpeakerState::new(offsets[1]) }
    }

    pub fn for_dialogue(dialogue: &Dialogue) -> Self {
        PerspectiveState::new(dialogue.ordinal_offsets)
    }

    pub fn side(&self, speaker: SpeakerId) -> &SpeakerState {
        match speaker {
            SpeakerId::A => &self.a,
            SpeakerId::B => &self.b,
        }
    }

    pub fn side_mut(&mut self, speaker: SpeakerId) -> &mut SpeakerState {
        match speaker {
            SpeakerId::A => &mut self.a,
            SpeakerId::B => &mut self.b,
        }
    }
}

/// Context lines for `speaker`: the turns of the preceding frame, the
/// scene-change token, then the turns of the active frame.
pub fn build_context_window(dialogue: &Dialogue, state: &PerspectiveState, speaker: SpeakerId) -> Vec<String> {
    let side = state.side(speaker);
    let Some(active) = side.active_frame else { return Vec::new() };
    let render = |frame: FrameId| -> Vec<String> {
        side.frame_turn_spans
            .get(&frame)
            .into_iter()
            .flatten()
            .filter_map(|t| dialogue.utterances.iter().find(|u| u.turn_index == *t))
            .map(Utterance::render)
            .collect()
    };
    let mut out = Vec::new();
    if let Some(prev) = side.preceding(active) {
        out.extend(render(prev));
        out.push(SCENE_CHANGE.to_string());
    }
    out.extend(render(active));
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("CONTINUE from speaker {0} before any frame exists")]
    ContinueWithoutActiveFrame(SpeakerId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingOutcome {
    /// Version id the update will be stored under.
    pub target: Option<FrameId>,
    pub allocation: bool,
}

/// Applies a decision to the speaker's side of `state`.
pub fn route(
    decision: &ObserverDecision,
    u: &Utterance,
    state: &mut PerspectiveState,
) -> Result<RoutingOutcome, RouteError> {
    let side = state.side_mut(u.speaker);
    match decision.action {
        EditAction::Skip => Ok(RoutingOutcome { target: None, allocation: false }),
        EditAction::New => {
            let frame = FrameId::new(u.speaker, side.next_ordinal);
            side.next_ordinal += 1;
            side.active_frame = Some(frame);
            side.frame_turn_spans.insert(frame, vec![u.turn_index]);
            side.versions.insert(frame, 1);
            Ok(RoutingOutcome { target: Some(frame), allocation: true })
        }
        EditAction::Continue => {
            let frame = side.active_frame.ok_or(RouteError::ContinueWithoutActiveFrame(u.speaker))?;
            let n = side.versions.entry(frame).or_insert(0);
            *n += 1;
            side.frame_turn_spans.entry(frame).or_default().push(u.turn_index);
            Ok(RoutingOutcome { target: Some(frame.with_sequence(*n)), allocation: false })
        }
    }
}

/// Result of one observer call.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub decision: ObserverDecision,
    /// Set when every parse attempt failed and the decision fell back to SKIP.
    pub fallback: Option<String>,
}

/// Classifies one utterance. Unparsable output is re-requested up to
/// `parse_retries` times and then treated as SKIP.
pub fn observe(
    backend: &dyn ModelBackend,
    u: &Utterance,
    context: &[String],
    active: Option<(FrameId, &str)>,
    previous_prompts: &[String],
    parse_retries: u32,
) -> Result<Observation, GatewayError> {
    let request = observer_request(context, active, previous_prompts, u);
    let mut last_error = String::new();
    for _ in 0..=parse_retries {
        let raw = backend.chat(&request)?;
        match parse_observer_output(&raw) {
            Ok(decision) => return Ok(Observation { decision, fallback: None }),
            Err(e) => last_error = e.to_string(),
        }
    }
    log::warn!("observer output for turn {} unparsable ({last_error}); treating as SKIP", u.turn_index);
    Ok(Observation { decision: ObserverDecision::skip(), fallback: Some(last_error) })
}
