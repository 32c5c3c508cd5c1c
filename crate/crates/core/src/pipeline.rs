//! Memory construction over one dialogue: observe, route, construct,
//! store and link, one utterance at a time.

use serde::Serialize;
use thiserror::Error;

use crate::constructor::{construct, ConstructError, ConstructInputs, ConstructorConfig};
use crate::domain::{Condition, Dialogue, EditAction, FrameId, SpeakerId, Triplet, Utterance};
use crate::gateway::{GatewayError, ModelBackend};
use crate::linker::{extract_links, LinkError};
use crate::memory::{MemoryBank, MemoryError};
use crate::observer::{build_context_window, observe, route, PerspectiveState};
use crate::prompts::FrameSlots;

pub const DEFAULT_PARSE_RETRIES: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub condition: Condition,
    pub constructor: ConstructorConfig,
    pub parse_retries: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            condition: Condition::Visual,
            constructor: ConstructorConfig::default(),
            parse_retries: DEFAULT_PARSE_RETRIES,
        }
    }
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("turn {turn}: {source}")]
    Observe { turn: u32, source: GatewayError },
    #[error("turn {turn}: {source}")]
    Construct { turn: u32, source: ConstructError },
    #[error("turn {turn}: {source}")]
    Memory { turn: u32, source: MemoryError },
    #[error("turn {turn}: {source}")]
    Link { turn: u32, source: LinkError },
}

/// What happened to one utterance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnRecord {
    pub turn: u32,
    pub speaker: SpeakerId,
    pub action: EditAction,
    pub target: Option<FrameId>,
    pub faithfulness: Option<f64>,
    pub triplets: Vec<Triplet>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub bank: MemoryBank,
    pub state: PerspectiveState,
    pub turns: Vec<TurnRecord>,
}

impl BuildOutput {
    pub fn decisions(&self) -> Vec<(u32, EditAction)> {
        self.turns.iter().map(|t| (t.turn, t.action)).collect()
    }

    /// Mean faithfulness of the stored visual versions of each frame.
    pub fn mean_phi_per_frame(&self) -> Vec<(FrameId, f64)> {
        let mut out: Vec<(FrameId, f64)> = Vec::new();
        for f in self.bank.frames() {
            let phis: Vec<f64> = self.bank.versions_of(f).filter_map(|s| s.version.faithfulness).collect();
            if !phis.is_empty() {
                out.push((f, phis.iter().sum::<f64>() / phis.len() as f64));
            }
        }
        out
    }
}

fn label(bank: &MemoryBank, frame: FrameId) -> String {
    bank.latest(frame)
        .map(|s| s.version.metadata.split(':').next().unwrap_or("").trim().to_string())
        .unwrap_or_default()
}

fn prompt_history(bank: &MemoryBank, frame: Option<FrameId>) -> Vec<String> {
    frame
        .map(|f| bank.versions_of(f).map(|s| s.version.prompt.clone()).filter(|p| !p.is_empty()).collect())
        .unwrap_or_default()
}

/// Builds the memory bank of one dialogue.
pub fn build_memory(
    dialogue: &Dialogue,
    config: &PipelineConfig,
    backend: &dyn ModelBackend,
) -> Result<BuildOutput, BuildError> {
    let mut bank = MemoryBank::new(dialogue.dialogue_id.clone());
    let mut state = PerspectiveState::for_dialogue(dialogue);
    let mut turns = Vec::with_capacity(dialogue.utterances.len());
    for u in &dialogue.utterances {
        turns.push(process_utterance(dialogue, u, &mut state, &mut bank, config, backend)?);
    }
    Ok(BuildOutput { bank, state, turns })
}

/// Handles one utterance. On a construction or storage failure the
/// perspective state is restored and the error returned.
pub fn process_utterance(
    dialogue: &Dialogue,
    u: &Utterance,
    state: &mut PerspectiveState,
    bank: &mut MemoryBank,
    config: &PipelineConfig,
    backend: &dyn ModelBackend,
) -> Result<TurnRecord, BuildError> {
    let turn = u.turn_index;
    let context = build_context_window(dialogue, state, u.speaker);
    let active = state.side(u.speaker).active_frame;
    let active_label = active.map(|f| label(bank, f));
    let history = prompt_history(bank, active);
    let obs = observe(backend, u, &context, active.zip(active_label.as_deref()), &history, config.parse_retries)
        .map_err(|source| BuildError::Observe { turn, source })?;
    let decision = obs.decision;
    let mut record = TurnRecord {
        turn,
        speaker: u.speaker,
        action: decision.action,
        target: None,
        faithfulness: None,
        triplets: Vec::new(),
        diagnostics: obs.fallback.into_iter().map(|e| format!("observer fallback to SKIP: {e}")).collect(),
    };

    if decision.action != EditAction::Skip {
        let snapshot = state.clone();
        match route(&decision, u, state) {
            Err(e) => {
                log::warn!("turn {turn}: {e}; update dropped");
                record.diagnostics.push(e.to_string());
                record.action = EditAction::Skip;
            }
            Ok(outcome) => {
                let target = outcome.target.expect("NEW and CONTINUE always target a version");
                let (previous, history) =
                    if outcome.allocation { (None, Vec::new()) } else { (bank.latest(target).cloned(), history) };
                let inputs = ConstructInputs {
                    target,
                    previous: previous.as_ref().map(|s| &s.version),
                    prompt_history: &history,
                    context: &context,
                    turn,
                    condition: config.condition,
                };
                let built = match construct(&decision, inputs, &config.constructor, backend) {
                    Ok(b) => b,
                    Err(source) => {
                        *state = snapshot;
                        return Err(BuildError::Construct { turn, source });
                    }
                };
                if outcome.allocation {
                    bank.allocate(target);
                }
                if let Err(source) = bank.insert(built.version, backend) {
                    *state = snapshot;
                    return Err(BuildError::Memory { turn, source });
                }
                record.target = Some(target);
                record.faithfulness = built.report.map(|r| r.phi);
                record.diagnostics.extend(built.diagnostics);
            }
        }
    }

    if let Some(hint) = decision.relation_hint.as_deref() {
        let side = state.side(u.speaker);
        match side.active_frame {
            None => record.diagnostics.push("relation hint without an active frame".into()),
            Some(curr) => {
                let slots = FrameSlots { prev: side.preceding(curr), curr: Some(curr), next: None };
                let meta: Vec<(FrameId, String)> = slots.ids().map(|f| (f, label(bank, f))).collect();
                let (triplets, diag) = extract_links(hint, &context, &slots, &meta, backend)
                    .map_err(|source| BuildError::Link { turn, source })?;
                record.diagnostics.extend(diag);
                for t in triplets {
                    bank.link(t).map_err(|source| BuildError::Memory { turn, source })?;
                    record.triplets.push(t);
                }
            }
        }
    }
    Ok(record)
}
