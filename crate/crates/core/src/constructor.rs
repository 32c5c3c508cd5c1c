//! Artifact construction: prompt composition, candidate generation,
//! faithfulness scoring, selection, palette normalization and scene
//! summaries.

use rayon::prelude::*;
use thiserror::Error;

use crate::domain::{
    palette, ArtifactVersion, AtomicFact, Canvas, Condition, EditAction, FaithfulnessReport, FrameId, ObserverDecision,
    Rgb,
};
use crate::gateway::parse::{parse_fact_checker_output, parse_facts_output, parse_scene_output, ParseError};
use crate::gateway::{GatewayError, ImageRequest, ModelBackend};
use crate::prompts::{captioner_request, checker_request, constructor_request, decomposer_request, summarizer_request};
use crate::scene::{compose_creation, compose_edit, CompositionError, GrammarError, SceneState};

pub const DEFAULT_CANDIDATES: usize = 3;
pub const DEFAULT_TOLERANCE: f64 = 16.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConstructError {
    #[error("construction needs a NEW or CONTINUE decision with a scene descriptor")]
    InvalidDecision,
    #[error("all {attempted} candidate generations failed; last error: {last}")]
    CandidateGenerationFailed { attempted: usize, last: GatewayError },
    #[error(transparent)]
    AssumptionBudgetExceeded(#[from] CompositionError),
    #[error("prompt history is outside the prompt grammar: {0}")]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Where image prompts come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptSource {
    /// Deterministic composition from the scene lexicon.
    #[default]
    Rules,
    /// The Constructor chat role.
    Model,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstructorConfig {
    pub candidates: usize,
    pub tolerance: f64,
    pub palette: Vec<Rgb>,
    pub prompt_source: PromptSource,
}

impl Default for ConstructorConfig {
    fn default() -> Self {
        ConstructorConfig {
            candidates: DEFAULT_CANDIDATES,
            tolerance: DEFAULT_TOLERANCE,
            palette: palette::CANONICAL.to_vec(),
            prompt_source: PromptSource::Rules,
        }
    }
}

/// Atomic facts of the accumulated prompt history (which already ends
/// with the prompt built for `descriptor`). Blue-outlined content is left
/// out by the decomposer.
pub fn decompose_facts(
    descriptor: &str,
    prompt_history: &[String],
    backend: &dyn ModelBackend,
) -> Result<Vec<AtomicFact>, ConstructError> {
    if descriptor.trim().is_empty() {
        return Err(ConstructError::InvalidDecision);
    }
    let raw = backend.chat(&decomposer_request(prompt_history, descriptor))?;
    Ok(parse_facts_output(&raw)?.into_iter().filter(|f| !f.is_empty()).map(AtomicFact::new).collect())
}

pub fn build_creation_prompt(descriptor: &str, frame_meta: &str) -> Result<String, ConstructError> {
    Ok(compose_creation(descriptor, frame_meta)?.0)
}

pub fn build_edit_prompt(descriptor: &str, history: &[String]) -> Result<String, ConstructError> {
    Ok(compose_edit(descriptor, &SceneState::replay(history)?).0)
}

/// The scene an edit starts from: the replayed history, restricted to the
/// objects the stored canvas actually holds when its registry is known.
fn edit_base(history: &[String], base: Option<&Canvas>) -> Result<SceneState, ConstructError> {
    let mut state = SceneState::replay(history)?;
    if let Some(reg) = base.map(|c| &c.registry).filter(|r| r.scene.is_some() || !r.objects.is_empty()) {
        state.objects.retain(|o| reg.objects.iter().any(|x| x.name == o.name));
    }
    Ok(state)
}

fn image_prompt(
    descriptor: &str,
    frame_meta: &str,
    history: &[String],
    base: Option<&Canvas>,
    config: &ConstructorConfig,
    backend: &dyn ModelBackend,
) -> Result<String, ConstructError> {
    match config.prompt_source {
        PromptSource::Model => {
            Ok(parse_scene_output(&backend.chat(&constructor_request(descriptor, frame_meta, history))?)?)
        }
        PromptSource::Rules if history.is_empty() => build_creation_prompt(descriptor, frame_meta),
        PromptSource::Rules => Ok(compose_edit(descriptor, &edit_base(history, base)?).0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub canvas: Canvas,
}

/// Generates `j` candidates that differ only in sampling seed. Partial
/// failure is tolerated and reported in the returned diagnostics.
pub fn generate_candidates(
    prompt: &str,
    base: Option<&Canvas>,
    key: &str,
    j: usize,
    backend: &dyn ModelBackend,
) -> Result<(Vec<Candidate>, Vec<String>), ConstructError> {
    let j = j.max(1);
    let results: Vec<(usize, Result<Canvas, GatewayError>)> = (0..j)
        .into_par_iter()
        .map(|index| {
            let request = ImageRequest {
                prompt: prompt.to_string(),
                base: base.cloned(),
                key: key.to_string(),
                variant: index as u32,
            };
            (index, backend.edit_image(&request))
        })
        .collect();
    let mut candidates = Vec::new();
    let mut diagnostics = Vec::new();
    let mut last = None;
    for (index, r) in results {
        match r {
            Ok(canvas) => candidates.push(Candidate { index, canvas }),
            Err(e) => {
                diagnostics.push(format!("{key}: candidate {index} failed: {e}"));
                last = Some(e);
            }
        }
    }
    match last {
        Some(last) if candidates.is_empty() => Err(ConstructError::CandidateGenerationFailed { attempted: j, last }),
        _ => Ok((candidates, diagnostics)),
    }
}

/// Scores one candidate: caption first, then one verdict per fact.
pub fn faithfulness(
    candidate: &Candidate,
    facts: &[AtomicFact],
    backend: &dyn ModelBackend,
) -> Result<FaithfulnessReport, ConstructError> {
    if facts.is_empty() {
        return Ok(FaithfulnessReport::from_verdicts(candidate.index, Vec::new()));
    }
    let caption = backend.chat(&captioner_request(&candidate.canvas))?;
    let texts: Vec<String> = facts.iter().map(|f| f.text.clone()).collect();
    let raw = backend.chat(&checker_request(caption.trim(), &texts, &candidate.canvas))?;
    let verdicts = parse_fact_checker_output(&raw, facts)?;
    Ok(FaithfulnessReport::from_verdicts(candidate.index, verdicts))
}

/// Highest Φ wins; ties go to the lowest candidate index.
///
/// # Panics
/// If `candidates` is empty or the slices differ in length.
pub fn select_artifact<T>(candidates: Vec<T>, reports: Vec<FaithfulnessReport>) -> (T, FaithfulnessReport) {
    assert!(!candidates.is_empty() && candidates.len() == reports.len(), "selection needs aligned, non-empty inputs");
    let best = (0..reports.len())
        .reduce(|b, i| {
            let (x, y) = (&reports[i], &reports[b]);
            if x.phi > y.phi || (x.phi == y.phi && x.candidate_index < y.candidate_index) {
                i
            } else {
                b
            }
        })
        .unwrap_or(0);
    let report = reports.into_iter().nth(best).expect("index in range");
    (candidates.into_iter().nth(best).expect("index in range"), report)
}

fn dist2(a: Rgb, b: Rgb) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - y as f64).powi(2)).sum()
}

/// Snaps every pixel within `tolerance` (Euclidean RGB) of a palette
/// colour to the nearest such colour. The registry is left untouched.
pub fn normalize_canvas(mut c: Canvas, palette: &[Rgb], tolerance: f64) -> Canvas {
    let t2 = tolerance * tolerance;
    for px in &mut c.pixels {
        let nearest =
            palette.iter().map(|p| (dist2(*px, *p), *p)).fold(None, |best: Option<(f64, Rgb)>, cur| match best {
                Some(b) if b.0 <= cur.0 => Some(b),
                _ => Some(cur),
            });
        if let Some((d, p)) = nearest {
            if d <= t2 {
                *px = p;
            }
        }
    }
    c
}

pub fn summarize_scene(
    descriptor: &str,
    previous_summary: Option<&str>,
    frame_meta: &str,
    context: &[String],
    backend: &dyn ModelBackend,
) -> Result<String, ConstructError> {
    if descriptor.trim().is_empty() {
        return Err(ConstructError::InvalidDecision);
    }
    let raw = backend.chat(&summarizer_request(descriptor, previous_summary, frame_meta, context))?;
    Ok(parse_scene_output(&raw)?)
}

/// `label` or `label: info; info`, extended with new non-visual info.
pub fn accumulate_metadata(previous: Option<&str>, label: &str, info: &str) -> String {
    let (old_label, mut infos) = match previous {
        Some(p) => match p.split_once(':') {
            Some((l, i)) => {
                (l.trim().to_string(), i.split(';').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
            }
            None => (p.trim().to_string(), Vec::<String>::new()),
        },
        None => (String::new(), Vec::new()),
    };
    let label = if old_label.is_empty() { label.trim().to_string() } else { old_label };
    let info = info.trim();
    if !info.is_empty() && !infos.iter().any(|i| i == info) {
        infos.push(info.to_string());
    }
    if infos.is_empty() {
        label
    } else {
        format!("{label}: {}", infos.join("; "))
    }
}

/// Everything a construction step needs besides the decision.
#[derive(Debug, Clone, Copy)]
pub struct ConstructInputs<'a> {
    pub target: FrameId,
    pub previous: Option<&'a ArtifactVersion>,
    /// Image prompts of the frame's earlier versions, oldest first.
    pub prompt_history: &'a [String],
    /// Observer context window of the utterance.
    pub context: &'a [String],
    pub turn: u32,
    pub condition: Condition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constructed {
    pub version: ArtifactVersion,
    pub report: Option<FaithfulnessReport>,
    pub diagnostics: Vec<String>,
}

/// Builds one artifact version for a NEW or CONTINUE decision.
pub fn construct(
    decision: &ObserverDecision,
    inputs: ConstructInputs<'_>,
    config: &ConstructorConfig,
    backend: &dyn ModelBackend,
) -> Result<Constructed, ConstructError> {
    if decision.action == EditAction::Skip || decision.scene_descriptor.trim().is_empty() {
        return Err(ConstructError::InvalidDecision);
    }
    let descriptor = decision.scene_descriptor.as_str();
    let previous = inputs.previous;
    let metadata = accumulate_metadata(previous.map(|p| p.metadata.as_str()), &decision.frame_meta, &decision.metadata);
    let label = metadata.split(':').next().unwrap_or("").trim().to_string();
    let mut diagnostics = Vec::new();
    let mut version = ArtifactVersion {
        frame_id: inputs.target,
        canvas: None,
        summary: None,
        prompt: String::new(),
        metadata,
        created_at_turn: inputs.turn,
        faithfulness: None,
    };
    let mut report = None;

    if inputs.condition.visual() {
        let base = previous.and_then(|p| p.canvas.as_ref());
        let prompt = image_prompt(descriptor, &label, inputs.prompt_history, base, config, backend)?;
        let mut history = inputs.prompt_history.to_vec();
        history.push(prompt.clone());
        let facts = decompose_facts(descriptor, &history, backend)?;
        let key = inputs.target.to_string();
        let (candidates, diag) = generate_candidates(&prompt, base, &key, config.candidates, backend)?;
        diagnostics.extend(diag);
        let reports = candidates.par_iter().map(|c| faithfulness(c, &facts, backend)).collect::<Result<Vec<_>, _>>()?;
        let (winner, r) = select_artifact(candidates, reports);
        version.canvas = Some(normalize_canvas(winner.canvas, &config.palette, config.tolerance));
        version.faithfulness = Some(r.phi);
        version.prompt = prompt;
        report = Some(r);
    }
    if inputs.condition.textual() {
        let previous_summary = previous.and_then(|p| p.summary.as_deref());
        version.summary = Some(summarize_scene(descriptor, previous_summary, &label, inputs.context, backend)?);
    }
    for d in &diagnostics {
        log::warn!("{d}");
    }
    Ok(Constructed { version, report, diagnostics })
}
