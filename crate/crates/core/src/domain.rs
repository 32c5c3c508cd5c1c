//! Shared domain types: speakers, frame identifiers, canvases, artifacts,
//! triplets, plans and the evaluation vocabulary.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// One of the two dialogue participants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpeakerId {
    A,
    B,
}

impl SpeakerId {
    pub const ALL: [SpeakerId; 2] = [SpeakerId::A, SpeakerId::B];

    pub fn other(self) -> SpeakerId {
        match self {
            SpeakerId::A => SpeakerId::B,
            SpeakerId::B => SpeakerId::A,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SpeakerId::A => "A",
            SpeakerId::B => "B",
        }
    }
}

impl fmt::Display for SpeakerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown speaker label {0:?} (expected A or B)")]
pub struct UnknownSpeaker(pub String);

impl FromStr for SpeakerId {
    type Err = UnknownSpeaker;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" => Ok(SpeakerId::A),
            "B" => Ok(SpeakerId::B),
            other => Err(UnknownSpeaker(other.to_string())),
        }
    }
}

/// Perspective filter applied to evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pov {
    A,
    B,
    Both,
}

impl Pov {
    pub fn admits(self, speaker: SpeakerId) -> bool {
        match self {
            Pov::Both => true,
            Pov::A => speaker == SpeakerId::A,
            Pov::B => speaker == SpeakerId::B,
        }
    }

    /// Resolves a free-form POV instruction such as `B`, `User A` or `BOTH`.
    pub fn resolve(instruction: &str) -> Option<Pov> {
        let mut found = None;
        for raw in instruction.split(|c: char| !c.is_ascii_alphanumeric()) {
            let token = raw.to_ascii_uppercase();
            match token.as_str() {
                "BOTH" => return Some(Pov::Both),
                "A" if found.is_none() => found = Some(Pov::A),
                "B" if found.is_none() => found = Some(Pov::B),
                _ => {}
            }
        }
        found
    }
}

impl From<SpeakerId> for Pov {
    fn from(s: SpeakerId) -> Self {
        match s {
            SpeakerId::A => Pov::A,
            SpeakerId::B => Pov::B,
        }
    }
}

impl fmt::Display for Pov {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pov::A => "A",
            Pov::B => "B",
            Pov::Both => "BOTH",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub turn_index: u32,
    pub speaker: SpeakerId,
    pub text: String,
}

impl Utterance {
    pub fn new(turn_index: u32, speaker: SpeakerId, text: impl Into<String>) -> Self {
        Utterance { turn_index, speaker, text: text.into() }
    }

    /// `[Turn 26] B: Im in a home office`
    pub fn render(&self) -> String {
        format!("[Turn {}] {}: {}", self.turn_index, self.speaker, self.text)
    }
}

/// A two-party transcript.
///
/// `ordinal_offsets` lets an excerpt taken from the middle of a longer
/// dialogue continue the original frame numbering: the first frame a
/// speaker opens gets ordinal `offset + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub utterances: Vec<Utterance>,
    pub ordinal_offsets: [u32; 2],
}

impl Dialogue {
    pub fn new(dialogue_id: impl Into<String>, utterances: Vec<Utterance>) -> Self {
        Dialogue { dialogue_id: dialogue_id.into(), utterances, ordinal_offsets: [0, 0] }
    }

    pub fn offset(&self, speaker: SpeakerId) -> u32 {
        self.ordinal_offsets[speaker_slot(speaker)]
    }
}

pub(crate) fn speaker_slot(s: SpeakerId) -> usize {
    match s {
        SpeakerId::A => 0,
        SpeakerId::B => 1,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameIdError {
    #[error("malformed frame id {0:?}")]
    Malformed(String),
    #[error("frame id {0:?}: speaker label must be A or B")]
    BadSpeaker(String),
    #[error("frame id {0:?}: ordinal must be a positive integer")]
    BadOrdinal(String),
    #[error("frame id {0:?}: bad sequence suffix")]
    BadSequence(String),
}

/// Identifier of one artifact version: `B_3` (sequence 1) or `B_1_seq2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrameId {
    pub speaker: SpeakerId,
    pub ordinal: u32,
    pub sequence: u32,
}

impl FrameId {
    pub fn new(speaker: SpeakerId, ordinal: u32) -> Self {
        FrameId { speaker, ordinal, sequence: 1 }
    }

    pub fn with_sequence(self, sequence: u32) -> Self {
        FrameId { sequence, ..self }
    }

    /// The frame this version belongs to (sequence reset to 1).
    pub fn frame(self) -> Self {
        self.with_sequence(1)
    }

    pub fn parse(text: &str) -> Result<FrameId, FrameIdError> {
        text.parse()
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.sequence == 1 {
            write!(f, "{}_{}", self.speaker, self.ordinal)
        } else {
            write!(f, "{}_{}_seq{}", self.speaker, self.ordinal, self.sequence)
        }
    }
}

fn parse_positive(digits: &str) -> Option<u32> {
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
        return None;
    }
    digits.parse::<u32>().ok().filter(|&n| n > 0)
}

impl FromStr for FrameId {
    type Err = FrameIdError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut parts = text.split('_');
        let speaker = parts.next().ok_or_else(|| FrameIdError::Malformed(text.into()))?;
        let speaker: SpeakerId = speaker.parse().map_err(|_| FrameIdError::BadSpeaker(text.into()))?;
        let ordinal = parts.next().ok_or_else(|| FrameIdError::Malformed(text.into()))?;
        let ordinal = parse_positive(ordinal).ok_or_else(|| FrameIdError::BadOrdinal(text.into()))?;
        let sequence = match parts.next() {
            None => 1,
            Some(suffix) => {
                let n = suffix
                    .strip_prefix("seq")
                    .and_then(parse_positive)
                    .ok_or_else(|| FrameIdError::BadSequence(text.into()))?;
                // `_seq1` is never rendered, so it is not accepted either.
                if n < 2 {
                    return Err(FrameIdError::BadSequence(text.into()));
                }
                n
            }
        };
        if parts.next().is_some() {
            return Err(FrameIdError::Malformed(text.into()));
        }
        Ok(FrameId { speaker, ordinal, sequence })
    }
}

impl Serialize for FrameId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FrameId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EditAction {
    New,
    Continue,
    Skip,
}

impl EditAction {
    /// Accepts `NEW`, `[New]`, ` continue ` and so on.
    pub fn from_token(token: &str) -> Option<EditAction> {
        let t = token.trim();
        let t = t.strip_prefix('[').and_then(|t| t.strip_suffix(']')).unwrap_or(t).trim();
        match t.to_ascii_uppercase().as_str() {
            "NEW" => Some(EditAction::New),
            "CONTINUE" => Some(EditAction::Continue),
            "SKIP" => Some(EditAction::Skip),
            _ => None,
        }
    }
}

impl fmt::Display for EditAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EditAction::New => "NEW",
            EditAction::Continue => "CONTINUE",
            EditAction::Skip => "SKIP",
        })
    }
}

/// Output of the Observer for one utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObserverDecision {
    pub action: EditAction,
    /// Depictable content; empty iff `action == Skip`.
    pub scene_descriptor: String,
    /// Non-depictable information; may be empty.
    pub metadata: String,
    pub frame_meta: String,
    pub relation_hint: Option<String>,
}

impl ObserverDecision {
    pub fn skip() -> Self {
        ObserverDecision {
            action: EditAction::Skip,
            scene_descriptor: String::new(),
            metadata: String::new(),
            frame_meta: String::new(),
            relation_hint: None,
        }
    }

    pub fn is_consistent(&self) -> bool {
        match self.action {
            EditAction::Skip => self.scene_descriptor.is_empty(),
            EditAction::New | EditAction::Continue => !self.scene_descriptor.trim().is_empty(),
        }
    }
}

/// Style-as-Semantics outline colour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outline {
    /// Confirmed, position grounded.
    Black,
    /// Confirmed, position unresolved.
    Red,
    /// Assumed.
    Blue,
}

impl Outline {
    pub fn word(self) -> &'static str {
        match self {
            Outline::Black => "black",
            Outline::Red => "red",
            Outline::Blue => "blue",
        }
    }

    pub fn from_word(word: &str) -> Option<Outline> {
        match word.to_ascii_lowercase().as_str() {
            "black" => Some(Outline::Black),
            "red" => Some(Outline::Red),
            "blue" => Some(Outline::Blue),
            _ => None,
        }
    }

    pub fn rgb(self) -> Rgb {
        match self {
            Outline::Black => palette::BLACK,
            Outline::Red => palette::RED,
            Outline::Blue => palette::BLUE,
        }
    }
}

pub type Rgb = [u8; 3];

/// Canonical colours.
pub mod palette {
    use super::Rgb;

    pub const WHITE: Rgb = [255, 255, 255];
    pub const BLACK: Rgb = [0, 0, 0];
    pub const RED: Rgb = [255, 0, 0];
    pub const BLUE: Rgb = [0x1F, 0x4E, 0x79];

    pub const CANONICAL: [Rgb; 4] = [WHITE, BLACK, RED, BLUE];
}

/// `[ymin, xmin, ymax, xmax]` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub ymin: i64,
    pub xmin: i64,
    pub ymax: i64,
    pub xmax: i64,
}

impl BBox {
    pub fn new(ymin: i64, xmin: i64, ymax: i64, xmax: i64) -> Self {
        BBox { ymin, xmin, ymax, xmax }
    }

    pub fn is_proper(&self) -> bool {
        self.ymin < self.ymax && self.xmin < self.xmax
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.ymin >= 0 && self.xmin >= 0 && self.ymax <= height as i64 && self.xmax <= width as i64
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.ymin, self.xmin, self.ymax, self.xmax].serialize(s)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [ymin, xmin, ymax, xmax] = <[i64; 4]>::deserialize(d)?;
        Ok(BBox { ymin, xmin, ymax, xmax })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanvasObject {
    pub name: String,
    pub outline: Outline,
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(default)]
    pub attributes: Vec<String>,
}

/// Sidecar stored next to a canvas raster.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ObjectRegistry {
    #[serde(default)]
    pub scene: Option<String>,
    #[serde(default)]
    pub objects: Vec<CanvasObject>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CanvasError {
    #[error("canvas dimensions must be positive")]
    ZeroSized,
    #[error("pixel buffer holds {got} pixels, expected {expected}")]
    PixelCount { expected: usize, got: usize },
    #[error("object {0:?} has a box outside the canvas or an empty box")]
    BadBox(String),
}

/// Row-major RGB raster plus its object registry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<Rgb>,
    pub registry: ObjectRegistry,
}

impl Canvas {
    pub fn blank(width: u32, height: u32) -> Self {
        Canvas {
            width,
            height,
            pixels: vec![palette::WHITE; width as usize * height as usize],
            registry: ObjectRegistry::default(),
        }
    }

    pub fn validate(&self) -> Result<(), CanvasError> {
        if self.width == 0 || self.height == 0 {
            return Err(CanvasError::ZeroSized);
        }
        let expected = self.width as usize * self.height as usize;
        if self.pixels.len() != expected {
            return Err(CanvasError::PixelCount { expected, got: self.pixels.len() });
        }
        for obj in &self.registry.objects {
            if !obj.bbox.is_proper() || !obj.bbox.within(self.width, self.height) {
                return Err(CanvasError::BadBox(obj.name.clone()));
            }
        }
        Ok(())
    }

    pub fn pixel(&self, x: u32, y: u32) -> Rgb {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn object(&self, name: &str) -> Option<&CanvasObject> {
        self.registry.objects.iter().find(|o| o.name == name)
    }
}

/// One stored version of a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactVersion {
    pub frame_id: FrameId,
    #[serde(skip)]
    pub canvas: Option<Canvas>,
    pub summary: Option<String>,
    pub prompt: String,
    pub metadata: String,
    pub created_at_turn: u32,
    /// Faithfulness of the selected candidate (visual channel only).
    pub faithfulness: Option<f64>,
}

/// Canonical cross-frame relations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    NorthOf,
    SouthOf,
    EastOf,
    WestOf,
    NextTo,
    SameAs,
    RevisitOf,
}

impl Relation {
    pub const ALL: [Relation; 7] = [
        Relation::NorthOf,
        Relation::SouthOf,
        Relation::EastOf,
        Relation::WestOf,
        Relation::NextTo,
        Relation::SameAs,
        Relation::RevisitOf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::NorthOf => "is_north_of",
            Relation::SouthOf => "is_south_of",
            Relation::EastOf => "is_east_of",
            Relation::WestOf => "is_west_of",
            Relation::NextTo => "is_next_to",
            Relation::SameAs => "is_same_as",
            Relation::RevisitOf => "is_revisit_of",
        }
    }

    /// Exact canonical lookup; alias handling lives in the linker.
    pub fn from_canonical(s: &str) -> Option<Relation> {
        Relation::ALL.into_iter().find(|r| r.as_str() == s)
    }

    /// `X r Y` holds iff `Y inverse(r) X` holds.
    pub fn inverse(self) -> Relation {
        match self {
            Relation::NorthOf => Relation::SouthOf,
            Relation::SouthOf => Relation::NorthOf,
            Relation::EastOf => Relation::WestOf,
            Relation::WestOf => Relation::EastOf,
            Relation::NextTo => Relation::NextTo,
            Relation::SameAs => Relation::SameAs,
            Relation::RevisitOf => Relation::RevisitOf,
        }
    }

    pub fn direction_word(self) -> Option<&'static str> {
        match self {
            Relation::NorthOf => Some("north"),
            Relation::SouthOf => Some("south"),
            Relation::EastOf => Some("east"),
            Relation::WestOf => Some("west"),
            _ => None,
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Relation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Relation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Relation::from_canonical(&text).ok_or_else(|| serde::de::Error::custom(format!("unknown relation {text:?}")))
    }
}

/// `⟨subject, predicate, object⟩` over frames (sequence 1 ids).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: FrameId,
    pub predicate: Relation,
    pub object: FrameId,
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.subject, self.predicate, self.object)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicFact {
    pub text: String,
    pub source_frame: Option<FrameId>,
}

impl AtomicFact {
    pub fn new(text: impl Into<String>) -> Self {
        AtomicFact { text: text.into(), source_frame: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactVerdict {
    pub fact: AtomicFact,
    pub verdict: bool,
    #[serde(rename = "box")]
    pub bbox: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub candidate_index: usize,
    pub verdicts: Vec<FactVerdict>,
    pub phi: f64,
}

impl FaithfulnessReport {
    /// Φ = #true / #verdicts, and 1.0 for an empty fact set.
    pub fn from_verdicts(candidate_index: usize, verdicts: Vec<FactVerdict>) -> Self {
        let phi = if verdicts.is_empty() {
            1.0
        } else {
            verdicts.iter().filter(|v| v.verdict).count() as f64 / verdicts.len() as f64
        };
        FaithfulnessReport { candidate_index, verdicts, phi }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Command {
    Pov,
    Rag,
    Process,
    FinalAnswer,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Pov => "POV",
            Command::Rag => "RAG",
            Command::Process => "PROCESS",
            Command::FinalAnswer => "FINAL_ANSWER",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub command: Command,
    pub instruction: String,
    pub retrieval_count: Option<u32>,
}

impl PlanStep {
    pub fn pov(instruction: impl Into<String>) -> Self {
        PlanStep { command: Command::Pov, instruction: instruction.into(), retrieval_count: None }
    }

    pub fn rag(n: u32, instruction: impl Into<String>) -> Self {
        PlanStep { command: Command::Rag, instruction: instruction.into(), retrieval_count: Some(n) }
    }

    pub fn process(instruction: impl Into<String>) -> Self {
        PlanStep { command: Command::Process, instruction: instruction.into(), retrieval_count: None }
    }

    pub fn final_answer(instruction: impl Into<String>) -> Self {
        PlanStep { command: Command::FinalAnswer, instruction: instruction.into(), retrieval_count: None }
    }

    /// Planner wire form, e.g. `RAG[5] bedrooms with white walls`.
    pub fn render(&self) -> String {
        match (self.command, self.retrieval_count) {
            (Command::Rag, Some(n)) => format!("RAG[{n}] {}", self.instruction),
            (cmd, _) => format!("{cmd} {}", self.instruction),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum PlanViolation {
    #[serde(rename = "missing-FINAL_ANSWER")]
    MissingFinalAnswer,
    #[serde(rename = "FINAL_ANSWER-not-last")]
    FinalAnswerNotLast {
        step: usize,
    },
    #[serde(rename = "duplicate-FINAL_ANSWER")]
    DuplicateFinalAnswer {
        step: usize,
    },
    MissingRetrievalCount {
        step: usize,
    },
    ZeroRetrievalCount {
        step: usize,
    },
    UnexpectedRetrievalCount {
        step: usize,
    },
    UnresolvedPov {
        step: usize,
    },
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanViolation::MissingFinalAnswer => write!(f, "missing-FINAL_ANSWER: the plan has no FINAL_ANSWER step"),
            PlanViolation::FinalAnswerNotLast { step } => {
                write!(f, "FINAL_ANSWER-not-last: step {step} is FINAL_ANSWER but is not the last step")
            }
            PlanViolation::DuplicateFinalAnswer { step } => {
                write!(f, "duplicate-FINAL_ANSWER: step {step} repeats FINAL_ANSWER")
            }
            PlanViolation::MissingRetrievalCount { step } => write!(f, "step {step}: RAG without a retrieval count"),
            PlanViolation::ZeroRetrievalCount { step } => write!(f, "step {step}: RAG count must be at least 1"),
            PlanViolation::UnexpectedRetrievalCount { step } => {
                write!(f, "step {step}: only RAG steps carry a retrieval count")
            }
            PlanViolation::UnresolvedPov { step } => write!(f, "step {step}: POV must name A, B or BOTH"),
        }
    }
}

/// Returns every violated plan rule; empty iff the plan is well formed.
pub fn validate_plan(plan: &Plan) -> Vec<PlanViolation> {
    let mut violations = Vec::new();
    let last = plan.steps.len().checked_sub(1);
    let mut seen_final = false;
    for (i, step) in plan.steps.iter().enumerate() {
        match step.command {
            Command::FinalAnswer => {
                if seen_final {
                    violations.push(PlanViolation::DuplicateFinalAnswer { step: i });
                } else if Some(i) != last {
                    violations.push(PlanViolation::FinalAnswerNotLast { step: i });
                }
                seen_final = true;
            }
            Command::Rag => match step.retrieval_count {
                None => violations.push(PlanViolation::MissingRetrievalCount { step: i }),
                Some(0) => violations.push(PlanViolation::ZeroRetrievalCount { step: i }),
                Some(_) => {}
            },
            Command::Pov => {
                if Pov::resolve(&step.instruction).is_none() {
                    violations.push(PlanViolation::UnresolvedPov { step: i });
                }
            }
            Command::Process => {}
        }
        if step.command != Command::Rag && step.retrieval_count.is_some() {
            violations.push(PlanViolation::UnexpectedRetrievalCount { step: i });
        }
    }
    if !seen_final {
        violations.push(PlanViolation::MissingFinalAnswer);
    }
    violations
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelationType {
    Temporal,
    Spatial,
    Attributive,
    Inferred,
}

impl RelationType {
    pub const ALL: [RelationType; 4] =
        [RelationType::Temporal, RelationType::Spatial, RelationType::Attributive, RelationType::Inferred];

    pub fn label(self) -> &'static str {
        match self {
            RelationType::Temporal => "Temporal",
            RelationType::Spatial => "Spatial",
            RelationType::Attributive => "Attributive",
            RelationType::Inferred => "Inferred",
        }
    }

    pub fn from_label(s: &str) -> Option<RelationType> {
        RelationType::ALL.into_iter().find(|r| r.label() == s)
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub dialogue_id: String,
    pub question: String,
    pub gold_answer: String,
    pub relation_type: RelationType,
    pub questioner: SpeakerId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Equivalence {
    Same,
    Different,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub verdict: Equivalence,
    pub reasoning: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Complexity {
    Local,
    Relational,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionKind {
    Binary,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constraint {
    List,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Validity {
    Valid,
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(rename = "complexity_type")]
    pub complexity: Complexity,
    #[serde(rename = "question_type")]
    pub question_kind: QuestionKind,
    #[serde(rename = "constraint_type")]
    pub constraint: Constraint,
    #[serde(rename = "validity_type")]
    pub validity: Validity,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmbeddingError {
    #[error("embedding must have at least one component")]
    Empty,
    #[error("embedding component {0} is not finite")]
    NonFinite(usize),
}

/// Finite vector; cosine against a zero vector is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Ok(Embedding { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        debug_assert_eq!(self.dimension(), other.dimension());
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            dot / denom
        }
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = EmbeddingError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Embedding::new(v)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.values
    }
}

/// Which artifact channels a run builds and retrieves from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Visual,
    Textual,
    Both,
}

impl Condition {
    pub fn visual(self) -> bool {
        matches!(self, Condition::Visual | Condition::Both)
    }

    pub fn textual(self) -> bool {
        matches!(self, Condition::Textual | Condition::Both)
    }
}
