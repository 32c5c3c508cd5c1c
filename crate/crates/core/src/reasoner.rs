//! Question answering over a built memory bank: plan, refine each step,
//! then execute POV / RAG / PROCESS / FINAL_ANSWER against the bank.

use std::sync::LazyLock;

use regex::Regex;
use serde::Serialize;
use thiserror::Error;

use crate::domain::{validate_plan, Command, Condition, Plan, PlanStep, Pov, SpeakerId};
use crate::gateway::mock::ABSTAIN;
use crate::gateway::parse::{parse_answer_output, parse_planner_output, ParseError};
use crate::gateway::{GatewayError, ModelBackend};
use crate::memory::{EvidenceEntry, Fusion, MemoryBank, MemoryError, ScoredHit, DEFAULT_LAMBDA};
use crate::prompts::{
    answerer_request, planner_request, processor_request, refiner_request, render_evidence, AnswerInputs,
    EvidenceBlock, RECALL_DIRECTIVE,
};

pub const DEFAULT_MAX_STEPS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct ReasonerConfig {
    pub condition: Condition,
    pub lambda: f64,
    pub fusion: Fusion,
    /// Re-ask once when a "do you remember" question gets a bare "yes".
    pub recall_reprompt: bool,
    pub max_steps: usize,
    pub abstain: String,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        ReasonerConfig {
            condition: Condition::Visual,
            lambda: DEFAULT_LAMBDA,
            fusion: Fusion::Max,
            recall_reprompt: true,
            max_steps: DEFAULT_MAX_STEPS,
            abstain: ABSTAIN.to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReasonError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("plan invalid after retry: {}", .0.join("; "))]
    PlanInvalid(Vec<String>),
    #[error("step {step} failed: {source}")]
    StepFailed { step: usize, source: Box<ReasonError> },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// Audit record of one executed step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub index: usize,
    pub command: Command,
    pub planned: String,
    pub instruction: String,
    pub retrieval_count: Option<u32>,
    pub pov: Pov,
    /// User message sent to the model, when the step made a chat call.
    pub request: Option<String>,
    pub output: String,
    pub hits: Vec<ScoredHit>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionTrace {
    pub question: String,
    pub asker: SpeakerId,
    pub condition: Option<Condition>,
    pub plan: Plan,
    pub steps: Vec<StepRecord>,
    pub retrieve_calls: usize,
    pub evidence_frames: Vec<String>,
    pub raw_answer: String,
    pub answer: String,
}

/// Plans with one feedback retry; the step cap counts as a violation.
pub fn make_plan(
    question: &str,
    asker: SpeakerId,
    max_steps: usize,
    backend: &dyn ModelBackend,
) -> Result<Plan, ReasonError> {
    if question.trim().is_empty() {
        return Err(ReasonError::EmptyQuestion);
    }
    let mut feedback: Option<String> = None;
    let mut problems = Vec::new();
    for _ in 0..2 {
        let raw = backend.chat(&planner_request(question, asker, feedback.as_deref()))?;
        problems = match parse_planner_output(&raw) {
            Ok(plan) => {
                let mut v: Vec<String> = validate_plan(&plan).iter().map(ToString::to_string).collect();
                if plan.steps.len() > max_steps {
                    v.push(format!("plan has {} steps; the limit is {max_steps}", plan.steps.len()));
                }
                if v.is_empty() {
                    return Ok(plan);
                }
                v
            }
            Err(e) => vec![e.to_string()],
        };
        feedback = Some(problems.join("\n"));
    }
    Err(ReasonError::PlanInvalid(problems))
}

/// Rewrites a step's instruction; any failure keeps the original.
pub fn refine_instruction(step: &PlanStep, question: &str, asker: SpeakerId, backend: &dyn ModelBackend) -> PlanStep {
    let refined = backend
        .chat(&refiner_request(question, asker, &step.render()))
        .map(|raw| parse_answer_output(&raw))
        .unwrap_or_default();
    let refined = refined.trim();
    if refined.is_empty() || (step.command == Command::Pov && Pov::resolve(refined).is_none()) {
        return step.clone();
    }
    PlanStep { instruction: refined.to_string(), ..step.clone() }
}

static RECALL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:do|did|can|could) you (?:still )?(?:remember|recall)\b").unwrap());
static AFFIRMATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:yes|yeah|yep|i do|yes,? i do|i remember|yes,? i remember)\s*[.!]?\s*$").unwrap()
});

/// Evidence blocks and attachments for the answerer. Repeated frames keep
/// their first (best) occurrence.
fn evidence_blocks(evidence: &[EvidenceEntry]) -> (Vec<EvidenceBlock>, Vec<crate::domain::Canvas>) {
    let mut blocks: Vec<EvidenceBlock> = Vec::new();
    let mut attachments = Vec::new();
    for e in evidence {
        if blocks.iter().any(|b| b.version.frame() == e.hit.frame_id) {
            continue;
        }
        let attachment = e.version.canvas.as_ref().map(|c| {
            attachments.push(c.clone());
            attachments.len()
        });
        blocks.push(EvidenceBlock {
            version: e.version.frame_id,
            attachment,
            metadata: e.metadata.clone(),
            summary: e.version.summary.clone(),
            triplets: e.triplets.clone(),
        });
    }
    (blocks, attachments)
}

/// Runs a validated plan against `bank`.
pub fn execute_plan(
    plan: &Plan,
    question: &str,
    asker: SpeakerId,
    bank: &MemoryBank,
    config: &ReasonerConfig,
    backend: &dyn ModelBackend,
) -> Result<ExecutionTrace, ReasonError> {
    let mut trace = ExecutionTrace {
        question: question.to_string(),
        asker,
        condition: Some(config.condition),
        plan: plan.clone(),
        steps: Vec::new(),
        retrieve_calls: 0,
        evidence_frames: Vec::new(),
        raw_answer: String::new(),
        answer: String::new(),
    };
    let mut pov = Pov::Both;
    let mut evidence: Vec<EvidenceEntry> = Vec::new();
    let mut scratch: Vec<String> = Vec::new();
    let mut empty_bank = false;
    for (index, planned) in plan.steps.iter().enumerate() {
        let step = refine_instruction(planned, question, asker, backend);
        let mut record = StepRecord {
            index,
            command: step.command,
            planned: planned.render(),
            instruction: step.instruction.clone(),
            retrieval_count: step.retrieval_count,
            pov,
            request: None,
            output: String::new(),
            hits: Vec::new(),
            note: None,
        };
        let failed = |source: ReasonError| ReasonError::StepFailed { step: index, source: Box::new(source) };
        match step.command {
            Command::Pov => {
                pov = Pov::resolve(&step.instruction).unwrap_or(pov);
                record.pov = pov;
                record.output = pov.to_string();
            }
            Command::Rag => {
                let n = step.retrieval_count.unwrap_or(1).max(1) as usize;
                let query = if step.instruction.trim().is_empty() { question } else { step.instruction.as_str() };
                trace.retrieve_calls += 1;
                match bank.retrieve(query, n, pov, config.condition, config.lambda, config.fusion, backend) {
                    Ok(hits) => {
                        record.output = hits.iter().map(|h| h.version.to_string()).collect::<Vec<_>>().join(", ");
                        evidence.extend(bank.assemble_evidence(&hits));
                        record.hits = hits;
                    }
                    Err(MemoryError::EmptyBank) => {
                        empty_bank = true;
                        record.note = Some("EmptyBank".into());
                    }
                    Err(e) => return Err(failed(e.into())),
                }
            }
            Command::Process => {
                let (blocks, _) = evidence_blocks(&evidence);
                let request = processor_request(&step.instruction, &render_evidence(&blocks), &scratch);
                let out = backend.chat(&request).map_err(|e| failed(e.into()))?;
                record.request = Some(request.user_text().to_string());
                record.output = out.clone();
                scratch.push(out);
            }
            Command::FinalAnswer => {
                let (blocks, attachments) = evidence_blocks(&evidence);
                trace.evidence_frames = blocks.iter().map(|b| b.version.to_string()).collect();
                if blocks.is_empty() && empty_bank {
                    record.note = Some("no evidence: bank empty for this perspective".into());
                    record.output = config.abstain.clone();
                    trace.raw_answer = config.abstain.clone();
                    trace.answer = config.abstain.clone();
                } else {
                    let rendered = render_evidence(&blocks);
                    let mut inputs = AnswerInputs {
                        question,
                        asker,
                        instruction: &step.instruction,
                        evidence: &rendered,
                        scratch: &scratch,
                        transcript: None,
                        directive: None,
                    };
                    let request = answerer_request(&inputs, attachments.clone());
                    let raw = backend.chat(&request).map_err(|e| failed(e.into()))?;
                    record.request = Some(request.user_text().to_string());
                    let mut answer = parse_answer_output(&raw);
                    let mut raw_all = raw;
                    if config.recall_reprompt && RECALL.is_match(question) && AFFIRMATION.is_match(&answer) {
                        inputs.directive = Some(RECALL_DIRECTIVE);
                        let again =
                            backend.chat(&answerer_request(&inputs, attachments)).map_err(|e| failed(e.into()))?;
                        record.note = Some("bare confirmation; asked again for the remembered content".into());
                        answer = parse_answer_output(&again);
                        raw_all = format!("{raw_all}\n{again}");
                    }
                    record.output = raw_all.clone();
                    trace.raw_answer = raw_all;
                    trace.answer = answer;
                }
            }
        }
        trace.steps.push(record);
    }
    Ok(trace)
}

/// Plan, then refine and execute every step.
pub fn answer_question(
    question: &str,
    asker: SpeakerId,
    bank: &MemoryBank,
    config: &ReasonerConfig,
    backend: &dyn ModelBackend,
) -> Result<ExecutionTrace, ReasonError> {
    let plan = make_plan(question, asker, config.max_steps, backend)?;
    execute_plan(&plan, question, asker, bank, config, backend)
}

/// Baseline without memory: the whole transcript goes to the answerer.
pub fn answer_from_transcript(
    question: &str,
    asker: SpeakerId,
    transcript: &str,
    backend: &dyn ModelBackend,
) -> Result<ExecutionTrace, ReasonError> {
    if question.trim().is_empty() {
        return Err(ReasonError::EmptyQuestion);
    }
    let inputs = AnswerInputs {
        question,
        asker,
        instruction: question,
        evidence: "none",
        scratch: &[],
        transcript: Some(transcript),
        directive: None,
    };
    let request = answerer_request(&inputs, Vec::new());
    let raw = backend.chat(&request)?;
    let answer = parse_answer_output(&raw);
    let step = StepRecord {
        index: 0,
        command: Command::FinalAnswer,
        planned: format!("FINAL_ANSWER {question}"),
        instruction: question.to_string(),
        retrieval_count: None,
        pov: Pov::Both,
        request: Some(request.user_text().to_string()),
        output: raw.clone(),
        hits: Vec::new(),
        note: None,
    };
    Ok(ExecutionTrace {
        question: question.to_string(),
        asker,
        condition: None,
        plan: Plan { steps: vec![PlanStep::final_answer(question)] },
        steps: vec![step],
        retrieve_calls: 0,
        evidence_frames: Vec::new(),
        raw_answer: raw,
        answer,
    })
}
