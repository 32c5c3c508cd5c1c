//! Benchmark harness: dataset loaders, judging, annotation, aggregation
//! and the faithfulness-vs-accuracy regression.

mod bench;
mod logit;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::domain::{speaker_slot, Annotation, Dialogue, JudgeVerdict, QAItem, RelationType, SpeakerId, Utterance};
use crate::gateway::parse::{parse_annotator_output, parse_judge_output, ParseError};
use crate::gateway::{GatewayError, ModelBackend};
use crate::prompts::{annotator_request, judge_request};

pub use bench::{
    load_results, logit_pairs, run_benchmark, write_outputs, BenchmarkConfig, BenchmarkRun, DialogueBuild,
    EvalCondition, ItemResult,
};
pub use logit::{fit_faithfulness_logit, gradient, log_likelihood, LogitFit, GRADIENT_TOLERANCE, MAX_ITERATIONS};
pub use report::{aggregate, Cell, Report, ABSENT};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("line {line}: unknown relation type {value:?}")]
    UnknownRelationType { line: usize, value: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

#[derive(Deserialize)]
struct TurnLine {
    turn: u32,
    speaker: String,
    text: String,
}

#[derive(Deserialize)]
struct TranscriptLine {
    dialogue_id: String,
    turns: Vec<TurnLine>,
    /// Optional per-speaker frame-ordinal offsets for excerpts.
    #[serde(default)]
    ordinal_offsets: BTreeMap<String, u32>,
}

#[derive(Deserialize)]
struct QaLine {
    dialogue_id: String,
    question: String,
    gold_answer: String,
    relation_type: String,
    questioner: String,
}

fn read(path: &Path) -> Result<String, EvalError> {
    std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })
}

/// Non-blank lines with their 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty())
}

fn speaker(line: usize, s: &str) -> Result<SpeakerId, EvalError> {
    s.parse().map_err(|_| EvalError::Format { line, message: format!("speaker must be A or B, got {s:?}") })
}

pub fn parse_transcripts(text: &str) -> Result<Vec<Dialogue>, EvalError> {
    let mut out = Vec::new();
    for (line, raw) in records(text) {
        let rec: TranscriptLine =
            serde_json::from_str(raw).map_err(|e| EvalError::Format { line, message: e.to_string() })?;
        let mut utterances = Vec::with_capacity(rec.turns.len());
        for t in rec.turns {
            if let Some(prev) = utterances.last().map(|u: &Utterance| u.turn_index) {
                if t.turn <= prev {
                    return Err(EvalError::Format {
                        line,
                        message: format!("turn {} does not follow turn {prev}", t.turn),
                    });
                }
            }
            utterances.push(Utterance::new(t.turn, speaker(line, &t.speaker)?, t.text));
        }
        let mut dialogue = Dialogue::new(rec.dialogue_id, utterances);
        for (who, offset) in rec.ordinal_offsets {
            let s = speaker(line, &who)?;
            dialogue.ordinal_offsets[speaker_slot(s)] = offset;
        }
        out.push(dialogue);
    }
    Ok(out)
}

pub fn parse_qa(text: &str) -> Result<Vec<QAItem>, EvalError> {
    let mut out = Vec::new();
    for (line, raw) in records(text) {
        let rec: QaLine = serde_json::from_str(raw).map_err(|e| EvalError::Format { line, message: e.to_string() })?;
        let relation_type = RelationType::from_label(rec.relation_type.trim())
            .ok_or(EvalError::UnknownRelationType { line, value: rec.relation_type.clone() })?;
        out.push(QAItem {
            dialogue_id: rec.dialogue_id,
            question: rec.question,
            gold_answer: rec.gold_answer,
            relation_type,
            questioner: speaker(line, &rec.questioner)?,
        });
    }
    Ok(out)
}

pub fn load_transcripts(path: &Path) -> Result<Vec<Dialogue>, EvalError> {
    parse_transcripts(&read(path)?)
}

pub fn load_qa(path: &Path) -> Result<Vec<QAItem>, EvalError> {
    parse_qa(&read(path)?)
}

/// Compares only the final answer against the gold answer.
pub fn judge(
    response: &str,
    gold: &str,
    question: &str,
    backend: &dyn ModelBackend,
) -> Result<JudgeVerdict, EvalError> {
    let raw = backend.chat(&judge_request(question, response, gold))?;
    Ok(parse_judge_output(&raw)?)
}

pub fn annotate(item: &QAItem, backend: &dyn ModelBackend) -> Result<Annotation, EvalError> {
    let raw = backend.chat(&annotator_request(item))?;
    Ok(parse_annotator_output(&raw)?)
}
