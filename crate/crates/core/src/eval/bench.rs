//! End-to-end benchmark: build each dialogue's memory, answer its questions,
//! judge and annotate the answers, then aggregate.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Annotation, Condition, Dialogue, Equivalence, FrameId, JudgeVerdict, QAItem};
use crate::gateway::ModelBackend;
use crate::pipeline::{build_memory, BuildOutput, PipelineConfig};
use crate::reasoner::{answer_from_transcript, answer_question, ExecutionTrace, ReasonerConfig};

use super::logit::{fit_faithfulness_logit, LogitFit};
use super::report::{aggregate, Report};
use super::{annotate, judge, EvalError};

/// A memory condition, or the baseline that reads the raw transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalCondition {
    Image,
    Text,
    Both,
    FullDialog,
}

impl EvalCondition {
    /// `None` for the transcript baseline.
    pub fn memory(self) -> Option<Condition> {
        match self {
            EvalCondition::Image => Some(Condition::Visual),
            EvalCondition::Text => Some(Condition::Textual),
            EvalCondition::Both => Some(Condition::Both),
            EvalCondition::FullDialog => None,
        }
    }

    pub fn framework(self) -> &'static str {
        match self {
            EvalCondition::Image => "Agentic-Image",
            EvalCondition::Text => "Agentic-Text",
            EvalCondition::Both => "Agentic-Both",
            EvalCondition::FullDialog => "Full-Dialog",
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            EvalCondition::Image => "image",
            EvalCondition::Text => "text",
            EvalCondition::Both => "both",
            EvalCondition::FullDialog => "full-dialog",
        }
    }
}

impl fmt::Display for EvalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalCondition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "image" => Ok(EvalCondition::Image),
            "text" => Ok(EvalCondition::Text),
            "both" => Ok(EvalCondition::Both),
            "full-dialog" => Ok(EvalCondition::FullDialog),
            other => Err(format!("unknown condition {other:?} (expected image, text, both or full-dialog)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub condition: EvalCondition,
    pub pipeline: PipelineConfig,
    pub reasoner: ReasonerConfig,
    /// Upper bound on dialogues evaluated at once.
    pub jobs: usize,
}

impl BenchmarkConfig {
    pub fn new(condition: EvalCondition) -> Self {
        BenchmarkConfig { condition, pipeline: PipelineConfig::default(), reasoner: ReasonerConfig::default(), jobs: 1 }
    }
}

/// Outcome of one QA item; also the on-disk trace record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    /// Position in the QA input.
    pub position: usize,
    pub dialogue_id: String,
    /// Position among the questions of the same dialogue.
    pub qa_index: usize,
    pub item: QAItem,
    pub answer: Option<String>,
    pub verdict: Option<JudgeVerdict>,
    pub annotation: Option<Annotation>,
    /// Mean faithfulness of the evidence frames, per frame sequence.
    pub mean_phi: Option<f64>,
    pub retrieve_calls: usize,
    pub error: Option<String>,
    pub trace: Option<serde_json::Value>,
}

impl ItemResult {
    pub fn correct(&self) -> bool {
        self.verdict.as_ref().is_some_and(|v| v.verdict == Equivalence::Same)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueBuild {
    pub dialogue_id: String,
    pub error: Option<String>,
    pub frames: usize,
    pub triplets: usize,
    pub mean_phi: Vec<(String, f64)>,
    pub turns: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunInfo {
    framework: String,
    condition: EvalCondition,
    items: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRun {
    pub condition: EvalCondition,
    pub report: Report,
    pub items: Vec<ItemResult>,
    pub builds: Vec<DialogueBuild>,
    pub logit: LogitFit,
}

/// Regressor pairs: items whose evidence carried a faithfulness score.
pub fn logit_pairs(items: &[ItemResult]) -> Vec<(f64, bool)> {
    items.iter().filter_map(|r| r.mean_phi.map(|p| (p, r.correct()))).collect()
}

fn evidence_phi(trace: &ExecutionTrace, phis: &BTreeMap<FrameId, f64>) -> Option<f64> {
    let mut frames: Vec<FrameId> =
        trace.evidence_frames.iter().filter_map(|v| FrameId::parse(v).ok()).map(FrameId::frame).collect();
    frames.dedup();
    let found: Vec<f64> = frames.iter().filter_map(|f| phis.get(f).copied()).collect();
    (!found.is_empty()).then(|| found.iter().sum::<f64>() / found.len() as f64)
}

fn unanswered(position: usize, qa_index: usize, item: &QAItem, error: String) -> ItemResult {
    ItemResult {
        position,
        dialogue_id: item.dialogue_id.clone(),
        qa_index,
        item: item.clone(),
        answer: None,
        verdict: None,
        annotation: None,
        mean_phi: None,
        retrieve_calls: 0,
        error: Some(error),
        trace: None,
    }
}

fn evaluate_item(
    position: usize,
    qa_index: usize,
    item: &QAItem,
    dialogue: &Dialogue,
    built: Option<&(BuildOutput, BTreeMap<FrameId, f64>)>,
    config: &BenchmarkConfig,
    backend: &dyn ModelBackend,
) -> ItemResult {
    let mut r = unanswered(position, qa_index, item, String::new());
    let mut errors = Vec::new();
    let answered = match built {
        Some((out, _)) => answer_question(&item.question, item.questioner, &out.bank, &config.reasoner, backend),
        None => {
            let transcript: Vec<String> = dialogue.utterances.iter().map(|u| u.render()).collect();
            answer_from_transcript(&item.question, item.questioner, &transcript.join("\n"), backend)
        }
    };
    match answered {
        Ok(trace) => {
            r.mean_phi = built.and_then(|(_, phis)| evidence_phi(&trace, phis));
            r.retrieve_calls = trace.retrieve_calls;
            match judge(&trace.answer, &item.gold_answer, &item.question, backend) {
                Ok(v) => r.verdict = Some(v),
                Err(e) => errors.push(format!("judge: {e}")),
            }
            r.answer = Some(trace.answer.clone());
            r.trace = serde_json::to_value(&trace).ok();
        }
        Err(e) => errors.push(format!("answer: {e}")),
    }
    match annotate(item, backend) {
        Ok(a) => r.annotation = Some(a),
        Err(e) => errors.push(format!("annotate: {e}")),
    }
    r.error = (!errors.is_empty()).then(|| errors.join("; "));
    r
}

fn evaluate_dialogue(
    dialogue: &Dialogue,
    items: &[(usize, &QAItem)],
    config: &BenchmarkConfig,
    backend: &dyn ModelBackend,
) -> (DialogueBuild, Vec<ItemResult>) {
    let mut build = DialogueBuild {
        dialogue_id: dialogue.dialogue_id.clone(),
        error: None,
        frames: 0,
        triplets: 0,
        mean_phi: Vec::new(),
        turns: serde_json::Value::Array(Vec::new()),
    };
    let built = match config.condition.memory() {
        None => None,
        Some(_) => match build_memory(dialogue, &config.pipeline, backend) {
            Ok(out) => {
                let phis: BTreeMap<FrameId, f64> = out.mean_phi_per_frame().into_iter().collect();
                build.frames = out.bank.frame_count();
                build.triplets = out.bank.graph().len();
                build.mean_phi = phis.iter().map(|(f, p)| (f.to_string(), *p)).collect();
                build.turns = serde_json::to_value(&out.turns).unwrap_or_default();
                Some((out, phis))
            }
            Err(e) => {
                log::warn!("dialogue {}: memory build failed: {e}", dialogue.dialogue_id);
                build.error = Some(e.to_string());
                let failed = items
                    .iter()
                    .enumerate()
                    .map(|(i, &(pos, item))| unanswered(pos, i, item, format!("memory build: {e}")))
                    .collect();
                return (build, failed);
            }
        },
    };
    let results = items
        .iter()
        .enumerate()
        .map(|(i, &(pos, item))| evaluate_item(pos, i, item, dialogue, built.as_ref(), config, backend))
        .collect();
    (build, results)
}

/// Dialogues run concurrently (at most `config.jobs`); results keep the
/// QA input order, so output does not depend on scheduling.
pub fn run_benchmark(
    dialogues: &[Dialogue],
    qa: &[QAItem],
    config: &BenchmarkConfig,
    backend: &dyn ModelBackend,
) -> BenchmarkRun {
    let mut config = config.clone();
    if let Some(c) = config.condition.memory() {
        config.pipeline.condition = c;
        config.reasoner.condition = c;
    }
    let mut per_dialogue: BTreeMap<&str, Vec<(usize, &QAItem)>> = BTreeMap::new();
    for (pos, item) in qa.iter().enumerate() {
        per_dialogue.entry(item.dialogue_id.as_str()).or_default().push((pos, item));
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.jobs.max(1)).build();
    let work = |d: &Dialogue| {
        let items = per_dialogue.get(d.dialogue_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        evaluate_dialogue(d, items, &config, backend)
    };
    let outcomes: Vec<(DialogueBuild, Vec<ItemResult>)> = match pool {
        Ok(pool) => pool.install(|| dialogues.par_iter().map(work).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); running sequentially");
            dialogues.iter().map(work).collect()
        }
    };

    let mut builds = Vec::with_capacity(outcomes.len());
    let mut items = Vec::with_capacity(qa.len());
    for (b, rs) in outcomes {
        builds.push(b);
        items.extend(rs);
    }
    let known: Vec<&str> = dialogues.iter().map(|d| d.dialogue_id.as_str()).collect();
    for (id, orphans) in &per_dialogue {
        if !known.contains(id) {
            items.extend(
                orphans
                    .iter()
                    .enumerate()
                    .map(|(i, &(pos, item))| unanswered(pos, i, item, "no transcript for dialogue".into())),
            );
        }
    }
    items.sort_by_key(|r| r.position);
    finish(config.condition, items, builds)
}

fn finish(condition: EvalCondition, items: Vec<ItemResult>, builds: Vec<DialogueBuild>) -> BenchmarkRun {
    let report = aggregate(condition.framework(), &items);
    let logit = fit_faithfulness_logit(&logit_pairs(&items));
    BenchmarkRun { condition, report, items, builds, logit }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.to_path_buf(), source }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EvalError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io(path)(e.into()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io(path))
}

/// Writes `report.txt`, `report.csv`, `logit.json`, `run.json` and
/// `traces/<dialogue_id>/<qa_index>.json` (plus `build.json` per dialogue).
pub fn write_outputs(run: &BenchmarkRun, dir: &Path) -> Result<(), EvalError> {
    let traces = dir.join("traces");
    std::fs::create_dir_all(&traces).map_err(io(&traces))?;
    let txt = dir.join("report.txt");
    std::fs::write(&txt, run.report.render_text()).map_err(io(&txt))?;
    let csv = dir.join("report.csv");
    std::fs::write(&csv, run.report.render_csv()).map_err(io(&csv))?;
    write_json(&dir.join("logit.json"), &run.logit)?;
    let info = RunInfo { framework: run.report.framework.clone(), condition: run.condition, items: run.items.len() };
    write_json(&dir.join("run.json"), &info)?;
    for b in &run.builds {
        let d = traces.join(&b.dialogue_id);
        std::fs::create_dir_all(&d).map_err(io(&d))?;
        write_json(&d.join("build.json"), b)?;
    }
    for r in &run.items {
        let d = traces.join(&r.dialogue_id);
        std::fs::create_dir_all(&d).map_err(io(&d))?;
        write_json(&d.join(format!("{}.json", r.qa_index)), r)?;
    }
    Ok(())
}

/// Reloads a written run from its trace directory and re-aggregates it.
pub fn load_results(dir: &Path) -> Result<BenchmarkRun, EvalError> {
    let info_path = dir.join("run.json");
    let info: RunInfo = serde_json::from_str(&std::fs::read_to_string(&info_path).map_err(io(&info_path))?)
        .map_err(|e| EvalError::Format { line: e.line(), message: format!("{}: {e}", info_path.display()) })?;
    let traces = dir.join("traces");
    let mut items = Vec::new();
    let mut builds = Vec::new();
    let mut dirs: Vec<_> =
        std::fs::read_dir(&traces).map_err(io(&traces))?.collect::<Result<_, _>>().map_err(io(&traces))?;
    dirs.sort_by_key(|e| e.file_name());
    for entry in dirs {
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let mut files: Vec<_> =
            std::fs::read_dir(&path).map_err(io(&path))?.collect::<Result<_, _>>().map_err(io(&path))?;
        files.sort_by_key(|e| e.file_name());
        for f in files {
            let p = f.path();
            if p.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let text = std::fs::read_to_string(&p).map_err(io(&p))?;
            let bad =
                |e: serde_json::Error| EvalError::Format { line: e.line(), message: format!("{}: {e}", p.display()) };
            if p.file_stem().is_some_and(|s| s == "build") {
                builds.push(serde_json::from_str::<DialogueBuild>(&text).map_err(bad)?);
            } else {
                items.push(serde_json::from_str::<ItemResult>(&text).map_err(bad)?);
            }
        }
    }
    items.sort_by_key(|r| r.position);
    let mut run = finish(info.condition, items, builds);
    run.report.framework = info.framework;
    Ok(run)
}
