//! Request builders for every agent role. User messages are made of
//! `<tag>` sections so that both live models and the mock backend can
//! locate each input unambiguously.

use crate::domain::{Canvas, FrameId, QAItem, Relation, SpeakerId, Triplet, Utterance};
use crate::gateway::json::first_tag;
use crate::gateway::{ChatRequest, RoleTag};

pub const SCENE_CHANGE: &str = "<scene_change>";
/// Directive added when an indirect "do you remember" question was
/// answered with a bare confirmation.
pub const RECALL_DIRECTIVE: &str =
    "The question asks for remembered content. State that content itself instead of confirming that you remember it.";

const OBSERVER_SYSTEM: &str =
    "You segment a situated dialogue into scenes and decide how one target utterance changes \
the speaker's imagined scene. Reply with one JSON object with keys frame_meta (\"Scene Label: non-visual info\", \
label of 1-3 words), relation (movement or connection to an earlier scene, else empty), imagery (only depictable \
content of the target, else empty) and action, one of [NEW] (no active scene, or the content belongs to a different \
place), [CONTINUE] (content adds to or revises the active scene) or [SKIP] (no depictable content).";

const CONSTRUCTOR_SYSTEM: &str = "You write prompts for an image editor that keeps a minimalist line-art scene. \
Outline colours carry meaning: black for confirmed objects with a known position, red for confirmed objects whose \
position is only relative or unknown, blue for assumptions (at most three). Creation prompts start with \
\"A clean, minimalist, iconic scene.\" and end with \"Solid white background, no shadows.\" Edit prompts list Add, \
Remove and Replace operations, express a move or resize as DELETE ... $$$ ADD ..., and end with \
\"Keep the ... unchanged.\" naming every surviving object. Reply as {\"scene\": \"<prompt>\"}.";

const DECOMPOSER_SYSTEM: &str = "List the atomic facts stated by a sequence of image prompts, one proposition per \
fact (\"There is a cat\", \"The cat is red\"). Ignore every object drawn in blue outline. Reply as \
{\"facts\": [...]}.";

const CAPTIONER_SYSTEM: &str = "Describe the attached scene image literally: every object, its colour, count and \
position, and the outline colour it is drawn with.";

const CHECKER_SYSTEM: &str = "For each numbered fact, look for visual evidence in the attached image first, then \
decide whether the fact holds. Reply with a JSON array of {\"fact\", \"box\": [ymin, xmin, ymax, xmax] or null, \
\"verdict\": true|false}, one entry per fact in the given order.";

const SUMMARIZER_SYSTEM: &str = "Maintain a dense propositional summary of one scene. In creation mode, write \
explicit content plainly, implied content as a likely deduction and vague content as \"There might be ...\". In \
update mode, add or refine, overwrite contradicted statements only on explicit correction, and keep everything else. \
Reply as {\"scene\": \"<summary>\"}.";

const LINKER_SYSTEM: &str = "Extract spatial or identity relations between scenes as triplets \
{\"subject\", \"predicate\", \"object\"} with predicates is_north_of, is_south_of, is_east_of, is_west_of, \
is_next_to, is_same_as or is_revisit_of. Use only the frame ids listed in <frames>. Reply as {\"triplets\": [...]} \
and return an empty list when no relation is stated.";

const PLANNER_SYSTEM: &str = "Plan how to answer a question about a past dialogue from stored scene memories. \
Available commands: POV <A|B|BOTH> selects whose memories to search; RAG[N] <query> retrieves the N best memories; \
PROCESS <instruction> reasons over the evidence gathered so far; FINAL_ANSWER <instruction> answers, and must be the \
single last step. Reply as <answer><item>COMMAND ...</item>...</answer>.";

const REFINER_SYSTEM: &str = "Rewrite one plan step into a precise instruction for its command. For RAG steps, \
give a short keyword query. Reply as <answer>...</answer>.";

const PROCESSOR_SYSTEM: &str = "Follow the instruction using only the evidence and notes provided. Be brief.";

const ANSWERER_SYSTEM: &str = "Answer the question from the retrieved evidence: scene images, their summaries, \
metadata and cross-scene relations. \"my\" refers to the asker's own scenes. Think in <think>...</think> and give a \
short final answer in <answer>...</answer>.";

const JUDGE_SYSTEM: &str = "Decide whether an LLM response and the correct response mean the same thing for the \
question. Synonyms and style differences are SAME; negation or a different entity is DIFFERENT. Reply as \
<reasoning>...</reasoning><answer>SAME or DIFFERENT</answer>.";

const ANNOTATOR_SYSTEM: &str = "Label a question-answer item. complexity_type: local (one scene) or relational \
(several scenes or their relations); question_type: binary or open; constraint_type: list (chooses among named \
options) or free; validity_type: valid or missing (the answer is not grounded in the dialogue). Reply with the JSON \
object {\"complexity_type\", \"question_type\", \"constraint_type\", \"validity_type\"}.";

pub fn section(name: &str, body: &str) -> String {
    format!("<{name}>\n{body}\n</{name}>")
}

/// Trimmed body of the first `<name>` section of `text`.
pub fn read_section<'a>(text: &'a str, name: &str) -> Option<&'a str> {
    first_tag(text, name).map(|s| s.trim_matches('\n'))
}

fn join(sections: &[String]) -> String {
    sections.join("\n")
}

fn numbered(items: &[String]) -> String {
    items.iter().enumerate().map(|(i, s)| format!("{}. {s}", i + 1)).collect::<Vec<_>>().join("\n")
}

/// `B_3 | home office`, or `none`.
pub fn frame_line(frame: Option<(FrameId, &str)>) -> String {
    match frame {
        Some((id, label)) => format!("{id} | {label}"),
        None => "none".to_string(),
    }
}

pub fn observer_request(
    context: &[String],
    active: Option<(FrameId, &str)>,
    previous_prompts: &[String],
    target: &Utterance,
) -> ChatRequest {
    let user = join(&[
        section("context", &context.join("\n")),
        section("active_frame", &frame_line(active)),
        section("previous_prompts", &previous_prompts.join("\n")),
        section("target", &target.render()),
    ]);
    ChatRequest::new(RoleTag::Observer, OBSERVER_SYSTEM, user)
}

pub fn constructor_request(descriptor: &str, frame_meta: &str, previous_prompts: &[String]) -> ChatRequest {
    let mode = if previous_prompts.is_empty() { "creation" } else { "edit" };
    let user = join(&[
        section("mode", mode),
        section("frame_meta", frame_meta),
        section("previous_prompts", &previous_prompts.join("\n")),
        section("target", descriptor),
    ]);
    ChatRequest::new(RoleTag::Constructor, CONSTRUCTOR_SYSTEM, user)
}

pub fn decomposer_request(prompts: &[String], descriptor: &str) -> ChatRequest {
    let user = join(&[section("prompts", &prompts.join("\n")), section("target", descriptor)]);
    ChatRequest::new(RoleTag::FactDecomposer, DECOMPOSER_SYSTEM, user)
}

pub fn captioner_request(canvas: &Canvas) -> ChatRequest {
    ChatRequest::new(RoleTag::Captioner, CAPTIONER_SYSTEM, section("task", "Describe the attached image."))
        .with_attachments(vec![canvas.clone()])
}

pub fn checker_request(caption: &str, facts: &[String], canvas: &Canvas) -> ChatRequest {
    let user = join(&[section("caption", caption), section("facts", &numbered(facts))]);
    ChatRequest::new(RoleTag::FactChecker, CHECKER_SYSTEM, user).with_attachments(vec![canvas.clone()])
}

/// Facts listed in a checker request, in order.
pub fn read_numbered(body: &str) -> Vec<String> {
    body.lines()
        .filter_map(|l| {
            let l = l.trim();
            let (n, rest) = l.split_once(". ")?;
            n.parse::<usize>().ok().map(|_| rest.to_string())
        })
        .collect()
}

pub fn summarizer_request(
    descriptor: &str,
    previous: Option<&str>,
    frame_meta: &str,
    context: &[String],
) -> ChatRequest {
    let user = join(&[
        section("mode", if previous.is_some() { "update" } else { "creation" }),
        section("context", &context.join("\n")),
        section("frame_meta", frame_meta),
        section("previous", previous.unwrap_or("")),
        section("target", descriptor),
    ]);
    ChatRequest::new(RoleTag::Summarizer, SUMMARIZER_SYSTEM, user)
}

/// Frame slots offered to the linker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FrameSlots {
    pub prev: Option<FrameId>,
    pub curr: Option<FrameId>,
    pub next: Option<FrameId>,
}

impl FrameSlots {
    pub fn ids(&self) -> impl Iterator<Item = FrameId> {
        [self.prev, self.curr, self.next].into_iter().flatten()
    }
}

pub fn linker_request(hint: &str, context: &[String], slots: &FrameSlots, meta: &[(FrameId, String)]) -> ChatRequest {
    let label = |id: Option<FrameId>| match id {
        Some(id) => {
            let m = meta.iter().find(|(f, _)| *f == id).map(|(_, m)| m.as_str()).unwrap_or("");
            format!("{id} ({m})")
        }
        None => "None".to_string(),
    };
    let frames = format!(
        "PREV_FRAME: {}\nCURR_FRAME: {}\nNEXT_FRAME: {}",
        label(slots.prev),
        label(slots.curr),
        label(slots.next)
    );
    let user = join(&[section("directive", hint), section("context", &context.join("\n")), section("frames", &frames)]);
    ChatRequest::new(RoleTag::Linker, LINKER_SYSTEM, user)
}

pub fn planner_request(question: &str, asker: SpeakerId, feedback: Option<&str>) -> ChatRequest {
    let mut parts = vec![section("asker", asker.as_str()), section("question", question)];
    if let Some(f) = feedback {
        parts.push(section("feedback", f));
    }
    ChatRequest::new(RoleTag::Planner, PLANNER_SYSTEM, join(&parts))
}

pub fn refiner_request(question: &str, asker: SpeakerId, step: &str) -> ChatRequest {
    let user = join(&[section("asker", asker.as_str()), section("question", question), section("step", step)]);
    ChatRequest::new(RoleTag::Refiner, REFINER_SYSTEM, user)
}

pub fn processor_request(instruction: &str, evidence: &str, scratch: &[String]) -> ChatRequest {
    let user = join(&[
        section("instruction", instruction),
        section("evidence", evidence),
        section("scratch", &scratch.join("\n")),
    ]);
    ChatRequest::new(RoleTag::Processor, PROCESSOR_SYSTEM, user)
}

/// One retrieved memory as it appears in Processor and Answerer requests.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceBlock {
    pub version: FrameId,
    /// 1-based index into the request attachments.
    pub attachment: Option<usize>,
    pub metadata: String,
    pub summary: Option<String>,
    pub triplets: Vec<Triplet>,
}

const EVIDENCE_HEAD: &str = "[Evidence ";

impl EvidenceBlock {
    pub fn render(&self, index: usize) -> String {
        let attachment = self.attachment.map_or("none".to_string(), |a| a.to_string());
        let mut out = format!("{EVIDENCE_HEAD}{index}] frame={} attachment={attachment}", self.version);
        out.push_str(&format!("\nmeta: {}", one_line(&self.metadata)));
        if let Some(s) = &self.summary {
            out.push_str(&format!("\nsummary: {}", one_line(s)));
        }
        for t in &self.triplets {
            out.push_str(&format!("\nrelation: {t}"));
        }
        out
    }

    /// Scene label: metadata up to the first colon.
    pub fn label(&self) -> &str {
        self.metadata.split(':').next().unwrap_or("").trim()
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn render_evidence(blocks: &[EvidenceBlock]) -> String {
    if blocks.is_empty() {
        return "none".to_string();
    }
    blocks.iter().enumerate().map(|(i, b)| b.render(i + 1)).collect::<Vec<_>>().join("\n")
}

fn parse_triplet(text: &str) -> Option<Triplet> {
    let mut parts = text.split_whitespace();
    let subject = FrameId::parse(parts.next()?).ok()?;
    let predicate = Relation::from_canonical(parts.next()?)?;
    let object = FrameId::parse(parts.next()?).ok()?;
    Some(Triplet { subject, predicate, object })
}

/// Inverse of [`render_evidence`]; malformed blocks are skipped.
pub fn parse_evidence(text: &str) -> Vec<EvidenceBlock> {
    let mut out: Vec<EvidenceBlock> = Vec::new();
    let mut valid = false;
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix(EVIDENCE_HEAD) {
            let mut version = None;
            let mut attachment = None;
            for field in rest.split_whitespace() {
                if let Some(v) = field.strip_prefix("frame=") {
                    version = FrameId::parse(v).ok();
                } else if let Some(v) = field.strip_prefix("attachment=") {
                    attachment = v.parse().ok();
                }
            }
            valid = version.is_some();
            if let Some(version) = version {
                out.push(EvidenceBlock {
                    version,
                    attachment,
                    metadata: String::new(),
                    summary: None,
                    triplets: Vec::new(),
                });
            }
            continue;
        }
        let Some(block) = out.last_mut().filter(|_| valid) else { continue };
        if let Some(m) = line.strip_prefix("meta: ") {
            block.metadata = m.to_string();
        } else if let Some(s) = line.strip_prefix("summary: ") {
            block.summary = Some(s.to_string());
        } else if let Some(t) = line.strip_prefix("relation: ").and_then(parse_triplet) {
            block.triplets.push(t);
        }
    }
    out
}

pub struct AnswerInputs<'a> {
    pub question: &'a str,
    pub asker: SpeakerId,
    pub instruction: &'a str,
    pub evidence: &'a str,
    pub scratch: &'a [String],
    pub transcript: Option<&'a str>,
    pub directive: Option<&'a str>,
}

pub fn answerer_request(inputs: &AnswerInputs<'_>, attachments: Vec<Canvas>) -> ChatRequest {
    let mut parts = vec![
        section("asker", inputs.asker.as_str()),
        section("question", inputs.question),
        section("instruction", inputs.instruction),
        section("evidence", inputs.evidence),
        section("scratch", &inputs.scratch.join("\n")),
    ];
    if let Some(t) = inputs.transcript {
        parts.push(section("transcript", t));
    }
    if let Some(d) = inputs.directive {
        parts.push(section("directive", d));
    }
    ChatRequest::new(RoleTag::Answerer, ANSWERER_SYSTEM, join(&parts)).with_attachments(attachments)
}

pub fn judge_request(question: &str, response: &str, gold: &str) -> ChatRequest {
    let user =
        join(&[section("question", question), section("llm_response", response), section("correct_response", gold)]);
    ChatRequest::new(RoleTag::Judge, JUDGE_SYSTEM, user)
}

pub fn annotator_request(item: &QAItem) -> ChatRequest {
    let user = join(&[
        section("relation_type", item.relation_type.label()),
        section("question", &item.question),
        section("gold_answer", &item.gold_answer),
    ]);
    ChatRequest::new(RoleTag::Annotator, ANNOTATOR_SYSTEM, user)
}
