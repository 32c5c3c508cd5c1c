//! The memory bank: versioned artifacts per perspective, cached
//! embeddings, hybrid retrieval and on-disk persistence.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ArtifactVersion, Condition, Embedding, FrameId, ObjectRegistry, Pov, Triplet};
use crate::gateway::{GatewayError, ModelBackend};
use crate::linker::{LinkError, RelationGraph};
use crate::raster::{decode_png, encode_png, RasterError};

pub const DEFAULT_LAMBDA: f64 = 0.7;
const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("frame {0} was never allocated")]
    UnallocatedFrame(FrameId),
    #[error("version {0} is not newer than the stored versions of its frame")]
    StaleVersion(FrameId),
    #[error("version {0} has no canvas")]
    MissingCanvas(FrameId),
    #[error("no frames pass the perspective filter")]
    EmptyBank,
    #[error("retrieval count must be at least 1")]
    ZeroCount,
    #[error("lambda {0} is outside [0, 1]")]
    BadLambda(f64),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt bank directory: {0}")]
    Corrupt(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MemoryError + '_ {
    move |source| MemoryError::Io { path: path.to_path_buf(), source }
}

/// Cached embeddings of one version. `None` means the channel had no
/// content; its cosine counts as 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingSet {
    pub visual: Option<Embedding>,
    pub metadata: Option<Embedding>,
    pub summary: Option<Embedding>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredVersion {
    pub version: ArtifactVersion,
    pub embeddings: EmbeddingSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Visual,
    Textual,
}

/// How the two channels combine under the `both` condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Each frame scores with its better channel.
    #[default]
    Max,
    /// Rank every (frame, channel) pair, truncate, then drop repeated frames.
    Union,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    /// Frame id (sequence 1).
    pub frame_id: FrameId,
    /// The latest version, which the score was computed on.
    pub version: FrameId,
    pub score: f64,
    pub channel: Channel,
}

/// One retrieved memory with everything the reasoner sees about it.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceEntry {
    pub hit: ScoredHit,
    pub version: ArtifactVersion,
    pub metadata: String,
    pub triplets: Vec<Triplet>,
}

fn cos(a: Option<&Embedding>, q: &Embedding) -> f64 {
    match a {
        Some(a) if a.dimension() == q.dimension() => a.cosine(q),
        _ => 0.0,
    }
}

/// λ·cos(visual, q) + (1−λ)·cos(metadata, q). The boundaries return the
/// single channel exactly.
pub fn score_visual(stored: &StoredVersion, query: &Embedding, lambda: f64) -> Result<f64, MemoryError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(MemoryError::BadLambda(lambda));
    }
    if stored.version.canvas.is_none() {
        return Err(MemoryError::MissingCanvas(stored.version.frame_id));
    }
    let v = cos(stored.embeddings.visual.as_ref(), query);
    let m = cos(stored.embeddings.metadata.as_ref(), query);
    Ok(if lambda == 1.0 {
        v
    } else if lambda == 0.0 {
        m
    } else {
        lambda * v + (1.0 - lambda) * m
    })
}

pub fn score_textual(stored: &StoredVersion, query: &Embedding) -> f64 {
    cos(stored.embeddings.summary.as_ref(), query)
}

/// Embeds text, treating an empty string as an absent channel.
fn embed_optional(text: &str, backend: &dyn ModelBackend) -> Result<Option<Embedding>, GatewayError> {
    if text.trim().is_empty() {
        return Ok(None);
    }
    match backend.embed_text(text) {
        Ok(e) => Ok(Some(e)),
        Err(GatewayError::EmptyInput) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Ranking order: score descending, then canonical frame id.
fn rank(a: &ScoredHit, b: &ScoredHit) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.frame_id.cmp(&b.frame_id)).then(a.channel.cmp(&b.channel))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryBank {
    pub dialogue_id: String,
    allocated: BTreeSet<FrameId>,
    /// Every stored version in insertion order.
    log: Vec<StoredVersion>,
    latest: BTreeMap<FrameId, usize>,
    graph: RelationGraph,
}

impl MemoryBank {
    pub fn new(dialogue_id: impl Into<String>) -> Self {
        MemoryBank { dialogue_id: dialogue_id.into(), ..Self::default() }
    }

    /// Registers a frame so that versions and triplets may refer to it.
    pub fn allocate(&mut self, frame: FrameId) {
        self.allocated.insert(frame.frame());
        self.graph.register_frame(frame);
    }

    pub fn is_allocated(&self, frame: FrameId) -> bool {
        self.allocated.contains(&frame.frame())
    }

    pub fn frames(&self) -> impl Iterator<Item = FrameId> + '_ {
        self.latest.keys().copied()
    }

    pub fn frame_count(&self) -> usize {
        self.latest.len()
    }

    /// Audit log of all versions, oldest first.
    pub fn history(&self) -> &[StoredVersion] {
        &self.log
    }

    pub fn versions_of(&self, frame: FrameId) -> impl Iterator<Item = &StoredVersion> {
        let frame = frame.frame();
        self.log.iter().filter(move |s| s.version.frame_id.frame() == frame)
    }

    pub fn latest(&self, frame: FrameId) -> Option<&StoredVersion> {
        self.latest.get(&frame.frame()).map(|i| &self.log[*i])
    }

    pub fn graph(&self) -> &RelationGraph {
        &self.graph
    }

    pub fn link(&mut self, t: Triplet) -> Result<bool, MemoryError> {
        Ok(self.graph.insert(t)?)
    }

    /// Embeds and stores a version. The metadata embedding is always
    /// attempted; canvas and summary embeddings when present.
    pub fn insert(&mut self, version: ArtifactVersion, backend: &dyn ModelBackend) -> Result<(), MemoryError> {
        self.check_insertable(&version)?;
        let embeddings = EmbeddingSet {
            visual: version.canvas.as_ref().map(|c| backend.embed_image(c)).transpose()?,
            metadata: embed_optional(&version.metadata, backend)?,
            summary: match &version.summary {
                Some(s) => embed_optional(s, backend)?,
                None => None,
            },
        };
        self.insert_embedded(version, embeddings)
    }

    /// Stores a version with precomputed embeddings.
    pub fn insert_embedded(&mut self, version: ArtifactVersion, embeddings: EmbeddingSet) -> Result<(), MemoryError> {
        self.check_insertable(&version)?;
        let frame = version.frame_id.frame();
        self.log.push(StoredVersion { version, embeddings });
        self.latest.insert(frame, self.log.len() - 1);
        Ok(())
    }

    fn check_insertable(&self, version: &ArtifactVersion) -> Result<(), MemoryError> {
        let id = version.frame_id;
        if !self.is_allocated(id) {
            return Err(MemoryError::UnallocatedFrame(id));
        }
        if self.latest(id).is_some_and(|s| s.version.frame_id.sequence >= id.sequence) {
            return Err(MemoryError::StaleVersion(id));
        }
        Ok(())
    }

    /// Scores the latest version of every frame admitted by `pov`.
    #[allow(clippy::too_many_arguments)]
    pub fn retrieve(
        &self,
        query: &str,
        n: usize,
        pov: Pov,
        condition: Condition,
        lambda: f64,
        fusion: Fusion,
        backend: &dyn ModelBackend,
    ) -> Result<Vec<ScoredHit>, MemoryError> {
        if n == 0 {
            return Err(MemoryError::ZeroCount);
        }
        if !self.latest.keys().any(|f| pov.admits(f.speaker)) {
            return Err(MemoryError::EmptyBank);
        }
        let q = backend.embed_text(query)?;
        self.retrieve_embedded(&q, n, pov, condition, lambda, fusion)
    }

    pub fn retrieve_embedded(
        &self,
        q: &Embedding,
        n: usize,
        pov: Pov,
        condition: Condition,
        lambda: f64,
        fusion: Fusion,
    ) -> Result<Vec<ScoredHit>, MemoryError> {
        if n == 0 {
            return Err(MemoryError::ZeroCount);
        }
        let mut scored: Vec<ScoredHit> = Vec::new();
        for (frame, i) in self.latest.iter().filter(|(f, _)| pov.admits(f.speaker)) {
            let s = &self.log[*i];
            let hit = |score, channel| ScoredHit { frame_id: *frame, version: s.version.frame_id, score, channel };
            let visual =
                if condition.visual() { Some(hit(score_visual(s, q, lambda)?, Channel::Visual)) } else { None };
            let textual = if condition.textual() { Some(hit(score_textual(s, q), Channel::Textual)) } else { None };
            match (visual, textual, fusion) {
                (Some(v), Some(t), Fusion::Max) => scored.push(if t.score > v.score { t } else { v }),
                (v, t, _) => scored.extend(v.into_iter().chain(t)),
            }
        }
        if scored.is_empty() {
            return Err(MemoryError::EmptyBank);
        }
        scored.sort_by(rank);
        scored.truncate(n);
        let mut seen = BTreeSet::new();
        scored.retain(|h| seen.insert(h.frame_id));
        Ok(scored)
    }

    /// Latest version, metadata and incident triplets per hit, in hit order.
    pub fn assemble_evidence(&self, hits: &[ScoredHit]) -> Vec<EvidenceEntry> {
        hits.iter()
            .filter_map(|h| {
                let s = self.latest(h.frame_id)?;
                Some(EvidenceEntry {
                    hit: *h,
                    version: s.version.clone(),
                    metadata: s.version.metadata.clone(),
                    triplets: self.graph.triplets_for(&[h.frame_id]),
                })
            })
            .collect()
    }

    /// Writes the bank to `dir` atomically: everything goes to a sibling
    /// temporary directory that is renamed into place.
    pub fn save(&self, dir: &Path) -> Result<(), MemoryError> {
        let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(io_err(parent))?;
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "bank".into());
        let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
        }
        self.write_into(&tmp)?;
        if dir.exists() {
            let old = parent.join(format!(".{name}.old-{}", std::process::id()));
            fs::rename(dir, &old).map_err(io_err(dir))?;
            fs::rename(&tmp, dir).map_err(io_err(dir))?;
            fs::remove_dir_all(&old).map_err(io_err(&old))?;
        } else {
            fs::rename(&tmp, dir).map_err(io_err(dir))?;
        }
        Ok(())
    }

    fn write_into(&self, root: &Path) -> Result<(), MemoryError> {
        let frames = root.join("frames");
        fs::create_dir_all(&frames).map_err(io_err(&frames))?;
        let write = |path: PathBuf, bytes: &[u8]| fs::write(&path, bytes).map_err(io_err(&path));
        let mut floats: Vec<f64> = Vec::new();
        let mut slot = |e: &Option<Embedding>| {
            e.as_ref().map(|e| {
                let s = EmbeddingSlot { offset: floats.len(), len: e.dimension() };
                floats.extend_from_slice(e.values());
                s
            })
        };
        let mut versions = Vec::with_capacity(self.log.len());
        for s in &self.log {
            let v = &s.version;
            let id = v.frame_id.to_string();
            if let Some(c) = &v.canvas {
                write(frames.join(format!("{id}.png")), &encode_png(c)?)?;
                let reg = serde_json::to_vec_pretty(&c.registry).map_err(|e| MemoryError::Corrupt(e.to_string()))?;
                write(frames.join(format!("{id}.objects.json")), &reg)?;
            }
            if let Some(summary) = &v.summary {
                write(frames.join(format!("{id}.summary.txt")), summary.as_bytes())?;
            }
            write(frames.join(format!("{id}.meta.txt")), v.metadata.as_bytes())?;
            versions.push(ManifestVersion {
                frame_id: v.frame_id,
                prompt: v.prompt.clone(),
                created_at_turn: v.created_at_turn,
                faithfulness: v.faithfulness,
                has_canvas: v.canvas.is_some(),
                has_summary: v.summary.is_some(),
                visual: slot(&s.embeddings.visual),
                metadata: slot(&s.embeddings.metadata),
                summary: slot(&s.embeddings.summary),
            });
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT,
            dialogue_id: self.dialogue_id.clone(),
            allocated: self.allocated.iter().copied().collect(),
            versions,
        };
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| MemoryError::Corrupt(e.to_string()))?;
        write(root.join("manifest.json"), &json)?;
        write(root.join("links.jsonl"), self.graph.to_jsonl().as_bytes())?;
        let bin: Vec<u8> = floats.iter().flat_map(|f| f.to_le_bytes()).collect();
        write(root.join("embeddings.bin"), &bin)
    }

    pub fn load(dir: &Path) -> Result<MemoryBank, MemoryError> {
        let read = |path: PathBuf| fs::read(&path).map_err(io_err(&path));
        let read_text = |path: PathBuf| {
            let bytes = read(path.clone())?;
            String::from_utf8(bytes).map_err(|_| MemoryError::Corrupt(format!("{} is not UTF-8", path.display())))
        };
        let manifest: Manifest = serde_json::from_slice(&read(dir.join("manifest.json"))?)
            .map_err(|e| MemoryError::Corrupt(format!("manifest.json: {e}")))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(MemoryError::Corrupt(format!("unsupported manifest format {}", manifest.format)));
        }
        let bin = read(dir.join("embeddings.bin"))?;
        if bin.len() % 8 != 0 {
            return Err(MemoryError::Corrupt("embeddings.bin length is not a multiple of 8".into()));
        }
        let floats: Vec<f64> =
            bin.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        let take = |s: &Option<EmbeddingSlot>| -> Result<Option<Embedding>, MemoryError> {
            let Some(s) = s else { return Ok(None) };
            let values = floats
                .get(s.offset..s.offset + s.len)
                .ok_or_else(|| MemoryError::Corrupt("embedding slot out of range".into()))?;
            Embedding::new(values.to_vec()).map(Some).map_err(|e| MemoryError::Corrupt(e.to_string()))
        };
        let mut bank = MemoryBank::new(manifest.dialogue_id);
        for f in manifest.allocated {
            bank.allocate(f);
        }
        let frames = dir.join("frames");
        for m in manifest.versions {
            let id = m.frame_id.to_string();
            let canvas = if m.has_canvas {
                let reg: ObjectRegistry = serde_json::from_slice(&read(frames.join(format!("{id}.objects.json")))?)
                    .map_err(|e| MemoryError::Corrupt(format!("{id}.objects.json: {e}")))?;
                Some(decode_png(&read(frames.join(format!("{id}.png")))?, reg)?)
            } else {
                None
            };
            let summary = if m.has_summary { Some(read_text(frames.join(format!("{id}.summary.txt")))?) } else { None };
            let version = ArtifactVersion {
                frame_id: m.frame_id,
                canvas,
                summary,
                prompt: m.prompt,
                metadata: read_text(frames.join(format!("{id}.meta.txt")))?,
                created_at_turn: m.created_at_turn,
                faithfulness: m.faithfulness,
            };
            let embeddings =
                EmbeddingSet { visual: take(&m.visual)?, metadata: take(&m.metadata)?, summary: take(&m.summary)? };
            bank.insert_embedded(version, embeddings)?;
        }
        bank.graph.load_jsonl(&read_text(dir.join("links.jsonl"))?)?;
        Ok(bank)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct EmbeddingSlot {
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestVersion {
    frame_id: FrameId,
    prompt: String,
    created_at_turn: u32,
    faithfulness: Option<f64>,
    has_canvas: bool,
    has_summary: bool,
    visual: Option<EmbeddingSlot>,
    metadata: Option<EmbeddingSlot>,
    summary: Option<EmbeddingSlot>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    dialogue_id: String,
    allocated: Vec<FrameId>,
    versions: Vec<ManifestVersion>,
}
