//! On-disk formats.
//!
//! Binary tensors (little-endian, row-major, category-major):
//!
//! ```text
//! attention: "TRKA" | version u32 = 1 | C u32 | H u32 | W u32 | C*H*W f32
//! flow:      "TRKF" | version u32 = 1 | H u32 | W u32 | H*W*2 f32 (dx, dy interleaved)
//! ```
//!
//! The binary headers carry only dimensions, so loaders take the [`FrameRef`]
//! the tensor belongs to. Detections, scene graphs, logits and vocabularies
//! are JSON.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::attention::{HeadKind, LogitVector};
use crate::error::{Error, Result};
use crate::types::{
    AttentionStack, BBox, CategoryVocabulary, Detection, DetectionSet, DetectionSource, FlowField,
    FrameRef, LocalizedSceneGraph, LocalizedTriplet, Provenance, Triplet, UnlocalizedSceneGraph,
};

pub const ATTENTION_MAGIC: &[u8; 4] = b"TRKA";
pub const FLOW_MAGIC: &[u8; 4] = b"TRKF";
pub const FORMAT_VERSION: u32 = 1;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn new(bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format(format!(
                "file too short ({} bytes) for a header",
                bytes.len()
            )));
        }
        if &bytes[..4] != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                String::from_utf8_lossy(magic)
            )));
        }
        let mut r = Self { bytes, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        Ok(r)
    }

    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format("truncated header".into()))?;
        self.pos = end;
        Ok(u32::from_le_bytes(chunk.try_into().expect("4-byte slice")))
    }

    fn payload(&self, count: usize) -> Result<Vec<f32>> {
        let body = &self.bytes[self.pos..];
        let expected = count
            .checked_mul(4)
            .ok_or_else(|| Error::Format("declared dimensions overflow".into()))?;
        if body.len() != expected {
            return Err(Error::Format(format!(
                "payload has {} bytes ({} floats), header declares {count} floats",
                body.len(),
                body.len() as f64 / 4.0
            )));
        }
        Ok(body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect())
    }
}

fn dim(v: u32, name: &str) -> Result<usize> {
    if v == 0 {
        return Err(Error::Format(format!("dimension {name} is zero")));
    }
    Ok(v as usize)
}

fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_attention(stack: &AttentionStack) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + stack.data().len() * 4);
    out.extend_from_slice(ATTENTION_MAGIC);
    for v in [
        FORMAT_VERSION,
        stack.num_categories() as u32,
        stack.height() as u32,
        stack.width() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    push_f32s(&mut out, stack.data());
    out
}

/// Decodes an attention tensor; categories become `0..C` and provenance `raw`.
pub fn decode_attention(bytes: &[u8], frame: FrameRef) -> Result<AttentionStack> {
    let mut r = HeaderReader::new(bytes, ATTENTION_MAGIC)?;
    let c = dim(r.u32()?, "C")?;
    let h = dim(r.u32()?, "H")?;
    let w = dim(r.u32()?, "W")?;
    let count = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::Format("declared dimensions overflow".into()))?;
    let data = r.payload(count)?;
    AttentionStack::new(frame, (0..c).collect(), h, w, data, Provenance::Raw)
}

pub fn save_attention_stack(stack: &AttentionStack, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_attention(stack))
}

pub fn load_attention_stack(path: impl AsRef<Path>, frame: FrameRef) -> Result<AttentionStack> {
    decode_attention(&read_file(path.as_ref())?, frame)
}

pub fn encode_flow(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + flow.data().len() * 4);
    out.extend_from_slice(FLOW_MAGIC);
    for v in [FORMAT_VERSION, flow.height() as u32, flow.width() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    push_f32s(&mut out, flow.data());
    out
}

pub fn decode_flow(bytes: &[u8], frame: FrameRef) -> Result<FlowField> {
    let mut r = HeaderReader::new(bytes, FLOW_MAGIC)?;
    let h = dim(r.u32()?, "H")?;
    let w = dim(r.u32()?, "W")?;
    let count = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(2))
        .ok_or_else(|| Error::Format("declared dimensions overflow".into()))?;
    let data = r.payload(count)?;
    FlowField::new(frame, h, w, data)
}

pub fn save_flow(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_flow(flow))
}

pub fn load_flow(path: impl AsRef<Path>, frame: FrameRef) -> Result<FlowField> {
    decode_flow(&read_file(path.as_ref())?, frame)
}

fn parse_json<T: DeserializeOwned>(bytes: &[u8], what: &str) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("{what}: {e}")))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable value");
    bytes.push(b'\n');
    bytes
}

#[derive(Serialize, Deserialize)]
struct DetectionEntry {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    category: usize,
    score: f64,
}

#[derive(Serialize, Deserialize)]
struct DetectionSetFile {
    video_id: String,
    frame_index: usize,
    width: u32,
    height: u32,
    source: DetectionSource,
    detections: Vec<DetectionEntry>,
}

fn entry_to_detection(
    e: &DetectionEntry,
    frame: &FrameRef,
    vocab: Option<&CategoryVocabulary>,
) -> Result<Detection> {
    if let Some(v) = vocab {
        v.check_object(e.category)?;
    }
    let [x1, y1, x2, y2] = e.bbox;
    let bbox = BBox::new(x1, y1, x2, y2)?.clamp_to(frame)?;
    Detection::new(bbox, e.category, e.score)
}

pub fn encode_detections(set: &DetectionSet) -> Vec<u8> {
    let file = DetectionSetFile {
        video_id: set.frame.video_id.clone(),
        frame_index: set.frame.frame_index,
        width: set.frame.width,
        height: set.frame.height,
        source: set.source,
        detections: set
            .detections
            .iter()
            .map(|d| DetectionEntry {
                bbox: d.bbox.to_array(),
                category: d.category,
                score: d.score,
            })
            .collect(),
    };
    to_json(&file)
}

/// Parses a detections file. Boxes are clamped into the frame; category ids
/// are checked when a vocabulary is supplied.
pub fn decode_detections(bytes: &[u8], vocab: Option<&CategoryVocabulary>) -> Result<DetectionSet> {
    let file: DetectionSetFile = parse_json(bytes, "detections")?;
    let frame = FrameRef::new(file.video_id, file.frame_index, file.width, file.height)?;
    let detections = file
        .detections
        .iter()
        .enumerate()
        .map(|(i, e)| {
            entry_to_detection(e, &frame, vocab)
                .map_err(|err| Error::Validation(format!("detection {i}: {err}")))
        })
        .collect::<Result<Vec<_>>>()?;
    DetectionSet::new(frame, detections, file.source)
}

pub fn save_detections(set: &DetectionSet, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_detections(set))
}

pub fn load_detections(
    path: impl AsRef<Path>,
    vocab: Option<&CategoryVocabulary>,
) -> Result<DetectionSet> {
    decode_detections(&read_file(path.as_ref())?, vocab)
}

#[derive(Serialize, Deserialize)]
struct SceneGraphFile {
    video_id: String,
    annotated_frame_index: usize,
    triplets: Vec<Triplet>,
}

pub fn encode_scene_graph(g: &UnlocalizedSceneGraph) -> Vec<u8> {
    to_json(&SceneGraphFile {
        video_id: g.video_id.clone(),
        annotated_frame_index: g.annotated_frame_index,
        triplets: g.triplets.clone(),
    })
}

pub fn decode_scene_graph(
    bytes: &[u8],
    vocab: Option<&CategoryVocabulary>,
) -> Result<UnlocalizedSceneGraph> {
    let file: SceneGraphFile = parse_json(bytes, "scene graph")?;
    let g = UnlocalizedSceneGraph {
        video_id: file.video_id,
        annotated_frame_index: file.annotated_frame_index,
        triplets: file.triplets,
    };
    g.validate(vocab)?;
    Ok(g)
}

pub fn save_scene_graph(g: &UnlocalizedSceneGraph, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_scene_graph(g))
}

pub fn load_scene_graph(
    path: impl AsRef<Path>,
    vocab: Option<&CategoryVocabulary>,
) -> Result<UnlocalizedSceneGraph> {
    decode_scene_graph(&read_file(path.as_ref())?, vocab)
}

#[derive(Serialize, Deserialize)]
struct LocalizedEntry {
    subject: usize,
    object: usize,
    predicate: usize,
    subject_box: [f64; 4],
    object_box: [f64; 4],
    subject_score: f64,
    object_score: f64,
    score: f64,
}

#[derive(Serialize, Deserialize)]
struct LocalizedFile {
    video_id: String,
    frame_index: usize,
    width: u32,
    height: u32,
    triplets: Vec<LocalizedEntry>,
}

pub fn encode_localized_graph(g: &LocalizedSceneGraph) -> Vec<u8> {
    to_json(&LocalizedFile {
        video_id: g.frame.video_id.clone(),
        frame_index: g.frame.frame_index,
        width: g.frame.width,
        height: g.frame.height,
        triplets: g
            .triplets
            .iter()
            .map(|t| LocalizedEntry {
                subject: t.subject.category,
                object: t.object.category,
                predicate: t.predicate,
                subject_box: t.subject.bbox.to_array(),
                object_box: t.object.bbox.to_array(),
                subject_score: t.subject.score,
                object_score: t.object.score,
                score: t.score,
            })
            .collect(),
    })
}

pub fn decode_localized_graph(
    bytes: &[u8],
    vocab: Option<&CategoryVocabulary>,
) -> Result<LocalizedSceneGraph> {
    let file: LocalizedFile = parse_json(bytes, "localized scene graph")?;
    let frame = FrameRef::new(file.video_id, file.frame_index, file.width, file.height)?;
    let triplets = file
        .triplets
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let build = || -> Result<LocalizedTriplet> {
                if let Some(v) = vocab {
                    v.check_relation(e.predicate)?;
                }
                let subject = entry_to_detection(
                    &DetectionEntry {
                        bbox: e.subject_box,
                        category: e.subject,
                        score: e.subject_score,
                    },
                    &frame,
                    vocab,
                )?;
                let object = entry_to_detection(
                    &DetectionEntry {
                        bbox: e.object_box,
                        category: e.object,
                        score: e.object_score,
                    },
                    &frame,
                    vocab,
                )?;
                Ok(LocalizedTriplet {
                    subject,
                    object,
                    predicate: e.predicate,
                    score: e.score,
                })
            };
            build().map_err(|err| Error::Validation(format!("triplet {i}: {err}")))
        })
        .collect::<Result<Vec<_>>>()?;
    LocalizedSceneGraph::new(frame, triplets)
}

pub fn save_localized_graph(g: &LocalizedSceneGraph, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_localized_graph(g))
}

pub fn load_localized_graph(
    path: impl AsRef<Path>,
    vocab: Option<&CategoryVocabulary>,
) -> Result<LocalizedSceneGraph> {
    decode_localized_graph(&read_file(path.as_ref())?, vocab)
}

#[derive(Serialize, Deserialize)]
struct LogitFile {
    kind: HeadKind,
    values: Vec<f64>,
}

pub fn encode_logits(logits: &LogitVector) -> Vec<u8> {
    to_json(&LogitFile {
        kind: logits.kind(),
        values: logits.values().to_vec(),
    })
}

pub fn decode_logits(bytes: &[u8]) -> Result<LogitVector> {
    let file: LogitFile = parse_json(bytes, "logits")?;
    LogitVector::new(file.values, file.kind)
}

pub fn save_logits(logits: &LogitVector, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_logits(logits))
}

pub fn load_logits(path: impl AsRef<Path>) -> Result<LogitVector> {
    decode_logits(&read_file(path.as_ref())?)
}

pub fn save_vocabulary(v: &CategoryVocabulary, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &to_json(v))
}

pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<CategoryVocabulary> {
    let v: CategoryVocabulary = parse_json(&read_file(path.as_ref())?, "vocabulary")?;
    v.validate()?;
    Ok(v)
}
