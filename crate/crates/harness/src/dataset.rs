//! On-disk layout of one video's pipeline inputs.
//!
//! ```text
//! manifest.json  vocabulary.json  annotation.json
//! frame_000_obj.trka  frame_000_rel.trka  frame_000_logits.json
//! frame_000_ext.json  frame_000_gt.json   frame_000_gt_graph.json
//! frame_001_flow.trkf ...
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trkt_core::attention::LogitVector;
use trkt_core::io;
use trkt_core::{
    AttentionStack, CategoryVocabulary, DetectionSet, Error, FlowField, FrameRef,
    LocalizedSceneGraph, Result, UnlocalizedSceneGraph,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub video_id: String,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    /// `[rows, cols]` of the attention grid.
    pub grid: [usize; 2],
}

impl Manifest {
    pub fn frame(&self, t: usize) -> Result<FrameRef> {
        FrameRef::new(self.video_id.clone(), t, self.width, self.height)
    }
}

#[derive(Debug, Clone)]
pub struct FrameData {
    pub object_attention: AttentionStack,
    pub relation_attention: AttentionStack,
    pub logits: LogitVector,
    /// Backward flow into this frame; `None` on frame 0.
    pub flow: Option<FlowField>,
    pub external: DetectionSet,
    pub gt: DetectionSet,
    pub gt_graph: LocalizedSceneGraph,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub vocabulary: CategoryVocabulary,
    pub annotation: UnlocalizedSceneGraph,
    pub frames: Vec<FrameData>,
}

pub fn frame_file(dir: &Path, t: usize, suffix: &str) -> PathBuf {
    dir.join(format!("frame_{t:03}_{suffix}"))
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        write_json(&self.manifest, &dir.join("manifest.json"))?;
        io::save_vocabulary(&self.vocabulary, dir.join("vocabulary.json"))?;
        io::save_scene_graph(&self.annotation, dir.join("annotation.json"))?;
        for (t, f) in self.frames.iter().enumerate() {
            io::save_attention_stack(&f.object_attention, frame_file(dir, t, "obj.trka"))?;
            io::save_attention_stack(&f.relation_attention, frame_file(dir, t, "rel.trka"))?;
            io::save_logits(&f.logits, frame_file(dir, t, "logits.json"))?;
            if let Some(flow) = &f.flow {
                io::save_flow(flow, frame_file(dir, t, "flow.trkf"))?;
            }
            io::save_detections(&f.external, frame_file(dir, t, "ext.json"))?;
            io::save_detections(&f.gt, frame_file(dir, t, "gt.json"))?;
            io::save_localized_graph(&f.gt_graph, frame_file(dir, t, "gt_graph.json"))?;
        }
        Ok(())
    }

    /// Loads a dataset; a missing flow file on a later frame reads as `None`.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
        let vocabulary = io::load_vocabulary(dir.join("vocabulary.json"))?;
        let annotation = io::load_scene_graph(dir.join("annotation.json"), Some(&vocabulary))?;
        if annotation.video_id != manifest.video_id {
            return Err(Error::Validation(format!(
                "annotation is for video {}, manifest for {}",
                annotation.video_id, manifest.video_id
            )));
        }
        let mut frames = Vec::with_capacity(manifest.frames);
        for t in 0..manifest.frames {
            let frame = manifest.frame(t)?;
            let check = |what: &str, got: &FrameRef| {
                if *got != frame {
                    return Err(Error::FrameMismatch(format!(
                        "{what} for frame {t} describes {got}"
                    )));
                }
                Ok(())
            };
            let flow_path = frame_file(dir, t, "flow.trkf");
            let flow = if t > 0 && flow_path.exists() {
                Some(io::load_flow(&flow_path, frame.clone())?)
            } else {
                None
            };
            let external = io::load_detections(frame_file(dir, t, "ext.json"), Some(&vocabulary))?;
            check("external detections", &external.frame)?;
            let gt = io::load_detections(frame_file(dir, t, "gt.json"), Some(&vocabulary))?;
            check("ground-truth detections", &gt.frame)?;
            let gt_graph =
                io::load_localized_graph(frame_file(dir, t, "gt_graph.json"), Some(&vocabulary))?;
            check("ground-truth graph", &gt_graph.frame)?;
            let object_attention =
                io::load_attention_stack(frame_file(dir, t, "obj.trka"), frame.clone())?;
            let relation_attention =
                io::load_attention_stack(frame_file(dir, t, "rel.trka"), frame)?;
            if object_attention.grid() != (manifest.grid[0], manifest.grid[1]) {
                return Err(Error::Shape(format!(
                    "frame {t} attention grid {:?} differs from manifest {:?}",
                    object_attention.grid(),
                    manifest.grid
                )));
            }
            frames.push(FrameData {
                object_attention,
                relation_attention,
                logits: io::load_logits(frame_file(dir, t, "logits.json"))?,
                flow,
                external,
                gt,
                gt_graph,
            });
        }
        Ok(Self {
            manifest,
            vocabulary,
            annotation,
            frames,
        })
    }
}
