//! Motion clips on a fixed skeleton: JSON-lines storage, resampling,
//! fixed-window training tensors, procedural synthesis and export.

mod export;
mod synth;
mod tensors;

use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::lie::{JointPose, KinematicTree, LieError, SkeletonSpec};

pub use export::{clip_to_bvh, clip_to_csv, rotation_to_euler_zxy, euler_zxy_to_matrix};
pub use synth::{synthesize, SynthSpec, SYNTH_ACTIONS};
pub use tensors::{to_training_tensors, PoseLayout, TrainingSequences};

pub const DATASET_FORMAT: &str = "motionkit-motion";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error("dataset has no clips")]
    EmptyDataset,
    #[error("unknown action {0:?}")]
    UnknownAction(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Skeleton(#[from] LieError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub id: String,
    pub frames: Vec<JointPose>,
    /// Index into the dataset's action vocabulary.
    pub action: usize,
    pub subject: u32,
    pub fps: f64,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionDataset {
    pub skeleton: KinematicTree,
    pub action_vocab: Vec<String>,
    pub clips: Vec<Clip>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    kind: String,
    format: String,
    version: u32,
    skeleton: SkeletonSpec,
    skeleton_hash: String,
    action_vocab: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ClipLine {
    kind: String,
    id: String,
    action: String,
    subject: u32,
    fps: f64,
    frames: Vec<Vec<f64>>,
}

impl MotionDataset {
    pub fn new(skeleton: KinematicTree, action_vocab: Vec<String>, clips: Vec<Clip>) -> Result<Self, DatasetError> {
        let ds = MotionDataset {
            skeleton,
            action_vocab,
            clips,
        };
        for (i, c) in ds.clips.iter().enumerate() {
            ds.check_clip(c).map_err(|message| DatasetError::SchemaViolation { line: i + 2, message })?;
        }
        Ok(ds)
    }

    fn check_clip(&self, c: &Clip) -> Result<(), String> {
        if c.action >= self.action_vocab.len() {
            return Err(format!("clip {}: action index {} outside vocabulary", c.id, c.action));
        }
        if c.frames.is_empty() {
            return Err(format!("clip {}: no frames", c.id));
        }
        if !(c.fps > 0.0 && c.fps.is_finite()) {
            return Err(format!("clip {}: fps must be positive", c.id));
        }
        let n = self.skeleton.joint_count();
        for (t, f) in c.frames.iter().enumerate() {
            if f.len() != n {
                return Err(format!("clip {}: frame {t} has {} joints, skeleton has {n}", c.id, f.len()));
            }
            if !f.is_finite() {
                return Err(format!("clip {}: frame {t} has non-finite coordinates", c.id));
            }
        }
        Ok(())
    }

    pub fn action_index(&self, name: &str) -> Result<usize, DatasetError> {
        self.action_vocab
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| DatasetError::UnknownAction(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let header = HeaderLine {
            kind: "header".into(),
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            skeleton: self.skeleton.spec().clone(),
            skeleton_hash: self.skeleton.hash(),
            action_vocab: self.action_vocab.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for c in &self.clips {
            let line = ClipLine {
                kind: "clip".into(),
                id: c.id.clone(),
                action: self.action_vocab[c.action].clone(),
                subject: c.subject,
                fps: c.fps,
                frames: c.frames.iter().map(JointPose::to_flat).collect(),
            };
            out.push_str(&serde_json::to_string(&line).expect("clip serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let f = std::fs::File::open(path)?;
        Self::from_reader(f)
    }

    pub fn from_jsonl(s: &str) -> Result<Self, DatasetError> {
        Self::from_reader(s.as_bytes())
    }

    /// Parses the header line followed by one clip per line. Blank lines are
    /// skipped; errors carry the 1-based line number.
    pub fn from_reader(r: impl Read) -> Result<Self, DatasetError> {
        let reader = BufReader::new(r);
        let mut header: Option<(KinematicTree, Vec<String>)> = None;
        let mut clips = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| DatasetError::SchemaViolation { line: line_no, message };
            match &header {
                None => {
                    let h: HeaderLine = serde_json::from_str(&line).map_err(|e| bad(format!("header: {e}")))?;
                    if h.kind != "header" || h.format != DATASET_FORMAT || h.version != DATASET_VERSION {
                        return Err(bad(format!("unsupported header {} {} v{}", h.kind, h.format, h.version)));
                    }
                    let tree = KinematicTree::new(h.skeleton).map_err(|e| bad(format!("skeleton: {e}")))?;
                    if tree.hash() != h.skeleton_hash {
                        return Err(bad("skeleton hash does not match skeleton".into()));
                    }
                    header = Some((tree, h.action_vocab));
                }
                Some((tree, vocab)) => {
                    let c: ClipLine = serde_json::from_str(&line).map_err(|e| bad(format!("clip: {e}")))?;
                    if c.kind != "clip" {
                        return Err(bad(format!("expected clip record, got {:?}", c.kind)));
                    }
                    let action = vocab
                        .iter()
                        .position(|a| *a == c.action)
                        .ok_or_else(|| bad(format!("clip {}: action {:?} not in vocabulary", c.id, c.action)))?;
                    let n = tree.joint_count();
                    let mut frames = Vec::with_capacity(c.frames.len());
                    for (t, flat) in c.frames.iter().enumerate() {
                        if flat.len() != 3 * n {
                            return Err(bad(format!(
                                "clip {}: frame {t} has {} values, expected {}",
                                c.id,
                                flat.len(),
                                3 * n
                            )));
                        }
                        frames.push(JointPose::from_flat(flat).map_err(|e| bad(e.to_string()))?);
                    }
                    let clip = Clip {
                        id: c.id,
                        frames,
                        action,
                        subject: c.subject,
                        fps: c.fps,
                    };
                    let probe = MotionDataset {
                        skeleton: tree.clone(),
                        action_vocab: vocab.clone(),
                        clips: vec![],
                    };
                    probe.check_clip(&clip).map_err(bad)?;
                    clips.push(clip);
                }
            }
        }
        let (skeleton, action_vocab) = header.ok_or(DatasetError::EmptyDataset)?;
        if clips.is_empty() {
            return Err(DatasetError::EmptyDataset);
        }
        Ok(MotionDataset {
            skeleton,
            action_vocab,
            clips,
        })
    }

    /// Subject-disjoint split: the first `ceil(train_fraction · S)` subjects in
    /// ascending id order go to the training side.
    pub fn split_by_subject(&self, train_fraction: f64) -> Result<(MotionDataset, MotionDataset), DatasetError> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(DatasetError::InvalidArgument(format!("train fraction {train_fraction}")));
        }
        let mut subjects: Vec<u32> = self.clips.iter().map(|c| c.subject).collect();
        subjects.sort_unstable();
        subjects.dedup();
        let n_train = ((subjects.len() as f64) * train_fraction).ceil() as usize;
        let train_set: Vec<u32> = subjects[..n_train.min(subjects.len())].to_vec();
        let (train, test): (Vec<Clip>, Vec<Clip>) =
            self.clips.iter().cloned().partition(|c| train_set.contains(&c.subject));
        let mk = |clips| MotionDataset {
            skeleton: self.skeleton.clone(),
            action_vocab: self.action_vocab.clone(),
            clips,
        };
        Ok((mk(train), mk(test)))
    }

    /// Clips of one action.
    pub fn filter_action(&self, action: usize) -> MotionDataset {
        MotionDataset {
            skeleton: self.skeleton.clone(),
            action_vocab: self.action_vocab.clone(),
            clips: self.clips.iter().filter(|c| c.action == action).cloned().collect(),
        }
    }
}

/// Resamples every clip from `src_fps` to `dst_fps` by nearest-time frame
/// picking. Output length is `ceil(T · dst / src)`; frame `k` takes source
/// index `round(k · src / dst)`.
pub fn downsample(dataset: &MotionDataset, src_fps: f64, dst_fps: f64) -> Result<MotionDataset, DatasetError> {
    if !(dst_fps > 0.0 && src_fps >= dst_fps) {
        return Err(DatasetError::InvalidArgument(format!(
            "downsample needs src_fps >= dst_fps > 0, got {src_fps} -> {dst_fps}"
        )));
    }
    let ratio = src_fps / dst_fps;
    let clips = dataset
        .clips
        .iter()
        .map(|c| {
            let t = c.frames.len();
            let n = ((t as f64) * dst_fps / src_fps).ceil() as usize;
            let frames = (0..n)
                .map(|k| {
                    let idx = ((k as f64) * ratio).round() as usize;
                    c.frames[idx.min(t - 1)].clone()
                })
                .collect();
            Clip {
                frames,
                fps: dst_fps,
                ..c.clone()
            }
        })
        .collect();
    Ok(MotionDataset {
        skeleton: dataset.skeleton.clone(),
        action_vocab: dataset.action_vocab.clone(),
        clips,
    })
}
