use serde::{Deserialize, Serialize};
use std::path::Path;

use motionkit::datasets::{Clip, MotionDataset};
use motionkit::lie::{JointPose, KinematicTree, SkeletonSpec, Vec3};

use crate::error::{CliError, CliResult};

pub const MOTION_FORMAT: &str = "motionkit-generated";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub action: String,
    pub frame: usize,
}

/// One motion with the metadata needed to reproduce or export it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionFile {
    pub format: String,
    pub version: u32,
    /// `generate`, `transition`, `interpolate`, `outpaint` or `dataset`.
    pub kind: String,
    pub skeleton: SkeletonSpec,
    pub action_vocab: Vec<String>,
    pub fps: f64,
    pub seed: u64,
    pub schedule: Vec<ScheduleEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix_frames: Option<usize>,
    /// Lie vectors rescaled while decoding.
    pub clamped: usize,
    pub frames: Vec<Vec<[f64; 3]>>,
}

impl MotionFile {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: &str,
        tree: &KinematicTree,
        action_vocab: &[String],
        fps: f64,
        seed: u64,
        schedule: Vec<ScheduleEntry>,
        clamped: usize,
        frames: &[JointPose],
    ) -> Self {
        MotionFile {
            format: MOTION_FORMAT.into(),
            version: 1,
            kind: kind.into(),
            skeleton: tree.spec().clone(),
            action_vocab: action_vocab.to_vec(),
            fps,
            seed,
            schedule,
            prefix_frames: None,
            clamped,
            frames: frames
                .iter()
                .map(|f| f.joints.iter().map(|v| [v.x, v.y, v.z]).collect())
                .collect(),
        }
    }

    pub fn tree(&self) -> CliResult<KinematicTree> {
        Ok(KinematicTree::new(self.skeleton.clone())?)
    }

    pub fn joints(&self) -> Vec<JointPose> {
        self.frames
            .iter()
            .map(|f| JointPose::new(f.iter().map(|v| Vec3::new(v[0], v[1], v[2])).collect()))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("motion serializes")
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let m: MotionFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.format != MOTION_FORMAT {
            return Err(CliError::new("parse", format!("{} is not a {MOTION_FORMAT} file", path.display())));
        }
        Ok(m)
    }

    /// The motion as a dataset clip, labeled with its first scheduled action.
    pub fn to_clip(&self) -> CliResult<(KinematicTree, Clip)> {
        let action = self
            .schedule
            .first()
            .and_then(|s| self.action_vocab.iter().position(|a| a == &s.action))
            .unwrap_or(0);
        Ok((
            self.tree()?,
            Clip {
                id: self.kind.clone(),
                frames: self.joints(),
                action,
                subject: 0,
                fps: self.fps,
            },
        ))
    }
}

/// Reads either a generated motion (`.json`) or one clip of a JSON-lines
/// dataset (`.jsonl`, picked by id or the first clip).
pub fn load_motion(path: &Path, clip_id: Option<&str>) -> CliResult<MotionFile> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        let ds = MotionDataset::load(path)?;
        let clip = match clip_id {
            Some(id) => ds
                .clips
                .iter()
                .find(|c| c.id == id)
                .ok_or_else(|| CliError::invalid(format!("no clip {id:?} in {}", path.display())))?,
            None => ds.clips.first().ok_or_else(|| CliError::invalid("dataset has no clips"))?,
        };
        Ok(MotionFile::new(
            "dataset",
            &ds.skeleton,
            &ds.action_vocab,
            clip.fps,
            0,
            vec![ScheduleEntry {
                action: ds.action_vocab[clip.action].clone(),
                frame: 0,
            }],
            0,
            &clip.frames,
        ))
    } else {
        MotionFile::load(path)
    }
}
