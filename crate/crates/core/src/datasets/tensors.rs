//! Fixed-window training sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, MotionDataset};
use crate::lie::Vec3;

/// How joint coordinates are laid out in the pose vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PoseLayout {
    /// Joints translated so the first frame's root sits at the origin; the
    /// trajectory is kept.
    #[default]
    Absolute,
    /// Every frame's root subtracted from its own joints.
    RootCentered,
}

/// Per-clip fixed-length windows. Index order is `[clip][frame][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSequences {
    pub window: usize,
    pub joint_count: usize,
    /// Index of the root joint.
    pub root: usize,
    pub action_count: usize,
    pub layout: PoseLayout,
    /// Flattened joints, `3 · joint_count` per frame.
    pub poses: Vec<Vec<Vec<f64>>>,
    /// Root displacement from the previous frame; zero at the first frame
    /// and on padding.
    pub velocities: Vec<Vec<Vec3>>,
    /// 1 for real frames, 0 for padding.
    pub masks: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl TrainingSequences {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Time counter `c_t = t / T` for 1-based `t`.
    pub fn counter(&self, t: usize) -> f64 {
        (t + 1) as f64 / self.window as f64
    }

    pub fn pose_dim(&self) -> usize {
        3 * self.joint_count
    }
}

/// Cuts one window of `window` frames per clip. Longer clips get a
/// seed-determined start offset; shorter clips are padded by repeating the
/// last frame, with the padding masked out.
pub fn to_training_tensors(
    dataset: &MotionDataset,
    layout: PoseLayout,
    window: usize,
    seed: u64,
) -> Result<TrainingSequences, DatasetError> {
    if dataset.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    if window == 0 {
        return Err(DatasetError::InvalidArgument("window must be positive".into()));
    }
    let root = dataset.skeleton.root();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = TrainingSequences {
        window,
        joint_count: dataset.skeleton.joint_count(),
        root,
        action_count: dataset.action_vocab.len(),
        layout,
        poses: Vec::with_capacity(dataset.len()),
        velocities: Vec::with_capacity(dataset.len()),
        masks: Vec::with_capacity(dataset.len()),
        labels: Vec::with_capacity(dataset.len()),
    };
    for clip in &dataset.clips {
        let n = clip.frames.len();
        let start = if n > window { rng.random_range(0..=n - window) } else { 0 };
        let real = (n - start).min(window);
        let origin = clip.frames[start].joints[root];
        let mut poses = Vec::with_capacity(window);
        let mut vels = Vec::with_capacity(window);
        let mut mask = Vec::with_capacity(window);
        for k in 0..window {
            let f = &clip.frames[start + k.min(real - 1)];
            let shift = match layout {
                PoseLayout::Absolute => origin,
                PoseLayout::RootCentered => f.joints[root],
            };
            poses.push(f.translated(&-shift).to_flat());
            let v = if k == 0 || k >= real {
                Vec3::zeros()
            } else {
                f.joints[root] - clip.frames[start + k - 1].joints[root]
            };
            vels.push(v);
            mask.push(if k < real { 1.0 } else { 0.0 });
        }
        out.poses.push(poses);
        out.velocities.push(vels);
        out.masks.push(mask);
        out.labels.push(clip.action);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{Clip, SynthSpec, synthesize};
    use crate::lie::{JointPose, KinematicTree};

    fn static_clip(frames: usize) -> MotionDataset {
        let tree = KinematicTree::preset("synthetic8").unwrap();
        let pose = JointPose::new((0..8).map(|i| Vec3::new(i as f64, 2.0, -1.0)).collect());
        MotionDataset::new(
            tree,
            vec!["idle".into()],
            vec![Clip {
                id: "s".into(),
                frames: vec![pose; frames],
                action: 0,
                subject: 0,
                fps: 20.0,
            }],
        )
        .unwrap()
    }

    #[test]
    fn counter_starts_at_one_over_t() {
        let ts = to_training_tensors(&static_clip(16), PoseLayout::Absolute, 16, 0).unwrap();
        assert_eq!(ts.counter(0), 1.0 / 16.0);
        assert_eq!(ts.counter(15), 1.0);
    }

    #[test]
    fn static_clip_has_zero_velocity_and_origin_root() {
        let ts = to_training_tensors(&static_clip(10), PoseLayout::Absolute, 16, 0).unwrap();
        assert!(ts.velocities[0].iter().all(|v| *v == Vec3::zeros()));
        assert_eq!(&ts.poses[0][0][..3], &[0.0, 0.0, 0.0]);
        assert_eq!(ts.masks[0].iter().sum::<f64>(), 10.0);
        assert_eq!(ts.poses[0][15], ts.poses[0][9]);
    }

    #[test]
    fn root_centered_layout_zeroes_every_root() {
        let ds = synthesize(&SynthSpec {
            clips_per_action: 2,
            ..SynthSpec::default()
        })
        .unwrap();
        let ts = to_training_tensors(&ds, PoseLayout::RootCentered, 16, 0).unwrap();
        for clip in &ts.poses {
            for f in clip {
                assert_eq!(&f[..3], &[0.0, 0.0, 0.0]);
            }
        }
    }

    #[test]
    fn windows_are_seed_deterministic() {
        let ds = synthesize(&SynthSpec {
            clips_per_action: 3,
            frames: 30,
            ..SynthSpec::default()
        })
        .unwrap();
        let a = to_training_tensors(&ds, PoseLayout::Absolute, 16, 5).unwrap();
        let b = to_training_tensors(&ds, PoseLayout::Absolute, 16, 5).unwrap();
        assert_eq!(a, b);
    }
}
