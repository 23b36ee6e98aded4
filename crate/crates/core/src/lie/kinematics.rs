//! Forward kinematics and the joints ⇄ Lie-algebra conversion.

use serde::{Deserialize, Serialize};

use super::so3::{exp_so3, minimal_rotation_from_x, Rotation, Vec3};
use super::{KinematicTree, LieError};

/// Body pose in Lie-algebraic form: global orientation and position of the
/// root plus one so(3) vector per bone (chain order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiePose {
    pub root_orientation: Vec3,
    pub root_position: Vec3,
    pub lie: Vec<Vec3>,
}

impl LiePose {
    pub fn rest(bones: usize) -> Self {
        LiePose {
            root_orientation: Vec3::zeros(),
            root_position: Vec3::zeros(),
            lie: vec![Vec3::zeros(); bones],
        }
    }
}

/// 3D joint coordinates in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPose {
    pub joints: Vec<Vec3>,
}

impl JointPose {
    pub fn new(joints: Vec<Vec3>) -> Self {
        JointPose { joints }
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self, LieError> {
        if !flat.len().is_multiple_of(3) {
            return Err(LieError::DimensionMismatch {
                expected: flat.len() / 3 * 3,
                got: flat.len(),
            });
        }
        Ok(JointPose {
            joints: flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect(),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|j| [j.x, j.y, j.z]).collect()
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn translated(&self, offset: &Vec3) -> JointPose {
        JointPose {
            joints: self.joints.iter().map(|j| j + offset).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().all(|j| j.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RootTrajectoryMode {
    Absolute,
    #[default]
    Relative,
}

/// A motion as Lie poses over time with fixed bone lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LieMotion {
    pub frames: Vec<LiePose>,
    pub bone_lengths: Vec<f64>,
    pub root_trajectory_mode: RootTrajectoryMode,
}

impl LieMotion {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Joint positions of every frame, using this motion's bone lengths.
    pub fn joints(&self, tree: &KinematicTree) -> Result<Vec<JointPose>, LieError> {
        self.frames
            .iter()
            .map(|f| forward_kinematics_with_lengths(tree, &self.bone_lengths, f))
            .collect()
    }
}

/// World position of every joint; `d_i = (b_i, 0, 0)` is rotated by the
/// accumulated product of exponentials from the root down to bone `i`.
pub fn forward_kinematics(tree: &KinematicTree, pose: &LiePose) -> Result<JointPose, LieError> {
    forward_kinematics_with_lengths(tree, tree.bone_lengths(), pose)
}

/// [`forward_kinematics`] with caller-supplied bone lengths (may be zero).
pub fn forward_kinematics_with_lengths(
    tree: &KinematicTree,
    lengths: &[f64],
    pose: &LiePose,
) -> Result<JointPose, LieError> {
    if pose.lie.len() != tree.bone_count() {
        return Err(LieError::DimensionMismatch {
            expected: tree.bone_count(),
            got: pose.lie.len(),
        });
    }
    if lengths.len() != tree.bone_count() {
        return Err(LieError::DimensionMismatch {
            expected: tree.bone_count(),
            got: lengths.len(),
        });
    }
    let n = tree.joint_count();
    let mut rot = vec![Rotation::identity(); n];
    let mut pos = vec![Vec3::zeros(); n];
    rot[tree.root()] = exp_so3(&pose.root_orientation);
    pos[tree.root()] = pose.root_position;
    for (i, bone) in tree.bones().iter().enumerate() {
        let r = rot[bone.parent].compose(&exp_so3(&pose.lie[i]));
        pos[bone.child] = pos[bone.parent] + r.matrix().column(0) * lengths[i];
        rot[bone.child] = r;
    }
    Ok(JointPose { joints: pos })
}

/// Converts joint trajectories into the Lie representation.
///
/// Each bone gets the twist-free minimal rotation between its parent bone's
/// frame and its own direction; the root orientation is the identity, so any
/// global orientation lands in the first bone of each root chain. Bone lengths
/// are the per-sequence mean of measured lengths.
pub fn joints_to_lie(tree: &KinematicTree, frames: &[JointPose]) -> Result<LieMotion, LieError> {
    if frames.is_empty() {
        return Err(LieError::EmptyMotion);
    }
    for f in frames {
        if f.len() != tree.joint_count() {
            return Err(LieError::DimensionMismatch {
                expected: tree.joint_count(),
                got: f.len(),
            });
        }
    }
    let bones = tree.bones();
    let mut lengths = vec![0.0; bones.len()];
    for (i, b) in bones.iter().enumerate() {
        let total: f64 = frames
            .iter()
            .map(|f| (f.joints[b.child] - f.joints[b.parent]).norm())
            .sum();
        lengths[i] = total / frames.len() as f64;
        if lengths[i] == 0.0 {
            return Err(LieError::DegenerateBone { bone: i });
        }
    }

    let n = tree.joint_count();
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        let mut rot = vec![Rotation::identity(); n];
        let mut lie = vec![Vec3::zeros(); bones.len()];
        for (i, b) in bones.iter().enumerate() {
            let d = f.joints[b.child] - f.joints[b.parent];
            let len = d.norm();
            // coincident joints in this frame: inherit the parent frame
            let w = if len > 0.0 {
                let local = rot[b.parent].transpose().apply(&(d / len));
                minimal_rotation_from_x(&local)
            } else {
                Vec3::zeros()
            };
            rot[b.child] = rot[b.parent].compose(&exp_so3(&w));
            lie[i] = w;
        }
        out.push(LiePose {
            root_orientation: Vec3::zeros(),
            root_position: f.joints[tree.root()],
            lie,
        });
    }
    Ok(LieMotion {
        frames: out,
        bone_lengths: lengths,
        root_trajectory_mode: RootTrajectoryMode::default(),
    })
}

/// Root locations (`Absolute`) or frame-to-frame root displacements
/// (`Relative`, first entry zero).
pub fn root_trajectory(motion: &LieMotion, mode: RootTrajectoryMode) -> Vec<Vec3> {
    let abs: Vec<Vec3> = motion.frames.iter().map(|f| f.root_position).collect();
    match mode {
        RootTrajectoryMode::Absolute => abs,
        RootTrajectoryMode::Relative => relative_from_absolute(&abs),
    }
}

pub fn relative_from_absolute(abs: &[Vec3]) -> Vec<Vec3> {
    let mut rel = Vec::with_capacity(abs.len());
    for (t, p) in abs.iter().enumerate() {
        rel.push(if t == 0 { Vec3::zeros() } else { p - abs[t - 1] });
    }
    rel
}

/// Inverse of [`relative_from_absolute`] given the first root location.
pub fn absolute_from_relative(first: &Vec3, rel: &[Vec3]) -> Vec<Vec3> {
    let mut acc = *first;
    rel.iter()
        .enumerate()
        .map(|(t, v)| {
            if t > 0 {
                acc += v;
            }
            acc
        })
        .collect()
}
