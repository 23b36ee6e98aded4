//! Skeletal kinematics on the rotation group.
//!
//! A pose is a root placement plus one axis-angle vector per bone. Bones
//! point along the local +x axis of their frame, so forward kinematics is a
//! running product of exponentials applied to `(length, 0, 0)`.

mod kinematics;
mod skeleton;
pub mod so3;

pub use kinematics::{
    absolute_from_relative, forward_kinematics, forward_kinematics_with_lengths, joints_to_lie,
    relative_from_absolute, root_trajectory, JointPose, LieMotion, LiePose, RootTrajectoryMode,
};
pub use skeleton::{Bone, KinematicTree, SkeletonSpec};
pub use so3::{clamp_lie_norm, exp_so3, hat, log_so3, Mat3, Rotation, Vec3};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LieError {
    #[error("rotation angle is within 1e-3 of pi; axis-extraction estimate {approx:?} is low precision")]
    AngleNearPi { approx: [f64; 3] },
    #[error("matrix is not a rotation (orthogonality error {ortho:e}, det {det})")]
    NotARotation { ortho: f64, det: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("bone {bone} has coincident endpoints in every frame")]
    DegenerateBone { bone: usize },
    #[error("motion has no frames")]
    EmptyMotion,
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
}
