//! Mesh-side solvers for driving a textured body surface with a skeleton
//! motion: occluded-texture blending, skinned-template fitting, displacement
//! correspondences and as-rigid-as-possible reposing.

mod animate;
mod arap;
mod blend;
mod correspond;
mod fit;
mod gmm;
mod mesh;
mod robust;
mod template;

pub use animate::{animate_mesh, retarget, AnimateConfig};
pub use arap::{arap_deform, kabsch, ArapConfig, ArapResult, NeighborWeights};
pub use blend::{blend_occluded_texture, BlendConfig, BlendProblem, BlendResult};
pub use correspond::{build_correspondences, repose_targets, Correspondence, CorrespondenceSet};
pub use fit::{fit_skinned_template, fit_terms, FitConfig, FitResult, FitTerms};
pub use gmm::GaussianMixturePrior;
pub use mesh::{EdgeGraph, TriMesh};
pub use robust::{geman_mcclure, geman_mcclure_grad, DEFAULT_SIGMA};
pub use template::{PoseParams, SkinnedTemplate};

use crate::autodiff::AutodiffError;
use crate::lie::LieError;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io: {0}")]
    Io(String),
    #[error("linear system is singular: {0}")]
    SingularSystem(String),
    #[error("no correspondences survived filtering")]
    EmptyResult,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
