//! Action-conditioned human motion synthesis with a Lie-algebraic temporal
//! VAE, the metrics used to evaluate it, and the mesh solvers that turn a
//! generated skeleton motion into an animated textured surface.

pub mod autodiff;
pub mod datasets;
pub mod geometry;
pub mod lie;
pub mod metrics;
pub mod tvae;
