//! Differentiable 2D particle fluid with articulated tools.
//!
//! A design vector is rendered into a [`Scene`] by [`build_scene`]; [`rollout`]
//! advances it with smooth analytic dynamics. [`RolloutTape`] keeps the
//! substep checkpoints needed to pull a cotangent on the final state back to
//! the design.

mod dynamics;
mod rollout;
mod scene;
mod task;

pub use dynamics::{
    contact_candidates, interaction_lists, neighbor_pairs, substep, substep_graph, InteractionLists, SegmentArrays,
    SegmentVars, SimConfig, StateVars,
};
pub use rollout::{design_vjp, rollout, rollout_steps, step, Rollout, RolloutTape};
pub use scene::{
    build_scene, tool_segments_graph, tool_vertices, ParticleState, Scene, Segment, SegmentKind, ToolSegmentVars,
};
pub use task::{AnchorRange, Rect, TaskKind, TaskSpec, FLUID_SPACING};

use adcore::AdError;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error("design has length {got}, task expects {expected}")]
    DesignLength { expected: usize, got: usize },
    #[error("non-finite particle state at step {step}")]
    NonFinite { step: usize },
    #[error("cotangent shape does not match the rollout")]
    CotangentShape,
    #[error(transparent)]
    Ad(#[from] AdError),
}
