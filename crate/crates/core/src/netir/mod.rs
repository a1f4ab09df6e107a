//! Typed computation-graph IR for CNNs.
//!
//! A [`NetworkGraph`] is an ordered list of [`LayerNode`]s in topological
//! order. Graphs are values: every operation returns a new graph.

mod builder;
mod graph;
mod residual;
mod shape;
mod stages;
mod validate;

pub use builder::{build_architecture, ArchitectureSpec, Family};
pub use graph::{GraphMetadata, LayerKind, LayerNode, NetworkGraph, StageId, StageTag};
pub use residual::strip_residuals;
pub use shape::{Scale, TensorShape};
pub use stages::{apply_tags, stage_view, StageView, MAX_STAGES, MIN_STAGES};
pub use validate::{validate, ValidationReport, Violation};

/// Infers shapes on a copy of `g`.
pub fn infer_shapes(g: &NetworkGraph) -> crate::Result<NetworkGraph> {
    let mut out = g.clone();
    out.infer_shapes()?;
    Ok(out)
}
