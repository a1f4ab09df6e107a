//! Graph rewrites that remove ReLUs, and inference-time linear merging.

mod equivalence;
mod merge;
mod reduce;

pub use equivalence::{equivalence_check, EquivalenceReport};
pub use merge::{conv_count, fold_bn, merge_adjacent_linear};
pub use reduce::{apply_step, cull, default_thin_rule, reshape, thin, ReduceStep, ThinRule};

use crate::engine::{Model, Scalar};
use crate::error::Result;

/// Result of folding and merging a model for inference.
#[derive(Debug, Clone)]
pub struct MergeOutcome<T> {
    pub model: Model<T>,
    pub convs_before: usize,
    pub convs_after: usize,
}

/// `fold_bn` followed by `merge_adjacent_linear`.
pub fn merge_for_inference<T: Scalar>(model: &Model<T>) -> Result<MergeOutcome<T>> {
    let (g, w) = fold_bn(&model.graph, &model.params)?;
    let (g, w) = merge_adjacent_linear(&g, &w)?;
    Ok(MergeOutcome { convs_before: conv_count(&model.graph), convs_after: conv_count(&g), model: Model::new(g, w)? })
}
