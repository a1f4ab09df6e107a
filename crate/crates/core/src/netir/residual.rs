use std::collections::HashSet;

use super::graph::{LayerKind, NetworkGraph};
use crate::error::{Error, Result};

/// Removes every residual `Add`, wiring its consumers to the main-path
/// operand. Projection shortcuts that become unreachable are dropped.
pub fn strip_residuals(g: &NetworkGraph) -> Result<NetworkGraph> {
    let adds: Vec<&str> = g.nodes.iter().filter(|n| n.kind == LayerKind::Add).map(|n| n.id.as_str()).collect();
    if adds.is_empty() {
        return Ok(g.clone());
    }
    let shortcut = g.shortcut_nodes();
    let output = g.output_id()?.to_string();
    let mut out = g.clone();
    for node in &mut out.nodes {
        if node.kind == LayerKind::Add {
            // keep the main path operand, it becomes the single input of a
            // pass-through that bypass_nodes removes below
            let main = if shortcut.contains(node.inputs[0].as_str()) {
                node.inputs[1].clone()
            } else {
                node.inputs[0].clone()
            };
            node.inputs = vec![main];
        }
    }
    let ids: HashSet<String> = adds.iter().map(|s| s.to_string()).collect();
    if ids.contains(&output) {
        return Err(Error::InvalidGraph("output node is a residual add".into()));
    }
    out.bypass_nodes(&ids)?;
    out.prune_unreachable(&output);
    out.infer_shapes()?;
    out.record("strip_residuals");
    Ok(out)
}
