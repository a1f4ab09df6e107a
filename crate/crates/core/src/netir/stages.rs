use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::{LayerKind, NetworkGraph, StageId, StageTag};
use crate::error::{Error, Result};

pub const MIN_STAGES: usize = 3;
pub const MAX_STAGES: usize = 5;

/// Partition of a graph into Conv1, stages S1..SD and the classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageView {
    pub conv1_nodes: Vec<String>,
    pub stages: Vec<(StageId, Vec<String>)>,
    pub classifier_nodes: Vec<String>,
}

impl StageView {
    pub fn depth(&self) -> usize {
        self.stages.len()
    }

    pub fn stage_ids(&self) -> Vec<StageId> {
        self.stages.iter().map(|(s, _)| *s).collect()
    }

    pub fn nodes_of(&self, stage: StageId) -> Option<&[String]> {
        self.stages.iter().find(|(s, _)| *s == stage).map(|(_, n)| n.as_slice())
    }

    pub fn contains(&self, stage: StageId) -> bool {
        self.stages.iter().any(|(s, _)| *s == stage)
    }
}

/// Returns the stage partition, from node tags when every node is tagged and
/// otherwise derived from feature-map resolution.
pub fn stage_view(g: &NetworkGraph) -> Result<StageView> {
    let view = if g.nodes.iter().all(|n| n.stage_tag.is_some()) { from_tags(g) } else { derive(g)? };
    let d = view.depth();
    if !(MIN_STAGES..=MAX_STAGES).contains(&d) {
        return Err(Error::Stage(format!("{d} stages found, expected {MIN_STAGES}..={MAX_STAGES}")));
    }
    Ok(view)
}

fn from_tags(g: &NetworkGraph) -> StageView {
    let mut conv1 = Vec::new();
    let mut classifier = Vec::new();
    let mut stages: BTreeMap<StageId, Vec<String>> = BTreeMap::new();
    for n in &g.nodes {
        match n.stage_tag.expect("all tagged") {
            StageTag::Conv1 => conv1.push(n.id.clone()),
            StageTag::Classifier => classifier.push(n.id.clone()),
            StageTag::Stage(s) => stages.entry(s).or_default().push(n.id.clone()),
        }
    }
    StageView { conv1_nodes: conv1, stages: stages.into_iter().collect(), classifier_nodes: classifier }
}

/// Untagged graphs: everything up to and including the first conv's
/// activation is Conv1, everything from the first spatially-collapsing node
/// is the classifier, the rest is grouped by spatial resolution.
fn derive(g: &NetworkGraph) -> Result<StageView> {
    let first_conv = g
        .nodes
        .iter()
        .position(|n| n.kind.is_conv())
        .ok_or_else(|| Error::Stage("no convolution to anchor Conv1".into()))?;
    let mut conv1_end = first_conv;
    for (i, n) in g.nodes.iter().enumerate().skip(first_conv + 1) {
        match n.kind {
            LayerKind::BatchNorm | LayerKind::Relu => conv1_end = i,
            _ => break,
        }
    }
    let head = g
        .nodes
        .iter()
        .position(|n| {
            matches!(n.kind, LayerKind::GlobalAvgPool | LayerKind::Flatten | LayerKind::FullyConnected { .. })
        })
        .unwrap_or(g.nodes.len());
    let mut conv1 = Vec::new();
    let mut classifier = Vec::new();
    let mut groups: Vec<(usize, Vec<String>)> = Vec::new();
    for (i, n) in g.nodes.iter().enumerate() {
        if let Some(tag) = n.stage_tag {
            return Err(Error::Stage(format!(
                "partially tagged graph: `{}` has tag {tag} but others are untagged",
                n.id
            )));
        }
        if i <= conv1_end {
            conv1.push(n.id.clone());
        } else if i >= head {
            classifier.push(n.id.clone());
        } else {
            let res = n.shape()?.spatial();
            match groups.iter_mut().find(|(r, _)| *r == res) {
                Some((_, ids)) => ids.push(n.id.clone()),
                None => {
                    if groups.last().is_some_and(|(r, _)| res > *r) {
                        return Err(Error::Stage(format!(
                            "resolution increases at `{}`; no derivable stage boundary",
                            n.id
                        )));
                    }
                    groups.push((res, vec![n.id.clone()]));
                }
            }
        }
    }
    Ok(StageView {
        conv1_nodes: conv1,
        stages: groups.into_iter().enumerate().map(|(i, (_, ids))| (StageId(i as u8 + 1), ids)).collect(),
        classifier_nodes: classifier,
    })
}

/// Writes the stage tags of `view` back into the graph.
pub fn apply_tags(g: &mut NetworkGraph, view: &StageView) {
    let mut tags = std::collections::HashMap::new();
    for id in &view.conv1_nodes {
        tags.insert(id.as_str(), StageTag::Conv1);
    }
    for (s, ids) in &view.stages {
        for id in ids {
            tags.insert(id.as_str(), StageTag::Stage(*s));
        }
    }
    for id in &view.classifier_nodes {
        tags.insert(id.as_str(), StageTag::Classifier);
    }
    let tags: std::collections::HashMap<String, StageTag> = tags.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    for n in &mut g.nodes {
        n.stage_tag = tags.get(&n.id).copied();
    }
}
