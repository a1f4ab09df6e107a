//! Exact ReLU, FLOP and parameter accounting.
//!
//! FLOPs are counted as multiply-accumulates: one MAC is one FLOP. Conv and
//! fully-connected layers contribute their MACs; batch-norm, ReLU, pooling
//! and residual adds contribute one FLOP per output element.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netir::{stage_view, LayerKind, LayerNode, NetworkGraph, StageId, StageTag};

pub const FLOP_CONVENTION: &str = "1 FLOP = 1 multiply-accumulate";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Relu,
    Flops,
    Params,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountReport {
    pub metric: Metric,
    pub per_layer: Vec<(String, u64)>,
    pub per_stage: Vec<(StageId, u64)>,
    /// Count in the separate Conv1 partition (zero when Conv1 is part of S1).
    pub conv1: u64,
    pub classifier: u64,
    pub total: u64,
}

impl CountReport {
    pub fn stage(&self, s: StageId) -> u64 {
        self.per_stage.iter().find(|(id, _)| *id == s).map_or(0, |(_, c)| *c)
    }

    pub fn layer(&self, id: &str) -> Option<u64> {
        self.per_layer.iter().find(|(n, _)| n == id).map(|(_, c)| *c)
    }
}

fn input_shapes(g: &NetworkGraph, node: &LayerNode) -> Result<Vec<crate::netir::TensorShape>> {
    node.inputs
        .iter()
        .map(|i| g.node(i).ok_or_else(|| Error::shape(&node.id, format!("dangling input `{i}`")))?.shape())
        .collect()
}

pub fn node_relus(node: &LayerNode) -> Result<u64> {
    Ok(if node.kind.is_relu() { node.shape()?.numel() as u64 } else { 0 })
}

pub fn node_flops(g: &NetworkGraph, node: &LayerNode) -> Result<u64> {
    let out = node.shape()?;
    let elems = out.numel() as u64;
    Ok(match &node.kind {
        LayerKind::Input | LayerKind::Flatten => 0,
        LayerKind::Conv2d { kernel, groups, .. } => {
            let x = input_shapes(g, node)?[0];
            elems * (x.channels / groups) as u64 * (kernel * kernel) as u64
        }
        LayerKind::FullyConnected { out_features, .. } => {
            let x = input_shapes(g, node)?[0];
            x.numel() as u64 * *out_features as u64
        }
        LayerKind::BatchNorm
        | LayerKind::Relu
        | LayerKind::MaxPool { .. }
        | LayerKind::AvgPool { .. }
        | LayerKind::GlobalAvgPool
        | LayerKind::Add => elems,
    })
}

pub fn node_params(g: &NetworkGraph, node: &LayerNode) -> Result<u64> {
    let out = node.shape()?;
    Ok(match &node.kind {
        LayerKind::Conv2d { out_channels, kernel, groups, bias, .. } => {
            let x = input_shapes(g, node)?[0];
            let w = (out_channels * (x.channels / groups) * kernel * kernel) as u64;
            w + if *bias { *out_channels as u64 } else { 0 }
        }
        LayerKind::BatchNorm => 2 * out.channels as u64,
        LayerKind::FullyConnected { out_features, bias } => {
            let x = input_shapes(g, node)?[0];
            x.numel() as u64 * *out_features as u64 + if *bias { *out_features as u64 } else { 0 }
        }
        _ => 0,
    })
}

fn count(g: &NetworkGraph, metric: Metric) -> Result<CountReport> {
    let mut per_layer = Vec::with_capacity(g.nodes.len());
    for node in &g.nodes {
        let c = match metric {
            Metric::Relu => node_relus(node)?,
            Metric::Flops => node_flops(g, node)?,
            Metric::Params => node_params(g, node)?,
        };
        per_layer.push((node.id.clone(), c));
    }
    let total = per_layer.iter().map(|(_, c)| c).sum();

    // Staged breakdown is best-effort: graphs without a stage partition
    // still get per-layer counts.
    let (per_stage, conv1, classifier) = match stage_view(g) {
        Ok(view) => {
            let by_id: HashMap<&str, u64> = per_layer.iter().map(|(id, c)| (id.as_str(), *c)).collect();
            let sum = |ids: &[String]| ids.iter().map(|i| by_id[i.as_str()]).sum::<u64>();
            (
                view.stages.iter().map(|(s, ids)| (*s, sum(ids))).collect(),
                sum(&view.conv1_nodes),
                sum(&view.classifier_nodes),
            )
        }
        Err(_) => (Vec::new(), 0, 0),
    };
    Ok(CountReport { metric, per_layer, per_stage, conv1, classifier, total })
}

pub fn count_relus(g: &NetworkGraph) -> Result<CountReport> {
    count(g, Metric::Relu)
}

pub fn count_flops(g: &NetworkGraph) -> Result<CountReport> {
    count(g, Metric::Flops)
}

pub fn count_params(g: &NetworkGraph) -> Result<CountReport> {
    count(g, Metric::Params)
}

/// Total ReLU count, the quantity every reduction pass optimizes.
pub fn relu_total(g: &NetworkGraph) -> Result<u64> {
    g.nodes.iter().map(node_relus).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerShare {
    pub layer: String,
    pub relu_pct: f64,
    pub flops_pct: f64,
    pub params_pct: f64,
}

/// Per-layer percentage breakdown. A "layer" is a conv or fully-connected
/// node together with the parameter-free nodes (BN, ReLU, add, pooling)
/// that follow it on its first input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub per_layer_percent: Vec<LayerShare>,
}

pub fn distribution_report(g: &NetworkGraph) -> Result<DistributionReport> {
    let relus = count_relus(g)?;
    let flops = count_flops(g)?;
    let params = count_params(g)?;
    for (name, r) in [("relu", &relus), ("flops", &flops), ("params", &params)] {
        if r.total == 0 {
            return Err(Error::InvalidGraph(format!("metric {name} is zero for the whole graph")));
        }
    }

    let mut leader: HashMap<&str, &str> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    let mut sums: HashMap<&str, [u64; 3]> = HashMap::new();
    for (i, node) in g.nodes.iter().enumerate() {
        let owner = match node.kind {
            LayerKind::Conv2d { .. } | LayerKind::FullyConnected { .. } => {
                order.push(&node.id);
                node.id.as_str()
            }
            _ => match node.inputs.first() {
                Some(first) => leader.get(first.as_str()).copied().unwrap_or(&node.id),
                None => node.id.as_str(),
            },
        };
        leader.insert(&node.id, owner);
        let e = sums.entry(owner).or_insert([0; 3]);
        e[0] += relus.per_layer[i].1;
        e[1] += flops.per_layer[i].1;
        e[2] += params.per_layer[i].1;
    }
    // nodes before the first parametric layer (input) carry nothing
    let pct = |v: u64, t: u64| 100.0 * v as f64 / t as f64;
    let per_layer_percent = order
        .into_iter()
        .map(|id| {
            let s = sums[id];
            LayerShare {
                layer: id.to_string(),
                relu_pct: pct(s[0], relus.total),
                flops_pct: pct(s[1], flops.total),
                params_pct: pct(s[2], params.total),
            }
        })
        .collect();
    Ok(DistributionReport { per_layer_percent })
}

/// CSV rows `node_id,kind,stage,relus,flops,params` with a trailing total row.
pub fn layer_csv(g: &NetworkGraph) -> Result<String> {
    let relus = count_relus(g)?;
    let flops = count_flops(g)?;
    let params = count_params(g)?;
    let mut out = String::from("node_id,kind,stage,relus,flops,params\n");
    for (i, node) in g.nodes.iter().enumerate() {
        let stage = node.stage_tag.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            node.id,
            node.kind.name(),
            stage,
            relus.per_layer[i].1,
            flops.per_layer[i].1,
            params.per_layer[i].1
        );
    }
    let _ = writeln!(out, "total,,,{},{},{}", relus.total, flops.total, params.total);
    Ok(out)
}

/// CSV rows `stage,relus,flops,params,relus_with_classifier`, one per
/// partition plus a total row.
pub fn stage_csv(g: &NetworkGraph) -> Result<String> {
    let relus = count_relus(g)?;
    let flops = count_flops(g)?;
    let params = count_params(g)?;
    let mut out = String::from("stage,relus,flops,params,relus_with_classifier\n");
    let fc_relus = relus.classifier;
    if !g.metadata.conv1_in_s1 {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            StageTag::Conv1,
            relus.conv1,
            flops.conv1,
            params.conv1,
            relus.conv1 + fc_relus
        );
    }
    for (i, (s, r)) in relus.per_stage.iter().enumerate() {
        let _ = writeln!(out, "{s},{r},{},{},{}", flops.per_stage[i].1, params.per_stage[i].1, r + fc_relus);
    }
    let _ = writeln!(
        out,
        "{},{},{},{},{}",
        StageTag::Classifier,
        relus.classifier,
        flops.classifier,
        params.classifier,
        relus.classifier
    );
    let _ = writeln!(out, "total,{},{},{},{}", relus.total, flops.total, params.total, relus.total);
    Ok(out)
}

/// CSV rows `layer,relu_pct,flops_pct,params_pct`.
pub fn distribution_csv(report: &DistributionReport) -> String {
    let mut out = String::from("layer,relu_pct,flops_pct,params_pct\n");
    for s in &report.per_layer_percent {
        let _ = writeln!(out, "{},{:.6},{:.6},{:.6}", s.layer, s.relu_pct, s.flops_pct, s.params_pct);
    }
    out
}
