use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netir::{stage_view, LayerKind, NetworkGraph, Scale, StageId, StageView, TensorShape};

/// Which ReLU layers survive thinning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThinRule {
    /// Keep layers 1, 3, 5, ... (1-based) of each stage's ReLU list.
    #[default]
    KeepOdd,
    /// Keep layers 2, 4, 6, ...
    KeepEven,
    /// Drop the ReLU that follows each depthwise conv, keep the others.
    DropDepthwise,
}

impl fmt::Display for ThinRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThinRule::KeepOdd => "keep-odd",
            ThinRule::KeepEven => "keep-even",
            ThinRule::DropDepthwise => "drop-depthwise",
        })
    }
}

impl FromStr for ThinRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "keep-odd" | "odd" => Ok(ThinRule::KeepOdd),
            "keep-even" | "even" => Ok(ThinRule::KeepEven),
            "drop-depthwise" | "depthwise" => Ok(ThinRule::DropDepthwise),
            other => Err(Error::Config(format!("unknown thinning rule `{other}`"))),
        }
    }
}

/// Default thinning rule for a graph: depthwise-separable networks drop the
/// depthwise ReLUs, everything else alternates.
pub fn default_thin_rule(g: &NetworkGraph) -> ThinRule {
    match g.metadata.family {
        Some(crate::netir::Family::MobileNetV1) => ThinRule::DropDepthwise,
        _ => ThinRule::KeepOdd,
    }
}

/// One point of the reduction grid: which stages lose all ReLUs, which lose
/// alternate ReLUs, and how the result is reshaped.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReduceStep {
    #[serde(default)]
    pub culled: BTreeSet<StageId>,
    #[serde(default)]
    pub thinned: BTreeSet<StageId>,
    #[serde(default)]
    pub parity: ThinRule,
    #[serde(default)]
    pub alpha: Scale,
    #[serde(default)]
    pub rho: Scale,
}

impl Default for ReduceStep {
    fn default() -> Self {
        Self {
            culled: BTreeSet::new(),
            thinned: BTreeSet::new(),
            parity: ThinRule::KeepOdd,
            alpha: Scale::ONE,
            rho: Scale::ONE,
        }
    }
}

impl ReduceStep {
    pub fn check(&self) -> Result<()> {
        if let Some(s) = self.culled.intersection(&self.thinned).next() {
            return Err(Error::Config(format!("stage {s} is both culled and thinned")));
        }
        Ok(())
    }

    /// Stage list as written in reports, e.g. `S1+S4`.
    pub fn stage_list(stages: &BTreeSet<StageId>) -> String {
        stages.iter().map(ToString::to_string).collect::<Vec<_>>().join("+")
    }
}

fn check_stages(view: &StageView, stages: &BTreeSet<StageId>) -> Result<()> {
    match stages.iter().find(|s| !view.contains(**s)) {
        Some(s) => Err(Error::UnknownStage(format!("{s} (graph has {} stages)", view.depth()))),
        None => Ok(()),
    }
}

fn relus_of<'a>(g: &'a NetworkGraph, ids: &[String]) -> Vec<&'a str> {
    let set: HashSet<&str> = ids.iter().map(String::as_str).collect();
    g.nodes.iter().filter(|n| n.kind.is_relu() && set.contains(n.id.as_str())).map(|n| n.id.as_str()).collect()
}

fn remove(g: &NetworkGraph, ids: HashSet<String>, entry: String) -> Result<NetworkGraph> {
    let mut out = g.clone();
    out.bypass_nodes(&ids)?;
    out.record(entry);
    Ok(out)
}

/// Removes every ReLU in `stages`. The Conv1 ReLU goes too whenever Conv1 is
/// its own partition.
pub fn cull(g: &NetworkGraph, stages: &BTreeSet<StageId>) -> Result<NetworkGraph> {
    let view = stage_view(g)?;
    check_stages(&view, stages)?;
    let mut ids: HashSet<String> = relus_of(g, &view.conv1_nodes).into_iter().map(str::to_string).collect();
    for s in stages {
        let nodes = view.nodes_of(*s).expect("checked");
        ids.extend(relus_of(g, nodes).into_iter().map(str::to_string));
    }
    remove(g, ids, format!("cull {}", ReduceStep::stage_list(stages)))
}

fn follows_depthwise(g: &NetworkGraph, relu: &str) -> bool {
    let mut cur = g.node(relu).expect("relu exists");
    loop {
        let Some(src) = cur.inputs.first().and_then(|i| g.node(i)) else {
            return false;
        };
        match src.kind {
            LayerKind::BatchNorm => cur = src,
            LayerKind::Conv2d { groups, out_channels, .. } => return groups > 1 && groups == out_channels,
            _ => return false,
        }
    }
}

/// Drops alternate ReLU layers inside each listed stage.
pub fn thin(g: &NetworkGraph, stages: &BTreeSet<StageId>, rule: ThinRule) -> Result<NetworkGraph> {
    let view = stage_view(g)?;
    check_stages(&view, stages)?;
    let mut ids = HashSet::new();
    for s in stages {
        let relus = relus_of(g, view.nodes_of(*s).expect("checked"));
        for (i, id) in relus.iter().enumerate() {
            let drop = match rule {
                ThinRule::KeepOdd => i % 2 == 1,
                ThinRule::KeepEven => i % 2 == 0,
                ThinRule::DropDepthwise => follows_depthwise(g, id),
            };
            if drop {
                ids.insert(id.to_string());
            }
        }
    }
    remove(g, ids, format!("thin {} {rule}", ReduceStep::stage_list(stages)))
}

/// Scales every conv and hidden fully-connected width by `alpha` and the
/// input resolution by `rho`, then re-infers shapes.
pub fn reshape(g: &NetworkGraph, alpha: Scale, rho: Scale) -> Result<NetworkGraph> {
    if alpha.is_one() && rho.is_one() {
        return Ok(g.clone());
    }
    let output = g.output_id()?.to_string();
    let mut out = g.clone();
    out.input_shape = TensorShape::new(
        g.input_shape.channels,
        rho.scale_spatial(g.input_shape.height),
        rho.scale_spatial(g.input_shape.width),
    )?;
    for (node, orig) in out.nodes.iter_mut().zip(&g.nodes) {
        match &mut node.kind {
            LayerKind::Conv2d { out_channels, groups, .. } => {
                let in_ch =
                    g.node(&orig.inputs[0]).ok_or_else(|| Error::shape(&orig.id, "dangling input"))?.shape()?.channels;
                let depthwise = *groups > 1 && *groups == in_ch;
                *out_channels = alpha.scale_channels(*out_channels);
                if depthwise {
                    *groups = *out_channels;
                } else if *groups > 1 {
                    return Err(Error::pass("reshape", format!("grouped conv `{}` cannot be channel-scaled", orig.id)));
                }
            }
            LayerKind::FullyConnected { out_features, .. } if orig.id != output => {
                *out_features = alpha.scale_channels(*out_features);
            }
            _ => {}
        }
    }
    out.infer_shapes().map_err(|e| Error::pass("reshape", e.to_string()))?;
    out.record(format!("reshape alpha={alpha} rho={rho}"));
    Ok(out)
}

/// Cull, then thin, then reshape.
pub fn apply_step(g: &NetworkGraph, step: &ReduceStep) -> Result<NetworkGraph> {
    step.check()?;
    let culled = cull(g, &step.culled)?;
    let thinned = if step.thinned.is_empty() { culled } else { thin(&culled, &step.thinned, step.parity)? };
    reshape(&thinned, step.alpha, step.rho)
}
