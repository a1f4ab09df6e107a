use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::builder::Family;
use super::shape::TensorShape;
use crate::error::{Error, Result};

/// 1-based stage index (`S1`, `S2`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StageId(pub u8);

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.0)
    }
}

impl FromStr for StageId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let digits = t.strip_prefix('S').or_else(|| t.strip_prefix('s')).unwrap_or(t);
        match digits.parse::<u8>() {
            Ok(k) if k >= 1 => Ok(StageId(k)),
            _ => Err(Error::UnknownStage(s.to_string())),
        }
    }
}

impl Serialize for StageId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StageId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which partition of the network hierarchy a node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StageTag {
    Conv1,
    Stage(StageId),
    Classifier,
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageTag::Conv1 => f.write_str("conv1"),
            StageTag::Stage(s) => write!(f, "{s}"),
            StageTag::Classifier => f.write_str("classifier"),
        }
    }
}

impl FromStr for StageTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "conv1" => Ok(StageTag::Conv1),
            "classifier" | "fc" => Ok(StageTag::Classifier),
            _ => s.parse().map(StageTag::Stage),
        }
    }
}

impl Serialize for StageTag {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StageTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        #[serde(default)]
        bias: bool,
    },
    BatchNorm,
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    /// Average over the whole spatial extent; output is `C x 1 x 1`.
    GlobalAvgPool,
    Flatten,
    FullyConnected {
        out_features: usize,
        #[serde(default)]
        bias: bool,
    },
    Add,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input => "input",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::BatchNorm => "batch_norm",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool { .. } => "max_pool",
            LayerKind::AvgPool { .. } => "avg_pool",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::Flatten => "flatten",
            LayerKind::FullyConnected { .. } => "fully_connected",
            LayerKind::Add => "add",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            LayerKind::Input => 0,
            LayerKind::Add => 2,
            _ => 1,
        }
    }

    pub fn is_relu(&self) -> bool {
        matches!(self, LayerKind::Relu)
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerKind::Conv2d { .. })
    }

    pub fn is_pool(&self) -> bool {
        matches!(self, LayerKind::MaxPool { .. } | LayerKind::AvgPool { .. } | LayerKind::GlobalAvgPool)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerNode {
    pub id: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
    #[serde(default)]
    pub out_shape: Option<TensorShape>,
    #[serde(default)]
    pub stage_tag: Option<StageTag>,
}

impl LayerNode {
    pub fn new(id: impl Into<String>, kind: LayerKind, inputs: Vec<String>) -> Self {
        Self { id: id.into(), kind, inputs, out_shape: None, stage_tag: None }
    }

    pub fn with_stage(mut self, tag: StageTag) -> Self {
        self.stage_tag = Some(tag);
        self
    }

    pub fn shape(&self) -> Result<TensorShape> {
        self.out_shape.ok_or_else(|| Error::shape(&self.id, "shape not inferred"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMetadata {
    #[serde(default)]
    pub family: Option<Family>,
    /// The stem convolution is reported as part of S1 rather than as a
    /// separate Conv1 partition.
    #[serde(default)]
    pub conv1_in_s1: bool,
    /// Passes applied to produce this graph, oldest first.
    #[serde(default)]
    pub provenance: Vec<String>,
}

/// Layer DAG in topological order. Every pass consumes and returns one of these.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkGraph {
    pub name: String,
    pub input_shape: TensorShape,
    pub num_classes: usize,
    pub nodes: Vec<LayerNode>,
    #[serde(default)]
    pub metadata: GraphMetadata,
}

impl NetworkGraph {
    pub fn new(name: impl Into<String>, input_shape: TensorShape, num_classes: usize) -> Self {
        Self { name: name.into(), input_shape, num_classes, nodes: Vec::new(), metadata: GraphMetadata::default() }
    }

    pub fn index_map(&self) -> HashMap<&str, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect()
    }

    pub fn node(&self, id: &str) -> Option<&LayerNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Ids of nodes that read `id`, in node order.
    pub fn consumers(&self, id: &str) -> Vec<&str> {
        self.nodes.iter().filter(|n| n.inputs.iter().any(|i| i == id)).map(|n| n.id.as_str()).collect()
    }

    /// Nodes nobody consumes. A valid graph has exactly one.
    pub fn sinks(&self) -> Vec<&str> {
        let used: HashSet<&str> = self.nodes.iter().flat_map(|n| n.inputs.iter().map(String::as_str)).collect();
        self.nodes.iter().filter(|n| !used.contains(n.id.as_str())).map(|n| n.id.as_str()).collect()
    }

    pub fn output_id(&self) -> Result<&str> {
        match self.sinks().as_slice() {
            [one] => Ok(one),
            other => Err(Error::InvalidGraph(format!("expected exactly one output node, found {}", other.len()))),
        }
    }

    pub fn output_shape(&self) -> Result<TensorShape> {
        let id = self.output_id()?;
        self.node(id).expect("sink exists").shape()
    }

    pub fn relu_ids(&self) -> Vec<String> {
        self.nodes.iter().filter(|n| n.kind.is_relu()).map(|n| n.id.clone()).collect()
    }

    pub fn count_kind(&self, pred: impl Fn(&LayerKind) -> bool) -> usize {
        self.nodes.iter().filter(|n| pred(&n.kind)).count()
    }

    /// Removes single-input nodes and connects their consumers to the
    /// removed node's input.
    pub(crate) fn bypass_nodes(&mut self, ids: &HashSet<String>) -> Result<()> {
        let mut redirect: HashMap<String, String> = HashMap::new();
        for node in &self.nodes {
            if ids.contains(&node.id) {
                if node.inputs.len() != 1 {
                    return Err(Error::InvalidGraph(format!(
                        "cannot bypass `{}` with {} inputs",
                        node.id,
                        node.inputs.len()
                    )));
                }
                // chains of bypassed nodes resolve to the first surviving ancestor
                let mut src = node.inputs[0].clone();
                while let Some(next) = redirect.get(&src) {
                    src = next.clone();
                }
                redirect.insert(node.id.clone(), src);
            }
        }
        self.nodes.retain(|n| !ids.contains(&n.id));
        for node in &mut self.nodes {
            for input in &mut node.inputs {
                if let Some(src) = redirect.get(input) {
                    *input = src.clone();
                }
            }
        }
        Ok(())
    }

    /// Drops nodes that cannot reach the output.
    pub(crate) fn prune_unreachable(&mut self, output: &str) {
        let index = self.index_map();
        let mut live = vec![false; self.nodes.len()];
        let mut stack = vec![index[output]];
        while let Some(i) = stack.pop() {
            if live[i] {
                continue;
            }
            live[i] = true;
            for input in &self.nodes[i].inputs {
                if let Some(&j) = index.get(input.as_str()) {
                    stack.push(j);
                }
            }
        }
        let mut it = live.into_iter();
        self.nodes.retain(|_| it.next().unwrap_or(false));
    }

    pub(crate) fn record(&mut self, entry: impl Into<String>) {
        self.metadata.provenance.push(entry.into());
    }

    /// Fills every `out_shape` from the input shape and the layer parameters.
    pub fn infer_shapes(&mut self) -> Result<()> {
        let mut shapes: HashMap<String, TensorShape> = HashMap::new();
        for node in &mut self.nodes {
            if node.inputs.len() != node.kind.arity() {
                return Err(Error::shape(
                    &node.id,
                    format!("{} expects {} input(s), has {}", node.kind.name(), node.kind.arity(), node.inputs.len()),
                ));
            }
            let mut ins = Vec::with_capacity(node.inputs.len());
            for input in &node.inputs {
                let s = shapes
                    .get(input)
                    .ok_or_else(|| Error::shape(&node.id, format!("input `{input}` missing or out of order")))?;
                ins.push(*s);
            }
            let out = layer_output_shape(&node.id, &node.kind, &ins, self.input_shape)?;
            node.out_shape = Some(out);
            shapes.insert(node.id.clone(), out);
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("graph", e.to_string()))
    }

    /// Structural equality ignoring provenance.
    pub fn same_structure(&self, other: &NetworkGraph) -> bool {
        self.input_shape == other.input_shape && self.num_classes == other.num_classes && self.nodes == other.nodes
    }

    /// Main-path convolution count: convs on residual shortcut branches are
    /// not counted, matching the usual "#Conv" convention.
    pub fn conv_layer_count(&self) -> usize {
        let shortcut = self.shortcut_nodes();
        self.nodes.iter().filter(|n| n.kind.is_conv() && !shortcut.contains(n.id.as_str())).count()
    }

    /// Single-input, single-consumer chain ending at `start`.
    fn branch<'a>(&'a self, index: &HashMap<&str, usize>, start: &'a str) -> Vec<&'a str> {
        let mut path = Vec::new();
        let mut cur = start;
        loop {
            let n = &self.nodes[index[cur]];
            if self.consumers(cur).len() > 1 || n.inputs.len() != 1 {
                return path;
            }
            path.push(cur);
            cur = &n.inputs[0];
        }
    }

    /// Nodes on the shorter branch of each residual `Add`, walking back from
    /// the add until the branch point.
    pub fn shortcut_nodes(&self) -> HashSet<&str> {
        let index = self.index_map();
        let mut out = HashSet::new();
        for node in self.nodes.iter().filter(|n| n.kind == LayerKind::Add) {
            let a = self.branch(&index, &node.inputs[0]);
            let b = self.branch(&index, &node.inputs[1]);
            let short = if b.len() <= a.len() { b } else { a };
            out.extend(short);
        }
        out
    }
}

pub(crate) fn layer_output_shape(
    id: &str,
    kind: &LayerKind,
    ins: &[TensorShape],
    input_shape: TensorShape,
) -> Result<TensorShape> {
    let positive = |c: usize, h: usize, w: usize| -> Result<TensorShape> {
        if c == 0 || h == 0 || w == 0 {
            Err(Error::shape(id, format!("non-positive dimension {c}x{h}x{w}")))
        } else {
            Ok(TensorShape { channels: c, height: h, width: w })
        }
    };
    let window = |len: usize, k: usize, s: usize, p: usize| -> Result<usize> {
        if k == 0 || s == 0 {
            return Err(Error::shape(id, "kernel and stride must be positive"));
        }
        let padded = len + 2 * p;
        if padded < k {
            return Err(Error::shape(id, format!("kernel {k} exceeds padded extent {padded}")));
        }
        Ok((padded - k) / s + 1)
    };
    match kind {
        LayerKind::Input => Ok(input_shape),
        LayerKind::Conv2d { out_channels, kernel, stride, padding, groups, .. } => {
            let x = ins[0];
            if *groups == 0 || x.channels % groups != 0 || out_channels % groups != 0 {
                return Err(Error::shape(
                    id,
                    format!("groups {groups} must divide in ({}) and out ({out_channels}) channels", x.channels),
                ));
            }
            let h = window(x.height, *kernel, *stride, *padding)?;
            let w = window(x.width, *kernel, *stride, *padding)?;
            positive(*out_channels, h, w)
        }
        LayerKind::BatchNorm | LayerKind::Relu => Ok(ins[0]),
        LayerKind::MaxPool { kernel, stride } | LayerKind::AvgPool { kernel, stride } => {
            let x = ins[0];
            if x.height < *kernel || x.width < *kernel {
                return Err(Error::shape(id, format!("pool window {kernel} larger than {}x{}", x.height, x.width)));
            }
            let h = window(x.height, *kernel, *stride, 0)?;
            let w = window(x.width, *kernel, *stride, 0)?;
            positive(x.channels, h, w)
        }
        LayerKind::GlobalAvgPool => positive(ins[0].channels, 1, 1),
        LayerKind::Flatten => positive(ins[0].numel(), 1, 1),
        LayerKind::FullyConnected { out_features, .. } => positive(*out_features, 1, 1),
        LayerKind::Add => {
            if ins[0] != ins[1] {
                return Err(Error::shape(id, format!("add operands differ: {} vs {}", ins[0], ins[1])));
            }
            Ok(ins[0])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(id: &str, input: &str, out: usize, k: usize, s: usize, p: usize) -> LayerNode {
        LayerNode::new(
            id,
            LayerKind::Conv2d { out_channels: out, kernel: k, stride: s, padding: p, groups: 1, bias: false },
            vec![input.into()],
        )
    }

    fn graph(input: TensorShape, nodes: Vec<LayerNode>) -> NetworkGraph {
        let mut g = NetworkGraph::new("t", input, 10);
        g.nodes.push(LayerNode::new("in", LayerKind::Input, vec![]));
        g.nodes.extend(nodes);
        g
    }

    #[test]
    fn padding_preserving_conv() {
        let mut g = graph(TensorShape::image(3, 32), vec![conv("c", "in", 64, 3, 1, 1)]);
        g.infer_shapes().unwrap();
        assert_eq!(g.node("c").unwrap().out_shape, Some(TensorShape::image(64, 32)));
    }

    #[test]
    fn stride_two_halves() {
        let mut g = graph(TensorShape::image(64, 32), vec![conv("c", "in", 128, 3, 2, 1)]);
        g.infer_shapes().unwrap();
        assert_eq!(g.node("c").unwrap().shape().unwrap(), TensorShape::image(128, 16));
    }

    #[test]
    fn add_shape_mismatch_is_an_error() {
        let mut g = graph(
            TensorShape::image(64, 32),
            vec![
                conv("a", "in", 64, 3, 1, 1),
                conv("b", "in", 64, 3, 2, 1),
                LayerNode::new("sum", LayerKind::Add, vec!["a".into(), "b".into()]),
            ],
        );
        let err = g.infer_shapes().unwrap_err();
        assert!(matches!(err, Error::Shape { ref node, .. } if node == "sum"), "{err}");
    }

    #[test]
    fn infer_is_idempotent() {
        let mut g = graph(
            TensorShape::image(3, 16),
            vec![conv("a", "in", 8, 3, 2, 1), LayerNode::new("r", LayerKind::Relu, vec!["a".into()])],
        );
        g.infer_shapes().unwrap();
        let once = g.clone();
        g.infer_shapes().unwrap();
        assert_eq!(once, g);
    }

    #[test]
    fn bypass_rewires_chains() {
        let mut g = graph(
            TensorShape::image(3, 8),
            vec![
                conv("a", "in", 4, 3, 1, 1),
                LayerNode::new("r1", LayerKind::Relu, vec!["a".into()]),
                LayerNode::new("r2", LayerKind::Relu, vec!["r1".into()]),
                conv("b", "r2", 4, 3, 1, 1),
            ],
        );
        let ids = ["r1", "r2"].iter().map(|s| s.to_string()).collect();
        g.bypass_nodes(&ids).unwrap();
        assert_eq!(g.node("b").unwrap().inputs, vec!["a".to_string()]);
        assert_eq!(g.nodes.len(), 3);
    }

    #[test]
    fn stage_ids_parse() {
        assert_eq!("S3".parse::<StageId>().unwrap(), StageId(3));
        assert_eq!("2".parse::<StageId>().unwrap(), StageId(2));
        assert!("S0".parse::<StageId>().is_err());
        assert_eq!("conv1".parse::<StageTag>().unwrap(), StageTag::Conv1);
    }
}
