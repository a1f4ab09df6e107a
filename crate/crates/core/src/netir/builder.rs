//! Builders for the supported CNN families.
//!
//! All builders use the small-image adaptation: the stem convolution has
//! stride 1 and there is no stem max-pool, so a 32x32 input keeps its full
//! resolution through the first stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::graph::{LayerKind, LayerNode, NetworkGraph, StageId, StageTag};
use super::residual::strip_residuals;
use super::shape::{Scale, TensorShape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    ResNet18,
    ResNet34,
    ResNet56,
    ResNet10,
    ResNet9,
    ResNet6,
    Vgg16,
    MobileNetV1,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::ResNet18,
        Family::ResNet34,
        Family::ResNet56,
        Family::ResNet10,
        Family::ResNet9,
        Family::ResNet6,
        Family::Vgg16,
        Family::MobileNetV1,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::ResNet18 => "resnet18",
            Family::ResNet34 => "resnet34",
            Family::ResNet56 => "resnet56",
            Family::ResNet10 => "resnet10",
            Family::ResNet9 => "resnet9",
            Family::ResNet6 => "resnet6",
            Family::Vgg16 => "vgg16",
            Family::MobileNetV1 => "mobilenetv1",
        }
    }

    pub fn is_resnet(&self) -> bool {
        !matches!(self, Family::Vgg16 | Family::MobileNetV1)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Family::ALL.into_iter().find(|f| f.as_str() == key).ok_or_else(|| Error::UnsupportedFamily(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub family: Family,
    pub input_shape: TensorShape,
    pub num_classes: usize,
    #[serde(default)]
    pub strip_residuals: bool,
    #[serde(default)]
    pub alpha: Scale,
    #[serde(default)]
    pub rho: Scale,
}

impl ArchitectureSpec {
    pub fn new(family: Family, input_side: usize, num_classes: usize) -> Self {
        Self {
            family,
            input_shape: TensorShape::image(3, input_side),
            num_classes,
            strip_residuals: false,
            alpha: Scale::ONE,
            rho: Scale::ONE,
        }
    }

    pub fn with_alpha(mut self, alpha: Scale) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_rho(mut self, rho: Scale) -> Self {
        self.rho = rho;
        self
    }
}

/// Builds the graph for `spec`, applies α/ρ scaling and optional residual
/// stripping, and infers all shapes.
pub fn build_architecture(spec: &ArchitectureSpec) -> Result<NetworkGraph> {
    if spec.num_classes == 0 {
        return Err(Error::Config("num_classes must be positive".into()));
    }
    let alpha = spec.alpha;
    let rho = spec.rho;
    let input = TensorShape::new(
        spec.input_shape.channels,
        rho.scale_spatial(spec.input_shape.height),
        rho.scale_spatial(spec.input_shape.width),
    )?;
    let mut g = match spec.family {
        Family::Vgg16 => vgg16(input, spec.num_classes, alpha),
        Family::MobileNetV1 => mobilenet_v1(input, spec.num_classes, alpha),
        family => resnet(family, input, spec.num_classes, alpha),
    };
    g.metadata.family = Some(spec.family);
    g.infer_shapes().map_err(|e| match e {
        Error::Shape { .. } => {
            Error::InputTooSmall { family: spec.family.to_string(), height: input.height, width: input.width }
        }
        other => other,
    })?;
    if !alpha.is_one() || !rho.is_one() {
        g.record(format!("build alpha={alpha} rho={rho}"));
    }
    if spec.strip_residuals {
        g = strip_residuals(&g)?;
    }
    Ok(g)
}

struct Builder {
    g: NetworkGraph,
    tag: StageTag,
}

impl Builder {
    fn new(name: String, input: TensorShape, classes: usize) -> Self {
        let mut g = NetworkGraph::new(name, input, classes);
        g.nodes.push(LayerNode::new("input", LayerKind::Input, vec![]).with_stage(StageTag::Conv1));
        Self { g, tag: StageTag::Conv1 }
    }

    fn push(&mut self, id: String, kind: LayerKind, inputs: &[&str]) -> String {
        let node =
            LayerNode::new(id.clone(), kind, inputs.iter().map(|s| s.to_string()).collect()).with_stage(self.tag);
        self.g.nodes.push(node);
        id
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, id: String, input: &str, out: usize, kernel: usize, stride: usize, groups: usize) -> String {
        self.push(
            id,
            LayerKind::Conv2d { out_channels: out, kernel, stride, padding: kernel / 2, groups, bias: false },
            &[input],
        )
    }

    fn bn(&mut self, id: String, input: &str) -> String {
        self.push(id, LayerKind::BatchNorm, &[input])
    }

    fn relu(&mut self, id: String, input: &str) -> String {
        self.push(id, LayerKind::Relu, &[input])
    }

    fn conv_bn_relu(
        &mut self,
        prefix: &str,
        input: &str,
        out: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
    ) -> String {
        let c = self.conv(format!("{prefix}.conv"), input, out, kernel, stride, groups);
        let b = self.bn(format!("{prefix}.bn"), &c);
        self.relu(format!("{prefix}.relu"), &b)
    }

    fn classifier_head(&mut self, input: &str, classes: usize) {
        self.tag = StageTag::Classifier;
        let p = self.push("pool".into(), LayerKind::GlobalAvgPool, &[input]);
        let f = self.push("flatten".into(), LayerKind::Flatten, &[&p]);
        self.push("fc".into(), LayerKind::FullyConnected { out_features: classes, bias: true }, &[&f]);
    }
}

struct ResNetLayout {
    stem: usize,
    widths: &'static [usize],
    blocks: &'static [usize],
    /// Stages whose first block holds a single 3x3 convolution.
    single_conv_stages: &'static [usize],
    conv1_in_s1: bool,
}

fn resnet_layout(family: Family) -> ResNetLayout {
    const W4: &[usize] = &[64, 128, 256, 512];
    match family {
        Family::ResNet18 => {
            ResNetLayout { stem: 64, widths: W4, blocks: &[2, 2, 2, 2], single_conv_stages: &[], conv1_in_s1: false }
        }
        Family::ResNet34 => {
            ResNetLayout { stem: 64, widths: W4, blocks: &[3, 4, 6, 3], single_conv_stages: &[], conv1_in_s1: false }
        }
        Family::ResNet10 => {
            ResNetLayout { stem: 64, widths: W4, blocks: &[1, 1, 1, 1], single_conv_stages: &[], conv1_in_s1: false }
        }
        Family::ResNet9 => {
            ResNetLayout { stem: 64, widths: W4, blocks: &[1, 1, 1, 1], single_conv_stages: &[1], conv1_in_s1: false }
        }
        Family::ResNet6 => ResNetLayout {
            stem: 64,
            widths: W4,
            blocks: &[1, 1, 1, 1],
            single_conv_stages: &[1, 2, 3, 4],
            conv1_in_s1: false,
        },
        Family::ResNet56 => ResNetLayout {
            stem: 16,
            widths: &[16, 32, 64],
            blocks: &[9, 9, 9],
            single_conv_stages: &[],
            conv1_in_s1: true,
        },
        Family::Vgg16 | Family::MobileNetV1 => unreachable!("not a resnet"),
    }
}

fn resnet(family: Family, input: TensorShape, classes: usize, alpha: Scale) -> NetworkGraph {
    let layout = resnet_layout(family);
    let mut b = Builder::new(family.to_string(), input, classes);
    b.g.metadata.conv1_in_s1 = layout.conv1_in_s1;
    b.tag = if layout.conv1_in_s1 { StageTag::Stage(StageId(1)) } else { StageTag::Conv1 };
    let stem = alpha.scale_channels(layout.stem);
    let mut x = b.conv_bn_relu("conv1", "input", stem, 3, 1, 1);
    let mut channels = stem;
    for (s, (&width, &blocks)) in layout.widths.iter().zip(layout.blocks).enumerate() {
        let stage = s + 1;
        b.tag = StageTag::Stage(StageId(stage as u8));
        let width = alpha.scale_channels(width);
        for blk in 0..blocks {
            let stride = if stage > 1 && blk == 0 { 2 } else { 1 };
            let p = format!("s{stage}.b{blk}");
            let single = blk == 0 && layout.single_conv_stages.contains(&stage);
            let main = if single {
                let c = b.conv(format!("{p}.conv1"), &x, width, 3, stride, 1);
                b.bn(format!("{p}.bn1"), &c)
            } else {
                let c1 = b.conv(format!("{p}.conv1"), &x, width, 3, stride, 1);
                let n1 = b.bn(format!("{p}.bn1"), &c1);
                let r1 = b.relu(format!("{p}.relu1"), &n1);
                let c2 = b.conv(format!("{p}.conv2"), &r1, width, 3, 1, 1);
                b.bn(format!("{p}.bn2"), &c2)
            };
            let shortcut = if stride != 1 || channels != width {
                let c = b.conv(format!("{p}.shortcut.conv"), &x, width, 1, stride, 1);
                b.bn(format!("{p}.shortcut.bn"), &c)
            } else {
                x.clone()
            };
            let sum = b.push(format!("{p}.add"), LayerKind::Add, &[&main, &shortcut]);
            x = b.relu(format!("{p}.relu_out"), &sum);
            channels = width;
        }
    }
    b.classifier_head(&x, classes);
    b.g
}

fn vgg16(input: TensorShape, classes: usize, alpha: Scale) -> NetworkGraph {
    const CFG: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];
    let mut b = Builder::new("vgg16".into(), input, classes);
    b.g.metadata.conv1_in_s1 = true;
    let mut x = "input".to_string();
    for (s, widths) in CFG.iter().enumerate() {
        let stage = s + 1;
        b.tag = StageTag::Stage(StageId(stage as u8));
        for (l, &w) in widths.iter().enumerate() {
            x = b.conv_bn_relu(&format!("s{stage}.l{l}"), &x, alpha.scale_channels(w), 3, 1, 1);
        }
        x = b.push(format!("s{stage}.pool"), LayerKind::MaxPool { kernel: 2, stride: 2 }, &[&x]);
    }
    b.tag = StageTag::Classifier;
    let f = b.push("flatten".into(), LayerKind::Flatten, &[&x]);
    let hidden = alpha.scale_channels(4096);
    let fc1 = b.push("fc1".into(), LayerKind::FullyConnected { out_features: hidden, bias: true }, &[&f]);
    let r1 = b.relu("fc1.relu".into(), &fc1);
    let fc2 = b.push("fc2".into(), LayerKind::FullyConnected { out_features: hidden, bias: true }, &[&r1]);
    let r2 = b.relu("fc2.relu".into(), &fc2);
    b.push("fc".into(), LayerKind::FullyConnected { out_features: classes, bias: true }, &[&r2]);
    b.g
}

fn mobilenet_v1(input: TensorShape, classes: usize, alpha: Scale) -> NetworkGraph {
    // (pointwise width, depthwise stride)
    const BLOCKS: [(usize, usize); 13] = [
        (64, 1),
        (128, 2),
        (128, 1),
        (256, 2),
        (256, 1),
        (512, 2),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (1024, 2),
        (1024, 1),
    ];
    let mut b = Builder::new("mobilenetv1".into(), input, classes);
    b.g.metadata.conv1_in_s1 = true;
    let mut stage = 1u8;
    b.tag = StageTag::Stage(StageId(stage));
    let stem = alpha.scale_channels(32);
    let mut x = b.conv_bn_relu("conv1", "input", stem, 3, 1, 1);
    let mut channels = stem;
    for (i, &(width, stride)) in BLOCKS.iter().enumerate() {
        if stride == 2 {
            stage += 1;
            b.tag = StageTag::Stage(StageId(stage));
        }
        let p = format!("s{stage}.b{i}");
        x = b.conv_bn_relu(&format!("{p}.dw"), &x, channels, 3, stride, channels);
        let width = alpha.scale_channels(width);
        x = b.conv_bn_relu(&format!("{p}.pw"), &x, width, 1, 1, 1);
        channels = width;
    }
    b.classifier_head(&x, classes);
    b.g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.as_str().parse::<Family>().unwrap(), f);
        }
        assert_eq!("ResNet-18".parse::<Family>().unwrap(), Family::ResNet18);
        assert!("resnet50".parse::<Family>().is_err());
    }

    #[test]
    fn too_small_input_is_rejected() {
        let spec = ArchitectureSpec::new(Family::Vgg16, 16, 10);
        let err = build_architecture(&spec).unwrap_err();
        assert!(matches!(err, Error::InputTooSmall { .. }), "{err}");
    }

    #[test]
    fn conv_layer_counts_follow_the_usual_convention() {
        let count = |f| build_architecture(&ArchitectureSpec::new(f, 32, 100)).unwrap().conv_layer_count();
        assert_eq!(count(Family::ResNet18), 17);
        assert_eq!(count(Family::ResNet34), 33);
        assert_eq!(count(Family::ResNet10), 9);
        assert_eq!(count(Family::ResNet9), 8);
        assert_eq!(count(Family::ResNet6), 5);
        assert_eq!(count(Family::ResNet56), 55);
        assert_eq!(count(Family::Vgg16), 13);
    }

    #[test]
    fn mobilenet_uses_depthwise_groups() {
        let g = build_architecture(&ArchitectureSpec::new(Family::MobileNetV1, 32, 100)).unwrap();
        let dw = g.node("s2.b1.dw.conv").unwrap();
        match dw.kind {
            LayerKind::Conv2d { groups, stride, .. } => {
                assert_eq!(groups, 64);
                assert_eq!(stride, 2);
            }
            _ => panic!("expected conv"),
        }
        assert_eq!(dw.shape().unwrap(), TensorShape::image(64, 16));
    }
}
