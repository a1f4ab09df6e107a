use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::netir::{LayerKind, NetworkGraph};

pub const WEIGHT: &str = "weight";
pub const BIAS: &str = "bias";
pub const GAMMA: &str = "gamma";
pub const BETA: &str = "beta";
pub const RUNNING_MEAN: &str = "running_mean";
pub const RUNNING_VAR: &str = "running_var";

pub fn param_name(node: &str, suffix: &str) -> String {
    format!("{node}.{suffix}")
}

/// Running statistics are state, not parameters: the optimizer skips them.
pub fn is_trainable(name: &str) -> bool {
    !(name.ends_with(RUNNING_MEAN) || name.ends_with(RUNNING_VAR))
}

/// Every tensor `g` needs, with its dims, in node order.
pub fn expected_params(g: &NetworkGraph) -> Result<Vec<(String, Vec<usize>)>> {
    let mut out = Vec::new();
    for node in &g.nodes {
        let in_shape = || -> Result<_> {
            g.node(&node.inputs[0]).ok_or_else(|| Error::shape(&node.id, "dangling input"))?.shape()
        };
        match &node.kind {
            LayerKind::Conv2d { out_channels, kernel, groups, bias, .. } => {
                let cin = in_shape()?.channels;
                out.push((param_name(&node.id, WEIGHT), vec![*out_channels, cin / groups, *kernel, *kernel]));
                if *bias {
                    out.push((param_name(&node.id, BIAS), vec![*out_channels]));
                }
            }
            LayerKind::FullyConnected { out_features, bias } => {
                let d = in_shape()?.numel();
                out.push((param_name(&node.id, WEIGHT), vec![*out_features, d]));
                if *bias {
                    out.push((param_name(&node.id, BIAS), vec![*out_features]));
                }
            }
            LayerKind::BatchNorm => {
                let c = node.shape()?.channels;
                for s in [GAMMA, BETA, RUNNING_MEAN, RUNNING_VAR] {
                    out.push((param_name(&node.id, s), vec![c]));
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Named tensors of a model: weights, biases, BN affine terms and BN running
/// statistics. Iteration order is by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Self { tensors: BTreeMap::new() }
    }

    /// He-normal conv weights, `N(0, 1/fan_in)` FC weights, zero biases,
    /// unit BN scale and variance.
    pub fn init(g: &NetworkGraph, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, dims) in expected_params(g)? {
            let t = if name.ends_with(&format!(".{WEIGHT}")) {
                let fan_in: usize = dims[1..].iter().product();
                let gain = if dims.len() == 4 { 2.0 } else { 1.0 };
                let normal =
                    Normal::new(0.0, (gain / fan_in as f64).sqrt()).map_err(|e| Error::Engine(e.to_string()))?;
                let data =
                    (0..dims.iter().product::<usize>()).map(|_| T::from_f64_lossy(normal.sample(&mut rng))).collect();
                Tensor::from_vec(&dims, data)?
            } else if name.ends_with(GAMMA) || name.ends_with(RUNNING_VAR) {
                Tensor::filled(&dims, T::one())
            } else {
                Tensor::zeros(&dims)
            };
            tensors.insert(name, t);
        }
        Ok(Self { tensors })
    }

    /// Checks that exactly the tensors `g` needs are present with the right dims.
    pub fn check_against(&self, g: &NetworkGraph) -> Result<()> {
        let expected = expected_params(g)?;
        for (name, dims) in &expected {
            match self.tensors.get(name) {
                None => return Err(Error::Engine(format!("missing tensor `{name}`"))),
                Some(t) if t.dims() != dims.as_slice() => {
                    return Err(Error::Engine(format!("tensor `{name}` has dims {:?}, graph needs {dims:?}", t.dims())))
                }
                _ => {}
            }
        }
        if expected.len() != self.tensors.len() {
            let known: std::collections::HashSet<&str> = expected.iter().map(|(n, _)| n.as_str()).collect();
            let extra: Vec<&str> = self.tensors.keys().map(String::as_str).filter(|n| !known.contains(n)).collect();
            return Err(Error::Engine(format!("unused tensors {extra:?}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub(crate) fn data(&self, node: &str, suffix: &str) -> Result<&[T]> {
        let name = param_name(node, suffix);
        self.tensors.get(&name).map(|t| t.data()).ok_or_else(|| Error::Engine(format!("missing tensor `{name}`")))
    }

    pub(crate) fn opt_data(&self, node: &str, suffix: &str) -> Option<&[T]> {
        self.tensors.get(&param_name(node, suffix)).map(|t| t.data())
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.tensors.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn trainable_count(&self) -> usize {
        self.tensors.iter().filter(|(n, _)| is_trainable(n)).map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }
}
