use std::collections::BTreeMap;

use super::layers::{self, BnCache, ConvGeom, PoolGeom, BN_MOMENTUM};
use super::params::{self, param_name, Params};
use super::tensor::Scalar;
use crate::error::{Error, Result};
use crate::netir::{LayerKind, NetworkGraph, TensorShape};

/// Batch-norm behaviour during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Running statistics.
    Eval,
    /// Batch statistics; running statistics are updated.
    Train,
    /// Batch statistics without touching running statistics (gradient checks,
    /// loss probes).
    TrainFrozen,
}

enum Cache<T> {
    None,
    Bn(BnCache<T>),
    MaxPool(Vec<u32>),
}

/// Activations recorded by a training forward pass, consumed by backward.
pub struct Tape<T> {
    batch: usize,
    values: Vec<Vec<T>>,
    caches: Vec<Cache<T>>,
}

impl<T> Default for Tape<T> {
    fn default() -> Self {
        Self { batch: 0, values: Vec::new(), caches: Vec::new() }
    }
}

impl<T> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_recorded(&self) -> bool {
        !self.values.is_empty()
    }
}

/// Parameter gradients keyed by tensor name.
pub type Grads<T> = BTreeMap<String, Vec<T>>;

struct Step<'a> {
    id: &'a str,
    kind: &'a LayerKind,
    inputs: Vec<usize>,
    in_shape: TensorShape,
    out_shape: TensorShape,
}

/// A graph together with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub graph: NetworkGraph,
    pub params: Params<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(graph: NetworkGraph, params: Params<T>) -> Result<Self> {
        if graph.nodes.iter().any(|n| n.out_shape.is_none()) {
            return Err(Error::Engine("graph shapes are not inferred".into()));
        }
        graph.output_id()?;
        params.check_against(&graph)?;
        Ok(Self { graph, params })
    }

    pub fn init(graph: NetworkGraph, seed: u64) -> Result<Self> {
        let params = Params::init(&graph, seed)?;
        Self::new(graph, params)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { graph: self.graph.clone(), params: self.params.cast() }
    }

    pub fn input_len(&self) -> usize {
        self.graph.input_shape.numel()
    }

    pub fn num_outputs(&self) -> usize {
        self.graph.output_shape().map(|s| s.numel()).unwrap_or(0)
    }

    fn plan(&self) -> Result<Vec<Step<'_>>> {
        let index = self.graph.index_map();
        self.graph
            .nodes
            .iter()
            .map(|n| {
                let inputs: Vec<usize> = n
                    .inputs
                    .iter()
                    .map(|i| {
                        index
                            .get(i.as_str())
                            .copied()
                            .ok_or_else(|| Error::shape(&n.id, format!("dangling input `{i}`")))
                    })
                    .collect::<Result<_>>()?;
                let out_shape = n.shape()?;
                let in_shape = match inputs.first() {
                    Some(&i) => self.graph.nodes[i].shape()?,
                    None => self.graph.input_shape,
                };
                Ok(Step { id: &n.id, kind: &n.kind, inputs, in_shape, out_shape })
            })
            .collect()
    }

    fn check_batch(&self, x: &[T], n: usize) -> Result<()> {
        if n == 0 || x.len() != n * self.input_len() {
            return Err(Error::Engine(format!(
                "batch of {} values does not hold {n} samples of {}",
                x.len(),
                self.graph.input_shape
            )));
        }
        Ok(())
    }

    /// Inference-mode logits, `n x classes`.
    pub fn forward(&self, x: &[T], n: usize) -> Result<Vec<T>> {
        self.check_batch(x, n)?;
        let plan = self.plan()?;
        let mut last_use = vec![0usize; plan.len()];
        for (i, s) in plan.iter().enumerate() {
            for &j in &s.inputs {
                last_use[j] = i;
            }
        }
        let mut values: Vec<Vec<T>> = vec![Vec::new(); plan.len()];
        for (i, step) in plan.iter().enumerate() {
            let (y, _, _) = self.eval_node(step, &values, x, n, Mode::Eval)?;
            values[i] = y;
            for &j in &step.inputs {
                if last_use[j] == i {
                    values[j] = Vec::new();
                }
            }
        }
        Ok(values.pop().unwrap_or_default())
    }

    /// Training forward pass that records everything backward needs.
    pub fn forward_train(&mut self, x: &[T], n: usize, mode: Mode, tape: &mut Tape<T>) -> Result<Vec<T>> {
        self.check_batch(x, n)?;
        let mut updates = Vec::new();
        {
            let plan = self.plan()?;
            let mut values: Vec<Vec<T>> = Vec::with_capacity(plan.len());
            let mut caches = Vec::with_capacity(plan.len());
            for step in &plan {
                let (y, cache, stats) = self.eval_node(step, &values, x, n, mode)?;
                values.push(y);
                caches.push(cache);
                if let Some(st) = stats {
                    updates.push((step.id.to_string(), st));
                }
            }
            tape.batch = n;
            tape.values = values;
            tape.caches = caches;
        }
        if mode == Mode::Train {
            let m = T::from_f64_lossy(BN_MOMENTUM);
            for (id, (mean, var, elems)) in updates {
                let unbias = if elems > 1 {
                    T::from_usize(elems).expect("n") / T::from_usize(elems - 1).expect("n")
                } else {
                    T::one()
                };
                let rm = self.params.get_mut(&param_name(&id, params::RUNNING_MEAN)).expect("checked");
                for (r, &v) in rm.data_mut().iter_mut().zip(&mean) {
                    *r = (T::one() - m) * *r + m * v;
                }
                let rv = self.params.get_mut(&param_name(&id, params::RUNNING_VAR)).expect("checked");
                for (r, &v) in rv.data_mut().iter_mut().zip(&var) {
                    *r = (T::one() - m) * *r + m * v * unbias;
                }
            }
        }
        Ok(tape.values.last().cloned().unwrap_or_default())
    }

    #[allow(clippy::type_complexity)]
    fn eval_node(
        &self,
        step: &Step<'_>,
        values: &[Vec<T>],
        x: &[T],
        n: usize,
        mode: Mode,
    ) -> Result<(Vec<T>, Cache<T>, Option<(Vec<T>, Vec<T>, usize)>)> {
        let input = |k: usize| -> &[T] { &values[step.inputs[k]] };
        let (is, os) = (step.in_shape, step.out_shape);
        let y = match step.kind {
            LayerKind::Input => x.to_vec(),
            LayerKind::Conv2d { kernel, stride, padding, groups, .. } => {
                let geo = conv_geom(is, os, *kernel, *stride, *padding, *groups);
                let w = self.params.data(step.id, params::WEIGHT)?;
                let b = self.params.opt_data(step.id, params::BIAS);
                layers::conv_forward(input(0), n, &geo, w, b)
            }
            LayerKind::FullyConnected { out_features, .. } => {
                let w = self.params.data(step.id, params::WEIGHT)?;
                let b = self.params.opt_data(step.id, params::BIAS);
                layers::fc_forward(input(0), n, is.numel(), *out_features, w, b)
            }
            LayerKind::BatchNorm => {
                let gamma = self.params.data(step.id, params::GAMMA)?;
                let beta = self.params.data(step.id, params::BETA)?;
                let (c, hw) = (os.channels, os.spatial());
                if mode == Mode::Eval {
                    let mean = self.params.data(step.id, params::RUNNING_MEAN)?;
                    let var = self.params.data(step.id, params::RUNNING_VAR)?;
                    layers::bn_forward_eval(input(0), n, c, hw, gamma, beta, mean, var)
                } else {
                    let (y, cache, stats) = layers::bn_forward_train(input(0), n, c, hw, gamma, beta);
                    return Ok((y, Cache::Bn(cache), Some((stats.mean, stats.var, n * hw))));
                }
            }
            LayerKind::Relu => input(0).iter().map(|&v| v.max(T::zero())).collect(),
            LayerKind::MaxPool { kernel, stride } => {
                let (y, arg) = layers::maxpool_forward(input(0), n, &pool_geom(is, os, *kernel, *stride));
                return Ok((y, Cache::MaxPool(arg), None));
            }
            LayerKind::AvgPool { kernel, stride } => {
                layers::avgpool_forward(input(0), n, &pool_geom(is, os, *kernel, *stride))
            }
            LayerKind::GlobalAvgPool => layers::global_avg_forward(input(0), n * is.channels, is.spatial()),
            LayerKind::Flatten => input(0).to_vec(),
            LayerKind::Add => input(0).iter().zip(input(1)).map(|(&a, &b)| a + b).collect(),
        };
        Ok((y, Cache::None, None))
    }

    /// Gradients of every trainable tensor given `dlogits`, the loss gradient
    /// with respect to the recorded output.
    pub fn backward(&self, tape: &Tape<T>, dlogits: &[T]) -> Result<Grads<T>> {
        if !tape.is_recorded() {
            return Err(Error::BackwardBeforeForward);
        }
        let plan = self.plan()?;
        if tape.values.len() != plan.len() {
            return Err(Error::Engine("tape was recorded on a different graph".into()));
        }
        let n = tape.batch;
        let out = plan.len() - 1;
        if dlogits.len() != tape.values[out].len() {
            return Err(Error::Engine(format!(
                "output gradient has {} values, output has {}",
                dlogits.len(),
                tape.values[out].len()
            )));
        }
        let mut grads: Grads<T> = BTreeMap::new();
        for (name, t) in self.params.iter() {
            if params::is_trainable(name) {
                grads.insert(name.clone(), vec![T::zero(); t.len()]);
            }
        }
        let mut dvals: Vec<Option<Vec<T>>> = vec![None; plan.len()];
        dvals[out] = Some(dlogits.to_vec());
        let needs_grad = needs_input_grad(&plan);
        for i in (0..plan.len()).rev() {
            let Some(dy) = dvals[i].take() else { continue };
            let step = &plan[i];
            let (is, os) = (step.in_shape, step.out_shape);
            let x = |k: usize| -> &[T] { &tape.values[step.inputs[k]] };
            let want_dx = step.inputs.first().is_some_and(|&j| needs_grad[j]);
            let mut add_param = |suffix: &str, g: Vec<T>| {
                let acc = grads.get_mut(&param_name(step.id, suffix)).expect("param");
                for (a, v) in acc.iter_mut().zip(g) {
                    *a = *a + v;
                }
            };
            let dx: Vec<Vec<T>> = match step.kind {
                LayerKind::Input => vec![],
                LayerKind::Conv2d { kernel, stride, padding, groups, bias, .. } => {
                    let geo = conv_geom(is, os, *kernel, *stride, *padding, *groups);
                    let w = self.params.data(step.id, params::WEIGHT)?;
                    let r = layers::conv_backward(x(0), &dy, n, &geo, w, want_dx);
                    add_param(params::WEIGHT, r.dw);
                    if *bias {
                        add_param(params::BIAS, r.db);
                    }
                    vec![r.dx]
                }
                LayerKind::FullyConnected { out_features, bias } => {
                    let w = self.params.data(step.id, params::WEIGHT)?;
                    let (dx, dw, db) = layers::fc_backward(x(0), &dy, n, is.numel(), *out_features, w, want_dx);
                    add_param(params::WEIGHT, dw);
                    if *bias {
                        add_param(params::BIAS, db);
                    }
                    vec![dx]
                }
                LayerKind::BatchNorm => {
                    let Cache::Bn(cache) = &tape.caches[i] else {
                        return Err(Error::Engine(
                            "batch norm was recorded in eval mode; backward needs batch statistics".into(),
                        ));
                    };
                    let gamma = self.params.data(step.id, params::GAMMA)?;
                    let (dx, dg, db) = layers::bn_backward(&dy, cache, n, os.channels, os.spatial(), gamma);
                    add_param(params::GAMMA, dg);
                    add_param(params::BETA, db);
                    vec![dx]
                }
                LayerKind::Relu => {
                    let y = &tape.values[i];
                    vec![dy.iter().zip(y).map(|(&d, &v)| if v > T::zero() { d } else { T::zero() }).collect()]
                }
                LayerKind::MaxPool { .. } => {
                    let Cache::MaxPool(arg) = &tape.caches[i] else {
                        return Err(Error::Engine("missing max-pool indices".into()));
                    };
                    vec![layers::maxpool_backward(&dy, arg, x(0).len())]
                }
                LayerKind::AvgPool { kernel, stride } => {
                    vec![layers::avgpool_backward(&dy, n, &pool_geom(is, os, *kernel, *stride))]
                }
                LayerKind::GlobalAvgPool => vec![layers::global_avg_backward(&dy, is.spatial())],
                LayerKind::Flatten => vec![dy],
                LayerKind::Add => vec![dy.clone(), dy],
            };
            for (&j, g) in step.inputs.iter().zip(dx) {
                if !needs_grad[j] || g.is_empty() {
                    continue;
                }
                match &mut dvals[j] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(g) {
                            *a = *a + v;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(grads)
    }
}

/// A node needs an input gradient when some parametric node lies upstream of it.
fn needs_input_grad(plan: &[Step<'_>]) -> Vec<bool> {
    let mut needs = vec![false; plan.len()];
    for (i, s) in plan.iter().enumerate() {
        let parametric =
            matches!(s.kind, LayerKind::Conv2d { .. } | LayerKind::FullyConnected { .. } | LayerKind::BatchNorm);
        needs[i] = parametric || s.inputs.iter().any(|&j| needs[j]);
    }
    needs
}

fn conv_geom(is: TensorShape, os: TensorShape, k: usize, s: usize, p: usize, g: usize) -> ConvGeom {
    ConvGeom {
        cin: is.channels,
        h: is.height,
        w: is.width,
        cout: os.channels,
        ho: os.height,
        wo: os.width,
        k,
        stride: s,
        pad: p,
        groups: g,
    }
}

fn pool_geom(is: TensorShape, os: TensorShape, k: usize, s: usize) -> PoolGeom {
    PoolGeom { c: is.channels, h: is.height, w: is.width, ho: os.height, wo: os.width, k, stride: s }
}

/// Indices of the largest logit per row.
pub fn argmax_rows<T: Scalar>(logits: &[T], classes: usize) -> Vec<usize> {
    logits
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
