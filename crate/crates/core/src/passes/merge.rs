use std::collections::HashSet;

use crate::engine::{param_name, Params, Scalar, Tensor, BETA, BIAS, BN_EPS, GAMMA, RUNNING_MEAN, RUNNING_VAR, WEIGHT};
use crate::error::{Error, Result};
use crate::netir::{LayerKind, NetworkGraph};

fn tensor<'a, T: Scalar>(w: &'a Params<T>, node: &str, suffix: &str) -> Result<&'a Tensor<T>> {
    let name = param_name(node, suffix);
    w.get(&name).ok_or_else(|| Error::pass("merge", format!("missing tensor `{name}`")))
}

fn bias_or_zero<T: Scalar>(w: &Params<T>, node: &str, len: usize) -> Vec<T> {
    w.get(&param_name(node, BIAS)).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![T::zero(); len])
}

fn set_bias(kind: &mut LayerKind) {
    match kind {
        LayerKind::Conv2d { bias, .. } | LayerKind::FullyConnected { bias, .. } => *bias = true,
        _ => unreachable!("only linear layers carry a bias"),
    }
}

/// Folds every batch norm into the conv or fully-connected layer before it,
/// using the running statistics.
pub fn fold_bn<T: Scalar>(g: &NetworkGraph, w: &Params<T>) -> Result<(NetworkGraph, Params<T>)> {
    let mut out = g.clone();
    let mut weights = w.clone();
    let mut folded = HashSet::new();
    for node in g.nodes.iter().filter(|n| n.kind == LayerKind::BatchNorm) {
        let prev_id = &node.inputs[0];
        let prev = g.node(prev_id).ok_or_else(|| Error::pass("fold_bn", format!("dangling input of `{}`", node.id)))?;
        let linear = matches!(prev.kind, LayerKind::Conv2d { .. } | LayerKind::FullyConnected { .. });
        if !linear || g.consumers(prev_id).len() != 1 {
            return Err(Error::pass("fold_bn", format!("batch norm `{}` has no foldable predecessor", node.id)));
        }
        let gamma = tensor(w, &node.id, GAMMA)?.data();
        let beta = tensor(w, &node.id, BETA)?.data();
        let mean = tensor(w, &node.id, RUNNING_MEAN)?.data();
        let var = tensor(w, &node.id, RUNNING_VAR)?.data();
        let eps = T::from_f64_lossy(BN_EPS);
        let scale: Vec<T> = gamma.iter().zip(var).map(|(&g, &v)| g / (v + eps).sqrt()).collect();

        let wname = param_name(prev_id, WEIGHT);
        let wt = weights.get_mut(&wname).expect("checked by tensor()");
        let per_out = wt.len() / scale.len();
        for (row, &s) in wt.data_mut().chunks_mut(per_out).zip(&scale) {
            for v in row {
                *v = *v * s;
            }
        }
        let b = bias_or_zero(w, prev_id, scale.len());
        let folded_bias: Vec<T> = (0..scale.len()).map(|c| (b[c] - mean[c]) * scale[c] + beta[c]).collect();
        weights.insert(param_name(prev_id, BIAS), Tensor::from_vec(&[scale.len()], folded_bias)?);
        for s in [GAMMA, BETA, RUNNING_MEAN, RUNNING_VAR] {
            weights.remove(&param_name(&node.id, s));
        }
        let i = out.position(prev_id).expect("exists");
        set_bias(&mut out.nodes[i].kind);
        folded.insert(node.id.clone());
    }
    if folded.is_empty() {
        return Ok((out, weights));
    }
    let n = folded.len();
    out.bypass_nodes(&folded)?;
    out.infer_shapes()?;
    out.record(format!("fold_bn {n}"));
    Ok((out, weights))
}

#[derive(Debug, Clone, Copy)]
struct ConvParams {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    groups: usize,
}

fn conv_params(g: &NetworkGraph, id: &str) -> Option<ConvParams> {
    let node = g.node(id)?;
    let LayerKind::Conv2d { out_channels, kernel, stride, padding, groups, .. } = node.kind else {
        return None;
    };
    let cin = g.node(&node.inputs[0])?.out_shape?.channels;
    Some(ConvParams { cin, cout: out_channels, k: kernel, stride, pad: padding, groups })
}

/// Kernel of `b ∘ a`: `K[o, c, s1*u + p, s1*v + q] += B[o, m, u, v] * A[m, c, p, q]`.
fn compose_kernels<T: Scalar>(a: &ConvParams, wa: &[T], b: &ConvParams, wb: &[T], groups: usize) -> (Vec<T>, usize) {
    let kk = a.k + (b.k - 1) * a.stride;
    let (cga, mgb) = (a.cin / a.groups, b.cin / b.groups);
    let (ma, ob) = (a.cout / a.groups, b.cout / b.groups);
    let cgk = a.cin / groups;
    let okg = b.cout / groups;
    let mut k = vec![T::zero(); b.cout * cgk * kk * kk];
    for o in 0..b.cout {
        let bg = o / ob;
        let kg = o / okg;
        for ml in 0..mgb {
            let m = bg * mgb + ml;
            let ag = m / ma;
            for u in 0..b.k {
                for v in 0..b.k {
                    let bw = wb[((o * mgb + ml) * b.k + u) * b.k + v];
                    if bw == T::zero() {
                        continue;
                    }
                    for cl in 0..cga {
                        let c = ag * cga + cl;
                        let ck = c - kg * cgk;
                        for p in 0..a.k {
                            for q in 0..a.k {
                                let aw = wa[((m * cga + cl) * a.k + p) * a.k + q];
                                let y = a.stride * u + p;
                                let x = a.stride * v + q;
                                let idx = ((o * cgk + ck) * kk + y) * kk + x;
                                k[idx] = k[idx] + bw * aw;
                            }
                        }
                    }
                }
            }
        }
    }
    (k, kk)
}

fn composed_bias<T: Scalar>(b: &ConvParams, wb: &[T], bias_a: &[T], bias_b: &[T]) -> Vec<T> {
    let mgb = b.cin / b.groups;
    let ob = b.cout / b.groups;
    (0..b.cout)
        .map(|o| {
            let g = o / ob;
            let mut acc = bias_b[o];
            for ml in 0..mgb {
                let m = g * mgb + ml;
                let s: T = wb[(o * mgb + ml) * b.k * b.k..][..b.k * b.k].iter().copied().sum();
                acc = acc + s * bias_a[m];
            }
            acc
        })
        .collect()
}

/// Replaces `a -> b` by one conv when that is exact: `b` must be unpadded
/// and `a` must feed only `b`.
fn try_conv_chain<T: Scalar>(g: &mut NetworkGraph, w: &mut Params<T>, b_id: &str) -> Result<Option<String>> {
    let b_node = g.node(b_id).expect("exists");
    let a_id = b_node.inputs[0].clone();
    let (Some(a), Some(b)) = (conv_params(g, &a_id), conv_params(g, b_id)) else {
        return Ok(None);
    };
    if b.pad != 0 || g.consumers(&a_id).len() != 1 {
        return Ok(None);
    }
    let a_node = g.node(&a_id).expect("exists");
    let x_shape = g.node(&a_node.inputs[0]).expect("exists").shape()?;
    let kk = a.k + (b.k - 1) * a.stride;
    if kk > x_shape.height || kk > x_shape.width {
        return Ok(None);
    }
    let groups = if a.groups == b.groups { a.groups } else { 1 };
    let wa = tensor(w, &a_id, WEIGHT)?.data().to_vec();
    let wb = tensor(w, b_id, WEIGHT)?.data().to_vec();
    let (k, kk) = compose_kernels(&a, &wa, &b, &wb, groups);
    let bias = composed_bias(&b, &wb, &bias_or_zero(w, &a_id, a.cout), &bias_or_zero(w, b_id, b.cout));

    let mut trial = g.clone();
    let bi = trial.position(b_id).expect("exists");
    trial.nodes[bi].kind = LayerKind::Conv2d {
        out_channels: b.cout,
        kernel: kk,
        stride: a.stride * b.stride,
        padding: a.pad,
        groups,
        bias: true,
    };
    trial.nodes[bi].inputs = a_node.inputs.clone();
    let i = trial.position(&a_id).expect("exists");
    trial.nodes.remove(i);
    if trial.infer_shapes().is_err() || trial.node(b_id).and_then(|n| n.out_shape) != b_node.out_shape {
        return Ok(None);
    }
    *g = trial;
    w.remove(&param_name(&a_id, WEIGHT));
    w.remove(&param_name(&a_id, BIAS));
    w.insert(param_name(b_id, WEIGHT), Tensor::from_vec(&[b.cout, a.cin / groups, kk, kk], k)?);
    w.insert(param_name(b_id, BIAS), Tensor::from_vec(&[b.cout], bias)?);
    Ok(Some(format!("compose {a_id}+{b_id}")))
}

fn try_fc_chain<T: Scalar>(g: &mut NetworkGraph, w: &mut Params<T>, b_id: &str) -> Result<Option<String>> {
    let a_id = g.node(b_id).expect("exists").inputs[0].clone();
    let Some(a_node) = g.node(&a_id) else { return Ok(None) };
    let (LayerKind::FullyConnected { out_features: m, .. }, LayerKind::FullyConnected { out_features: o, .. }) =
        (&a_node.kind, &g.node(b_id).expect("exists").kind)
    else {
        return Ok(None);
    };
    if g.consumers(&a_id).len() != 1 {
        return Ok(None);
    }
    let (m, o) = (*m, *o);
    let d = g.node(&a_node.inputs[0]).expect("exists").shape()?.numel();
    let a_inputs = a_node.inputs.clone();
    let wa = tensor(w, &a_id, WEIGHT)?.data().to_vec();
    let wb = tensor(w, b_id, WEIGHT)?.data().to_vec();
    let ba = bias_or_zero(w, &a_id, m);
    let bb = bias_or_zero(w, b_id, o);
    let mut k = vec![T::zero(); o * d];
    let mut bias = bb;
    for r in 0..o {
        for j in 0..m {
            let s = wb[r * m + j];
            bias[r] = bias[r] + s * ba[j];
            for c in 0..d {
                k[r * d + c] = k[r * d + c] + s * wa[j * d + c];
            }
        }
    }
    let bi = g.position(b_id).expect("exists");
    g.nodes[bi].inputs = a_inputs;
    set_bias(&mut g.nodes[bi].kind);
    let ai = g.position(&a_id).expect("exists");
    g.nodes.remove(ai);
    g.infer_shapes()?;
    w.remove(&param_name(&a_id, WEIGHT));
    w.remove(&param_name(&a_id, BIAS));
    w.insert(param_name(b_id, WEIGHT), Tensor::from_vec(&[o, d], k)?);
    w.insert(param_name(b_id, BIAS), Tensor::from_vec(&[o], bias)?);
    Ok(Some(format!("compose {a_id}+{b_id}")))
}

/// Absorbs a residual add whose main path is one centred conv and whose
/// shortcut is the identity or a 1x1 unpadded conv with the same stride.
fn try_residual<T: Scalar>(g: &mut NetworkGraph, w: &mut Params<T>, add_id: &str) -> Result<Option<String>> {
    let add = g.node(add_id).expect("exists").clone();
    for (main_i, other_i) in [(0, 1), (1, 0)] {
        let c_id = add.inputs[main_i].clone();
        let other = add.inputs[other_i].clone();
        let Some(c) = conv_params(g, &c_id) else { continue };
        if c.groups != 1 || c.k % 2 == 0 || c.pad != (c.k - 1) / 2 || g.consumers(&c_id).len() != 1 {
            continue;
        }
        let x = g.node(&c_id).expect("exists").inputs[0].clone();
        let center = c.pad;
        // shortcut contribution as a (cout x cin) matrix plus bias
        let (shortcut, sbias, s_node): (Vec<T>, Vec<T>, Option<String>) = if other == x {
            if c.stride != 1 || c.cin != c.cout {
                continue;
            }
            let mut eye = vec![T::zero(); c.cout * c.cin];
            for i in 0..c.cout {
                eye[i * c.cin + i] = T::one();
            }
            (eye, vec![T::zero(); c.cout], None)
        } else {
            let Some(s) = conv_params(g, &other) else { continue };
            let s_in = &g.node(&other).expect("exists").inputs[0];
            if *s_in != x
                || s.k != 1
                || s.pad != 0
                || s.groups != 1
                || s.stride != c.stride
                || g.consumers(&other).len() != 1
            {
                continue;
            }
            (tensor(w, &other, WEIGHT)?.data().to_vec(), bias_or_zero(w, &other, s.cout), Some(other.clone()))
        };
        let mut k = tensor(w, &c_id, WEIGHT)?.data().to_vec();
        for o in 0..c.cout {
            for i in 0..c.cin {
                let idx = ((o * c.cin + i) * c.k + center) * c.k + center;
                k[idx] = k[idx] + shortcut[o * c.cin + i];
            }
        }
        let bias: Vec<T> = bias_or_zero(w, &c_id, c.cout).into_iter().zip(&sbias).map(|(a, &b)| a + b).collect();
        let output = g.output_id()?.to_string();
        if output == add_id {
            return Ok(None);
        }
        let ci = g.position(&c_id).expect("exists");
        set_bias(&mut g.nodes[ci].kind);
        let mut drop = HashSet::new();
        drop.insert(add_id.to_string());
        let ai = g.position(add_id).expect("exists");
        g.nodes[ai].inputs = vec![c_id.clone()];
        g.bypass_nodes(&drop)?;
        g.prune_unreachable(&output);
        g.infer_shapes()?;
        if let Some(s) = &s_node {
            w.remove(&param_name(s, WEIGHT));
            w.remove(&param_name(s, BIAS));
        }
        w.insert(param_name(&c_id, WEIGHT), Tensor::from_vec(&[c.cout, c.cin, c.k, c.k], k)?);
        w.insert(param_name(&c_id, BIAS), Tensor::from_vec(&[c.cout], bias)?);
        let what = s_node.map_or("identity".to_string(), |s| s);
        return Ok(Some(format!("absorb {add_id} ({what}) into {c_id}")));
    }
    Ok(None)
}

/// Merges adjacent linear layers until no exact merge remains. Expects
/// batch norms to be folded already. Patterns that cannot be merged exactly
/// (padded outer convs, pooling or activations in between, a conv feeding
/// the classifier) are left alone.
pub fn merge_adjacent_linear<T: Scalar>(g: &NetworkGraph, w: &Params<T>) -> Result<(NetworkGraph, Params<T>)> {
    if g.nodes.iter().any(|n| n.kind == LayerKind::BatchNorm) {
        return Err(Error::pass("merge_adjacent_linear", "fold batch norms first"));
    }
    let mut out = g.clone();
    let mut weights = w.clone();
    let mut log = Vec::new();
    loop {
        let mut fired = None;
        let ids: Vec<(String, LayerKind)> = out.nodes.iter().map(|n| (n.id.clone(), n.kind.clone())).collect();
        for (id, kind) in ids {
            fired = match kind {
                LayerKind::Conv2d { .. } => try_conv_chain(&mut out, &mut weights, &id)?,
                LayerKind::FullyConnected { .. } => try_fc_chain(&mut out, &mut weights, &id)?,
                LayerKind::Add => try_residual(&mut out, &mut weights, &id)?,
                _ => None,
            };
            if fired.is_some() {
                break;
            }
        }
        match fired {
            Some(entry) => log.push(entry),
            None => break,
        }
    }
    for entry in log {
        out.record(entry);
    }
    Ok((out, weights))
}

/// Total conv node count, shortcut convs included.
pub fn conv_count(g: &NetworkGraph) -> usize {
    g.count_kind(LayerKind::is_conv)
}
