use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::model::Grads;
use super::params::Params;
use super::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Schedule {
    /// Divide the rate by `divide` every `every` epochs.
    Step { divide: f64, every: usize },
    /// Half-cosine decay from `lr0` towards zero over the run.
    Cosine,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Step { divide: 10.0, every: 30 }
    }
}

impl Schedule {
    /// Learning rate for 0-based `epoch` of a run with `epochs` epochs.
    pub fn lr(&self, lr0: f64, epoch: usize, epochs: usize) -> f64 {
        match *self {
            Schedule::Step { divide, every } => lr0 / divide.powi((epoch / every.max(1)) as i32),
            Schedule::Cosine => lr0 * 0.5 * (1.0 + (PI * epoch as f64 / epochs.max(1) as f64).cos()),
        }
    }
}

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v = m*v + (g + wd*w)`, `w = w - lr*v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: BTreeMap::new() }
    }

    pub fn step(&mut self, params: &mut Params<T>, grads: &Grads<T>, lr: f64) {
        let m = T::from_f64_lossy(self.momentum);
        let wd = T::from_f64_lossy(self.weight_decay);
        let lr = T::from_f64_lossy(lr);
        for (name, g) in grads {
            let Some(w) = params.get_mut(name) else { continue };
            let v = self.velocity.entry(name.clone()).or_insert_with(|| vec![T::zero(); g.len()]);
            for ((wi, vi), &gi) in w.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = m * *vi + (gi + wd * *wi);
                *wi = *wi - lr * *vi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::tensor::Tensor;

    #[test]
    fn two_step_scalar_recurrence() {
        let mut p = Params::<f64>::new();
        p.insert("w", Tensor::from_vec(&[1], vec![1.0]).unwrap());
        let mut opt = Sgd::new(0.9, 0.01);
        let grads: Grads<f64> = [("w".to_string(), vec![0.5])].into();
        opt.step(&mut p, &grads, 0.1);
        // v1 = 0.5 + 0.01 = 0.51, w1 = 1 - 0.051
        assert!((p.get("w").unwrap().data()[0] - 0.949).abs() < 1e-15);
        opt.step(&mut p, &grads, 0.1);
        // v2 = 0.9*0.51 + 0.5 + 0.00949 = 0.96849, w2 = 0.949 - 0.096849
        assert!((p.get("w").unwrap().data()[0] - 0.852151).abs() < 1e-15);
    }

    #[test]
    fn schedules_closed_form() {
        let s = Schedule::default();
        assert_eq!(s.lr(0.1, 29, 120), 0.1);
        assert!((s.lr(0.1, 30, 120) - 0.01).abs() < 1e-18);
        let c = Schedule::Cosine;
        assert_eq!(c.lr(0.1, 0, 150), 0.1);
        assert!((c.lr(0.1, 75, 150) - 0.05).abs() < 1e-15);
    }
}
