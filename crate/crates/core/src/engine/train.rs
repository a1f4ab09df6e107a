use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{cross_entropy, kd_loss_with_grad, KdConfig};
use super::model::{argmax_rows, Mode, Model, Tape};
use super::optim::{Schedule, Sgd};
use super::tensor::Scalar;
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_lr0")]
    pub lr0: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub seed: u64,
    /// Random crop (pad 2) and horizontal flip.
    #[serde(default)]
    pub augment: bool,
}

fn d_lr0() -> f64 {
    0.1
}
fn d_batch() -> usize {
    128
}
fn d_momentum() -> f64 {
    0.9
}
fn d_wd() -> f64 {
    4e-4
}
fn d_epochs() -> usize {
    120
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: d_lr0(),
            batch_size: d_batch(),
            momentum: d_momentum(),
            weight_decay: d_wd(),
            epochs: d_epochs(),
            schedule: Schedule::default(),
            seed: 0,
            augment: false,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be non-negative, got {}", self.lr0)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Loss over the training set before the first update.
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_loss, |e| e.train_loss)
    }

    /// `epoch,lr,train_loss,train_acc,val_acc`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,train_acc,val_acc\n");
        for e in &self.epochs {
            let val = e.val_acc.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{val}", e.epoch, e.lr, e.train_loss, e.train_acc);
        }
        out
    }
}

/// A trained model acting as distillation teacher.
#[derive(Clone, Copy)]
pub struct Teacher<'a, T> {
    pub model: &'a Model<T>,
    pub kd: KdConfig,
    /// The same samples at the teacher's own resolution, for students whose
    /// input was downscaled. Teacher logits are then fixed (unaugmented).
    pub inputs: Option<&'a Dataset>,
}

impl<'a, T> Teacher<'a, T> {
    pub fn new(model: &'a Model<T>, kd: KdConfig) -> Self {
        Self { model, kd, inputs: None }
    }

    pub fn with_inputs(mut self, inputs: &'a Dataset) -> Self {
        self.inputs = Some(inputs);
        self
    }
}

fn gather<T: Scalar>(ds: &Dataset, idx: &[usize]) -> (Vec<T>, Vec<usize>) {
    let d = ds.shape.numel();
    let mut x = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        x.extend(ds.image(i).iter().map(|&v| T::from_f32(v).expect("finite")));
    }
    (x, idx.iter().map(|&i| ds.labels[i]).collect())
}

fn augment<T: Scalar>(x: &mut [T], ds: &Dataset, rng: &mut ChaCha8Rng) {
    const PAD: i64 = 2;
    let (c, h, w) = (ds.shape.channels, ds.shape.height, ds.shape.width);
    for img in x.chunks_mut(c * h * w) {
        let dy = rng.random_range(-PAD..=PAD) as isize;
        let dx = rng.random_range(-PAD..=PAD) as isize;
        let flip = rng.random_bool(0.5);
        let src = img.to_vec();
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let sx = if flip { w - 1 - xx } else { xx } as isize + dx;
                    let sy = y as isize + dy;
                    img[(ch * h + y) * w + xx] = if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                        T::zero()
                    } else {
                        src[(ch * h + sy as usize) * w + sx as usize]
                    };
                }
            }
        }
    }
}

/// Inference logits for the whole dataset, `len x classes`.
pub fn predict<T: Scalar>(model: &Model<T>, ds: &Dataset, batch: usize) -> Result<Vec<T>> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut out = Vec::with_capacity(ds.len() * model.num_outputs());
    for chunk in idx.chunks(batch.max(1)) {
        let (x, _) = gather::<T>(ds, chunk);
        out.extend(model.forward(&x, chunk.len())?);
    }
    Ok(out)
}

/// Top-1 accuracy in `[0, 1]`.
pub fn evaluate<T: Scalar>(model: &Model<T>, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let logits = predict(model, ds, 256)?;
    let pred = argmax_rows(&logits, model.num_outputs());
    let hits = pred.iter().zip(&ds.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / ds.len() as f64)
}

fn batch_loss<T: Scalar>(
    logits: &[T],
    labels: &[usize],
    classes: usize,
    teacher: Option<(&[T], &KdConfig)>,
) -> Result<(T, Vec<T>)> {
    match teacher {
        Some((t, kd)) => kd_loss_with_grad(logits, t, labels, classes, kd),
        None => cross_entropy(logits, labels, classes),
    }
}

fn batches(n: usize, size: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    // a trailing batch of one sample has no batch statistics; fold it into
    // the previous batch instead
    let mut bounds: Vec<usize> = (0..n).step_by(size).collect();
    if n - bounds.last().copied().unwrap_or(0) == 1 && bounds.len() > 1 {
        bounds.pop();
    }
    bounds.push(n);
    (0..bounds.len() - 1).map(move |i| bounds[i]..bounds[i + 1])
}

/// Mini-batch SGD, optionally distilling from `teacher`. Deterministic for a
/// fixed `cfg.seed`.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    teacher: Option<Teacher<'_, T>>,
) -> Result<TrainHistory> {
    cfg.check()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.shape != model.graph.input_shape {
        return Err(Error::Engine(format!(
            "dataset images are {}, model expects {}",
            data.shape, model.graph.input_shape
        )));
    }
    let classes = model.num_outputs();
    let n_samples = data.len();
    if let Some(t) = &teacher {
        t.kd.check()?;
        if t.model.num_outputs() != classes {
            return Err(Error::Engine("teacher and student disagree on class count".into()));
        }
    }
    // Without augmentation the teacher sees fixed inputs, so its logits are
    // computed once.
    let fixed_teacher = match &teacher {
        Some(Teacher { inputs: Some(ds), .. }) if ds.len() != n_samples || ds.labels != data.labels => {
            return Err(Error::Engine("teacher inputs do not match the training samples".into()));
        }
        Some(t @ Teacher { inputs: Some(ds), .. }) => Some(predict(t.model, ds, 256)?),
        Some(t) if !cfg.augment => Some(predict(t.model, data, 256)?),
        _ => None,
    };
    let teacher_rows = |idx: &[usize], x: &[T]| -> Result<Option<Vec<T>>> {
        Ok(match (&teacher, &fixed_teacher) {
            (_, Some(all)) => {
                Some(idx.iter().flat_map(|&i| all[i * classes..(i + 1) * classes].iter().copied()).collect())
            }
            (Some(t), None) => Some(t.model.forward(x, idx.len())?),
            (None, None) => None,
        })
    };
    let kd = teacher.as_ref().map(|t| t.kd);

    let n = data.len();
    let bs = cfg.batch_size.min(n);
    let mut tape = Tape::new();

    let mut initial = 0.0;
    let order: Vec<usize> = (0..n).collect();
    for r in batches(n, bs) {
        let idx = &order[r];
        let (x, y) = gather::<T>(data, idx);
        let logits = model.forward_train(&x, idx.len(), Mode::TrainFrozen, &mut tape)?;
        let t = teacher_rows(idx, &x)?;
        let (l, _) = batch_loss(&logits, &y, classes, t.as_deref().zip(kd.as_ref()))?;
        initial += l.to_f64_lossy() * idx.len() as f64;
    }
    let initial_loss = initial / n as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order = order;
    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr(cfg.lr0, epoch, cfg.epochs);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for r in batches(n, bs) {
            let idx = &order[r];
            let (mut x, y) = gather::<T>(data, idx);
            if cfg.augment {
                augment(&mut x, data, &mut rng);
            }
            let logits = model.forward_train(&x, idx.len(), Mode::Train, &mut tape)?;
            let t = teacher_rows(idx, &x)?;
            let (l, dlogits) = batch_loss(&logits, &y, classes, t.as_deref().zip(kd.as_ref()))?;
            let l = l.to_f64_lossy();
            if !l.is_finite() {
                return Err(Error::TrainingDiverged(format!("loss {l} at epoch {epoch}")));
            }
            loss_sum += l * idx.len() as f64;
            hits += argmax_rows(&logits, classes).iter().zip(&y).filter(|(p, t)| p == t).count();
            let grads = model.backward(&tape, &dlogits)?;
            opt.step(&mut model.params, &grads, lr);
        }
        let val_acc = match val {
            Some(v) if !v.is_empty() => Some(evaluate(model, v)?),
            _ => None,
        };
        epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / n as f64,
            train_acc: hits as f64 / n as f64,
            val_acc,
        });
    }
    Ok(TrainHistory { initial_loss, epochs })
}
