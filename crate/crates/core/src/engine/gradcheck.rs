use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::cross_entropy;
use super::model::{Grads, Mode, Model, Tape};
use super::params::is_trainable;
use crate::error::{Error, Result};

/// Gradients smaller than this are compared on an absolute scale.
const GRAD_FLOOR: f64 = 1e-4;

/// Labelled batch in the model's input layout.
pub struct Batch<'a> {
    pub x: &'a [f64],
    pub labels: &'a [usize],
}

impl Batch<'_> {
    fn n(&self) -> usize {
        self.labels.len()
    }
}

fn loss(model: &mut Model<f64>, b: &Batch<'_>, tape: &mut Tape<f64>) -> Result<(f64, Vec<f64>)> {
    let logits = model.forward_train(b.x, b.n(), Mode::TrainFrozen, tape)?;
    cross_entropy(&logits, b.labels, model.num_outputs())
}

/// Max relative error between backward and central differences, over up to
/// `per_tensor` sampled entries of every trainable tensor. BN runs on batch
/// statistics.
pub fn grad_check(model: &Model<f64>, batch: &Batch<'_>, eps: f64, per_tensor: usize) -> Result<f64> {
    grad_check_with(model, batch, eps, per_tensor, |_| {})
}

/// As [`grad_check`], with `corrupt` applied to the analytic gradients first.
pub fn grad_check_with(
    model: &Model<f64>,
    batch: &Batch<'_>,
    eps: f64,
    per_tensor: usize,
    corrupt: impl Fn(&mut Grads<f64>),
) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    let mut m = model.clone();
    let mut tape = Tape::new();
    let (_, dlogits) = loss(&mut m, batch, &mut tape)?;
    let mut grads = m.backward(&tape, &dlogits)?;
    corrupt(&mut grads);

    let mut rng = ChaCha8Rng::seed_from_u64(0x6752_4144);
    let names: Vec<String> = m.params.iter().filter(|(n, _)| is_trainable(n)).map(|(n, _)| n.clone()).collect();
    let mut worst = 0.0f64;
    for name in names {
        let len = m.params.get(&name).expect("listed").len();
        let picks: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..len)).collect()
        };
        for i in picks {
            let orig = m.params.get(&name).expect("listed").data()[i];
            m.params.get_mut(&name).expect("listed").data_mut()[i] = orig + eps;
            let (lp, _) = loss(&mut m, batch, &mut tape)?;
            m.params.get_mut(&name).expect("listed").data_mut()[i] = orig - eps;
            let (lm, _) = loss(&mut m, batch, &mut tape)?;
            m.params.get_mut(&name).expect("listed").data_mut()[i] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            let analytic = grads[&name][i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
