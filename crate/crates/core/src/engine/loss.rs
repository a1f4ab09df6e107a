use serde::{Deserialize, Serialize};

use super::tensor::Scalar;
use crate::error::{Error, Result};

/// Distillation settings. The teacher itself is passed to the trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KdConfig {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Weight of the hard-label cross-entropy; the soft term gets the rest.
    #[serde(default = "default_hard_weight")]
    pub hard_weight: f64,
}

fn default_temperature() -> f64 {
    4.0
}

fn default_hard_weight() -> f64 {
    0.9
}

impl Default for KdConfig {
    fn default() -> Self {
        Self { temperature: default_temperature(), hard_weight: default_hard_weight() }
    }
}

impl KdConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.hard_weight) {
            return Err(Error::Config(format!("hard_weight must lie in [0, 1], got {}", self.hard_weight)));
        }
        Ok(())
    }
}

fn log_softmax_row<T: Scalar>(row: &[T], inv_t: T) -> Vec<T> {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v * inv_t));
    let lse = row.iter().map(|&v| (v * inv_t - max).exp()).sum::<T>().ln() + max;
    row.iter().map(|&v| v * inv_t - lse).collect()
}

/// Row-wise softmax of `logits / temperature`.
pub fn softmax<T: Scalar>(logits: &[T], classes: usize, temperature: T) -> Vec<T> {
    let inv_t = T::one() / temperature;
    logits.chunks(classes).flat_map(|row| log_softmax_row(row, inv_t).into_iter().map(T::exp)).collect()
}

fn check_labels(n: usize, labels: &[usize], classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Engine(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Engine(format!("label {l} out of range for {classes} classes")));
    }
    Ok(())
}

/// Mean cross-entropy over the batch and its gradient with respect to the logits.
pub fn cross_entropy<T: Scalar>(logits: &[T], labels: &[usize], classes: usize) -> Result<(T, Vec<T>)> {
    let n = logits.len() / classes;
    check_labels(n, labels, classes)?;
    let nt = T::from_usize(n).expect("n");
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &y) in logits.chunks(classes).zip(labels) {
        let ls = log_softmax_row(row, T::one());
        loss = loss - ls[y];
        for (k, l) in ls.into_iter().enumerate() {
            let ind = if k == y { T::one() } else { T::zero() };
            grad.push((l.exp() - ind) / nt);
        }
    }
    Ok((loss / nt, grad))
}

/// `hw * CE(student, labels) + (1 - hw) * T^2 * KL(p_teacher || p_student)`
/// averaged over the batch, with its gradient with respect to the student logits.
pub fn kd_loss_with_grad<T: Scalar>(
    student: &[T],
    teacher: &[T],
    labels: &[usize],
    classes: usize,
    kd: &KdConfig,
) -> Result<(T, Vec<T>)> {
    kd.check()?;
    if student.len() != teacher.len() {
        return Err(Error::Engine(format!(
            "student and teacher logits differ in size ({} vs {})",
            student.len(),
            teacher.len()
        )));
    }
    let (ce, ce_grad) = cross_entropy(student, labels, classes)?;
    let n = T::from_usize(student.len() / classes).expect("n");
    let t = T::from_f64_lossy(kd.temperature);
    let hw = T::from_f64_lossy(kd.hard_weight);
    let soft_w = T::one() - hw;
    let inv_t = T::one() / t;
    let mut kl = T::zero();
    let mut grad = Vec::with_capacity(student.len());
    for (srow, trow) in student.chunks(classes).zip(teacher.chunks(classes)) {
        let ls = log_softmax_row(srow, inv_t);
        let lt = log_softmax_row(trow, inv_t);
        for k in 0..classes {
            let pt = lt[k].exp();
            if pt > T::zero() {
                kl = kl + pt * (lt[k] - ls[k]);
            }
            // d/dz of T^2 * KL is T * (p_s - p_t)
            grad.push(soft_w * t * (ls[k].exp() - pt) / n);
        }
    }
    let loss = hw * ce + soft_w * t * t * kl / n;
    for (g, c) in grad.iter_mut().zip(ce_grad) {
        *g = *g + hw * c;
    }
    Ok((loss, grad))
}

pub fn kd_loss<T: Scalar>(student: &[T], teacher: &[T], labels: &[usize], classes: usize, kd: &KdConfig) -> Result<T> {
    kd_loss_with_grad(student, teacher, labels, classes, kd).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&[1.0f64, 2.0, 3.0, -100.0, 0.0, 100.0], 3, 1.0);
        assert!((p[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[3..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hard_weight_one_is_cross_entropy() {
        let s = [2.0f64, -1.0, 0.5, 0.0, 1.0, 3.0];
        let t = [0.0f64, 9.0, 0.0, 1.0, 1.0, 1.0];
        let kd = KdConfig { temperature: 3.0, hard_weight: 1.0 };
        let (a, ga) = kd_loss_with_grad(&s, &t, &[0, 2], 3, &kd).unwrap();
        let (b, gb) = cross_entropy(&s, &[0, 2], 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
    }

    #[test]
    fn nonpositive_temperature_is_rejected() {
        let kd = KdConfig { temperature: 0.0, hard_weight: 0.9 };
        assert!(kd_loss(&[0.0f32; 2], &[0.0; 2], &[0], 2, &kd).is_err());
    }

    #[test]
    fn kd_gradient_matches_finite_differences() {
        let s = [0.3f64, -1.2, 2.0, 0.1];
        let t = [1.0f64, 0.0, -0.5, 0.2];
        let kd = KdConfig { temperature: 2.5, hard_weight: 0.3 };
        let (_, g) = kd_loss_with_grad(&s, &t, &[2], 4, &kd).unwrap();
        for k in 0..4 {
            let mut p = s;
            let mut m = s;
            p[k] += 1e-6;
            m[k] -= 1e-6;
            let num = (kd_loss(&p, &t, &[2], 4, &kd).unwrap() - kd_loss(&m, &t, &[2], 4, &kd).unwrap()) / 2e-6;
            assert!((num - g[k]).abs() < 1e-8, "{k}: {num} vs {}", g[k]);
        }
    }
}
