use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// (kilo-ReLU, seconds) latencies of ResNet18 variants on CIFAR-100 under a
/// garbled-circuit ReLU protocol; the default calibration set.
pub const REFERENCE_POINTS: [(f64, f64); 10] = [
    (229.38, 4.61),
    (196.61, 3.94),
    (114.69, 2.38),
    (57.34, 1.37),
    (49.15, 1.19),
    (28.67, 0.74),
    (24.57, 0.56),
    (14.33, 0.52),
    (12.28, 0.45),
    (7.17, 0.21),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitWeighting {
    /// Ordinary least squares.
    #[default]
    Ordinary,
    /// Weights `1/y^2`: minimizes squared relative error.
    Relative,
}

/// `seconds = slope * kilo_relus + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub fit_points: Vec<(f64, f64)>,
    #[serde(default)]
    pub weighting: FitWeighting,
}

impl LatencyModel {
    /// OLS fit over [`REFERENCE_POINTS`].
    pub fn reference() -> Self {
        fit_latency_model(&REFERENCE_POINTS).expect("reference points are well-conditioned")
    }

    pub fn estimate_kilo(&self, kilo_relus: f64) -> f64 {
        (self.slope * kilo_relus + self.intercept).max(0.0)
    }
}

pub fn fit_latency_model(points: &[(f64, f64)]) -> Result<LatencyModel> {
    fit_latency_model_weighted(points, FitWeighting::Ordinary)
}

/// Weighted least-squares line. The intercept is clamped at zero; `r_squared`
/// is the ordinary coefficient of determination of the returned line.
pub fn fit_latency_model_weighted(points: &[(f64, f64)], weighting: FitWeighting) -> Result<LatencyModel> {
    if points.len() < 2 {
        return Err(Error::Config("latency fit needs at least two points".into()));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Config("latency points must be finite".into()));
    }
    let weight = |y: f64| -> Result<f64> {
        match weighting {
            FitWeighting::Ordinary => Ok(1.0),
            FitWeighting::Relative if y > 0.0 => Ok(1.0 / (y * y)),
            FitWeighting::Relative => Err(Error::Config("relative weighting needs positive latencies".into())),
        }
    };
    let mut sw = 0.0;
    let (mut mx, mut my) = (0.0, 0.0);
    for &(x, y) in points {
        let w = weight(y)?;
        sw += w;
        mx += w * x;
        my += w * y;
    }
    mx /= sw;
    my /= sw;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        let w = weight(y)?;
        sxx += w * (x - mx) * (x - mx);
        sxy += w * (x - mx) * (y - my);
    }
    if sxx <= f64::EPSILON * mx.abs().max(1.0) {
        return Err(Error::Config("latency fit is degenerate: all ReLU counts are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = (my - slope * mx).max(0.0);

    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let ss_tot: f64 = points.iter().map(|&(_, y)| (y - mean_y).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|&(x, y)| (y - (slope * x + intercept)).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    Ok(LatencyModel { slope, intercept, r_squared, fit_points: points.to_vec(), weighting })
}

/// `max(0, slope * kilo + intercept)` for a raw ReLU count.
pub fn estimate_latency(model: &LatencyModel, relu_count: u64) -> f64 {
    model.estimate_kilo(relu_count as f64 / 1000.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let m = fit_latency_model(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]).unwrap();
        assert!((m.slope - 2.0).abs() < 1e-12 && (m.intercept - 1.0).abs() < 1e-12);
        assert_eq!(m.r_squared, 1.0);
        assert_eq!(estimate_latency(&m, 0), 1.0);
    }

    #[test]
    fn two_points_interpolate() {
        let m = fit_latency_model(&[(1.0, 2.0), (3.0, 3.0)]).unwrap();
        assert!((m.estimate_kilo(2.0) - 2.5).abs() < 1e-12);
        assert!((m.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_x_is_rejected() {
        assert!(fit_latency_model(&[(1.0, 2.0), (1.0, 3.0)]).is_err());
        assert!(fit_latency_model(&[(1.0, 2.0)]).is_err());
    }

    #[test]
    fn negative_intercept_is_clamped() {
        let m = fit_latency_model(&[(1.0, 0.0), (2.0, 10.0)]).unwrap();
        assert_eq!(m.intercept, 0.0);
        assert_eq!(m.estimate_kilo(0.0), 0.0);
    }
}
