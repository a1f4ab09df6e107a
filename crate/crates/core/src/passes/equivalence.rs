use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::{Model, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub n_samples: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Largest relative L-infinity output difference over `n_samples` standard
/// normal inputs: `max|y1 - y2| / max|y1|`.
pub fn equivalence_check<T: Scalar>(
    m1: &Model<T>,
    m2: &Model<T>,
    n_samples: usize,
    tolerance: f64,
    seed: u64,
) -> Result<EquivalenceReport> {
    if m1.graph.input_shape != m2.graph.input_shape {
        return Err(Error::Engine(format!(
            "input shapes differ: {} vs {}",
            m1.graph.input_shape, m2.graph.input_shape
        )));
    }
    let (o1, o2) = (m1.graph.output_shape()?, m2.graph.output_shape()?);
    if o1 != o2 {
        return Err(Error::Engine(format!("output shapes differ: {o1} vs {o2}")));
    }
    let d = m1.input_len();
    let out = o1.numel();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    const CHUNK: usize = 25;
    let mut done = 0;
    while done < n_samples {
        let n = CHUNK.min(n_samples - done);
        let x: Vec<T> = (0..n * d).map(|_| T::from_f64_lossy(StandardNormal.sample(&mut rng))).collect();
        let y1 = m1.forward(&x, n)?;
        let y2 = m2.forward(&x, n)?;
        for (a, b) in y1.chunks(out).zip(y2.chunks(out)) {
            let scale = a.iter().fold(0.0f64, |m, v| m.max(v.to_f64_lossy().abs()));
            let diff = a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p.to_f64_lossy() - q.to_f64_lossy()).abs()));
            let rel = if scale > 0.0 { diff / scale } else { diff };
            worst = worst.max(if rel.is_nan() { f64::INFINITY } else { rel });
        }
        done += n;
    }
    Ok(EquivalenceReport { n_samples, max_rel_error: worst, tolerance, pass: worst <= tolerance })
}
