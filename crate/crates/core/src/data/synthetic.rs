use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Isotropic Gaussian class blobs, with the target domain obtained by the
/// affine map `x -> scale * R x + translation`. `R` rotates every coordinate
/// pair `(0,1), (2,3), ...` by `rotation_deg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSpec {
    pub class_count: usize,
    pub dim: usize,
    /// Distance of every class mean from the origin.
    pub separation: f64,
    pub noise_std: f64,
    pub rotation_deg: f64,
    /// Empty means no shift; a single value is broadcast to every axis.
    pub translation: Vec<f64>,
    pub scale: f64,
    pub n_source: usize,
    pub n_target: usize,
    pub seed: u64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            class_count: 3,
            dim: 10,
            separation: 3.0,
            noise_std: 1.0,
            rotation_deg: 0.0,
            translation: Vec::new(),
            scale: 1.0,
            n_source: 600,
            n_target: 600,
            seed: 0,
        }
    }
}

impl ShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Spec(format!("need at least 2 classes, got {}", self.class_count)));
        }
        if self.dim == 0 {
            return Err(Error::Spec("dimension must be positive".into()));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Spec(format!("degenerate covariance: noise_std = {}", self.noise_std)));
        }
        if self.scale == 0.0 || !self.scale.is_finite() {
            return Err(Error::Spec(format!("non-invertible scale {}", self.scale)));
        }
        if !matches!(self.translation.len(), 0 | 1) && self.translation.len() != self.dim {
            return Err(Error::Spec(format!(
                "translation has {} entries for dimension {}",
                self.translation.len(),
                self.dim
            )));
        }
        if self.n_source == 0 || self.n_target == 0 {
            return Err(Error::Spec("sample counts must be positive".into()));
        }
        Ok(())
    }

    fn translation_at(&self, axis: usize) -> f64 {
        match self.translation.len() {
            0 => 0.0,
            1 => self.translation[0],
            _ => self.translation[axis],
        }
    }

    /// Applies the source-to-target map to one point.
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let mut out = x.to_vec();
        for pair in out.chunks_exact_mut(2) {
            let (a, b) = (pair[0], pair[1]);
            pair[0] = cos * a - sin * b;
            pair[1] = sin * a + cos * b;
        }
        for (axis, v) in out.iter_mut().enumerate() {
            *v = self.scale * *v + self.translation_at(axis);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ShiftedGaussians {
    pub source: LabeledSet,
    /// Labels kept for evaluation only.
    pub target: LabeledSet,
    pub source_means: Vec<Vec<f64>>,
    pub target_means: Vec<Vec<f64>>,
}

fn sample_blobs(rng: &mut ChaCha8Rng, means: &[Vec<f64>], std: f64, n: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let k = means.len();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % k;
        let row = means[y]
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + std * z
            })
            .collect();
        rows.push(row);
        labels.push(y);
    }
    (rows, labels)
}

/// Draws the labeled source set and the shifted target set. Classes are
/// balanced (sample `i` has class `i mod K`).
pub fn generate_shifted_gaussians(spec: &ShiftSpec) -> Result<ShiftedGaussians> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let source_means: Vec<Vec<f64>> = (0..spec.class_count)
        .map(|_| {
            let dir: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            dir.iter().map(|v| spec.separation * v / norm).collect()
        })
        .collect();
    let target_means: Vec<Vec<f64>> = source_means.iter().map(|m| spec.transform(m)).collect();

    let (src_rows, src_labels) = sample_blobs(&mut rng, &source_means, spec.noise_std, spec.n_source);
    let (tgt_raw, tgt_labels) = sample_blobs(&mut rng, &source_means, spec.noise_std, spec.n_target);
    let tgt_rows: Vec<Vec<f64>> = tgt_raw.iter().map(|r| spec.transform(r)).collect();

    Ok(ShiftedGaussians {
        source: LabeledSet::new(Tensor::from_rows(&src_rows)?, src_labels, spec.class_count)?,
        target: LabeledSet::new(Tensor::from_rows(&tgt_rows)?, tgt_labels, spec.class_count)?,
        source_means,
        target_means,
    })
}
