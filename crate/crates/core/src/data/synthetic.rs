use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Distance of every class center from the origin.
pub const CENTER_RADIUS: f64 = 3.0;

// Class centers do not depend on the sampling seed, so train and test sets
// (and different sources) share them.
const CENTER_SEED: u64 = 0x000c_e47e_75ee_d000;

/// `x ↦ A·x + b` applied to every feature row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    /// Row-major `[D, D]`.
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
}

impl AffineTransform {
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        Self {
            matrix,
            offset: vec![0.0; dim],
        }
    }

    /// `A = I + strength·N(0,1)/√D`, `b = strength·N(0,1)`, deterministic per seed.
    pub fn random(dim: usize, strength: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Self::identity(dim);
        let s = strength / (dim as f64).sqrt();
        for v in &mut t.matrix {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += s * z;
        }
        for v in &mut t.offset {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = strength * z;
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[i * d..(i + 1) * d];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.offset[i];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub spread: f64,
    #[serde(default)]
    pub transform: Option<AffineTransform>,
    pub seed: u64,
}

/// Deterministic unit directions scaled by [`CENTER_RADIUS`], one per class.
pub fn class_centers(classes: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(CENTER_SEED ^ ((dim as u64) << 32));
    (0..classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                break v.iter().map(|x| CENTER_RADIUS * x / norm).collect();
            }
        })
        .collect()
}

/// Isotropic Gaussian blobs, `per_class` samples per class in class-major order.
pub fn generate_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<Dataset<T>> {
    if spec.classes < 2 || spec.per_class == 0 || spec.dim == 0 {
        return Err(Error::InvalidDataset(format!(
            "synthetic data needs ≥ 2 classes, ≥ 1 sample per class and ≥ 1 dimension; got {spec:?}"
        )));
    }
    if spec.spread < 0.0 || !spec.spread.is_finite() {
        return Err(Error::InvalidDataset(format!("bad spread {}", spec.spread)));
    }
    if let Some(t) = &spec.transform {
        if t.dim() != spec.dim || t.matrix.len() != spec.dim * spec.dim {
            return Err(Error::InvalidDataset("affine transform has the wrong size".into()));
        }
    }
    let centers = class_centers(spec.classes, spec.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.classes * spec.per_class;
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    let mut point = vec![0.0; spec.dim];
    let mut mapped = vec![0.0; spec.dim];
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..spec.per_class {
            for (p, &m) in point.iter_mut().zip(center) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *p = m + spec.spread * z;
            }
            let row = match &spec.transform {
                Some(t) => {
                    t.apply(&point, &mut mapped);
                    &mapped
                }
                None => &point,
            };
            data.extend(row.iter().map(|&v| T::of(v)));
            labels.push(c);
        }
    }
    Dataset::new(Tensor::new(vec![n, spec.dim], data)?, labels, spec.classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(spread: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            classes: 3,
            dim: 4,
            per_class: 10,
            spread,
            transform: None,
            seed,
        }
    }

    #[test]
    fn zero_spread_hits_centers() {
        let ds: Dataset = generate_synthetic(&spec(0.0, 1)).unwrap();
        let centers = class_centers(3, 4);
        for i in 0..ds.len() {
            assert_eq!(ds.features().row(i), centers[ds.labels()[i]].as_slice());
        }
        for c in &centers {
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - CENTER_RADIUS).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a: Dataset = generate_synthetic(&spec(0.5, 9)).unwrap();
        let b: Dataset = generate_synthetic(&spec(0.5, 9)).unwrap();
        let c: Dataset = generate_synthetic(&spec(0.5, 10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_degenerate_specs() {
        let mut s = spec(0.5, 1);
        s.classes = 1;
        assert!(generate_synthetic::<f64>(&s).is_err());
        let mut s = spec(0.5, 1);
        s.transform = Some(AffineTransform::identity(3));
        assert!(generate_synthetic::<f64>(&s).is_err());
    }

    #[test]
    fn identity_transform_is_a_no_op() {
        let mut s = spec(0.7, 4);
        let plain: Dataset = generate_synthetic(&s).unwrap();
        s.transform = Some(AffineTransform::identity(4));
        let mapped: Dataset = generate_synthetic(&s).unwrap();
        assert_eq!(plain, mapped);
    }

    /// Least-squares linear classifier on two blobs, solved through the
    /// normal equations of `[x, 1]·W ≈ one_hot(y)`.
    #[test]
    fn two_blobs_are_linearly_separable() {
        let s = SyntheticSpec {
            classes: 2,
            dim: 2,
            per_class: 200,
            spread: 0.5,
            transform: None,
            seed: 17,
        };
        let ds: Dataset = generate_synthetic(&s).unwrap();
        // 3x3 normal matrix and 3x2 right-hand side
        let mut ata = [[0.0f64; 3]; 3];
        let mut atb = [[0.0f64; 2]; 3];
        for i in 0..ds.len() {
            let r = ds.features().row(i);
            let x = [r[0], r[1], 1.0];
            for a in 0..3 {
                for b in 0..3 {
                    ata[a][b] += x[a] * x[b];
                }
                atb[a][ds.labels()[i]] += x[a];
            }
        }
        let w = solve3(ata, atb);
        let correct = (0..ds.len())
            .filter(|&i| {
                let r = ds.features().row(i);
                let score = |c: usize| r[0] * w[0][c] + r[1] * w[1][c] + w[2][c];
                let pred = if score(1) > score(0) { 1 } else { 0 };
                pred == ds.labels()[i]
            })
            .count();
        assert!(correct as f64 / ds.len() as f64 > 0.95);
    }

    #[allow(clippy::needless_range_loop)]
    fn solve3(mut a: [[f64; 3]; 3], mut b: [[f64; 2]; 3]) -> [[f64; 2]; 3] {
        for col in 0..3 {
            let pivot = (col..3)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, pivot);
            b.swap(col, pivot);
            for row in 0..3 {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for k in 0..3 {
                        a[row][k] -= f * a[col][k];
                    }
                    for k in 0..2 {
                        b[row][k] -= f * b[col][k];
                    }
                }
            }
        }
        let mut x = [[0.0; 2]; 3];
        for i in 0..3 {
            for k in 0..2 {
                x[i][k] = b[i][k] / a[i][i];
            }
        }
        x
    }
}
