use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Labelled feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar = f64> {
    features: Tensor<T>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(features: Tensor<T>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let (n, _) = features.matrix_dims()?;
        if labels.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{n} feature rows but {} labels",
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::InvalidDataset("no classes".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidDataset(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows at `indices`, in the given order. `indices` must be non-empty.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidDataset("empty subset".into()));
        }
        Ok(Self {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        })
    }

    /// Sample indices grouped by class, ascending within each class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        by_class
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn feature_means(&self) -> Vec<T> {
        let n = T::of_usize(self.len());
        let mut means = vec![T::zero(); self.dim()];
        for r in 0..self.len() {
            for (m, &v) in means.iter_mut().zip(self.features.row(r)) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Concatenates datasets sharing width and class count.
    pub fn concat(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidDataset("nothing to concatenate".into()))?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dim() != first.dim() || p.num_classes != first.num_classes {
                return Err(Error::InvalidDataset(
                    "datasets differ in width or class count".into(),
                ));
            }
            data.extend_from_slice(p.features.data());
            labels.extend_from_slice(&p.labels);
        }
        let n = labels.len();
        Self::new(
            Tensor::new(vec![n, first.dim()], data)?,
            labels,
            first.num_classes,
        )
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            features: self.features.cast(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        }
    }
}

/// Splits off a validation set by sampling `fraction` of every class.
///
/// Each class keeps at least one training sample. Both outputs list rows in
/// ascending original order; the validation set is `None` when empty.
pub fn stratified_split<T: Scalar>(
    ds: &Dataset<T>,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset<T>, Option<Dataset<T>>)> {
    if !(0.0..=0.5).contains(&fraction) {
        return Err(Error::Config(format!(
            "validation fraction must lie in [0, 0.5], got {fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for mut idx in ds.class_indices() {
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let take = ((fraction * idx.len() as f64).round() as usize).min(idx.len() - 1);
        val.extend_from_slice(&idx[..take]);
        train.extend_from_slice(&idx[take..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    let val = if val.is_empty() {
        None
    } else {
        Some(ds.subset(&val)?)
    };
    Ok((ds.subset(&train)?, val))
}
