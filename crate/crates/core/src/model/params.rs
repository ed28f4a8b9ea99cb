use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Role of a parameter tensor inside its layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
    BnRunningMean,
    BnRunningVar,
}

impl ParamKind {
    pub fn is_bn(self) -> bool {
        matches!(
            self,
            ParamKind::BnScale
                | ParamKind::BnShift
                | ParamKind::BnRunningMean
                | ParamKind::BnRunningVar
        )
    }

    /// Running statistics are carried along but never receive gradient updates.
    pub fn is_trainable(self) -> bool {
        !matches!(self, ParamKind::BnRunningMean | ParamKind::BnRunningVar)
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Weight => "weight",
            ParamKind::Bias => "bias",
            ParamKind::BnScale => "scale",
            ParamKind::BnShift => "shift",
            ParamKind::BnRunningMean => "running_mean",
            ParamKind::BnRunningVar => "running_var",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "weight" => ParamKind::Weight,
            "bias" => ParamKind::Bias,
            "scale" => ParamKind::BnScale,
            "shift" => ParamKind::BnShift,
            "running_mean" => ParamKind::BnRunningMean,
            "running_var" => ParamKind::BnRunningVar,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Scalar = f64> {
    pub layer: usize,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn is_bn(&self) -> bool {
        self.kind.is_bn()
    }
}

/// Ordered collection of every tensor a network owns, including BN running
/// statistics. Gradients and optimizer moments use the same structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T: Scalar = f64> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new(params: Vec<Param<T>>) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, layer: usize, kind: ParamKind) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .find(|p| p.layer == layer && p.kind == kind)
            .map(|p| &p.tensor)
    }

    pub fn get_mut(&mut self, layer: usize, kind: ParamKind) -> Option<&mut Tensor<T>> {
        self.params
            .iter_mut()
            .find(|p| p.layer == layer && p.kind == kind)
            .map(|p| &mut p.tensor)
    }

    pub(crate) fn expect(&self, layer: usize, kind: ParamKind) -> Result<&Tensor<T>> {
        self.get(layer, kind).ok_or_else(|| {
            Error::Incongruent(format!("missing {} for layer {layer}", kind.name()))
        })
    }

    /// Same tensors, in the same order, with the same shapes.
    pub fn is_congruent(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.layer == b.layer && a.kind == b.kind && a.tensor.shape() == b.tensor.shape()
            })
    }

    pub fn check_congruent(&self, other: &Self) -> Result<()> {
        if self.is_congruent(other) {
            return Ok(());
        }
        let detail = self
            .params
            .iter()
            .zip(&other.params)
            .find(|(a, b)| {
                a.layer != b.layer || a.kind != b.kind || a.tensor.shape() != b.tensor.shape()
            })
            .map(|(a, b)| {
                format!(
                    "layer {} {} {:?} vs layer {} {} {:?}",
                    a.layer,
                    a.kind.name(),
                    a.tensor.shape(),
                    b.layer,
                    b.kind.name(),
                    b.tensor.shape()
                )
            })
            .unwrap_or_else(|| {
                format!("{} tensors vs {} tensors", self.params.len(), other.params.len())
            });
        Err(Error::Incongruent(detail))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    layer: p.layer,
                    kind: p.kind,
                    tensor: Tensor::zeros(p.tensor.shape()),
                })
                .collect(),
        }
    }

    /// `self += alpha * other`, optionally restricted to trainable tensors.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_congruent(other)?;
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.tensor.axpy(alpha, &b.tensor)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        for p in &mut self.params {
            p.tensor.scale(alpha);
        }
    }

    pub fn squared_norm(&self) -> T {
        self.params.iter().map(|p| p.tensor.squared_norm()).sum()
    }

    pub fn norm(&self) -> T {
        self.squared_norm().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.tensor.is_finite())
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Overwrites every BN-tagged tensor with the one from `source`.
    pub fn copy_bn_from(&mut self, source: &Self) -> Result<()> {
        self.check_congruent(source)?;
        for (dst, src) in self.params.iter_mut().zip(&source.params) {
            if dst.is_bn() {
                dst.tensor = src.tensor.clone();
            }
        }
        Ok(())
    }

    pub fn zero_bn(&mut self) {
        for p in self.params.iter_mut().filter(|p| p.is_bn()) {
            p.tensor.fill(T::zero());
        }
    }

    pub fn has_bn(&self) -> bool {
        self.params.iter().any(Param::is_bn)
    }

    /// Every value of the set, in tensor order.
    pub fn flatten(&self) -> Vec<T> {
        self.params
            .iter()
            .flat_map(|p| p.tensor.data().iter().copied())
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    layer: p.layer,
                    kind: p.kind,
                    tensor: p.tensor.cast(),
                })
                .collect(),
        }
    }
}

/// Element-wise `Σ wᵢ·setsᵢ`.
///
/// With `exclude_bn`, BN-tagged tensors are copied from the first set.
/// Each value is accumulated as `x₀ + Σ wᵢ (xᵢ − x₀)`, which reproduces `x₀`
/// exactly whenever all inputs agree at that position.
pub fn weighted_average<T: Scalar>(
    sets: &[&ParamSet<T>],
    weights: &[T],
    exclude_bn: bool,
) -> Result<ParamSet<T>> {
    let first = *sets
        .first()
        .ok_or_else(|| Error::InvalidWeights("no parameter sets to average".into()))?;
    if sets.len() != weights.len() {
        return Err(Error::InvalidWeights(format!(
            "{} parameter sets but {} weights",
            sets.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| w < T::zero() || !w.is_finite()) {
        return Err(Error::InvalidWeights("weights must be non-negative".into()));
    }
    let total: T = weights.iter().copied().sum();
    if (total - T::one()).abs() > T::of(1e-9) {
        return Err(Error::InvalidWeights(format!(
            "weights sum to {total}, expected 1"
        )));
    }
    for s in &sets[1..] {
        first.check_congruent(s)?;
    }

    let mut out = first.clone();
    for (pi, param) in out.params.iter_mut().enumerate() {
        if exclude_bn && param.is_bn() {
            continue;
        }
        let base = first.params[pi].tensor.data();
        let acc = param.tensor.data_mut();
        for (set, &w) in sets.iter().zip(weights) {
            let other = set.params[pi].tensor.data();
            for ((a, &x0), &x) in acc.iter_mut().zip(base).zip(other) {
                let d = x - x0;
                if d != T::zero() {
                    *a += w * d;
                }
            }
        }
    }
    Ok(out)
}
