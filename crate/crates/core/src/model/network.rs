//! Feed-forward networks built from dense, ReLU and batch-norm layers, with
//! exact reverse-mode gradients.
//!
//! Dense layers compute `y = x·W + b` with `W` stored as `[in_dim, out_dim]`.
//! Batch norm normalizes each feature with batch statistics in train mode and
//! with running statistics in eval mode; train-mode gradients flow through
//! the batch statistics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Param, ParamKind, ParamSet};
use crate::numerics::{matmul, matmul_a_bt, matmul_at_b, Tensor};
use crate::scalar::Scalar;

pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;
pub const DEFAULT_BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { in_dim: usize, out_dim: usize },
    Relu,
    BatchNorm { dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A validated layer stack plus the batch-norm constants it runs with.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    input_dim: usize,
    num_classes: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Network {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let (input_dim, num_classes) = validate(&layers)?;
        Ok(Self {
            layers,
            input_dim,
            num_classes,
            bn_momentum: DEFAULT_BN_MOMENTUM,
            bn_eps: DEFAULT_BN_EPS,
        })
    }

    /// `Dense → [BatchNorm] → ReLU` per hidden width, then a final `Dense`.
    pub fn mlp(input_dim: usize, hidden: &[usize], classes: usize, batch_norm: bool) -> Result<Self> {
        let mut layers = Vec::new();
        let mut width = input_dim;
        for &h in hidden {
            layers.push(LayerSpec::Dense {
                in_dim: width,
                out_dim: h,
            });
            if batch_norm {
                layers.push(LayerSpec::BatchNorm { dim: h });
            }
            layers.push(LayerSpec::Relu);
            width = h;
        }
        layers.push(LayerSpec::Dense {
            in_dim: width,
            out_dim: classes,
        });
        Self::new(layers)
    }

    pub fn with_bn_momentum(mut self, momentum: f64) -> Self {
        self.bn_momentum = momentum;
        self
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::BatchNorm { .. }))
    }

    /// Dense weights ~ U(−√(6/in), √(6/in)), zero biases; BN scale 1, shift 0,
    /// running mean 0, running variance 1.
    pub fn init<T: Scalar>(&self, seed: u64) -> ParamSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Dense { in_dim, out_dim } => {
                    let bound = (6.0 / in_dim as f64).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                    let weights = (0..in_dim * out_dim)
                        .map(|_| T::of(dist.sample(&mut rng)))
                        .collect();
                    params.push(param(i, ParamKind::Weight, vec![in_dim, out_dim], weights));
                    params.push(param(i, ParamKind::Bias, vec![out_dim], vec![T::zero(); out_dim]));
                }
                LayerSpec::BatchNorm { dim } => {
                    params.push(param(i, ParamKind::BnScale, vec![dim], vec![T::one(); dim]));
                    params.push(param(i, ParamKind::BnShift, vec![dim], vec![T::zero(); dim]));
                    params.push(param(i, ParamKind::BnRunningMean, vec![dim], vec![T::zero(); dim]));
                    params.push(param(i, ParamKind::BnRunningVar, vec![dim], vec![T::one(); dim]));
                }
                LayerSpec::Relu => {}
            }
        }
        ParamSet::new(params)
    }

    /// Checks a parameter set against this architecture.
    pub fn check_params<T: Scalar>(&self, params: &ParamSet<T>) -> Result<()> {
        let reference: ParamSet<T> = self.init(0);
        reference.check_congruent(params)
    }

    /// Pure forward pass. In train mode the batch statistics are returned in
    /// the cache; apply them with [`Network::update_running_stats`].
    pub fn forward<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        batch: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let (rows, width) = batch.matrix_dims()?;
        if width != self.input_dim {
            return Err(Error::ShapeMismatch {
                expected: vec![rows, self.input_dim],
                actual: batch.shape().to_vec(),
            });
        }
        if mode == Mode::Train && rows < 2 && self.has_batch_norm() {
            return Err(Error::BatchTooSmall(rows));
        }
        let eps = T::of(self.bn_eps);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut bn = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let out = match *layer {
                LayerSpec::Dense { .. } => {
                    bn.push(None);
                    let w = params.expect(i, ParamKind::Weight)?;
                    let b = params.expect(i, ParamKind::Bias)?;
                    let mut y = matmul(&x, w)?;
                    for r in 0..y.rows() {
                        for (v, &bias) in y.row_mut(r).iter_mut().zip(b.data()) {
                            *v += bias;
                        }
                    }
                    y
                }
                LayerSpec::Relu => {
                    bn.push(None);
                    x.map(|v| if v > T::zero() { v } else { T::zero() })
                }
                LayerSpec::BatchNorm { dim } => {
                    let scale = params.expect(i, ParamKind::BnScale)?.data();
                    let shift = params.expect(i, ParamKind::BnShift)?.data();
                    let (mean, var) = match mode {
                        Mode::Train => column_stats(&x),
                        Mode::Eval => (
                            params.expect(i, ParamKind::BnRunningMean)?.data().to_vec(),
                            params.expect(i, ParamKind::BnRunningVar)?.data().to_vec(),
                        ),
                    };
                    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                    let mut x_hat = x.clone();
                    let mut y = x.clone();
                    for r in 0..x.rows() {
                        let xr = x.row(r);
                        let hr = x_hat.row_mut(r);
                        for j in 0..dim {
                            hr[j] = (xr[j] - mean[j]) * inv_std[j];
                        }
                        let yr = y.row_mut(r);
                        for j in 0..dim {
                            yr[j] = scale[j] * x_hat.row(r)[j] + shift[j];
                        }
                    }
                    bn.push(Some(BnCache {
                        x_hat,
                        inv_std,
                        batch_mean: mean,
                        batch_var: var,
                    }));
                    y
                }
            };
            inputs.push(std::mem::replace(&mut x, out));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok((
            x,
            ForwardCache {
                layer_inputs: inputs,
                bn,
                mode,
            },
        ))
    }

    /// Eval-mode logits only.
    pub fn predict<T: Scalar>(&self, params: &ParamSet<T>, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(params, batch, Mode::Eval).map(|(logits, _)| logits)
    }

    /// Train-mode forward that also folds the batch statistics into the
    /// running statistics of `params`.
    pub fn forward_train<T: Scalar>(
        &self,
        params: &mut ParamSet<T>,
        batch: &Tensor<T>,
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let (logits, cache) = self.forward(params, batch, Mode::Train)?;
        self.update_running_stats(params, &cache)?;
        Ok((logits, cache))
    }

    /// `running ← (1 − m)·running + m·batch`, with the unbiased batch variance.
    pub fn update_running_stats<T: Scalar>(
        &self,
        params: &mut ParamSet<T>,
        cache: &ForwardCache<T>,
    ) -> Result<()> {
        if cache.mode != Mode::Train {
            return Ok(());
        }
        let m = T::of(self.bn_momentum);
        let keep = T::one() - m;
        for (i, entry) in cache.bn.iter().enumerate() {
            let Some(c) = entry else { continue };
            let n = c.x_hat.rows();
            let unbias = T::of_usize(n) / T::of_usize(n - 1);
            let rm = params
                .get_mut(i, ParamKind::BnRunningMean)
                .ok_or_else(|| Error::Incongruent(format!("missing running mean for layer {i}")))?;
            for (r, &b) in rm.data_mut().iter_mut().zip(&c.batch_mean) {
                *r = keep * *r + m * b;
            }
            let rv = params
                .get_mut(i, ParamKind::BnRunningVar)
                .ok_or_else(|| Error::Incongruent(format!("missing running var for layer {i}")))?;
            for (r, &b) in rv.data_mut().iter_mut().zip(&c.batch_var) {
                *r = keep * *r + m * b * unbias;
            }
        }
        Ok(())
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        cache: &ForwardCache<T>,
        d_logits: &Tensor<T>,
    ) -> Result<ParamSet<T>> {
        self.backward_with_activation_grad(params, cache, d_logits, None)
    }

    /// Reverse pass with an optional extra adjoint added at the penultimate
    /// activation (the input of the final dense layer).
    pub fn backward_with_activation_grad<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        cache: &ForwardCache<T>,
        d_logits: &Tensor<T>,
        d_penultimate: Option<&Tensor<T>>,
    ) -> Result<ParamSet<T>> {
        if cache.layer_inputs.len() != self.layers.len() {
            return Err(Error::Incongruent(
                "forward cache belongs to a different architecture".into(),
            ));
        }
        let rows = cache.layer_inputs[0].rows();
        if d_logits.shape() != [rows, self.num_classes] {
            return Err(Error::ShapeMismatch {
                expected: vec![rows, self.num_classes],
                actual: d_logits.shape().to_vec(),
            });
        }
        let last = self.layers.len() - 1;
        let mut grads = params.zeros_like();
        let mut dy = d_logits.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.layer_inputs[i];
            let dx = match *layer {
                LayerSpec::Dense { out_dim, .. } => {
                    let w = params.expect(i, ParamKind::Weight)?;
                    let dw = matmul_at_b(x, &dy)?;
                    let mut db = vec![T::zero(); out_dim];
                    for r in 0..dy.rows() {
                        for (s, &v) in db.iter_mut().zip(dy.row(r)) {
                            *s += v;
                        }
                    }
                    *grad_slot(&mut grads, i, ParamKind::Weight)? = dw;
                    *grad_slot(&mut grads, i, ParamKind::Bias)? = Tensor::vector(db)?;
                    if i == 0 {
                        break;
                    }
                    matmul_a_bt(&dy, w)?
                }
                LayerSpec::Relu => {
                    let mut dx = dy.clone();
                    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                        if v <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    dx
                }
                LayerSpec::BatchNorm { dim } => {
                    let c = cache.bn[i]
                        .as_ref()
                        .ok_or_else(|| Error::Incongruent(format!("no BN cache for layer {i}")))?;
                    let scale = params.expect(i, ParamKind::BnScale)?.data();
                    let n = dy.rows();
                    let mut d_scale = vec![T::zero(); dim];
                    let mut d_shift = vec![T::zero(); dim];
                    for r in 0..n {
                        for j in 0..dim {
                            d_scale[j] += dy.row(r)[j] * c.x_hat.row(r)[j];
                            d_shift[j] += dy.row(r)[j];
                        }
                    }
                    let mut dx = dy.clone();
                    match cache.mode {
                        Mode::Eval => {
                            for r in 0..n {
                                for (j, d) in dx.row_mut(r).iter_mut().enumerate() {
                                    *d = *d * scale[j] * c.inv_std[j];
                                }
                            }
                        }
                        Mode::Train => {
                            // dx = (inv_std / n)·(n·dx̂ − Σ dx̂ − x̂·Σ dx̂·x̂), dx̂ = dy·scale
                            let nf = T::of_usize(n);
                            for r in 0..n {
                                for (j, d) in dx.row_mut(r).iter_mut().enumerate() {
                                    let dxhat = dy.row(r)[j] * scale[j];
                                    let sum_dxhat = d_shift[j] * scale[j];
                                    let sum_dxhat_xhat = d_scale[j] * scale[j];
                                    *d = c.inv_std[j] / nf
                                        * (nf * dxhat - sum_dxhat - c.x_hat.row(r)[j] * sum_dxhat_xhat);
                                }
                            }
                        }
                    }
                    *grad_slot(&mut grads, i, ParamKind::BnScale)? = Tensor::vector(d_scale)?;
                    *grad_slot(&mut grads, i, ParamKind::BnShift)? = Tensor::vector(d_shift)?;
                    dx
                }
            };
            dy = dx;
            if i == last {
                if let Some(extra) = d_penultimate {
                    dy.axpy(T::one(), extra)?;
                }
            }
        }
        Ok(grads)
    }
}

fn grad_slot<T: Scalar>(
    grads: &mut ParamSet<T>,
    layer: usize,
    kind: ParamKind,
) -> Result<&mut Tensor<T>> {
    grads
        .get_mut(layer, kind)
        .ok_or_else(|| Error::Incongruent(format!("missing {} for layer {layer}", kind.name())))
}

fn param<T: Scalar>(layer: usize, kind: ParamKind, shape: Vec<usize>, data: Vec<T>) -> Param<T> {
    Param {
        layer,
        kind,
        tensor: Tensor::new(shape, data).expect("validated layer dims"),
    }
}

/// Per-column mean and biased variance.
fn column_stats<T: Scalar>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let n = T::of_usize(x.rows());
    let d = x.cols();
    let mut mean = vec![T::zero(); d];
    for r in 0..x.rows() {
        for (m, &v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); d];
    for r in 0..x.rows() {
        for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

fn validate(layers: &[LayerSpec]) -> Result<(usize, usize)> {
    let mut width = match layers.first() {
        Some(LayerSpec::Dense { in_dim, .. }) => *in_dim,
        Some(LayerSpec::BatchNorm { dim }) => *dim,
        Some(LayerSpec::Relu) => {
            return Err(Error::InvalidSpec(
                "the first layer must fix the input width".into(),
            ))
        }
        None => return Err(Error::InvalidSpec("empty layer list".into())),
    };
    let input = width;
    for (i, layer) in layers.iter().enumerate() {
        match *layer {
            LayerSpec::Dense { in_dim, out_dim } => {
                if in_dim != width || out_dim == 0 || in_dim == 0 {
                    return Err(Error::InvalidSpec(format!(
                        "layer {i}: dense({in_dim}, {out_dim}) after width {width}"
                    )));
                }
                width = out_dim;
            }
            LayerSpec::BatchNorm { dim } => {
                if dim != width || dim == 0 {
                    return Err(Error::InvalidSpec(format!(
                        "layer {i}: batch_norm({dim}) after width {width}"
                    )));
                }
            }
            LayerSpec::Relu => {}
        }
    }
    match layers.last() {
        Some(LayerSpec::Dense { out_dim, .. }) => Ok((input, *out_dim)),
        _ => Err(Error::InvalidSpec("the final layer must be dense".into())),
    }
}

#[derive(Debug, Clone)]
struct BnCache<T: Scalar> {
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
    batch_mean: Vec<T>,
    batch_var: Vec<T>,
}

/// Activations saved by [`Network::forward`] for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Scalar = f64> {
    layer_inputs: Vec<Tensor<T>>,
    bn: Vec<Option<BnCache<T>>>,
    mode: Mode,
}

impl<T: Scalar> ForwardCache<T> {
    /// Input of the final dense layer, `[B, H]`.
    pub fn penultimate_activation(&self) -> &Tensor<T> {
        self.layer_inputs.last().expect("validated networks are non-empty")
    }

    pub fn layer_input(&self, layer: usize) -> Option<&Tensor<T>> {
        self.layer_inputs.get(layer)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Normalized (pre-scale) activations of a batch-norm layer.
    pub fn normalized(&self, layer: usize) -> Option<&Tensor<T>> {
        self.bn.get(layer)?.as_ref().map(|c| &c.x_hat)
    }
}
