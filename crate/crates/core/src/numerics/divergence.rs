//! Softmax, probability divergences and the distillation losses built on them.
//!
//! Every routine that takes a logarithm of a probability clamps it at
//! [`PROB_FLOOR`] so that zero entries produce large but finite values.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// A probability vector over `C ≥ 2` outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution<T: Scalar = f64> {
    probs: Tensor<T>,
}

impl<T: Scalar> Distribution<T> {
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidDistribution(format!(
                "need at least 2 outcomes, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|&p| p < T::zero() || !p.is_finite()) {
            return Err(Error::InvalidDistribution(
                "entries must be finite and non-negative".into(),
            ));
        }
        let total: T = probs.iter().copied().sum();
        if (total - T::one()).abs() > T::of(1e-9) {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {total}, not 1"
            )));
        }
        Ok(Self {
            probs: Tensor::vector(probs)?,
        })
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        let c = classes.max(1);
        Self::new(vec![T::one() / T::of_usize(c); classes])
    }

    pub fn probs(&self) -> &[T] {
        self.probs.data()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn entropy(&self) -> T {
        entropy(self.probs())
    }
}

fn check_finite<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

fn softmax_row_into<T: Scalar>(row: &[T], inv_temp: T, out: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = ((v - max) * inv_temp).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn log_softmax_row_into<T: Scalar>(row: &[T], inv_temp: T, out: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for &v in row {
        total += ((v - max) * inv_temp).exp();
    }
    let log_total = total.ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max) * inv_temp - log_total;
    }
}

/// Row-wise softmax of a `[B, C]` tensor (a rank-1 tensor is one row).
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    softmax_with_temperature(logits, T::one())
}

/// Row-wise `softmax(logits / temperature)`.
pub fn softmax_with_temperature<T: Scalar>(
    logits: &Tensor<T>,
    temperature: T,
) -> Result<Tensor<T>> {
    check_finite(logits, "softmax input")?;
    check_temperature(temperature)?;
    let inv = T::one() / temperature;
    let mut out = logits.clone();
    let b = as_rows(logits);
    for i in 0..b {
        let row = row_of(logits, i);
        softmax_row_into(row, inv, row_of_mut(&mut out, i));
    }
    Ok(out)
}

pub fn log_softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    check_finite(logits, "log_softmax input")?;
    let mut out = logits.clone();
    for i in 0..as_rows(logits) {
        log_softmax_row_into(row_of(logits, i), T::one(), row_of_mut(&mut out, i));
    }
    Ok(out)
}

fn as_rows<T: Scalar>(t: &Tensor<T>) -> usize {
    if t.shape().len() == 1 {
        1
    } else {
        t.rows()
    }
}

fn row_of<T: Scalar>(t: &Tensor<T>, i: usize) -> &[T] {
    if t.shape().len() == 1 {
        t.data()
    } else {
        t.row(i)
    }
}

fn row_of_mut<T: Scalar>(t: &mut Tensor<T>, i: usize) -> &mut [T] {
    if t.shape().len() == 1 {
        t.data_mut()
    } else {
        t.row_mut(i)
    }
}

fn check_temperature<T: Scalar>(temperature: T) -> Result<()> {
    if temperature > T::zero() && temperature.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidTensor(format!(
            "temperature must be positive, got {temperature}"
        )))
    }
}

/// Shannon entropy in nats, with `0·ln 0 = 0`.
pub fn entropy<T: Scalar>(probs: &[T]) -> T {
    probs
        .iter()
        .filter(|&&p| p > T::zero())
        .map(|&p| -p * p.ln())
        .sum()
}

/// `KL(p ‖ q) = Σ p_i ln(p_i / q_i)` with `q_i` clamped at [`PROB_FLOOR`].
pub fn kl_divergence<T: Scalar>(p: &Distribution<T>, q: &Distribution<T>) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![p.len()],
            actual: vec![q.len()],
        });
    }
    Ok(kl_slices(p.probs(), q.probs()))
}

pub(crate) fn kl_slices<T: Scalar>(p: &[T], q: &[T]) -> T {
    let floor = T::of(PROB_FLOOR);
    let total: T = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > T::zero())
        .map(|(&pi, &qi)| pi * (pi / qi.max(floor)).ln())
        .sum();
    // Rounding can push a true zero slightly negative.
    total.max(T::zero())
}

/// Total variation distance `½ Σ |p_i − q_i|`.
pub fn total_variation<T: Scalar>(p: &Distribution<T>, q: &Distribution<T>) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![p.len()],
            actual: vec![q.len()],
        });
    }
    let half = T::of(0.5);
    let tv: T = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(&a, &b)| (a - b).abs())
        .sum::<T>()
        * half;
    Ok(tv.min(T::one()))
}

/// Batch-mean cross-entropy between softened teacher and student outputs.
pub fn soft_cross_entropy<T: Scalar>(
    teacher_logits: &Tensor<T>,
    student_logits: &Tensor<T>,
) -> Result<T> {
    soft_cross_entropy_grad(teacher_logits, student_logits, T::one()).map(|(loss, _)| loss)
}

pub fn soft_cross_entropy_with_temperature<T: Scalar>(
    teacher_logits: &Tensor<T>,
    student_logits: &Tensor<T>,
    temperature: T,
) -> Result<T> {
    soft_cross_entropy_grad(teacher_logits, student_logits, temperature).map(|(loss, _)| loss)
}

/// Loss `(1/B) Σ_b −Σ_c softmax(t/T)_bc · log_softmax(s/T)_bc` and its
/// gradient with respect to the student logits, `(softmax(s/T) − softmax(t/T)) / (B·T)`.
pub fn soft_cross_entropy_grad<T: Scalar>(
    teacher_logits: &Tensor<T>,
    student_logits: &Tensor<T>,
    temperature: T,
) -> Result<(T, Tensor<T>)> {
    teacher_logits.check_same_shape(student_logits)?;
    check_finite(teacher_logits, "teacher logits")?;
    check_finite(student_logits, "student logits")?;
    check_temperature(temperature)?;
    let inv = T::one() / temperature;
    let rows = as_rows(student_logits);
    let c = student_logits.len() / rows;
    let batch = T::of_usize(rows);
    let scale = inv / batch;

    let mut grad = student_logits.clone();
    let mut p_t = vec![T::zero(); c];
    let mut p_s = vec![T::zero(); c];
    let mut log_s = vec![T::zero(); c];
    let mut loss = T::zero();
    for i in 0..rows {
        // Both probability vectors come from the same routine, so identical
        // logits give an exactly zero gradient.
        softmax_row_into(row_of(teacher_logits, i), inv, &mut p_t);
        softmax_row_into(row_of(student_logits, i), inv, &mut p_s);
        log_softmax_row_into(row_of(student_logits, i), inv, &mut log_s);
        let mut row_loss = T::zero();
        for (&pt, &ls) in p_t.iter().zip(&log_s) {
            row_loss -= pt * ls;
        }
        loss += row_loss;
        for ((g, &pt), &ps) in row_of_mut(&mut grad, i).iter_mut().zip(&p_t).zip(&p_s) {
            *g = (ps - pt) * scale;
        }
    }
    Ok((loss / batch, grad))
}

/// Batch-mean cross-entropy against integer labels and its logit gradient.
pub fn cross_entropy_with_labels<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let (b, c) = logits.matrix_dims()?;
    if labels.len() != b {
        return Err(Error::ShapeMismatch {
            expected: vec![b],
            actual: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::InvalidDataset(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    check_finite(logits, "logits")?;
    let batch = T::of_usize(b);
    let mut grad = logits.clone();
    let mut log_p = vec![T::zero(); c];
    let mut loss = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        log_softmax_row_into(logits.row(i), T::one(), &mut log_p);
        loss -= log_p[y];
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            let indicator = if j == y { T::one() } else { T::zero() };
            *g = (log_p[j].exp() - indicator) / batch;
        }
    }
    Ok((loss / batch, grad))
}

/// Batch-mean `½‖s − t‖²` and its gradient `(s − t)/B`.
pub fn squared_error_grad<T: Scalar>(
    teacher_out: &Tensor<T>,
    student_out: &Tensor<T>,
) -> Result<(T, Tensor<T>)> {
    teacher_out.check_same_shape(student_out)?;
    let batch = T::of_usize(as_rows(student_out));
    let mut grad = student_out.clone();
    let mut loss = T::zero();
    for (g, &t) in grad.data_mut().iter_mut().zip(teacher_out.data()) {
        let d = *g - t;
        loss += T::of(0.5) * d * d;
        *g = d / batch;
    }
    Ok((loss / batch, grad))
}

/// Batch-mean `KL(softmax(a_i) ‖ U)` over the rows of an activation matrix,
/// with its gradient with respect to the activations.
///
/// Per row, `KL(s ‖ U) = ln H + Σ_j s_j ln s_j` and
/// `∂/∂a_k = s_k (ln s_k − Σ_j s_j ln s_j)`.
pub fn uniform_kl_grad<T: Scalar>(activations: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let (b, h) = activations.matrix_dims()?;
    check_finite(activations, "activations")?;
    let batch = T::of_usize(b);
    let ln_h = T::of_usize(h).ln();
    let mut grad = activations.clone();
    let mut log_s = vec![T::zero(); h];
    let mut loss = T::zero();
    for i in 0..b {
        log_softmax_row_into(activations.row(i), T::one(), &mut log_s);
        let neg_entropy: T = log_s.iter().map(|&l| l.exp() * l).sum();
        loss += (ln_h + neg_entropy).max(T::zero());
        for (g, &l) in grad.row_mut(i).iter_mut().zip(&log_s) {
            *g = l.exp() * (l - neg_entropy) / batch;
        }
    }
    Ok((loss / batch, grad))
}
