//! Decentralized knowledge distillation: each sampled client scores the
//! global (student) model against its own locally trained (teacher) model on
//! a private minibatch and returns only the gradient; the server averages the
//! gradients and takes a step.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::data::{weights_from_sizes, ClientShard};
use crate::error::{Error, Result};
use crate::fed::rng::{stream, Purpose};
use crate::fed::{BnMode, DkdAggregation, DkdConfig, Divergence};
use crate::model::{weighted_average, Mode, Network, ParamSet};
use crate::numerics::{soft_cross_entropy_grad, squared_error_grad};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DkdGradientOptions {
    pub batch_size: usize,
    pub divergence: Divergence,
    pub bn_mode: BnMode,
    pub student_mode: Mode,
}

impl From<&DkdConfig> for DkdGradientOptions {
    fn from(cfg: &DkdConfig) -> Self {
        Self {
            batch_size: cfg.batch_size,
            divergence: cfg.divergence,
            bn_mode: cfg.bn_mode,
            student_mode: cfg.student_mode,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DkdGradient<T: Scalar = f64> {
    pub grad: ParamSet<T>,
    pub loss: T,
}

/// One client's distillation gradient with respect to the student.
///
/// Samples `batch_size` rows without replacement (all rows when the shard is
/// smaller). The teacher runs in eval mode; the student runs in
/// `student_mode` and, under [`BnMode::PerClient`], with the teacher's BN
/// tensors substituted in. BN gradient slots are zeroed in that mode.
/// Running statistics of the student are not updated.
pub fn dkd_gradient<T: Scalar, R: Rng + ?Sized>(
    network: &Network,
    teacher: &ParamSet<T>,
    student: &ParamSet<T>,
    shard: &ClientShard<T>,
    opts: &DkdGradientOptions,
    rng: &mut R,
) -> Result<DkdGradient<T>> {
    teacher.check_congruent(student)?;
    let n = shard.n_k();
    if n == 0 {
        return Err(Error::InvalidDataset(format!(
            "client {} has no samples to distill on",
            shard.client_id
        )));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("dkd batch size must be ≥ 1".into()));
    }
    let mut rows = index::sample(rng, n, opts.batch_size.min(n)).into_vec();
    rows.sort_unstable();
    let x = shard.dataset.features().select_rows(&rows);

    let mut local_student;
    let student = if opts.bn_mode == BnMode::PerClient {
        local_student = student.clone();
        local_student.copy_bn_from(teacher)?;
        &local_student
    } else {
        student
    };

    let (teacher_out, _) = network.forward(teacher, &x, Mode::Eval)?;
    let (student_out, cache) = network.forward(student, &x, opts.student_mode)?;
    let (loss, d_out) = match opts.divergence {
        Divergence::SoftCrossEntropy { temperature } => {
            soft_cross_entropy_grad(&teacher_out, &student_out, T::of(temperature))?
        }
        Divergence::SquaredError => squared_error_grad(&teacher_out, &student_out)?,
    };
    let mut grad = network.backward(student, &cache, &d_out)?;
    if opts.bn_mode == BnMode::PerClient {
        grad.zero_bn();
    }
    Ok(DkdGradient { grad, loss })
}

/// `Σ_k q_k·g_k`, reduced in the given (sorted client) order.
pub fn aggregate_gradients<T: Scalar>(grads: &[&ParamSet<T>], weights: &[T]) -> Result<ParamSet<T>> {
    let first = grads
        .first()
        .ok_or_else(|| Error::InvalidWeights("no gradients to aggregate".into()))?;
    if grads.len() != weights.len() {
        return Err(Error::InvalidWeights(format!(
            "{} gradients but {} weights",
            grads.len(),
            weights.len()
        )));
    }
    let mut total = first.zeros_like();
    for (g, &q) in grads.iter().zip(weights) {
        total.axpy(q, g)?;
    }
    Ok(total)
}

/// A sampled client as seen by the distillation step: its frozen local
/// model and its private data.
#[derive(Debug, Clone, Copy)]
pub struct Participant<'a, T: Scalar> {
    pub teacher: &'a ParamSet<T>,
    pub shard: &'a ClientShard<T>,
}

#[derive(Debug, Clone)]
pub struct DkdOutcome<T: Scalar = f64> {
    /// `w̄_{t,J}`.
    pub params: ParamSet<T>,
    /// Steps actually taken (0 during warm-up).
    pub effective_steps: usize,
    /// Mean client distillation loss per step, in step order.
    pub step_losses: Vec<T>,
    /// Largest |value| seen in any BN slot of any client gradient.
    pub max_bn_grad_abs: T,
}

/// Weighted parameter average followed by `J` distillation steps.
///
/// Under [`BnMode::PerClient`] the BN tensors of the result are the plain
/// average; they are never distilled and clients replace them with their own,
/// so they only matter for evaluating the global model.
///
/// `participants` must be sorted by client id; gradients are computed in
/// parallel on the current rayon pool and reduced in that order. Client `k`
/// draws step `j`'s minibatch from the stream `(master_seed, k, round, j)`.
pub fn dkd_refine<T: Scalar>(
    network: &Network,
    participants: &[Participant<'_, T>],
    cfg: &DkdConfig,
    round: usize,
    master_seed: u64,
) -> Result<DkdOutcome<T>> {
    cfg.validate()?;
    if participants.is_empty() {
        return Err(Error::Config("no participants in DKD round".into()));
    }
    let sizes: Vec<usize> = participants.iter().map(|p| p.shard.n_k()).collect();
    let n_weights: Vec<T> = weights_from_sizes(&sizes)?;
    let teachers: Vec<&ParamSet<T>> = participants.iter().map(|p| p.teacher).collect();
    let mut global = weighted_average(&teachers, &n_weights, false)?;

    let q: Vec<T> = match cfg.aggregation {
        DkdAggregation::Uniform => {
            vec![T::one() / T::of_usize(participants.len()); participants.len()]
        }
        DkdAggregation::SampleWeighted => n_weights.clone(),
    };
    let opts = DkdGradientOptions::from(cfg);
    let steps = cfg.effective_steps(round);
    let mut step_losses = Vec::with_capacity(steps);
    let mut max_bn_grad_abs = T::zero();
    for j in 0..steps {
        let student = &global;
        let results: Vec<DkdGradient<T>> = participants
            .par_iter()
            .map(|p| {
                let mut rng = stream(
                    master_seed,
                    p.shard.client_id as u64,
                    round as u64,
                    Purpose::Distill(j as u64),
                );
                dkd_gradient(network, p.teacher, student, p.shard, &opts, &mut rng)
            })
            .collect::<Result<_>>()?;
        for r in &results {
            for param in r.grad.iter().filter(|p| p.is_bn()) {
                max_bn_grad_abs = max_bn_grad_abs.max(param.tensor.max_abs());
            }
        }
        let grads: Vec<&ParamSet<T>> = results.iter().map(|r| &r.grad).collect();
        let g = aggregate_gradients(&grads, &q)?;
        if !g.is_finite() {
            return Err(Error::NonFinite(format!(
                "aggregated DKD gradient (round {round}, step {j})"
            )));
        }
        let gamma = T::of(cfg.learning_rate(round, j));
        for (w, d) in global.params_mut().iter_mut().zip(g.params()) {
            if w.kind.is_trainable() && !(cfg.bn_mode == BnMode::PerClient && w.is_bn()) {
                w.tensor.axpy(-gamma, &d.tensor)?;
            }
        }
        let mean_loss = results.iter().map(|r| r.loss).sum::<T>() / T::of_usize(results.len());
        step_losses.push(mean_loss);
    }
    Ok(DkdOutcome {
        params: global,
        effective_steps: steps,
        step_losses,
        max_bn_grad_abs,
    })
}
