use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::fed::{BnMode, LocalTrainConfig, LocalTrainerKind};
use crate::model::{Network, ParamSet};
use crate::numerics::{cross_entropy_with_labels, uniform_kl_grad, OptimizerState};
use crate::scalar::Scalar;

/// A client's private data and whatever it keeps between rounds.
#[derive(Debug, Clone)]
pub struct ClientState<T: Scalar = f64> {
    pub client_id: usize,
    pub shard: ClientShard<T>,
    /// Output of the client's most recent local training, if any.
    pub params: Option<ParamSet<T>>,
    /// Optimizer state at the end of the most recent local training. Each
    /// round starts from a fresh state.
    pub optimizer_state: Option<OptimizerState<T>>,
}

impl<T: Scalar> ClientState<T> {
    pub fn new(shard: ClientShard<T>) -> Self {
        Self {
            client_id: shard.client_id,
            shard,
            params: None,
            optimizer_state: None,
        }
    }

    /// The model the client starts local training from: the broadcast, with
    /// the client's own BN tensors when they are kept locally.
    pub fn starting_params(&self, broadcast: &ParamSet<T>, bn_mode: BnMode) -> Result<ParamSet<T>> {
        let mut start = broadcast.clone();
        if bn_mode == BnMode::PerClient {
            if let Some(own) = &self.params {
                start.copy_bn_from(own)?;
            }
        }
        Ok(start)
    }
}

#[derive(Debug, Clone)]
pub struct LocalUpdate<T: Scalar = f64> {
    pub params: ParamSet<T>,
    pub steps: usize,
    /// Mean per-batch objective over the whole local run (0 when no steps ran).
    pub mean_loss: T,
    /// Set when the batch size exceeded the shard and one full batch was used.
    pub batch_fallback: bool,
    pub optimizer_state: OptimizerState<T>,
}

/// Minibatches for one epoch: a fresh permutation cut into chunks of
/// `batch_size`; a trailing single sample joins the previous chunk.
pub fn epoch_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let bs = batch_size.clamp(1, n.max(1));
    let mut batches: Vec<Vec<usize>> = order.chunks(bs).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) && bs >= 2 {
        let tail = batches.pop().expect("checked non-empty");
        batches.last_mut().expect("more than one batch").extend(tail);
    }
    batches
}

/// Runs `epochs` passes of minibatch optimization starting from
/// `client.starting_params(broadcast, bn_mode)`.
pub fn local_train<T: Scalar, R: Rng + ?Sized>(
    network: &Network,
    client: &ClientState<T>,
    broadcast: &ParamSet<T>,
    cfg: &LocalTrainConfig,
    bn_mode: BnMode,
    rng: &mut R,
) -> Result<LocalUpdate<T>> {
    cfg.kind.validate()?;
    network.check_params(broadcast)?;
    let data = &client.shard.dataset;
    let n = data.len();
    if n == 0 {
        return Err(Error::InvalidDataset(format!(
            "client {} has no samples",
            client.client_id
        )));
    }
    let mut params = client.starting_params(broadcast, bn_mode)?;
    let anchor = params.clone();
    let mut state = cfg.optimizer.fresh_state(&params);
    let lr = T::of(cfg.lr);
    let batch_fallback = cfg.batch_size > n;

    let mut steps = 0;
    let mut loss_sum = T::zero();
    for _ in 0..cfg.epochs {
        for batch in epoch_batches(n, cfg.batch_size, rng) {
            let x = data.features().select_rows(&batch);
            let y: Vec<usize> = batch.iter().map(|&i| data.labels()[i]).collect();
            let (loss, grads) = local_objective(network, &mut params, &anchor, &x, &y, cfg.kind)?;
            cfg.optimizer.step(&mut params, &grads, lr, &mut state)?;
            loss_sum += loss;
            steps += 1;
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite(format!(
            "local training of client {}",
            client.client_id
        )));
    }
    let mean_loss = if steps > 0 {
        loss_sum / T::of_usize(steps)
    } else {
        T::zero()
    };
    Ok(LocalUpdate {
        params,
        steps,
        mean_loss,
        batch_fallback,
        optimizer_state: state,
    })
}

/// Loss and gradient of one local minibatch. Updates BN running statistics.
pub fn local_objective<T: Scalar>(
    network: &Network,
    params: &mut ParamSet<T>,
    anchor: &ParamSet<T>,
    x: &crate::numerics::Tensor<T>,
    y: &[usize],
    kind: LocalTrainerKind,
) -> Result<(T, ParamSet<T>)> {
    let (logits, cache) = network.forward(params, x, crate::model::Mode::Train)?;
    let (mut loss, d_logits) = cross_entropy_with_labels(&logits, y)?;
    let mut d_pen = None;
    if let LocalTrainerKind::Max { beta } = kind {
        if beta != 0.0 {
            let (kl, mut g) = uniform_kl_grad(cache.penultimate_activation())?;
            let b = T::of(beta);
            loss += b * kl;
            g.scale(b);
            d_pen = Some(g);
        }
    }
    let mut grads = network.backward_with_activation_grad(params, &cache, &d_logits, d_pen.as_ref())?;
    if let LocalTrainerKind::Prox { mu } = kind {
        if mu != 0.0 {
            let m = T::of(mu);
            let mut sq = T::zero();
            for ((g, w), w0) in grads
                .params_mut()
                .iter_mut()
                .zip(params.params())
                .zip(anchor.params())
            {
                if !w.kind.is_trainable() {
                    continue;
                }
                for ((gi, &wi), &ai) in g
                    .tensor
                    .data_mut()
                    .iter_mut()
                    .zip(w.tensor.data())
                    .zip(w0.tensor.data())
                {
                    let d = wi - ai;
                    sq += d * d;
                    *gi += m * d;
                }
            }
            loss += T::of(0.5) * m * sq;
        }
    }
    network.update_running_stats(params, &cache)?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, partition_dirichlet, SyntheticSpec};
    use crate::numerics::OptimizerConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn client(per_class: usize) -> ClientState {
        let ds = generate_synthetic(&SyntheticSpec {
            classes: 3,
            dim: 4,
            per_class,
            spread: 1.0,
            transform: None,
            seed: 2,
        })
        .unwrap();
        let shard = partition_dirichlet(&ds, 1, 1.0, 0).unwrap().remove(0);
        ClientState::new(shard)
    }

    fn cfg(kind: LocalTrainerKind, epochs: usize) -> LocalTrainConfig {
        LocalTrainConfig {
            epochs,
            batch_size: 8,
            lr: 0.05,
            optimizer: OptimizerConfig::Sgd {
                momentum: 0.9,
                weight_decay: 5e-4,
            },
            kind,
        }
    }

    fn run(kind: LocalTrainerKind, bn: bool, epochs: usize) -> LocalUpdate {
        let net = Network::mlp(4, &[6], 3, bn).unwrap();
        let c = client(10);
        let w = net.init(1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        local_train(&net, &c, &w, &cfg(kind, epochs), BnMode::Shared, &mut rng).unwrap()
    }

    #[test]
    fn zero_epochs_is_identity() {
        let net = Network::mlp(4, &[6], 3, false).unwrap();
        let c = client(10);
        let w: ParamSet = net.init(1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = local_train(&net, &c, &w, &cfg(LocalTrainerKind::Plain, 0), BnMode::Shared, &mut rng).unwrap();
        assert_eq!(out.params, w);
        assert_eq!(out.steps, 0);
    }

    #[test]
    fn zero_coefficients_match_plain_bitwise() {
        for bn in [false, true] {
            let plain = run(LocalTrainerKind::Plain, bn, 3);
            let prox = run(LocalTrainerKind::Prox { mu: 0.0 }, bn, 3);
            let max = run(LocalTrainerKind::Max { beta: 0.0 }, bn, 3);
            assert_eq!(plain.params, prox.params);
            assert_eq!(plain.params, max.params);
            assert_eq!(plain.mean_loss, prox.mean_loss);
        }
    }

    #[test]
    fn regularizers_change_the_result() {
        let plain = run(LocalTrainerKind::Plain, false, 2);
        let prox = run(LocalTrainerKind::Prox { mu: 1.0 }, false, 2);
        let max = run(LocalTrainerKind::Max { beta: 1.0 }, false, 2);
        assert_ne!(plain.params, prox.params);
        assert_ne!(plain.params, max.params);
    }

    #[test]
    fn step_count_and_folding() {
        // 30 samples, batch 8 → 8,8,8,6 → 4 steps per epoch
        let out = run(LocalTrainerKind::Plain, false, 2);
        assert_eq!(out.steps, 8);
        assert!(!out.batch_fallback);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = epoch_batches(17, 8, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![8, 9]);
        let b = epoch_batches(5, 8, &mut rng);
        assert_eq!(b.len(), 1);
        let mut all: Vec<usize> = epoch_batches(23, 4, &mut rng).concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
    }

    #[test]
    fn oversized_batch_falls_back_to_full_batch() {
        let net = Network::mlp(4, &[6], 3, true).unwrap();
        let c = client(2);
        let w = net.init(1);
        let mut config = cfg(LocalTrainerKind::Plain, 3);
        config.batch_size = 100;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = local_train(&net, &c, &w, &config, BnMode::Shared, &mut rng).unwrap();
        assert!(out.batch_fallback);
        assert_eq!(out.steps, 3);
    }

    #[test]
    fn local_training_reduces_loss() {
        let net = Network::mlp(4, &[8], 3, false).unwrap();
        let c = client(30);
        let w: ParamSet = net.init(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let first = local_train(&net, &c, &w, &cfg(LocalTrainerKind::Plain, 1), BnMode::Shared, &mut rng).unwrap();
        let later = local_train(&net, &c, &first.params, &cfg(LocalTrainerKind::Plain, 5), BnMode::Shared, &mut rng).unwrap();
        assert!(later.mean_loss < first.mean_loss);
    }

    #[test]
    fn per_client_bn_starts_from_own_tensors() {
        let net = Network::mlp(4, &[6], 3, true).unwrap();
        let mut c = client(10);
        let w: ParamSet = net.init(1);
        let mut own = w.clone();
        for p in own.params_mut().iter_mut().filter(|p| p.is_bn()) {
            p.tensor.fill(0.5);
        }
        c.params = Some(own.clone());
        let start = c.starting_params(&w, BnMode::PerClient).unwrap();
        for (s, o) in start.iter().zip(own.iter()) {
            if s.is_bn() {
                assert_eq!(s.tensor, o.tensor);
            }
        }
        assert_eq!(c.starting_params(&w, BnMode::Shared).unwrap(), w);
    }
}
