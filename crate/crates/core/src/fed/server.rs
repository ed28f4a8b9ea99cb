use std::fmt;
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;

use crate::data::{ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::fed::dkd::{dkd_refine, Participant};
use crate::fed::local::{local_train, ClientState, LocalUpdate};
use crate::fed::rng::{derive_seed, stream, Purpose, SERVER};
use crate::fed::{DkdConfig, LocalTrainConfig};
use crate::harness::{account_round, evaluate, Accounting, RoundRecord};
use crate::model::{Network, ParamSet};
use crate::scalar::Scalar;

/// `m = max(round_half_up(fraction·K), 1)` distinct client ids, sorted.
pub fn sample_clients(k: usize, fraction: f64, seed: u64, round: usize) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "client fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if k == 0 {
        return Err(Error::Config("need at least one client".into()));
    }
    let m = clients_per_round(k, fraction);
    if m == k {
        return Ok((0..k).collect());
    }
    let mut rng = stream(seed, SERVER, round as u64, Purpose::Sampling);
    let mut ids = index::sample(&mut rng, k, m).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

pub fn clients_per_round(k: usize, fraction: f64) -> usize {
    ((fraction * k as f64 + 0.5).floor() as usize).clamp(1, k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedConfig {
    pub rounds: usize,
    pub client_fraction: f64,
    /// `local.lr` is the round-0 rate; round `t` uses `lr·lr_round_decay^t`.
    pub local: LocalTrainConfig,
    pub lr_round_decay: f64,
    pub dkd: DkdConfig,
    pub master_seed: u64,
    /// Worker threads for client work; 0 uses the rayon default.
    pub workers: usize,
    /// When false every `wall_seconds` is recorded as 0.
    pub record_wall_clock: bool,
}

impl FederatedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "client_fraction must lie in (0, 1], got {}",
                self.client_fraction
            )));
        }
        if [self.local.lr, self.lr_round_decay].iter().any(|v| *v <= 0.0 || !v.is_finite()) {
            return Err(Error::Config("learning rate and its decay must be positive".into()));
        }
        if self.local.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        self.local.kind.validate()?;
        self.dkd.validate()
    }

    pub fn local_lr(&self, round: usize) -> f64 {
        self.local.lr * self.lr_round_decay.powi(round as i32)
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.master_seed, SERVER, 0, Purpose::Init)
    }
}

#[derive(Debug, Clone)]
pub struct ServerState<T: Scalar = f64> {
    pub global_params: ParamSet<T>,
    /// Rounds completed so far.
    pub round_index: usize,
    pub history: Vec<RoundRecord>,
}

/// Per-round facts not written to the CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundDiagnostics {
    pub sampled: Vec<usize>,
    pub local_steps: Vec<usize>,
    pub dkd_step_losses: Vec<f64>,
    pub max_bn_grad_abs: f64,
    pub batch_fallback: bool,
}

#[derive(Debug, Clone)]
pub struct BestModel<T: Scalar = f64> {
    /// 1-based round the model was produced in.
    pub round: usize,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub params: ParamSet<T>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome<T: Scalar = f64> {
    pub server: ServerState<T>,
    pub clients: Vec<ClientState<T>>,
    pub best: Option<BestModel<T>>,
    pub diagnostics: Vec<RoundDiagnostics>,
}

impl<T: Scalar> RunOutcome<T> {
    pub fn history(&self) -> &[RoundRecord] {
        &self.server.history
    }
}

/// A run that stopped early, with the rounds completed before the failure.
#[derive(Debug)]
pub struct RunAborted {
    pub error: Error,
    pub history: Vec<RoundRecord>,
}

impl fmt::Display for RunAborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "run aborted after {} completed rounds: {}",
            self.history.len(),
            self.error
        )
    }
}

impl std::error::Error for RunAborted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Everything a run operates on.
#[derive(Debug, Clone)]
pub struct Federation<'a, T: Scalar = f64> {
    pub network: &'a Network,
    pub shards: Vec<ClientShard<T>>,
    /// Selects the best model; the test set is used when absent.
    pub validation: Option<&'a Dataset<T>>,
    pub test: &'a Dataset<T>,
}

/// Runs `cfg.rounds` rounds of sample → broadcast → local training →
/// averaging + distillation, evaluating the global model after each round.
///
/// The algorithm family is selected by the trainer kind, the number of DKD
/// steps and the BN mode; with `dkd.steps == 0` this is parameter averaging.
pub fn run_federated<T: Scalar>(
    fed: Federation<'_, T>,
    cfg: &FederatedConfig,
) -> std::result::Result<RunOutcome<T>, RunAborted> {
    run_federated_from(fed, cfg, None)
}

/// As [`run_federated`], starting from `initial` instead of a fresh init.
pub fn run_federated_from<T: Scalar>(
    fed: Federation<'_, T>,
    cfg: &FederatedConfig,
    initial: Option<ParamSet<T>>,
) -> std::result::Result<RunOutcome<T>, RunAborted> {
    run_federated_observed(fed, cfg, initial, &mut |_| {})
}

/// As [`run_federated_from`], calling `observer` after every completed round.
pub fn run_federated_observed<T: Scalar>(
    fed: Federation<'_, T>,
    cfg: &FederatedConfig,
    initial: Option<ParamSet<T>>,
    observer: &mut (dyn FnMut(&RoundRecord) + Send),
) -> std::result::Result<RunOutcome<T>, RunAborted> {
    let abort = |error: Error| RunAborted {
        error,
        history: Vec::new(),
    };
    cfg.validate().map_err(abort)?;
    let pool = build_pool(cfg.workers).map_err(abort)?;
    pool.install(|| run_rounds(fed, cfg, initial, observer))
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        pool = pool.num_threads(workers);
    }
    pool.build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run_rounds<T: Scalar>(
    fed: Federation<'_, T>,
    cfg: &FederatedConfig,
    initial: Option<ParamSet<T>>,
    observer: &mut (dyn FnMut(&RoundRecord) + Send),
) -> std::result::Result<RunOutcome<T>, RunAborted> {
    let network = fed.network;
    let global = initial.unwrap_or_else(|| network.init(cfg.init_seed()));
    let mut server = ServerState {
        global_params: global,
        round_index: 0,
        history: Vec::new(),
    };
    let mut clients: Vec<ClientState<T>> = fed.shards.into_iter().map(ClientState::new).collect();
    clients.sort_by_key(|c| c.client_id);
    let mut outcome_best: Option<BestModel<T>> = None;
    let mut diagnostics = Vec::new();
    let mut acct = Accounting::default();
    let started = Instant::now();

    if let Err(e) = network.check_params(&server.global_params) {
        return Err(RunAborted { error: e, history: Vec::new() });
    }
    for t in 0..cfg.rounds {
        let step = run_one_round(network, &mut clients, &server.global_params, cfg, t);
        let (global, diag) = match step {
            Ok(v) => v,
            Err(error) => {
                return Err(RunAborted {
                    error,
                    history: server.history,
                })
            }
        };
        let evaluated = evaluate(network, &global, fed.test).and_then(|test| {
            let val = match fed.validation {
                Some(v) => evaluate(network, &global, v)?,
                None => test,
            };
            Ok((test, val))
        });
        let (test, val) = match evaluated {
            Ok(v) => v,
            Err(error) => {
                return Err(RunAborted {
                    error,
                    history: server.history,
                })
            }
        };
        acct = account_round(&acct, diag.effective_steps, &diag.local_steps);
        let train_loss = mean_f64(&diag.local_losses);
        let record = RoundRecord {
            round: t + 1,
            comm_rounds: acct.comm_rounds,
            train_steps: acct.train_steps,
            train_steps_total: acct.train_steps_total,
            dkd_steps: acct.dkd_steps,
            train_loss,
            val_acc: val.accuracy,
            test_acc: test.accuracy,
            wall_seconds: if cfg.record_wall_clock {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        if outcome_best
            .as_ref()
            .is_none_or(|b| val.accuracy > b.val_accuracy)
        {
            outcome_best = Some(BestModel {
                round: t + 1,
                val_accuracy: val.accuracy,
                test_accuracy: test.accuracy,
                params: global.clone(),
            });
        }
        server.global_params = global;
        server.round_index = t + 1;
        observer(&record);
        server.history.push(record);
        diagnostics.push(diag.public);
    }
    Ok(RunOutcome {
        server,
        clients,
        best: outcome_best,
        diagnostics,
    })
}

struct RoundDiag {
    public: RoundDiagnostics,
    local_steps: Vec<usize>,
    local_losses: Vec<f64>,
    effective_steps: usize,
}

fn mean_f64(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn run_one_round<T: Scalar>(
    network: &Network,
    clients: &mut [ClientState<T>],
    broadcast: &ParamSet<T>,
    cfg: &FederatedConfig,
    round: usize,
) -> Result<(ParamSet<T>, RoundDiag)> {
    let sampled = sample_clients(clients.len(), cfg.client_fraction, cfg.master_seed, round)?;
    let mut local = cfg.local;
    local.lr = cfg.local_lr(round);
    let bn_mode = cfg.dkd.bn_mode;

    let updates: Vec<LocalUpdate<T>> = sampled
        .par_iter()
        .map(|&k| {
            let client = &clients[k];
            let mut rng = stream(
                cfg.master_seed,
                client.client_id as u64,
                round as u64,
                Purpose::LocalTrain,
            );
            local_train(network, client, broadcast, &local, bn_mode, &mut rng)
        })
        .collect::<Result<_>>()?;

    let participants: Vec<Participant<'_, T>> = sampled
        .iter()
        .zip(&updates)
        .map(|(&k, u)| Participant {
            teacher: &u.params,
            shard: &clients[k].shard,
        })
        .collect();
    let outcome = dkd_refine(network, &participants, &cfg.dkd, round, cfg.master_seed)?;
    if !outcome.params.is_finite() {
        return Err(Error::NonFinite(format!("global model after round {round}")));
    }

    let local_steps: Vec<usize> = updates.iter().map(|u| u.steps).collect();
    let local_losses: Vec<f64> = updates.iter().map(|u| u.mean_loss.to_f64_lossy()).collect();
    let batch_fallback = updates.iter().any(|u| u.batch_fallback);
    for (&k, u) in sampled.iter().zip(updates) {
        clients[k].params = Some(u.params);
        clients[k].optimizer_state = Some(u.optimizer_state);
    }
    let dkd_step_losses: Vec<f64> = outcome.step_losses.iter().map(|l| l.to_f64_lossy()).collect();
    let diag = RoundDiag {
        public: RoundDiagnostics {
            sampled,
            local_steps: local_steps.clone(),
            dkd_step_losses,
            max_bn_grad_abs: outcome.max_bn_grad_abs.to_f64_lossy(),
            batch_fallback,
        },
        local_steps,
        local_losses,
        effective_steps: outcome.effective_steps,
    };
    Ok((outcome.params, diag))
}
