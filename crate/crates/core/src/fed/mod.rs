//! The federated algorithm family: local trainers, client sampling and the
//! distillation engine.
//!
//! | algorithm   | trainer        | DKD steps | BN mode     |
//! |-------------|----------------|-----------|-------------|
//! | FedAvg      | `Plain`        | 0         | `Shared`    |
//! | FedProx     | `Prox { mu }`  | 0         | `Shared`    |
//! | FedMAX      | `Max { beta }` | 0         | `Shared`    |
//! | FedBN       | `Plain`        | 0         | `PerClient` |
//! | FedDKD      | `Plain`        | J > 0     | `Shared`    |
//! | FedDKD_MAX  | `Max { beta }` | J > 0     | `Shared`    |
//! | FedDKD_BN   | `Plain`        | J > 0     | `PerClient` |

mod config;
mod dkd;
mod local;
pub mod rng;
mod server;

pub use config::{
    BnMode, DkdAggregation, DkdConfig, Divergence, LocalTrainConfig, LocalTrainerKind,
};
pub use dkd::{
    aggregate_gradients, dkd_gradient, dkd_refine, DkdGradient, DkdGradientOptions, DkdOutcome,
    Participant,
};
pub use local::{epoch_batches, local_objective, local_train, ClientState, LocalUpdate};
pub use server::{
    clients_per_round, run_federated, run_federated_from,
    run_federated_observed, sample_clients, BestModel,
    FederatedConfig, Federation, RoundDiagnostics, RunAborted, RunOutcome, ServerState,
};
