//! Layered feed-forward networks, BN-aware parameter sets and parameter averaging.

mod checkpoint;
mod network;
mod params;

pub use checkpoint::{decode_params, encode_params, load_params, save_params};
pub use network::{ForwardCache, LayerSpec, Mode, Network, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM};
pub use params::{weighted_average, Param, ParamKind, ParamSet};

use crate::error::Result;
use crate::scalar::Scalar;

/// Validates `layers` and draws an initial parameter set from `seed`.
pub fn init_network<T: Scalar>(layers: &[LayerSpec], seed: u64) -> Result<ParamSet<T>> {
    Ok(Network::new(layers.to_vec())?.init(seed))
}
