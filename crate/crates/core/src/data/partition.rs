//! Splitting a dataset across federated clients.
//!
//! Shards list their rows in ascending source order so that downstream
//! shuffling depends only on the client's own RNG stream.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Attempts before an empty-client Dirichlet partition becomes an error.
pub const DIRICHLET_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard<T: Scalar = f64> {
    pub client_id: usize,
    pub dataset: Dataset<T>,
    /// Rows of the source dataset held by this client.
    pub indices: Vec<usize>,
}

impl<T: Scalar> ClientShard<T> {
    pub fn n_k(&self) -> usize {
        self.dataset.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionScheme {
    Dirichlet { alpha: f64 },
    ClassesPerClient { count: usize },
    MultiSource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub clients: usize,
    pub seed: u64,
}

impl PartitionSpec {
    /// Applies a single-source scheme to `ds`.
    pub fn apply<T: Scalar>(&self, ds: &Dataset<T>) -> Result<Vec<ClientShard<T>>> {
        match self.scheme {
            PartitionScheme::Dirichlet { alpha } => {
                partition_dirichlet(ds, self.clients, alpha, self.seed)
            }
            PartitionScheme::ClassesPerClient { count } => {
                partition_classes_per_client(ds, self.clients, count, self.seed)
            }
            PartitionScheme::MultiSource => Err(Error::Config(
                "multi-source partitioning takes one dataset per client".into(),
            )),
        }
    }
}

/// One draw from `Dir_K(alpha·1)`.
///
/// Gamma variates are handled in log space; for `alpha < 1` the identity
/// `G_α = G_{α+1}·U^{1/α}` avoids underflow to an all-zero vector.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(Error::Config(format!("Dirichlet alpha must be positive, got {alpha}")));
    }
    let boosted = alpha < 1.0;
    let shape = if boosted { alpha + 1.0 } else { alpha };
    let gamma = Gamma::new(shape, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let logs: Vec<f64> = (0..k)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let mut l = g.ln();
            if boosted {
                let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                l += u.ln() / alpha;
            }
            l
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Integer counts summing to `total`, proportional to `proportions`, by
/// largest remainder. Ties go to the lower index.
pub fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn build_shards<T: Scalar>(ds: &Dataset<T>, mut owned: Vec<Vec<usize>>) -> Result<Vec<ClientShard<T>>> {
    owned
        .iter_mut()
        .enumerate()
        .map(|(client_id, idx)| {
            idx.sort_unstable();
            if idx.is_empty() {
                return Err(Error::DegeneratePartition(format!(
                    "client {client_id} received no samples"
                )));
            }
            Ok(ClientShard {
                client_id,
                dataset: ds.subset(idx)?,
                indices: std::mem::take(idx),
            })
        })
        .collect()
}

fn check_clients(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::Config("need at least one client".into()))
    } else {
        Ok(())
    }
}

/// Per class, draws `p ~ Dir_K(alpha)` and hands out that class's (shuffled)
/// samples by largest-remainder counts. Redraws when a client ends up empty.
pub fn partition_dirichlet<T: Scalar>(
    ds: &Dataset<T>,
    k: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<ClientShard<T>>> {
    check_clients(k)?;
    let by_class = ds.class_indices();
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::InvalidDataset(format!("class {c} has no samples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..DIRICHLET_RETRIES {
        let mut owned = vec![Vec::new(); k];
        for class in &by_class {
            let p = sample_dirichlet(alpha, k, &mut rng)?;
            let counts = largest_remainder(&p, class.len());
            let mut shuffled = class.clone();
            shuffled.shuffle(&mut rng);
            let mut start = 0;
            for (client, &n) in counts.iter().enumerate() {
                owned[client].extend_from_slice(&shuffled[start..start + n]);
                start += n;
            }
        }
        if owned.iter().all(|o| !o.is_empty()) {
            return build_shards(ds, owned);
        }
    }
    Err(Error::DegeneratePartition(format!(
        "some client stayed empty after {DIRICHLET_RETRIES} Dirichlet draws (alpha={alpha}, K={k})"
    )))
}

/// Every client draws `count` distinct classes; each class's samples are
/// dealt round-robin to its holders. Unclaimed classes go to a random client.
pub fn partition_classes_per_client<T: Scalar>(
    ds: &Dataset<T>,
    k: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<ClientShard<T>>> {
    check_clients(k)?;
    let c = ds.num_classes();
    if count == 0 || count > c {
        return Err(Error::Config(format!(
            "classes per client must lie in [1, {c}], got {count}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); c];
    for client in 0..k {
        for class in index::sample(&mut rng, c, count) {
            holders[class].push(client);
        }
    }
    let by_class = ds.class_indices();
    for (class, h) in holders.iter_mut().enumerate() {
        if h.is_empty() && !by_class[class].is_empty() {
            h.push(rng.random_range(0..k));
        }
        h.sort_unstable();
    }
    let mut owned = vec![Vec::new(); k];
    for (class, samples) in by_class.iter().enumerate() {
        let h = &holders[class];
        for (i, &s) in samples.iter().enumerate() {
            owned[h[i % h.len()]].push(s);
        }
    }
    build_shards(ds, owned)
}

/// Client `k` receives source `k` whole.
pub fn partition_multisource<T: Scalar>(sources: &[Dataset<T>]) -> Result<Vec<ClientShard<T>>> {
    let first = sources
        .first()
        .ok_or_else(|| Error::Config("need at least one source".into()))?;
    sources
        .iter()
        .enumerate()
        .map(|(client_id, src)| {
            if src.dim() != first.dim() || src.num_classes() != first.num_classes() {
                return Err(Error::InvalidDataset(format!(
                    "source {client_id} has width {} and {} classes, expected {} and {}",
                    src.dim(),
                    src.num_classes(),
                    first.dim(),
                    first.num_classes()
                )));
            }
            Ok(ClientShard {
                client_id,
                dataset: src.clone(),
                indices: (0..src.len()).collect(),
            })
        })
        .collect()
}

/// `q_k = n_k / Σ n_i` over the given shards.
pub fn compute_weights<T: Scalar>(shards: &[&ClientShard<T>]) -> Result<Vec<T>> {
    let sizes: Vec<usize> = shards.iter().map(|s| s.n_k()).collect();
    weights_from_sizes(&sizes)
}

pub fn weights_from_sizes<T: Scalar>(sizes: &[usize]) -> Result<Vec<T>> {
    let total: usize = sizes.iter().sum();
    if sizes.is_empty() || total == 0 {
        return Err(Error::InvalidWeights(
            "cannot weight an empty set of clients".into(),
        ));
    }
    let total = T::of_usize(total);
    Ok(sizes.iter().map(|&n| T::of_usize(n) / total).collect())
}
