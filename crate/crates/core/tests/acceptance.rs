//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits nonzero on any failure.

mod common;

use std::panic;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use feddkd::data::{partition_dirichlet, weights_from_sizes, ClientShard, Dataset, PartitionScheme};
use feddkd::fed::rng::{stream, Purpose};
use feddkd::fed::{
    dkd_gradient, dkd_refine, local_train, run_federated, sample_clients, BnMode, ClientState,
    DkdConfig, DkdGradientOptions, Divergence, Federation, Participant,
};
use feddkd::harness::{
    account_round, format_round_csv, run_experiment, Accounting, Algorithm, ExperimentConfig,
};
use feddkd::model::{weighted_average, Mode, Network, ParamSet};
use feddkd::numerics::{
    cross_entropy_with_labels, finite_difference_gradient, kl_divergence, max_relative_error,
    total_variation, Distribution, Tensor,
};

use common::{blobs, configs_dir, fed_config, small_experiment};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Option<Duration>,
    check: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "gradient correctness", limit: Some(Duration::from_secs(10)), check: gradient_correctness },
        Criterion { id: 2, name: "pinsker bound", limit: Some(Duration::from_secs(5)), check: pinsker },
        Criterion { id: 3, name: "triangle bound", limit: Some(Duration::from_secs(5)), check: triangle },
        Criterion { id: 4, name: "linear-model weighted-average oracle", limit: Some(Duration::from_secs(1)), check: linear_oracle },
        Criterion { id: 5, name: "fixed point under identical clients", limit: Some(Duration::from_secs(1)), check: fixed_point },
        Criterion { id: 6, name: "accounting exactness", limit: None, check: accounting },
        Criterion { id: 7, name: "baseline degeneracy", limit: Some(Duration::from_secs(30)), check: degeneracy },
        Criterion { id: 8, name: "per-client BN isolation", limit: None, check: bn_isolation },
        Criterion { id: 9, name: "heterogeneity trend", limit: Some(Duration::from_secs(600)), check: heterogeneity_trend },
        Criterion { id: 10, name: "determinism across worker counts", limit: None, check: determinism },
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(c.check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match (result, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => {
                Err(format!("took {:.2}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()))
            }
            (r, _) => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => {
                failures += 1;
                ("FAIL", d.as_str())
            }
        };
        println!(
            "criterion {:>2} {tag}  {:<38} {:>7.2}s  {detail}",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut nets = 0;
    for trial in 0..12 {
        let input = rng.random_range(2..6);
        let classes = rng.random_range(2..5);
        let depth = trial % 3;
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..7)).collect();
        let bn = trial % 2 == 1;
        let net = Network::mlp(input, &hidden, classes, bn).unwrap();
        let mut params: ParamSet = net.init(trial as u64);
        // move BN affine parameters away from their identity init
        for p in params.params_mut().iter_mut().filter(|p| p.kind.is_trainable()) {
            for v in p.tensor.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let batch = 6;
        let x = random_tensor(&mut rng, batch, input);
        let y: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        let loss = |p: &ParamSet| {
            let (logits, _) = net.forward(p, &x, Mode::Train)?;
            Ok(cross_entropy_with_labels(&logits, &y)?.0)
        };
        let (logits, cache) = net.forward(&params, &x, Mode::Train).unwrap();
        let (_, d_logits) = cross_entropy_with_labels(&logits, &y).unwrap();
        let analytic = net.backward(&params, &cache, &d_logits).unwrap();
        let numeric = finite_difference_gradient(loss, &params, 1e-5).unwrap();
        let err = max_relative_error(&analytic, &numeric, 1e-6).unwrap();
        ensure(err < 1e-4, || format!("network {trial} (hidden {hidden:?}, bn {bn}): max relative error {err:.3e}"))?;
        worst = worst.max(err);
        nets += 1;
    }
    Ok(format!("{nets} networks, worst relative error {worst:.2e}"))
}

fn random_distribution(rng: &mut ChaCha8Rng, classes: usize, allow_zero: bool) -> Distribution {
    let mut w: Vec<f64> = (0..classes)
        .map(|_| {
            let u: f64 = rng.random();
            if allow_zero && u < 0.1 {
                0.0
            } else {
                u.powi(3) + 1e-6
            }
        })
        .collect();
    if w.iter().all(|&v| v == 0.0) {
        w[0] = 1.0;
    }
    let total: f64 = w.iter().sum();
    Distribution::new(w.into_iter().map(|v| v / total).collect()).unwrap()
}

fn pinsker() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    for _ in 0..10_000 {
        let c = rng.random_range(2..12);
        let p = random_distribution(&mut rng, c, true);
        let q = random_distribution(&mut rng, c, false);
        let tv = total_variation(&p, &q).unwrap();
        let bound = (kl_divergence(&p, &q).unwrap() / 2.0).sqrt();
        if tv > bound + 1e-9 {
            violations += 1;
        }
        tightest = tightest.min(bound - tv);
    }
    ensure(violations == 0, || format!("{violations} violations"))?;
    Ok(format!("10000 pairs, 0 violations, min slack {tightest:.2e}"))
}

fn triangle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    for _ in 0..10_000 {
        let c = rng.random_range(2..12);
        let a = random_distribution(&mut rng, c, true);
        let b = random_distribution(&mut rng, c, false);
        let cc = random_distribution(&mut rng, c, false);
        let d = total_variation(&a, &cc).unwrap();
        let rhs = kl_divergence(&a, &b).unwrap() + kl_divergence(&b, &cc).unwrap();
        if d * d > rhs + 1e-9 {
            violations += 1;
        }
    }
    ensure(violations == 0, || format!("{violations} violations"))?;
    Ok("10000 triples, 0 violations".into())
}

/// `Σ_k q_k X_kᵀ(X_k w − X_k w_k)/n` for `Φ(x) = x·W + b`, computed directly.
fn linear_oracle_gradient(xs: &[Tensor], ws: &[ParamSet], w: &ParamSet, q: &[f64]) -> Vec<f64> {
    let weight = w.params()[0].tensor.data();
    let bias = w.params()[1].tensor.data();
    let out = w.params()[1].tensor.len();
    let input = weight.len() / out;
    let mut grad = vec![0.0; weight.len() + out];
    for ((x, wk), &qk) in xs.iter().zip(ws).zip(q) {
        let wk_w = wk.params()[0].tensor.data();
        let wk_b = wk.params()[1].tensor.data();
        let n = x.rows() as f64;
        for r in 0..x.rows() {
            let row = x.row(r);
            for o in 0..out {
                let mut diff = bias[o] - wk_b[o];
                for i in 0..input {
                    diff += row[i] * (weight[i * out + o] - wk_w[i * out + o]);
                }
                for i in 0..input {
                    grad[i * out + o] += qk * row[i] * diff / n;
                }
                grad[weight.len() + o] += qk * diff / n;
            }
        }
    }
    grad
}

fn linear_oracle() -> Outcome {
    let (input, out, n) = (4, 3, 25);
    let net = Network::mlp(input, &[], out, false).unwrap();
    let w1: ParamSet = net.init(1);
    let w2: ParamSet = net.init(2);
    let q = [0.5, 0.5];
    let mean = weighted_average(&[&w1, &w2], &q, false).unwrap();
    let opts = DkdGradientOptions {
        batch_size: n,
        divergence: Divergence::SquaredError,
        bn_mode: BnMode::Shared,
        student_mode: Mode::Train,
    };
    let shard = |x: &Tensor, id| ClientShard {
        client_id: id,
        dataset: Dataset::new(x.clone(), vec![0; n], out).unwrap(),
        indices: (0..n).collect(),
    };
    let engine_norm = |xs: &[Tensor]| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g1 = dkd_gradient(&net, &w1, &mean, &shard(&xs[0], 0), &opts, &mut rng).unwrap();
        let g2 = dkd_gradient(&net, &w2, &mean, &shard(&xs[1], 1), &opts, &mut rng).unwrap();
        let g = feddkd::fed::aggregate_gradients(&[&g1.grad, &g2.grad], &q).unwrap();
        (g.flatten(), g.norm())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(&mut rng, n, input);
    let same = [x.clone(), x];
    let (hom, hom_norm) = engine_norm(&same);
    let hom_oracle = linear_oracle_gradient(&same, &[w1.clone(), w2.clone()], &mean, &q);

    // different second moments: rescale the second client's features
    let x2 = random_tensor(&mut rng, n, input).map(|v| 3.0 * v + 0.5);
    let diff = [same[0].clone(), x2];
    let (het, het_norm) = engine_norm(&diff);
    let het_oracle = linear_oracle_gradient(&diff, &[w1.clone(), w2.clone()], &mean, &q);

    let agree = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + y.abs()));
    ensure(agree(&hom, &hom_oracle) && agree(&het, &het_oracle), || {
        "engine gradient disagrees with the closed form".into()
    })?;
    ensure(hom_norm < 1e-8, || format!("homogeneous gradient norm {hom_norm:.3e}"))?;
    ensure(het_norm > 1e-3, || format!("heterogeneous gradient norm {het_norm:.3e}"))?;
    Ok(format!("homogeneous ‖g‖ = {hom_norm:.1e}, heterogeneous ‖g‖ = {het_norm:.3e}"))
}

fn fixed_point() -> Outcome {
    let net = Network::mlp(5, &[7, 6], 3, false).unwrap();
    let shared: ParamSet = net.init(9);
    let data = blobs(3, 5, 30, 1.0, 4);
    let shards = partition_dirichlet(&data, 3, 1.0, 5).unwrap();
    let participants: Vec<Participant<'_, f64>> = shards
        .iter()
        .map(|s| Participant {
            teacher: &shared,
            shard: s,
        })
        .collect();
    for steps in [1, 3, 10] {
        let cfg = DkdConfig {
            steps,
            batch_size: 16,
            ..DkdConfig::default()
        };
        let out = dkd_refine(&net, &participants, &cfg, 0, 1).unwrap();
        ensure(out.params == shared, || format!("J = {steps}: output differs from the shared model"))?;
        ensure(out.effective_steps == steps, || format!("J = {steps}: {} steps taken", out.effective_steps))?;
    }
    Ok("bitwise equal for J = 1, 3, 10".into())
}

fn accounting() -> Outcome {
    let total = |rounds: usize, j: usize| {
        (0..rounds)
            .fold(Accounting::default(), |a, _| account_round(&a, j, &[5, 7]))
            .comm_rounds
    };
    ensure(total(60, 10) == 660, || format!("T=60, J=10 gives {}", total(60, 10)))?;
    ensure(total(271, 3) == 1084, || format!("T=271, J=3 gives {}", total(271, 3)))?;
    for t in [1, 17, 100] {
        ensure(total(t, 0) == t, || format!("J=0 over {t} rounds gives {}", total(t, 0)))?;
    }

    // an actual run, with warm-up rounds that skip distillation
    let data = blobs(3, 4, 20, 1.0, 1);
    let test = blobs(3, 4, 5, 1.0, 2);
    let net = Network::mlp(4, &[6], 3, false).unwrap();
    let mut cfg = fed_config(6, 3);
    cfg.dkd.warmup_rounds = 2;
    let fed = Federation {
        network: &net,
        shards: partition_dirichlet(&data, 3, 1.0, 0).unwrap(),
        validation: None,
        test: &test,
    };
    let out = run_federated(fed, &cfg).map_err(|e| e.to_string())?;
    let expected: Vec<usize> = (1..=6usize).map(|t| t + 3 * t.saturating_sub(2)).collect();
    let got: Vec<usize> = out.history().iter().map(|r| r.comm_rounds).collect();
    ensure(got == expected, || format!("warm-up run comm {got:?}, expected {expected:?}"))?;
    Ok("660, 1084 and T exactly; warm-up run matches Σ(1 + J_eff)".into())
}

fn degeneracy() -> Outcome {
    let base = small_experiment();
    let run = |alg: Algorithm, tweak: &dyn Fn(&mut ExperimentConfig)| {
        let mut cfg = base.clone();
        cfg.algorithm = alg;
        tweak(&mut cfg);
        run_experiment::<f64>(&cfg, Path::new("."), &mut |_| {}).map_err(|e| e.to_string())
    };
    let avg = run(Algorithm::FedAvg, &|_| {})?;
    type Tweak<'a> = &'a dyn Fn(&mut ExperimentConfig);
    let cases: [(&str, Algorithm, Tweak); 3] = [
        ("FedDKD(J=0)", Algorithm::FedDkd, &|c| c.dkd.steps = 0),
        ("FedProx(mu=0)", Algorithm::FedProx, &|c| c.mu = 0.0),
        ("FedMAX(beta=0)", Algorithm::FedMax, &|c| c.beta = 0.0),
    ];
    for (label, alg, tweak) in cases {
        let other = run(alg, tweak)?;
        ensure(other.outcome.history() == avg.outcome.history(), || format!("{label} history differs from FedAvg"))?;
        ensure(other.outcome.server.global_params == avg.outcome.server.global_params, || {
            format!("{label} final model differs from FedAvg")
        })?;
    }
    // and the degenerate settings are not vacuous
    let dkd = run(Algorithm::FedDkd, &|_| {})?;
    ensure(dkd.outcome.server.global_params != avg.outcome.server.global_params, || {
        "FedDKD with J > 0 matched FedAvg".into()
    })?;
    Ok(format!("{} rounds, histories and models bitwise equal", avg.outcome.history().len()))
}

fn bn_isolation() -> Outcome {
    let data = blobs(4, 5, 40, 1.0, 8);
    let test = blobs(4, 5, 10, 1.0, 9);
    let net = Network::mlp(5, &[8, 6], 4, true).unwrap();
    let shards = partition_dirichlet(&data, 5, 0.3, 3).unwrap();
    let mut cfg = fed_config(5, 3);
    cfg.client_fraction = 0.6;
    cfg.dkd.bn_mode = BnMode::PerClient;
    let fed = Federation {
        network: &net,
        shards: shards.clone(),
        validation: None,
        test: &test,
    };
    let out = run_federated(fed, &cfg).map_err(|e| e.to_string())?;
    for (t, d) in out.diagnostics.iter().enumerate() {
        ensure(d.max_bn_grad_abs == 0.0, || format!("round {t}: BN gradient slot {}", d.max_bn_grad_abs))?;
    }

    // replay the rounds from the public building blocks and compare clients
    let mut clients: Vec<ClientState> = shards.into_iter().map(ClientState::new).collect();
    let mut global: ParamSet = net.init(cfg.init_seed());
    let mut max_sampled_gap = 0;
    for t in 0..cfg.rounds {
        let sampled = sample_clients(clients.len(), cfg.client_fraction, cfg.master_seed, t).unwrap();
        max_sampled_gap = max_sampled_gap.max(clients.len() - sampled.len());
        let mut local = cfg.local;
        local.lr = cfg.local_lr(t);
        let updates: Vec<_> = sampled
            .iter()
            .map(|&k| {
                let mut rng = stream(cfg.master_seed, k as u64, t as u64, Purpose::LocalTrain);
                local_train(&net, &clients[k], &global, &local, BnMode::PerClient, &mut rng).unwrap()
            })
            .collect();
        let participants: Vec<Participant<'_, f64>> = sampled
            .iter()
            .zip(&updates)
            .map(|(&k, u)| Participant {
                teacher: &u.params,
                shard: &clients[k].shard,
            })
            .collect();
        let refined = dkd_refine(&net, &participants, &cfg.dkd, t, cfg.master_seed).unwrap();
        let teachers: Vec<&ParamSet> = updates.iter().map(|u| &u.params).collect();
        let sizes: Vec<usize> = sampled.iter().map(|&k| clients[k].shard.n_k()).collect();
        let averaged = weighted_average(&teachers, &weights_from_sizes(&sizes).unwrap(), false).unwrap();
        for (bn_g, bn_avg) in refined.params.iter().zip(averaged.iter()).filter(|(p, _)| p.is_bn()) {
            ensure(bn_g.tensor == bn_avg.tensor, || format!("round {t}: distillation moved a BN tensor"))?;
        }
        global = refined.params;
        for (&k, u) in sampled.iter().zip(updates) {
            clients[k].params = Some(u.params);
        }
    }
    ensure(max_sampled_gap > 0, || "every client was sampled every round".into())?;
    let mut checked = 0;
    for (mine, theirs) in clients.iter().zip(&out.clients) {
        match (&mine.params, &theirs.params) {
            (Some(a), Some(b)) => {
                for (pa, pb) in a.iter().zip(b.iter()).filter(|(p, _)| p.is_bn()) {
                    ensure(pa.tensor == pb.tensor, || format!("client {}: BN tensors differ from its last local output", mine.client_id))?;
                }
                checked += 1;
            }
            (None, None) => {}
            _ => return Err(format!("client {}: participation differs", mine.client_id)),
        }
    }
    ensure(out.server.global_params == global, || "replayed global model differs".into())?;
    Ok(format!("{checked} clients match their last local output, all BN gradient slots zero"))
}

fn heterogeneity_trend() -> Outcome {
    let cfg = ExperimentConfig::load(&configs_dir().join("heterogeneous_feddkd.json")).map_err(|e| e.to_string())?;
    let mean_best = |alpha: f64, alg: Algorithm| -> Result<f64, String> {
        let mut total = 0.0;
        for seed in 0..5 {
            let mut c = cfg.clone();
            c.algorithm = alg;
            c.partition = PartitionScheme::Dirichlet { alpha };
            c.seed = seed;
            let res = run_experiment::<f64>(&c, Path::new("."), &mut |_| {}).map_err(|e| e.to_string())?;
            total += res.summary.best.map(|b| b.test_acc).unwrap_or(0.0);
        }
        Ok(total / 5.0)
    };
    let het_dkd = mean_best(0.1, Algorithm::FedDkd)?;
    let het_avg = mean_best(0.1, Algorithm::FedAvg)?;
    let hom_dkd = mean_best(1e6, Algorithm::FedDkd)?;
    let hom_avg = mean_best(1e6, Algorithm::FedAvg)?;
    let het_gap = het_dkd - het_avg;
    let hom_gap = hom_dkd - hom_avg;
    let detail = format!(
        "α=0.1: FedDKD {het_dkd:.4} vs FedAvg {het_avg:.4} (gap {het_gap:+.4}); α=1e6 gap {hom_gap:+.4}"
    );
    ensure(het_dkd >= het_avg, || format!("FedDKD below FedAvg on the heterogeneous split: {detail}"))?;
    ensure(het_gap > hom_gap, || format!("advantage did not shrink under homogeneous data: {detail}"))?;
    Ok(detail)
}

fn determinism() -> Outcome {
    let base = small_experiment();
    let csv_for = |workers: usize, algorithm: Algorithm| {
        let mut cfg = base.clone();
        cfg.workers = workers;
        cfg.algorithm = algorithm;
        cfg.model.batch_norm = true;
        cfg.mu = 0.01;
        let res = run_experiment::<f64>(&cfg, Path::new("."), &mut |_| {}).unwrap();
        format_round_csv(res.outcome.history())
    };
    let mut compared = 0;
    for alg in [Algorithm::FedDkd, Algorithm::FedDkdBn, Algorithm::FedProx] {
        let reference = csv_for(1, alg);
        for workers in [1, 2, 4, 8] {
            ensure(csv_for(workers, alg) == reference, || format!("{alg}: workers = {workers} changed rounds.csv"))?;
            compared += 1;
        }
    }
    Ok(format!("{compared} runs byte-identical across 1, 2, 4 and 8 workers"))
}
