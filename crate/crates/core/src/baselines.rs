//! Point-estimate federated averaging, the non-Bayesian baseline the
//! personalized runs are compared against.
//!
//! Each round a subset of clients copies the global weight vector, runs
//! plain minibatch SGD on its own mean negative log-likelihood, and the
//! server averages the returned weights (with the same damping factor as
//! the variational loop). There is no posterior and no personalization:
//! only the shared global model is scored.

use rayon::prelude::*;

use crate::bnn::{
    forward, grad_loglik_theta, init_mu_fan_in, log_likelihood, NetworkArch, SampledWeights,
    TargetRef,
};
use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::federation::{FedConfig, MinibatchSampler, RoundRecord};
use crate::metrics::argmax;
use crate::tensor::{RngStream, StreamPurpose};

/// A plain weight vector, the whole state of a point-estimate model.
#[derive(Debug, Clone, PartialEq)]
pub struct PointParams {
    pub theta: Vec<f64>,
}

impl PointParams {
    fn as_weights(&self) -> SampledWeights {
        SampledWeights {
            theta: self.theta.clone(),
        }
    }
}

/// One client's local work: `local_steps` minibatch SGD steps on the mean
/// negative log-likelihood of its shard, starting from the global weights.
/// The learning rate is `eta_personal`.
pub fn fedavg_client_update(
    arch: &NetworkArch,
    data: &Dataset,
    shard: &[usize],
    global: &PointParams,
    cfg: &FedConfig,
    client_id: usize,
    round: usize,
) -> Result<PointParams> {
    if shard.is_empty() {
        return Err(Error::EmptyInput("fedavg_client_update: train shard"));
    }
    if global.theta.len() != arch.num_params() {
        return Err(Error::DimensionMismatch {
            context: "fedavg_client_update: params",
            expected: arch.num_params(),
            actual: global.theta.len(),
        });
    }
    let b = cfg.batch_size.min(shard.len());
    let mut rng = RngStream::for_context(
        cfg.seed,
        StreamPurpose::ClientUpdate,
        client_id as u64,
        round as u64,
    );
    let mut sampler = MinibatchSampler::new(shard);
    let mut local = global.clone();
    for _ in 0..cfg.local_steps {
        let batch_idx = sampler.next(b, &mut rng).to_vec();
        let batch: Vec<(&[f64], TargetRef)> = batch_idx.iter().map(|&i| data.sample(i)).collect();
        let grad = grad_loglik_theta(arch, &local.as_weights(), &batch)?;
        // Descent on the mean NLL is ascent on the mean log-likelihood.
        let step = cfg.eta_personal / b as f64;
        for (t, g) in local.theta.iter_mut().zip(&grad) {
            *t += step * g;
        }
    }
    Ok(local)
}

fn mean_nll(arch: &NetworkArch, theta: &SampledWeights, data: &Dataset, shard: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &i in shard {
        let (x, t) = data.sample(i);
        let out = forward(arch, theta, x)?;
        total -= log_likelihood(arch, &out, t)?;
    }
    Ok(total / shard.len() as f64)
}

fn point_accuracy(
    arch: &NetworkArch,
    theta: &SampledWeights,
    data: &Dataset,
    indices: &[usize],
) -> Result<f64> {
    let labels = data.labels().ok_or(Error::LikelihoodKind {
        expected: "categorical",
        actual: "gaussian",
    })?;
    let mut correct = 0usize;
    for &i in indices {
        let logits = forward(arch, theta, data.features.row(i))?;
        if argmax(&logits) == labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Squared Hellinger error of a fixed weight vector against the dataset's
/// reference function (the point-model analogue of the posterior-averaged
/// metric).
fn point_hellinger(
    arch: &NetworkArch,
    theta: &SampledWeights,
    data: &Dataset,
    indices: &[usize],
    noise_std: f64,
) -> Result<f64> {
    let true_fn = data.true_fn.as_ref().ok_or(Error::InvalidParam {
        name: "data",
        reason: "no reference function to measure generalization against".into(),
    })?;
    let denom = 8.0 * noise_std * noise_std;
    let mut total = 0.0;
    for &i in indices {
        let x = data.features.row(i);
        let clean = true_fn.eval(x)?;
        let f = forward(arch, theta, x)?;
        let sq: f64 = f.iter().zip(&clean).map(|(a, c)| (a - c) * (a - c)).sum();
        total += 1.0 - (-sq / denom).exp();
    }
    Ok(total / indices.len() as f64)
}

/// Result of a federated-averaging run: the per-round records (with the
/// personalization-specific fields left `None`) and the final global model.
#[derive(Debug, Clone)]
pub struct FedAvgOutput {
    pub rounds: Vec<RoundRecord>,
    pub global: PointParams,
}

/// Runs federated averaging: each round samples `subset_size` clients, has
/// them run local SGD from the current global weights, and replaces the
/// global model by the damped average of their results. Records carry the
/// global model's metrics only.
pub fn fedavg_run(
    arch: &NetworkArch,
    data: &Dataset,
    partition: &Partition,
    cfg: &FedConfig,
) -> Result<FedAvgOutput> {
    let n_clients = partition.train_shards.len();
    if n_clients == 0 {
        return Err(Error::EmptyInput("fedavg_run: partition"));
    }
    cfg.validate(n_clients)?;
    if let Some(empty) = partition.train_shards.iter().position(|s| s.is_empty()) {
        return Err(Error::InvalidParam {
            name: "partition",
            reason: format!("client {empty} has an empty train shard"),
        });
    }

    let mut init_rng = RngStream::for_context(cfg.seed, StreamPurpose::Init, 0, 0);
    let mut global = PointParams {
        theta: init_mu_fan_in(arch, &mut init_rng),
    };
    let union_test: Vec<usize> = partition
        .test_shards
        .iter()
        .flat_map(|s| s.iter().copied())
        .collect();
    let classification = data.labels().is_some();
    let noise_std = match arch.likelihood {
        crate::bnn::Likelihood::Gaussian { noise_std } => Some(noise_std),
        crate::bnn::Likelihood::Categorical { .. } => None,
    };

    let mut records = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let round_start = std::time::Instant::now();
        let mut sub_rng = RngStream::for_context(cfg.seed, StreamPurpose::Subsample, 0, t as u64);
        let chosen = sub_rng.sample_indices(n_clients, cfg.subset_size);
        let locals: Vec<PointParams> = chosen
            .par_iter()
            .map(|&i| {
                fedavg_client_update(arch, data, &partition.train_shards[i], &global, cfg, i, t)
            })
            .collect::<Result<Vec<_>>>()?;

        let s = locals.len() as f64;
        for m in 0..global.theta.len() {
            let mean = locals.iter().map(|l| l.theta[m]).sum::<f64>() / s;
            global.theta[m] = (1.0 - cfg.beta) * global.theta[m] + cfg.beta * mean;
        }

        let weights = global.as_weights();
        let losses: Vec<f64> = partition
            .train_shards
            .par_iter()
            .map(|shard| mean_nll(arch, &weights, data, shard))
            .collect::<Result<Vec<_>>>()?;
        let mean_loss = losses.iter().sum::<f64>() / n_clients as f64;

        let gm_acc = if classification && !union_test.is_empty() {
            Some(point_accuracy(arch, &weights, data, &union_test)?)
        } else {
            None
        };
        let hellinger = match noise_std {
            Some(ns) if data.true_fn.is_some() && !union_test.is_empty() => {
                Some(point_hellinger(arch, &weights, data, &union_test, ns)?)
            }
            _ => None,
        };

        records.push(RoundRecord {
            round: t,
            pm_acc: None,
            gm_acc,
            mean_loss,
            mean_kl: None,
            hellinger,
            wall_ms: round_start.elapsed().as_millis() as u64,
        });
    }
    Ok(FedAvgOutput {
        rounds: records,
        global,
    })
}
