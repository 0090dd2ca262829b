//! The federated training loop: every round, all clients alternate
//! personalized and localized-global descent steps on their own shard, the
//! server blends a sampled subset of the clients' localized global models
//! into the shared model, and the round is scored.

use std::time::Instant;

use rayon::prelude::*;

use crate::bnn::{
    client_objective, grad_client_objective, grad_localized_global, init_mu_fan_in, kl_diag_gauss,
    softplus, softplus_inv, Gradients, Likelihood, NetworkArch, TargetRef, VariationalParams,
};
use crate::data::{Dataset, Partition, Targets};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_classifier, hellinger_error};
use crate::tensor::{RngStream, StreamPurpose};

/// How the server combines the clients' localized global models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregator {
    /// Damped parameter averaging: v ← (1−β)·v + (β/S)·Σ v_i.
    Damped,
    /// Moment matching: the global Gaussian takes the clients' mean of means
    /// and absorbs their spread into its variance, then is blended in with
    /// the same damping factor.
    ClosedForm,
}

/// Hyperparameters of a federated run.
#[derive(Debug, Clone, PartialEq)]
pub struct FedConfig {
    /// Communication rounds.
    pub rounds: usize,
    /// Local descent steps per client per round.
    pub local_steps: usize,
    /// Clients sampled for aggregation each round.
    pub subset_size: usize,
    /// Server damping factor in (0, 1]; 1 replaces the global model by the
    /// subset average.
    pub beta: f64,
    /// Weight of the KL pull toward the global model in the client
    /// objective.
    pub zeta: f64,
    /// Learning rate of the personalized step.
    pub eta_personal: f64,
    /// Learning rate of the localized-global step.
    pub eta_global: f64,
    /// Minibatch size (clamped to the shard size).
    pub batch_size: usize,
    /// Monte Carlo weight draws per objective evaluation.
    pub mc_draws: usize,
    /// Initial pre-deviation: σ_init = softplus(rho_init).
    pub rho_init: f64,
    /// Master seed; every random stream in the run derives from it.
    pub seed: u64,
    /// Posterior draws used when scoring models.
    pub eval_draws: usize,
    pub aggregator: Aggregator,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            local_steps: 10,
            subset_size: 10,
            beta: 1.0,
            zeta: 10.0,
            eta_personal: 1e-3,
            eta_global: 1e-3,
            batch_size: 50,
            mc_draws: 1,
            rho_init: -2.5,
            seed: 0,
            eval_draws: 10,
            aggregator: Aggregator::Damped,
        }
    }
}

impl FedConfig {
    pub(crate) fn validate(&self, n_clients: usize) -> Result<()> {
        let positive = |name: &'static str, v: usize| -> Result<()> {
            if v == 0 {
                Err(Error::InvalidParam {
                    name,
                    reason: "must be positive".into(),
                })
            } else {
                Ok(())
            }
        };
        positive("batch_size", self.batch_size)?;
        positive("mc_draws", self.mc_draws)?;
        positive("eval_draws", self.eval_draws)?;
        if self.subset_size == 0 || self.subset_size > n_clients {
            return Err(Error::InvalidParam {
                name: "subset_size",
                reason: format!(
                    "must be between 1 and the number of clients ({n_clients}), got {}",
                    self.subset_size
                ),
            });
        }
        if !(self.beta.is_finite() && self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidParam {
                name: "beta",
                reason: format!("must lie in (0, 1], got {}", self.beta),
            });
        }
        if !(self.zeta.is_finite() && self.zeta >= 0.0) {
            return Err(Error::InvalidParam {
                name: "zeta",
                reason: format!("must be finite and non-negative, got {}", self.zeta),
            });
        }
        for (name, eta) in [
            ("eta_personal", self.eta_personal),
            ("eta_global", self.eta_global),
        ] {
            if !(eta.is_finite() && eta >= 0.0) {
                return Err(Error::InvalidParam {
                    name,
                    reason: format!("must be finite and non-negative, got {eta}"),
                });
            }
        }
        if !self.rho_init.is_finite() {
            return Err(Error::InvalidParam {
                name: "rho_init",
                reason: "must be finite".into(),
            });
        }
        if self.zeta < 1.0 {
            log::warn!(
                "zeta = {} is below 1; the personalization analysis assumes zeta > 1",
                self.zeta
            );
        }
        Ok(())
    }
}

/// One client's persistent state: its personalized posterior and its index
/// shards into the shared dataset.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub personal: VariationalParams,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub global: VariationalParams,
    /// Rounds completed so far.
    pub round: usize,
}

/// Metrics recorded after each round. Accuracies apply to classification
/// runs, the Hellinger error to regression runs with a reference function;
/// inapplicable metrics stay `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Mean accuracy of the personalized models, each on its own test shard.
    pub pm_acc: Option<f64>,
    /// Accuracy of the global model on the union of all test shards.
    pub gm_acc: Option<f64>,
    /// Mean full-shard client objective against the freshly aggregated
    /// global model.
    pub mean_loss: f64,
    /// Mean KL(personal ‖ global); absent for point-estimate baselines.
    pub mean_kl: Option<f64>,
    /// Mean squared Hellinger error of the personalized models on their own
    /// test shards.
    pub hellinger: Option<f64>,
    /// Wall-clock duration of the round. Informational only: it is excluded
    /// from serialized outputs so reruns stay byte-identical.
    pub wall_ms: u64,
}

/// Everything a completed run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rounds: Vec<RoundRecord>,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
}

/// Epoch-style minibatch cursor: a shuffled pass over the shard, reshuffled
/// whenever fewer than a full batch remains.
pub(crate) struct MinibatchSampler {
    order: Vec<usize>,
    pos: usize,
}

impl MinibatchSampler {
    pub(crate) fn new(shard: &[usize]) -> Self {
        Self {
            order: shard.to_vec(),
            pos: shard.len(),
        }
    }

    pub(crate) fn next(&mut self, b: usize, rng: &mut RngStream) -> &[usize] {
        debug_assert!(b <= self.order.len());
        if self.pos + b > self.order.len() {
            rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let s = &self.order[self.pos..self.pos + b];
        self.pos += b;
        s
    }
}

fn sgd_step(v: &mut VariationalParams, grad: &Gradients, eta: f64) {
    for m in 0..v.len() {
        v.mu[m] -= eta * grad.d_mu[m];
        v.rho[m] -= eta * grad.d_rho[m];
    }
}

/// Runs one client's local work for a round: `local_steps` iterations of a
/// personalized descent step (minibatch objective with the KL pull toward
/// the client's current copy of the global model) followed by a
/// localized-global step (KL descent of that copy toward the just-updated
/// personalized model). Returns the client's localized global model; the
/// personalized model is updated in place.
pub fn client_update(
    arch: &NetworkArch,
    data: &Dataset,
    client: &mut ClientState,
    global: &VariationalParams,
    cfg: &FedConfig,
    round: usize,
) -> Result<VariationalParams> {
    let n = client.train.len();
    if n == 0 {
        return Err(Error::EmptyInput("client_update: train shard"));
    }
    let b = cfg.batch_size.min(n);
    let p = client.personal.len();
    let mut rng = RngStream::for_context(
        cfg.seed,
        StreamPurpose::ClientUpdate,
        client.id as u64,
        round as u64,
    );
    let mut v_global = global.clone();
    let mut sampler = MinibatchSampler::new(&client.train);
    for _ in 0..cfg.local_steps {
        let batch_idx = sampler.next(b, &mut rng).to_vec();
        let batch: Vec<(&[f64], TargetRef)> = batch_idx.iter().map(|&i| data.sample(i)).collect();
        let g_draws: Vec<Vec<f64>> = (0..cfg.mc_draws).map(|_| rng.randn(p)).collect();
        let grad = grad_client_objective(
            arch,
            &client.personal,
            &v_global,
            &batch,
            &g_draws,
            cfg.zeta,
            n,
            b,
        )?;
        sgd_step(&mut client.personal, &grad, cfg.eta_personal);
        let g_global = grad_localized_global(&client.personal, &v_global)?;
        sgd_step(&mut v_global, &g_global, cfg.eta_global);
    }
    Ok(v_global)
}

fn check_aggregation_inputs(locals: &[&VariationalParams], len: usize) -> Result<()> {
    if locals.is_empty() {
        return Err(Error::EmptyInput("aggregate: locals"));
    }
    if let Some(bad) = locals.iter().find(|v| v.len() != len) {
        return Err(Error::DimensionMismatch {
            context: "aggregate: local params",
            expected: len,
            actual: bad.len(),
        });
    }
    Ok(())
}

/// Damped parameter averaging of the submitted local models into the global
/// model: v ← (1−β)·v + (β/S)·Σ v_i, applied to μ and ρ alike.
pub fn server_aggregate(
    global: &mut VariationalParams,
    locals: &[&VariationalParams],
    beta: f64,
) -> Result<()> {
    check_aggregation_inputs(locals, global.len())?;
    if !(beta.is_finite() && beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidParam {
            name: "beta",
            reason: format!("must lie in (0, 1], got {beta}"),
        });
    }
    let s = locals.len() as f64;
    for m in 0..global.len() {
        let mean_mu = locals.iter().map(|v| v.mu[m]).sum::<f64>() / s;
        let mean_rho = locals.iter().map(|v| v.rho[m]).sum::<f64>() / s;
        global.mu[m] = (1.0 - beta) * global.mu[m] + beta * mean_mu;
        global.rho[m] = (1.0 - beta) * global.rho[m] + beta * mean_rho;
    }
    Ok(())
}

/// The KL-optimal global Gaussian for a set of client posteriors, per
/// coordinate: μ_w = mean(μ_i) and σ²_w = mean(σ²_i + (μ_i − μ_w)²) — the
/// minimizer of the average KL(q_i ‖ w) over diagonal Gaussians w.
pub fn optimal_global_aggregate(locals: &[&VariationalParams]) -> Result<VariationalParams> {
    if locals.is_empty() {
        return Err(Error::EmptyInput("optimal_global_aggregate"));
    }
    let len = locals[0].len();
    check_aggregation_inputs(locals, len)?;
    let s = locals.len() as f64;
    let mut mu = vec![0.0; len];
    let mut rho = vec![0.0; len];
    for m in 0..len {
        let mean_mu = locals.iter().map(|v| v.mu[m]).sum::<f64>() / s;
        let var: f64 = locals
            .iter()
            .map(|v| {
                let sig = softplus(v.rho[m]);
                let d = v.mu[m] - mean_mu;
                sig * sig + d * d
            })
            .sum::<f64>()
            / s;
        mu[m] = mean_mu;
        rho[m] = softplus_inv(var.sqrt().max(1e-12))?;
    }
    VariationalParams::new(mu, rho)
}

fn check_arch_matches_data(arch: &NetworkArch, data: &Dataset) -> Result<()> {
    if arch.input_dim() != data.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "run: input width",
            expected: data.input_dim(),
            actual: arch.input_dim(),
        });
    }
    match (&data.targets, &arch.likelihood) {
        (Targets::Classes { classes, .. }, Likelihood::Categorical { classes: c }) => {
            if classes != c {
                return Err(Error::DimensionMismatch {
                    context: "run: class count",
                    expected: *classes,
                    actual: *c,
                });
            }
        }
        (Targets::Values(m), Likelihood::Gaussian { .. }) => {
            if m.cols() != arch.output_dim() {
                return Err(Error::DimensionMismatch {
                    context: "run: output width",
                    expected: m.cols(),
                    actual: arch.output_dim(),
                });
            }
        }
        (Targets::Classes { .. }, lik @ Likelihood::Gaussian { .. }) => {
            return Err(Error::LikelihoodKind {
                expected: "categorical",
                actual: lik.name(),
            });
        }
        (Targets::Values(_), lik @ Likelihood::Categorical { .. }) => {
            return Err(Error::LikelihoodKind {
                expected: "gaussian",
                actual: lik.name(),
            });
        }
    }
    Ok(())
}

struct ClientEval {
    loss: f64,
    kl: f64,
    pm_acc: Option<f64>,
    hellinger: Option<f64>,
}

fn evaluate_round(
    arch: &NetworkArch,
    data: &Dataset,
    clients: &[ClientState],
    global: &VariationalParams,
    cfg: &FedConfig,
    round: usize,
    round_start: Instant,
) -> Result<RoundRecord> {
    let n_clients = clients.len();
    let classification = data.labels().is_some();
    let regression_truth = data.true_fn.is_some() && !classification;

    let evals: Vec<ClientEval> = clients
        .par_iter()
        .map(|c| -> Result<ClientEval> {
            let n = c.train.len();
            let batch: Vec<(&[f64], TargetRef)> =
                c.train.iter().map(|&i| data.sample(i)).collect();
            let mut loss_rng = RngStream::for_context(
                cfg.seed,
                StreamPurpose::LossEval,
                c.id as u64,
                round as u64,
            );
            let g = vec![loss_rng.randn(c.personal.len())];
            let loss =
                client_objective(arch, &c.personal, global, &batch, &g, cfg.zeta, n, n)?;
            let kl = kl_diag_gauss(&c.personal, global)?;

            let mut eval_rng =
                RngStream::for_context(cfg.seed, StreamPurpose::Eval, c.id as u64, round as u64);
            let (pm_acc, hellinger) = if c.test.is_empty() {
                (None, None)
            } else if classification {
                let report = evaluate_classifier(
                    arch,
                    &c.personal,
                    data,
                    &c.test,
                    cfg.eval_draws,
                    &mut eval_rng,
                )?;
                (Some(report.accuracy), None)
            } else if regression_truth {
                let d2 = hellinger_error(
                    arch,
                    &c.personal,
                    data,
                    &c.test,
                    cfg.eval_draws,
                    &mut eval_rng,
                )?;
                (None, Some(d2))
            } else {
                (None, None)
            };
            Ok(ClientEval {
                loss,
                kl,
                pm_acc,
                hellinger,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mean_loss = evals.iter().map(|e| e.loss).sum::<f64>() / n_clients as f64;
    let mean_kl = Some(evals.iter().map(|e| e.kl).sum::<f64>() / n_clients as f64);
    let mean_if_all = |xs: Vec<f64>| {
        if xs.len() == n_clients {
            Some(xs.iter().sum::<f64>() / n_clients as f64)
        } else {
            None
        }
    };
    let pm_acc = mean_if_all(evals.iter().filter_map(|e| e.pm_acc).collect());
    let hellinger = mean_if_all(evals.iter().filter_map(|e| e.hellinger).collect());

    let gm_acc = if classification {
        let union: Vec<usize> = clients
            .iter()
            .flat_map(|c| c.test.iter().copied())
            .collect();
        if union.is_empty() {
            None
        } else {
            let mut rng = RngStream::for_context(
                cfg.seed,
                StreamPurpose::Eval,
                n_clients as u64,
                round as u64,
            );
            Some(evaluate_classifier(arch, global, data, &union, cfg.eval_draws, &mut rng)?.accuracy)
        }
    } else {
        None
    };

    Ok(RoundRecord {
        round,
        pm_acc,
        gm_acc,
        mean_loss,
        mean_kl,
        hellinger,
        wall_ms: round_start.elapsed().as_millis() as u64,
    })
}

/// Runs the full federated procedure and returns the per-round records plus
/// the final server and client states.
///
/// Every round: (1) all clients run [`client_update`] in parallel — results
/// are independent of thread count because each client draws from its own
/// seeded stream; (2) a uniform subset of `subset_size` clients is sampled
/// and their localized global models aggregated; (3) the round is scored.
pub fn run(
    arch: &NetworkArch,
    data: &Dataset,
    partition: &Partition,
    cfg: &FedConfig,
) -> Result<RunOutput> {
    let n_clients = partition.train_shards.len();
    if n_clients == 0 {
        return Err(Error::EmptyInput("run: partition"));
    }
    if partition.test_shards.len() != n_clients {
        return Err(Error::DimensionMismatch {
            context: "run: test shards",
            expected: n_clients,
            actual: partition.test_shards.len(),
        });
    }
    cfg.validate(n_clients)?;
    check_arch_matches_data(arch, data)?;
    for shard in partition.train_shards.iter().chain(&partition.test_shards) {
        if let Some(&bad) = shard.iter().find(|&&i| i >= data.len()) {
            return Err(Error::InvalidParam {
                name: "partition",
                reason: format!("index {bad} out of range for {} samples", data.len()),
            });
        }
    }
    if let Some(empty) = partition.train_shards.iter().position(|s| s.is_empty()) {
        return Err(Error::InvalidParam {
            name: "partition",
            reason: format!("client {empty} has an empty train shard"),
        });
    }

    let p = arch.num_params();
    let mut init_rng = RngStream::for_context(cfg.seed, StreamPurpose::Init, 0, 0);
    let global = VariationalParams::new(init_mu_fan_in(arch, &mut init_rng), vec![cfg.rho_init; p])?;
    let mut clients: Vec<ClientState> = (0..n_clients)
        .map(|i| ClientState {
            id: i,
            personal: global.clone(),
            train: partition.train_shards[i].clone(),
            test: partition.test_shards[i].clone(),
        })
        .collect();
    let mut server = ServerState { global, round: 0 };

    let mut records = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let round_start = Instant::now();
        let global_snapshot = server.global.clone();
        let locals: Vec<VariationalParams> = clients
            .par_iter_mut()
            .map(|c| client_update(arch, data, c, &global_snapshot, cfg, t))
            .collect::<Result<Vec<_>>>()?;

        let mut sub_rng =
            RngStream::for_context(cfg.seed, StreamPurpose::Subsample, 0, t as u64);
        let chosen = sub_rng.sample_indices(n_clients, cfg.subset_size);
        let selected: Vec<&VariationalParams> = chosen.iter().map(|&i| &locals[i]).collect();
        match cfg.aggregator {
            Aggregator::Damped => server_aggregate(&mut server.global, &selected, cfg.beta)?,
            Aggregator::ClosedForm => {
                let opt = optimal_global_aggregate(&selected)?;
                server_aggregate(&mut server.global, &[&opt], cfg.beta)?;
            }
        }

        records.push(evaluate_round(
            arch,
            data,
            &clients,
            &server.global,
            cfg,
            t,
            round_start,
        )?);
        server.round = t + 1;
    }
    Ok(RunOutput {
        rounds: records,
        server,
        clients,
    })
}
