//! Experiment configuration: a flat `key = value` file format, CLI flag
//! overrides, and resolution into a validated [`ExperimentConfig`].
//!
//! Precedence is defaults < config file < command-line flags. Keys that do
//! not apply to the selected dataset are rejected when set explicitly, so a
//! typo'd experiment fails loudly instead of silently running the defaults.

use std::collections::HashSet;
use std::path::PathBuf;

use clap::Args;
use pfedbayes::data::SplitSpec;
use pfedbayes::federation::{Aggregator, FedConfig};

use crate::CliError;

/// Which training algorithm drives the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Personalized variational training with a localized global model.
    PFedBayes,
    /// Point-estimate federated averaging baseline.
    FedAvg,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::PFedBayes => "pfedbayes",
            Algorithm::FedAvg => "fedavg",
        }
    }
}

/// Fully resolved dataset description, including how it is split across
/// clients.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    /// Gaussian class clusters with label-skewed client shards.
    Blobs {
        n_clients: usize,
        labels_per_client: usize,
        classes: usize,
        input_dim: usize,
        spread: f64,
        train_per_class: usize,
        test_per_class: usize,
    },
    /// Noisy samples of a fixed random reference network, split into
    /// contiguous per-client shards.
    Synth {
        n_clients: usize,
        samples_per_client: usize,
        test_per_client: usize,
        input_dim: usize,
        output_dim: usize,
        noise_std: f64,
    },
    /// Images in IDX format (optionally gzipped) with label-skewed shards.
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        n_clients: usize,
        labels_per_client: usize,
        split: SplitSpec,
    },
}

impl DatasetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::Blobs { .. } => "blobs",
            DatasetSpec::Synth { .. } => "synth",
            DatasetSpec::Mnist { .. } => "mnist",
        }
    }
}

/// A complete, validated experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub dataset: DatasetSpec,
    /// Hidden layer widths; input/output widths come from the dataset.
    pub hidden: Vec<usize>,
    pub fed: FedConfig,
    /// Rayon worker threads; 0 keeps the library default.
    pub workers: usize,
    /// Directory that receives rounds.csv / summary.csv (created on demand).
    pub out: PathBuf,
}

/// Command-line flags shared by `run` and `gen-data`. Every field mirrors a
/// config-file key; flags win over file values.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Path to a key = value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training algorithm: pfedbayes or fedavg.
    #[arg(long)]
    pub algorithm: Option<String>,
    /// Dataset: blobs, synth, or mnist.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Per-client split size tier for mnist: small, medium, or large.
    #[arg(long)]
    pub tier: Option<String>,
    /// Number of communication rounds.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Local optimization steps per client per round.
    #[arg(long = "local-steps")]
    pub local_steps: Option<usize>,
    /// Number of clients sampled for aggregation each round.
    #[arg(long = "subset-size")]
    pub subset_size: Option<usize>,
    /// Server damping factor in (0, 1].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Weight of the KL term in the client objective.
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Learning rate for the personalized update.
    #[arg(long)]
    pub eta1: Option<f64>,
    /// Learning rate for the localized global update.
    #[arg(long)]
    pub eta2: Option<f64>,
    /// Minibatch size (capped at the client's shard size).
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    /// Monte Carlo weight draws per objective evaluation.
    #[arg(long = "mc-draws")]
    pub mc_draws: Option<usize>,
    /// Initial value of the pre-softplus scale parameters.
    #[arg(long = "rho-init", allow_hyphen_values = true)]
    pub rho_init: Option<f64>,
    /// Base RNG seed; identical seeds reproduce runs byte for byte.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = library default).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Total number of clients.
    #[arg(long = "n-clients")]
    pub n_clients: Option<usize>,
    /// Distinct labels assigned to each client (blobs, mnist).
    #[arg(long = "labels-per-client")]
    pub labels_per_client: Option<usize>,
    /// Comma-separated hidden layer widths, e.g. "100" or "64,32".
    #[arg(long)]
    pub hidden: Option<String>,
    /// Feature dimension (blobs, synth).
    #[arg(long = "input-dim")]
    pub input_dim: Option<usize>,
    /// Number of classes (blobs).
    #[arg(long)]
    pub classes: Option<usize>,
    /// Regression target dimension (synth).
    #[arg(long = "output-dim")]
    pub output_dim: Option<usize>,
    /// Spread of blob cluster centers (blobs).
    #[arg(long = "blob-spread")]
    pub blob_spread: Option<f64>,
    /// Observation noise standard deviation (synth).
    #[arg(long = "noise-std")]
    pub noise_std: Option<f64>,
    /// Training samples per assigned class per client (blobs).
    #[arg(long = "train-per-class")]
    pub train_per_class: Option<usize>,
    /// Test samples per assigned class per client (blobs).
    #[arg(long = "test-per-class")]
    pub test_per_class: Option<usize>,
    /// Training samples per client (synth).
    #[arg(long = "samples-per-client")]
    pub samples_per_client: Option<usize>,
    /// Test samples per client (synth).
    #[arg(long = "test-per-client")]
    pub test_per_client: Option<usize>,
    /// Weight draws used when evaluating accuracy and generalization error.
    #[arg(long = "eval-draws")]
    pub eval_draws: Option<usize>,
    /// Path to an IDX image file (mnist).
    #[arg(long = "mnist-images")]
    pub mnist_images: Option<PathBuf>,
    /// Path to an IDX label file (mnist).
    #[arg(long = "mnist-labels")]
    pub mnist_labels: Option<PathBuf>,
    /// Server aggregation rule: damped or closed_form.
    #[arg(long)]
    pub aggregator: Option<String>,
    /// Output directory for CSV files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Partially specified configuration; `None` means "not set here".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub algorithm: Option<String>,
    pub dataset: Option<String>,
    pub tier: Option<String>,
    pub rounds: Option<usize>,
    pub local_steps: Option<usize>,
    pub subset_size: Option<usize>,
    pub beta: Option<f64>,
    pub zeta: Option<f64>,
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    pub batch_size: Option<usize>,
    pub mc_draws: Option<usize>,
    pub rho_init: Option<f64>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub n_clients: Option<usize>,
    pub labels_per_client: Option<usize>,
    pub hidden: Option<String>,
    pub input_dim: Option<usize>,
    pub classes: Option<usize>,
    pub output_dim: Option<usize>,
    pub blob_spread: Option<f64>,
    pub noise_std: Option<f64>,
    pub train_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    pub samples_per_client: Option<usize>,
    pub test_per_client: Option<usize>,
    pub eval_draws: Option<usize>,
    pub mnist_images: Option<PathBuf>,
    pub mnist_labels: Option<PathBuf>,
    pub aggregator: Option<String>,
    pub out: Option<PathBuf>,
}

macro_rules! take_if_set {
    ($dst:expr, $src:expr, $($field:ident),+ $(,)?) => {
        $(if $src.$field.is_some() {
            $dst.$field = $src.$field.clone();
        })+
    };
}

impl Overrides {
    /// Layers `other` on top of `self`: any key set in `other` wins.
    pub fn merged_with(mut self, other: &Overrides) -> Overrides {
        take_if_set!(
            self, other, algorithm, dataset, tier, rounds, local_steps, subset_size, beta, zeta,
            eta1, eta2, batch_size, mc_draws, rho_init, seed, workers, n_clients,
            labels_per_client, hidden, input_dim, classes, output_dim, blob_spread, noise_std,
            train_per_class, test_per_class, samples_per_client, test_per_client, eval_draws,
            mnist_images, mnist_labels, aggregator, out,
        );
        self
    }

    pub fn from_args(args: &RunArgs) -> Overrides {
        Overrides {
            algorithm: args.algorithm.clone(),
            dataset: args.dataset.clone(),
            tier: args.tier.clone(),
            rounds: args.rounds,
            local_steps: args.local_steps,
            subset_size: args.subset_size,
            beta: args.beta,
            zeta: args.zeta,
            eta1: args.eta1,
            eta2: args.eta2,
            batch_size: args.batch_size,
            mc_draws: args.mc_draws,
            rho_init: args.rho_init,
            seed: args.seed,
            workers: args.workers,
            n_clients: args.n_clients,
            labels_per_client: args.labels_per_client,
            hidden: args.hidden.clone(),
            input_dim: args.input_dim,
            classes: args.classes,
            output_dim: args.output_dim,
            blob_spread: args.blob_spread,
            noise_std: args.noise_std,
            train_per_class: args.train_per_class,
            test_per_class: args.test_per_class,
            samples_per_client: args.samples_per_client,
            test_per_client: args.test_per_client,
            eval_draws: args.eval_draws,
            mnist_images: args.mnist_images.clone(),
            mnist_labels: args.mnist_labels.clone(),
            aggregator: args.aggregator.clone(),
            out: args.out.clone(),
        }
    }

    /// Fills unset keys with defaults and validates cross-key consistency.
    pub fn resolve(self) -> Result<ExperimentConfig, CliError> {
        let algorithm = match self.algorithm.as_deref() {
            None | Some("pfedbayes") => Algorithm::PFedBayes,
            Some("fedavg") => Algorithm::FedAvg,
            Some(other) => {
                return Err(invalid(format!(
                    "unknown algorithm `{other}`: expected pfedbayes or fedavg"
                )))
            }
        };

        let n_clients = self.n_clients.unwrap_or(10);
        let dataset = match self.dataset.as_deref() {
            None | Some("blobs") => {
                self.forbid_synth_keys("blobs")?;
                self.forbid_mnist_keys("blobs")?;
                DatasetSpec::Blobs {
                    n_clients,
                    labels_per_client: self.labels_per_client.unwrap_or(5),
                    classes: self.classes.unwrap_or(10),
                    input_dim: self.input_dim.unwrap_or(10),
                    spread: self.blob_spread.unwrap_or(1.35),
                    train_per_class: self.train_per_class.unwrap_or(100),
                    test_per_class: self.test_per_class.unwrap_or(40),
                }
            }
            Some("synth") => {
                self.forbid_blobs_keys("synth")?;
                self.forbid_mnist_keys("synth")?;
                DatasetSpec::Synth {
                    n_clients,
                    samples_per_client: self.samples_per_client.unwrap_or(150),
                    test_per_client: self.test_per_client.unwrap_or(50),
                    input_dim: self.input_dim.unwrap_or(10),
                    output_dim: self.output_dim.unwrap_or(1),
                    noise_std: self.noise_std.unwrap_or(0.3),
                }
            }
            Some("mnist") => {
                self.forbid_blobs_keys("mnist")?;
                self.forbid_synth_keys("mnist")?;
                forbid(&self.input_dim, "input_dim", "it is derived from the image size")?;
                forbid(&self.classes, "classes", "it is derived from the label file")?;
                let split = match self.tier.as_deref() {
                    None | Some("small") => SplitSpec::small(),
                    Some("medium") => SplitSpec::medium(),
                    Some("large") => SplitSpec::large(),
                    Some(other) => {
                        return Err(invalid(format!(
                            "unknown tier `{other}`: expected small, medium, or large"
                        )))
                    }
                };
                DatasetSpec::Mnist {
                    images: self
                        .mnist_images
                        .clone()
                        .ok_or_else(|| invalid("mnist_images is required when dataset = mnist"))?,
                    labels: self
                        .mnist_labels
                        .clone()
                        .ok_or_else(|| invalid("mnist_labels is required when dataset = mnist"))?,
                    n_clients,
                    labels_per_client: self.labels_per_client.unwrap_or(5),
                    split,
                }
            }
            Some(other) => {
                return Err(invalid(format!(
                    "unknown dataset `{other}`: expected blobs, synth, or mnist"
                )))
            }
        };
        if !matches!(dataset, DatasetSpec::Mnist { .. }) {
            forbid(&self.tier, "tier", "it only selects mnist split sizes")?;
        }

        let aggregator = match self.aggregator.as_deref() {
            None | Some("damped") => Aggregator::Damped,
            Some("closed_form") => Aggregator::ClosedForm,
            Some(other) => {
                return Err(invalid(format!(
                    "unknown aggregator `{other}`: expected damped or closed_form"
                )))
            }
        };

        let hidden = parse_hidden(self.hidden.as_deref().unwrap_or("100"))
            .map_err(CliError::Invalid)?;

        let fed = FedConfig {
            rounds: self.rounds.unwrap_or(10),
            local_steps: self.local_steps.unwrap_or(10),
            subset_size: self.subset_size.unwrap_or_else(|| n_clients.min(10)),
            beta: self.beta.unwrap_or(1.0),
            zeta: self.zeta.unwrap_or(10.0),
            eta_personal: self.eta1.unwrap_or(1e-3),
            eta_global: self.eta2.unwrap_or(1e-3),
            batch_size: self.batch_size.unwrap_or(50),
            mc_draws: self.mc_draws.unwrap_or(1),
            rho_init: self.rho_init.unwrap_or(-2.5),
            seed: self.seed.unwrap_or(0),
            eval_draws: self.eval_draws.unwrap_or(10),
            aggregator,
        };

        Ok(ExperimentConfig {
            algorithm,
            dataset,
            hidden,
            fed,
            workers: self.workers.unwrap_or(0),
            out: self.out.clone().unwrap_or_else(|| PathBuf::from("out")),
        })
    }

    fn forbid_blobs_keys(&self, dataset: &str) -> Result<(), CliError> {
        let why = format!("it only applies to the blobs dataset, not {dataset}");
        forbid(&self.classes, "classes", &why)?;
        forbid(&self.blob_spread, "blob_spread", &why)?;
        forbid(&self.train_per_class, "train_per_class", &why)?;
        forbid(&self.test_per_class, "test_per_class", &why)?;
        if dataset == "synth" {
            forbid(&self.labels_per_client, "labels_per_client", &why)?;
        }
        Ok(())
    }

    fn forbid_synth_keys(&self, dataset: &str) -> Result<(), CliError> {
        let why = format!("it only applies to the synth dataset, not {dataset}");
        forbid(&self.samples_per_client, "samples_per_client", &why)?;
        forbid(&self.test_per_client, "test_per_client", &why)?;
        forbid(&self.output_dim, "output_dim", &why)?;
        forbid(&self.noise_std, "noise_std", &why)?;
        Ok(())
    }

    fn forbid_mnist_keys(&self, dataset: &str) -> Result<(), CliError> {
        let why = format!("it only applies to the mnist dataset, not {dataset}");
        forbid(&self.mnist_images, "mnist_images", &why)?;
        forbid(&self.mnist_labels, "mnist_labels", &why)?;
        Ok(())
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

fn forbid<T>(opt: &Option<T>, key: &str, why: &str) -> Result<(), CliError> {
    if opt.is_some() {
        Err(invalid(format!("`{key}` does not apply here: {why}")))
    } else {
        Ok(())
    }
}

fn parse_hidden(text: &str) -> Result<Vec<usize>, String> {
    let widths: Result<Vec<usize>, _> = text
        .split(',')
        .map(|part| part.trim().parse::<usize>())
        .collect();
    match widths {
        Ok(w) if !w.is_empty() && w.iter().all(|&x| x > 0) => Ok(w),
        _ => Err(format!(
            "invalid value `{text}` for `hidden`: expected comma-separated positive integers"
        )),
    }
}

/// Parses the flat config format: one `key = value` per line, `#` starts a
/// comment line, blank lines are skipped. `path` is used in error messages.
pub fn parse_config_text(text: &str, path: &str) -> Result<Overrides, CliError> {
    let mut overrides = Overrides::default();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| CliError::Config {
            path: path.to_string(),
            line: idx + 1,
            msg,
        };
        let Some((key, value)) = line.split_once('=') else {
            return Err(err(format!("expected `key = value`, found `{line}`")));
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(err("missing key before `=`".to_string()));
        }
        if value.is_empty() {
            return Err(err(format!("missing value for `{key}`")));
        }
        if !seen.insert(key.to_string()) {
            return Err(err(format!("duplicate key `{key}`")));
        }
        set_key(&mut overrides, key, value).map_err(err)?;
    }
    Ok(overrides)
}

/// Reads and parses a config file from disk.
pub fn parse_config_file(path: &std::path::Path) -> Result<Overrides, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(path.display().to_string(), e))?;
    parse_config_text(&text, &path.display().to_string())
}

/// Resolves a full configuration from optional file plus flag overrides.
pub fn from_args(args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut overrides = Overrides::default();
    if let Some(path) = &args.config {
        overrides = parse_config_file(path)?;
    }
    overrides.merged_with(&Overrides::from_args(args)).resolve()
}

fn set_key(o: &mut Overrides, key: &str, value: &str) -> Result<(), String> {
    fn num<T: std::str::FromStr>(key: &str, value: &str, kind: &str) -> Result<T, String> {
        value
            .parse::<T>()
            .map_err(|_| format!("invalid value `{value}` for `{key}`: expected {kind}"))
    }
    match key {
        "algorithm" => o.algorithm = Some(value.to_string()),
        "dataset" => o.dataset = Some(value.to_string()),
        "tier" => o.tier = Some(value.to_string()),
        "rounds" => o.rounds = Some(num(key, value, "a non-negative integer")?),
        "local_steps" => o.local_steps = Some(num(key, value, "a non-negative integer")?),
        "subset_size" => o.subset_size = Some(num(key, value, "a non-negative integer")?),
        "beta" => o.beta = Some(num(key, value, "a number")?),
        "zeta" => o.zeta = Some(num(key, value, "a number")?),
        "eta1" => o.eta1 = Some(num(key, value, "a number")?),
        "eta2" => o.eta2 = Some(num(key, value, "a number")?),
        "batch_size" => o.batch_size = Some(num(key, value, "a non-negative integer")?),
        "mc_draws" => o.mc_draws = Some(num(key, value, "a non-negative integer")?),
        "rho_init" => o.rho_init = Some(num(key, value, "a number")?),
        "seed" => o.seed = Some(num(key, value, "a non-negative integer")?),
        "workers" => o.workers = Some(num(key, value, "a non-negative integer")?),
        "n_clients" => o.n_clients = Some(num(key, value, "a non-negative integer")?),
        "labels_per_client" => {
            o.labels_per_client = Some(num(key, value, "a non-negative integer")?)
        }
        "hidden" => o.hidden = Some(value.to_string()),
        "input_dim" => o.input_dim = Some(num(key, value, "a non-negative integer")?),
        "classes" => o.classes = Some(num(key, value, "a non-negative integer")?),
        "output_dim" => o.output_dim = Some(num(key, value, "a non-negative integer")?),
        "blob_spread" => o.blob_spread = Some(num(key, value, "a number")?),
        "noise_std" => o.noise_std = Some(num(key, value, "a number")?),
        "train_per_class" => o.train_per_class = Some(num(key, value, "a non-negative integer")?),
        "test_per_class" => o.test_per_class = Some(num(key, value, "a non-negative integer")?),
        "samples_per_client" => {
            o.samples_per_client = Some(num(key, value, "a non-negative integer")?)
        }
        "test_per_client" => o.test_per_client = Some(num(key, value, "a non-negative integer")?),
        "eval_draws" => o.eval_draws = Some(num(key, value, "a non-negative integer")?),
        "mnist_images" => o.mnist_images = Some(PathBuf::from(value)),
        "mnist_labels" => o.mnist_labels = Some(PathBuf::from(value)),
        "aggregator" => o.aggregator = Some(value.to_string()),
        "out" => o.out = Some(PathBuf::from(value)),
        other => return Err(format!("unknown key `{other}`")),
    }
    Ok(())
}
