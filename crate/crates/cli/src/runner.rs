//! Turns a resolved [`ExperimentConfig`] into datasets, partitions, and
//! training runs, and writes the per-round metrics as CSV.

use std::fmt::Write as _;
use std::path::PathBuf;

use pfedbayes::baselines::fedavg_run;
use pfedbayes::bnn::{Activation, Likelihood, NetworkArch};
use pfedbayes::data::{
    gen_blobs, gen_synth_regression, load_idx, partition_label_skew, Dataset, Partition, Targets,
};
use pfedbayes::federation::{run, RoundRecord};

use crate::config::{Algorithm, DatasetSpec, ExperimentConfig};
use crate::CliError;

/// Results of a completed experiment together with where they were written.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub records: Vec<RoundRecord>,
    pub rounds_csv: PathBuf,
    pub summary_csv: PathBuf,
}

/// Builds the dataset and client partition described by the config.
pub fn build_data(cfg: &ExperimentConfig) -> Result<(Dataset, Partition), CliError> {
    match &cfg.dataset {
        DatasetSpec::Blobs {
            n_clients,
            labels_per_client,
            classes,
            input_dim,
            spread,
            train_per_class,
            test_per_class,
        } => {
            // Balanced label assignment uses each class on at most
            // ceil(slots / classes) clients; generate exactly enough
            // samples per class to cover that.
            let slots = n_clients * labels_per_client;
            let max_uses = slots.div_ceil(*classes);
            let per_class = max_uses * (train_per_class + test_per_class);
            let data = gen_blobs(per_class * classes, *input_dim, *classes, *spread, cfg.fed.seed)?;
            let partition = partition_label_skew(
                &data,
                *n_clients,
                *labels_per_client,
                *train_per_class,
                *test_per_class,
                cfg.fed.seed,
            )?;
            Ok((data, partition))
        }
        DatasetSpec::Synth {
            n_clients,
            samples_per_client,
            test_per_client,
            input_dim,
            output_dim,
            noise_std,
        } => {
            let per_client = samples_per_client + test_per_client;
            let data = gen_synth_regression(
                n_clients * per_client,
                *input_dim,
                *output_dim,
                *noise_std,
                cfg.fed.seed,
            )?;
            // Samples are i.i.d., so contiguous blocks make valid shards.
            let mut train_shards = Vec::with_capacity(*n_clients);
            let mut test_shards = Vec::with_capacity(*n_clients);
            for c in 0..*n_clients {
                let start = c * per_client;
                train_shards.push((start..start + samples_per_client).collect());
                test_shards.push((start + samples_per_client..start + per_client).collect());
            }
            let partition = Partition {
                train_shards,
                test_shards,
                client_labels: vec![Vec::new(); *n_clients],
            };
            Ok((data, partition))
        }
        DatasetSpec::Mnist {
            images,
            labels,
            n_clients,
            labels_per_client,
            split,
        } => {
            let data = load_idx(images, labels)?;
            let partition = partition_label_skew(
                &data,
                *n_clients,
                *labels_per_client,
                split.train_per_class,
                split.test_per_class,
                cfg.fed.seed,
            )?;
            Ok((data, partition))
        }
    }
}

/// Builds the network architecture for the config's dataset: configured
/// hidden widths between the data's input and output dimensions.
pub fn build_arch(cfg: &ExperimentConfig, data: &Dataset) -> Result<NetworkArch, CliError> {
    let mut widths = Vec::with_capacity(cfg.hidden.len() + 2);
    widths.push(data.input_dim());
    widths.extend_from_slice(&cfg.hidden);
    widths.push(data.output_dim());
    let likelihood = match (&data.targets, &cfg.dataset) {
        (Targets::Classes { classes, .. }, _) => Likelihood::Categorical { classes: *classes },
        (Targets::Values(_), DatasetSpec::Synth { noise_std, .. }) => Likelihood::Gaussian {
            noise_std: *noise_std,
        },
        (Targets::Values(_), _) => {
            return Err(CliError::Invalid(
                "regression targets require the synth dataset".to_string(),
            ))
        }
    };
    Ok(NetworkArch::new(widths, Activation::Relu, likelihood)?)
}

/// Runs the configured experiment and writes `rounds.csv` and `summary.csv`
/// into the output directory. Returns the records and the written paths.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    let (data, partition) = build_data(cfg)?;
    let arch = build_arch(cfg, &data)?;

    let records = with_pool(cfg.workers, || match cfg.algorithm {
        Algorithm::PFedBayes => run(&arch, &data, &partition, &cfg.fed).map(|out| out.rounds),
        Algorithm::FedAvg => {
            fedavg_run(&arch, &data, &partition, &cfg.fed).map(|out| out.rounds)
        }
    })??;

    let wall_ms: u64 = records.iter().map(|r| r.wall_ms).sum();
    eprintln!("trained {} round(s) in {} ms", records.len(), wall_ms);

    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::io(cfg.out.display().to_string(), e))?;
    let rounds_csv = cfg.out.join("rounds.csv");
    write_file(&rounds_csv, &rounds_csv_text(&records))?;
    let summary_csv = cfg.out.join("summary.csv");
    write_file(&summary_csv, &summary_csv_text(&records))?;

    Ok(ExperimentOutput {
        records,
        rounds_csv,
        summary_csv,
    })
}

/// Runs `f` on a dedicated rayon pool of `workers` threads, or on the
/// default pool when `workers` is 0.
fn with_pool<T: Send>(
    workers: usize,
    f: impl FnOnce() -> T + Send,
) -> Result<T, CliError> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Invalid(format!("failed to build a {workers}-thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Serializes round metrics with one row per round. Optional metrics render
/// as empty cells; `wall_ms` is written as 0 so identical runs produce
/// byte-identical files (real timings go to stderr).
pub fn rounds_csv_text(records: &[RoundRecord]) -> String {
    let mut text = String::from("round,pm_acc,gm_acc,mean_loss,mean_kl,hellinger,wall_ms\n");
    for r in records {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},0",
            r.round,
            cell(r.pm_acc),
            cell(r.gm_acc),
            format_sig(r.mean_loss),
            cell(r.mean_kl),
            cell(r.hellinger),
        );
    }
    text
}

/// Serializes `metric,value` rows: round count, final loss, and the final
/// and best value of every metric that appeared during the run.
pub fn summary_csv_text(records: &[RoundRecord]) -> String {
    let mut text = String::from("metric,value\n");
    let _ = writeln!(text, "rounds,{}", records.len());
    let Some(last) = records.last() else {
        return text;
    };
    let _ = writeln!(text, "final_mean_loss,{}", format_sig(last.mean_loss));
    let max = |get: fn(&RoundRecord) -> Option<f64>| {
        records
            .iter()
            .filter_map(get)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    if let Some(pm) = last.pm_acc {
        let _ = writeln!(text, "final_pm_acc,{}", format_sig(pm));
        let _ = writeln!(text, "best_pm_acc,{}", format_sig(max(|r| r.pm_acc)));
    }
    if let Some(gm) = last.gm_acc {
        let _ = writeln!(text, "final_gm_acc,{}", format_sig(gm));
        let _ = writeln!(text, "best_gm_acc,{}", format_sig(max(|r| r.gm_acc)));
    }
    if let Some(h) = last.hellinger {
        let best = records
            .iter()
            .filter_map(|r| r.hellinger)
            .fold(f64::INFINITY, f64::min);
        let _ = writeln!(text, "final_hellinger,{}", format_sig(h));
        let _ = writeln!(text, "best_hellinger,{}", format_sig(best));
    }
    text
}

fn cell(v: Option<f64>) -> String {
    v.map(format_sig).unwrap_or_default()
}

fn write_file(path: &PathBuf, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path.display().to_string(), e))
}

/// Formats a float with six significant digits, locale-independent, without
/// scientific notation. Used for every float cell in the CSV outputs.
pub fn format_sig(x: f64) -> String {
    const SIG: i32 = 6;
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".to_string()
        } else if x > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    let mut exp = x.abs().log10().floor() as i32;
    let mut decimals = SIG - 1 - exp;
    // Rounding can carry into the next decade (0.9999996 -> 1.00000), which
    // changes how many decimals keep six significant digits.
    let scale = 10f64.powi(decimals);
    let carried = (x * scale).round() / scale;
    let exp_after = carried.abs().log10().floor() as i32;
    if exp_after != exp {
        exp = exp_after;
        decimals = SIG - 1 - exp;
    }
    if decimals <= 0 {
        let step = 10f64.powi(-decimals);
        format!("{:.0}", (x / step).round() * step)
    } else {
        format!("{:.*}", decimals as usize, x)
    }
}

/// Writes the configured dataset as CSV: `features.csv` plus `labels.csv`
/// for classification or `targets.csv` for regression. Returns the written
/// paths.
pub fn generate_data(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    if matches!(cfg.dataset, DatasetSpec::Mnist { .. }) {
        return Err(CliError::Invalid(
            "gen-data generates synthetic datasets; mnist is read from IDX files".to_string(),
        ));
    }
    let (data, _) = build_data(cfg)?;
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::io(cfg.out.display().to_string(), e))?;

    let mut written = Vec::new();
    let d = data.input_dim();
    let mut features = (0..d)
        .map(|j| format!("x{j}"))
        .collect::<Vec<_>>()
        .join(",");
    features.push('\n');
    for i in 0..data.len() {
        let row = data
            .features
            .row(i)
            .iter()
            .map(|&v| format_sig(v))
            .collect::<Vec<_>>()
            .join(",");
        features.push_str(&row);
        features.push('\n');
    }
    let features_path = cfg.out.join("features.csv");
    write_file(&features_path, &features)?;
    written.push(features_path);

    match &data.targets {
        Targets::Classes { labels, .. } => {
            let mut text = String::from("label\n");
            for &label in labels {
                let _ = writeln!(text, "{label}");
            }
            let path = cfg.out.join("labels.csv");
            write_file(&path, &text)?;
            written.push(path);
        }
        Targets::Values(values) => {
            let mut text = (0..values.cols())
                .map(|j| format!("y{j}"))
                .collect::<Vec<_>>()
                .join(",");
            text.push('\n');
            for i in 0..values.rows() {
                let row = values
                    .row(i)
                    .iter()
                    .map(|&v| format_sig(v))
                    .collect::<Vec<_>>()
                    .join(",");
                text.push_str(&row);
                text.push('\n');
            }
            let path = cfg.out.join("targets.csv");
            write_file(&path, &text)?;
            written.push(path);
        }
    }
    Ok(written)
}
