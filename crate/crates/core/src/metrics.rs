//! Evaluation metrics: classification accuracy, posterior-averaged
//! generalization error for regression, and predictive entropy.

use crate::bnn::{
    forward, sample_weights, BmaPredictor, Likelihood, NetworkArch, VariationalParams,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::RngStream;

/// Accuracy and average predictive entropy of one model over one
/// evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mean_entropy: f64,
    pub n: usize,
}

/// Index of the largest entry; ties resolve to the lowest index.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Fraction of predictions whose argmax matches the label. Ties pick the
/// lowest class index.
pub fn accuracy(predictions: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("accuracy"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "accuracy",
            expected: predictions.len(),
            actual: labels.len(),
        });
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, &y)| argmax(p) == y)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Shannon entropy (nats) of a probability vector. The vector must sum to
/// one within 1e-6 with entries in [0, 1]; zero entries contribute zero.
pub fn predictive_entropy(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::EmptyInput("predictive_entropy"));
    }
    let mut sum = 0.0;
    for &p in probs {
        if !p.is_finite() || !(-1e-9..=1.0 + 1e-9).contains(&p) {
            return Err(Error::InvalidSimplex(format!("entry {p} outside [0, 1]")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidSimplex(format!("entries sum to {sum}")));
    }
    Ok(probs
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum())
}

/// Scores a variational classifier on the given dataset rows with
/// posterior-averaged predictions; all rows share the same `draws` weight
/// samples.
pub fn evaluate_classifier(
    arch: &NetworkArch,
    v: &VariationalParams,
    data: &Dataset,
    indices: &[usize],
    draws: usize,
    rng: &mut RngStream,
) -> Result<EvalReport> {
    let labels = data.labels().ok_or(Error::LikelihoodKind {
        expected: "categorical",
        actual: "gaussian",
    })?;
    if indices.is_empty() {
        return Err(Error::EmptyInput("evaluate_classifier: indices"));
    }
    let predictor = BmaPredictor::new(arch, v, draws, rng)?;
    let mut correct = 0usize;
    let mut entropy = 0.0;
    for &i in indices {
        let probs = predictor.predict(data.features.row(i))?;
        if argmax(&probs) == labels[i] {
            correct += 1;
        }
        entropy += predictive_entropy(&probs)?;
    }
    Ok(EvalReport {
        accuracy: correct as f64 / indices.len() as f64,
        mean_entropy: entropy / indices.len() as f64,
        n: indices.len(),
    })
}

/// Squared Hellinger generalization error of a variational regressor
/// against the dataset's noise-free reference function:
///
///   d² = mean over draws θ and rows x of 1 − exp(−‖f_θ(x) − f(x)‖²/(8σ_ε²))
///
/// where σ_ε is the model's Gaussian noise level. Always in [0, 1].
pub fn hellinger_error(
    arch: &NetworkArch,
    v: &VariationalParams,
    data: &Dataset,
    indices: &[usize],
    draws: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    let noise_std = match arch.likelihood {
        Likelihood::Gaussian { noise_std } => noise_std,
        Likelihood::Categorical { .. } => {
            return Err(Error::LikelihoodKind {
                expected: "gaussian",
                actual: "categorical",
            })
        }
    };
    let true_fn = data.true_fn.as_ref().ok_or(Error::InvalidParam {
        name: "data",
        reason: "no reference function to measure generalization against".into(),
    })?;
    if true_fn.output_dim() != arch.output_dim() {
        return Err(Error::DimensionMismatch {
            context: "hellinger_error: output",
            expected: true_fn.output_dim(),
            actual: arch.output_dim(),
        });
    }
    if indices.is_empty() {
        return Err(Error::EmptyInput("hellinger_error: indices"));
    }
    if draws == 0 {
        return Err(Error::InvalidParam {
            name: "draws",
            reason: "need at least one posterior draw".into(),
        });
    }
    let thetas = (0..draws)
        .map(|_| sample_weights(v, &rng.randn(v.len())))
        .collect::<Result<Vec<_>>>()?;
    let denom = 8.0 * noise_std * noise_std;
    let mut total = 0.0;
    for &i in indices {
        let x = data.features.row(i);
        let clean = true_fn.eval(x)?;
        for theta in &thetas {
            let f = forward(arch, theta, x)?;
            let sq: f64 = f
                .iter()
                .zip(&clean)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += 1.0 - (-sq / denom).exp();
        }
    }
    Ok(total / (indices.len() * draws) as f64)
}
