//! Mean-field Gaussian Bayesian neural networks.
//!
//! Network weights are modelled by a diagonal Gaussian with free parameters
//! v = (μ, ρ); the standard deviation σ = softplus(ρ) stays positive under
//! unconstrained optimization. Weight samples use the reparameterization
//! θ = μ + softplus(ρ)·g with g ~ N(0, I), so every objective below is a
//! deterministic, differentiable function of (μ, ρ) once the draws g are
//! fixed. Gradients are computed by hand: ordinary backpropagation through
//! the sampled network for the data-fit term, and closed forms for the KL
//! terms.

use crate::error::{Error, Result};
use crate::tensor::RngStream;

/// Floor on σ wherever it appears in a denominator, so KL terms and their
/// gradients stay finite if a variance collapses. Equivalent to flooring
/// σ² at 1e-12.
const SIGMA_FLOOR: f64 = 1e-6;

/// Hidden-layer nonlinearity. Output layers are always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

/// Observation model for the network output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Likelihood {
    /// Softmax-categorical over `classes` labels; the network emits logits.
    Categorical { classes: usize },
    /// Isotropic Gaussian around the network output with the given noise
    /// standard deviation.
    Gaussian { noise_std: f64 },
}

impl Likelihood {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Likelihood::Categorical { .. } => "categorical",
            Likelihood::Gaussian { .. } => "gaussian",
        }
    }
}

/// A regression or classification target, borrowed from a dataset.
#[derive(Debug, Clone, Copy)]
pub enum TargetRef<'a> {
    Class(usize),
    Values(&'a [f64]),
}

impl TargetRef<'_> {
    fn name(&self) -> &'static str {
        match self {
            TargetRef::Class(_) => "categorical",
            TargetRef::Values(_) => "gaussian",
        }
    }
}

/// Fully connected feed-forward architecture.
///
/// `layer_widths` lists every layer including input and output, e.g.
/// `[784, 100, 10]` is one hidden layer of 100 units.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkArch {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub likelihood: Likelihood,
}

/// Offsets of one layer's weights and biases inside the flat parameter
/// vector. Layout: layer 0 weights (row-major, out×in), layer 0 biases,
/// layer 1 weights, ...
#[derive(Debug, Clone, Copy)]
struct LayerSlice {
    w_off: usize,
    b_off: usize,
    in_dim: usize,
    out_dim: usize,
}

impl NetworkArch {
    pub fn new(
        layer_widths: Vec<usize>,
        activation: Activation,
        likelihood: Likelihood,
    ) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::InvalidParam {
                name: "layer_widths",
                reason: format!("need at least input and output layers, got {layer_widths:?}"),
            });
        }
        if layer_widths.contains(&0) {
            return Err(Error::InvalidParam {
                name: "layer_widths",
                reason: format!("layer widths must be positive, got {layer_widths:?}"),
            });
        }
        let out = *layer_widths.last().unwrap();
        match likelihood {
            Likelihood::Categorical { classes } => {
                if classes != out {
                    return Err(Error::InvalidParam {
                        name: "likelihood",
                        reason: format!("{classes} classes but output layer has {out} units"),
                    });
                }
            }
            Likelihood::Gaussian { noise_std } => {
                if !(noise_std.is_finite() && noise_std > 0.0) {
                    return Err(Error::InvalidParam {
                        name: "likelihood",
                        reason: format!("noise_std must be finite and positive, got {noise_std}"),
                    });
                }
            }
        }
        Ok(Self {
            layer_widths,
            activation,
            likelihood,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    /// Total number of scalar weights and biases.
    pub fn num_params(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    fn layers(&self) -> Vec<LayerSlice> {
        let mut out = Vec::with_capacity(self.layer_widths.len() - 1);
        let mut off = 0;
        for w in self.layer_widths.windows(2) {
            let (in_dim, out_dim) = (w[0], w[1]);
            out.push(LayerSlice {
                w_off: off,
                b_off: off + in_dim * out_dim,
                in_dim,
                out_dim,
            });
            off += (in_dim + 1) * out_dim;
        }
        out
    }
}

/// Variational parameters of a diagonal Gaussian over the flat weight
/// vector: mean `mu` and pre-deviation `rho` with σ = softplus(ρ).
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
}

impl VariationalParams {
    pub fn new(mu: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        if mu.len() != rho.len() {
            return Err(Error::DimensionMismatch {
                context: "VariationalParams::new",
                expected: mu.len(),
                actual: rho.len(),
            });
        }
        if mu.iter().chain(rho.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("VariationalParams::new"));
        }
        Ok(Self { mu, rho })
    }

    /// All means and pre-deviations set to the same constants.
    pub fn constant(len: usize, mu0: f64, rho0: f64) -> Self {
        Self {
            mu: vec![mu0; len],
            rho: vec![rho0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// σ_m = softplus(ρ_m) for every coordinate.
    pub fn sigma(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }
}

/// One concrete weight vector drawn from a variational distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledWeights {
    pub theta: Vec<f64>,
}

/// Gradient of an objective with respect to (μ, ρ).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub d_mu: Vec<f64>,
    pub d_rho: Vec<f64>,
}

impl Gradients {
    pub fn zeros(len: usize) -> Self {
        Self {
            d_mu: vec![0.0; len],
            d_rho: vec![0.0; len],
        }
    }
}

/// softplus(x) = ln(1 + eˣ), computed without overflow: for large x it is x
/// itself to machine precision, for very negative x it is eˣ.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`]: returns ρ with softplus(ρ) = y, for y > 0.
pub fn softplus_inv(y: f64) -> Result<f64> {
    if !(y.is_finite() && y > 0.0) {
        return Err(Error::InvalidParam {
            name: "softplus_inv",
            reason: format!("argument must be finite and positive, got {y}"),
        });
    }
    // ln(e^y − 1); for large y the subtraction is a no-op in f64.
    if y > 30.0 {
        Ok(y)
    } else {
        Ok(y.exp_m1().ln())
    }
}

/// d softplus / dx = logistic sigmoid, computed stably on both tails.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Reparameterized weight draw θ = μ + softplus(ρ)·g for a standard-normal
/// vector `g`.
pub fn sample_weights(v: &VariationalParams, g: &[f64]) -> Result<SampledWeights> {
    if g.len() != v.len() {
        return Err(Error::DimensionMismatch {
            context: "sample_weights",
            expected: v.len(),
            actual: g.len(),
        });
    }
    let theta = v
        .mu
        .iter()
        .zip(&v.rho)
        .zip(g)
        .map(|((&m, &r), &gi)| m + softplus(r) * gi)
        .collect();
    Ok(SampledWeights { theta })
}

fn check_theta(arch: &NetworkArch, theta: &SampledWeights) -> Result<()> {
    if theta.theta.len() != arch.num_params() {
        return Err(Error::DimensionMismatch {
            context: "forward: weight vector",
            expected: arch.num_params(),
            actual: theta.theta.len(),
        });
    }
    Ok(())
}

fn check_input(arch: &NetworkArch, x: &[f64]) -> Result<()> {
    if x.len() != arch.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "forward: input",
            expected: arch.input_dim(),
            actual: x.len(),
        });
    }
    Ok(())
}

/// Runs the network on one input: affine layers with the configured hidden
/// activation, linear output layer. Returns logits for categorical
/// likelihoods and predicted values for Gaussian ones.
pub fn forward(arch: &NetworkArch, theta: &SampledWeights, x: &[f64]) -> Result<Vec<f64>> {
    check_theta(arch, theta)?;
    check_input(arch, x)?;
    let layers = arch.layers();
    let mut act = x.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        act = layer_forward(&theta.theta, layer, &act, l + 1 == layers.len());
    }
    Ok(act)
}

fn layer_forward(theta: &[f64], layer: &LayerSlice, input: &[f64], is_output: bool) -> Vec<f64> {
    let mut out = vec![0.0; layer.out_dim];
    for (o, out_o) in out.iter_mut().enumerate() {
        let row = &theta[layer.w_off + o * layer.in_dim..layer.w_off + (o + 1) * layer.in_dim];
        let mut z = theta[layer.b_off + o];
        for (w, a) in row.iter().zip(input) {
            z += w * a;
        }
        // Activation::Relu is the only hidden nonlinearity.
        *out_o = if is_output { z } else { z.max(0.0) };
    }
    out
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Log-likelihood of one target under the network output.
///
/// Categorical: log softmax(logits)[class], computed through a max-shifted
/// log-sum-exp. Gaussian: −Σ_d [(y_d − f_d)²/(2σ_ε²) + ½ln(2πσ_ε²)].
pub fn log_likelihood(arch: &NetworkArch, output: &[f64], target: TargetRef<'_>) -> Result<f64> {
    if output.len() != arch.output_dim() {
        return Err(Error::DimensionMismatch {
            context: "log_likelihood: output",
            expected: arch.output_dim(),
            actual: output.len(),
        });
    }
    match (&arch.likelihood, target) {
        (Likelihood::Categorical { classes }, TargetRef::Class(y)) => {
            if y >= *classes {
                return Err(Error::ClassOutOfRange {
                    index: y,
                    classes: *classes,
                });
            }
            Ok(output[y] - log_sum_exp(output))
        }
        (Likelihood::Gaussian { noise_std }, TargetRef::Values(y)) => {
            if y.len() != output.len() {
                return Err(Error::DimensionMismatch {
                    context: "log_likelihood: target",
                    expected: output.len(),
                    actual: y.len(),
                });
            }
            let var = noise_std * noise_std;
            let half_log_norm = 0.5 * (2.0 * std::f64::consts::PI * var).ln();
            let mut ll = 0.0;
            for (yd, fd) in y.iter().zip(output) {
                let r = yd - fd;
                ll -= r * r / (2.0 * var) + half_log_norm;
            }
            Ok(ll)
        }
        (lik, t) => Err(Error::LikelihoodKind {
            expected: lik.name(),
            actual: t.name(),
        }),
    }
}

/// KL divergence between two diagonal Gaussians given as (μ, ρ) pairs:
///
///   KL(q‖w) = ½ Σ_m [ ln(σ²_w/σ²_q) + (σ²_q + (μ_q − μ_w)²)/σ²_w − 1 ]
///
/// Variances are floored at 1e-12 inside the ratios; the result is clamped
/// at zero to absorb rounding on near-identical inputs.
pub fn kl_diag_gauss(q: &VariationalParams, w: &VariationalParams) -> Result<f64> {
    if q.len() != w.len() {
        return Err(Error::DimensionMismatch {
            context: "kl_diag_gauss",
            expected: q.len(),
            actual: w.len(),
        });
    }
    let mut sum = 0.0;
    for m in 0..q.len() {
        let sq = softplus(q.rho[m]).max(SIGMA_FLOOR);
        let sw = softplus(w.rho[m]).max(SIGMA_FLOOR);
        let (var_q, var_w) = (sq * sq, sw * sw);
        let dmu = q.mu[m] - w.mu[m];
        sum += (var_w / var_q).ln() + (var_q + dmu * dmu) / var_w - 1.0;
    }
    Ok((0.5 * sum).max(0.0))
}

fn check_zeta(zeta: f64) -> Result<()> {
    if !(zeta.is_finite() && zeta >= 0.0) {
        return Err(Error::InvalidParam {
            name: "zeta",
            reason: format!("must be finite and non-negative, got {zeta}"),
        });
    }
    Ok(())
}

fn check_batch_args(
    batch: &[(&[f64], TargetRef<'_>)],
    g_draws: &[Vec<f64>],
    n: usize,
    b: usize,
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("client_objective: batch"));
    }
    if g_draws.is_empty() {
        return Err(Error::EmptyInput("client_objective: g_draws"));
    }
    if b != batch.len() {
        return Err(Error::DimensionMismatch {
            context: "client_objective: batch size",
            expected: b,
            actual: batch.len(),
        });
    }
    if n < b {
        return Err(Error::InvalidParam {
            name: "n",
            reason: format!("dataset size {n} smaller than batch size {b}"),
        });
    }
    Ok(())
}

/// Minibatch estimate of a client's personalized objective:
///
///   Ω(v) ≈ −(n/b)·(1/K) Σ_{k=1..K} Σ_{j=1..b} log p_{θ_k}(x_j, y_j)
///          + ζ·KL(q_v ‖ w),
///
/// where θ_k = μ + softplus(ρ)·g_k reuses the supplied standard-normal
/// draws, `n` is the client's dataset size, and `b` the minibatch size.
/// With the draws fixed this is a deterministic function of `v`, which is
/// what [`grad_client_objective`] differentiates.
#[allow(clippy::too_many_arguments)]
pub fn client_objective(
    arch: &NetworkArch,
    v: &VariationalParams,
    v_global: &VariationalParams,
    batch: &[(&[f64], TargetRef<'_>)],
    g_draws: &[Vec<f64>],
    zeta: f64,
    n: usize,
    b: usize,
) -> Result<f64> {
    check_zeta(zeta)?;
    check_batch_args(batch, g_draws, n, b)?;
    let mut data_term = 0.0;
    for g in g_draws {
        let theta = sample_weights(v, g)?;
        for &(x, t) in batch {
            let f = forward(arch, &theta, x)?;
            data_term += log_likelihood(arch, &f, t)?;
        }
    }
    data_term /= g_draws.len() as f64;
    let scale = n as f64 / b as f64;
    Ok(-scale * data_term + zeta * kl_diag_gauss(v, v_global)?)
}

/// Backpropagates d(log-likelihood)/dθ for one sample into `d_theta`.
fn accumulate_loglik_grad_theta(
    arch: &NetworkArch,
    layers: &[LayerSlice],
    theta: &[f64],
    x: &[f64],
    target: TargetRef<'_>,
    d_theta: &mut [f64],
) -> Result<()> {
    check_input(arch, x)?;
    // Forward pass, keeping every layer's post-activation output.
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers.len() + 1);
    acts.push(x.to_vec());
    for (l, layer) in layers.iter().enumerate() {
        let next = layer_forward(theta, layer, &acts[l], l + 1 == layers.len());
        acts.push(next);
    }
    let output = acts.last().unwrap();

    // d(log p)/d(output). Categorical: onehot(y) − softmax(logits);
    // Gaussian: (y − f)/σ_ε².
    let mut delta: Vec<f64> = match (&arch.likelihood, target) {
        (Likelihood::Categorical { classes }, TargetRef::Class(y)) => {
            if y >= *classes {
                return Err(Error::ClassOutOfRange {
                    index: y,
                    classes: *classes,
                });
            }
            let mut d = softmax(output);
            for v in d.iter_mut() {
                *v = -*v;
            }
            d[y] += 1.0;
            d
        }
        (Likelihood::Gaussian { noise_std }, TargetRef::Values(y)) => {
            if y.len() != output.len() {
                return Err(Error::DimensionMismatch {
                    context: "grad: target",
                    expected: output.len(),
                    actual: y.len(),
                });
            }
            let var = noise_std * noise_std;
            y.iter().zip(output).map(|(yd, fd)| (yd - fd) / var).collect()
        }
        (lik, t) => {
            return Err(Error::LikelihoodKind {
                expected: lik.name(),
                actual: t.name(),
            })
        }
    };

    // Backward pass. `delta` holds d(log p)/d(pre-activation) of layer l.
    for (l, layer) in layers.iter().enumerate().rev() {
        let input = &acts[l];
        for o in 0..layer.out_dim {
            let dz = delta[o];
            let w_row = layer.w_off + o * layer.in_dim;
            for (i, a) in input.iter().enumerate() {
                d_theta[w_row + i] += dz * a;
            }
            d_theta[layer.b_off + o] += dz;
        }
        if l == 0 {
            break;
        }
        let mut prev = vec![0.0; layer.in_dim];
        for (o, &dz) in delta.iter().enumerate() {
            let w_row = layer.w_off + o * layer.in_dim;
            for (i, p) in prev.iter_mut().enumerate() {
                *p += dz * theta[w_row + i];
            }
        }
        // ReLU gate: the stored activation is max(z, 0), so a positive
        // activation marks a pass-through unit.
        for (p, a) in prev.iter_mut().zip(input) {
            if *a <= 0.0 {
                *p = 0.0;
            }
        }
        delta = prev;
    }
    Ok(())
}

/// Gradient of the summed log-likelihood over a batch with respect to a
/// fixed weight vector θ (no variational structure involved). This is the
/// building block for point-estimate baselines.
pub fn grad_loglik_theta(
    arch: &NetworkArch,
    theta: &SampledWeights,
    batch: &[(&[f64], TargetRef<'_>)],
) -> Result<Vec<f64>> {
    check_theta(arch, theta)?;
    if batch.is_empty() {
        return Err(Error::EmptyInput("grad_loglik_theta: batch"));
    }
    let layers = arch.layers();
    let mut d_theta = vec![0.0; theta.theta.len()];
    for &(x, t) in batch {
        accumulate_loglik_grad_theta(arch, &layers, &theta.theta, x, t, &mut d_theta)?;
    }
    Ok(d_theta)
}

/// Adds ζ·∂KL(q_v‖w)/∂(μ, ρ) to `grad` — the closed-form client-side KL
/// gradient: ∂KL/∂μ_m = (μ_m − μ_w,m)/σ²_w,m and
/// ∂KL/∂σ_m = σ_m/σ²_w,m − 1/σ_m, chained through σ = softplus(ρ).
fn add_kl_grad_personal(
    v: &VariationalParams,
    v_global: &VariationalParams,
    zeta: f64,
    grad: &mut Gradients,
) {
    for m in 0..v.len() {
        let sq = softplus(v.rho[m]).max(SIGMA_FLOOR);
        let sw = softplus(v_global.rho[m]).max(SIGMA_FLOOR);
        let var_w = sw * sw;
        grad.d_mu[m] += zeta * (v.mu[m] - v_global.mu[m]) / var_w;
        let d_sigma = sq / var_w - 1.0 / sq;
        grad.d_rho[m] += zeta * d_sigma * sigmoid(v.rho[m]);
    }
}

/// Gradient of [`client_objective`] with respect to the personalized
/// parameters (μ, ρ), using the same fixed draws `g_draws`.
///
/// The data-fit part backpropagates through each sampled network and maps
/// dθ to the variational parameters via θ = μ + softplus(ρ)·g, giving
/// dμ += dθ and dρ += dθ·g·sigmoid(ρ). The KL part is closed-form.
#[allow(clippy::too_many_arguments)]
pub fn grad_client_objective(
    arch: &NetworkArch,
    v: &VariationalParams,
    v_global: &VariationalParams,
    batch: &[(&[f64], TargetRef<'_>)],
    g_draws: &[Vec<f64>],
    zeta: f64,
    n: usize,
    b: usize,
) -> Result<Gradients> {
    check_zeta(zeta)?;
    check_batch_args(batch, g_draws, n, b)?;
    if v.len() != arch.num_params() {
        return Err(Error::DimensionMismatch {
            context: "grad_client_objective: params",
            expected: arch.num_params(),
            actual: v.len(),
        });
    }
    if v_global.len() != v.len() {
        return Err(Error::DimensionMismatch {
            context: "grad_client_objective: global params",
            expected: v.len(),
            actual: v_global.len(),
        });
    }
    let layers = arch.layers();
    let p = v.len();
    let mut grad = Gradients::zeros(p);
    let mut d_theta = vec![0.0; p];
    // −(n/b)·(1/K) scales the log-likelihood gradients into objective
    // gradients.
    let coeff = -(n as f64 / b as f64) / g_draws.len() as f64;
    for g in g_draws {
        let theta = sample_weights(v, g)?;
        d_theta.fill(0.0);
        for &(x, t) in batch {
            accumulate_loglik_grad_theta(arch, &layers, &theta.theta, x, t, &mut d_theta)?;
        }
        for m in 0..p {
            let d = coeff * d_theta[m];
            grad.d_mu[m] += d;
            grad.d_rho[m] += d * g[m] * sigmoid(v.rho[m]);
        }
    }
    add_kl_grad_personal(v, v_global, zeta, &mut grad);
    Ok(grad)
}

/// Gradient of KL(q_v‖w) with respect to the *global* parameters (μ_w, ρ_w),
/// used for the localized-global descent step:
/// ∂KL/∂μ_w = (μ_w − μ)/σ²_w and ∂KL/∂σ_w = 1/σ_w − (σ² + (μ − μ_w)²)/σ³_w,
/// chained through σ_w = softplus(ρ_w).
pub fn grad_localized_global(
    v: &VariationalParams,
    v_global: &VariationalParams,
) -> Result<Gradients> {
    if v.len() != v_global.len() {
        return Err(Error::DimensionMismatch {
            context: "grad_localized_global",
            expected: v.len(),
            actual: v_global.len(),
        });
    }
    let mut grad = Gradients::zeros(v.len());
    for m in 0..v.len() {
        let sq = softplus(v.rho[m]).max(SIGMA_FLOOR);
        let sw = softplus(v_global.rho[m]).max(SIGMA_FLOOR);
        let var_w = sw * sw;
        let dmu = v.mu[m] - v_global.mu[m];
        grad.d_mu[m] = -dmu / var_w;
        let d_sigma = 1.0 / sw - (sq * sq + dmu * dmu) / (var_w * sw);
        grad.d_rho[m] = d_sigma * sigmoid(v_global.rho[m]);
    }
    Ok(grad)
}

fn check_draw_count(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParam {
            name: "k",
            reason: "need at least one posterior draw".into(),
        });
    }
    Ok(())
}

/// Posterior-averaged prediction for one input: the mean over `k` weight
/// draws of softmax(logits) for categorical likelihoods (a probability
/// vector) or of the raw outputs for Gaussian ones.
pub fn predict_bma(
    arch: &NetworkArch,
    v: &VariationalParams,
    x: &[f64],
    k: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    check_draw_count(k)?;
    let predictor = BmaPredictor::new(arch, v, k, rng)?;
    predictor.predict(x)
}

/// Posterior-averaged predictor that fixes its weight draws up front, so a
/// whole evaluation set is scored under the same `k` posterior samples.
#[derive(Debug)]
pub struct BmaPredictor<'a> {
    arch: &'a NetworkArch,
    thetas: Vec<SampledWeights>,
}

impl<'a> BmaPredictor<'a> {
    pub fn new(
        arch: &'a NetworkArch,
        v: &VariationalParams,
        k: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        check_draw_count(k)?;
        if v.len() != arch.num_params() {
            return Err(Error::DimensionMismatch {
                context: "BmaPredictor::new",
                expected: arch.num_params(),
                actual: v.len(),
            });
        }
        let thetas = (0..k)
            .map(|_| sample_weights(v, &rng.randn(v.len())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { arch, thetas })
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.arch.output_dim()];
        for theta in &self.thetas {
            let out = forward(self.arch, theta, x)?;
            match self.arch.likelihood {
                Likelihood::Categorical { .. } => {
                    for (a, p) in acc.iter_mut().zip(softmax(&out)) {
                        *a += p;
                    }
                }
                Likelihood::Gaussian { .. } => {
                    for (a, f) in acc.iter_mut().zip(&out) {
                        *a += f;
                    }
                }
            }
        }
        let k = self.thetas.len() as f64;
        for a in acc.iter_mut() {
            *a /= k;
        }
        Ok(acc)
    }
}

/// Fan-in-scaled uniform initialization for the variational means: each
/// layer's weights and biases are drawn from U(−1/√in_dim, 1/√in_dim).
pub fn init_mu_fan_in(arch: &NetworkArch, rng: &mut RngStream) -> Vec<f64> {
    let mut mu = vec![0.0; arch.num_params()];
    for layer in arch.layers() {
        let bound = 1.0 / (layer.in_dim as f64).sqrt();
        let end = layer.b_off + layer.out_dim;
        for m in mu.iter_mut().take(end).skip(layer.w_off) {
            *m = rng.uniform(-bound, bound);
        }
    }
    mu
}
