//! Spiking primitives: Poisson rate coding, the leaky-integrate-and-fire
//! state update, the piecewise-linear surrogate gradient, and per-timestep
//! batch normalization.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Hyperparameters of the spiking execution mode.
#[derive(Clone, Debug)]
pub struct SnnConfig {
    /// Number of simulation timesteps T.
    pub timesteps: usize,
    /// Membrane leak factor, strictly below 1.
    pub leak: f32,
    /// Firing threshold per hidden spiking layer.
    pub thresholds: Vec<f32>,
    /// Decay factor of the surrogate gradient.
    pub surrogate_decay: f32,
}

impl SnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 {
            return Err(Error::InvalidConfig("timesteps must be >= 1".into()));
        }
        if !(self.leak > 0.0 && self.leak < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "leak must lie in (0,1), got {}",
                self.leak
            )));
        }
        if self.thresholds.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "all thresholds must be positive, got {:?}",
                self.thresholds
            )));
        }
        if self.surrogate_decay <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "surrogate decay must be positive, got {}",
                self.surrogate_decay
            )));
        }
        Ok(())
    }
}

impl Default for SnnConfig {
    fn default() -> Self {
        SnnConfig {
            timesteps: 20,
            leak: 0.9,
            thresholds: Vec::new(), // filled per model; 1.0 per hidden layer
            surrogate_decay: 0.3,
        }
    }
}

/// Default firing threshold used when a config does not override it.
pub const DEFAULT_THRESHOLD: f32 = 1.0;

/// Encodes an intensity image into a `[T, ...image]` train of 0/1 spikes.
///
/// At every timestep each pixel fires independently when a uniform draw in
/// `[0,1)` lands strictly below its intensity, so intensity 1 always fires
/// and intensity 0 never does.
pub fn poisson_encode(image: &Tensor, timesteps: usize, stream: &RngStream) -> Result<Tensor> {
    if let Some(bad) = image.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid_input(
            "poisson_encode",
            format!("pixel value {bad} outside [0,1]"),
        ));
    }
    let mut shape = vec![timesteps];
    shape.extend_from_slice(image.shape());
    let mut rng = stream.rng();
    let n = image.len();
    let mut data = vec![0.0f32; timesteps * n];
    for t in 0..timesteps {
        for (p, &intensity) in image.data().iter().enumerate() {
            let draw: f32 = rand::Rng::random(&mut rng);
            data[t * n + p] = if draw < intensity { 1.0 } else { 0.0 };
        }
    }
    Tensor::from_vec(&shape, data)
}

/// Membrane state of one spiking layer.
#[derive(Clone, Debug)]
pub struct LifState {
    /// Post-reset membrane potential per neuron.
    pub membrane: Tensor,
    /// Spikes emitted by the most recent step, 0/1 valued.
    pub last_spikes: Tensor,
}

impl LifState {
    pub fn zeros(shape: &[usize]) -> Self {
        LifState {
            membrane: Tensor::zeros(shape),
            last_spikes: Tensor::zeros(shape),
        }
    }
}

/// Output of one LIF update; `pre_reset` is retained for the backward pass.
#[derive(Clone, Debug)]
pub struct LifStep {
    pub state: LifState,
    pub spikes: Tensor,
    /// Membrane potential after integration, before the spike reset.
    pub pre_reset: Tensor,
}

/// One leaky-integrate-and-fire update:
/// `u' = leak * u + input`, spike where `u' > threshold`, then hard reset of
/// fired neurons to 0.
pub fn lif_step(state: &LifState, weighted_input: &Tensor, leak: f32, threshold: f32) -> Result<LifStep> {
    if state.membrane.shape() != weighted_input.shape() {
        return Err(Error::shape_mismatch(
            "lif_step",
            state.membrane.shape(),
            weighted_input.shape(),
        ));
    }
    let pre_reset = state
        .membrane
        .zip_map(weighted_input, |u, x| leak * u + x)?;
    pre_reset.ensure_finite("lif_step")?;
    let spikes = pre_reset.map(|u| if u > threshold { 1.0 } else { 0.0 });
    let membrane = pre_reset.zip_map(&spikes, |u, s| if s == 1.0 { 0.0 } else { u })?;
    Ok(LifStep {
        state: LifState {
            membrane,
            last_spikes: spikes.clone(),
        },
        spikes,
        pre_reset,
    })
}

/// Piecewise-linear surrogate for the spike derivative:
/// `decay * max(0, 1 - |u - threshold| / threshold)`.
pub fn surrogate_grad(membrane: f32, threshold: f32, decay: f32) -> f32 {
    decay * (1.0 - ((membrane - threshold) / threshold).abs()).max(0.0)
}

/// Whether normalization runs on batch statistics (training) or the stored
/// running averages (inference).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

/// Per-timestep batch normalization state for one layer.
///
/// Holds a learned scale and running statistics per channel *per timestep*.
/// There is no additive shift term. Channels are feature-map channels for
/// conv layers and individual units for linear layers.
#[derive(Clone, Debug)]
pub struct BnttState {
    /// Learned scale, `[T, C]`.
    pub gamma: Tensor,
    /// Running mean, `[T, C]`.
    pub running_mean: Tensor,
    /// Running variance, `[T, C]`.
    pub running_var: Tensor,
    pub epsilon: f32,
    /// Exponential-moving-average weight of the newest batch statistics.
    pub momentum: f32,
}

impl BnttState {
    pub fn new(timesteps: usize, channels: usize) -> Self {
        BnttState {
            gamma: Tensor::filled(&[timesteps, channels], 1.0),
            running_mean: Tensor::zeros(&[timesteps, channels]),
            running_var: Tensor::filled(&[timesteps, channels], 1.0),
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn timesteps(&self) -> usize {
        self.gamma.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape()[1]
    }
}

/// Batch-statistics view retained by a training-mode application, consumed by
/// the backward pass.
#[derive(Clone, Debug)]
pub struct BnttCache {
    /// Normalized pre-scale activations, same shape as the input.
    pub normalized: Tensor,
    /// `1 / sqrt(var + eps)` per channel.
    pub inv_std: Vec<f32>,
}

fn channel_layout(shape: &[usize], channels: usize, context: &str) -> Result<(usize, usize)> {
    // [B, C] or [B, C, H, W]; returns (batch, per-channel spatial extent)
    match shape.len() {
        2 if shape[1] == channels => Ok((shape[0], 1)),
        4 if shape[1] == channels => Ok((shape[0], shape[2] * shape[3])),
        _ => Err(Error::invalid_input(
            context,
            format!("expected [B,{channels}] or [B,{channels},H,W] input, got {shape:?}"),
        )),
    }
}

/// Normalizes `preact` at timestep `t`.
///
/// Training mode uses the current batch's per-channel mean/variance, scales
/// by `gamma[t]`, updates the running statistics, and returns the cache the
/// backward pass needs. Inference mode normalizes with the stored running
/// statistics and returns no cache.
pub fn bntt_apply(
    bntt: &mut BnttState,
    t: usize,
    preact: &Tensor,
    mode: Mode,
) -> Result<(Tensor, Option<BnttCache>)> {
    let timesteps = bntt.timesteps();
    if t >= timesteps {
        return Err(Error::invalid_input(
            "bntt_apply",
            format!("timestep {t} out of range for T={timesteps}"),
        ));
    }
    let channels = bntt.channels();
    let (batch, spatial) = channel_layout(preact.shape(), channels, "bntt_apply")?;
    let group = batch * spatial;

    match mode {
        Mode::Training => {
            if batch < 2 {
                return Err(Error::BatchTooSmall(batch));
            }
            let xd = preact.data();
            let mut out = Tensor::zeros(preact.shape());
            let mut normalized = Tensor::zeros(preact.shape());
            let mut inv_std = vec![0.0f32; channels];
            for c in 0..channels {
                let mut sum = 0.0f32;
                for b in 0..batch {
                    for s in 0..spatial {
                        sum += xd[(b * channels + c) * spatial + s];
                    }
                }
                let mean = sum / group as f32;
                let mut var_sum = 0.0f32;
                for b in 0..batch {
                    for s in 0..spatial {
                        let d = xd[(b * channels + c) * spatial + s] - mean;
                        var_sum += d * d;
                    }
                }
                let var = var_sum / group as f32;
                let istd = 1.0 / (var + bntt.epsilon).sqrt();
                inv_std[c] = istd;
                let gamma = bntt.gamma.data()[t * channels + c];
                for b in 0..batch {
                    for s in 0..spatial {
                        let idx = (b * channels + c) * spatial + s;
                        let xhat = (xd[idx] - mean) * istd;
                        normalized.data_mut()[idx] = xhat;
                        out.data_mut()[idx] = gamma * xhat;
                    }
                }
                let m = bntt.momentum;
                let rm = &mut bntt.running_mean.data_mut()[t * channels + c];
                *rm = (1.0 - m) * *rm + m * mean;
                let rv = &mut bntt.running_var.data_mut()[t * channels + c];
                *rv = (1.0 - m) * *rv + m * var;
            }
            out.ensure_finite("bntt_apply")?;
            Ok((out, Some(BnttCache { normalized, inv_std })))
        }
        Mode::Inference => Ok((bntt_infer(bntt, t, preact)?, None)),
    }
}

/// Inference-mode normalization with the stored running statistics.
pub fn bntt_infer(bntt: &BnttState, t: usize, preact: &Tensor) -> Result<Tensor> {
    let timesteps = bntt.timesteps();
    if t >= timesteps {
        return Err(Error::invalid_input(
            "bntt_infer",
            format!("timestep {t} out of range for T={timesteps}"),
        ));
    }
    let channels = bntt.channels();
    let (batch, spatial) = channel_layout(preact.shape(), channels, "bntt_infer")?;
    let xd = preact.data();
    let mut out = Tensor::zeros(preact.shape());
    for c in 0..channels {
        let mean = bntt.running_mean.data()[t * channels + c];
        let var = bntt.running_var.data()[t * channels + c];
        let istd = 1.0 / (var + bntt.epsilon).sqrt();
        let gamma = bntt.gamma.data()[t * channels + c];
        for b in 0..batch {
            for s in 0..spatial {
                let idx = (b * channels + c) * spatial + s;
                out.data_mut()[idx] = gamma * (xd[idx] - mean) * istd;
            }
        }
    }
    out.ensure_finite("bntt_infer")?;
    Ok(out)
}

/// Backward pass of training-mode `bntt_apply` for one timestep.
///
/// Returns the gradient w.r.t. the pre-normalization activations and adds the
/// per-channel gradient w.r.t. `gamma[t]` into `grad_gamma_t`.
pub fn bntt_backward(
    bntt: &BnttState,
    t: usize,
    cache: &BnttCache,
    grad_out: &Tensor,
    grad_gamma_t: &mut [f32],
) -> Result<Tensor> {
    let channels = bntt.channels();
    let (batch, spatial) = channel_layout(grad_out.shape(), channels, "bntt_backward")?;
    let group = (batch * spatial) as f32;
    let gd = grad_out.data();
    let xh = cache.normalized.data();
    let mut grad_in = Tensor::zeros(grad_out.shape());
    for c in 0..channels {
        let gamma = bntt.gamma.data()[t * channels + c];
        let istd = cache.inv_std[c];
        let mut sum_g = 0.0f32; // sum of dL/dxhat
        let mut sum_gx = 0.0f32; // sum of dL/dxhat * xhat
        for b in 0..batch {
            for s in 0..spatial {
                let idx = (b * channels + c) * spatial + s;
                let g_xhat = gd[idx] * gamma;
                sum_g += g_xhat;
                sum_gx += g_xhat * xh[idx];
                grad_gamma_t[c] += gd[idx] * xh[idx];
            }
        }
        for b in 0..batch {
            for s in 0..spatial {
                let idx = (b * channels + c) * spatial + s;
                let g_xhat = gd[idx] * gamma;
                grad_in.data_mut()[idx] =
                    istd * (g_xhat - sum_g / group - xh[idx] * (sum_gx / group));
            }
        }
    }
    grad_in.ensure_finite("bntt_backward")?;
    Ok(grad_in)
}
