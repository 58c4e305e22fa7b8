//! Time-unrolled execution of spiking models.
//!
//! The forward pass iterates the spike train timestep by timestep; within a
//! timestep spikes propagate through the whole depth: every hidden
//! conv/linear layer computes its weighted input, normalizes it, and updates
//! its membrane state, while pooling layers average spikes in place. The
//! final layer integrates leak-free and never fires; its accumulated
//! potentials are the logits.
//!
//! The backward pass unrolls the same graph in reverse, substituting the
//! piecewise-linear surrogate for the spike derivative and summing parameter
//! gradients over all timesteps, including the leak recurrence between
//! steps. The hard reset is a non-differentiable pass-through: the membrane
//! carry is gated off wherever a spike fired.

use crate::error::{Error, Result};
use crate::layers::{layer_backward, layer_forward, LayerKind};
use crate::models::{GradientSet, Model, ModelKind, ParamId};
use crate::rng::RngStream;
use crate::spiking::{
    bntt_apply, bntt_backward, bntt_infer, lif_step, poisson_encode, surrogate_grad, BnttCache,
    LifState, Mode,
};
use crate::tensor::Tensor;

/// Forward-pass state retained by a training-mode pass for BPTT.
#[derive(Clone, Debug)]
pub struct SnnTrace {
    /// `[t][l]`: input fed to layer `l` at timestep `t` (flattened where the
    /// layer consumes a vector).
    layer_inputs: Vec<Vec<Tensor>>,
    /// `[t][l]`: pre-reset membrane potential of spiking layers.
    pre_reset: Vec<Vec<Option<Tensor>>>,
    /// `[t][l]`: emitted spikes of spiking layers.
    spikes_out: Vec<Vec<Option<Tensor>>>,
    /// `[t][l]`: batch-statistics cache of normalized layers.
    bntt_caches: Vec<Vec<Option<BnttCache>>>,
    pub logits: Tensor,
}

/// Poisson-encodes a `[B,C,H,W]` batch into per-timestep `[B,C,H,W]` spike
/// slices. Sample `i` draws from `stream.child(i)`.
pub fn encode_batch(images: &Tensor, timesteps: usize, stream: &RngStream) -> Result<Vec<Tensor>> {
    let shape = images.shape();
    if shape.len() != 4 {
        return Err(Error::invalid_input(
            "encode_batch",
            format!("expected [B,C,H,W] images, got {shape:?}"),
        ));
    }
    let (batch, per_sample) = (shape[0], shape[1] * shape[2] * shape[3]);
    let mut slices = vec![vec![0.0f32; batch * per_sample]; timesteps];
    for b in 0..batch {
        let image = Tensor::from_vec(
            &shape[1..],
            images.data()[b * per_sample..(b + 1) * per_sample].to_vec(),
        )?;
        let train = poisson_encode(&image, timesteps, &stream.child(b as u64))?;
        for t in 0..timesteps {
            slices[t][b * per_sample..(b + 1) * per_sample]
                .copy_from_slice(&train.data()[t * per_sample..(t + 1) * per_sample]);
        }
    }
    let mut slice_shape = vec![batch];
    slice_shape.extend_from_slice(&shape[1..]);
    slices
        .into_iter()
        .map(|data| Tensor::from_vec(&slice_shape, data))
        .collect()
}

fn check_spike_input(model: &Model, spikes: &[Tensor]) -> Result<usize> {
    let cfg = model
        .snn_config
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("snn_forward called on a non-spiking model".into()))?;
    if model.kind() != ModelKind::Snn {
        return Err(Error::InvalidConfig("snn_forward needs an SNN model".into()));
    }
    if spikes.len() != cfg.timesteps {
        return Err(Error::invalid_input(
            "snn_forward",
            format!("expected {} timestep slices, got {}", cfg.timesteps, spikes.len()),
        ));
    }
    let mut expected = vec![spikes[0].shape()[0]];
    expected.extend_from_slice(&model.spec.input_shape);
    for (t, slice) in spikes.iter().enumerate() {
        if slice.shape() != expected {
            return Err(Error::shape_mismatch(
                format!("snn_forward spike slice {t}"),
                &expected,
                slice.shape(),
            ));
        }
        debug_assert!(
            slice.data().iter().all(|&v| v == 0.0 || v == 1.0),
            "spike input must be 0/1 valued"
        );
    }
    Ok(expected[0])
}

/// Reshape a `[B, C, H, W]` activation to `[B, n]` when the consumer is a
/// vector layer.
fn shape_for_layer(x: Tensor, layer_input: &[usize], batch: usize) -> Result<Tensor> {
    if layer_input.len() + 1 == x.shape().len() {
        return Ok(x);
    }
    let mut target = vec![batch];
    target.extend_from_slice(layer_input);
    x.reshaped(&target)
}

/// Runs the spiking forward pass and returns the accumulated last-layer
/// potentials as `[B, classes]` logits. A training-mode pass retains the
/// intermediate state needed by [`snn_backward`] and updates the
/// normalization running statistics.
pub fn snn_forward(model: &mut Model, spike_input: &[Tensor], mode: Mode) -> Result<Tensor> {
    if mode == Mode::Inference {
        return snn_forward_inference(model, spike_input, &mut |_, _| {});
    }
    let batch = check_spike_input(model, spike_input)?;
    let cfg = model.snn_config.clone().expect("checked above");
    let layer_count = model.layers.len();
    let last = model.last_layer();

    let mut states: Vec<Option<LifState>> = model
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            if l != last && !matches!(layer.kind, LayerKind::AvgPool) {
                let mut shape = vec![batch];
                shape.extend(layer.output_shape());
                Some(LifState::zeros(&shape))
            } else {
                None
            }
        })
        .collect();

    let mut logits = Tensor::zeros(&[batch, model.spec.class_count]);
    let mut trace = SnnTrace {
        layer_inputs: Vec::with_capacity(cfg.timesteps),
        pre_reset: Vec::with_capacity(cfg.timesteps),
        spikes_out: Vec::with_capacity(cfg.timesteps),
        bntt_caches: Vec::with_capacity(cfg.timesteps),
        logits: Tensor::zeros(&[0]),
    };

    for t in 0..cfg.timesteps {
        let mut x = spike_input[t].clone();
        let mut inputs_t = Vec::with_capacity(layer_count);
        let mut pre_t = vec![None; layer_count];
        let mut spikes_t = vec![None; layer_count];
        let mut caches_t = vec![None; layer_count];

        for l in 0..layer_count {
            x = shape_for_layer(x, &model.layers[l].input_shape, batch)?;
            inputs_t.push(x.clone());
            if l == last {
                let preact = layer_forward(&model.layers[l], &x)?;
                for (acc, p) in logits.data_mut().iter_mut().zip(preact.data()) {
                    *acc += p;
                }
                break;
            }
            match model.layers[l].kind {
                LayerKind::AvgPool => {
                    x = layer_forward(&model.layers[l], &x)?;
                }
                _ => {
                    let preact = layer_forward(&model.layers[l], &x)?;
                    let bntt = model.bntt[l].as_mut().expect("hidden layer is normalized");
                    let (normed, cache) = bntt_apply(bntt, t, &preact, Mode::Training)?;
                    let threshold = model.thresholds[l].expect("hidden layer has a threshold");
                    let state = states[l].as_ref().expect("hidden layer has LIF state");
                    let step = lif_step(state, &normed, cfg.leak, threshold)?;
                    pre_t[l] = Some(step.pre_reset);
                    spikes_t[l] = Some(step.spikes.clone());
                    caches_t[l] = cache;
                    states[l] = Some(step.state);
                    x = step.spikes;
                }
            }
        }
        trace.layer_inputs.push(inputs_t);
        trace.pre_reset.push(pre_t);
        trace.spikes_out.push(spikes_t);
        trace.bntt_caches.push(caches_t);
    }

    logits.ensure_finite("snn_forward")?;
    trace.logits = logits.clone();
    model.snn_trace = Some(trace);
    Ok(logits)
}

/// Inference-mode forward pass: a pure function of `(model, spike_input)`.
/// `observe` is called with `(layer index, input activations)` for every
/// conv/linear layer at every timestep; the energy estimator uses this to
/// measure spike rates.
pub fn snn_forward_inference(
    model: &Model,
    spike_input: &[Tensor],
    observe: &mut dyn FnMut(usize, &Tensor),
) -> Result<Tensor> {
    let batch = check_spike_input(model, spike_input)?;
    let cfg = model.snn_config.as_ref().expect("checked above");
    let last = model.last_layer();

    let mut states: Vec<Option<LifState>> = model
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            if l != last && !matches!(layer.kind, LayerKind::AvgPool) {
                let mut shape = vec![batch];
                shape.extend(layer.output_shape());
                Some(LifState::zeros(&shape))
            } else {
                None
            }
        })
        .collect();

    let mut logits = Tensor::zeros(&[batch, model.spec.class_count]);
    for t in 0..cfg.timesteps {
        let mut x = spike_input[t].clone();
        for l in 0..model.layers.len() {
            x = shape_for_layer(x, &model.layers[l].input_shape, batch)?;
            if !matches!(model.layers[l].kind, LayerKind::AvgPool) {
                observe(l, &x);
            }
            if l == last {
                let preact = layer_forward(&model.layers[l], &x)?;
                for (acc, p) in logits.data_mut().iter_mut().zip(preact.data()) {
                    *acc += p;
                }
                break;
            }
            match model.layers[l].kind {
                LayerKind::AvgPool => {
                    x = layer_forward(&model.layers[l], &x)?;
                }
                _ => {
                    let preact = layer_forward(&model.layers[l], &x)?;
                    let bntt = model.bntt[l].as_ref().expect("hidden layer is normalized");
                    let normed = bntt_infer(bntt, t, &preact)?;
                    let threshold = model.thresholds[l].expect("hidden layer has a threshold");
                    let state = states[l].as_ref().expect("hidden layer has LIF state");
                    let step = lif_step(state, &normed, cfg.leak, threshold)?;
                    states[l] = Some(step.state);
                    x = step.spikes;
                }
            }
        }
    }
    logits.ensure_finite("snn_forward_inference")?;
    Ok(logits)
}

/// Cross-entropy of one logit vector against a class index, computed through
/// a max-shifted log-sum-exp.
pub fn snn_loss(logits: &Tensor, label: usize) -> Result<f32> {
    let classes = logits.len();
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let data = logits.data();
    let max = data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for &z in data {
        sum += (z - max).exp();
    }
    Ok(sum.ln() - (data[label] - max))
}

/// Mean batch loss and the logit gradient `(softmax - onehot) / B`.
pub(crate) fn batch_loss_and_grad(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::shape_mismatch(
            "batch_loss_and_grad",
            &[labels.len(), shape.get(1).copied().unwrap_or(0)],
            shape,
        ));
    }
    let (batch, classes) = (shape[0], shape[1]);
    let mut grad = Tensor::zeros(shape);
    let mut total = 0.0f64;
    for b in 0..batch {
        let label = labels[b];
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let row = &logits.data()[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for &z in row {
            sum += (z - max).exp();
        }
        total += (sum.ln() - (row[label] - max)) as f64;
        for c in 0..classes {
            let p = (row[c] - max).exp() / sum;
            let target = if c == label { 1.0 } else { 0.0 };
            grad.data_mut()[b * classes + c] = (p - target) / batch as f32;
        }
    }
    Ok(((total / batch as f64) as f32, grad))
}

/// Backpropagation-through-time over the retained forward pass. Returns the
/// gradient of the mean batch loss for every parameter (normalization scales
/// included) and the loss itself. Consumes the trace.
pub fn snn_backward(model: &mut Model, labels: &[usize]) -> Result<(GradientSet, f32)> {
    let trace = model.snn_trace.take().ok_or(Error::MissingForwardState)?;
    let cfg = model.snn_config.clone().expect("snn model has a config");
    let (loss, grad_logits) = batch_loss_and_grad(&trace.logits, labels)?;
    let batch = trace.logits.shape()[0];
    let last = model.last_layer();
    let layer_count = model.layers.len();

    let ids = model.param_ids();
    let slot_of = |target: ParamId| ids.iter().position(|&id| id == target);
    let mut grads = model.zero_gradients();

    // dL/d(post-reset membrane) scaled by the leak, flowing from t+1 to t
    let mut carry: Vec<Option<Tensor>> = vec![None; layer_count];

    for t in (0..cfg.timesteps).rev() {
        let mut grad_x = grad_logits.clone(); // dL/d(last-layer preact) at every t
        for l in (0..layer_count).rev() {
            let input = &trace.layer_inputs[t][l];
            if l == last {
                let lg = layer_backward(&model.layers[l], input, &grad_x)?;
                if let Some(gw) = lg.weight {
                    grads.accumulate(slot_of(ParamId::Weight(l)).unwrap(), &gw);
                }
                if let Some(gb) = lg.bias {
                    grads.accumulate(slot_of(ParamId::Bias(l)).unwrap(), &gb);
                }
                grad_x = lg.input;
                continue;
            }
            // grad_x currently has the shape layer l+1 consumed; bring it back
            // to layer l's output shape
            let mut out_shape = vec![batch];
            out_shape.extend(model.layers[l].output_shape());
            grad_x = grad_x.reshaped(&out_shape)?;

            match model.layers[l].kind {
                LayerKind::AvgPool => {
                    let lg = layer_backward(&model.layers[l], input, &grad_x)?;
                    grad_x = lg.input;
                }
                _ => {
                    let pre = trace.pre_reset[t][l].as_ref().expect("spiking layer trace");
                    let spikes = trace.spikes_out[t][l].as_ref().expect("spiking layer trace");
                    let threshold = model.thresholds[l].expect("spiking layer threshold");

                    // dL/d(pre-reset u) = spike-path gradient through the
                    // surrogate + membrane carry gated off where a reset fired
                    let mut d_u = Tensor::zeros(pre.shape());
                    {
                        let du = d_u.data_mut();
                        let gx = grad_x.data();
                        let ud = pre.data();
                        let od = spikes.data();
                        if let Some(c) = &carry[l] {
                            let cd = c.data();
                            for i in 0..du.len() {
                                let sur = surrogate_grad(ud[i], threshold, cfg.surrogate_decay);
                                du[i] = gx[i] * sur + cd[i] * (1.0 - od[i]);
                            }
                        } else {
                            for i in 0..du.len() {
                                let sur = surrogate_grad(ud[i], threshold, cfg.surrogate_decay);
                                du[i] = gx[i] * sur;
                            }
                        }
                    }

                    let bntt = model.bntt[l].as_ref().expect("hidden layer is normalized");
                    let cache = trace.bntt_caches[t][l]
                        .as_ref()
                        .ok_or(Error::MissingForwardState)?;
                    let channels = bntt.channels();
                    let gamma_slot = slot_of(ParamId::Gamma(l)).unwrap();
                    let d_pre = {
                        let gamma_grad = &mut grads.grads[gamma_slot].data_mut()
                            [t * channels..(t + 1) * channels];
                        bntt_backward(bntt, t, cache, &d_u, gamma_grad)?
                    };

                    let lg = layer_backward(&model.layers[l], input, &d_pre)?;
                    if let Some(gw) = lg.weight {
                        grads.accumulate(slot_of(ParamId::Weight(l)).unwrap(), &gw);
                    }
                    if let Some(gb) = lg.bias {
                        grads.accumulate(slot_of(ParamId::Bias(l)).unwrap(), &gb);
                    }
                    carry[l] = Some(d_u.map(|v| v * cfg.leak));
                    grad_x = lg.input;
                }
            }
        }
    }
    Ok((grads, loss))
}
