//! Conventional (ReLU) execution of the same layer stack, used as the
//! like-for-like baseline: identical topology and pooling, biases enabled,
//! no normalization, single forward pass per sample.

use crate::error::{Error, Result};
use crate::layers::{layer_backward, layer_forward, LayerKind};
use crate::models::{GradientSet, Model, ModelKind, ParamId};
use crate::snn::batch_loss_and_grad;
use crate::spiking::Mode;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AnnTrace {
    /// Input fed to each layer (flattened where the layer consumes a vector).
    layer_inputs: Vec<Tensor>,
    /// Pre-activation of hidden conv/linear layers, for the ReLU gate.
    preacts: Vec<Option<Tensor>>,
    pub logits: Tensor,
}

fn shape_for_layer(x: Tensor, layer_input: &[usize], batch: usize) -> Result<Tensor> {
    if layer_input.len() + 1 == x.shape().len() {
        return Ok(x);
    }
    let mut target = vec![batch];
    target.extend_from_slice(layer_input);
    x.reshaped(&target)
}

/// Forward pass over `[B,C,H,W]` images. Training mode retains the state
/// needed by [`ann_backward`]; there are no batch-dependent layers, so the
/// computed logits do not depend on the mode.
pub fn ann_forward(model: &mut Model, images: &Tensor, mode: Mode) -> Result<Tensor> {
    let (logits, trace) = forward_inner(model, images, mode == Mode::Training)?;
    if mode == Mode::Training {
        model.ann_trace = trace;
    }
    Ok(logits)
}

/// Inference pass without any model mutation.
pub fn ann_forward_inference(model: &Model, images: &Tensor) -> Result<Tensor> {
    Ok(forward_inner(model, images, false)?.0)
}

fn forward_inner(
    model: &Model,
    images: &Tensor,
    want_trace: bool,
) -> Result<(Tensor, Option<AnnTrace>)> {
    if model.kind() != ModelKind::Ann {
        return Err(Error::InvalidConfig("ann_forward needs an ANN model".into()));
    }
    let shape = images.shape();
    let mut expected = vec![shape[0]];
    expected.extend_from_slice(&model.spec.input_shape);
    if shape.len() != 4 || shape != expected {
        return Err(Error::shape_mismatch("ann_forward input", &expected, shape));
    }
    let batch = shape[0];
    let last = model.last_layer();

    let mut x = images.clone();
    let mut inputs = Vec::with_capacity(model.layers.len());
    let mut preacts = vec![None; model.layers.len()];
    let mut logits = Tensor::zeros(&[0]);

    for l in 0..model.layers.len() {
        x = shape_for_layer(x, &model.layers[l].input_shape, batch)?;
        if want_trace {
            inputs.push(x.clone());
        }
        if l == last {
            logits = layer_forward(&model.layers[l], &x)?;
            break;
        }
        match model.layers[l].kind {
            LayerKind::AvgPool => {
                x = layer_forward(&model.layers[l], &x)?;
            }
            _ => {
                let pre = layer_forward(&model.layers[l], &x)?;
                x = pre.map(|v| v.max(0.0));
                if want_trace {
                    preacts[l] = Some(pre);
                }
            }
        }
    }

    let trace = want_trace.then(|| AnnTrace {
        layer_inputs: inputs,
        preacts,
        logits: logits.clone(),
    });
    Ok((logits, trace))
}

/// Standard backpropagation over the retained forward pass. Returns
/// per-parameter gradients of the mean batch loss and the loss itself.
pub fn ann_backward(model: &mut Model, labels: &[usize]) -> Result<(GradientSet, f32)> {
    let trace = model.ann_trace.take().ok_or(Error::MissingForwardState)?;
    let (loss, grad_logits) = batch_loss_and_grad(&trace.logits, labels)?;
    let batch = trace.logits.shape()[0];
    let last = model.last_layer();

    let ids = model.param_ids();
    let slot_of = |target: ParamId| ids.iter().position(|&id| id == target);
    let mut grads = model.zero_gradients();

    let mut grad_x = grad_logits;
    for l in (0..model.layers.len()).rev() {
        let input = &trace.layer_inputs[l];
        if l != last {
            let mut out_shape = vec![batch];
            out_shape.extend(model.layers[l].output_shape());
            grad_x = grad_x.reshaped(&out_shape)?;
        }
        match model.layers[l].kind {
            LayerKind::AvgPool => {
                let lg = layer_backward(&model.layers[l], input, &grad_x)?;
                grad_x = lg.input;
            }
            _ => {
                let upstream = if l == last {
                    grad_x
                } else {
                    let pre = trace.preacts[l].as_ref().expect("hidden layer preact");
                    grad_x.zip_map(pre, |g, p| if p > 0.0 { g } else { 0.0 })?
                };
                let lg = layer_backward(&model.layers[l], input, &upstream)?;
                if let Some(gw) = lg.weight {
                    grads.accumulate(slot_of(ParamId::Weight(l)).unwrap(), &gw);
                }
                if let Some(gb) = lg.bias {
                    grads.accumulate(slot_of(ParamId::Bias(l)).unwrap(), &gb);
                }
                grad_x = lg.input;
            }
        }
    }
    Ok((grads, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, Batch, LayerDesc, ModelSpec, SgdConfig, SgdState};
    use crate::rng::{rng_uniform, RngStream};

    fn toy_ann() -> Model {
        let spec = ModelSpec {
            kind: ModelKind::Ann,
            layers: vec![
                LayerDesc::Conv2d { kernel: 3, in_ch: 1, out_ch: 3 },
                LayerDesc::AvgPool,
                LayerDesc::Linear { inputs: 3 * 2 * 2, outputs: 2 },
            ],
            input_shape: vec![1, 4, 4],
            class_count: 2,
        };
        build_model(&spec, None, &RngStream::new(11)).unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut model = toy_ann();
        let images = rng_uniform(&RngStream::new(12).child(0), &[3, 1, 4, 4]);
        let labels = vec![0, 1, 0];
        ann_forward(&mut model, &images, Mode::Training).unwrap();
        let (grads, _) = ann_backward(&mut model, &labels).unwrap();

        let loss_of = |m: &mut Model| -> f64 {
            let logits = ann_forward(m, &images, Mode::Inference).unwrap();
            let (loss, _) = batch_loss_and_grad(&logits, &labels).unwrap();
            loss as f64
        };

        // small step: a bias perturbation shifts every ReLU kink in a channel
        let h = 1e-3f32;
        for (slot, id) in model.param_ids().into_iter().enumerate() {
            let n = model.param(id).len();
            for idx in (0..n).step_by(3) {
                let orig = model.param(id).data()[idx];
                model.param_mut(id).data_mut()[idx] = orig + h;
                let plus = loss_of(&mut model);
                model.param_mut(id).data_mut()[idx] = orig - h;
                let minus = loss_of(&mut model);
                model.param_mut(id).data_mut()[idx] = orig;
                let fd = (plus - minus) / (2.0 * h as f64);
                let an = grads.grads[slot].data()[idx] as f64;
                assert!(
                    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3) < 2e-2,
                    "param {id:?}[{idx}]: fd={fd} analytic={an}"
                );
            }
        }
    }

    #[test]
    fn two_steps_on_convex_toy_problem_decrease_loss() {
        let spec = ModelSpec {
            kind: ModelKind::Ann,
            layers: vec![LayerDesc::Linear { inputs: 4, outputs: 2 }],
            input_shape: vec![1, 2, 2],
            class_count: 2,
        };
        let mut model = build_model(&spec, None, &RngStream::new(13)).unwrap();
        let batch = Batch {
            images: Tensor::from_vec(
                &[4, 1, 2, 2],
                vec![
                    1.0, 0.0, 0.0, 0.0, //
                    0.0, 1.0, 0.0, 0.0, //
                    0.0, 0.0, 1.0, 0.0, //
                    0.0, 0.0, 0.0, 1.0,
                ],
            )
            .unwrap(),
            labels: vec![0, 0, 1, 1],
        };
        let opt = SgdConfig {
            learning_rate: 0.5,
            momentum: 0.0,
            weight_decay: 0.0,
            lr_schedule: vec![],
        };
        let mut state = SgdState::new(&model);
        let stream = RngStream::new(0);
        let l1 =
            crate::models::train_step(&mut model, &batch, &opt, &mut state, 0.5, &stream).unwrap();
        let l2 =
            crate::models::train_step(&mut model, &batch, &opt, &mut state, 0.5, &stream).unwrap();
        let l3 =
            crate::models::train_step(&mut model, &batch, &opt, &mut state, 0.5, &stream).unwrap();
        assert!(l2 < l1, "{l2} !< {l1}");
        assert!(l3 < l2, "{l3} !< {l2}");
    }
}
