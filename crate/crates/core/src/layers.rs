//! Forward and backward kernels for the three layer kinds every model here
//! is built from: stride-1 zero-padded convolution, 2x2/stride-2 average
//! pooling, and fully connected layers.
//!
//! Kernels take batched inputs `[B, ...per-sample shape]`, are pure, and
//! accumulate in row-major order so repeated calls are bit-identical.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    /// k x k convolution, stride 1, zero same-padding. `kernel` must be odd.
    Conv2d {
        kernel: usize,
        in_ch: usize,
        out_ch: usize,
    },
    /// 2x2 average pooling with stride 2.
    AvgPool,
    Linear {
        inputs: usize,
        outputs: usize,
    },
}

/// One instantiated layer: kind, declared per-sample input shape, parameters.
///
/// `bias` may be carried but inactive: the tensor participates in parameter
/// flattening while the forward pass ignores it and its gradient is zero.
/// Spiking models use that arrangement so both model kinds expose the same
/// parameter layout.
#[derive(Clone, Debug)]
pub struct LayerParams {
    pub name: String,
    pub kind: LayerKind,
    pub input_shape: Vec<usize>,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
    pub bias_active: bool,
}

impl LayerParams {
    pub fn conv2d(
        name: impl Into<String>,
        input_shape: &[usize],
        kernel: usize,
        out_ch: usize,
        weight: Tensor,
        bias: Option<Tensor>,
        bias_active: bool,
    ) -> Result<Self> {
        let name = name.into();
        if input_shape.len() != 3 {
            return Err(Error::invalid_input(
                format!("layer {name}"),
                format!("conv2d needs a [C,H,W] input shape, got {input_shape:?}"),
            ));
        }
        if kernel % 2 == 0 || kernel == 0 {
            return Err(Error::InvalidConfig(format!(
                "layer {name}: same-padded conv2d needs an odd kernel, got {kernel}"
            )));
        }
        let in_ch = input_shape[0];
        let expected = [out_ch, in_ch, kernel, kernel];
        if weight.shape() != expected {
            return Err(Error::shape_mismatch(
                format!("layer {name} weight"),
                &expected,
                weight.shape(),
            ));
        }
        if let Some(b) = &bias {
            if b.shape() != [out_ch] {
                return Err(Error::shape_mismatch(
                    format!("layer {name} bias"),
                    &[out_ch],
                    b.shape(),
                ));
            }
        }
        debug_assert!(!bias_active || bias.is_some());
        Ok(LayerParams {
            name,
            kind: LayerKind::Conv2d {
                kernel,
                in_ch,
                out_ch,
            },
            input_shape: input_shape.to_vec(),
            weight: Some(weight),
            bias,
            bias_active,
        })
    }

    pub fn avgpool(name: impl Into<String>, input_shape: &[usize]) -> Result<Self> {
        let name = name.into();
        if input_shape.len() != 3 || input_shape[1] % 2 != 0 || input_shape[2] % 2 != 0 {
            return Err(Error::invalid_input(
                format!("layer {name}"),
                format!("2x2/stride-2 avgpool needs even [C,H,W] spatial dims, got {input_shape:?}"),
            ));
        }
        Ok(LayerParams {
            name,
            kind: LayerKind::AvgPool,
            input_shape: input_shape.to_vec(),
            weight: None,
            bias: None,
            bias_active: false,
        })
    }

    pub fn linear(
        name: impl Into<String>,
        inputs: usize,
        outputs: usize,
        weight: Tensor,
        bias: Option<Tensor>,
        bias_active: bool,
    ) -> Result<Self> {
        let name = name.into();
        if weight.shape() != [outputs, inputs] {
            return Err(Error::shape_mismatch(
                format!("layer {name} weight"),
                &[outputs, inputs],
                weight.shape(),
            ));
        }
        if let Some(b) = &bias {
            if b.shape() != [outputs] {
                return Err(Error::shape_mismatch(
                    format!("layer {name} bias"),
                    &[outputs],
                    b.shape(),
                ));
            }
        }
        debug_assert!(!bias_active || bias.is_some());
        Ok(LayerParams {
            name,
            kind: LayerKind::Linear { inputs, outputs },
            input_shape: vec![inputs],
            weight: Some(weight),
            bias,
            bias_active,
        })
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv2d { out_ch, .. } => {
                vec![out_ch, self.input_shape[1], self.input_shape[2]]
            }
            LayerKind::AvgPool => vec![
                self.input_shape[0],
                self.input_shape[1] / 2,
                self.input_shape[2] / 2,
            ],
            LayerKind::Linear { outputs, .. } => vec![outputs],
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<usize> {
        let shape = input.shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            return Err(Error::ShapeMismatch {
                context: format!("layer {} input", self.name),
                expected: self.input_shape.clone(),
                got: shape.to_vec(),
            });
        }
        Ok(shape[0])
    }
}

/// Applies `layer` to a `[B, ...input]` tensor, producing `[B, ...output]`.
pub fn layer_forward(layer: &LayerParams, input: &Tensor) -> Result<Tensor> {
    let batch = layer.check_input(input)?;
    let out = match &layer.kind {
        LayerKind::Conv2d {
            kernel,
            in_ch,
            out_ch,
        } => conv2d_forward(layer, input, batch, *kernel, *in_ch, *out_ch),
        LayerKind::AvgPool => avgpool_forward(layer, input, batch),
        LayerKind::Linear { inputs, outputs } => {
            linear_forward(layer, input, batch, *inputs, *outputs)
        }
    };
    out.ensure_finite(&format!("layer {} forward", layer.name))?;
    Ok(out)
}

/// Gradients produced by one backward step.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub input: Tensor,
    /// Same shape as the layer weight; `None` for parameterless layers.
    pub weight: Option<Tensor>,
    /// Same shape as the layer bias; zero when the bias is carried inactive.
    pub bias: Option<Tensor>,
}

/// Backpropagates `grad_out` through `layer` at `input`.
pub fn layer_backward(layer: &LayerParams, input: &Tensor, grad_out: &Tensor) -> Result<LayerGrads> {
    let batch = layer.check_input(input)?;
    let mut expected_out = vec![batch];
    expected_out.extend(layer.output_shape());
    if grad_out.shape() != expected_out {
        return Err(Error::ShapeMismatch {
            context: format!("layer {} grad_out", layer.name),
            expected: expected_out,
            got: grad_out.shape().to_vec(),
        });
    }
    let grads = match &layer.kind {
        LayerKind::Conv2d {
            kernel,
            in_ch,
            out_ch,
        } => conv2d_backward(layer, input, grad_out, batch, *kernel, *in_ch, *out_ch),
        LayerKind::AvgPool => avgpool_backward(layer, input, grad_out, batch),
        LayerKind::Linear { inputs, outputs } => {
            linear_backward(layer, input, grad_out, batch, *inputs, *outputs)
        }
    };
    grads
        .input
        .ensure_finite(&format!("layer {} backward", layer.name))?;
    Ok(grads)
}

fn conv2d_forward(
    layer: &LayerParams,
    input: &Tensor,
    batch: usize,
    k: usize,
    in_ch: usize,
    out_ch: usize,
) -> Tensor {
    let (h, w) = (layer.input_shape[1], layer.input_shape[2]);
    let pad = k / 2;
    let weight = layer.weight.as_ref().expect("conv2d has a weight");
    let wd = weight.data();
    let xd = input.data();
    let mut out = Tensor::zeros(&[batch, out_ch, h, w]);
    let od = out.data_mut();
    for b in 0..batch {
        for o in 0..out_ch {
            let base_bias = if layer.bias_active {
                layer.bias.as_ref().expect("active bias").data()[o]
            } else {
                0.0
            };
            for y in 0..h {
                for x in 0..w {
                    let mut acc = base_bias;
                    for i in 0..in_ch {
                        for dy in 0..k {
                            let iy = (y + dy).wrapping_sub(pad);
                            if iy >= h {
                                continue;
                            }
                            for dx in 0..k {
                                let ix = (x + dx).wrapping_sub(pad);
                                if ix >= w {
                                    continue;
                                }
                                let wv = wd[((o * in_ch + i) * k + dy) * k + dx];
                                let xv = xd[((b * in_ch + i) * h + iy) * w + ix];
                                acc += wv * xv;
                            }
                        }
                    }
                    od[((b * out_ch + o) * h + y) * w + x] = acc;
                }
            }
        }
    }
    out
}

fn conv2d_backward(
    layer: &LayerParams,
    input: &Tensor,
    grad_out: &Tensor,
    batch: usize,
    k: usize,
    in_ch: usize,
    out_ch: usize,
) -> LayerGrads {
    let (h, w) = (layer.input_shape[1], layer.input_shape[2]);
    let pad = k / 2;
    let weight = layer.weight.as_ref().expect("conv2d has a weight");
    let wd = weight.data();
    let xd = input.data();
    let gd = grad_out.data();

    let mut grad_in = Tensor::zeros(input.shape());
    let gi = grad_in.data_mut();
    for b in 0..batch {
        for o in 0..out_ch {
            for y in 0..h {
                for x in 0..w {
                    let g = gd[((b * out_ch + o) * h + y) * w + x];
                    if g == 0.0 {
                        continue;
                    }
                    for i in 0..in_ch {
                        for dy in 0..k {
                            let iy = (y + dy).wrapping_sub(pad);
                            if iy >= h {
                                continue;
                            }
                            for dx in 0..k {
                                let ix = (x + dx).wrapping_sub(pad);
                                if ix >= w {
                                    continue;
                                }
                                gi[((b * in_ch + i) * h + iy) * w + ix] +=
                                    g * wd[((o * in_ch + i) * k + dy) * k + dx];
                            }
                        }
                    }
                }
            }
        }
    }

    let mut grad_w = Tensor::zeros(weight.shape());
    let gw = grad_w.data_mut();
    for b in 0..batch {
        for o in 0..out_ch {
            for y in 0..h {
                for x in 0..w {
                    let g = gd[((b * out_ch + o) * h + y) * w + x];
                    if g == 0.0 {
                        continue;
                    }
                    for i in 0..in_ch {
                        for dy in 0..k {
                            let iy = (y + dy).wrapping_sub(pad);
                            if iy >= h {
                                continue;
                            }
                            for dx in 0..k {
                                let ix = (x + dx).wrapping_sub(pad);
                                if ix >= w {
                                    continue;
                                }
                                gw[((o * in_ch + i) * k + dy) * k + dx] +=
                                    g * xd[((b * in_ch + i) * h + iy) * w + ix];
                            }
                        }
                    }
                }
            }
        }
    }

    let grad_b = layer.bias.as_ref().map(|bias| {
        let mut gb = Tensor::zeros(bias.shape());
        if layer.bias_active {
            let gbd = gb.data_mut();
            for b in 0..batch {
                for o in 0..out_ch {
                    for y in 0..h {
                        for x in 0..w {
                            gbd[o] += gd[((b * out_ch + o) * h + y) * w + x];
                        }
                    }
                }
            }
        }
        gb
    });

    LayerGrads {
        input: grad_in,
        weight: Some(grad_w),
        bias: grad_b,
    }
}

fn avgpool_forward(layer: &LayerParams, input: &Tensor, batch: usize) -> Tensor {
    let (c, h, w) = (
        layer.input_shape[0],
        layer.input_shape[1],
        layer.input_shape[2],
    );
    let (oh, ow) = (h / 2, w / 2);
    let xd = input.data();
    let mut out = Tensor::zeros(&[batch, c, oh, ow]);
    let od = out.data_mut();
    for b in 0..batch {
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let i00 = xd[((b * c + ch) * h + 2 * y) * w + 2 * x];
                    let i01 = xd[((b * c + ch) * h + 2 * y) * w + 2 * x + 1];
                    let i10 = xd[((b * c + ch) * h + 2 * y + 1) * w + 2 * x];
                    let i11 = xd[((b * c + ch) * h + 2 * y + 1) * w + 2 * x + 1];
                    od[((b * c + ch) * oh + y) * ow + x] = (i00 + i01 + i10 + i11) / 4.0;
                }
            }
        }
    }
    out
}

fn avgpool_backward(layer: &LayerParams, input: &Tensor, grad_out: &Tensor, batch: usize) -> LayerGrads {
    let (c, h, w) = (
        layer.input_shape[0],
        layer.input_shape[1],
        layer.input_shape[2],
    );
    let (oh, ow) = (h / 2, w / 2);
    let gd = grad_out.data();
    let mut grad_in = Tensor::zeros(input.shape());
    let gi = grad_in.data_mut();
    for b in 0..batch {
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let g = gd[((b * c + ch) * oh + y) * ow + x] / 4.0;
                    gi[((b * c + ch) * h + 2 * y) * w + 2 * x] = g;
                    gi[((b * c + ch) * h + 2 * y) * w + 2 * x + 1] = g;
                    gi[((b * c + ch) * h + 2 * y + 1) * w + 2 * x] = g;
                    gi[((b * c + ch) * h + 2 * y + 1) * w + 2 * x + 1] = g;
                }
            }
        }
    }
    LayerGrads {
        input: grad_in,
        weight: None,
        bias: None,
    }
}

fn linear_forward(
    layer: &LayerParams,
    input: &Tensor,
    batch: usize,
    inputs: usize,
    outputs: usize,
) -> Tensor {
    let weight = layer.weight.as_ref().expect("linear has a weight");
    let wd = weight.data();
    let xd = input.data();
    let mut out = Tensor::zeros(&[batch, outputs]);
    let od = out.data_mut();
    for b in 0..batch {
        for o in 0..outputs {
            let mut acc = if layer.bias_active {
                layer.bias.as_ref().expect("active bias").data()[o]
            } else {
                0.0
            };
            for i in 0..inputs {
                acc += wd[o * inputs + i] * xd[b * inputs + i];
            }
            od[b * outputs + o] = acc;
        }
    }
    out
}

fn linear_backward(
    layer: &LayerParams,
    input: &Tensor,
    grad_out: &Tensor,
    batch: usize,
    inputs: usize,
    outputs: usize,
) -> LayerGrads {
    let weight = layer.weight.as_ref().expect("linear has a weight");
    let wd = weight.data();
    let xd = input.data();
    let gd = grad_out.data();

    let mut grad_in = Tensor::zeros(input.shape());
    let gi = grad_in.data_mut();
    for b in 0..batch {
        for i in 0..inputs {
            let mut acc = 0.0f32;
            for o in 0..outputs {
                acc += wd[o * inputs + i] * gd[b * outputs + o];
            }
            gi[b * inputs + i] = acc;
        }
    }

    let mut grad_w = Tensor::zeros(weight.shape());
    let gw = grad_w.data_mut();
    for o in 0..outputs {
        for i in 0..inputs {
            let mut acc = 0.0f32;
            for b in 0..batch {
                acc += gd[b * outputs + o] * xd[b * inputs + i];
            }
            gw[o * inputs + i] = acc;
        }
    }

    let grad_b = layer.bias.as_ref().map(|bias| {
        let mut gb = Tensor::zeros(bias.shape());
        if layer.bias_active {
            let gbd = gb.data_mut();
            for b in 0..batch {
                for o in 0..outputs {
                    gbd[o] += gd[b * outputs + o];
                }
            }
        }
        gb
    });

    LayerGrads {
        input: grad_in,
        weight: Some(grad_w),
        bias: grad_b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_uniform, RngStream};

    fn batch1(shape: &[usize], data: Vec<f32>) -> Tensor {
        let mut s = vec![1];
        s.extend_from_slice(shape);
        Tensor::from_vec(&s, data).unwrap()
    }

    #[test]
    fn linear_identity_weights_pass_input_through() {
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let layer = LayerParams::linear("fc", 2, 2, w, None, false).unwrap();
        let out = layer_forward(&layer, &batch1(&[2], vec![3.0, 7.0])).unwrap();
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn avgpool_averages_four_cells() {
        let layer = LayerParams::avgpool("pool", &[1, 2, 2]).unwrap();
        let out = layer_forward(&layer, &batch1(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data(), &[2.5]);
    }

    #[test]
    fn conv_1x1_scales_input() {
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let layer = LayerParams::conv2d("conv", &[1, 2, 2], 1, 1, w, None, false).unwrap();
        let out = layer_forward(&layer, &batch1(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(out.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn conv_same_padding_hand_check() {
        // 3x3 all-ones kernel on a 2x2 image: each output is the sum of the
        // in-bounds neighbourhood.
        let w = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let layer = LayerParams::conv2d("conv", &[1, 2, 2], 3, 1, w, None, false).unwrap();
        let out = layer_forward(&layer, &batch1(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(out.data(), &[10.0, 10.0, 10.0, 10.0]);
    }

    #[test]
    fn forward_rejects_shape_mismatch_naming_layer() {
        let w = Tensor::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        let layer = LayerParams::linear("fc1", 3, 2, w, None, false).unwrap();
        let err = layer_forward(&layer, &batch1(&[2], vec![1.0, 2.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("fc1"), "{msg}");
        assert!(msg.contains("[3]") && msg.contains("[1, 2]"), "{msg}");
    }

    #[test]
    fn backward_zero_grad_out_gives_zero_grads() {
        let w = Tensor::from_vec(&[2, 2], vec![0.3, -0.2, 0.1, 0.4]).unwrap();
        let layer = LayerParams::linear("fc", 2, 2, w, None, false).unwrap();
        let input = batch1(&[2], vec![1.0, 2.0]);
        let grads = layer_backward(&layer, &input, &Tensor::zeros(&[1, 2])).unwrap();
        assert!(grads.input.data().iter().all(|&v| v == 0.0));
        assert!(grads.weight.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_weight_grad_is_outer_product() {
        let w = Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap();
        let layer = LayerParams::linear("fc", 2, 1, w, None, false).unwrap();
        let input = batch1(&[2], vec![1.0, 2.0]);
        let grads = layer_backward(&layer, &input, &batch1(&[1], vec![1.0])).unwrap();
        assert_eq!(grads.weight.unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn inactive_bias_gets_zero_gradient() {
        let w = Tensor::from_vec(&[1, 2], vec![0.5, 0.5]).unwrap();
        let bias = Tensor::zeros(&[1]);
        let layer = LayerParams::linear("fc", 2, 1, w, Some(bias), false).unwrap();
        let input = batch1(&[2], vec![1.0, 2.0]);
        let out = layer_forward(&layer, &input).unwrap();
        assert_eq!(out.data(), &[1.5]); // bias not added
        let grads = layer_backward(&layer, &input, &batch1(&[1], vec![3.0])).unwrap();
        assert_eq!(grads.bias.unwrap().data(), &[0.0]);
    }

    #[test]
    fn avgpool_backward_conserves_gradient_mass() {
        let layer = LayerParams::avgpool("pool", &[2, 4, 4]).unwrap();
        let input = rng_uniform(&RngStream::new(5).child(0), &[3, 2, 4, 4]);
        let grad_out = rng_uniform(&RngStream::new(5).child(1), &[3, 2, 2, 2]);
        let grads = layer_backward(&layer, &input, &grad_out).unwrap();
        // each grad_out cell splits into four exact quarters, so the sums match
        // up to the rounding of the final reductions
        let a = grads.input.sum() as f64;
        let b = grad_out.sum() as f64;
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }

    #[test]
    fn kernels_are_pure() {
        let stream = RngStream::new(99);
        let w = rng_uniform(&stream.child(0), &[4, 2, 3, 3]).map(|v| v * 0.2 - 0.1);
        let layer = LayerParams::conv2d("conv", &[2, 6, 6], 3, 4, w, None, false).unwrap();
        let input = rng_uniform(&stream.child(1), &[2, 2, 6, 6]);
        let a = layer_forward(&layer, &input).unwrap();
        let b = layer_forward(&layer, &input).unwrap();
        assert!(a.bit_eq(&b));
    }

    // Central finite differences of layer_forward through a fixed random probe
    // functional, compared against layer_backward.
    fn fd_check(layer: &LayerParams, input: &Tensor, seed: u64) {
        let stream = RngStream::new(seed);
        let mut out_shape = vec![input.shape()[0]];
        out_shape.extend(layer.output_shape());
        let probe = rng_uniform(&stream.child(1000), &out_shape).map(|v| v - 0.5);

        let loss = |layer: &LayerParams, input: &Tensor| -> f64 {
            let out = layer_forward(layer, input).unwrap();
            out.data()
                .iter()
                .zip(probe.data())
                .map(|(&o, &p)| o as f64 * p as f64)
                .sum()
        };

        let grads = layer_backward(layer, input, &probe).unwrap();
        let h = 1e-2f32;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-4);

        if let Some(gw) = &grads.weight {
            let w = layer.weight.as_ref().unwrap();
            for idx in 0..w.len() {
                let mut plus = layer.clone();
                plus.weight.as_mut().unwrap().data_mut()[idx] += h;
                let mut minus = layer.clone();
                minus.weight.as_mut().unwrap().data_mut()[idx] -= h;
                let fd = (loss(&plus, input) - loss(&minus, input)) / (2.0 * h as f64);
                let an = gw.data()[idx] as f64;
                assert!(rel(fd, an) < 1e-3, "weight[{idx}]: fd={fd} analytic={an}");
            }
        }
        for idx in 0..input.len() {
            let mut plus = input.clone();
            plus.data_mut()[idx] += h;
            let mut minus = input.clone();
            minus.data_mut()[idx] -= h;
            let fd = (loss(layer, &plus) - loss(layer, &minus)) / (2.0 * h as f64);
            let an = grads.input.data()[idx] as f64;
            assert!(rel(fd, an) < 1e-3, "input[{idx}]: fd={fd} analytic={an}");
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let stream = RngStream::new(21);
        let w = rng_uniform(&stream.child(0), &[2, 2, 3, 3]).map(|v| (v - 0.5) * 0.2);
        let bias = rng_uniform(&stream.child(1), &[2]).map(|v| (v - 0.5) * 0.2);
        let layer =
            LayerParams::conv2d("conv", &[2, 4, 4], 3, 2, w, Some(bias), true).unwrap();
        let input = rng_uniform(&stream.child(2), &[2, 2, 4, 4]).map(|v| v * 0.1);
        fd_check(&layer, &input, 21);
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let stream = RngStream::new(22);
        let w = rng_uniform(&stream.child(0), &[3, 5]).map(|v| (v - 0.5) * 0.2);
        let bias = rng_uniform(&stream.child(1), &[3]).map(|v| (v - 0.5) * 0.2);
        let layer = LayerParams::linear("fc", 5, 3, w, Some(bias), true).unwrap();
        let input = rng_uniform(&stream.child(2), &[4, 5]).map(|v| v * 0.1);
        fd_check(&layer, &input, 22);
    }

    #[test]
    fn avgpool_backward_matches_finite_differences() {
        let layer = LayerParams::avgpool("pool", &[1, 4, 4]).unwrap();
        let input = rng_uniform(&RngStream::new(23).child(0), &[2, 1, 4, 4]).map(|v| v * 0.1);
        fd_check(&layer, &input, 23);
    }
}
