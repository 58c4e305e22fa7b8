//! Declarative model construction for spiking and conventional networks,
//! parameter flattening for federation, and the local SGD optimizer.

use crate::ann;
use crate::error::{Error, Result};
use crate::layers::{LayerKind, LayerParams};
use crate::rng::{rng_uniform, RngStream};
use crate::snn;
use crate::spiking::{BnttState, SnnConfig, DEFAULT_THRESHOLD};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Snn,
    Ann,
}

/// Declarative layer descriptor. Shapes must chain: the output of each layer
/// feeds the next, and the final layer must be linear onto the classes.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerDesc {
    Conv2d {
        kernel: usize,
        in_ch: usize,
        out_ch: usize,
    },
    AvgPool,
    Linear {
        inputs: usize,
        outputs: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub layers: Vec<LayerDesc>,
    /// Per-sample input shape `[C, H, W]`.
    pub input_shape: Vec<usize>,
    pub class_count: usize,
}

impl ModelSpec {
    /// Walks the layer chain, returning each layer's per-sample input shape.
    /// Fails on the first pair of layers whose shapes do not chain.
    pub fn chained_input_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.len() != 3 {
            return Err(Error::InvalidConfig(format!(
                "input shape must be [C,H,W], got {:?}",
                self.input_shape
            )));
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut current = self.input_shape.clone();
        for (idx, desc) in self.layers.iter().enumerate() {
            let pair = |msg: String| {
                Error::InvalidConfig(format!(
                    "layers {} -> {} do not chain: {msg}",
                    idx.saturating_sub(1),
                    idx
                ))
            };
            match desc {
                LayerDesc::Conv2d { kernel, in_ch, out_ch } => {
                    if current.len() != 3 || current[0] != *in_ch {
                        return Err(pair(format!(
                            "conv2d expects {in_ch} input channels, upstream shape is {current:?}"
                        )));
                    }
                    if *kernel % 2 == 0 || *kernel == 0 {
                        return Err(Error::InvalidConfig(format!(
                            "layer {idx}: conv kernel must be odd, got {kernel}"
                        )));
                    }
                    shapes.push(current.clone());
                    current = vec![*out_ch, current[1], current[2]];
                }
                LayerDesc::AvgPool => {
                    if current.len() != 3 || current[1] % 2 != 0 || current[2] % 2 != 0 {
                        return Err(pair(format!(
                            "avgpool expects even [C,H,W] input, upstream shape is {current:?}"
                        )));
                    }
                    shapes.push(current.clone());
                    current = vec![current[0], current[1] / 2, current[2] / 2];
                }
                LayerDesc::Linear { inputs, outputs } => {
                    let flat: usize = current.iter().product();
                    if flat != *inputs {
                        return Err(pair(format!(
                            "linear expects {inputs} inputs, upstream shape {current:?} flattens to {flat}"
                        )));
                    }
                    shapes.push(vec![*inputs]);
                    current = vec![*outputs];
                }
            }
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.chained_input_shapes()?;
        match self.layers.last() {
            Some(LayerDesc::Linear { outputs, .. }) if *outputs == self.class_count => Ok(()),
            Some(last) => Err(Error::InvalidConfig(format!(
                "last layer must be linear onto {} classes, got {:?}",
                self.class_count, last
            ))),
            None => Err(Error::InvalidConfig("model has no layers".into())),
        }
    }

    /// Number of hidden spiking layers (conv/linear before the final layer).
    pub fn spiking_layer_count(&self) -> usize {
        self.layers
            .iter()
            .take(self.layers.len().saturating_sub(1))
            .filter(|d| !matches!(d, LayerDesc::AvgPool))
            .count()
    }
}

/// Identifies one parameter tensor inside a model, in canonical layout order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamId {
    Weight(usize),
    Bias(usize),
    Gamma(usize),
}

/// Ordered manifest of the flattened parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    pub entries: Vec<(String, Vec<usize>)>,
}

impl ParamLayout {
    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

/// Flat parameter (or parameter-delta) vector plus its layout manifest.
///
/// Values are held as `f64` so that the difference of two `f32` models is
/// exact and `apply_delta(m, flatten(m') - flatten(m))` reproduces `m'`
/// bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros_like(&self) -> ParamVector {
        ParamVector {
            layout: self.layout.clone(),
            values: vec![0.0; self.values.len()],
        }
    }

    fn check_layout(&self, other: &ParamVector, context: &str) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::LayoutMismatch(format!(
                "{context}: vectors describe different models"
            )));
        }
        Ok(())
    }

    /// Elementwise difference `self - other` (exact in f64 for f32 params).
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_layout(other, "ParamVector::sub")?;
        Ok(ParamVector {
            layout: self.layout.clone(),
            values: self
                .values
                .iter()
                .zip(other.values.iter())
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_layout(other, "ParamVector::add")?;
        Ok(ParamVector {
            layout: self.layout.clone(),
            values: self
                .values
                .iter()
                .zip(other.values.iter())
                .map(|(a, b)| a + b)
                .collect(),
        })
    }
}

/// An instantiated model: kernels plus, for the spiking kind, normalization
/// state and firing thresholds. Cloning yields an independent replica.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub snn_config: Option<SnnConfig>,
    pub layers: Vec<LayerParams>,
    /// Parallel to `layers`; `Some` for hidden conv/linear layers of SNNs.
    pub bntt: Vec<Option<BnttState>>,
    /// Parallel to `layers`; firing threshold of hidden spiking layers.
    pub thresholds: Vec<Option<f32>>,
    pub(crate) snn_trace: Option<snn::SnnTrace>,
    pub(crate) ann_trace: Option<ann::AnnTrace>,
}

/// Builds a model with fan-in-scaled uniform weights (`|w| < sqrt(6/fan_in)`),
/// zero biases, and fresh normalization state. Deterministic per stream.
pub fn build_model(
    spec: &ModelSpec,
    snn_config: Option<SnnConfig>,
    stream: &RngStream,
) -> Result<Model> {
    spec.validate()?;
    let input_shapes = spec.chained_input_shapes()?;
    let last = spec.layers.len() - 1;

    let snn_config = match (spec.kind, snn_config) {
        (ModelKind::Snn, Some(mut cfg)) => {
            let hidden = spec.spiking_layer_count();
            if cfg.thresholds.is_empty() {
                cfg.thresholds = vec![DEFAULT_THRESHOLD; hidden];
            } else if cfg.thresholds.len() != hidden {
                return Err(Error::InvalidConfig(format!(
                    "model has {hidden} hidden spiking layers but {} thresholds were given",
                    cfg.thresholds.len()
                )));
            }
            cfg.validate()?;
            Some(cfg)
        }
        (ModelKind::Snn, None) => {
            let mut cfg = SnnConfig::default();
            cfg.thresholds = vec![DEFAULT_THRESHOLD; spec.spiking_layer_count()];
            cfg.validate()?;
            Some(cfg)
        }
        (ModelKind::Ann, None) => None,
        (ModelKind::Ann, Some(_)) => {
            return Err(Error::InvalidConfig(
                "spiking parameters given for an ANN model".into(),
            ))
        }
    };
    let bias_active = spec.kind == ModelKind::Ann;

    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut bntt = Vec::with_capacity(spec.layers.len());
    let mut thresholds = Vec::with_capacity(spec.layers.len());
    let mut spiking_idx = 0usize;

    for (idx, desc) in spec.layers.iter().enumerate() {
        let in_shape = &input_shapes[idx];
        let layer_stream = stream.child(idx as u64);
        match desc {
            LayerDesc::Conv2d { kernel, in_ch, out_ch } => {
                let fan_in = in_ch * kernel * kernel;
                let weight = he_uniform(&layer_stream, &[*out_ch, *in_ch, *kernel, *kernel], fan_in);
                let bias = Some(Tensor::zeros(&[*out_ch]));
                let layer = LayerParams::conv2d(
                    format!("conv{idx}"),
                    in_shape,
                    *kernel,
                    *out_ch,
                    weight,
                    bias,
                    bias_active,
                )?;
                layers.push(layer);
                if let Some(cfg) = &snn_config {
                    // every hidden conv/linear layer is normalized; the last
                    // layer is a plain accumulator
                    bntt.push(Some(BnttState::new(cfg.timesteps, *out_ch)));
                    thresholds.push(Some(cfg.thresholds[spiking_idx]));
                    spiking_idx += 1;
                } else {
                    bntt.push(None);
                    thresholds.push(None);
                }
            }
            LayerDesc::AvgPool => {
                layers.push(LayerParams::avgpool(format!("pool{idx}"), in_shape)?);
                bntt.push(None);
                thresholds.push(None);
            }
            LayerDesc::Linear { inputs, outputs } => {
                let weight = he_uniform(&layer_stream, &[*outputs, *inputs], *inputs);
                let bias = Some(Tensor::zeros(&[*outputs]));
                let layer = LayerParams::linear(
                    format!("fc{idx}"),
                    *inputs,
                    *outputs,
                    weight,
                    bias,
                    bias_active,
                )?;
                layers.push(layer);
                if idx != last {
                    if let Some(cfg) = &snn_config {
                        bntt.push(Some(BnttState::new(cfg.timesteps, *outputs)));
                        thresholds.push(Some(cfg.thresholds[spiking_idx]));
                        spiking_idx += 1;
                    } else {
                        bntt.push(None);
                        thresholds.push(None);
                    }
                } else {
                    bntt.push(None);
                    thresholds.push(None);
                }
            }
        }
    }

    Ok(Model {
        spec: spec.clone(),
        snn_config,
        layers,
        bntt,
        thresholds,
        snn_trace: None,
        ann_trace: None,
    })
}

fn he_uniform(stream: &RngStream, shape: &[usize], fan_in: usize) -> Tensor {
    let limit = (6.0 / fan_in as f32).sqrt();
    rng_uniform(stream, shape).map(|u| (2.0 * u - 1.0) * limit)
}

impl Model {
    /// Canonical parameter order: weight and bias of every conv/linear layer,
    /// then the normalization scales. Every flattened view follows this order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            if !matches!(layer.kind, LayerKind::AvgPool) {
                ids.push(ParamId::Weight(idx));
                ids.push(ParamId::Bias(idx));
            }
        }
        for (idx, b) in self.bntt.iter().enumerate() {
            if b.is_some() {
                ids.push(ParamId::Gamma(idx));
            }
        }
        ids
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        match id {
            ParamId::Weight(i) => self.layers[i].weight.as_ref().expect("weight present"),
            ParamId::Bias(i) => self.layers[i].bias.as_ref().expect("bias present"),
            ParamId::Gamma(i) => &self.bntt[i].as_ref().expect("bntt present").gamma,
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor {
        match id {
            ParamId::Weight(i) => self.layers[i].weight.as_mut().expect("weight present"),
            ParamId::Bias(i) => self.layers[i].bias.as_mut().expect("bias present"),
            ParamId::Gamma(i) => &mut self.bntt[i].as_mut().expect("bntt present").gamma,
        }
    }

    pub fn param_name(&self, id: ParamId) -> String {
        match id {
            ParamId::Weight(i) => format!("{}.weight", self.layers[i].name),
            ParamId::Bias(i) => format!("{}.bias", self.layers[i].name),
            ParamId::Gamma(i) => format!("{}.gamma", self.layers[i].name),
        }
    }

    pub fn param_layout(&self) -> ParamLayout {
        ParamLayout {
            entries: self
                .param_ids()
                .iter()
                .map(|&id| (self.param_name(id), self.param(id).shape().to_vec()))
                .collect(),
        }
    }

    /// Index of the final (accumulator/logit) layer.
    pub fn last_layer(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    /// Zeroed gradient buffers in canonical parameter order.
    pub fn zero_gradients(&self) -> GradientSet {
        GradientSet {
            grads: self
                .param_ids()
                .iter()
                .map(|&id| Tensor::zeros(self.param(id).shape()))
                .collect(),
        }
    }
}

/// Copies every learned parameter into a flat f64 vector. Normalization
/// scales are included; running statistics are data-dependent buffers and are
/// deliberately left out.
pub fn flatten(model: &Model) -> ParamVector {
    let layout = model.param_layout();
    let mut values = Vec::with_capacity(layout.total_len());
    for id in model.param_ids() {
        values.extend(model.param(id).data().iter().map(|&v| v as f64));
    }
    ParamVector { layout, values }
}

/// Adds `delta` onto the model parameters in place.
pub fn apply_delta(model: &mut Model, delta: &ParamVector) -> Result<()> {
    let layout = model.param_layout();
    if layout != delta.layout {
        return Err(Error::LayoutMismatch(
            "apply_delta: delta does not match the model layout".into(),
        ));
    }
    let mut offset = 0;
    for id in model.param_ids() {
        let tensor = model.param_mut(id);
        let n = tensor.len();
        for (p, d) in tensor.data_mut().iter_mut().zip(&delta.values[offset..offset + n]) {
            *p = (*p as f64 + d) as f32;
        }
        offset += n;
    }
    Ok(())
}

/// Overwrites the model parameters with the given vector.
pub fn load_params(model: &mut Model, params: &ParamVector) -> Result<()> {
    let layout = model.param_layout();
    if layout != params.layout {
        return Err(Error::LayoutMismatch(
            "load_params: vector does not match the model layout".into(),
        ));
    }
    let mut offset = 0;
    for id in model.param_ids() {
        let tensor = model.param_mut(id);
        let n = tensor.len();
        for (p, v) in tensor.data_mut().iter_mut().zip(&params.values[offset..offset + n]) {
            *p = *v as f32;
        }
        offset += n;
    }
    Ok(())
}

/// Gradients for every parameter, in canonical layout order.
#[derive(Clone, Debug)]
pub struct GradientSet {
    pub grads: Vec<Tensor>,
}

impl GradientSet {
    pub fn accumulate(&mut self, idx: usize, delta: &Tensor) {
        let dst = &mut self.grads[idx];
        debug_assert_eq!(dst.shape(), delta.shape());
        for (a, b) in dst.data_mut().iter_mut().zip(delta.data()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f32) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct SgdConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    /// `(round, divisor)` pairs; once a round is reached the learning rate is
    /// divided by the divisor (cumulatively across entries).
    pub lr_schedule: Vec<(usize, f32)>,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0,1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "weight decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if self.lr_schedule.iter().any(|&(_, d)| d <= 0.0) {
            return Err(Error::InvalidConfig("schedule divisors must be positive".into()));
        }
        Ok(())
    }

    pub fn lr_at_round(&self, round: usize) -> f32 {
        let mut lr = self.learning_rate;
        for &(at, divisor) in &self.lr_schedule {
            if round >= at {
                lr /= divisor;
            }
        }
        lr
    }
}

/// Momentum buffers, aligned with the canonical parameter order.
#[derive(Clone, Debug)]
pub struct SgdState {
    pub velocity: Vec<Tensor>,
}

impl SgdState {
    pub fn new(model: &Model) -> Self {
        SgdState {
            velocity: model
                .param_ids()
                .iter()
                .map(|&id| Tensor::zeros(model.param(id).shape()))
                .collect(),
        }
    }
}

/// One mini-batch of samples.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, C, H, W]` images with values in `[0, 1]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One step of momentum SGD with weight decay on a mini-batch. The spiking
/// path Poisson-encodes the batch from `stream`; the conventional path
/// ignores it. Returns the pre-update mean batch loss.
pub fn train_step(
    model: &mut Model,
    batch: &Batch,
    opt: &SgdConfig,
    opt_state: &mut SgdState,
    effective_lr: f32,
    stream: &RngStream,
) -> Result<f32> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let (grads, loss) = match model.kind() {
        ModelKind::Snn => {
            let cfg = model.snn_config.clone().expect("snn model has a config");
            let spikes = snn::encode_batch(&batch.images, cfg.timesteps, stream)?;
            snn::snn_forward(model, &spikes, crate::spiking::Mode::Training)?;
            snn::snn_backward(model, &batch.labels)?
        }
        ModelKind::Ann => {
            ann::ann_forward(model, &batch.images, crate::spiking::Mode::Training)?;
            ann::ann_backward(model, &batch.labels)?
        }
    };

    for (slot, (id, grad)) in model
        .param_ids()
        .into_iter()
        .zip(grads.grads.iter())
        .enumerate()
    {
        let velocity = opt_state.velocity[slot].data_mut();
        let params = model.param_mut(id);
        for ((p, v), g) in params.data_mut().iter_mut().zip(velocity).zip(grad.data()) {
            let step = g + opt.weight_decay * *p;
            *v = opt.momentum * *v + step;
            *p -= effective_lr * *v;
        }
    }
    Ok(loss)
}
