//! Foreground probability of a region: a fully connected network with a
//! softmax head, its SGD trainer, and a centroid-distance fallback scorer.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::{read_file, write_file, ByteReader};
use crate::model::Label;

pub const MODEL_MAGIC: &[u8; 4] = b"STNN";
pub const MODEL_VERSION: u16 = 1;

/// Hidden widths of the full-size network.
pub const FDNN_HIDDEN: [usize; 6] = [2048, 2048, 2048, 1024, 1024, 1024];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::None),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Fully connected layer; `weights` is `output × input`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub input: usize,
    pub output: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.input).zip(&self.bias).map(|(row, b)| {
            let z = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            match self.activation {
                Activation::Relu => z.max(0.0),
                Activation::None => z,
            }
        }));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    layers: Vec<DenseLayer>,
}

impl MlpModel {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        let last = layers
            .last()
            .ok_or_else(|| Error::InvalidArgument("model has no layers".into()))?;
        if last.output != 2 || last.activation != Activation::None {
            return Err(Error::InvalidArgument(
                "final layer must have 2 outputs and no activation".into(),
            ));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.input == 0 || l.weights.len() != l.input * l.output || l.bias.len() != l.output {
                return Err(Error::InvalidArgument(format!("layer {i} has inconsistent shapes")));
            }
            if i > 0 && layers[i - 1].output != l.input {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} expects {} inputs but layer {} yields {}",
                    l.input,
                    i - 1,
                    layers[i - 1].output
                )));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(MlpModel { layers })
    }

    /// Network with the given layer widths (`dims[0]` is the input, the final
    /// width must be 2). Weights are drawn from `N(0, 2/fan_in)`, biases are 0.
    pub fn random(dims: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(dims, |fan_in, n| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            (0..n).map(|_| normal.sample(&mut rng)).collect()
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::build(dims, |_, n| vec![0.0; n])
    }

    /// Full-width network for `input_dim`-channel features.
    pub fn fdnn(input_dim: usize, seed: u64) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend(FDNN_HIDDEN);
        dims.push(2);
        Self::random(&dims, seed)
    }

    fn build(dims: &[usize], mut init: impl FnMut(usize, usize) -> Vec<f64>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("need at least input and output widths".into()));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| DenseLayer {
                input: dims[i],
                output: dims[i + 1],
                weights: init(dims[i], dims[i] * dims[i + 1]),
                bias: vec![0.0; dims[i + 1]],
                activation: if i + 1 == n { Activation::None } else { Activation::Relu },
            })
            .collect();
        MlpModel::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// `(p_fg, p_bg)` with dropout inactive.
    pub fn forward(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for l in &self.layers {
            l.apply(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(softmax2(cur[0], cur[1]))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "feature has {} channels, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

fn softmax2(a: f64, b: f64) -> (f64, f64) {
    let m = a.max(b);
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    (ea / (ea + eb), eb / (ea + eb))
}

/// One labeled training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub foreground: bool,
}

/// Parameter gradients, shaped like the model's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }
}

/// Per-layer multiplicative dropout masks for one example (already scaled by
/// `1/(1-rate)`), `None` for layers without dropout.
type Masks = Vec<Option<Vec<f64>>>;

/// Layers followed by dropout during training: every ReLU layer except the
/// last hidden one.
fn dropout_layers(model: &MlpModel) -> Vec<bool> {
    let n = model.layers.len();
    (0..n)
        .map(|i| model.layers[i].activation == Activation::Relu && i + 2 < n)
        .collect()
}

fn accumulate_example(
    model: &MlpModel,
    x: &[f64],
    foreground: bool,
    masks: Option<&Masks>,
    grads: &mut Gradients,
) -> f64 {
    let n = model.layers.len();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    acts.push(x.to_vec());
    for (i, l) in model.layers.iter().enumerate() {
        let mut out = Vec::new();
        l.apply(&acts[i], &mut out);
        if let Some(Some(m)) = masks.map(|m| &m[i]) {
            out.iter_mut().zip(m).for_each(|(o, k)| *o *= k);
        }
        acts.push(out);
    }
    let logits = &acts[n];
    let (p_fg, p_bg) = softmax2(logits[0], logits[1]);
    let target = if foreground { 0 } else { 1 };
    let p = [p_fg, p_bg];
    let loss = -p[target].max(f64::MIN_POSITIVE).ln();

    let mut delta: Vec<f64> = (0..2).map(|k| p[k] - if k == target { 1.0 } else { 0.0 }).collect();
    for i in (0..n).rev() {
        let l = &model.layers[i];
        if i + 1 < n {
            // `delta` is with respect to this layer's (masked) output; move it
            // through the mask and the ReLU to the pre-activation.
            if let Some(Some(m)) = masks.map(|m| &m[i]) {
                delta.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
            }
            if l.activation == Activation::Relu {
                delta.iter_mut().zip(&acts[i + 1]).for_each(|(d, &a)| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
        }
        let input = &acts[i];
        let gw = &mut grads.weights[i];
        for (o, &d) in delta.iter().enumerate() {
            if d != 0.0 {
                let row = &mut gw[o * l.input..(o + 1) * l.input];
                row.iter_mut().zip(input).for_each(|(g, v)| *g += d * v);
            }
            grads.bias[i][o] += d;
        }
        if i > 0 {
            let mut prev = vec![0.0; l.input];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    let row = &l.weights[o * l.input..(o + 1) * l.input];
                    prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
                }
            }
            delta = prev;
        }
    }
    loss
}

/// Mean cross-entropy of `batch` and its gradient, without dropout or
/// weight decay.
pub fn loss_and_gradients(model: &MlpModel, batch: &[Example]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut grads = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for ex in batch {
        model.check_input(&ex.features)?;
        loss += accumulate_example(model, &ex.features, ex.foreground, None, &mut grads);
    }
    let scale = 1.0 / batch.len() as f64;
    grads.weights.iter_mut().chain(grads.bias.iter_mut()).flatten().for_each(|g| *g *= scale);
    Ok((loss * scale, grads))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    /// The learning rate is divided by 10 every this many iterations.
    pub lr_drop_every: usize,
    pub dropout_rate: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 300_000,
            batch_size: 500,
            momentum: 0.9,
            weight_decay: 0.005,
            base_lr: 0.001,
            lr_drop_every: 50_000,
            dropout_rate: 0.5,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    /// Short schedule for small local datasets.
    pub fn desk() -> Self {
        TrainConfig {
            iterations: 5_000,
            batch_size: 64,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.iterations > 0 && self.batch_size > 0 && self.lr_drop_every > 0;
        let finite = [self.momentum, self.weight_decay, self.base_lr]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        if !positive || !finite || self.base_lr <= 0.0 {
            return Err(Error::InvalidArgument(format!("invalid training schedule {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn learning_rate(&self, iteration: usize) -> f64 {
        self.base_lr * 0.1f64.powi((iteration / self.lr_drop_every) as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean training cross-entropy of each iteration's batch.
    pub losses: Vec<f64>,
}

/// Momentum SGD on mean cross-entropy with L2 decay on weights. Examples are
/// visited in reshuffled epochs; results depend only on the inputs and seed.
pub fn train(initial: MlpModel, dataset: &[Example], config: &TrainConfig) -> Result<(MlpModel, TrainReport)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    for ex in dataset {
        initial.check_input(&ex.features)?;
    }
    let mut model = initial;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;
    let mut velocity = Gradients::zeros_like(&model);
    let drop = dropout_layers(&model);
    let keep = 1.0 - config.dropout_rate;
    let mut losses = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let mut grads = Gradients::zeros_like(&model);
        let mut loss = 0.0;
        for _ in 0..config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let ex = &dataset[order[cursor]];
            cursor += 1;
            let masks: Option<Masks> = (config.dropout_rate > 0.0).then(|| {
                model
                    .layers
                    .iter()
                    .zip(&drop)
                    .map(|(l, &d)| {
                        d.then(|| {
                            (0..l.output)
                                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                                .collect()
                        })
                    })
                    .collect()
            });
            loss += accumulate_example(&model, &ex.features, ex.foreground, masks.as_ref(), &mut grads);
        }
        let scale = 1.0 / config.batch_size as f64;
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::InvalidArgument(format!("training diverged at iteration {it}")));
        }
        losses.push(loss);

        let lr = config.learning_rate(it);
        for (i, layer) in model.layers.iter_mut().enumerate() {
            for ((w, g), v) in layer.weights.iter_mut().zip(&grads.weights[i]).zip(&mut velocity.weights[i]) {
                *v = config.momentum * *v - lr * (g * scale + config.weight_decay * *w);
                *w += *v;
            }
            for ((b, g), v) in layer.bias.iter_mut().zip(&grads.bias[i]).zip(&mut velocity.bias[i]) {
                *v = config.momentum * *v - lr * g * scale;
                *b += *v;
            }
        }
    }
    Ok((model, TrainReport { losses }))
}

/// Fraction of examples whose most probable class matches the label.
pub fn accuracy(model: &MlpModel, dataset: &[Example]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut hits = 0usize;
    for ex in dataset {
        let (p_fg, p_bg) = model.forward(&ex.features)?;
        if (p_fg > p_bg) == ex.foreground {
            hits += 1;
        }
    }
    Ok(hits as f64 / dataset.len() as f64)
}

pub fn encode_model(model: &MlpModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + model.parameter_count() * 4);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for l in &model.layers {
        out.extend_from_slice(&(l.input as u32).to_le_bytes());
        out.extend_from_slice(&(l.output as u32).to_le_bytes());
        out.push(l.activation.code());
        for v in l.weights.iter().chain(&l.bias) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_model(bytes: &[u8], what: &str) -> Result<MlpModel> {
    let mut r = ByteReader::new(bytes, what);
    if r.take(4)? != MODEL_MAGIC {
        return Err(Error::Malformed(format!("{what}: not a model file (bad magic)")));
    }
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(Error::Malformed(format!("{what}: unsupported model version {version}")));
    }
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(64));
    for i in 0..count {
        let input = r.u32()? as usize;
        let output = r.u32()? as usize;
        let code = r.u8()?;
        let activation = Activation::from_code(code)
            .ok_or_else(|| Error::Malformed(format!("{what}: layer {i} has unknown activation {code}")))?;
        let n = input
            .checked_mul(output)
            .filter(|n| n.saturating_add(output).saturating_mul(4) <= bytes.len())
            .ok_or_else(|| Error::Malformed(format!("{what}: layer {i} shape {input}x{output} exceeds file size")))?;
        let weights = (0..n).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
        let bias = (0..output).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
        layers.push(DenseLayer {
            input,
            output,
            weights,
            bias,
            activation,
        });
    }
    r.finish()?;
    MlpModel::new(layers).map_err(|e| Error::Malformed(format!("{what}: {e}")))
}

pub fn save_model(path: &Path, model: &MlpModel) -> Result<()> {
    write_file(path, &encode_model(model))
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    decode_model(&read_file(path)?, &path.display().to_string())
}

/// `d_bg / (d_fg + d_bg)` with Euclidean distances; 0.5 when both are 0.
pub fn fallback_omega(feature: &[f64], fg_centroid: &[f64], bg_centroid: &[f64]) -> Result<f64> {
    if feature.len() != fg_centroid.len() || feature.len() != bg_centroid.len() {
        return Err(Error::InvalidArgument(format!(
            "feature dim {} does not match centroid dims {} / {}",
            feature.len(),
            fg_centroid.len(),
            bg_centroid.len()
        )));
    }
    let d_fg = crate::model::squared_distance(feature, fg_centroid).sqrt();
    let d_bg = crate::model::squared_distance(feature, bg_centroid).sqrt();
    if d_fg + d_bg == 0.0 {
        return Ok(0.5);
    }
    Ok(d_bg / (d_fg + d_bg))
}

/// Cost of assigning `label` to a region with foreground probability `omega`.
pub fn unary_potential(omega: f64, label: Label, theta_u: f64) -> f64 {
    match label {
        Label::Foreground => theta_u * (1.0 - omega),
        Label::Background => theta_u * omega,
    }
}
