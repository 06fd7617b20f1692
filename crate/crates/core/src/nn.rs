//! Minimal dense numerics: seeded MLP parameters, forward evaluation,
//! softmax cross-entropy, exact reverse-mode gradients for the
//! affine/ReLU chain (including gradients w.r.t. the input matrix), and
//! SGD/Adam updates.
//!
//! Parameters and activations are stored in 32-bit; every reduction runs
//! in 64-bit. Identical seeds and inputs give bit-identical results.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::linalg::{self, Matrix};
use crate::rng::{derive_seed, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

/// Where the activation applies: encoders activate every layer, classifier
/// heads leave the output layer linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationScope {
    AllLayers,
    HiddenOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in` weights.
    pub weights: Matrix,
    pub bias: Vec<f32>,
}

/// Dense layered parameters of an MLP (classifier or random encoder).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<Layer>,
    activation: Activation,
    scope: ActivationScope,
    seed: u64,
}

impl ModelParams {
    /// Initializes weights uniformly in `±1/sqrt(fan_in)` from a SplitMix64
    /// stream split per layer; biases start at zero.
    pub fn init(
        dims: &[usize],
        activation: Activation,
        scope: ActivationScope,
        seed: u64,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("need at least one layer (two dims)".into()));
        }
        if dims.contains(&0) {
            return Err(Error::Config("zero layer dimension".into()));
        }
        let mut master = SplitMix64::new(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut rng = master.split();
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data: Vec<f32> =
                (0..fan_in * fan_out).map(|_| rng.next_symmetric(bound) as f32).collect();
            layers.push(Layer {
                weights: Matrix::from_vec(fan_out, fan_in, data)?,
                bias: vec![0.0; fan_out],
            });
        }
        Ok(Self { layers, activation, scope, seed })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable layer access for tests and hand-built models; dimension
    /// chaining is the caller's responsibility.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn scope(&self) -> ActivationScope {
        self.scope
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.rows()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.weights.rows()));
        dims
    }

    fn activate_at(&self, layer: usize) -> bool {
        match (self.activation, self.scope) {
            (Activation::None, _) => false,
            (Activation::Relu, ActivationScope::AllLayers) => true,
            (Activation::Relu, ActivationScope::HiddenOnly) => layer + 1 < self.layers.len(),
        }
    }

    /// Widens the output layer to `new_out` rows, keeping existing rows and
    /// drawing fresh rows from the init law under a derived seed.
    pub fn grow_head(&self, new_out: usize, seed: u64) -> Result<ModelParams> {
        let old = self.layers.last().unwrap();
        let old_out = old.weights.rows();
        if new_out < old_out {
            return Err(Error::Config("head cannot shrink".into()));
        }
        if new_out == old_out {
            return Ok(self.clone());
        }
        let fan_in = old.weights.cols();
        let mut rng = SplitMix64::new(derive_seed(seed, 0x6ead));
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut data = old.weights.as_slice().to_vec();
        data.extend((0..(new_out - old_out) * fan_in).map(|_| rng.next_symmetric(bound) as f32));
        let mut bias = old.bias.clone();
        bias.resize(new_out, 0.0);
        let mut layers = self.layers.clone();
        *layers.last_mut().unwrap() =
            Layer { weights: Matrix::from_vec(new_out, fan_in, data)?, bias };
        Ok(ModelParams { layers, ..self.clone() })
    }

    pub fn save(&self, path: &Path, optimizer: Option<&Optimizer>) -> Result<()> {
        io::write_json(path, &CheckpointFile::from_params(self, optimizer))
    }

    pub fn load(path: &Path) -> Result<(ModelParams, Option<OptimizerConfig>)> {
        io::read_json::<CheckpointFile>(path)?.into_params()
    }
}

/// Forward evaluation keeping pre-activations for the backward pass.
pub struct ForwardTrace {
    /// Pre-activation of each layer.
    pre: Vec<Matrix>,
    /// Post-activation of each layer (last one is the network output).
    post: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.post.last().unwrap()
    }

    /// Pre-activation matrix of one layer.
    pub fn pre_activation(&self, layer: usize) -> &Matrix {
        &self.pre[layer]
    }
}

/// Runs the network on `x` (rows are samples).
pub fn forward(p: &ModelParams, x: &Matrix) -> Result<Matrix> {
    let mut trace = forward_traced(p, x)?;
    Ok(trace.post.pop().unwrap())
}

/// Forward pass that records intermediates for [`backward`].
pub fn forward_traced(p: &ModelParams, x: &Matrix) -> Result<ForwardTrace> {
    if x.cols() != p.input_dim() {
        return Err(Error::Dimension(format!(
            "forward: input width {} vs model fan-in {}",
            x.cols(),
            p.input_dim()
        )));
    }
    let mut pre = Vec::with_capacity(p.layers.len());
    let mut post = Vec::with_capacity(p.layers.len());
    let mut current = x;
    for (l, layer) in p.layers.iter().enumerate() {
        let z = linalg::affine_xt(current, &layer.weights, &layer.bias)?;
        let a = if p.activate_at(l) {
            let mut a = z.clone();
            for v in a.as_mut_slice() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            a
        } else {
            z.clone()
        };
        pre.push(z);
        post.push(a);
        current = post.last().unwrap();
    }
    Ok(ForwardTrace { pre, post })
}

/// Parameter gradients plus, when requested, the gradient w.r.t. the input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub dx: Option<Matrix>,
}

#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub dw: Matrix,
    pub db: Vec<f32>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|g| g.dw.is_finite() && g.db.iter().all(|v| v.is_finite()))
            && self.dx.as_ref().is_none_or(Matrix::is_finite)
    }
}

/// Exact reverse-mode gradients for the affine+activation chain.
///
/// `upstream` is the loss gradient w.r.t. the network output from the
/// matching `forward_traced` call on `x`.
pub fn backward(
    p: &ModelParams,
    x: &Matrix,
    trace: &ForwardTrace,
    upstream: &Matrix,
    want_dx: bool,
) -> Result<Gradients> {
    let n_layers = p.layers.len();
    if trace.pre.len() != n_layers {
        return Err(Error::Dimension("trace does not match parameters".into()));
    }
    let out = trace.output();
    if upstream.rows() != out.rows() || upstream.cols() != out.cols() {
        return Err(Error::Dimension("upstream shape differs from output".into()));
    }
    let mut grads: Vec<LayerGrad> = Vec::with_capacity(n_layers);
    let mut d_post = upstream.clone();
    let mut dx = None;
    for l in (0..n_layers).rev() {
        let mut dz = d_post;
        if p.activate_at(l) {
            let z = &trace.pre[l];
            for (slot, zv) in dz.as_mut_slice().iter_mut().zip(z.as_slice()) {
                if *zv <= 0.0 {
                    *slot = 0.0;
                }
            }
        }
        let input = if l == 0 { x } else { &trace.post[l - 1] };
        grads.push(LayerGrad {
            dw: linalg::grad_weights(&dz, input),
            db: linalg::grad_bias(&dz),
        });
        if l > 0 {
            d_post = linalg::grad_input(&dz, &p.layers[l].weights);
        } else if want_dx {
            dx = Some(linalg::grad_input(&dz, &p.layers[0].weights));
            d_post = Matrix::zeros(0, 0);
        } else {
            d_post = Matrix::zeros(0, 0);
        }
    }
    grads.reverse();
    Ok(Gradients { layers: grads, dx })
}

/// Mean softmax cross-entropy over rows with the standard row-max shift.
///
/// Returns the loss and `d loss / d logits = (softmax - onehot) / rows`.
pub fn softmax_xent(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let n = logits.rows();
    if n == 0 {
        return Err(Error::Validation("empty batch".into()));
    }
    if labels.len() != n {
        return Err(Error::Dimension("one label per logit row required".into()));
    }
    let classes = logits.cols();
    let mut dlogits = Matrix::zeros(n, classes);
    let mut loss = 0.0f64;
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Validation(format!("label {y} out of {classes} classes")));
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, |a, v| a.max(v as f64));
        let mut denom = 0.0f64;
        for &v in row {
            denom += (v as f64 - max).exp();
        }
        let log_denom = denom.ln();
        loss += -(row[y] as f64 - max - log_denom);
        let d = dlogits.row_mut(i);
        for (c, &v) in row.iter().enumerate() {
            let p = ((v as f64 - max) - log_denom).exp();
            d[c] = ((p - if c == y { 1.0 } else { 0.0 }) / n as f64) as f32;
        }
    }
    Ok((loss / n as f64, dlogits))
}

/// Row-wise softmax probabilities (64-bit internally, 32-bit out).
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, |a, v| a.max(v as f64));
        let mut denom = 0.0f64;
        for &v in row {
            denom += (v as f64 - max).exp();
        }
        let dst = out.row_mut(i);
        for (c, &v) in row.iter().enumerate() {
            dst[c] = ((v as f64 - max).exp() / denom) as f32;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptKind,
    pub learning_rate: f64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct MomentSlot {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// SGD or bias-corrected Adam over a fixed set of tensors. Moment slots are
/// allocated on first use and keyed by call order, so a given optimizer must
/// always be fed the same tensor list.
pub struct Optimizer {
    kind: OptKind,
    learning_rate: f64,
    step: u64,
    slots: Vec<MomentSlot>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self { kind: config.kind, learning_rate: config.learning_rate, step: 0, slots: Vec::new() }
    }

    pub fn kind(&self) -> OptKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over parallel lists of tensors and gradients.
    pub fn step_tensors(&mut self, tensors: &mut [&mut [f32]], grads: &[&[f32]]) -> Result<()> {
        if tensors.len() != grads.len() {
            return Err(Error::Dimension("tensor/gradient list mismatch".into()));
        }
        for (i, (t, g)) in tensors.iter().zip(grads).enumerate() {
            if t.len() != g.len() {
                return Err(Error::Dimension(format!("tensor {i} shape differs from gradient")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient for tensor {i} at step {}",
                    self.step + 1
                )));
            }
        }
        self.step += 1;
        match self.kind {
            OptKind::Sgd => {
                for (t, g) in tensors.iter_mut().zip(grads) {
                    for (x, dv) in t.iter_mut().zip(*g) {
                        *x = (*x as f64 - self.learning_rate * *dv as f64) as f32;
                    }
                }
            }
            OptKind::Adam => {
                if self.slots.is_empty() {
                    self.slots = grads
                        .iter()
                        .map(|g| MomentSlot { m: vec![0.0; g.len()], v: vec![0.0; g.len()] })
                        .collect();
                }
                if self.slots.len() != grads.len() {
                    return Err(Error::Dimension("optimizer slot count changed".into()));
                }
                let c1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
                let c2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
                for ((t, g), slot) in tensors.iter_mut().zip(grads).zip(&mut self.slots) {
                    if slot.m.len() != g.len() {
                        return Err(Error::Dimension("moment shape differs from tensor".into()));
                    }
                    for k in 0..g.len() {
                        let gv = g[k] as f64;
                        let m = ADAM_BETA1 * slot.m[k] as f64 + (1.0 - ADAM_BETA1) * gv;
                        let v = ADAM_BETA2 * slot.v[k] as f64 + (1.0 - ADAM_BETA2) * gv * gv;
                        slot.m[k] = m as f32;
                        slot.v[k] = v as f32;
                        let update = self.learning_rate * (m / c1) / ((v / c2).sqrt() + ADAM_EPS);
                        t[k] = (t[k] as f64 - update) as f32;
                    }
                }
            }
        }
        Ok(())
    }

    /// Updates all weight and bias tensors of `p` from `g`.
    pub fn step_params(&mut self, p: &mut ModelParams, g: &Gradients) -> Result<()> {
        if g.layers.len() != p.layers.len() {
            return Err(Error::Dimension("gradient layer count mismatch".into()));
        }
        let mut tensors: Vec<&mut [f32]> = Vec::with_capacity(p.layers.len() * 2);
        for layer in &mut p.layers {
            tensors.push(layer.weights.as_mut_slice());
            tensors.push(layer.bias.as_mut_slice());
        }
        let mut grads: Vec<&[f32]> = Vec::with_capacity(g.layers.len() * 2);
        for layer in &g.layers {
            grads.push(layer.dw.as_slice());
            grads.push(layer.db.as_slice());
        }
        self.step_tensors(&mut tensors, &grads)
    }

    /// Updates a standalone matrix (used for condensed feature updates).
    pub fn step_matrix(&mut self, x: &mut Matrix, g: &Matrix) -> Result<()> {
        if x.rows() != g.rows() || x.cols() != g.cols() {
            return Err(Error::Dimension("feature gradient shape mismatch".into()));
        }
        let g = g.as_slice();
        self.step_tensors(&mut [x.as_mut_slice()], &[g])
    }
}

/// Checkpoint document: structure in JSON, tensors as float blobs.
#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    dims: Vec<usize>,
    activation: Activation,
    scope: ActivationScope,
    seed: u64,
    optimizer: Option<OptimizerStateFile>,
    weights_b64: Vec<String>,
    biases_b64: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerStateFile {
    kind: OptKind,
    learning_rate: f64,
    step: u64,
}

impl CheckpointFile {
    fn from_params(p: &ModelParams, optimizer: Option<&Optimizer>) -> Self {
        CheckpointFile {
            format_version: 1,
            dims: p.dims(),
            activation: p.activation,
            scope: p.scope,
            seed: p.seed,
            optimizer: optimizer.map(|o| OptimizerStateFile {
                kind: o.kind,
                learning_rate: o.learning_rate,
                step: o.step,
            }),
            weights_b64: p.layers.iter().map(|l| io::encode_f32(l.weights.as_slice())).collect(),
            biases_b64: p.layers.iter().map(|l| io::encode_f32(&l.bias)).collect(),
        }
    }

    fn into_params(self) -> Result<(ModelParams, Option<OptimizerConfig>)> {
        if self.format_version != 1 {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                self.format_version
            )));
        }
        if self.dims.len() < 2
            || self.weights_b64.len() != self.dims.len() - 1
            || self.biases_b64.len() != self.dims.len() - 1
        {
            return Err(Error::Format("checkpoint tensor count mismatch".into()));
        }
        let mut layers = Vec::with_capacity(self.dims.len() - 1);
        for (i, w) in self.dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = Matrix::from_vec(
                fan_out,
                fan_in,
                io::decode_f32(&self.weights_b64[i], fan_in * fan_out)?,
            )?;
            let bias = io::decode_f32(&self.biases_b64[i], fan_out)?;
            layers.push(Layer { weights, bias });
        }
        let params = ModelParams {
            layers,
            activation: self.activation,
            scope: self.scope,
            seed: self.seed,
        };
        let opt = self.optimizer.map(|o| OptimizerConfig {
            kind: o.kind,
            learning_rate: o.learning_rate,
        });
        Ok((params, opt))
    }
}
