//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Weights are stored as `out × in` matrices so a batch `X` (one sample per
//! row) maps to `X·Wᵀ + b`. All arithmetic is `f64`; checkpoints store
//! `f32`.

mod checkpoint;
mod optim;

pub use checkpoint::{read_network, write_network};
pub(crate) use checkpoint::{read_f32 as read_f32_le, read_u32 as read_u32_le};
pub use optim::{Optimizer, OptimizerKind};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossSpec {
    MeanSquaredError,
    /// Requires a sigmoid output layer; evaluated on the logits.
    BinaryCrossEntropy,
    Huber { delta: f64 },
}

impl LossSpec {
    fn validate(&self, output: Activation) -> Result<()> {
        match *self {
            LossSpec::Huber { delta } if !(delta > 0.0) => {
                Err(invalid("huber delta", format!("must be > 0, got {delta}")))
            }
            LossSpec::BinaryCrossEntropy if output != Activation::Sigmoid => Err(invalid(
                "loss",
                "binary cross-entropy needs a sigmoid output layer",
            )),
            _ => Ok(()),
        }
    }

    /// Per-component loss and its derivative with respect to the output
    /// pre-activation `z` (whose activation is `a`).
    fn component(&self, z: f64, a: f64, target: f64, act: Activation) -> (f64, f64) {
        match *self {
            LossSpec::MeanSquaredError => {
                let d = a - target;
                (d * d, 2.0 * d * act.derivative(z, a))
            }
            LossSpec::Huber { delta } => {
                let d = a - target;
                let (l, g) = if d.abs() <= delta {
                    (0.5 * d * d, d)
                } else {
                    (delta * (d.abs() - 0.5 * delta), delta * d.signum())
                };
                (l, g * act.derivative(z, a))
            }
            LossSpec::BinaryCrossEntropy => {
                // log(1 + e^{-|z|}) form avoids overflow for large logits
                let l = z.max(0.0) - z * target + (-z.abs()).exp().ln_1p();
                (l, a - target)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Parameter gradients, one `(dW, db)` per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            *w *= s;
            *b *= s;
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    fn flat_get(&self, idx: ParamIndex) -> f64 {
        match idx {
            ParamIndex::Weight(l, i, j) => self.layers[l].0[[i, j]],
            ParamIndex::Bias(l, i) => self.layers[l].1[i],
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum ParamIndex {
    Weight(usize, usize, usize),
    Bias(usize, usize),
}

/// Per-layer pre-activations and activations of one batch.
struct ForwardCache {
    inputs: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("network", "needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[1].input_dim() != pair[0].output_dim() {
                return Err(Error::DimensionMismatch {
                    context: "layer chaining",
                    expected: pair[0].output_dim(),
                    actual: pair[1].input_dim(),
                });
            }
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::DimensionMismatch {
                    context: "bias length",
                    expected: layer.output_dim(),
                    actual: layer.bias.len(),
                });
            }
            if !layer.weights.iter().chain(layer.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite { layer: l });
            }
        }
        Ok(Self { layers })
    }

    /// Randomly initialized network with layer widths `dims`. ReLU layers
    /// use He-uniform scaling, sigmoid and identity layers Xavier-uniform.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(invalid("dims", format!("need >= 2 positive widths, got {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let activation = if i + 2 == dims.len() { output } else { hidden };
                let limit = match activation {
                    Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                    _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                };
                let weights =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..limit));
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn output_activation(&self) -> Activation {
        self.layers[self.layers.len() - 1].activation
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::output_dim))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn same_shape(&self, other: &Network) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.dim() == b.weights.dim() && a.activation == b.activation
            })
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                actual: width,
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous slice");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass of a batch laid out one sample per row.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(inputs.ncols())?;
        let mut a = inputs.to_owned();
        for layer in &self.layers {
            let mut z = a.dot(&layer.weights.t());
            z += &layer.bias;
            z.mapv_inplace(|v| layer.activation.apply(v));
            a = z;
        }
        Ok(a)
    }

    fn forward_cached(&self, inputs: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(inputs.ncols())?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let prev = if l == 0 { inputs } else { post[l - 1].view() };
            let mut z = prev.dot(&layer.weights.t());
            z += &layer.bias;
            if !z.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { layer: l });
            }
            let a = z.mapv(|v| layer.activation.apply(v));
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardCache {
            inputs: inputs.to_owned(),
            pre,
            post,
        })
    }

    /// Backpropagates `dz_out`, the loss gradient with respect to the
    /// output layer's pre-activations, through the cached pass.
    fn backprop(&self, cache: &ForwardCache, mut dz: Array2<f64>) -> Result<Gradients> {
        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let prev = if l == 0 { &cache.inputs } else { &cache.post[l - 1] };
            let dw = dz.t().dot(prev);
            let db = dz.sum_axis(Axis(0));
            if !dw.iter().chain(db.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite { layer: l });
            }
            grads.push((dw, db));
            if l > 0 {
                let mut da = dz.dot(&layer.weights);
                let below = &self.layers[l - 1];
                Zip::from(&mut da)
                    .and(&cache.pre[l - 1])
                    .and(&cache.post[l - 1])
                    .for_each(|d, &z, &a| *d *= below.activation.derivative(z, a));
                dz = da;
            }
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Mean loss over the batch and its parameter gradients. Per-sample loss
    /// is the mean over output components.
    pub fn loss_and_gradients(
        &self,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        loss: &LossSpec,
    ) -> Result<(f64, Gradients)> {
        let act = self.output_activation();
        loss.validate(act)?;
        if targets.dim() != (inputs.nrows(), self.output_dim()) {
            return Err(Error::DimensionMismatch {
                context: "targets",
                expected: inputs.nrows() * self.output_dim(),
                actual: targets.len(),
            });
        }
        let cache = self.forward_cached(inputs)?;
        let last = self.layers.len() - 1;
        let scale = 1.0 / (inputs.nrows() * self.output_dim()) as f64;
        let mut total = 0.0;
        let mut dz = Array2::zeros(cache.pre[last].raw_dim());
        Zip::from(&mut dz)
            .and(&cache.pre[last])
            .and(&cache.post[last])
            .and(targets)
            .for_each(|d, &z, &a, &t| {
                let (l, g) = loss.component(z, a, t, act);
                total += l;
                *d = g * scale;
            });
        let grads = self.backprop(&cache, dz)?;
        Ok((total * scale, grads))
    }

    /// Gradients for a loss defined by the caller through `output_grad`,
    /// which receives the batch outputs and returns `dL/d(output)`.
    /// Only valid for identity output layers.
    pub fn gradients_from_output(
        &self,
        inputs: ArrayView2<f64>,
        output_grad: impl FnOnce(&Array2<f64>) -> Array2<f64>,
    ) -> Result<Gradients> {
        if self.output_activation() != Activation::Identity {
            return Err(invalid("network", "custom output gradients need an identity head"));
        }
        let cache = self.forward_cached(inputs)?;
        let dz = output_grad(&cache.post[self.layers.len() - 1]);
        self.backprop(&cache, dz)
    }

    /// Single-sample gradient of `loss` at `(input, target)`.
    pub fn backward(&self, input: &[f64], target: &[f64], loss: &LossSpec) -> Result<Gradients> {
        self.check_input(input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous slice");
        let y = ArrayView2::from_shape((1, target.len()), target).map_err(|_| {
            Error::DimensionMismatch {
                context: "target",
                expected: self.output_dim(),
                actual: target.len(),
            }
        })?;
        Ok(self.loss_and_gradients(x, y, loss)?.1)
    }

    pub fn loss(&self, input: &[f64], target: &[f64], loss: &LossSpec) -> Result<f64> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous slice");
        let y = ArrayView2::from_shape((1, target.len()), target).map_err(|_| {
            Error::DimensionMismatch {
                context: "target",
                expected: self.output_dim(),
                actual: target.len(),
            }
        })?;
        Ok(self.loss_and_gradients(x, y, loss)?.0)
    }

    /// Deep copy of the parameters.
    pub fn clone_weights(&self) -> Network {
        self.clone()
    }

    /// Copies `src` into `self` in place.
    pub fn copy_from(&mut self, src: &Network) -> Result<()> {
        self.soft_update_from(src, 1.0)
    }

    /// Polyak averaging `θ' ← τ·θ + (1−τ)·θ'` with `self` as θ'.
    pub fn soft_update_from(&mut self, primary: &Network, tau: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(invalid("tau", format!("{tau} outside [0, 1]")));
        }
        if !self.same_shape(primary) {
            return Err(Error::DimensionMismatch {
                context: "soft update",
                expected: self.num_params(),
                actual: primary.num_params(),
            });
        }
        for (t, p) in self.layers.iter_mut().zip(&primary.layers) {
            if tau == 1.0 {
                t.weights.assign(&p.weights);
                t.bias.assign(&p.bias);
            } else {
                Zip::from(&mut t.weights)
                    .and(&p.weights)
                    .for_each(|t, &p| *t = tau * p + (1.0 - tau) * *t);
                Zip::from(&mut t.bias)
                    .and(&p.bias)
                    .for_each(|t, &p| *t = tau * p + (1.0 - tau) * *t);
            }
        }
        Ok(())
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    fn param_indices(&self) -> Vec<ParamIndex> {
        let mut out = Vec::with_capacity(self.num_params());
        for (l, layer) in self.layers.iter().enumerate() {
            for ((i, j), _) in layer.weights.indexed_iter() {
                out.push(ParamIndex::Weight(l, i, j));
            }
            for i in 0..layer.bias.len() {
                out.push(ParamIndex::Bias(l, i));
            }
        }
        out
    }

    fn param_mut(&mut self, idx: ParamIndex) -> &mut f64 {
        match idx {
            ParamIndex::Weight(l, i, j) => &mut self.layers[l].weights[[i, j]],
            ParamIndex::Bias(l, i) => &mut self.layers[l].bias[i],
        }
    }

    fn relu_pattern(&self, input: &[f64]) -> Vec<bool> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous slice");
        let cache = match self.forward_cached(x) {
            Ok(c) => c,
            Err(_) => return Vec::new(),
        };
        self.layers
            .iter()
            .zip(&cache.pre)
            .filter(|(l, _)| l.activation == Activation::Relu)
            .flat_map(|(_, z)| z.iter().map(|&v| v > 0.0).collect::<Vec<_>>())
            .collect()
    }
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters whose ±ε perturbation crossed a ReLU kink.
    pub skipped_near_kink: usize,
}

const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares `gradients` against central differences of the loss.
///
/// Relative error is `|g − ĝ| / max(|g|, |ĝ|, 1e-6)`, so a sign-flipped
/// gradient scores 2.
pub fn gradient_check_against(
    net: &Network,
    gradients: &Gradients,
    input: &[f64],
    target: &[f64],
    loss: &LossSpec,
    eps: f64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(invalid("eps", "must be > 0"));
    }
    let base_pattern = net.relu_pattern(input);
    let mut probe = net.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped_near_kink: 0,
    };
    for idx in net.param_indices() {
        let orig = *probe.param_mut(idx);
        *probe.param_mut(idx) = orig + eps;
        let plus = probe.loss(input, target, loss)?;
        let plus_pattern = probe.relu_pattern(input);
        *probe.param_mut(idx) = orig - eps;
        let minus = probe.loss(input, target, loss)?;
        let minus_pattern = probe.relu_pattern(input);
        *probe.param_mut(idx) = orig;

        if plus_pattern != base_pattern || minus_pattern != base_pattern {
            report.skipped_near_kink += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = gradients.flat_get(idx);
        let denom = analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        let rel = (analytic - numeric).abs() / denom;
        report.max_relative_error = report.max_relative_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

/// Checks [`Network::backward`] against central differences.
pub fn gradient_check(
    net: &Network,
    input: &[f64],
    target: &[f64],
    loss: &LossSpec,
    eps: f64,
) -> Result<GradCheckReport> {
    let grads = net.backward(input, target, loss)?;
    gradient_check_against(net, &grads, input, target, loss, eps)
}
