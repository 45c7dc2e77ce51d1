//! The mapping network and the differentiable forward models it wraps.
//!
//! Three forward models cover the inversion tasks at desk scale: a seeded
//! sinusoidal decoder whose loss surface is deliberately rugged, a small
//! trainable tanh decoder, and an additive-correction wrapper that optimizes
//! an offset around a fixed anchor input.

use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::tensor::{Tape, Tensor, Var};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Negative slope used by every mapping network.
pub const MAPPING_SLOPE: f64 = 0.2;

/// Activation applied between linear layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Tanh,
}

impl Activation {
    pub fn apply(&self, tape: &mut Tape, v: Var) -> Result<Var> {
        match self {
            Activation::LeakyRelu { slope } => tape.leaky_relu(v, *slope),
            Activation::Tanh => Ok(tape.tanh(v)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::LeakyRelu { .. } => "leaky_relu",
            Activation::Tanh => "tanh",
        }
    }
}

/// One dense layer: `weight` is [out, in], `bias` is [out].
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Fan-in uniform init, biases zero.
    pub fn seeded(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Linear {
            weight: Tensor::uniform(out_dim, in_dim, bound, rng),
            bias: Tensor::zeros(vec![out_dim]),
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut values = vec![0.0; dim * dim];
        for i in 0..dim {
            values[i * dim + i] = 1.0;
        }
        Linear {
            weight: Tensor::new(vec![dim, dim], values).unwrap(),
            bias: Tensor::zeros(vec![dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Tape handles for one MLP forward pass: per-layer (weight, bias) vars plus
/// the output var. Needed to pull parameter gradients back out after
/// backward.
pub struct MlpTapeVars {
    pub params: Vec<(Var, Var)>,
    pub output: Var,
}

/// Multi-layer perceptron with a fixed activation between layers (not after
/// the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(layers: Vec<Linear>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("mlp needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::DimMismatch {
                    op: "mlp layer chain",
                    left: w[0].weight.shape().to_vec(),
                    right: w[1].weight.shape().to_vec(),
                });
            }
        }
        Ok(Mlp { layers, activation })
    }

    /// The 3-layer leaky-rectifier network that remaps the search space.
    /// Weights require gradients; training happens through them.
    pub fn mapping_network(d_z: usize, hidden: usize, d_x: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = vec![
            Linear::seeded(d_z, hidden, &mut rng),
            Linear::seeded(hidden, hidden, &mut rng),
            Linear::seeded(hidden, d_x, &mut rng),
        ];
        for layer in &mut layers {
            layer.weight.set_requires_grad(true);
            layer.bias.set_requires_grad(true);
        }
        Mlp {
            layers,
            activation: Activation::LeakyRelu { slope: MAPPING_SLOPE },
        }
    }

    /// Square identity network (any depth); acts as the identity map on the
    /// positive orthant when the activation is a leaky rectifier.
    pub fn identity(dim: usize, depth: usize) -> Self {
        Mlp {
            layers: (0..depth.max(1)).map(|_| Linear::identity(dim)).collect(),
            activation: Activation::LeakyRelu { slope: MAPPING_SLOPE },
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.in_dim()];
        dims.extend(self.layers.iter().map(Linear::out_dim));
        dims
    }

    fn forward_impl(&self, tape: &mut Tape, input: Var, trainable: bool) -> Result<MlpTapeVars> {
        if tape.shape(input) != [self.in_dim()] {
            return Err(Error::DimMismatch {
                op: "mlp forward",
                left: tape.shape(input).to_vec(),
                right: vec![self.in_dim()],
            });
        }
        let mut h = input;
        let mut params = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, b) = if trainable {
                (tape.leaf(&layer.weight), tape.leaf(&layer.bias))
            } else {
                (tape.leaf_detached(&layer.weight), tape.leaf_detached(&layer.bias))
            };
            let wx = tape.matmul(w, h)?;
            h = tape.add(wx, b)?;
            if i + 1 < self.layers.len() {
                h = self.activation.apply(tape, h)?;
            }
            params.push((w, b));
        }
        Ok(MlpTapeVars { params, output: h })
    }

    /// Forward pass with parameters recorded as trainable leaves (honoring
    /// each tensor's requires_grad flag).
    pub fn forward_on(&self, tape: &mut Tape, input: Var) -> Result<MlpTapeVars> {
        self.forward_impl(tape, input, true)
    }

    /// Forward pass with parameters frozen regardless of their flags.
    pub fn forward_frozen(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        Ok(self.forward_impl(tape, input, false)?.output)
    }

    /// Plain evaluation without any gradient bookkeeping.
    pub fn eval(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = tape.constant(vec![input.len()], input.to_vec())?;
        let out = self.forward_frozen(&mut tape, v)?;
        Ok(tape.value(out).to_vec())
    }

    /// Pulls gradients off a finished tape into the parameter tensors.
    pub fn accumulate_grads_from(&mut self, tape: &Tape, vars: &MlpTapeVars) -> Result<()> {
        for (layer, (w, b)) in self.layers.iter_mut().zip(&vars.params) {
            if layer.weight.requires_grad() {
                layer.weight.accumulate_grad_from(tape, *w)?;
            }
            if layer.bias.requires_grad() {
                layer.bias.accumulate_grad_from(tape, *b)?;
            }
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            layer.weight.zero_grad();
            layer.bias.zero_grad();
        }
    }

    /// All parameter values flattened in layer order; used for checkpoint io
    /// and bitwise freeze checks.
    pub fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.values());
            out.extend_from_slice(layer.bias.values());
        }
        out
    }
}

/// Scales for the seeded rugged decoder. Frequencies above 1 rad/unit give
/// the loss surface multiple basins inside the search box; the linear term
/// keeps a global slope so descent has signal everywhere. A quarter of the
/// features sit in a 14x higher frequency band at reduced amplitude, putting
/// sharp narrow bumps on top of the broad basins.
pub const RUGGED_FREQ_BOUND: f64 = 2.5;
pub const RUGGED_AMP_BOUND: f64 = 1.0;
pub const RUGGED_LINEAR_BOUND: f64 = 0.4;
pub const RUGGED_DEFAULT_FEATURES: usize = 16;
pub const RUGGED_HIGH_FREQ_MULT: f64 = 14.0;
pub const RUGGED_HIGH_FREQ_AMP: f64 = 0.35;

/// Deterministic non-convex decoder: F(x) = A sin(Wx + b) + Cx.
#[derive(Debug, Clone, PartialEq)]
pub struct RuggedDecoder {
    pub amplitude: Tensor, // [d_y, k]
    pub frequency: Tensor, // [k, d_x]
    pub phase: Tensor,     // [k]
    pub linear: Tensor,    // [d_y, d_x]
}

impl RuggedDecoder {
    pub fn seeded(d_x: usize, d_y: usize, features: usize, seed: u64) -> Self {
        Self::seeded_with_bands(
            d_x,
            d_y,
            features,
            seed,
            RUGGED_HIGH_FREQ_MULT,
            RUGGED_HIGH_FREQ_AMP,
        )
    }

    /// Seeded construction with explicit high-band scaling; the plain
    /// constructor uses the module constants.
    pub fn seeded_with_bands(
        d_x: usize,
        d_y: usize,
        features: usize,
        seed: u64,
        high_freq_mult: f64,
        high_freq_amp: f64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut amplitude = Tensor::uniform(d_y, features, RUGGED_AMP_BOUND, &mut rng);
        let mut frequency = Tensor::uniform(features, d_x, RUGGED_FREQ_BOUND, &mut rng);
        let phase_values = (0..features)
            .map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI))
            .collect();
        let phase = Tensor::vector(phase_values);
        let linear = Tensor::uniform(d_y, d_x, RUGGED_LINEAR_BOUND, &mut rng);
        // last quarter of the features form the high-frequency band
        let high_start = features - features / 4;
        for f in high_start..features {
            for d in 0..d_x {
                frequency.values_mut()[f * d_x + d] *= high_freq_mult;
            }
            for row in 0..d_y {
                amplitude.values_mut()[row * features + f] *= high_freq_amp;
            }
        }
        RuggedDecoder { amplitude, frequency, phase, linear }
    }

    pub fn from_parts(
        amplitude: Tensor,
        frequency: Tensor,
        phase: Tensor,
        linear: Tensor,
    ) -> Result<Self> {
        let k = frequency.shape()[0];
        let d_x = frequency.shape()[1];
        let d_y = amplitude.shape()[0];
        if amplitude.shape() != [d_y, k] || phase.shape() != [k] || linear.shape() != [d_y, d_x] {
            return Err(Error::invalid("rugged decoder parts have inconsistent shapes"));
        }
        Ok(RuggedDecoder { amplitude, frequency, phase, linear })
    }

    pub fn input_dim(&self) -> usize {
        self.frequency.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.amplitude.shape()[0]
    }

    pub fn forward_on(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.leaf_detached(&self.frequency);
        let b = tape.leaf_detached(&self.phase);
        let a = tape.leaf_detached(&self.amplitude);
        let c = tape.leaf_detached(&self.linear);
        let wx = tape.matmul(w, x)?;
        let shifted = tape.add(wx, b)?;
        let feats = tape.sin(shifted);
        let periodic = tape.matmul(a, feats)?;
        let lin = tape.matmul(c, x)?;
        tape.add(periodic, lin)
    }
}

/// Small trainable decoder standing in for a pretrained pose decoder.
/// Forward fails until weights are set by [`fit_mini_decoder`] or a load.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniDecoder {
    d_x: usize,
    d_y: usize,
    weights: Option<Mlp>,
}

pub const MINI_DECODER_DEFAULT_DX: usize = 8;
pub const MINI_DECODER_DEFAULT_DY: usize = 32;

impl MiniDecoder {
    pub fn uninitialized(d_x: usize, d_y: usize) -> Self {
        MiniDecoder { d_x, d_y, weights: None }
    }

    pub fn with_weights(weights: Mlp) -> Self {
        MiniDecoder {
            d_x: weights.in_dim(),
            d_y: weights.out_dim(),
            weights: Some(weights),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.d_x
    }

    pub fn output_dim(&self) -> usize {
        self.d_y
    }

    pub fn weights(&self) -> Result<&Mlp> {
        self.weights
            .as_ref()
            .ok_or_else(|| Error::Uninitialized("mini decoder has no weights; fit or load first".into()))
    }

    pub fn forward_on(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.weights()?.forward_frozen(tape, x)
    }
}

/// Forward model F inverted by optimization-based inference.
#[derive(Debug, Clone, PartialEq)]
pub enum ForwardModel {
    Rugged(RuggedDecoder),
    Mini(MiniDecoder),
    /// Optimizes a correction r around a fixed anchor: F(a + r).
    Additive {
        inner: Box<ForwardModel>,
        anchor: Tensor,
    },
}

impl ForwardModel {
    pub fn additive(inner: ForwardModel, anchor: Tensor) -> Result<Self> {
        if anchor.shape() != [inner.input_dim()] {
            return Err(Error::DimMismatch {
                op: "additive anchor",
                left: anchor.shape().to_vec(),
                right: vec![inner.input_dim()],
            });
        }
        if matches!(inner, ForwardModel::Additive { .. }) {
            return Err(Error::invalid("additive models do not nest"));
        }
        Ok(ForwardModel::Additive { inner: Box::new(inner), anchor })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ForwardModel::Rugged(r) => r.input_dim(),
            ForwardModel::Mini(m) => m.input_dim(),
            ForwardModel::Additive { inner, .. } => inner.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            ForwardModel::Rugged(r) => r.output_dim(),
            ForwardModel::Mini(m) => m.output_dim(),
            ForwardModel::Additive { inner, .. } => inner.output_dim(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ForwardModel::Rugged(_) => "rugged",
            ForwardModel::Mini(_) => "mini",
            ForwardModel::Additive { .. } => "additive",
        }
    }

    /// Records the model on the tape. Model weights are always frozen;
    /// gradients flow through to `x` only.
    pub fn forward_on(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        if tape.shape(x) != [self.input_dim()] {
            return Err(Error::DimMismatch {
                op: "forward model",
                left: tape.shape(x).to_vec(),
                right: vec![self.input_dim()],
            });
        }
        match self {
            ForwardModel::Rugged(r) => r.forward_on(tape, x),
            ForwardModel::Mini(m) => m.forward_on(tape, x),
            ForwardModel::Additive { inner, anchor } => {
                let a = tape.leaf_detached(anchor);
                let shifted = tape.add(a, x)?;
                inner.forward_on(tape, shifted)
            }
        }
    }

    /// Plain evaluation without gradient bookkeeping.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = tape.constant(vec![x.len()], x.to_vec())?;
        let out = self.forward_on(&mut tape, v)?;
        Ok(tape.value(out).to_vec())
    }
}

/// Stats reported by [`fit_mini_decoder`].
#[derive(Debug, Clone)]
pub struct FitReport {
    pub per_epoch_mse: Vec<f64>,
    pub final_mse: f64,
    pub target_variance: f64,
}

/// Trains a 2-layer tanh decoder on (x, y) pairs with per-sample adam steps.
/// The returned weights are frozen (requires_grad off).
pub fn fit_mini_decoder(
    dataset: &[(Vec<f64>, Vec<f64>)],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(Mlp, FitReport)> {
    if dataset.is_empty() {
        return Err(Error::invalid("fit_mini_decoder: empty dataset"));
    }
    let d_x = dataset[0].0.len();
    let d_y = dataset[0].1.len();
    for (i, (x, y)) in dataset.iter().enumerate() {
        if x.len() != d_x || y.len() != d_y {
            return Err(Error::invalid(format!(
                "fit_mini_decoder: sample {i} has dims ({}, {}), expected ({d_x}, {d_y})",
                x.len(),
                y.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = d_y.max(d_x);
    let mut layers = vec![
        Linear::seeded(d_x, hidden, &mut rng),
        Linear::seeded(hidden, d_y, &mut rng),
    ];
    for layer in &mut layers {
        layer.weight.set_requires_grad(true);
        layer.bias.set_requires_grad(true);
    }
    let mut net = Mlp::new(layers, Activation::Tanh)?;
    let mut opt = Optimizer::new(OptimizerConfig::adam(lr));

    let epoch_mse = |net: &Mlp| -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in dataset {
            let out = net.eval(x)?;
            let se: f64 = out.iter().zip(y).map(|(o, t)| (o - t) * (o - t)).sum();
            total += se / d_y as f64;
        }
        Ok(total / dataset.len() as f64)
    };

    let mut per_epoch = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        for (x, y) in dataset {
            let mut tape = Tape::new();
            let input = tape.constant(vec![d_x], x.clone())?;
            let vars = net.forward_on(&mut tape, input)?;
            let target = tape.constant(vec![d_y], y.clone())?;
            let loss = tape.mse(vars.output, target)?;
            tape.backward(loss)?;
            net.zero_grads();
            net.accumulate_grads_from(&tape, &vars)?;
            opt.step(&mut net.params_mut())?;
        }
        per_epoch.push(epoch_mse(&net)?);
    }

    // freeze
    net.zero_grads();
    for layer in &mut net.layers {
        layer.weight.set_requires_grad(false);
        layer.bias.set_requires_grad(false);
    }

    let final_mse = *per_epoch.last().unwrap_or(&f64::NAN);
    let mean_y: Vec<f64> = (0..d_y)
        .map(|j| dataset.iter().map(|(_, y)| y[j]).sum::<f64>() / dataset.len() as f64)
        .collect();
    let target_variance = dataset
        .iter()
        .map(|(_, y)| {
            y.iter()
                .zip(&mean_y)
                .map(|(v, m)| (v - m) * (v - m))
                .sum::<f64>()
                / d_y as f64
        })
        .sum::<f64>()
        / dataset.len() as f64;

    Ok((
        net,
        FitReport { per_epoch_mse: per_epoch, final_mse, target_variance },
    ))
}

/// Deterministic synthetic dataset for the mini decoder: inputs from a
/// standard normal prior, targets from a seeded teacher of the same
/// architecture.
pub fn mini_decoder_dataset(
    samples: usize,
    d_x: usize,
    d_y: usize,
    seed: u64,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = d_y.max(d_x);
    let mut teacher = Mlp::new(
        vec![
            Linear::seeded(d_x, hidden, &mut rng),
            Linear::seeded(hidden, d_y, &mut rng),
        ],
        Activation::Tanh,
    )
    .unwrap();
    // widen the teacher a little so targets are not near-zero
    for layer in &mut teacher.layers {
        for v in layer.weight.values_mut() {
            *v *= 2.0;
        }
    }
    (0..samples)
        .map(|_| {
            let x: Vec<f64> = (0..d_x)
                .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            let y = teacher.eval(&x).unwrap();
            (x, y)
        })
        .collect()
}
