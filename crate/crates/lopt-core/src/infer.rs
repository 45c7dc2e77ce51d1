//! Descent loops that invert forward models.
//!
//! Baseline inference optimizes the model input directly; mapped inference
//! optimizes a latent point that a mapping network projects into the input
//! space. Both record a loss trace with a step-0 entry evaluated before the
//! first update, so step counts line up across methods.

use crate::error::{Error, Result};
use crate::models::{ForwardModel, Mlp};
use crate::objective::{pipeline_loss_on, Objective, Observation};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::tensor::{Tape, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// A trace aborts once its loss exceeds this multiple of the step-0 loss.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// How the optimized variable is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitPolicy {
    Zero,
    Gaussian { sigma: f64 },
}

impl InitPolicy {
    pub fn sample(&self, dim: usize, seed: u64) -> Result<Vec<f64>> {
        match self {
            InitPolicy::Zero => Ok(vec![0.0; dim]),
            InitPolicy::Gaussian { sigma } => {
                if !(*sigma > 0.0) {
                    return Err(Error::invalid(format!(
                        "gaussian init needs sigma > 0, got {sigma}"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok((0..dim)
                    .map(|_| {
                        sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                    })
                    .collect())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InitPolicy::Zero => "zero",
            InitPolicy::Gaussian { .. } => "gaussian",
        }
    }
}

/// Settings for one inference run.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    pub steps: usize,
    pub optimizer: OptimizerConfig,
    pub init: InitPolicy,
    pub hypotheses: usize,
    pub seed: u64,
}

impl InferenceConfig {
    pub fn new(steps: usize, optimizer: OptimizerConfig, init: InitPolicy, seed: u64) -> Result<Self> {
        if steps < 1 {
            return Err(Error::invalid("inference needs at least one step"));
        }
        Ok(InferenceConfig { steps, optimizer, init, hypotheses: 1, seed })
    }

    pub fn with_hypotheses(mut self, hypotheses: usize) -> Result<Self> {
        if hypotheses < 1 {
            return Err(Error::invalid("hypothesis count must be >= 1"));
        }
        self.hypotheses = hypotheses;
        Ok(self)
    }
}

/// One step of a recorded optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Snapshot of the optimized variable (x for baseline, z for mapped).
    pub snapshot: Vec<f64>,
    pub loss: f64,
}

/// Full record of one inference run: steps + 1 loss records including the
/// step-0 evaluation, the final optimized variable, and the recovered model
/// input.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceTrace {
    pub records: Vec<StepRecord>,
    pub final_input: Vec<f64>,
    /// Recovered x: equal to `final_input` for baseline runs, theta(z) for
    /// mapped runs.
    pub final_x: Vec<f64>,
    pub final_loss: f64,
}

impl InferenceTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

enum Parameterization<'a> {
    Direct,
    Mapped(&'a Mlp),
}

/// Evaluates the inference loss at a raw variable value without recording a
/// gradient. For mapped evaluation pass the mapping network.
pub fn eval_pipeline_loss(
    model: &ForwardModel,
    objective: &Objective,
    obs: &Observation,
    theta: Option<&Mlp>,
    variable: &[f64],
) -> Result<f64> {
    let mut tape = Tape::new();
    let leaf = tape.constant(vec![variable.len()], variable.to_vec())?;
    let x = match theta {
        Some(net) => net.forward_frozen(&mut tape, leaf)?,
        None => leaf,
    };
    let loss = pipeline_loss_on(&mut tape, model, objective, obs, x)?;
    tape.scalar_value(loss)
}

fn run_descent(
    model: &ForwardModel,
    objective: &Objective,
    obs: &Observation,
    cfg: &InferenceConfig,
    init: Vec<f64>,
    param: Parameterization<'_>,
) -> Result<InferenceTrace> {
    if obs.dim() != model.output_dim() {
        return Err(Error::DimMismatch {
            op: "inference observation",
            left: vec![obs.dim()],
            right: vec![model.output_dim()],
        });
    }
    let mut variable = Tensor::vector(init).with_grad();
    let mut optimizer = Optimizer::new(cfg.optimizer.clone());
    let mut records = Vec::with_capacity(cfg.steps + 1);
    let mut divergence_ceiling = f64::INFINITY;

    for t in 0..=cfg.steps {
        let mut tape = Tape::new();
        let leaf = tape.leaf(&variable);
        let x = match &param {
            Parameterization::Direct => leaf,
            Parameterization::Mapped(net) => net.forward_frozen(&mut tape, leaf)?,
        };
        let loss_var = pipeline_loss_on(&mut tape, model, objective, obs, x)?;
        let loss = tape.scalar_value(loss_var)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step: t, loss, context: "inference".into() });
        }
        if t == 0 {
            // the epsilon keeps near-zero starts from tripping on rounding noise
            divergence_ceiling = DIVERGENCE_FACTOR * (loss + 1e-12);
        } else if loss > divergence_ceiling {
            return Err(Error::Divergence { step: t, loss, context: "inference".into() });
        }
        records.push(StepRecord { step: t, snapshot: variable.values().to_vec(), loss });
        if t < cfg.steps {
            tape.backward(loss_var)?;
            variable.zero_grad();
            variable.accumulate_grad_from(&tape, leaf)?;
            optimizer.step(&mut [&mut variable])?;
        }
    }

    let final_input = variable.values().to_vec();
    let final_loss = records.last().unwrap().loss;
    let final_x = match &param {
        Parameterization::Direct => final_input.clone(),
        Parameterization::Mapped(net) => net.eval(&final_input)?,
    };
    Ok(InferenceTrace { records, final_input, final_x, final_loss })
}

/// Descent directly in the model input space.
pub fn infer_baseline(
    model: &ForwardModel,
    objective: &Objective,
    obs: &Observation,
    cfg: &InferenceConfig,
) -> Result<InferenceTrace> {
    let init = cfg.init.sample(model.input_dim(), cfg.seed)?;
    infer_baseline_with_init(model, objective, obs, cfg, init)
}

/// Baseline descent from an explicit starting point.
pub fn infer_baseline_with_init(
    model: &ForwardModel,
    objective: &Objective,
    obs: &Observation,
    cfg: &InferenceConfig,
    init: Vec<f64>,
) -> Result<InferenceTrace> {
    if init.len() != model.input_dim() {
        return Err(Error::DimMismatch {
            op: "baseline init",
            left: vec![init.len()],
            right: vec![model.input_dim()],
        });
    }
    run_descent(model, objective, obs, cfg, init, Parameterization::Direct)
}

/// Descent in the remapped space: optimizes z through theta then the model.
pub fn infer_mapped(
    theta: &Mlp,
    model: &ForwardModel,
    objective: &Objective,
    obs: &Observation,
    cfg: &InferenceConfig,
) -> Result<InferenceTrace> {
    let init = cfg.init.sample(theta.in_dim(), cfg.seed)?;
    infer_mapped_with_init(theta, model, objective, obs, cfg, init)
}

/// Mapped descent from an explicit starting latent.
pub fn infer_mapped_with_init(
    theta: &Mlp,
    model: &ForwardModel,
    objective: &Objective,
    obs: &Observation,
    cfg: &InferenceConfig,
    init: Vec<f64>,
) -> Result<InferenceTrace> {
    if theta.out_dim() != model.input_dim() {
        return Err(Error::DimMismatch {
            op: "mapped inference",
            left: vec![theta.out_dim()],
            right: vec![model.input_dim()],
        });
    }
    if init.len() != theta.in_dim() {
        return Err(Error::DimMismatch {
            op: "mapped init",
            left: vec![init.len()],
            right: vec![theta.in_dim()],
        });
    }
    run_descent(model, objective, obs, cfg, init, Parameterization::Mapped(theta))
}

/// Repeated mapped inference from distinct seeded starts. Returns one trace
/// per hypothesis, sorted by final loss ascending (ties keep seed order).
pub fn infer_multi(
    theta: &Mlp,
    model: &ForwardModel,
    objective: &Objective,
    obs: &Observation,
    cfg: &InferenceConfig,
) -> Result<Vec<InferenceTrace>> {
    if cfg.hypotheses >= 2 && !matches!(cfg.init, InitPolicy::Gaussian { .. }) {
        return Err(Error::config(
            "multi-hypothesis inference needs gaussian init; zero-init hypotheses would coincide",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = (0..cfg.hypotheses).map(|_| rng.gen()).collect();
    infer_multi_with_seeds(theta, model, objective, obs, cfg, &seeds)
}

/// Multi-hypothesis inference with caller-chosen per-hypothesis seeds.
pub fn infer_multi_with_seeds(
    theta: &Mlp,
    model: &ForwardModel,
    objective: &Objective,
    obs: &Observation,
    cfg: &InferenceConfig,
    seeds: &[u64],
) -> Result<Vec<InferenceTrace>> {
    let mut traces = seeds
        .par_iter()
        .map(|&seed| {
            let run_cfg = InferenceConfig { seed, ..cfg.clone() };
            infer_mapped(theta, model, objective, obs, &run_cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    traces.sort_by(|a, b| a.final_loss.partial_cmp(&b.final_loss).unwrap());
    Ok(traces)
}
