//! Training the mapping network by alternating trajectory collection and
//! replay-buffer descent.
//!
//! Each round freezes the mapping network, collects N descent trajectories
//! of length T in the latent space (storing every visited point in a replay
//! buffer), then performs T*N network updates on points sampled uniformly
//! from the buffer while the latents stay fixed. The buffer is rebuilt from
//! scratch every round. An online variant interleaves one latent step with
//! one network step and keeps no buffer; it exists for ablation comparisons.

use crate::error::{Error, Result};
use crate::infer::{InitPolicy, DIVERGENCE_FACTOR};
use crate::models::{ForwardModel, Mlp};
use crate::objective::{pipeline_loss_on, Objective, Observation};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::tensor::{Tape, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// Number of fresh draws a diverging trajectory slot gets before the round
/// is abandoned.
const MAX_TRAJECTORY_RETRIES: usize = 20;

/// Hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// B: number of collect/train rounds.
    pub rounds: usize,
    /// N: trajectories collected per round.
    pub samples_per_round: usize,
    /// T: latent descent steps per trajectory.
    pub steps_per_trajectory: usize,
    /// Update rule for the latent during collection.
    pub z_optimizer: OptimizerConfig,
    /// Update rule for the mapping network during the training phase.
    pub theta_optimizer: OptimizerConfig,
    /// Latent initialization during collection.
    pub init: InitPolicy,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 || self.samples_per_round < 1 || self.steps_per_trajectory < 1 {
            return Err(Error::invalid(
                "rounds, samples per round and steps per trajectory must all be >= 1",
            ));
        }
        if !(self.z_optimizer.lr >= 0.0) || !(self.theta_optimizer.lr >= 0.0) {
            return Err(Error::invalid("learning rates must be non-negative"));
        }
        Ok(())
    }
}

/// Source of training observations.
pub trait ObservationSource {
    fn next_observation(&mut self) -> Result<Observation>;
}

/// Draws a ground-truth input from a seeded gaussian prior, pushes it
/// through the forward model, and optionally adds observation noise. Never
/// exhausted, always realizable.
pub struct SyntheticSampler<'a> {
    model: &'a ForwardModel,
    prior_sigma: f64,
    noise_sigma: f64,
    mask: Option<Vec<bool>>,
    rng: ChaCha8Rng,
}

impl<'a> SyntheticSampler<'a> {
    pub fn new(model: &'a ForwardModel, prior_sigma: f64, noise_sigma: f64, seed: u64) -> Self {
        SyntheticSampler {
            model,
            prior_sigma,
            noise_sigma,
            mask: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Self {
        self.mask = Some(mask);
        self
    }
}

impl ObservationSource for SyntheticSampler<'_> {
    fn next_observation(&mut self) -> Result<Observation> {
        let d_x = self.model.input_dim();
        let x_star: Vec<f64> = (0..d_x)
            .map(|_| {
                self.prior_sigma
                    * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut self.rng)
            })
            .collect();
        let mut y = self.model.eval(&x_star)?;
        if self.noise_sigma > 0.0 {
            for v in &mut y {
                *v += self.noise_sigma
                    * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut self.rng);
            }
        }
        let obs = Observation::new(y)?;
        match &self.mask {
            Some(m) => obs.with_mask(m.clone()),
            None => Ok(obs),
        }
    }
}

/// Replays a fixed observation list in order; errors when exhausted.
pub struct FixedObservations {
    observations: Vec<Observation>,
    cursor: usize,
}

impl FixedObservations {
    pub fn new(observations: Vec<Observation>) -> Self {
        FixedObservations { observations, cursor: 0 }
    }
}

impl ObservationSource for FixedObservations {
    fn next_observation(&mut self) -> Result<Observation> {
        let obs = self
            .observations
            .get(self.cursor)
            .cloned()
            .ok_or_else(|| Error::invalid("observation source exhausted"))?;
        self.cursor += 1;
        Ok(obs)
    }
}

/// One stored latent point, paired with the observation its trajectory
/// descended toward.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub z: Vec<f64>,
    /// Index into the buffer's observation list.
    pub obs_index: usize,
    /// Loss of this latent under the frozen network, recorded at collection.
    pub loss: f64,
}

/// Flat store of N*T latent points from one collection round.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    entries: Vec<BufferEntry>,
    observations: Vec<Observation>,
    round: usize,
}

impl ReplayBuffer {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    pub fn observation(&self, entry: &BufferEntry) -> &Observation {
        &self.observations[entry.obs_index]
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Uniform draw with replacement.
    pub fn sample_index(&self, rng: &mut ChaCha8Rng) -> usize {
        rng.gen_range(0..self.entries.len())
    }

    pub fn mean_recorded_loss(&self) -> f64 {
        self.entries.iter().map(|e| e.loss).sum::<f64>() / self.entries.len() as f64
    }
}

/// Stats from one collection phase.
#[derive(Debug, Clone)]
pub struct CollectStats {
    pub mean_entry_loss: f64,
    pub retries: usize,
}

/// Stats from one network-training phase.
#[derive(Debug, Clone)]
pub struct TrainPhaseStats {
    pub mean_loss_before: f64,
    pub mean_loss_after: f64,
}

/// Per-round record emitted by the coordinate-descent trainer.
#[derive(Debug, Clone)]
pub struct RoundStats {
    pub round: usize,
    pub collect: CollectStats,
    pub train: TrainPhaseStats,
}

struct TrajectoryOutcome {
    steps: Vec<(Vec<f64>, f64)>,
}

/// Runs T latent descent steps against one observation under a frozen
/// network, returning every visited point z_1..z_T with its loss.
fn run_trajectory(
    theta: &Mlp,
    model: &ForwardModel,
    objective: &Objective,
    obs: &Observation,
    cfg: &TrainConfig,
    init_seed: u64,
) -> Result<TrajectoryOutcome> {
    let d_z = theta.in_dim();
    let init = cfg.init.sample(d_z, init_seed)?;
    let mut z = Tensor::vector(init).with_grad();
    let mut opt = Optimizer::new(cfg.z_optimizer.clone());
    let mut steps = Vec::with_capacity(cfg.steps_per_trajectory);
    let mut ceiling = f64::INFINITY;

    for t in 0..cfg.steps_per_trajectory {
        let mut tape = Tape::new();
        let leaf = tape.leaf(&z);
        let x = theta.forward_frozen(&mut tape, leaf)?;
        let loss_var = pipeline_loss_on(&mut tape, model, objective, obs, x)?;
        let loss = tape.scalar_value(loss_var)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step: t, loss, context: "collection".into() });
        }
        if t == 0 {
            ceiling = DIVERGENCE_FACTOR * (loss + 1e-12);
        } else if loss > ceiling {
            return Err(Error::Divergence { step: t, loss, context: "collection".into() });
        }
        tape.backward(loss_var)?;
        z.zero_grad();
        z.accumulate_grad_from(&tape, leaf)?;
        opt.step(&mut [&mut z])?;

        // loss of the point actually stored, under the frozen network
        let stored_loss = {
            let mut eval_tape = Tape::new();
            let zv = eval_tape.constant(vec![d_z], z.values().to_vec())?;
            let x = theta.forward_frozen(&mut eval_tape, zv)?;
            let l = pipeline_loss_on(&mut eval_tape, model, objective, obs, x)?;
            eval_tape.scalar_value(l)?
        };
        if !stored_loss.is_finite() || stored_loss > ceiling {
            return Err(Error::Divergence {
                step: t + 1,
                loss: stored_loss,
                context: "collection".into(),
            });
        }
        steps.push((z.values().to_vec(), stored_loss));
    }
    Ok(TrajectoryOutcome { steps })
}

/// Collection phase: N trajectories under a frozen network, all visited
/// latents stored. Trajectories run in parallel; observations, seeds and
/// retries are drawn serially, so results do not depend on thread count.
/// Diverging trajectories are retried with a fresh observation and seed.
pub fn collect_trajectories(
    theta: &Mlp,
    model: &ForwardModel,
    objective: &Objective,
    source: &mut dyn ObservationSource,
    cfg: &TrainConfig,
    round: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(ReplayBuffer, CollectStats)> {
    cfg.validate()?;
    let n = cfg.samples_per_round;
    let mut observations = Vec::with_capacity(n);
    let mut seeds = Vec::with_capacity(n);
    for _ in 0..n {
        observations.push(source.next_observation()?);
        seeds.push(rng.gen::<u64>());
    }

    let mut outcomes: Vec<Result<TrajectoryOutcome>> = observations
        .par_iter()
        .zip(&seeds)
        .map(|(obs, &seed)| run_trajectory(theta, model, objective, obs, cfg, seed))
        .collect();

    let mut retries = 0usize;
    for i in 0..n {
        let mut attempts = 0;
        while outcomes[i].is_err() {
            attempts += 1;
            retries += 1;
            if attempts > MAX_TRAJECTORY_RETRIES {
                return Err(Error::Divergence {
                    step: round,
                    loss: f64::NAN,
                    context: format!("trajectory slot {i} kept diverging after {attempts} draws"),
                });
            }
            observations[i] = source.next_observation()?;
            let seed = rng.gen::<u64>();
            outcomes[i] = run_trajectory(theta, model, objective, &observations[i], cfg, seed);
        }
    }

    let mut entries = Vec::with_capacity(n * cfg.steps_per_trajectory);
    for (i, outcome) in outcomes.into_iter().enumerate() {
        let outcome = outcome.expect("retry loop leaves only successes");
        for (z, loss) in outcome.steps {
            entries.push(BufferEntry { z, obs_index: i, loss });
        }
    }
    let mean_entry_loss = entries.iter().map(|e| e.loss).sum::<f64>() / entries.len() as f64;
    Ok((
        ReplayBuffer { entries, observations, round },
        CollectStats { mean_entry_loss, retries },
    ))
}

fn mean_buffer_loss(
    theta: &Mlp,
    buffer: &ReplayBuffer,
    model: &ForwardModel,
    objective: &Objective,
) -> Result<f64> {
    let losses = buffer
        .entries()
        .par_iter()
        .map(|entry| {
            let mut tape = Tape::new();
            let z = tape.constant(vec![entry.z.len()], entry.z.clone())?;
            let x = theta.forward_frozen(&mut tape, z)?;
            let loss = pipeline_loss_on(&mut tape, model, objective, buffer.observation(entry), x)?;
            tape.scalar_value(loss)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Training phase: T*N uniform draws from the buffer, one network update
/// each. Latents are never written. Returns the mean buffer loss before and
/// after the updates.
pub fn train_theta_round(
    theta: &mut Mlp,
    theta_opt: &mut Optimizer,
    buffer: &ReplayBuffer,
    model: &ForwardModel,
    objective: &Objective,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainPhaseStats> {
    if buffer.is_empty() {
        return Err(Error::contract("train_theta_round on an empty buffer"));
    }
    let mean_loss_before = mean_buffer_loss(theta, buffer, model, objective)?;
    let iterations = cfg.steps_per_trajectory * cfg.samples_per_round;
    for _ in 0..iterations {
        let entry = &buffer.entries()[buffer.sample_index(rng)];
        let obs = buffer.observation(entry);
        let mut tape = Tape::new();
        let z = tape.constant(vec![entry.z.len()], entry.z.clone())?;
        let vars = theta.forward_on(&mut tape, z)?;
        let loss_var = pipeline_loss_on(&mut tape, model, objective, obs, vars.output)?;
        tape.backward(loss_var)?;
        theta.zero_grads();
        theta.accumulate_grads_from(&tape, &vars)?;
        theta_opt.step(&mut theta.params_mut())?;
    }
    let mean_loss_after = mean_buffer_loss(theta, buffer, model, objective)?;
    Ok(TrainPhaseStats { mean_loss_before, mean_loss_after })
}

/// Alternating trainer with persistent network-optimizer state across
/// rounds.
pub struct CoordinateDescentTrainer<'a> {
    theta: Mlp,
    theta_opt: Optimizer,
    model: &'a ForwardModel,
    objective: &'a Objective,
    cfg: TrainConfig,
    rng: ChaCha8Rng,
    round: usize,
}

impl<'a> CoordinateDescentTrainer<'a> {
    pub fn new(
        theta: Mlp,
        model: &'a ForwardModel,
        objective: &'a Objective,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if theta.out_dim() != model.input_dim() {
            return Err(Error::DimMismatch {
                op: "trainer",
                left: vec![theta.out_dim()],
                right: vec![model.input_dim()],
            });
        }
        let theta_opt = Optimizer::new(cfg.theta_optimizer.clone());
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(CoordinateDescentTrainer { theta, theta_opt, model, objective, cfg, rng, round: 0 })
    }

    pub fn theta(&self) -> &Mlp {
        &self.theta
    }

    pub fn theta_optimizer(&self) -> &Optimizer {
        &self.theta_opt
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn into_theta(self) -> Mlp {
        self.theta
    }

    /// One collect + train alternation.
    pub fn run_round(&mut self, source: &mut dyn ObservationSource) -> Result<RoundStats> {
        self.round += 1;
        let (buffer, collect) = collect_trajectories(
            &self.theta,
            self.model,
            self.objective,
            source,
            &self.cfg,
            self.round,
            &mut self.rng,
        )?;
        let train = train_theta_round(
            &mut self.theta,
            &mut self.theta_opt,
            &buffer,
            self.model,
            self.objective,
            &self.cfg,
            &mut self.rng,
        )?;
        if self.theta.flat_values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: self.round,
                loss: f64::NAN,
                context: "mapping network parameters became non-finite".into(),
            });
        }
        Ok(RoundStats { round: self.round, collect, train })
    }
}

/// Runs the full alternation for `cfg.rounds` rounds.
pub fn coordinate_descent_train(
    theta: Mlp,
    model: &ForwardModel,
    objective: &Objective,
    source: &mut dyn ObservationSource,
    cfg: TrainConfig,
) -> Result<(Mlp, Vec<RoundStats>)> {
    let rounds = cfg.rounds;
    let mut trainer = CoordinateDescentTrainer::new(theta, model, objective, cfg)?;
    let mut stats = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        stats.push(trainer.run_round(source)?);
    }
    Ok((trainer.into_theta(), stats))
}

/// Stats from the online ablation variant.
#[derive(Debug, Clone)]
pub struct OnlineStats {
    /// Total network updates performed; equals rounds * samples * steps.
    pub theta_updates: usize,
    pub mean_first_loss: f64,
    pub mean_final_loss: f64,
}

/// Online ablation: one latent step then one network step, no buffer. Uses
/// the same total network-update budget (B*N*T) as the alternating trainer.
pub fn online_train(
    mut theta: Mlp,
    model: &ForwardModel,
    objective: &Objective,
    source: &mut dyn ObservationSource,
    cfg: TrainConfig,
) -> Result<(Mlp, OnlineStats)> {
    cfg.validate()?;
    let mut theta_opt = Optimizer::new(cfg.theta_optimizer.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples = cfg.rounds * cfg.samples_per_round;
    let d_z = theta.in_dim();
    let mut theta_updates = 0usize;
    let mut first_losses = Vec::with_capacity(samples);
    let mut final_losses = Vec::with_capacity(samples);

    for _ in 0..samples {
        let obs = source.next_observation()?;
        let init_seed = rng.gen::<u64>();
        let init = cfg.init.sample(d_z, init_seed)?;
        let mut z = Tensor::vector(init).with_grad();
        let mut z_opt = Optimizer::new(cfg.z_optimizer.clone());
        let mut last_loss = f64::NAN;

        for t in 0..cfg.steps_per_trajectory {
            // latent step under the current network
            let mut tape = Tape::new();
            let leaf = tape.leaf(&z);
            let x = theta.forward_frozen(&mut tape, leaf)?;
            let loss_var = pipeline_loss_on(&mut tape, model, objective, &obs, x)?;
            let loss = tape.scalar_value(loss_var)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { step: t, loss, context: "online".into() });
            }
            if t == 0 {
                first_losses.push(loss);
            }
            tape.backward(loss_var)?;
            z.zero_grad();
            z.accumulate_grad_from(&tape, leaf)?;
            z_opt.step(&mut [&mut z])?;

            // immediate network step at the new latent
            let mut tape = Tape::new();
            let zc = tape.constant(vec![d_z], z.values().to_vec())?;
            let vars = theta.forward_on(&mut tape, zc)?;
            let loss_var = pipeline_loss_on(&mut tape, model, objective, &obs, vars.output)?;
            last_loss = tape.scalar_value(loss_var)?;
            if !last_loss.is_finite() {
                return Err(Error::Divergence {
                    step: t,
                    loss: last_loss,
                    context: "online".into(),
                });
            }
            tape.backward(loss_var)?;
            theta.zero_grads();
            theta.accumulate_grads_from(&tape, &vars)?;
            theta_opt.step(&mut theta.params_mut())?;
            theta_updates += 1;
        }
        final_losses.push(last_loss);
    }

    if theta.flat_values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            step: samples,
            loss: f64::NAN,
            context: "mapping network parameters became non-finite".into(),
        });
    }
    let stats = OnlineStats {
        theta_updates,
        mean_first_loss: first_losses.iter().sum::<f64>() / first_losses.len() as f64,
        mean_final_loss: final_losses.iter().sum::<f64>() / final_losses.len() as f64,
    };
    Ok((theta, stats))
}
