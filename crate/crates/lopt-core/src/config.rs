//! Experiment configuration: named presets plus a flat key-value text
//! format with overrides.
//!
//! A config file is `key value` lines, `#` comments. A `preset` line picks
//! the base; every other line overrides one field. `seed` must be explicit
//! in every file. Serialization emits the fully resolved config in a fixed
//! key order, so configs are diffable and round-trip exactly.

use crate::error::{Error, Result};
use crate::infer::{InferenceConfig, InitPolicy};
use crate::models::{
    fit_mini_decoder, mini_decoder_dataset, ForwardModel, MiniDecoder, Mlp, RuggedDecoder,
};
use crate::objective::{Objective, ObjectiveKind};
use crate::optim::{OptimizerConfig, OptimizerKind};
use crate::tensor::Tensor;
use crate::trainer::TrainConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

/// Epochs and learning rate used when a mini decoder is built from config.
const MINI_FIT_EPOCHS: usize = 40;
const MINI_FIT_LR: f64 = 0.01;
const MINI_FIT_SAMPLES: usize = 192;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Rugged,
    Mini,
    Additive,
}

impl ModelKind {
    fn name(&self) -> &'static str {
        match self {
            ModelKind::Rugged => "rugged",
            ModelKind::Mini => "mini",
            ModelKind::Additive => "additive",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "rugged" => Ok(ModelKind::Rugged),
            "mini" => Ok(ModelKind::Mini),
            "additive" => Ok(ModelKind::Additive),
            other => Err(Error::config(format!("unknown model kind: {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub d_x: usize,
    pub d_y: usize,
    pub features: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSection {
    pub kind: ObjectiveKind,
    pub decay: f64,
    pub feature_seed: u64,
    /// Mask literal: bitstring ("0011", 1 = visible) or comma-separated
    /// visible indices ("0,3,5"). Empty = no mask.
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSection {
    pub d_z: usize,
    pub hidden: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub rounds: usize,
    pub samples: usize,
    pub steps: usize,
    pub z_opt: OptimizerKind,
    pub z_lr: f64,
    pub theta_opt: OptimizerKind,
    pub theta_lr: f64,
    pub theta_weight_decay: f64,
    pub init: String, // "zero" or "gaussian"
    pub init_sigma: f64,
    pub prior_sigma: f64,
    pub noise_sigma: f64,
    pub checkpoint_every: usize,
    pub online: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferSection {
    pub steps: usize,
    pub opt: OptimizerKind,
    pub lr: f64,
    pub init: String,
    pub init_sigma: f64,
    pub hypotheses: usize,
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: String,
    pub seed: u64,
    pub out_dir: String,
    pub threads: usize,
    pub model: ModelSection,
    pub objective: ObjectiveSection,
    pub theta: ThetaSection,
    pub train: TrainSection,
    pub infer: InferSection,
}

pub const PRESET_NAMES: &[&str] = &["rugged-desk", "gan-like", "pose-like", "defense-like"];

impl ExperimentConfig {
    /// Desk-scale default: the small rugged inversion suite every test and
    /// acceptance run uses.
    pub fn rugged_desk() -> Self {
        ExperimentConfig {
            preset: "rugged-desk".into(),
            seed: 42,
            out_dir: "out".into(),
            threads: 0,
            model: ModelSection {
                kind: ModelKind::Rugged,
                d_x: 2,
                d_y: 8,
                features: 16,
                seed: 7,
            },
            objective: ObjectiveSection {
                kind: ObjectiveKind::L2,
                decay: 0.0,
                feature_seed: 17,
                mask: String::new(),
            },
            theta: ThetaSection { d_z: 4, hidden: 64, seed: 11 },
            // Plain sgd for the latent at desk scale: its steps carry the
            // full gradient magnitude, which the mapping network learns to
            // amplify; the larger presets keep adam per their published
            // settings.
            train: TrainSection {
                rounds: 50,
                samples: 64,
                steps: 20,
                z_opt: OptimizerKind::Sgd,
                z_lr: 0.01,
                theta_opt: OptimizerKind::AdamW,
                theta_lr: 2e-3,
                theta_weight_decay: 0.1,
                init: "zero".into(),
                init_sigma: 1.0,
                prior_sigma: 1.5,
                noise_sigma: 0.0,
                checkpoint_every: 10,
                online: false,
            },
            infer: InferSection {
                steps: 20,
                opt: OptimizerKind::Sgd,
                lr: 0.01,
                init: "zero".into(),
                init_sigma: 1.0,
                hypotheses: 1,
            },
        }
    }

    /// Image-generator preset: hidden 1024, equal latent and input dims,
    /// T=20 / N=256 / B=500, adam 0.1 for latents, adamw 1e-4 with weight
    /// decay 0.1 for the network, two-term reconstruction loss.
    pub fn gan_like() -> Self {
        let mut cfg = Self::rugged_desk();
        cfg.preset = "gan-like".into();
        cfg.model = ModelSection { kind: ModelKind::Rugged, d_x: 8, d_y: 32, features: 32, seed: 7 };
        cfg.objective.kind = ObjectiveKind::L2PlusFeature;
        cfg.theta = ThetaSection { d_z: 8, hidden: 1024, seed: 11 };
        cfg.train.rounds = 500;
        cfg.train.samples = 256;
        cfg.train.steps = 20;
        cfg.train.z_opt = OptimizerKind::Adam;
        cfg.train.z_lr = 0.1;
        cfg.train.theta_lr = 1e-4;
        cfg.infer.steps = 20;
        cfg.infer.opt = OptimizerKind::Adam;
        cfg.infer.lr = 0.1;
        cfg
    }

    /// Pose preset: over-parameterized latent space (128 -> 32), hidden 512,
    /// T=200 / N=40960 / B=500, network lr 0.005.
    pub fn pose_like() -> Self {
        let mut cfg = Self::rugged_desk();
        cfg.preset = "pose-like".into();
        cfg.model = ModelSection { kind: ModelKind::Mini, d_x: 32, d_y: 63, features: 0, seed: 7 };
        cfg.objective.kind = ObjectiveKind::L2;
        cfg.theta = ThetaSection { d_z: 128, hidden: 512, seed: 11 };
        cfg.train.rounds = 500;
        cfg.train.samples = 40960;
        cfg.train.steps = 200;
        cfg.train.z_opt = OptimizerKind::Adam;
        cfg.train.z_lr = 0.1;
        cfg.train.theta_lr = 5e-3;
        cfg.infer.steps = 200;
        cfg.infer.opt = OptimizerKind::Adam;
        cfg.infer.lr = 0.1;
        cfg
    }

    /// Additive-correction preset: 3072 -> 3072 with hidden 3072, T=5 /
    /// N=5120 / B=70, latent lr 0.2/255, decay weight 1, random starts.
    pub fn defense_like() -> Self {
        let mut cfg = Self::rugged_desk();
        cfg.preset = "defense-like".into();
        cfg.model =
            ModelSection { kind: ModelKind::Additive, d_x: 3072, d_y: 3072, features: 64, seed: 7 };
        cfg.objective.kind = ObjectiveKind::TaskPlusDecay;
        cfg.objective.decay = 1.0;
        cfg.theta = ThetaSection { d_z: 3072, hidden: 3072, seed: 11 };
        cfg.train.rounds = 70;
        cfg.train.samples = 5120;
        cfg.train.steps = 5;
        cfg.train.z_opt = OptimizerKind::Adam;
        cfg.train.z_lr = 0.2 / 255.0;
        cfg.train.theta_lr = 1e-4;
        cfg.train.init = "gaussian".into();
        cfg.infer.steps = 5;
        cfg.infer.opt = OptimizerKind::Adam;
        cfg.infer.lr = 0.2 / 255.0;
        cfg.infer.init = "gaussian".into();
        cfg
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "rugged-desk" => Ok(Self::rugged_desk()),
            "gan-like" => Ok(Self::gan_like()),
            "pose-like" => Ok(Self::pose_like()),
            "defense-like" => Ok(Self::defense_like()),
            other => Err(Error::config(format!(
                "unknown preset {other}; expected one of {PRESET_NAMES:?}"
            ))),
        }
    }

    /// Parses a config file: preset base plus per-key overrides. `seed` must
    /// appear explicitly.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(usize, String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once(char::is_whitespace).ok_or_else(|| {
                Error::config(format!("line {}: expected 'key value', got '{line}'", lineno + 1))
            })?;
            pairs.push((lineno + 1, key.to_string(), value.trim().to_string()));
        }

        let mut cfg = match pairs.iter().find(|(_, k, _)| k == "preset") {
            Some((_, _, name)) => Self::preset(name)?,
            None => Self::rugged_desk(),
        };
        let mut saw_seed = false;
        for (lineno, key, value) in &pairs {
            if key == "preset" {
                continue;
            }
            if key == "seed" {
                saw_seed = true;
            }
            cfg.set(key, value)
                .map_err(|e| Error::config(format!("line {lineno}: {e}")))?;
        }
        if !saw_seed {
            return Err(Error::config("config must set an explicit seed"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::config(format!("bad value for {key}: {value}")))
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "out" => self.out_dir = value.to_string(),
            "threads" => self.threads = num(key, value)?,
            "model.kind" => self.model.kind = ModelKind::parse(value)?,
            "model.d_x" => self.model.d_x = num(key, value)?,
            "model.d_y" => self.model.d_y = num(key, value)?,
            "model.features" => self.model.features = num(key, value)?,
            "model.seed" => self.model.seed = num(key, value)?,
            "objective.kind" => self.objective.kind = ObjectiveKind::parse(value)?,
            "objective.decay" => self.objective.decay = num(key, value)?,
            "objective.feature_seed" => self.objective.feature_seed = num(key, value)?,
            "objective.mask" => self.objective.mask = value.to_string(),
            "theta.d_z" => self.theta.d_z = num(key, value)?,
            "theta.hidden" => self.theta.hidden = num(key, value)?,
            "theta.seed" => self.theta.seed = num(key, value)?,
            "train.rounds" => self.train.rounds = num(key, value)?,
            "train.samples" => self.train.samples = num(key, value)?,
            "train.steps" => self.train.steps = num(key, value)?,
            "train.z_opt" => self.train.z_opt = OptimizerKind::parse(value)?,
            "train.z_lr" => self.train.z_lr = num(key, value)?,
            "train.theta_opt" => self.train.theta_opt = OptimizerKind::parse(value)?,
            "train.theta_lr" => self.train.theta_lr = num(key, value)?,
            "train.theta_weight_decay" => self.train.theta_weight_decay = num(key, value)?,
            "train.init" => self.train.init = parse_init_name(value)?,
            "train.init_sigma" => self.train.init_sigma = num(key, value)?,
            "train.prior_sigma" => self.train.prior_sigma = num(key, value)?,
            "train.noise_sigma" => self.train.noise_sigma = num(key, value)?,
            "train.checkpoint_every" => self.train.checkpoint_every = num(key, value)?,
            "train.online" => {
                self.train.online = match value {
                    "true" => true,
                    "false" => false,
                    other => return Err(Error::config(format!("bad bool for {key}: {other}"))),
                }
            }
            "infer.steps" => self.infer.steps = num(key, value)?,
            "infer.opt" => self.infer.opt = OptimizerKind::parse(value)?,
            "infer.lr" => self.infer.lr = num(key, value)?,
            "infer.init" => self.infer.init = parse_init_name(value)?,
            "infer.init_sigma" => self.infer.init_sigma = num(key, value)?,
            "infer.hypotheses" => self.infer.hypotheses = num(key, value)?,
            other => return Err(Error::config(format!("unknown config key: {other}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.rounds < 1 || self.train.samples < 1 || self.train.steps < 1 {
            return Err(Error::config("train.rounds/samples/steps must be >= 1"));
        }
        if self.infer.steps < 1 || self.infer.hypotheses < 1 {
            return Err(Error::config("infer.steps and infer.hypotheses must be >= 1"));
        }
        if self.theta.d_z < 1 || self.theta.hidden < 1 {
            return Err(Error::config("theta dims must be >= 1"));
        }
        if self.model.d_x < 1 || self.model.d_y < 1 {
            return Err(Error::config("model dims must be >= 1"));
        }
        self.parse_mask()?;
        Ok(())
    }

    /// Resolved mask over observation entries, or None.
    pub fn parse_mask(&self) -> Result<Option<Vec<bool>>> {
        parse_mask_literal(&self.objective.mask, self.model.d_y)
    }

    /// Serializes the fully resolved config in fixed key order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let kv = |s: &mut String, k: &str, v: String| {
            s.push_str(k);
            s.push(' ');
            s.push_str(&v);
            s.push('\n');
        };
        kv(&mut s, "preset", self.preset.clone());
        kv(&mut s, "seed", self.seed.to_string());
        kv(&mut s, "out", self.out_dir.clone());
        kv(&mut s, "threads", self.threads.to_string());
        kv(&mut s, "model.kind", self.model.kind.name().into());
        kv(&mut s, "model.d_x", self.model.d_x.to_string());
        kv(&mut s, "model.d_y", self.model.d_y.to_string());
        kv(&mut s, "model.features", self.model.features.to_string());
        kv(&mut s, "model.seed", self.model.seed.to_string());
        kv(&mut s, "objective.kind", self.objective.kind.name().into());
        kv(&mut s, "objective.decay", self.objective.decay.to_string());
        kv(&mut s, "objective.feature_seed", self.objective.feature_seed.to_string());
        if !self.objective.mask.is_empty() {
            kv(&mut s, "objective.mask", self.objective.mask.clone());
        }
        kv(&mut s, "theta.d_z", self.theta.d_z.to_string());
        kv(&mut s, "theta.hidden", self.theta.hidden.to_string());
        kv(&mut s, "theta.seed", self.theta.seed.to_string());
        kv(&mut s, "train.rounds", self.train.rounds.to_string());
        kv(&mut s, "train.samples", self.train.samples.to_string());
        kv(&mut s, "train.steps", self.train.steps.to_string());
        kv(&mut s, "train.z_opt", self.train.z_opt.name().into());
        kv(&mut s, "train.z_lr", self.train.z_lr.to_string());
        kv(&mut s, "train.theta_opt", self.train.theta_opt.name().into());
        kv(&mut s, "train.theta_lr", self.train.theta_lr.to_string());
        kv(&mut s, "train.theta_weight_decay", self.train.theta_weight_decay.to_string());
        kv(&mut s, "train.init", self.train.init.clone());
        kv(&mut s, "train.init_sigma", self.train.init_sigma.to_string());
        kv(&mut s, "train.prior_sigma", self.train.prior_sigma.to_string());
        kv(&mut s, "train.noise_sigma", self.train.noise_sigma.to_string());
        kv(&mut s, "train.checkpoint_every", self.train.checkpoint_every.to_string());
        kv(&mut s, "train.online", self.train.online.to_string());
        kv(&mut s, "infer.steps", self.infer.steps.to_string());
        kv(&mut s, "infer.opt", self.infer.opt.name().into());
        kv(&mut s, "infer.lr", self.infer.lr.to_string());
        kv(&mut s, "infer.init", self.infer.init.clone());
        kv(&mut s, "infer.init_sigma", self.infer.init_sigma.to_string());
        kv(&mut s, "infer.hypotheses", self.infer.hypotheses.to_string());
        s
    }

    /// First 16 hex chars of the sha-256 of the resolved text, with the
    /// output directory and thread count normalized away: the hash
    /// identifies the experiment, not where it runs. Stamped into every CSV
    /// this config produces.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = String::new();
        canonical.threads = 0;
        let digest = Sha256::digest(canonical.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    // -- builders ------------------------------------------------------------

    pub fn build_model(&self) -> Result<ForwardModel> {
        match self.model.kind {
            ModelKind::Rugged => Ok(ForwardModel::Rugged(RuggedDecoder::seeded(
                self.model.d_x,
                self.model.d_y,
                self.model.features,
                self.model.seed,
            ))),
            ModelKind::Mini => {
                let data = mini_decoder_dataset(
                    MINI_FIT_SAMPLES,
                    self.model.d_x,
                    self.model.d_y,
                    self.model.seed,
                );
                let (net, _) =
                    fit_mini_decoder(&data, MINI_FIT_EPOCHS, MINI_FIT_LR, self.model.seed + 7)?;
                Ok(ForwardModel::Mini(MiniDecoder::with_weights(net)))
            }
            ModelKind::Additive => {
                let inner = RuggedDecoder::seeded(
                    self.model.d_x,
                    self.model.d_y,
                    self.model.features,
                    self.model.seed,
                );
                let mut rng = ChaCha8Rng::seed_from_u64(self.model.seed + 101);
                let anchor: Vec<f64> = (0..self.model.d_x)
                    .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                    .collect();
                ForwardModel::additive(ForwardModel::Rugged(inner), Tensor::vector(anchor))
            }
        }
    }

    pub fn build_objective(&self) -> Result<Objective> {
        let objective = match self.objective.kind {
            ObjectiveKind::L2 => Objective::l2(),
            ObjectiveKind::L2PlusFeature => {
                Objective::l2_plus_feature(self.model.d_y, self.objective.feature_seed)
            }
            ObjectiveKind::TaskPlusDecay => Objective::task_plus_decay(self.objective.decay)?,
        };
        match self.parse_mask()? {
            Some(mask) => objective.with_mask(mask),
            None => Ok(objective),
        }
    }

    pub fn build_theta(&self) -> Mlp {
        Mlp::mapping_network(self.theta.d_z, self.theta.hidden, self.model.d_x, self.theta.seed)
    }

    fn optimizer(kind: OptimizerKind, lr: f64, weight_decay: f64) -> OptimizerConfig {
        match kind {
            OptimizerKind::Sgd => OptimizerConfig::sgd(lr),
            OptimizerKind::Adam => OptimizerConfig::adam(lr),
            OptimizerKind::AdamW => OptimizerConfig::adamw(lr, weight_decay),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            rounds: self.train.rounds,
            samples_per_round: self.train.samples,
            steps_per_trajectory: self.train.steps,
            z_optimizer: Self::optimizer(self.train.z_opt, self.train.z_lr, 0.0),
            theta_optimizer: Self::optimizer(
                self.train.theta_opt,
                self.train.theta_lr,
                self.train.theta_weight_decay,
            ),
            init: build_init(&self.train.init, self.train.init_sigma)?,
            seed: self.seed,
        })
    }

    pub fn inference_config(&self) -> Result<InferenceConfig> {
        InferenceConfig::new(
            self.infer.steps,
            Self::optimizer(self.infer.opt, self.infer.lr, 0.0),
            build_init(&self.infer.init, self.infer.init_sigma)?,
            self.seed,
        )?
        .with_hypotheses(self.infer.hypotheses)
    }
}

fn parse_init_name(value: &str) -> Result<String> {
    match value {
        "zero" | "gaussian" => Ok(value.to_string()),
        other => Err(Error::config(format!("unknown init policy: {other}"))),
    }
}

fn build_init(name: &str, sigma: f64) -> Result<InitPolicy> {
    match name {
        "zero" => Ok(InitPolicy::Zero),
        "gaussian" => Ok(InitPolicy::Gaussian { sigma }),
        other => Err(Error::config(format!("unknown init policy: {other}"))),
    }
}

/// Parses a mask literal against dimension `d`. Commas mean an index list of
/// visible entries; otherwise the literal is a 0/1 bitstring of length `d`
/// (1 = visible).
pub fn parse_mask_literal(literal: &str, d: usize) -> Result<Option<Vec<bool>>> {
    let literal = literal.trim();
    if literal.is_empty() {
        return Ok(None);
    }
    let mask = if literal.contains(',') {
        let mut mask = vec![false; d];
        for part in literal.split(',') {
            let idx: usize = part
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("bad mask index: {part}")))?;
            if idx >= d {
                return Err(Error::config(format!("mask index {idx} out of range for dim {d}")));
            }
            mask[idx] = true;
        }
        mask
    } else {
        if literal.len() != d {
            return Err(Error::config(format!(
                "mask bitstring length {} does not match dim {d}",
                literal.len()
            )));
        }
        literal
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::config(format!("bad mask bit: {other}"))),
            })
            .collect::<Result<Vec<bool>>>()?
    };
    if !mask.iter().any(|&m| m) {
        return Err(Error::config("mask hides every entry"));
    }
    Ok(Some(mask))
}
