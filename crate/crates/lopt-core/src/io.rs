//! Structured text containers and CSV export.
//!
//! One line-oriented container carries every on-disk artifact: weight files,
//! checkpoints, oracle fixtures and observation sets, distinguished by their
//! version line. Floats are written with Rust's shortest round-trip
//! formatting, so save/load is bit-exact and diffs stay readable.
//!
//! Container grammar (after the version line; `#` starts a comment):
//!
//! ```text
//! meta   <key> <value...>
//! scalar <name> <float>
//! array  <name> <ndim> <d0> <d1> ...
//! <numel floats on one line>
//! ```

use crate::error::{Error, Result};
use crate::infer::{InferenceConfig, InitPolicy};
use crate::models::{Activation, ForwardModel, Linear, MiniDecoder, Mlp, RuggedDecoder};
use crate::objective::{Objective, ObjectiveKind, Observation};
use crate::optim::{Optimizer, OptimizerConfig, OptimizerKind};
use crate::oracle::OracleRecord;
use crate::tensor::Tensor;
use std::fmt::Write as _;
use std::path::Path;

pub const WEIGHTS_VERSION: &str = "lopt-weights-v1";
pub const CHECKPOINT_VERSION: &str = "lopt-ckpt-v1";
pub const FIXTURE_VERSION: &str = "lopt-fixture-v1";
pub const OBSERVATIONS_VERSION: &str = "lopt-obs-v1";

/// In-memory form of one structured text file. Entry order is preserved so
/// serialization is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub version: String,
    meta: Vec<(String, String)>,
    scalars: Vec<(String, f64)>,
    arrays: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Container {
    pub fn new(version: &str) -> Self {
        Container {
            version: version.to_string(),
            meta: Vec::new(),
            scalars: Vec::new(),
            arrays: Vec::new(),
        }
    }

    pub fn push_meta(&mut self, key: &str, value: &str) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::invalid(format!("container missing meta field: {key}")))
    }

    pub fn meta_opt(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn push_scalar(&mut self, name: &str, value: f64) {
        self.scalars.push((name.to_string(), value));
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        self.scalars
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::invalid(format!("container missing scalar: {name}")))
    }

    pub fn scalar_opt(&self, name: &str) -> Option<f64> {
        self.scalars.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    pub fn push_array(&mut self, name: &str, shape: &[usize], values: &[f64]) {
        self.arrays
            .push((name.to_string(), shape.to_vec(), values.to_vec()));
    }

    pub fn push_tensor(&mut self, name: &str, tensor: &Tensor) {
        self.push_array(name, tensor.shape(), tensor.values());
    }

    pub fn array(&self, name: &str) -> Result<(&[usize], &[f64])> {
        self.arrays
            .iter()
            .find(|(k, _, _)| k == name)
            .map(|(_, s, v)| (s.as_slice(), v.as_slice()))
            .ok_or_else(|| Error::invalid(format!("container missing array: {name}")))
    }

    pub fn array_opt(&self, name: &str) -> Option<(&[usize], &[f64])> {
        self.arrays
            .iter()
            .find(|(k, _, _)| k == name)
            .map(|(_, s, v)| (s.as_slice(), v.as_slice()))
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let (shape, values) = self.array(name)?;
        Tensor::new(shape.to_vec(), values.to_vec())
    }

    pub fn array_names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|(k, _, _)| k.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.version);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (k, v) in &self.scalars {
            let _ = writeln!(out, "scalar {k} {v}");
        }
        for (name, shape, values) in &self.arrays {
            let _ = write!(out, "array {name} {}", shape.len());
            for d in shape {
                let _ = write!(out, " {d}");
            }
            out.push('\n');
            let mut first = true;
            for v in values {
                if !first {
                    out.push(' ');
                }
                let _ = write!(out, "{v}");
                first = false;
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Container> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (_, version) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, message: "empty container".into() })?;
        let mut container = Container::new(version);

        while let Some((lineno, line)) = lines.next() {
            let mut parts = line.split_whitespace();
            let tag = parts.next().unwrap();
            match tag {
                "meta" => {
                    let key = parts.next().ok_or_else(|| Error::Parse {
                        line: lineno,
                        message: "meta needs a key".into(),
                    })?;
                    let value = parts.collect::<Vec<_>>().join(" ");
                    container.push_meta(key, &value);
                }
                "scalar" => {
                    let name = parts.next().ok_or_else(|| Error::Parse {
                        line: lineno,
                        message: "scalar needs a name".into(),
                    })?;
                    let raw = parts.next().ok_or_else(|| Error::Parse {
                        line: lineno,
                        message: format!("scalar {name} needs a value"),
                    })?;
                    let value: f64 = raw.parse().map_err(|_| Error::Parse {
                        line: lineno,
                        message: format!("bad float: {raw}"),
                    })?;
                    container.push_scalar(name, value);
                }
                "array" => {
                    let name = parts.next().ok_or_else(|| Error::Parse {
                        line: lineno,
                        message: "array needs a name".into(),
                    })?;
                    let ndim: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::Parse {
                            line: lineno,
                            message: format!("array {name} needs a rank"),
                        })?;
                    let mut shape = Vec::with_capacity(ndim);
                    for _ in 0..ndim {
                        let d: usize = parts
                            .next()
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| Error::Parse {
                                line: lineno,
                                message: format!("array {name}: bad shape"),
                            })?;
                        shape.push(d);
                    }
                    let numel: usize = shape.iter().product();
                    let (vline_no, vline) = lines.next().ok_or_else(|| Error::Parse {
                        line: lineno,
                        message: format!("array {name}: missing value line"),
                    })?;
                    let values: Vec<f64> = vline
                        .split_whitespace()
                        .map(|s| {
                            s.parse().map_err(|_| Error::Parse {
                                line: vline_no,
                                message: format!("bad float: {s}"),
                            })
                        })
                        .collect::<Result<_>>()?;
                    if values.len() != numel {
                        return Err(Error::Parse {
                            line: vline_no,
                            message: format!(
                                "array {name}: expected {numel} values, found {}",
                                values.len()
                            ),
                        });
                    }
                    container.arrays.push((name.to_string(), shape, values));
                }
                other => {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("unknown record tag: {other}"),
                    });
                }
            }
        }
        Ok(container)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Container> {
        let text = std::fs::read_to_string(path)?;
        Container::parse(&text)
    }

    fn expect_version(&self, version: &str) -> Result<()> {
        if self.version != version {
            return Err(Error::invalid(format!(
                "expected a {version} file, found {}",
                self.version
            )));
        }
        Ok(())
    }
}

// ---- mlp weights -----------------------------------------------------------

fn write_mlp(container: &mut Container, prefix: &str, net: &Mlp) {
    container.push_meta(
        &format!("{prefix}activation"),
        net.activation.name(),
    );
    if let Activation::LeakyRelu { slope } = net.activation {
        container.push_scalar(&format!("{prefix}activation_slope"), slope);
    }
    container.push_scalar(&format!("{prefix}layers"), net.layers.len() as f64);
    for (i, layer) in net.layers.iter().enumerate() {
        container.push_tensor(&format!("{prefix}layer{i}.weight"), &layer.weight);
        container.push_tensor(&format!("{prefix}layer{i}.bias"), &layer.bias);
    }
}

fn read_mlp(container: &Container, prefix: &str) -> Result<Mlp> {
    let activation = match container.meta(&format!("{prefix}activation"))? {
        "tanh" => Activation::Tanh,
        "leaky_relu" => Activation::LeakyRelu {
            slope: container.scalar(&format!("{prefix}activation_slope"))?,
        },
        other => return Err(Error::invalid(format!("unknown activation: {other}"))),
    };
    let count = container.scalar(&format!("{prefix}layers"))? as usize;
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        layers.push(Linear {
            weight: container.tensor(&format!("{prefix}layer{i}.weight"))?,
            bias: container.tensor(&format!("{prefix}layer{i}.bias"))?,
        });
    }
    Mlp::new(layers, activation)
}

/// Writes a network to a weights file.
pub fn save_mlp(path: &Path, net: &Mlp) -> Result<()> {
    let mut container = Container::new(WEIGHTS_VERSION);
    write_mlp(&mut container, "", net);
    container.save(path)
}

/// Reads a network from a weights file. Loaded parameters do not require
/// gradients; callers opt in for training.
pub fn load_mlp(path: &Path) -> Result<Mlp> {
    let container = Container::load(path)?;
    container.expect_version(WEIGHTS_VERSION)?;
    read_mlp(&container, "")
}

// ---- forward models --------------------------------------------------------

fn write_model(container: &mut Container, prefix: &str, model: &ForwardModel) {
    container.push_meta(&format!("{prefix}kind"), model.kind_name());
    match model {
        ForwardModel::Rugged(r) => {
            container.push_tensor(&format!("{prefix}amplitude"), &r.amplitude);
            container.push_tensor(&format!("{prefix}frequency"), &r.frequency);
            container.push_tensor(&format!("{prefix}phase"), &r.phase);
            container.push_tensor(&format!("{prefix}linear"), &r.linear);
        }
        ForwardModel::Mini(m) => {
            container.push_scalar(&format!("{prefix}d_x"), m.input_dim() as f64);
            container.push_scalar(&format!("{prefix}d_y"), m.output_dim() as f64);
            if let Ok(weights) = m.weights() {
                write_mlp(container, &format!("{prefix}net."), weights);
            }
        }
        ForwardModel::Additive { inner, anchor } => {
            container.push_tensor(&format!("{prefix}anchor"), anchor);
            write_model(container, &format!("{prefix}inner."), inner);
        }
    }
}

fn read_model(container: &Container, prefix: &str) -> Result<ForwardModel> {
    match container.meta(&format!("{prefix}kind"))? {
        "rugged" => Ok(ForwardModel::Rugged(RuggedDecoder::from_parts(
            container.tensor(&format!("{prefix}amplitude"))?,
            container.tensor(&format!("{prefix}frequency"))?,
            container.tensor(&format!("{prefix}phase"))?,
            container.tensor(&format!("{prefix}linear"))?,
        )?)),
        "mini" => {
            if container.meta_opt(&format!("{prefix}net.activation")).is_some() {
                Ok(ForwardModel::Mini(MiniDecoder::with_weights(read_mlp(
                    container,
                    &format!("{prefix}net."),
                )?)))
            } else {
                let d_x = container.scalar(&format!("{prefix}d_x"))? as usize;
                let d_y = container.scalar(&format!("{prefix}d_y"))? as usize;
                Ok(ForwardModel::Mini(MiniDecoder::uninitialized(d_x, d_y)))
            }
        }
        "additive" => {
            let anchor = container.tensor(&format!("{prefix}anchor"))?;
            let inner = read_model(container, &format!("{prefix}inner."))?;
            ForwardModel::additive(inner, anchor)
        }
        other => Err(Error::invalid(format!("unknown model kind: {other}"))),
    }
}

// ---- objectives ------------------------------------------------------------

fn write_objective(container: &mut Container, prefix: &str, objective: &Objective) {
    container.push_meta(&format!("{prefix}kind"), objective.kind().name());
    container.push_scalar(&format!("{prefix}decay"), objective.decay());
    if let Some(projection) = objective.feature_projection() {
        container.push_tensor(&format!("{prefix}projection"), projection);
    }
    if let Some(mask) = objective.mask() {
        let bits: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        container.push_array(&format!("{prefix}mask"), &[bits.len()], &bits);
    }
}

fn read_objective(container: &Container, prefix: &str) -> Result<Objective> {
    let kind = ObjectiveKind::parse(container.meta(&format!("{prefix}kind"))?)?;
    let decay = container.scalar(&format!("{prefix}decay"))?;
    let mut objective = match kind {
        ObjectiveKind::L2 => Objective::l2(),
        ObjectiveKind::L2PlusFeature => {
            Objective::with_projection(container.tensor(&format!("{prefix}projection"))?)?
        }
        ObjectiveKind::TaskPlusDecay => Objective::task_plus_decay(decay)?,
    };
    if let Some((_, bits)) = container.array_opt(&format!("{prefix}mask")) {
        objective = objective.with_mask(bits.iter().map(|&b| b != 0.0).collect())?;
    }
    Ok(objective)
}

// ---- checkpoints -----------------------------------------------------------

/// A self-contained training snapshot: everything needed to resume training
/// or run inference, including the experiment's inference defaults.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub round: usize,
    pub seed: u64,
    pub theta: Mlp,
    pub theta_opt: Optimizer,
    pub model: ForwardModel,
    pub objective: Objective,
    pub infer: InferenceConfig,
}

fn write_optimizer_config(container: &mut Container, prefix: &str, cfg: &OptimizerConfig) {
    container.push_meta(&format!("{prefix}kind"), cfg.kind.name());
    container.push_scalar(&format!("{prefix}lr"), cfg.lr);
    container.push_scalar(&format!("{prefix}beta1"), cfg.beta1);
    container.push_scalar(&format!("{prefix}beta2"), cfg.beta2);
    container.push_scalar(&format!("{prefix}epsilon"), cfg.epsilon);
    container.push_scalar(&format!("{prefix}weight_decay"), cfg.weight_decay);
}

fn read_optimizer_config(container: &Container, prefix: &str) -> Result<OptimizerConfig> {
    Ok(OptimizerConfig {
        kind: OptimizerKind::parse(container.meta(&format!("{prefix}kind"))?)?,
        lr: container.scalar(&format!("{prefix}lr"))?,
        beta1: container.scalar(&format!("{prefix}beta1"))?,
        beta2: container.scalar(&format!("{prefix}beta2"))?,
        epsilon: container.scalar(&format!("{prefix}epsilon"))?,
        weight_decay: container.scalar(&format!("{prefix}weight_decay"))?,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut container = Container::new(CHECKPOINT_VERSION);
    container.push_scalar("round", ckpt.round as f64);
    container.push_scalar("seed", ckpt.seed as f64);
    write_mlp(&mut container, "theta.", &ckpt.theta);
    write_model(&mut container, "model.", &ckpt.model);
    write_objective(&mut container, "objective.", &ckpt.objective);

    write_optimizer_config(&mut container, "opt.", ckpt.theta_opt.config());
    container.push_scalar("opt.step", ckpt.theta_opt.step_count() as f64);
    for (i, (m, v)) in ckpt.theta_opt.moment_buffers().iter().enumerate() {
        container.push_array(&format!("opt.m{i}"), &[m.len()], m);
        container.push_array(&format!("opt.v{i}"), &[v.len()], v);
    }

    container.push_scalar("infer.steps", ckpt.infer.steps as f64);
    write_optimizer_config(&mut container, "infer.opt.", &ckpt.infer.optimizer);
    match ckpt.infer.init {
        InitPolicy::Zero => container.push_meta("infer.init", "zero"),
        InitPolicy::Gaussian { sigma } => {
            container.push_meta("infer.init", "gaussian");
            container.push_scalar("infer.init_sigma", sigma);
        }
    }
    container.push_scalar("infer.hypotheses", ckpt.infer.hypotheses as f64);
    container.push_scalar("infer.seed", ckpt.infer.seed as f64);
    container.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let container = Container::load(path)?;
    container.expect_version(CHECKPOINT_VERSION)?;

    let mut theta = read_mlp(&container, "theta.")?;
    for p in theta.params_mut() {
        p.set_requires_grad(true);
    }

    let cfg = read_optimizer_config(&container, "opt.")?;
    let step = container.scalar("opt.step")? as u64;
    let mut buffers = Vec::new();
    let mut i = 0;
    while let Some((_, m)) = container.array_opt(&format!("opt.m{i}")) {
        let (_, v) = container.array(&format!("opt.v{i}"))?;
        buffers.push((m.to_vec(), v.to_vec()));
        i += 1;
    }
    let theta_opt = Optimizer::restore(cfg, step, buffers);

    let init = match container.meta("infer.init")? {
        "zero" => InitPolicy::Zero,
        "gaussian" => InitPolicy::Gaussian { sigma: container.scalar("infer.init_sigma")? },
        other => return Err(Error::invalid(format!("unknown init policy: {other}"))),
    };
    let infer = InferenceConfig {
        steps: container.scalar("infer.steps")? as usize,
        optimizer: read_optimizer_config(&container, "infer.opt.")?,
        init,
        hypotheses: container.scalar("infer.hypotheses")? as usize,
        seed: container.scalar("infer.seed")? as u64,
    };

    Ok(Checkpoint {
        round: container.scalar("round")? as usize,
        seed: container.scalar("seed")? as u64,
        theta,
        theta_opt,
        model: read_model(&container, "model.")?,
        objective: read_objective(&container, "objective.")?,
        infer,
    })
}

/// First 16 hex chars of the sha-256 of arbitrary text; stamps CSV comments
/// with the provenance of the artifact that produced them.
pub fn content_hash(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

// ---- observation sets ------------------------------------------------------

pub fn save_observations(path: &Path, observations: &[Observation]) -> Result<()> {
    if observations.is_empty() {
        return Err(Error::invalid("cannot save an empty observation set"));
    }
    let d = observations[0].dim();
    if observations.iter().any(|o| o.dim() != d) {
        return Err(Error::invalid("observations have mixed dimensions"));
    }
    let mut container = Container::new(OBSERVATIONS_VERSION);
    let flat: Vec<f64> = observations.iter().flat_map(|o| o.y().to_vec()).collect();
    container.push_array("obs", &[observations.len(), d], &flat);
    if observations.iter().any(|o| o.mask().is_some()) {
        let bits: Vec<f64> = observations
            .iter()
            .flat_map(|o| match o.mask() {
                Some(m) => m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect::<Vec<_>>(),
                None => vec![1.0; d],
            })
            .collect();
        container.push_array("mask", &[observations.len(), d], &bits);
    }
    container.save(path)
}

pub fn load_observations(path: &Path) -> Result<Vec<Observation>> {
    let container = Container::load(path)?;
    container.expect_version(OBSERVATIONS_VERSION)?;
    let (shape, values) = container.array("obs")?;
    if shape.len() != 2 {
        return Err(Error::invalid("observation array must be 2-d"));
    }
    let (n, d) = (shape[0], shape[1]);
    let mask = container.array_opt("mask").map(|(_, bits)| bits.to_vec());
    (0..n)
        .map(|i| {
            let obs = Observation::new(values[i * d..(i + 1) * d].to_vec())?;
            match &mask {
                Some(bits) => {
                    let row: Vec<bool> = bits[i * d..(i + 1) * d].iter().map(|&b| b != 0.0).collect();
                    if row.iter().all(|&b| b) {
                        Ok(obs)
                    } else {
                        obs.with_mask(row)
                    }
                }
                None => Ok(obs),
            }
        })
        .collect()
}

// ---- oracle fixtures -------------------------------------------------------

pub fn save_oracle_record(path: &Path, record: &OracleRecord) -> Result<()> {
    let mut container = Container::new(FIXTURE_VERSION);
    container.push_meta("oracle", &record.name);
    container.push_meta("created", &record.created);
    container.push_scalar("seed", record.seed as f64);
    container.push_scalar("tolerance", record.tolerance);
    let dims: Vec<f64> = record.dims.iter().map(|&d| d as f64).collect();
    container.push_array("dims", &[dims.len()], &dims);
    for (key, values) in &record.expected {
        container.push_array(&format!("expected.{key}"), &[values.len()], values);
    }
    container.save(path)
}

pub fn parse_oracle_record(text: &str) -> Result<OracleRecord> {
    let container = Container::parse(text)?;
    container.expect_version(FIXTURE_VERSION)?;
    let (_, dims) = container.array("dims")?;
    let expected = container
        .array_names()
        .filter_map(|name| name.strip_prefix("expected.").map(str::to_string))
        .collect::<Vec<_>>()
        .into_iter()
        .map(|key| {
            let (_, values) = container.array(&format!("expected.{key}")).unwrap();
            (key, values.to_vec())
        })
        .collect();
    Ok(OracleRecord {
        name: container.meta("oracle")?.to_string(),
        seed: container.scalar("seed")? as u64,
        dims: dims.iter().map(|&d| d as usize).collect(),
        expected,
        tolerance: container.scalar("tolerance")?,
        created: container.meta("created")?.to_string(),
    })
}

pub fn load_oracle_record(path: &Path) -> Result<OracleRecord> {
    parse_oracle_record(&std::fs::read_to_string(path)?)
}

// ---- csv export ------------------------------------------------------------

use crate::analysis::{AblationReport, CurvePoint, LandscapeGrid};
use crate::infer::InferenceTrace;
use crate::trainer::RoundStats;

fn write_csv(path: &Path, comment: &str, header: &str, rows: &[String]) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# {comment}");
    let _ = writeln!(out, "{header}");
    for row in rows {
        let _ = writeln!(out, "{row}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One trace: `step,loss,v0,v1,...` where v columns are the optimized
/// variable snapshot.
pub fn write_trace_csv(path: &Path, trace: &InferenceTrace, comment: &str) -> Result<()> {
    let dim = trace.records.first().map_or(0, |r| r.snapshot.len());
    let mut header = String::from("step,loss");
    for i in 0..dim {
        let _ = write!(header, ",v{i}");
    }
    let rows: Vec<String> = trace
        .records
        .iter()
        .map(|r| {
            let mut row = format!("{},{}", r.step, r.loss);
            for v in &r.snapshot {
                let _ = write!(row, ",{v}");
            }
            row
        })
        .collect();
    write_csv(path, comment, &header, &rows)
}

/// Aggregated long-format traces: `run,step,loss`.
pub fn write_traces_long_csv(
    path: &Path,
    traces: &[(String, InferenceTrace)],
    comment: &str,
) -> Result<()> {
    let mut rows = Vec::new();
    for (run, trace) in traces {
        for r in &trace.records {
            rows.push(format!("{run},{},{}", r.step, r.loss));
        }
    }
    write_csv(path, comment, "run,step,loss", &rows)
}

pub fn write_grid_csv(path: &Path, grid: &LandscapeGrid, comment: &str) -> Result<()> {
    let mut rows = Vec::with_capacity(grid.losses.len());
    for ai in 0..grid.resolution {
        for bi in 0..grid.resolution {
            rows.push(format!(
                "{},{},{}",
                grid.offset(ai),
                grid.offset(bi),
                grid.loss_at(ai, bi)
            ));
        }
    }
    write_csv(path, comment, "alpha,beta,loss", &rows)
}

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint], comment: &str) -> Result<()> {
    let rows: Vec<String> = curve
        .iter()
        .map(|p| format!("{},{},{},{}", p.step, p.mean, p.stderr, p.n))
        .collect();
    write_csv(path, comment, "step,mean,stderr,n", &rows)
}

pub fn write_round_stats_csv(path: &Path, stats: &[RoundStats], comment: &str) -> Result<()> {
    let rows: Vec<String> = stats
        .iter()
        .map(|s| {
            format!(
                "{},{},{},{},{}",
                s.round,
                s.collect.mean_entry_loss,
                s.collect.retries,
                s.train.mean_loss_before,
                s.train.mean_loss_after
            )
        })
        .collect();
    write_csv(
        path,
        comment,
        "round,collect_mean_loss,retries,train_mean_before,train_mean_after",
        &rows,
    )
}

pub fn write_ablation_csv(path: &Path, report: &AblationReport, comment: &str) -> Result<()> {
    let mut rows = Vec::new();
    for (label, means) in &report.rows {
        for (steps, mean) in report.step_counts.iter().zip(means) {
            rows.push(format!("{label},{steps},{mean}"));
        }
    }
    write_csv(path, comment, "variant,steps,mean_loss", &rows)
}
