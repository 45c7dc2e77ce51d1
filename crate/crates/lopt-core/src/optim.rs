//! First-order update rules for latent points and mapping-network weights.
//!
//! All rules step in the descent direction: `param -= lr * direction`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which update rule to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
    AdamW,
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "adamw" => Ok(OptimizerKind::AdamW),
            other => Err(Error::config(format!("unknown optimizer kind: {other}"))),
        }
    }
}

/// Hyperparameters for one optimizer instance.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr,
            ..OptimizerConfig::sgd(lr)
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::AdamW,
            lr,
            weight_decay,
            ..OptimizerConfig::sgd(lr)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state: config plus per-parameter moment buffers and a step
/// counter. One instance per optimized parameter set; never shared.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    moments: Vec<Moments>,
    step_count: u64,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Optimizer {
            cfg,
            moments: Vec::new(),
            step_count: 0,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to every parameter from its populated gradient.
    ///
    /// The parameter list must be the same set, in the same order, on every
    /// call; moment buffers are keyed by position.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.moments.is_empty() {
            for p in params.iter() {
                self.moments.push(Moments {
                    m: vec![0.0; p.numel()],
                    v: vec![0.0; p.numel()],
                });
            }
        }
        if self.moments.len() != params.len() {
            return Err(Error::contract(format!(
                "optimizer saw {} params, expected {}",
                params.len(),
                self.moments.len()
            )));
        }
        for (p, mom) in params.iter().zip(&self.moments) {
            if mom.m.len() != p.numel() {
                return Err(Error::contract(format!(
                    "optimizer moment buffer length {} does not match parameter of {} elements",
                    mom.m.len(),
                    p.numel()
                )));
            }
            if p.grad().is_none() {
                return Err(Error::contract(
                    "optimizer step with unpopulated gradient",
                ));
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let cfg = &self.cfg;
        for (p, mom) in params.iter_mut().zip(self.moments.iter_mut()) {
            let grad = p.grad().unwrap().to_vec();
            let values = p.values_mut();
            match cfg.kind {
                OptimizerKind::Sgd => {
                    for (x, g) in values.iter_mut().zip(&grad) {
                        *x -= cfg.lr * g;
                    }
                }
                OptimizerKind::Adam | OptimizerKind::AdamW => {
                    let bc1 = 1.0 - cfg.beta1.powi(t);
                    let bc2 = 1.0 - cfg.beta2.powi(t);
                    for i in 0..values.len() {
                        let g = grad[i];
                        mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g;
                        mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g * g;
                        let m_hat = mom.m[i] / bc1;
                        let v_hat = mom.v[i] / bc2;
                        let mut update = cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
                        if cfg.kind == OptimizerKind::AdamW {
                            // decoupled decay, applied to the pre-step value
                            update += cfg.lr * cfg.weight_decay * values[i];
                        }
                        values[i] -= update;
                    }
                }
            }
        }
        Ok(())
    }

    /// Serializes moments as flat (m, v) pairs in parameter order.
    pub fn moment_buffers(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.moments
            .iter()
            .map(|mm| (mm.m.clone(), mm.v.clone()))
            .collect()
    }

    /// Restores state captured by [`Optimizer::moment_buffers`].
    pub fn restore(cfg: OptimizerConfig, step_count: u64, buffers: Vec<(Vec<f64>, Vec<f64>)>) -> Self {
        Optimizer {
            cfg,
            moments: buffers.into_iter().map(|(m, v)| Moments { m, v }).collect(),
            step_count,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: Vec<f64>) -> Tensor {
        Tensor::vector(values).with_grad()
    }

    #[test]
    fn sgd_definition() {
        let mut p = param(vec![1.0]);
        p.accumulate_grad(&[2.0]).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1));
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.values()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        // closed form: m_hat = g, v_hat = g^2, update = lr * g/(|g| + eps)
        for &g in &[3.7, -0.004, 120.0] {
            let mut p = param(vec![0.0]);
            p.accumulate_grad(&[g]).unwrap();
            let mut opt = Optimizer::new(OptimizerConfig::adam(0.1));
            opt.step(&mut [&mut p]).unwrap();
            let expected = -0.1 * g.signum();
            assert!(
                (p.values()[0] - expected).abs() < 1e-6,
                "g={g}: {} vs {expected}",
                p.values()[0]
            );
        }
    }

    #[test]
    fn adamw_zero_grad_is_pure_decay() {
        let mut p = param(vec![1.0]);
        p.accumulate_grad(&[0.0]).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::adamw(1e-4, 0.1));
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.values()[0] - (1.0 - 1e-5)).abs() < 1e-18);
    }

    #[test]
    fn zero_grad_leaves_sgd_and_adam_fixed() {
        for cfg in [OptimizerConfig::sgd(0.5), OptimizerConfig::adam(0.5)] {
            let mut p = param(vec![2.5, -1.0]);
            p.accumulate_grad(&[0.0, 0.0]).unwrap();
            let before = p.values().to_vec();
            let mut opt = Optimizer::new(cfg);
            opt.step(&mut [&mut p]).unwrap();
            assert_eq!(p.values(), before.as_slice());
        }
    }

    #[test]
    fn unpopulated_grad_is_contract_violation() {
        let mut p = param(vec![1.0]);
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1));
        let err = opt.step(&mut [&mut p]).unwrap_err();
        assert!(matches!(err, Error::ContractViolation(_)));
    }

    #[test]
    fn step_counter_increments() {
        let mut p = param(vec![1.0]);
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1));
        for expected in 1..=3 {
            p.zero_grad();
            p.accumulate_grad(&[1.0]).unwrap();
            opt.step(&mut [&mut p]).unwrap();
            assert_eq!(opt.step_count(), expected);
        }
    }

    #[test]
    fn adam_first_step_invariant_to_grad_rescaling() {
        let base = {
            let mut p = param(vec![0.0]);
            p.accumulate_grad(&[0.3]).unwrap();
            let mut opt = Optimizer::new(OptimizerConfig::adam(0.05));
            opt.step(&mut [&mut p]).unwrap();
            p.values()[0]
        };
        let scaled = {
            let mut p = param(vec![0.0]);
            p.accumulate_grad(&[30.0]).unwrap();
            let mut opt = Optimizer::new(OptimizerConfig::adam(0.05));
            opt.step(&mut [&mut p]).unwrap();
            p.values()[0]
        };
        assert!((base - scaled).abs() < 1e-6);
    }

    #[test]
    fn moment_round_trip_restores_state() {
        let mut p = param(vec![1.0, 2.0]);
        let mut opt = Optimizer::new(OptimizerConfig::adamw(0.01, 0.1));
        for _ in 0..5 {
            p.zero_grad();
            p.accumulate_grad(&[0.5, -0.25]).unwrap();
            opt.step(&mut [&mut p]).unwrap();
        }
        let restored = Optimizer::restore(
            opt.config().clone(),
            opt.step_count(),
            opt.moment_buffers(),
        );
        assert_eq!(restored, opt);
    }
}
