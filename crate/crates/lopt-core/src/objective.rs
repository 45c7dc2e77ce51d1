//! Loss functions over model outputs, with optional observation masks.
//!
//! Masked entries contribute nothing to the loss value or to gradients:
//! hidden coordinates of the observation never influence the search. The
//! mean is taken over unmasked entries so learning rates transfer across
//! mask densities.

use crate::error::{Error, Result};
use crate::models::ForwardModel;
use crate::tensor::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// A target output, optionally partially observed.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    y: Tensor,
    mask: Option<Vec<bool>>,
}

impl Observation {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observation contains non-finite entries"));
        }
        Ok(Observation { y: Tensor::vector(y), mask: None })
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        validate_mask(&mask, self.y.numel())?;
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn y(&self) -> &[f64] {
        self.y.values()
    }

    pub fn dim(&self) -> usize {
        self.y.numel()
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }
}

fn validate_mask(mask: &[bool], dim: usize) -> Result<()> {
    if mask.len() != dim {
        return Err(Error::DimMismatch {
            op: "mask",
            left: vec![mask.len()],
            right: vec![dim],
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::invalid("mask excludes every entry"));
    }
    Ok(())
}

/// Which terms make up the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    /// Mean squared error over (unmasked) entries.
    L2,
    /// L2 plus a squared error between random projections of prediction and
    /// target, standing in for a perceptual feature distance.
    L2PlusFeature,
    /// L2 task loss plus a decay penalty on the optimized input vector.
    TaskPlusDecay,
}

impl ObjectiveKind {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveKind::L2 => "l2",
            ObjectiveKind::L2PlusFeature => "l2_plus_feature",
            ObjectiveKind::TaskPlusDecay => "task_plus_decay",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(ObjectiveKind::L2),
            "l2_plus_feature" => Ok(ObjectiveKind::L2PlusFeature),
            "task_plus_decay" => Ok(ObjectiveKind::TaskPlusDecay),
            other => Err(Error::config(format!("unknown objective kind: {other}"))),
        }
    }
}

/// Immutable loss specification. Freely shareable across workers.
///
/// The observation's own mask, when present, takes precedence over the
/// objective-level mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    kind: ObjectiveKind,
    feature_projection: Option<Tensor>,
    decay: f64,
    mask: Option<Vec<bool>>,
}

impl Objective {
    pub fn l2() -> Self {
        Objective {
            kind: ObjectiveKind::L2,
            feature_projection: None,
            decay: 0.0,
            mask: None,
        }
    }

    /// L2 plus a feature term under a fixed seeded random projection with
    /// max(1, d_y/2) rows.
    pub fn l2_plus_feature(d_y: usize, seed: u64) -> Self {
        let rows = (d_y / 2).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (d_y as f64).sqrt();
        let values: Vec<f64> = (0..rows * d_y)
            .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        Objective {
            kind: ObjectiveKind::L2PlusFeature,
            feature_projection: Some(Tensor::new(vec![rows, d_y], values).unwrap()),
            decay: 0.0,
            mask: None,
        }
    }

    pub fn with_projection(projection: Tensor) -> Result<Self> {
        if projection.shape().len() != 2 {
            return Err(Error::invalid("feature projection must be a matrix"));
        }
        Ok(Objective {
            kind: ObjectiveKind::L2PlusFeature,
            feature_projection: Some(projection),
            decay: 0.0,
            mask: None,
        })
    }

    /// Task loss plus `decay * ||input||^2` on the optimized input vector.
    pub fn task_plus_decay(decay: f64) -> Result<Self> {
        if decay < 0.0 {
            return Err(Error::invalid(format!("decay must be >= 0, got {decay}")));
        }
        Ok(Objective {
            kind: ObjectiveKind::TaskPlusDecay,
            feature_projection: None,
            decay,
            mask: None,
        })
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if !mask.iter().any(|&m| m) {
            return Err(Error::invalid("mask excludes every entry"));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn feature_projection(&self) -> Option<&Tensor> {
        self.feature_projection.as_ref()
    }

    fn effective_mask<'a>(&'a self, obs: &'a Observation) -> Option<&'a [bool]> {
        obs.mask().or(self.mask.as_deref())
    }

    /// Records the base loss terms L(y_hat, y) on the tape. The decay term
    /// needs the optimized input and is added by [`Objective::decay_term_on`].
    pub fn loss_on(&self, tape: &mut Tape, y_hat: Var, obs: &Observation) -> Result<Var> {
        let dim = obs.dim();
        if tape.shape(y_hat) != [dim] {
            return Err(Error::DimMismatch {
                op: "eval_loss",
                left: tape.shape(y_hat).to_vec(),
                right: vec![dim],
            });
        }
        let mask = self.effective_mask(obs);
        if let Some(m) = mask {
            validate_mask(m, dim)?;
        }
        let target = tape.constant(vec![dim], obs.y().to_vec())?;
        let base = match mask {
            Some(m) => tape.masked_mse(y_hat, target, m)?,
            None => tape.mse(y_hat, target)?,
        };
        match self.kind {
            ObjectiveKind::L2 | ObjectiveKind::TaskPlusDecay => Ok(base),
            ObjectiveKind::L2PlusFeature => {
                let projection = self.feature_projection.as_ref().ok_or_else(|| {
                    Error::contract("l2_plus_feature objective without a projection")
                })?;
                if projection.shape()[1] != dim {
                    return Err(Error::DimMismatch {
                        op: "feature projection",
                        left: projection.shape().to_vec(),
                        right: vec![dim],
                    });
                }
                // Hidden entries are zeroed on both sides before projecting so
                // the feature term stays invariant to masked observation values.
                let (pred_in, target_in) = match mask {
                    Some(m) => {
                        let m01: Vec<f64> = m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
                        let mvar = tape.constant(vec![dim], m01)?;
                        (tape.mul(y_hat, mvar)?, tape.mul(target, mvar)?)
                    }
                    None => (y_hat, target),
                };
                let p = tape.leaf_detached(projection);
                let proj_pred = tape.matmul(p, pred_in)?;
                let proj_target = tape.matmul(p, target_in)?;
                let feature = tape.mse(proj_pred, proj_target)?;
                tape.add(base, feature)
            }
        }
    }

    /// The decay penalty `decay * ||input||^2`, or None when the objective
    /// has no decay term.
    pub fn decay_term_on(&self, tape: &mut Tape, input: Var) -> Option<Var> {
        if self.kind == ObjectiveKind::TaskPlusDecay && self.decay > 0.0 {
            let sq = tape.l2_norm_sq(input);
            Some(tape.scale(sq, self.decay))
        } else {
            None
        }
    }

    /// Plain (non-tape) evaluation of the base loss.
    pub fn eval(&self, y_hat: &[f64], obs: &Observation) -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(vec![y_hat.len()], y_hat.to_vec())?;
        let loss = self.loss_on(&mut tape, v, obs)?;
        tape.scalar_value(loss)
    }
}

/// Zeroes gradient entries at masked positions. Post-hoc counterpart of
/// masking inside the loss; with matching normalization the two routes give
/// identical updates.
pub fn apply_mask_semantics(grad_y: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if grad_y.len() != mask.len() {
        return Err(Error::DimMismatch {
            op: "apply_mask_semantics",
            left: vec![grad_y.len()],
            right: vec![mask.len()],
        });
    }
    Ok(grad_y
        .iter()
        .zip(mask)
        .map(|(g, &m)| if m { *g } else { 0.0 })
        .collect())
}

/// Records the full inference loss on the tape: model forward, base
/// objective, plus the decay term on the model input when the objective has
/// one.
pub fn pipeline_loss_on(
    tape: &mut Tape,
    model: &ForwardModel,
    objective: &Objective,
    obs: &Observation,
    input: Var,
) -> Result<Var> {
    let y_hat = model.forward_on(tape, input)?;
    let base = objective.loss_on(tape, y_hat, obs)?;
    match objective.decay_term_on(tape, input) {
        Some(penalty) => tape.add(base, penalty),
        None => Ok(base),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::RuggedDecoder;
    use crate::oracle::{finite_diff, max_relative_error, FD_STEP};
    use rand::Rng;

    #[test]
    fn l2_zero_at_equality() {
        let obs = Observation::new(vec![1.0, -2.0, 0.5]).unwrap();
        let obj = Objective::l2();
        assert_eq!(obj.eval(&[1.0, -2.0, 0.5], &obs).unwrap(), 0.0);
    }

    #[test]
    fn observation_rejects_non_finite() {
        assert!(Observation::new(vec![1.0, f64::NAN]).is_err());
        assert!(Observation::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn mask_hides_mismatch_and_zeroes_gradient() {
        // mismatch only in the hidden half
        let obs = Observation::new(vec![1.0, 2.0, 100.0, -100.0])
            .unwrap()
            .with_mask(vec![true, true, false, false])
            .unwrap();
        let obj = Objective::l2();
        let mut tape = Tape::new();
        let pred = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]).with_grad();
        let p = tape.leaf(&pred);
        let loss = obj.loss_on(&mut tape, p, &obs).unwrap();
        assert_eq!(tape.scalar_value(loss).unwrap(), 0.0);
        tape.backward(loss).unwrap();
        let g = tape.grad(p).unwrap();
        assert_eq!(&g[2..], &[0.0, 0.0]);
    }

    #[test]
    fn all_false_mask_is_rejected() {
        let obs = Observation::new(vec![1.0, 2.0]).unwrap();
        assert!(obs.with_mask(vec![false, false]).is_err());
        assert!(Objective::l2().with_mask(vec![false, false]).is_err());
    }

    #[test]
    fn feature_loss_equals_sum_of_terms_recomputed_independently() {
        let d_y = 6;
        let obj = Objective::l2_plus_feature(d_y, 123);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y: Vec<f64> = (0..d_y).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pred: Vec<f64> = (0..d_y).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let obs = Observation::new(y.clone()).unwrap();
        let total = obj.eval(&pred, &obs).unwrap();

        // independent recomputation with plain loops
        let term1: f64 = pred
            .iter()
            .zip(&y)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / d_y as f64;
        let proj = obj.feature_projection().unwrap();
        let rows = proj.shape()[0];
        let mut term2 = 0.0;
        for r in 0..rows {
            let row = &proj.values()[r * d_y..(r + 1) * d_y];
            let pp: f64 = row.iter().zip(&pred).map(|(a, b)| a * b).sum();
            let pt: f64 = row.iter().zip(&y).map(|(a, b)| a * b).sum();
            term2 += (pp - pt) * (pp - pt);
        }
        term2 /= rows as f64;
        assert!((total - (term1 + term2)).abs() < 1e-12);
    }

    #[test]
    fn loss_invariant_to_hidden_observation_values() {
        let mask = vec![true, false, true, false];
        let pred = [0.3, 0.6, -0.2, 1.4];
        for obj in [Objective::l2(), Objective::l2_plus_feature(4, 5)] {
            let a = Observation::new(vec![0.0, 7.0, 0.5, -3.0])
                .unwrap()
                .with_mask(mask.clone())
                .unwrap();
            let b = Observation::new(vec![0.0, -99.0, 0.5, 42.0])
                .unwrap()
                .with_mask(mask.clone())
                .unwrap();
            assert_eq!(obj.eval(&pred, &a).unwrap(), obj.eval(&pred, &b).unwrap());
        }
    }

    #[test]
    fn decay_term_adds_exactly_lambda_times_norm() {
        // ||r||^2 = 4, lambda = 1 adds exactly 4
        let obj = Objective::task_plus_decay(1.0).unwrap();
        let obs = Observation::new(vec![0.0, 0.0]).unwrap();
        let model = ForwardModel::Rugged(
            RuggedDecoder::from_parts(
                Tensor::zeros(vec![2, 4]),
                Tensor::zeros(vec![4, 2]),
                Tensor::zeros(vec![4]),
                Tensor::zeros(vec![2, 2]),
            )
            .unwrap(),
        );
        let mut tape = Tape::new();
        let r = tape.constant(vec![2], vec![2.0, 0.0]).unwrap();
        let loss = pipeline_loss_on(&mut tape, &model, &obj, &obs, r).unwrap();
        // model output is identically zero, so base loss is 0 and total is the penalty
        assert_eq!(tape.scalar_value(loss).unwrap(), 4.0);
    }

    #[test]
    fn apply_mask_semantics_is_noop_for_full_mask() {
        let g = vec![0.1, -0.2, 0.3];
        let out = apply_mask_semantics(&g, &[true, true, true]).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn apply_mask_semantics_supports_single_coordinate() {
        let g = vec![0.1, -0.2, 0.3];
        let out = apply_mask_semantics(&g, &[false, true, false]).unwrap();
        assert_eq!(out, vec![0.0, -0.2, 0.0]);
    }

    #[test]
    fn masked_loss_and_post_hoc_gradient_zeroing_give_identical_updates() {
        // Path A: masking inside the loss (masked_mse primitive).
        // Path B: full residual with unmasked-count normalization, hidden
        // gradients zeroed by an elementwise mask multiply.
        let model = ForwardModel::Rugged(RuggedDecoder::seeded(2, 4, 8, 31));
        let mask = vec![true, false, true, false];
        let y = vec![0.4, 9.9, -0.7, -9.9];
        let n_total = 4.0;
        let n_unmasked = 2.0;
        let lr = 0.05;

        let mut za = vec![0.3, -0.2];
        let mut zb = za.clone();
        for _ in 0..3 {
            // path A
            let obs = Observation::new(y.clone())
                .unwrap()
                .with_mask(mask.clone())
                .unwrap();
            let mut tape = Tape::new();
            let z = tape.leaf(&Tensor::vector(za.clone()).with_grad());
            let loss = pipeline_loss_on(&mut tape, &model, &Objective::l2(), &obs, z).unwrap();
            tape.backward(loss).unwrap();
            let ga = tape.grad(z).unwrap().to_vec();
            for (v, g) in za.iter_mut().zip(&ga) {
                *v -= lr * g;
            }

            // path B
            let mut tape = Tape::new();
            let z = tape.leaf(&Tensor::vector(zb.clone()).with_grad());
            let y_hat = model.forward_on(&mut tape, z).unwrap();
            let m01: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let mvar = tape.constant(vec![4], m01).unwrap();
            let pred_masked = tape.mul(y_hat, mvar).unwrap();
            let target_masked: Vec<f64> = y
                .iter()
                .zip(&mask)
                .map(|(v, &b)| if b { *v } else { 0.0 })
                .collect();
            let t = tape.constant(vec![4], target_masked).unwrap();
            let raw = tape.mse(pred_masked, t).unwrap();
            let loss = tape.scale(raw, n_total / n_unmasked);
            tape.backward(loss).unwrap();
            let gb = tape.grad(z).unwrap().to_vec();
            for (v, g) in zb.iter_mut().zip(&gb) {
                *v -= lr * g;
            }
        }
        for (a, b) in za.iter().zip(&zb) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn gradients_of_every_kind_match_finite_differences() {
        let d_y = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let y: Vec<f64> = (0..d_y).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pred0: Vec<f64> = (0..d_y).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mask = vec![true, true, false, true, false, true];

        let objectives = vec![
            Objective::l2(),
            Objective::l2().with_mask(mask.clone()).unwrap(),
            Objective::l2_plus_feature(d_y, 3),
            Objective::l2_plus_feature(d_y, 3).with_mask(mask).unwrap(),
        ];
        for obj in objectives {
            let obs = Observation::new(y.clone()).unwrap();
            let mut tape = Tape::new();
            let p = tape.leaf(&Tensor::vector(pred0.clone()).with_grad());
            let loss = obj.loss_on(&mut tape, p, &obs).unwrap();
            tape.backward(loss).unwrap();
            let analytic = tape.grad(p).unwrap().to_vec();
            let fd = finite_diff(|v| obj.eval(v, &obs).unwrap(), &pred0, FD_STEP).unwrap();
            assert!(
                max_relative_error(&analytic, &fd) < 1e-5,
                "kind {:?}",
                obj.kind()
            );
        }
    }

    #[test]
    fn loss_is_nonnegative_and_zero_only_at_masked_equality() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let dim = rng.gen_range(2..7);
            let y: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut mask: Vec<bool> = (0..dim).map(|_| rng.gen_bool(0.5)).collect();
            mask[0] = true;
            let pred: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let obs = Observation::new(y.clone())
                .unwrap()
                .with_mask(mask.clone())
                .unwrap();
            let obj = Objective::l2();
            let loss = obj.eval(&pred, &obs).unwrap();
            assert!(loss >= 0.0);
            let equal_on_mask = pred
                .iter()
                .zip(&y)
                .zip(&mask)
                .all(|((p, t), &m)| !m || p == t);
            assert_eq!(loss == 0.0, equal_on_mask);
        }
    }
}
