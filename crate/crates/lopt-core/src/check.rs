//! Self-check suites: finite-difference gradient checks for every primitive
//! and the full inference pipeline, plus brute-force oracle comparisons
//! against committed fixtures.
//!
//! The fixture files under `fixtures/` are minted once by the ignored test
//! in `tests/mint_fixtures.rs` and committed; the checks here recompute the
//! cheap parts and compare against the frozen values, never regenerating
//! them silently.

use crate::error::Result;
use crate::infer::{
    infer_baseline_with_init, infer_multi_with_seeds, InferenceConfig, InitPolicy,
};
use crate::models::{
    fit_mini_decoder, ForwardModel, MiniDecoder, Mlp, RuggedDecoder,
};
use crate::objective::{pipeline_loss_on, Objective, Observation};
use crate::optim::OptimizerConfig;
use crate::oracle::{finite_diff, grid_minimize, max_relative_error, OracleRecord, FD_STEP};
use crate::tensor::{OpKind, Tape, Tensor, Var};
use crate::trainer::{coordinate_descent_train, SyntheticSampler, TrainConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Committed fixture files.
pub mod embedded {
    pub const RUGGED_2D_MIN: &str = include_str!("../fixtures/rugged_2d_min.lopt");
    pub const MINI_DECODER_DATA: &str = include_str!("../fixtures/mini_decoder_data.lopt");
    pub const MASKED_DIVERSITY: &str = include_str!("../fixtures/masked_diversity.lopt");
}

/// Tolerance for all gradient checks.
pub const GRAD_TOLERANCE: f64 = 1e-5;

/// Seed and shape of the non-convex oracle instance (2 inputs, 1 output).
pub const RUGGED_ORACLE_SEED: u64 = 1234;
pub const RUGGED_ORACLE_FEATURES: usize = 16;
pub const RUGGED_ORACLE_BOX: (f64, f64) = (-4.0, 4.0);
pub const RUGGED_ORACLE_RESOLUTION: usize = 401;
/// Target output for the oracle instance, placed near the top of the
/// decoder's range over the box so near-solutions are rare and descent has
/// many traps.
pub const RUGGED_ORACLE_TARGET_Y: f64 = 5.0;

/// One line of a check report.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    fn grad(name: &str, max_rel_err: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            max_rel_err,
            tolerance: GRAD_TOLERANCE,
            pass: max_rel_err < GRAD_TOLERANCE,
        }
    }

    pub fn report_line(&self) -> String {
        format!(
            "{} {:<24} max_rel_err {:.3e} (tol {:.1e})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_err,
            self.tolerance
        )
    }
}

/// The deterministic rugged instance refereed by the grid oracle.
pub fn rugged_oracle_decoder() -> RuggedDecoder {
    RuggedDecoder::seeded(2, 1, RUGGED_ORACLE_FEATURES, RUGGED_ORACLE_SEED)
}

/// Observation for the oracle instance.
pub fn rugged_oracle_observation() -> Observation {
    Observation::new(vec![RUGGED_ORACLE_TARGET_Y]).unwrap()
}

/// Loss field of the oracle instance as a plain closure for grid search.
pub fn rugged_oracle_loss() -> impl Fn(&[f64]) -> f64 + Sync {
    let model = ForwardModel::Rugged(rugged_oracle_decoder());
    let obs = rugged_oracle_observation();
    let objective = Objective::l2();
    move |x: &[f64]| {
        let y_hat = model.eval(x).unwrap();
        objective.eval(&y_hat, &obs).unwrap()
    }
}

/// Exhaustive grid minimum of the oracle instance.
pub fn rugged_oracle_grid_minimum() -> Result<crate::oracle::GridMinimum> {
    grid_minimize(
        rugged_oracle_loss(),
        &[RUGGED_ORACLE_BOX, RUGGED_ORACLE_BOX],
        RUGGED_ORACLE_RESOLUTION,
    )
}

/// Multistart descent summary on the oracle instance.
#[derive(Debug, Clone)]
pub struct MultistartSummary {
    pub starts: usize,
    /// Fraction of starts whose final loss is within 1e-3 of the grid
    /// minimum.
    pub reached_fraction: f64,
    /// Largest final-loss excess over the grid minimum.
    pub max_excess: f64,
    /// Distance-based cluster count over final points (radius 0.25).
    pub cluster_count: usize,
}

/// Runs 50 seeded adam descents from uniform random starts in the oracle
/// box and summarizes where they end up relative to the grid minimum.
pub fn rugged_multistart_summary(grid_min_value: f64) -> Result<MultistartSummary> {
    let model = ForwardModel::Rugged(rugged_oracle_decoder());
    let obs = rugged_oracle_observation();
    let objective = Objective::l2();
    let cfg = InferenceConfig::new(100, OptimizerConfig::adam(0.1), InitPolicy::Zero, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2026);
    let starts = 50;
    let mut finals = Vec::with_capacity(starts);
    for _ in 0..starts {
        let x0: Vec<f64> = (0..2)
            .map(|_| rng.gen_range(RUGGED_ORACLE_BOX.0..RUGGED_ORACLE_BOX.1))
            .collect();
        let trace = infer_baseline_with_init(&model, &objective, &obs, &cfg, x0)?;
        finals.push((trace.final_x.clone(), trace.final_loss));
    }
    let reached = finals
        .iter()
        .filter(|(_, loss)| loss - grid_min_value < 1e-3)
        .count();
    let max_excess = finals
        .iter()
        .map(|(_, loss)| loss - grid_min_value)
        .fold(f64::NEG_INFINITY, f64::max);

    let mut clusters: Vec<Vec<f64>> = Vec::new();
    for (x, _) in &finals {
        let is_new = clusters.iter().all(|c| {
            let d2: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() > 0.25
        });
        if is_new {
            clusters.push(x.clone());
        }
    }

    Ok(MultistartSummary {
        starts,
        reached_fraction: reached as f64 / starts as f64,
        max_excess,
        cluster_count: clusters.len(),
    })
}

// ---- gradient checks --------------------------------------------------------

type Perturbation = Option<(OpKind, f64)>;

fn tape_with(perturbation: Perturbation) -> Tape {
    let mut tape = Tape::new();
    if let Some((kind, delta)) = perturbation {
        tape.set_adjoint_perturbation(kind, delta);
    }
    tape
}

/// Checks the gradient of `build` (an arbitrary scalar-valued tape program
/// of one input of the given shape) against central finite differences.
fn check_program(
    name: &str,
    seeds: usize,
    shape: &[usize],
    sample: impl Fn(&mut ChaCha8Rng) -> Vec<f64>,
    build: impl Fn(&mut Tape, Var) -> Result<Var>,
    perturbation: Perturbation,
) -> CheckResult {
    let numel: usize = shape.iter().product();
    let mut worst = 0.0f64;
    for seed in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point = sample(&mut rng);
        debug_assert_eq!(point.len(), numel);

        let mut tape = tape_with(perturbation);
        let leaf = tape.leaf(
            &Tensor::new(shape.to_vec(), point.clone())
                .unwrap()
                .with_grad(),
        );
        let loss = match build(&mut tape, leaf) {
            Ok(v) => v,
            Err(_) => continue,
        };
        if tape.backward(loss).is_err() {
            continue;
        }
        let analytic = tape.grad(leaf).unwrap().to_vec();

        let fd = finite_diff(
            |x: &[f64]| {
                let mut t = Tape::new();
                let leaf = t.constant(shape.to_vec(), x.to_vec()).unwrap();
                let loss = build(&mut t, leaf).unwrap();
                t.scalar_value(loss).unwrap()
            },
            &point,
            FD_STEP,
        );
        if let Ok(fd) = fd {
            worst = worst.max(max_relative_error(&analytic, &fd));
        }
    }
    CheckResult::grad(name, worst)
}

/// Gradient checks for every primitive plus the full pipeline. `seeds`
/// random points per check; the optional perturbation corrupts one op's
/// adjoint to prove the gate trips.
pub fn run_grad_checks(seeds: usize, perturbation: Perturbation) -> Vec<CheckResult> {
    let mut results = Vec::new();
    let uniform = |lo: f64, hi: f64| move |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(lo..hi)).collect()
    };
    let sample = uniform(-2.0, 2.0);

    // matrix product both ways: checked input as left operand [3,4] against
    // a fixed [4,2], plus the matrix-vector form via a fixed [3,12]
    results.push(check_program(
        "matmul",
        seeds,
        &[3, 4],
        |rng| sample(rng, 12),
        |tape, leaf| {
            let fixed = tape.constant(
                vec![4, 2],
                vec![0.3, -0.7, 0.2, 1.1, -0.4, 0.6, -1.2, 0.05],
            )?;
            let product = tape.matmul(leaf, fixed)?;
            Ok(tape.l2_norm_sq(product))
        },
        perturbation,
    ));

    results.push(check_program(
        "matmul_vec",
        seeds,
        &[12],
        |rng| sample(rng, 12),
        |tape, leaf| {
            let big = tape.constant(
                vec![3, 12],
                (0..36).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.13).collect(),
            )?;
            let out = tape.matmul(big, leaf)?;
            Ok(tape.l2_norm_sq(out))
        },
        perturbation,
    ));

    results.push(check_program(
        "add",
        seeds,
        &[6],
        |rng| sample(rng, 6),
        |tape, leaf| {
            let c = tape.constant(vec![6], vec![0.5, -1.0, 2.0, 0.1, -0.3, 0.9])?;
            let s = tape.add(leaf, c)?;
            let sq = tape.l2_norm_sq(s);
            Ok(sq)
        },
        perturbation,
    ));

    results.push(check_program(
        "sub",
        seeds,
        &[6],
        |rng| sample(rng, 6),
        |tape, leaf| {
            let c = tape.constant(vec![6], vec![0.5, -1.0, 2.0, 0.1, -0.3, 0.9])?;
            let s = tape.sub(leaf, c)?;
            Ok(tape.l2_norm_sq(s))
        },
        perturbation,
    ));

    results.push(check_program(
        "mul",
        seeds,
        &[6],
        |rng| sample(rng, 6),
        |tape, leaf| {
            let c = tape.constant(vec![6], vec![0.5, -1.0, 2.0, 0.1, -0.3, 0.9])?;
            let s = tape.mul(leaf, c)?;
            Ok(tape.sum(s))
        },
        perturbation,
    ));

    results.push(check_program(
        "scale",
        seeds,
        &[5],
        |rng| sample(rng, 5),
        |tape, leaf| {
            let s = tape.scale(leaf, -1.7);
            Ok(tape.l2_norm_sq(s))
        },
        perturbation,
    ));

    results.push(check_program(
        "leaky_relu",
        seeds,
        &[8],
        |rng| {
            // keep samples away from the kink where finite differences lie
            (0..8)
                .map(|_| {
                    let mag = rng.gen_range(0.05..2.0);
                    if rng.gen_bool(0.5) {
                        mag
                    } else {
                        -mag
                    }
                })
                .collect()
        },
        |tape, leaf| {
            let r = tape.leaky_relu(leaf, 0.2)?;
            Ok(tape.l2_norm_sq(r))
        },
        perturbation,
    ));

    results.push(check_program(
        "tanh",
        seeds,
        &[6],
        |rng| sample(rng, 6),
        |tape, leaf| {
            let t = tape.tanh(leaf);
            Ok(tape.l2_norm_sq(t))
        },
        perturbation,
    ));

    results.push(check_program(
        "sin",
        seeds,
        &[6],
        |rng| sample(rng, 6),
        |tape, leaf| {
            let s = tape.sin(leaf);
            Ok(tape.l2_norm_sq(s))
        },
        perturbation,
    ));

    results.push(check_program(
        "sum",
        seeds,
        &[7],
        |rng| sample(rng, 7),
        |tape, leaf| {
            let doubled = tape.mul(leaf, leaf)?;
            Ok(tape.sum(doubled))
        },
        perturbation,
    ));

    results.push(check_program(
        "mse",
        seeds,
        &[16],
        |rng| sample(rng, 16),
        |tape, leaf| {
            let target = tape.constant(vec![16], (0..16).map(|i| (i as f64 * 0.37).sin()).collect())?;
            tape.mse(leaf, target)
        },
        perturbation,
    ));

    results.push(check_program(
        "l2_norm_sq",
        seeds,
        &[6],
        |rng| sample(rng, 6),
        |tape, leaf| Ok(tape.l2_norm_sq(leaf)),
        perturbation,
    ));

    results.push(check_program(
        "masked_mse",
        seeds,
        &[8],
        |rng| sample(rng, 8),
        |tape, leaf| {
            let target = tape.constant(vec![8], (0..8).map(|i| (i as f64 * 0.61).cos()).collect())?;
            let mask = [true, false, true, true, false, true, false, true];
            tape.masked_mse(leaf, target, &mask)
        },
        perturbation,
    ));

    // full pipeline: loss(F(theta(z)), y) differentiated w.r.t. z
    let theta = Mlp::mapping_network(4, 16, 2, 51);
    let model = ForwardModel::Rugged(RuggedDecoder::seeded(2, 8, 16, 52));
    let objective = Objective::l2();
    let obs = Observation::new(model.eval(&[0.8, -1.1]).unwrap()).unwrap();
    results.push(check_program(
        "pipeline_z",
        seeds,
        &[4],
        |rng| (0..4).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        |tape, leaf| {
            let x = theta.forward_frozen(tape, leaf)?;
            pipeline_loss_on(tape, &model, &objective, &obs, x)
        },
        perturbation,
    ));

    // pipeline gradient w.r.t. network parameters, spot-checked coordinates
    results.push(check_pipeline_theta_params(seeds.min(10), perturbation));

    results
}

fn check_pipeline_theta_params(points: usize, perturbation: Perturbation) -> CheckResult {
    let model = ForwardModel::Rugged(RuggedDecoder::seeded(2, 8, 16, 52));
    let objective = Objective::l2();
    let obs = Observation::new(model.eval(&[0.8, -1.1]).unwrap()).unwrap();
    let mut worst = 0.0f64;

    for seed in 0..points as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let theta = Mlp::mapping_network(4, 8, 2, 53 + seed);
        let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.5..1.5)).collect();

        let mut tape = tape_with(perturbation);
        let zv = tape.constant(vec![4], z.clone()).unwrap();
        let vars = theta.forward_on(&mut tape, zv).unwrap();
        let loss = pipeline_loss_on(&mut tape, &model, &objective, &obs, vars.output).unwrap();
        tape.backward(loss).unwrap();

        // one random weight coordinate per layer
        for (li, (wvar, _)) in vars.params.iter().enumerate() {
            let grads = tape.grad(*wvar).unwrap();
            let coord = rng.gen_range(0..grads.len());
            let analytic = grads[coord];
            let fd = finite_diff(
                |w: &[f64]| {
                    let mut probe = theta.clone();
                    probe.layers[li].weight.values_mut()[coord] = w[0];
                    let mut t = Tape::new();
                    let zv = t.constant(vec![4], z.clone()).unwrap();
                    let x = probe.forward_frozen(&mut t, zv).unwrap();
                    let l = pipeline_loss_on(&mut t, &model, &objective, &obs, x).unwrap();
                    t.scalar_value(l).unwrap()
                },
                &[theta.layers[li].weight.values()[coord]],
                FD_STEP,
            );
            if let Ok(fd) = fd {
                worst = worst.max(max_relative_error(&[analytic], &fd));
            }
        }
    }
    CheckResult::grad("pipeline_theta_params", worst)
}

// ---- oracle checks ----------------------------------------------------------

/// Recomputes the grid minimum and multistart summary for the committed
/// rugged fixture and refits the mini decoder on the committed dataset,
/// comparing everything against the frozen values.
pub fn run_oracle_checks() -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();

    let record = crate::io::parse_oracle_record(embedded::RUGGED_2D_MIN)?;
    let frozen_argmin = record.expected_values("argmin")?;
    let frozen_value = record.expected_values("value")?[0];
    let recomputed = rugged_oracle_grid_minimum()?;
    let argmin_err = recomputed
        .argmin
        .iter()
        .zip(frozen_argmin)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let value_err = (recomputed.value - frozen_value).abs();
    let err = argmin_err.max(value_err);
    results.push(CheckResult {
        name: "rugged_grid_minimum".into(),
        max_rel_err: err,
        tolerance: record.tolerance,
        pass: err <= record.tolerance,
    });

    let summary = rugged_multistart_summary(frozen_value)?;
    results.push(CheckResult {
        name: "rugged_multistart_stuck".into(),
        max_rel_err: summary.reached_fraction,
        tolerance: 0.4,
        pass: summary.reached_fraction <= 0.4 && summary.max_excess > 1e-2,
    });
    results.push(CheckResult {
        name: "rugged_local_minima".into(),
        max_rel_err: summary.cluster_count as f64,
        tolerance: 2.0,
        pass: summary.cluster_count >= 2,
    });

    let mini = crate::io::parse_oracle_record(embedded::MINI_DECODER_DATA)?;
    let dataset = mini_fixture_dataset(&mini)?;
    let threshold = mini.expected_values("threshold")?[0];
    let (_, report) = fit_mini_decoder(&dataset, 40, 0.01, mini.seed + 7)?;
    results.push(CheckResult {
        name: "mini_decoder_fit".into(),
        max_rel_err: report.final_mse,
        tolerance: threshold,
        pass: report.final_mse < threshold && report.final_mse < 0.1 * report.target_variance,
    });

    Ok(results)
}

/// Reassembles the (x, y) pairs stored in the mini-decoder fixture.
pub fn mini_fixture_dataset(record: &OracleRecord) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let n = record.dims[0];
    let d_x = record.dims[1];
    let d_y = record.dims[2];
    let inputs = record.expected_values("inputs")?;
    let targets = record.expected_values("targets")?;
    Ok((0..n)
        .map(|i| {
            (
                inputs[i * d_x..(i + 1) * d_x].to_vec(),
                targets[i * d_y..(i + 1) * d_y].to_vec(),
            )
        })
        .collect())
}

// ---- masked diversity (shared seeded procedure) ------------------------------

/// Outcome of the masked multi-hypothesis run used by the acceptance suite.
#[derive(Debug, Clone)]
pub struct MaskedDiversityOutcome {
    /// Visible-region reconstruction loss per hypothesis, ascending final
    /// loss order.
    pub unmasked_losses: Vec<f64>,
    /// Minimum pairwise L2 distance between hidden-region reconstructions.
    pub min_pairwise_hidden_distance: f64,
}

/// Deterministic end-to-end run: fit a mini decoder on the committed
/// dataset, train a small mapping network on full observations, then run 8
/// masked hypotheses from random latent starts.
pub fn masked_diversity_run() -> Result<MaskedDiversityOutcome> {
    let record = crate::io::parse_oracle_record(embedded::MINI_DECODER_DATA)?;
    let dataset = mini_fixture_dataset(&record)?;
    let (weights, _) = fit_mini_decoder(&dataset, 40, 0.01, record.seed + 7)?;
    let model = ForwardModel::Mini(MiniDecoder::with_weights(weights));
    let d_y = model.output_dim();
    let objective = Objective::l2();

    let theta = Mlp::mapping_network(16, 64, model.input_dim(), 11);
    let cfg = TrainConfig {
        rounds: 12,
        samples_per_round: 32,
        steps_per_trajectory: 20,
        z_optimizer: OptimizerConfig::adam(0.1),
        theta_optimizer: OptimizerConfig::adamw(2e-3, 0.1),
        init: InitPolicy::Zero,
        seed: 42,
    };
    let mut source = SyntheticSampler::new(&model, 1.0, 0.0, 2027);
    let (trained, _) = coordinate_descent_train(theta, &model, &objective, &mut source, cfg)?;

    // half-masked observation of a fresh ground-truth input
    let mut rng = ChaCha8Rng::seed_from_u64(2028);
    let x_star: Vec<f64> = (0..model.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y = model.eval(&x_star)?;
    let mask: Vec<bool> = (0..d_y).map(|i| i < d_y / 2).collect();
    let obs = Observation::new(y)?.with_mask(mask.clone())?;

    let infer_cfg = InferenceConfig::new(
        60,
        OptimizerConfig::adam(0.1),
        InitPolicy::Gaussian { sigma: 1.0 },
        77,
    )?
    .with_hypotheses(8)?;
    let mut seed_rng = ChaCha8Rng::seed_from_u64(77);
    let seeds: Vec<u64> = (0..8).map(|_| seed_rng.gen()).collect();
    let traces =
        infer_multi_with_seeds(&trained, &model, &objective, &obs, &infer_cfg, &seeds)?;

    let reconstructions: Vec<Vec<f64>> = traces
        .iter()
        .map(|t| model.eval(&t.final_x))
        .collect::<Result<_>>()?;
    let unmasked_losses = traces.iter().map(|t| t.final_loss).collect();

    let hidden: Vec<Vec<f64>> = reconstructions
        .iter()
        .map(|r| {
            r.iter()
                .zip(&mask)
                .filter(|(_, &m)| !m)
                .map(|(v, _)| *v)
                .collect()
        })
        .collect();
    let mut min_pairwise = f64::INFINITY;
    for i in 0..hidden.len() {
        for j in i + 1..hidden.len() {
            let d2: f64 = hidden[i]
                .iter()
                .zip(&hidden[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            min_pairwise = min_pairwise.min(d2.sqrt());
        }
    }

    Ok(MaskedDiversityOutcome {
        unmasked_losses,
        min_pairwise_hidden_distance: min_pairwise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_checks_pass_clean() {
        let results = run_grad_checks(10, None);
        for r in &results {
            assert!(r.pass, "{}", r.report_line());
        }
        // report covers every primitive op plus the two pipeline checks
        assert_eq!(results.len(), OpKind::all().len() + 3);
    }

    #[test]
    fn grad_checks_fail_with_perturbed_adjoint() {
        let results = run_grad_checks(5, Some((OpKind::Mse, 1e-2)));
        assert!(results.iter().any(|r| !r.pass));
    }

    #[test]
    fn perturbing_matmul_breaks_the_pipeline_check() {
        let results = run_grad_checks(5, Some((OpKind::MatMul, 1e-3)));
        let pipeline = results.iter().find(|r| r.name == "pipeline_z").unwrap();
        assert!(!pipeline.pass);
    }
}
