//! Scratch hyperparameter sweep for the desk preset. Ignored; manual use.

use lopt_core::analysis::convergence_curves;
use lopt_core::config::ExperimentConfig;
use lopt_core::infer::{infer_baseline, infer_mapped, InferenceConfig};
use lopt_core::objective::Observation;
use lopt_core::trainer::{coordinate_descent_train, ObservationSource, SyntheticSampler};

#[test]
#[ignore = "manual tuning probe"]
fn sweep_theta_hyperparams() {
    let combos: &[(f64, f64, f64, usize)] = &[
        // (theta_lr, z_lr(sgd), prior, d_z)
        (2e-3, 0.02, 1.5, 4),
        (2e-3, 0.01, 1.5, 4),
        (2e-3, 0.005, 1.5, 4),
        (1e-3, 0.01, 1.5, 4),
        (2e-3, 0.01, 1.5, 8),
        (2e-3, 0.01, 2.0, 4),
    ];
    for &(theta_lr, z_lr, prior, d_z) in combos {
        let mut cfg = ExperimentConfig::rugged_desk();
        cfg.train.theta_lr = theta_lr;
        cfg.train.z_opt = lopt_core::optim::OptimizerKind::Sgd;
        cfg.train.z_lr = z_lr;
        cfg.train.prior_sigma = prior;
        cfg.infer.opt = lopt_core::optim::OptimizerKind::Sgd;
        cfg.infer.lr = z_lr;
        cfg.theta.d_z = d_z;

        let model = cfg.build_model().unwrap();
        let objective = cfg.build_objective().unwrap();
        let theta0 = cfg.build_theta();
        let train_cfg = cfg.train_config().unwrap();
        let mut source =
            SyntheticSampler::new(&model, cfg.train.prior_sigma, cfg.train.noise_sigma, cfg.seed + 1);
        let (theta, stats) =
            coordinate_descent_train(theta0, &model, &objective, &mut source, train_cfg).unwrap();

        let mut heldout =
            SyntheticSampler::new(&model, cfg.train.prior_sigma, 0.0, cfg.seed + 1000);
        let observations: Vec<Observation> =
            (0..60).map(|_| heldout.next_observation().unwrap()).collect();
        let infer_cfg: InferenceConfig = cfg.inference_config().unwrap();
        let run = |theta: Option<&lopt_core::models::Mlp>| {
            let traces: Vec<_> = observations
                .iter()
                .enumerate()
                .map(|(i, obs)| {
                    let per = InferenceConfig {
                        seed: cfg.seed.wrapping_add(i as u64),
                        ..infer_cfg.clone()
                    };
                    match theta {
                        Some(net) => infer_mapped(net, &model, &objective, obs, &per).unwrap(),
                        None => infer_baseline(&model, &objective, obs, &per).unwrap(),
                    }
                })
                .collect();
            convergence_curves(&traces).unwrap()
        };
        let baseline = run(None);
        let mapped = run(Some(&theta));
        let violations = (1..=20).filter(|&s| mapped[s].mean > baseline[s].mean).count();
        println!(
            "lr={theta_lr:<7} zlr={z_lr:<6} prior={prior} d_z={d_z:<3} | mapped@1 {:.3} @2 {:.3} @20 {:.3} | base@20 {:.3} | c4 viol {} | c5 {} | last collect {:.3}",
            mapped[1].mean,
            mapped[2].mean,
            mapped[20].mean,
            baseline[20].mean,
            violations,
            mapped[2].mean < baseline[20].mean,
            stats.last().unwrap().collect.mean_entry_loss,
        );
    }
}
