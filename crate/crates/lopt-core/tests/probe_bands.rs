//! Scratch sweep over the decoder's high-frequency band and trainer lr,
//! watching all four headline properties at once. Ignored; manual use.

use lopt_core::analysis::{convergence_curves, landscape_grid, pca_directions, spike_count};
use lopt_core::config::ExperimentConfig;
use lopt_core::infer::{
    eval_pipeline_loss, infer_baseline, infer_mapped, InferenceConfig, InitPolicy,
};
use lopt_core::models::{ForwardModel, RuggedDecoder};
use lopt_core::objective::Observation;
use lopt_core::optim::OptimizerConfig;
use lopt_core::trainer::{
    coordinate_descent_train, online_train, ObservationSource, SyntheticSampler,
};

#[test]
#[ignore = "manual tuning probe"]
fn sweep_bands() {
    let combos: &[(f64, f64, u64)] = &[
        // (high_mult, high_amp, model_seed)
        (14.0, 0.35, 7),
        (14.0, 0.35, 9),
        (14.0, 0.35, 13),
        (14.0, 0.35, 21),
        (14.0, 0.35, 33),
        (14.0, 0.35, 57),
    ];
    for &(mult, amp, model_seed) in combos {
        let mut cfg = ExperimentConfig::rugged_desk();
        cfg.model.seed = model_seed;
        let model = ForwardModel::Rugged(RuggedDecoder::seeded_with_bands(
            cfg.model.d_x,
            cfg.model.d_y,
            cfg.model.features,
            cfg.model.seed,
            mult,
            amp,
        ));
        let objective = cfg.build_objective().unwrap();
        let theta0 = cfg.build_theta();
        let train_cfg = cfg.train_config().unwrap();

        let mut source =
            SyntheticSampler::new(&model, cfg.train.prior_sigma, cfg.train.noise_sigma, cfg.seed + 1);
        let (theta, _) = coordinate_descent_train(
            theta0.clone(),
            &model,
            &objective,
            &mut source,
            train_cfg.clone(),
        )
        .unwrap();
        let mut online_source =
            SyntheticSampler::new(&model, cfg.train.prior_sigma, cfg.train.noise_sigma, cfg.seed + 1);
        let (theta_online, _) =
            online_train(theta0, &model, &objective, &mut online_source, train_cfg).unwrap();

        let mut heldout = SyntheticSampler::new(&model, cfg.train.prior_sigma, 0.0, cfg.seed + 1000);
        let observations: Vec<Observation> =
            (0..60).map(|_| heldout.next_observation().unwrap()).collect();
        let infer_cfg: InferenceConfig = cfg.inference_config().unwrap();
        let run = |net: Option<&lopt_core::models::Mlp>| {
            let traces: Vec<_> = observations
                .iter()
                .enumerate()
                .map(|(i, obs)| {
                    let per = InferenceConfig {
                        seed: cfg.seed.wrapping_add(i as u64),
                        ..infer_cfg.clone()
                    };
                    match net {
                        Some(t) => infer_mapped(t, &model, &objective, obs, &per).unwrap(),
                        None => infer_baseline(&model, &objective, obs, &per).unwrap(),
                    }
                })
                .collect();
            convergence_curves(&traces).unwrap()
        };
        let baseline = run(None);
        let mapped = run(Some(&theta));
        let online = run(Some(&theta_online));
        let c4 = (1..=20).filter(|&s| mapped[s].mean > baseline[s].mean).count();

        // spikes with broad-optimizer recovery
        let recovery = InferenceConfig::new(20, OptimizerConfig::adam(0.1), InitPolicy::Zero, cfg.seed)
            .unwrap();
        let recovered: Vec<(Vec<f64>, Vec<f64>)> = observations
            .iter()
            .enumerate()
            .map(|(i, obs)| {
                let per = InferenceConfig { seed: cfg.seed.wrapping_add(i as u64), ..recovery.clone() };
                (
                    infer_baseline(&model, &objective, obs, &per).unwrap().final_x,
                    infer_mapped(&theta, &model, &objective, obs, &per).unwrap().final_input,
                )
            })
            .collect();
        let xs: Vec<Vec<f64>> = recovered.iter().map(|(x, _)| x.clone()).collect();
        let zs: Vec<Vec<f64>> = recovered.iter().map(|(_, z)| z.clone()).collect();
        let x_pca = pca_directions(&xs).unwrap();
        let z_pca = pca_directions(&zs).unwrap();
        let (mut x_spikes, mut z_spikes) = (0usize, 0usize);
        for (i, obs) in observations.iter().take(10).enumerate() {
            let (xc, zc) = &recovered[i];
            let xg = landscape_grid(
                |p| eval_pipeline_loss(&model, &objective, obs, None, p),
                xc,
                &x_pca.dir1,
                &x_pca.dir2,
                3.0 * x_pca.eigenvalues.0.sqrt(),
                41,
            )
            .unwrap();
            let zg = landscape_grid(
                |p| eval_pipeline_loss(&model, &objective, obs, Some(&theta), p),
                zc,
                &z_pca.dir1,
                &z_pca.dir2,
                3.0 * z_pca.eigenvalues.0.sqrt(),
                41,
            )
            .unwrap();
            x_spikes += spike_count(&xg, 2.0);
            z_spikes += spike_count(&zg, 2.0);
        }

        println!(
            "mult={mult} amp={amp} mseed={model_seed} | c4viol {c4} | c5 {} (m@2 {:.3} b@20 {:.3}) | c6 full {:.3} online {:.3} ok {} | c7 X {} Z {} ok {}",
            mapped[2].mean < baseline[20].mean,
            mapped[2].mean,
            baseline[20].mean,
            mapped[20].mean,
            online[20].mean,
            mapped[20].mean < online[20].mean && mapped[20].mean < baseline[20].mean,
            x_spikes,
            z_spikes,
            z_spikes < x_spikes
        );
    }
}
