//! Scratch probe for tuning the desk-scale training preset. Ignored; run
//! manually with --nocapture while calibrating.

use lopt_core::analysis::convergence_curves;
use lopt_core::config::ExperimentConfig;
use lopt_core::infer::{infer_baseline, infer_mapped, InferenceConfig};
use lopt_core::objective::Observation;
use lopt_core::trainer::{coordinate_descent_train, online_train, SyntheticSampler};

#[test]
#[ignore = "manual tuning probe"]
fn probe_rugged_desk_training() {
    let cfg = ExperimentConfig::rugged_desk();
    let model = cfg.build_model().unwrap();
    let objective = cfg.build_objective().unwrap();
    let theta0 = cfg.build_theta();
    let train_cfg = cfg.train_config().unwrap();

    let t0 = std::time::Instant::now();
    let mut source = SyntheticSampler::new(&model, cfg.train.prior_sigma, cfg.train.noise_sigma, cfg.seed + 1);
    let (theta, stats) =
        coordinate_descent_train(theta0.clone(), &model, &objective, &mut source, train_cfg.clone())
            .unwrap();
    println!("cd training took {:?}", t0.elapsed());
    for s in stats.iter().step_by(10).chain(stats.last().into_iter().filter(|s| s.round % 10 != 0)) {
        println!(
            "round {:>3}: collect {:.4} train {:.4} -> {:.4}",
            s.round, s.collect.mean_entry_loss, s.train.mean_loss_before, s.train.mean_loss_after
        );
    }

    let t1 = std::time::Instant::now();
    let mut online_source =
        SyntheticSampler::new(&model, cfg.train.prior_sigma, cfg.train.noise_sigma, cfg.seed + 1);
    let (theta_online, ostats) =
        online_train(theta0.clone(), &model, &objective, &mut online_source, train_cfg).unwrap();
    println!("online training took {:?} ({} updates)", t1.elapsed(), ostats.theta_updates);

    // held-out observations
    let mut heldout_source = SyntheticSampler::new(&model, cfg.train.prior_sigma, 0.0, cfg.seed + 1000);
    let observations: Vec<Observation> = (0..100)
        .map(|_| {
            use lopt_core::trainer::ObservationSource;
            heldout_source.next_observation().unwrap()
        })
        .collect();

    let infer_cfg: InferenceConfig = cfg.inference_config().unwrap();
    let run = |theta: Option<&lopt_core::models::Mlp>| {
        let traces: Vec<_> = observations
            .iter()
            .enumerate()
            .map(|(i, obs)| {
                let per = InferenceConfig { seed: cfg.seed.wrapping_add(i as u64), ..infer_cfg.clone() };
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
    let random = run(Some(&theta0));
    let online = run(Some(&theta_online));

    println!("step | baseline |  mapped  |  random  |  online");
    for s in 0..=20 {
        println!(
            "{:>4} | {:>8.4} | {:>8.4} | {:>8.4} | {:>8.4}",
            s, baseline[s].mean, mapped[s].mean, random[s].mean, online[s].mean
        );
    }
    let viol: Vec<usize> = (1..=20).filter(|&s| mapped[s].mean > baseline[s].mean).collect();
    println!("criterion-4 violations at steps: {viol:?}");
    println!(
        "criterion-5: mapped@2 = {:.5} vs baseline@20 = {:.5} -> {}",
        mapped[2].mean,
        baseline[20].mean,
        mapped[2].mean < baseline[20].mean
    );
    println!(
        "criterion-6 orderings: full({:.4}) < online({:.4}): {}; full < baseline({:.4}): {}",
        mapped[20].mean,
        online[20].mean,
        mapped[20].mean < online[20].mean,
        baseline[20].mean,
        mapped[20].mean < baseline[20].mean
    );

    // criterion 7: spike counts on paired landscape grids for 10 observations.
    // Landscape recovery uses the classic broad optimizer so the recovered
    // latents spread over the data region in both spaces.
    use lopt_core::analysis::{landscape_grid, pca_directions, spike_count};
    use lopt_core::infer::eval_pipeline_loss;
    use lopt_core::optim::OptimizerConfig;
    let recovery_cfg = InferenceConfig::new(
        20,
        OptimizerConfig::adam(0.1),
        lopt_core::infer::InitPolicy::Zero,
        cfg.seed,
    )
    .unwrap();
    let recover = |obs: &Observation, idx: usize| {
        let per = InferenceConfig { seed: cfg.seed.wrapping_add(idx as u64), ..recovery_cfg.clone() };
        (
            infer_baseline(&model, &objective, obs, &per).unwrap().final_x,
            infer_mapped(&theta, &model, &objective, obs, &per).unwrap().final_input,
        )
    };
    let recovered: Vec<_> = observations.iter().enumerate().map(|(i, o)| recover(o, i)).collect();
    let xs: Vec<Vec<f64>> = recovered.iter().map(|(x, _)| x.clone()).collect();
    let zs: Vec<Vec<f64>> = recovered.iter().map(|(_, z)| z.clone()).collect();
    let x_pca = pca_directions(&xs).unwrap();
    let z_pca = pca_directions(&zs).unwrap();
    let x_std = (x_pca.eigenvalues.0).sqrt();
    let z_std = (z_pca.eigenvalues.0).sqrt();
    let mut x_spikes = 0;
    let mut z_spikes = 0;
    for (i, obs) in observations.iter().take(10).enumerate() {
        let (x_center, z_center) = &recovered[i];
        let xg = landscape_grid(
            |p| eval_pipeline_loss(&model, &objective, obs, None, p),
            x_center,
            &x_pca.dir1,
            &x_pca.dir2,
            3.0 * x_std,
            41,
        )
        .unwrap();
        let zg = landscape_grid(
            |p| eval_pipeline_loss(&model, &objective, obs, Some(&theta), p),
            z_center,
            &z_pca.dir1,
            &z_pca.dir2,
            3.0 * z_std,
            41,
        )
        .unwrap();
        x_spikes += spike_count(&xg, 2.0);
        z_spikes += spike_count(&zg, 2.0);
    }
    println!("x_std {:.3} z_std {:.3}", x_std, z_std);
    println!(
        "criterion-7 spikes: X total {} vs Z total {} -> {}",
        x_spikes,
        z_spikes,
        z_spikes < x_spikes
    );
    use lopt_core::analysis::mean_squared_laplacian;
    let (mut x_lap, mut z_lap) = (0.0, 0.0);
    for (i, obs) in observations.iter().take(10).enumerate() {
        let (x_center, z_center) = &recovered[i];
        let xg = landscape_grid(
            |p| eval_pipeline_loss(&model, &objective, obs, None, p),
            x_center, &x_pca.dir1, &x_pca.dir2, 3.0 * x_std, 41,
        ).unwrap();
        let zg = landscape_grid(
            |p| eval_pipeline_loss(&model, &objective, obs, Some(&theta), p),
            z_center, &z_pca.dir1, &z_pca.dir2, 3.0 * z_std, 41,
        ).unwrap();
        x_lap += mean_squared_laplacian(&xg);
        z_lap += mean_squared_laplacian(&zg);
    }
    println!("laplacian roughness: X {:.5} vs Z {:.5}", x_lap / 10.0, z_lap / 10.0);
}
