//! Scratch: inspect the vertex/neighbor-mean ratio distribution on desk
//! landscape grids. Ignored; manual use.

use lopt_core::analysis::{landscape_grid, pca_directions, LandscapeGrid};
use lopt_core::config::ExperimentConfig;
use lopt_core::infer::{eval_pipeline_loss, infer_baseline, InferenceConfig, InitPolicy};
use lopt_core::objective::Observation;
use lopt_core::optim::OptimizerConfig;
use lopt_core::trainer::{ObservationSource, SyntheticSampler};

fn ratio_stats(grid: &LandscapeGrid, label: &str) {
    let r = grid.resolution;
    let mut ratios = Vec::new();
    for i in 1..r - 1 {
        for j in 1..r - 1 {
            let v = grid.loss_at(i, j);
            let mut sum = 0.0;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di != 0 || dj != 0 {
                        sum += grid.loss_at((i as i64 + di) as usize, (j as i64 + dj) as usize);
                    }
                }
            }
            ratios.push(v / (sum / 8.0));
        }
    }
    ratios.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let lmin = grid.losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let lmax = grid.losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "{label}: loss range [{lmin:.3}, {lmax:.3}], top ratios {:?}",
        &ratios[..8.min(ratios.len())]
    );
}

#[test]
#[ignore = "manual probe"]
fn probe_ratios() {
    let cfg = ExperimentConfig::rugged_desk();
    let model = cfg.build_model().unwrap();
    let objective = cfg.build_objective().unwrap();
    let mut heldout = SyntheticSampler::new(&model, cfg.train.prior_sigma, 0.0, cfg.seed + 1000);
    let observations: Vec<Observation> =
        (0..30).map(|_| heldout.next_observation().unwrap()).collect();

    let recovery =
        InferenceConfig::new(20, OptimizerConfig::adam(0.1), InitPolicy::Zero, cfg.seed).unwrap();
    let xs: Vec<Vec<f64>> = observations
        .iter()
        .enumerate()
        .map(|(i, obs)| {
            let per = InferenceConfig { seed: cfg.seed.wrapping_add(i as u64), ..recovery.clone() };
            infer_baseline(&model, &objective, obs, &per).unwrap().final_x
        })
        .collect();
    let pca = pca_directions(&xs).unwrap();
    let std = pca.eigenvalues.0.sqrt();
    println!("x std {std:.3}, dirs {:?} {:?}", pca.dir1, pca.dir2);

    for (i, obs) in observations.iter().take(3).enumerate() {
        for hw_mult in [1.0, 2.0, 4.0] {
            let grid = landscape_grid(
                |p| eval_pipeline_loss(&model, &objective, obs, None, p),
                &xs[i],
                &pca.dir1,
                &pca.dir2,
                3.0 * std * hw_mult,
                41,
            )
            .unwrap();
            ratio_stats(&grid, &format!("obs {i} X hw={:.2}", 3.0 * std * hw_mult));
        }
    }
}
