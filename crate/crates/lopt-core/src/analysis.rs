//! Landscape grids, convergence aggregation, smoothness metrics and the
//! ablation harness.
//!
//! Grids are spanned by the top-2 principal directions of latents recovered
//! from short inference runs. Smoothness is quantified two ways: the number
//! of interior vertices whose loss exceeds a multiple of their 8-neighbor
//! mean ("spikes"), and the mean squared discrete Laplacian.

use crate::error::{Error, Result};
use crate::infer::{infer_baseline, infer_mapped, InferenceConfig, InferenceTrace};
use crate::models::{ForwardModel, Mlp};
use crate::objective::{Objective, Observation};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

/// Default spike threshold: a vertex spikes when its loss exceeds this
/// factor times the mean of its 8 neighbors.
pub const DEFAULT_SPIKE_FACTOR: f64 = 2.0;

/// Top-2 principal directions of a latent cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaDirections {
    pub dir1: Vec<f64>,
    pub dir2: Vec<f64>,
    pub eigenvalues: (f64, f64),
    /// Set when the cloud is effectively rank-1 and dir2 is an arbitrary
    /// orthogonal completion.
    pub degenerate: bool,
}

/// Principal directions of an n x d latent matrix via eigendecomposition of
/// the centered covariance. Signs are fixed by making each direction's
/// largest-magnitude component positive.
pub fn pca_directions(latents: &[Vec<f64>]) -> Result<PcaDirections> {
    let n = latents.len();
    if n < 3 {
        return Err(Error::invalid(format!("pca needs at least 3 points, got {n}")));
    }
    let d = latents[0].len();
    if latents.iter().any(|p| p.len() != d) {
        return Err(Error::invalid("pca points have inconsistent dimensions"));
    }
    if d < 2 {
        return Err(Error::invalid("pca needs dimension >= 2"));
    }

    let mean: Vec<f64> = (0..d)
        .map(|j| latents.iter().map(|p| p[j]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = vec![0.0; d * d];
    for p in latents {
        for i in 0..d {
            let di = p[i] - mean[i];
            for j in 0..d {
                cov[i * d + j] += di * (p[j] - mean[j]);
            }
        }
    }
    for v in &mut cov {
        *v /= (n - 1) as f64;
    }

    let eigen = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &cov));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].partial_cmp(&eigen.eigenvalues[a]).unwrap());
    let lambda1 = eigen.eigenvalues[order[0]];
    let lambda2 = eigen.eigenvalues[order[1]];

    if lambda1 <= 1e-12 {
        return Err(Error::DegenerateData(
            "latent cloud has no variance in any direction".into(),
        ));
    }

    let column = |idx: usize| -> Vec<f64> { eigen.eigenvectors.column(idx).iter().copied().collect() };
    let dir1 = fix_sign(column(order[0]));
    let degenerate = lambda2 <= 1e-12 * lambda1;
    let dir2 = if degenerate {
        fix_sign(orthogonal_completion(&dir1))
    } else {
        fix_sign(column(order[1]))
    };

    Ok(PcaDirections {
        dir1,
        dir2,
        eigenvalues: (lambda1, lambda2.max(0.0)),
        degenerate,
    })
}

fn fix_sign(mut v: Vec<f64>) -> Vec<f64> {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in &mut v {
            *x = -*x;
        }
    }
    v
}

/// A unit vector orthogonal to `dir`, built from the basis vector least
/// aligned with it.
fn orthogonal_completion(dir: &[f64]) -> Vec<f64> {
    let d = dir.len();
    let least = (0..d).min_by(|&a, &b| dir[a].abs().partial_cmp(&dir[b].abs()).unwrap()).unwrap();
    let mut v = vec![0.0; d];
    v[least] = 1.0;
    let dot: f64 = v.iter().zip(dir).map(|(a, b)| a * b).sum();
    for (vi, di) in v.iter_mut().zip(dir) {
        *vi -= dot * di;
    }
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for vi in &mut v {
        *vi /= norm;
    }
    v
}

/// Loss values over a 2-plane through `center`, spanned by two orthonormal
/// directions. Losses are stored row-major: index = alpha_idx * resolution +
/// beta_idx.
#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub center: Vec<f64>,
    pub dir1: Vec<f64>,
    pub dir2: Vec<f64>,
    pub half_width: f64,
    pub resolution: usize,
    pub losses: Vec<f64>,
}

impl LandscapeGrid {
    pub fn offset(&self, idx: usize) -> f64 {
        -self.half_width + 2.0 * self.half_width * idx as f64 / (self.resolution - 1) as f64
    }

    pub fn loss_at(&self, alpha_idx: usize, beta_idx: usize) -> f64 {
        self.losses[alpha_idx * self.resolution + beta_idx]
    }
}

/// Evaluates `eval` over the uniform grid. Non-finite losses are recorded,
/// not errors. Rows are evaluated in parallel and collected in order.
pub fn landscape_grid(
    eval: impl Fn(&[f64]) -> Result<f64> + Sync,
    center: &[f64],
    dir1: &[f64],
    dir2: &[f64],
    half_width: f64,
    resolution: usize,
) -> Result<LandscapeGrid> {
    if resolution < 3 {
        return Err(Error::invalid(format!("grid resolution must be >= 3, got {resolution}")));
    }
    if !(half_width > 0.0) {
        return Err(Error::invalid(format!("grid half width must be > 0, got {half_width}")));
    }
    let d = center.len();
    if dir1.len() != d || dir2.len() != d {
        return Err(Error::DimMismatch {
            op: "landscape_grid",
            left: vec![dir1.len(), dir2.len()],
            right: vec![d, d],
        });
    }
    let norm1: f64 = dir1.iter().map(|x| x * x).sum::<f64>();
    let norm2: f64 = dir2.iter().map(|x| x * x).sum::<f64>();
    let dot: f64 = dir1.iter().zip(dir2).map(|(a, b)| a * b).sum();
    if (norm1 - 1.0).abs() > 1e-10 || (norm2 - 1.0).abs() > 1e-10 || dot.abs() > 1e-10 {
        return Err(Error::invalid(
            "grid directions must be unit-norm and mutually orthogonal",
        ));
    }

    let offset = |idx: usize| -half_width + 2.0 * half_width * idx as f64 / (resolution - 1) as f64;
    let rows: Vec<Vec<f64>> = (0..resolution)
        .into_par_iter()
        .map(|ai| {
            let alpha = offset(ai);
            let mut row = Vec::with_capacity(resolution);
            for bi in 0..resolution {
                let beta = offset(bi);
                let point: Vec<f64> = center
                    .iter()
                    .zip(dir1.iter().zip(dir2))
                    .map(|(c, (d1, d2))| c + alpha * d1 + beta * d2)
                    .collect();
                row.push(match eval(&point) {
                    Ok(v) => v,
                    Err(_) => f64::NAN,
                });
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(LandscapeGrid {
        center: center.to_vec(),
        dir1: dir1.to_vec(),
        dir2: dir2.to_vec(),
        half_width,
        resolution,
        losses: rows.into_iter().flatten().collect(),
    })
}

/// Counts interior vertices whose loss exceeds `factor` times the mean of
/// their 8 neighbors. Vertices with non-finite values in their neighborhood
/// are skipped.
pub fn spike_count(grid: &LandscapeGrid, factor: f64) -> usize {
    let r = grid.resolution;
    let mut count = 0;
    for i in 1..r - 1 {
        'vertex: for j in 1..r - 1 {
            let v = grid.loss_at(i, j);
            if !v.is_finite() {
                continue;
            }
            let mut sum = 0.0;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let nb = grid.loss_at((i as i64 + di) as usize, (j as i64 + dj) as usize);
                    if !nb.is_finite() {
                        continue 'vertex;
                    }
                    sum += nb;
                }
            }
            if v > factor * (sum / 8.0) {
                count += 1;
            }
        }
    }
    count
}

/// Mean squared discrete Laplacian over interior vertices; larger means
/// rougher.
pub fn mean_squared_laplacian(grid: &LandscapeGrid) -> f64 {
    let r = grid.resolution;
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 1..r - 1 {
        for j in 1..r - 1 {
            let lap = grid.loss_at(i - 1, j)
                + grid.loss_at(i + 1, j)
                + grid.loss_at(i, j - 1)
                + grid.loss_at(i, j + 1)
                - 4.0 * grid.loss_at(i, j);
            if lap.is_finite() {
                total += lap * lap;
                n += 1;
            }
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        total / n as f64
    }
}

/// Per-step mean and standard error across traces.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Aggregates equal-length traces into a per-step mean/stderr table.
pub fn convergence_curves(traces: &[InferenceTrace]) -> Result<Vec<CurvePoint>> {
    if traces.is_empty() {
        return Err(Error::invalid("convergence_curves needs at least one trace"));
    }
    let len = traces[0].len();
    if traces.iter().any(|t| t.len() != len) {
        return Err(Error::invalid("convergence_curves: traces have mixed lengths"));
    }
    let n = traces.len();
    Ok((0..len)
        .map(|s| {
            let values: Vec<f64> = traces.iter().map(|t| t.records[s].loss).collect();
            let mean = values.iter().sum::<f64>() / n as f64;
            let stderr = if n > 1 {
                let var =
                    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                0.0
            };
            CurvePoint { step: traces[0].records[s].step, mean, stderr, n }
        })
        .collect())
}

/// Least-squares slope of values against their index; used for trend checks
/// on per-round training stats.
pub fn linear_trend_slope(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = values.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, y) in values.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (y - mean_y);
        den += dx * dx;
    }
    num / den
}

/// Inference settings used to collect recovered latents for landscape
/// analysis: 20 steps of the classic broad optimizer from a zero start, in
/// whichever space is being visualized. Kept independent of the experiment's
/// own inference rule so the recovered set spreads over the data region.
pub fn recovery_config(seed: u64) -> InferenceConfig {
    InferenceConfig::new(
        20,
        crate::optim::OptimizerConfig::adam(0.1),
        crate::infer::InitPolicy::Zero,
        seed,
    )
    .expect("static recovery settings are valid")
}

/// Recovers one latent per observation with [`recovery_config`]: the final x
/// of baseline descent, or the final z of mapped descent when a network is
/// given. Per-observation seeds derive from `seed` by index.
pub fn recover_latents(
    model: &ForwardModel,
    objective: &Objective,
    theta: Option<&Mlp>,
    observations: &[Observation],
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let base = recovery_config(seed);
    observations
        .par_iter()
        .enumerate()
        .map(|(i, obs)| {
            let cfg = InferenceConfig { seed: seed.wrapping_add(i as u64), ..base.clone() };
            match theta {
                Some(net) => Ok(infer_mapped(net, model, objective, obs, &cfg)?.final_input),
                None => Ok(infer_baseline(model, objective, obs, &cfg)?.final_x),
            }
        })
        .collect()
}

/// Paired per-observation grids: the input-space landscape and the mapped
/// landscape, each spanned by the top-2 principal directions of its own
/// recovered latents, with half-width three standard deviations along the
/// leading direction.
pub struct LandscapePair {
    pub x_grid: LandscapeGrid,
    pub z_grid: LandscapeGrid,
    pub x_spikes: usize,
    pub z_spikes: usize,
}

pub fn paired_landscapes(
    model: &ForwardModel,
    objective: &Objective,
    theta: &Mlp,
    observations: &[Observation],
    count: usize,
    seed: u64,
    resolution: usize,
    spike_factor: f64,
) -> Result<Vec<LandscapePair>> {
    let xs = recover_latents(model, objective, None, observations, seed)?;
    let zs = recover_latents(model, objective, Some(theta), observations, seed)?;
    let x_pca = pca_directions(&xs)?;
    let z_pca = pca_directions(&zs)?;
    let x_width = 3.0 * x_pca.eigenvalues.0.sqrt();
    let z_width = 3.0 * z_pca.eigenvalues.0.sqrt();

    observations
        .iter()
        .take(count)
        .enumerate()
        .map(|(i, obs)| {
            let x_grid = landscape_grid(
                |p| crate::infer::eval_pipeline_loss(model, objective, obs, None, p),
                &xs[i],
                &x_pca.dir1,
                &x_pca.dir2,
                x_width,
                resolution,
            )?;
            let z_grid = landscape_grid(
                |p| crate::infer::eval_pipeline_loss(model, objective, obs, Some(theta), p),
                &zs[i],
                &z_pca.dir1,
                &z_pca.dir2,
                z_width,
                resolution,
            )?;
            Ok(LandscapePair {
                x_spikes: spike_count(&x_grid, spike_factor),
                z_spikes: spike_count(&z_grid, spike_factor),
                x_grid,
                z_grid,
            })
        })
        .collect()
}

/// Labels for the four ablation arms.
pub const ABLATION_FULL: &str = "full";
pub const ABLATION_NO_CD_NO_BUFFER: &str = "no_cd_no_buffer";
pub const ABLATION_RANDOM_THETA: &str = "random_theta";
pub const ABLATION_BASELINE: &str = "baseline";

/// One arm of the ablation: a label and the network to use, or None to
/// optimize in the input space directly.
pub struct AblationArm<'a> {
    pub label: String,
    pub theta: Option<&'a Mlp>,
}

/// Mean loss per variant at each configured step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub step_counts: Vec<usize>,
    /// (label, mean loss at each step count, in step_counts order)
    pub rows: Vec<(String, Vec<f64>)>,
}

/// Evaluates every arm on the same observations with per-observation seeds
/// derived from the config seed, reporting mean loss at each step count.
pub fn run_ablation(
    model: &ForwardModel,
    objective: &Objective,
    arms: &[AblationArm<'_>],
    observations: &[Observation],
    cfg: &InferenceConfig,
    step_counts: &[usize],
) -> Result<AblationReport> {
    if arms.is_empty() || observations.is_empty() || step_counts.is_empty() {
        return Err(Error::invalid("ablation needs arms, observations and step counts"));
    }
    let max_steps = *step_counts.iter().max().unwrap();
    let run_cfg = InferenceConfig { steps: max_steps, ..cfg.clone() };

    let mut rows = Vec::with_capacity(arms.len());
    for arm in arms {
        let traces: Vec<InferenceTrace> = observations
            .par_iter()
            .enumerate()
            .map(|(i, obs)| {
                let per_obs = InferenceConfig {
                    seed: run_cfg.seed.wrapping_add(i as u64),
                    ..run_cfg.clone()
                };
                match arm.theta {
                    Some(theta) => infer_mapped(theta, model, objective, obs, &per_obs),
                    None => infer_baseline(model, objective, obs, &per_obs),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let means: Vec<f64> = step_counts
            .iter()
            .map(|&s| {
                traces.iter().map(|t| t.records[s].loss).sum::<f64>() / traces.len() as f64
            })
            .collect();
        rows.push((arm.label.clone(), means));
    }
    Ok(AblationReport { step_counts: step_counts.to_vec(), rows })
}
