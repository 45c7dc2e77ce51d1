//! Command-line harness: train mapping networks, run inference, export
//! landscape grids, compare ablation arms, and run the self-check suites.
//!
//! Exit codes: 0 ok, 1 failed check, 2 bad config or input, 3 io failure,
//! 4 divergence.

use clap::{Parser, Subcommand};
use lopt_core::analysis::{
    paired_landscapes, run_ablation, AblationArm, ABLATION_BASELINE, ABLATION_FULL,
    ABLATION_NO_CD_NO_BUFFER, ABLATION_RANDOM_THETA,
};
use lopt_core::check::{run_grad_checks, run_oracle_checks};
use lopt_core::config::{parse_mask_literal, ExperimentConfig};
use lopt_core::infer::{infer_baseline, infer_mapped, infer_multi, InferenceConfig, InitPolicy};
use lopt_core::io::{
    content_hash, load_checkpoint, load_observations, save_checkpoint, save_observations,
    write_ablation_csv, write_grid_csv, write_round_stats_csv, write_trace_csv,
    write_traces_long_csv, Checkpoint,
};
use lopt_core::objective::Observation;
use lopt_core::tensor::OpKind;
use lopt_core::trainer::{
    online_train, CoordinateDescentTrainer, ObservationSource, SyntheticSampler,
};
use lopt_core::{Error, Result};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "lopt", version, about = "Optimization-based inference with learned loss landscapes")]
struct Cli {
    /// Worker threads (default: all cores). Results are identical across
    /// thread counts.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a mapping network from a config file.
    Train {
        #[arg(short, long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use the online ablation variant instead of alternating rounds.
        #[arg(long)]
        online: bool,
    },
    /// Run inference against a checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Observation file (lopt-obs-v1).
        #[arg(long)]
        observations: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Optimize directly in the input space.
        #[arg(long)]
        baseline: bool,
        /// Optimize in the remapped space (default when neither flag given).
        #[arg(long)]
        mapped: bool,
        /// Number of random-start hypotheses per observation.
        #[arg(long)]
        hypotheses: Option<usize>,
        /// Mask literal applied to every observation (bitstring or index list).
        #[arg(long)]
        mask: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Export paired loss-landscape grids around recovered latents.
    Landscape {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        observations: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// How many observations get grids (all are used for the PCA fit).
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value_t = 41)]
        resolution: usize,
        #[arg(long, default_value_t = 2.0)]
        spike_factor: f64,
    },
    /// Evaluate the four ablation arms on held-out observations.
    Ablate {
        #[arg(short, long)]
        config: PathBuf,
        /// Checkpoint of the fully trained network.
        #[arg(long)]
        full: PathBuf,
        /// Checkpoint of the online (no coordinate descent, no buffer) run.
        #[arg(long = "no-cd")]
        no_cd: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Step counts to report, comma separated.
        #[arg(long, default_value = "20,200")]
        steps: String,
        #[arg(long, default_value_t = 100)]
        observations: usize,
    },
    /// Run the gradient and oracle self-check suites.
    Check {
        /// Only the finite-difference gradient checks.
        #[arg(long)]
        grad: bool,
        /// Only the brute-force oracle checks.
        #[arg(long)]
        oracle: bool,
        /// Random points per gradient check.
        #[arg(long, default_value_t = 100)]
        seeds: usize,
        /// Corrupt one op's adjoint to prove the gate trips (op name).
        #[arg(long, hide = true)]
        perturb_adjoint: Option<String>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    };
    std::process::exit(code);
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Divergence { .. } => 4,
        Error::Io(_) => 3,
        Error::Config(_)
        | Error::Parse { .. }
        | Error::InvalidInput(_)
        | Error::DimMismatch { .. }
        | Error::Uninitialized(_) => 2,
        _ => 1,
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Train { config, out, online } => cmd_train(&config, out, online),
        Command::Infer {
            checkpoint,
            observations,
            out,
            baseline,
            mapped,
            hypotheses,
            mask,
            steps,
            seed,
        } => cmd_infer(
            &checkpoint,
            &observations,
            &out,
            baseline,
            mapped,
            hypotheses,
            mask,
            steps,
            seed,
        ),
        Command::Landscape { checkpoint, observations, out, count, resolution, spike_factor } => {
            cmd_landscape(&checkpoint, &observations, &out, count, resolution, spike_factor)
        }
        Command::Ablate { config, full, no_cd, out, steps, observations } => {
            cmd_ablate(&config, &full, &no_cd, &out, &steps, observations)
        }
        Command::Check { grad, oracle, seeds, perturb_adjoint } => {
            cmd_check(grad, oracle, seeds, perturb_adjoint)
        }
    }
}

fn load_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Ok(value) = std::env::var("LOPT_SEED") {
        cfg.seed = value
            .parse()
            .map_err(|_| Error::config(format!("LOPT_SEED is not an integer: {value}")))?;
    }
    Ok(cfg)
}

fn heldout_observations(
    model: &lopt_core::models::ForwardModel,
    cfg: &ExperimentConfig,
    count: usize,
) -> Result<Vec<Observation>> {
    let mut sampler =
        SyntheticSampler::new(model, cfg.train.prior_sigma, cfg.train.noise_sigma, cfg.seed + 1000);
    (0..count).map(|_| sampler.next_observation()).collect()
}

fn cmd_train(config_path: &Path, out_override: Option<PathBuf>, online_flag: bool) -> Result<i32> {
    let mut cfg = load_experiment_config(config_path)?;
    if let Some(out) = out_override {
        cfg.out_dir = out.to_string_lossy().into_owned();
    }
    let out_dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("config_resolved.txt"), cfg.to_text())?;
    let hash = cfg.hash();

    let model = cfg.build_model()?;
    let objective = cfg.build_objective()?;
    let theta = cfg.build_theta();
    let train_cfg = cfg.train_config()?;
    let infer_cfg = cfg.inference_config()?;
    let mut source =
        SyntheticSampler::new(&model, cfg.train.prior_sigma, cfg.train.noise_sigma, cfg.seed + 1);

    if online_flag || cfg.train.online {
        let (trained, stats) = online_train(theta, &model, &objective, &mut source, train_cfg)?;
        let ckpt = Checkpoint {
            round: cfg.train.rounds,
            seed: cfg.seed,
            theta: trained,
            theta_opt: lopt_core::optim::Optimizer::new(
                cfg.train_config()?.theta_optimizer.clone(),
            ),
            model: model.clone(),
            objective: objective.clone(),
            infer: infer_cfg,
        };
        save_checkpoint(&out_dir.join("ck_final.lopt"), &ckpt)?;
        std::fs::write(
            out_dir.join("online_stats.csv"),
            format!(
                "# config {hash}\ntheta_updates,mean_first_loss,mean_final_loss\n{},{},{}\n",
                stats.theta_updates, stats.mean_first_loss, stats.mean_final_loss
            ),
        )?;
        println!(
            "online training done: {} updates, mean loss {:.6} -> {:.6}",
            stats.theta_updates, stats.mean_first_loss, stats.mean_final_loss
        );
    } else {
        let rounds = train_cfg.rounds;
        let mut trainer = CoordinateDescentTrainer::new(theta, &model, &objective, train_cfg)?;
        let mut stats = Vec::with_capacity(rounds);
        for _ in 0..rounds {
            let round_stats = trainer.run_round(&mut source)?;
            let round = round_stats.round;
            stats.push(round_stats);
            if cfg.train.checkpoint_every > 0 && round % cfg.train.checkpoint_every == 0 && round < rounds
            {
                let ckpt = Checkpoint {
                    round,
                    seed: cfg.seed,
                    theta: trainer.theta().clone(),
                    theta_opt: trainer.theta_optimizer().clone(),
                    model: model.clone(),
                    objective: objective.clone(),
                    infer: infer_cfg.clone(),
                };
                save_checkpoint(&out_dir.join(format!("ck_round_{round:04}.lopt")), &ckpt)?;
            }
        }
        write_round_stats_csv(
            &out_dir.join("round_stats.csv"),
            &stats,
            &format!("config {hash}"),
        )?;
        let final_ckpt = Checkpoint {
            round: trainer.round(),
            seed: cfg.seed,
            theta: trainer.theta().clone(),
            theta_opt: trainer.theta_optimizer().clone(),
            model: model.clone(),
            objective: objective.clone(),
            infer: infer_cfg,
        };
        save_checkpoint(&out_dir.join("ck_final.lopt"), &final_ckpt)?;
        let last = stats.last().unwrap();
        println!(
            "trained {} rounds: collect loss {:.6}, buffer loss {:.6} -> {:.6}",
            stats.len(),
            last.collect.mean_entry_loss,
            last.train.mean_loss_before,
            last.train.mean_loss_after
        );
    }

    let heldout = heldout_observations(&model, &cfg, 100)?;
    save_observations(&out_dir.join("heldout_obs.lopt"), &heldout)?;
    println!("artifacts written to {}", out_dir.display());
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_infer(
    checkpoint_path: &Path,
    observations_path: &Path,
    out_dir: &Path,
    baseline: bool,
    mapped: bool,
    hypotheses: Option<usize>,
    mask: Option<String>,
    steps: Option<usize>,
    seed: Option<u64>,
) -> Result<i32> {
    let ckpt = load_checkpoint(checkpoint_path)?;
    let ckpt_hash = content_hash(&std::fs::read_to_string(checkpoint_path)?);
    let mut observations = load_observations(observations_path)?;
    std::fs::create_dir_all(out_dir)?;

    if let Some(literal) = mask {
        let d_y = ckpt.model.output_dim();
        let parsed = parse_mask_literal(&literal, d_y)?
            .ok_or_else(|| Error::config("empty mask literal"))?;
        observations = observations
            .into_iter()
            .map(|obs| Observation::new(obs.y().to_vec())?.with_mask(parsed.clone()))
            .collect::<Result<_>>()?;
    }

    let mut infer_cfg = ckpt.infer.clone();
    if let Some(s) = steps {
        infer_cfg.steps = s;
    }
    if let Some(h) = hypotheses {
        infer_cfg = infer_cfg.with_hypotheses(h)?;
        if h >= 2 && !matches!(infer_cfg.init, InitPolicy::Gaussian { .. }) {
            infer_cfg.init = InitPolicy::Gaussian { sigma: 1.0 };
        }
    }
    if let Ok(value) = std::env::var("LOPT_SEED") {
        infer_cfg.seed = value
            .parse()
            .map_err(|_| Error::config(format!("LOPT_SEED is not an integer: {value}")))?;
    }
    if let Some(s) = seed {
        infer_cfg.seed = s;
    }
    let run_baseline = baseline;
    let run_mapped = mapped || !baseline;
    let comment = format!("checkpoint {ckpt_hash}");

    let mut long: Vec<(String, lopt_core::infer::InferenceTrace)> = Vec::new();
    for (i, obs) in observations.iter().enumerate() {
        let per = InferenceConfig {
            seed: infer_cfg.seed.wrapping_add(i as u64),
            ..infer_cfg.clone()
        };
        if run_baseline {
            let trace = infer_baseline(&ckpt.model, &ckpt.objective, obs, &per)?;
            let name = format!("obs{i:03}_baseline");
            write_trace_csv(&out_dir.join(format!("{name}.csv")), &trace, &comment)?;
            long.push((name, trace));
        }
        if run_mapped {
            if per.hypotheses >= 2 {
                let traces = infer_multi(&ckpt.theta, &ckpt.model, &ckpt.objective, obs, &per)?;
                for (k, trace) in traces.into_iter().enumerate() {
                    let name = format!("obs{i:03}_hyp{k}");
                    write_trace_csv(&out_dir.join(format!("{name}.csv")), &trace, &comment)?;
                    long.push((name, trace));
                }
            } else {
                let trace = infer_mapped(&ckpt.theta, &ckpt.model, &ckpt.objective, obs, &per)?;
                let name = format!("obs{i:03}_mapped");
                write_trace_csv(&out_dir.join(format!("{name}.csv")), &trace, &comment)?;
                long.push((name, trace));
            }
        }
    }
    write_traces_long_csv(&out_dir.join("traces_long.csv"), &long, &comment)?;
    println!("wrote {} trace files to {}", long.len(), out_dir.display());
    Ok(0)
}

fn cmd_landscape(
    checkpoint_path: &Path,
    observations_path: &Path,
    out_dir: &Path,
    count: Option<usize>,
    resolution: usize,
    spike_factor: f64,
) -> Result<i32> {
    let ckpt = load_checkpoint(checkpoint_path)?;
    let ckpt_hash = content_hash(&std::fs::read_to_string(checkpoint_path)?);
    let observations = load_observations(observations_path)?;
    std::fs::create_dir_all(out_dir)?;
    let count = count.unwrap_or(observations.len()).min(observations.len());

    let pairs = paired_landscapes(
        &ckpt.model,
        &ckpt.objective,
        &ckpt.theta,
        &observations,
        count,
        ckpt.seed,
        resolution,
        spike_factor,
    )?;
    let comment = format!("checkpoint {ckpt_hash}");
    let mut summary = vec![format!("# {comment}"), "obs,x_spikes,z_spikes".to_string()];
    let (mut x_total, mut z_total) = (0usize, 0usize);
    for (i, pair) in pairs.iter().enumerate() {
        write_grid_csv(&out_dir.join(format!("obs{i:03}_x_grid.csv")), &pair.x_grid, &comment)?;
        write_grid_csv(&out_dir.join(format!("obs{i:03}_z_grid.csv")), &pair.z_grid, &comment)?;
        summary.push(format!("{i},{},{}", pair.x_spikes, pair.z_spikes));
        x_total += pair.x_spikes;
        z_total += pair.z_spikes;
    }
    std::fs::write(out_dir.join("landscape_summary.csv"), summary.join("\n") + "\n")?;
    println!(
        "wrote {} grid pairs; spikes: input space {x_total}, remapped space {z_total}",
        pairs.len()
    );
    Ok(0)
}

fn cmd_ablate(
    config_path: &Path,
    full_path: &Path,
    no_cd_path: &Path,
    out_dir: &Path,
    steps: &str,
    observation_count: usize,
) -> Result<i32> {
    for path in [full_path, no_cd_path] {
        if !path.exists() {
            return Err(Error::invalid(format!(
                "missing variant checkpoint: {}",
                path.display()
            )));
        }
    }
    let cfg = load_experiment_config(config_path)?;
    let full = load_checkpoint(full_path)?;
    let no_cd = load_checkpoint(no_cd_path)?;
    let model = cfg.build_model()?;
    let objective = cfg.build_objective()?;
    let random_theta = cfg.build_theta();
    let step_counts: Vec<usize> = steps
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::config(format!("bad step count: {s}")))
        })
        .collect::<Result<_>>()?;

    let observations = heldout_observations(&model, &cfg, observation_count)?;
    let mut infer_cfg = cfg.inference_config()?;
    infer_cfg.steps = *step_counts.iter().max().unwrap();

    let arms = vec![
        AblationArm { label: ABLATION_FULL.into(), theta: Some(&full.theta) },
        AblationArm { label: ABLATION_NO_CD_NO_BUFFER.into(), theta: Some(&no_cd.theta) },
        AblationArm { label: ABLATION_RANDOM_THETA.into(), theta: Some(&random_theta) },
        AblationArm { label: ABLATION_BASELINE.into(), theta: None },
    ];
    let report = run_ablation(&model, &objective, &arms, &observations, &infer_cfg, &step_counts)?;

    std::fs::create_dir_all(out_dir)?;
    write_ablation_csv(
        &out_dir.join("ablation.csv"),
        &report,
        &format!("config {}", cfg.hash()),
    )?;
    println!("variant            {}", report
        .step_counts
        .iter()
        .map(|s| format!("@{s:<10}"))
        .collect::<Vec<_>>()
        .join(" "));
    for (label, means) in &report.rows {
        println!(
            "{label:<18} {}",
            means.iter().map(|m| format!("{m:<11.6}")).collect::<Vec<_>>().join(" ")
        );
    }
    Ok(0)
}

fn cmd_check(grad: bool, oracle: bool, seeds: usize, perturb: Option<String>) -> Result<i32> {
    let run_grad = grad || !oracle;
    let run_oracle = oracle || !grad;
    let perturbation = match perturb {
        Some(name) => Some((
            OpKind::parse(&name)
                .ok_or_else(|| Error::config(format!("unknown op for perturbation: {name}")))?,
            1e-3,
        )),
        None => None,
    };

    let mut all_pass = true;
    if run_grad {
        for result in run_grad_checks(seeds, perturbation) {
            println!("{}", result.report_line());
            all_pass &= result.pass;
        }
    }
    if run_oracle {
        for result in run_oracle_checks()? {
            println!("{}", result.report_line());
            all_pass &= result.pass;
        }
    }
    Ok(if all_pass { 0 } else { 1 })
}
