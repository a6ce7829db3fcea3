//! Experiment execution: builds targets and chains from a config, runs
//! every trial, derives the metric series, and writes the CSV and manifest
//! artifacts.
//!
//! Trials are independent; they run one after another here and each owns
//! its chains and RNG streams, so every number except wall-clock time is a
//! pure function of the config and the base seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::contour::{ContourParams, Partition, Theta};
use crate::error::Result;
use crate::interaction::{InteractingConfig, LoggedMessage, Mode, SampleRow};
use crate::metrics::{
    fixed_point_oracle, kl_divergence, theta_error, truth_grid, GridHistogram, MetricPoint,
    TrialResult,
};
use crate::rng::{seeded_rng, split_seed, standard_normal};
use crate::samplers::{
    resgld_round, sgld_round, ChainState, LearningRateSchedule, SwapState, TemperatureLadder,
};
use crate::targets::{Target, VRState};

use super::config::{AlgorithmSpec, ExperimentConfig, InitSpec};
use super::config::config_hash;

/// One trial's metric series plus the raw material behind it.
#[derive(Clone, Debug)]
pub struct TrialOutput {
    pub result: TrialResult,
    pub samples: Vec<SampleRow>,
    /// Weight snapshots `(round, weights)` at each checkpoint; empty for
    /// samplers without weights.
    pub theta_trace: Vec<(u64, Vec<f64>)>,
    /// Coordinator traffic, populated when message logging is on.
    pub message_log: Vec<LoggedMessage>,
}

/// Reproducibility record written next to the CSVs.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub algorithm: String,
    pub base_seed: u64,
    pub trial_seeds: Vec<u64>,
    pub rounds: u64,
    pub chains: usize,
    /// The step budget every completed trial must consume: rounds × chains.
    pub budget_chain_steps: u64,
    /// True when the oracle quadrature box clipped target mass.
    pub oracle_truncated: bool,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub trials: Vec<TrialManifest>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialManifest {
    pub seed: u64,
    pub completed_rounds: u64,
    pub chain_steps: u64,
    pub budget_ok: bool,
    pub aborted: Option<String>,
}

/// Everything `run_experiment` produced, with the written file paths.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub trials: Vec<TrialOutput>,
    pub manifest: RunManifest,
    pub truth: Option<Vec<f64>>,
    pub theta_star: Option<Vec<f64>>,
    pub files: Vec<PathBuf>,
}

struct RawCheckpoint {
    round: u64,
    wall_ms: u64,
    messages: u64,
    theta: Option<Vec<f64>>,
}

struct RawTrial {
    checkpoints: Vec<RawCheckpoint>,
    samples: Vec<SampleRow>,
    completed_rounds: u64,
    chain_steps: u64,
    message_scalars: u64,
    message_log: Vec<LoggedMessage>,
    aborted: Option<String>,
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Runs all configured trials and writes the artifacts into the config's
/// output directory. A trial abort is recorded in its result and manifest
/// entry; the remaining trials still run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let started = unix_ms();
    let target = config.target.build()?;

    let truth = match &config.grid {
        Some(grid) => Some(truth_grid(&target, grid)?),
        None => None,
    };
    let (theta_star, oracle_truncated) = match (&config.oracle, config.algorithm.contour()) {
        (Some(oracle), Some(contour)) => {
            let quad = oracle.build()?;
            let partition =
                Partition::uniform(contour.first_cut, contour.band_width, contour.bands)?;
            let tau = config.algorithm.tau().unwrap_or(1.0);
            let fp = fixed_point_oracle(&target, &partition, tau, contour.zeta, &quad)?;
            (Some(fp.theta_star), fp.truncated)
        }
        _ => (None, false),
    };

    let trial_seeds: Vec<u64> = (0..config.repeats)
        .map(|t| split_seed(config.base_seed, t as u64))
        .collect();
    let budget = config.rounds * config.algorithm.total_chains() as u64;

    let mut trials = Vec::with_capacity(config.repeats);
    let mut trial_manifests = Vec::with_capacity(config.repeats);
    for &trial_seed in &trial_seeds {
        let raw = run_single(config, &target, trial_seed)?;
        trial_manifests.push(TrialManifest {
            seed: trial_seed,
            completed_rounds: raw.completed_rounds,
            chain_steps: raw.chain_steps,
            budget_ok: raw.chain_steps == budget,
            aborted: raw.aborted.clone(),
        });
        trials.push(assemble_trial(config, raw, trial_seed, &truth, &theta_star)?);
    }

    let manifest = RunManifest {
        config_hash: config_hash(config),
        version: env!("CARGO_PKG_VERSION").to_string(),
        algorithm: config.algorithm.name().to_string(),
        base_seed: config.base_seed,
        trial_seeds,
        rounds: config.rounds,
        chains: config.algorithm.total_chains(),
        budget_chain_steps: budget,
        oracle_truncated,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        trials: trial_manifests,
    };

    let files = write_artifacts(config, target.dim(), &trials, &manifest, &theta_star)?;
    Ok(ExperimentOutput {
        trials,
        manifest,
        truth,
        theta_star,
        files,
    })
}

fn initial_positions(config: &ExperimentConfig, dim: usize, trial_seed: u64, chains: usize) -> Vec<Vec<f64>> {
    match &config.init {
        InitSpec::Origin => vec![vec![0.0; dim]; chains],
        InitSpec::Point { x } => vec![x.clone(); chains],
        InitSpec::Gaussian { std } => {
            let mut rng = seeded_rng(split_seed(trial_seed, u64::MAX));
            (0..chains)
                .map(|_| (0..dim).map(|_| std * standard_normal(&mut rng)).collect())
                .collect()
        }
    }
}

fn build_chains(
    config: &ExperimentConfig,
    dim: usize,
    trial_seed: u64,
    chains: usize,
    vr_period: usize,
) -> Result<Vec<ChainState>> {
    let inits = initial_positions(config, dim, trial_seed, chains);
    inits
        .into_iter()
        .enumerate()
        .map(|(c, x)| {
            let state = ChainState::new(x, split_seed(trial_seed, c as u64));
            if vr_period > 0 {
                Ok(state.with_vr(VRState::new(vr_period)?))
            } else {
                Ok(state)
            }
        })
        .collect()
}

fn run_single(config: &ExperimentConfig, target: &Target, trial_seed: u64) -> Result<RawTrial> {
    match &config.algorithm {
        AlgorithmSpec::Csgld { .. } | AlgorithmSpec::Icsgld { .. } => {
            run_contour_trial(config, target, trial_seed)
        }
        _ => run_baseline_trial(config, target, trial_seed),
    }
}

fn run_contour_trial(
    config: &ExperimentConfig,
    target: &Target,
    trial_seed: u64,
) -> Result<RawTrial> {
    let contour = config.algorithm.contour().expect("contour algorithm");
    let (chains, workers, comm_interval, mode, eps, tau) = match &config.algorithm {
        AlgorithmSpec::Icsgld {
            chains,
            workers,
            comm_interval,
            mode,
            eps,
            tau,
            ..
        } => (*chains, *workers, *comm_interval, *mode, eps, *tau),
        AlgorithmSpec::Csgld { eps, tau, .. } => (1, 1, 1, Mode::SharedMemory, eps, *tau),
        _ => unreachable!(),
    };

    let partition = Partition::uniform(contour.first_cut, contour.band_width, contour.bands)?;
    let params = ContourParams::new(contour.zeta, tau, contour.field_variant)?;
    let theta0 = Theta::uniform(contour.bands);
    let states = build_chains(config, target.dim(), trial_seed, chains, contour.vr_period)?;

    let iconfig = InteractingConfig {
        workers,
        mode,
        comm_interval,
        rounds: config.rounds,
        tau,
        eps: eps.build(config.rounds),
        omega: contour.omega.build()?,
        sample_every: config.sample_stride,
        checkpoint_every: config.resolved_checkpoint_every(),
        log_messages: config.log_messages,
    };

    let (record, aborted) =
        match crate::interaction::run_interacting(&iconfig, target, &partition, &params, &theta0, states) {
            Ok(record) => (record, None),
            Err(failure) => (failure.partial, Some(failure.error.to_string())),
        };

    Ok(RawTrial {
        checkpoints: record
            .checkpoints
            .iter()
            .map(|cp| RawCheckpoint {
                round: cp.round,
                wall_ms: cp.wall_ms,
                messages: cp.volume.total_scalars(),
                theta: Some(cp.theta.clone()),
            })
            .collect(),
        samples: record.samples,
        completed_rounds: record.completed_rounds,
        chain_steps: record.chain_steps,
        message_scalars: record.volume.total_scalars(),
        message_log: record.message_log,
        aborted,
    })
}

fn run_baseline_trial(
    config: &ExperimentConfig,
    target: &Target,
    trial_seed: u64,
) -> Result<RawTrial> {
    let chains = config.algorithm.total_chains();
    let mut states = build_chains(config, target.dim(), trial_seed, chains, 0)?;

    enum Stepper {
        Langevin { schedule: LearningRateSchedule, tau: f64 },
        Replica { ladder: TemperatureLadder, swap: SwapState },
    }

    let mut stepper = match &config.algorithm {
        AlgorithmSpec::Sgld { eps, tau, .. } => Stepper::Langevin {
            schedule: eps.build(config.rounds),
            tau: *tau,
        },
        AlgorithmSpec::Cycsgld {
            eps0, cycles, tau, ..
        } => Stepper::Langevin {
            schedule: LearningRateSchedule::CosineCyclical {
                eps0: *eps0,
                total_iters: config.rounds,
                cycles: *cycles,
            },
            tau: *tau,
        },
        AlgorithmSpec::Resgld {
            eps_ladder,
            tau_ladder,
            init_correction,
            correction_interval,
            swap_interval,
        } => {
            for (slot, state) in states.iter_mut().enumerate() {
                state.temperature_slot = slot;
            }
            Stepper::Replica {
                ladder: TemperatureLadder::new(eps_ladder.clone(), tau_ladder.clone())?,
                swap: SwapState::new(split_seed(trial_seed, u64::MAX - 1))
                    .with_correction(*init_correction)
                    .with_correction_interval(*correction_interval)
                    .with_swap_interval(*swap_interval),
            }
        }
        _ => unreachable!(),
    };

    let checkpoint_every = config.resolved_checkpoint_every();
    let start = Instant::now();
    let mut checkpoints = Vec::new();
    let mut samples = Vec::new();
    let mut completed = 0u64;
    let mut last_checkpoint = 0u64;
    let mut aborted = None;

    for round in 1..=config.rounds {
        let step = match &mut stepper {
            Stepper::Langevin { schedule, tau } => schedule
                .eps_at(round)
                .and_then(|eps| sgld_round(&mut states, target, eps, *tau)),
            Stepper::Replica { ladder, swap } => {
                resgld_round(&mut states, target, ladder, swap, round)
            }
        };
        if let Err(e) = step {
            aborted = Some(e.to_string());
            break;
        }
        completed = round;

        if config.sample_stride > 0 && round % config.sample_stride == 0 {
            match &stepper {
                // only the coldest replica targets the plain density
                Stepper::Replica { .. } => samples.push(SampleRow {
                    round,
                    chain: 0,
                    x: states[0].x.clone(),
                }),
                Stepper::Langevin { .. } => {
                    for (chain, state) in states.iter().enumerate() {
                        samples.push(SampleRow {
                            round,
                            chain,
                            x: state.x.clone(),
                        });
                    }
                }
            }
        }
        if round == config.rounds || round / checkpoint_every > last_checkpoint / checkpoint_every
        {
            checkpoints.push(RawCheckpoint {
                round,
                wall_ms: start.elapsed().as_millis() as u64,
                messages: 0,
                theta: None,
            });
            last_checkpoint = round;
        }
    }

    let chain_steps: u64 = states.iter().map(|s| s.k).sum();
    Ok(RawTrial {
        checkpoints,
        samples,
        completed_rounds: completed,
        chain_steps,
        message_scalars: 0,
        message_log: Vec::new(),
        aborted,
    })
}

/// Folds a raw trial into the metric series: cumulative histogram KL
/// against the exact grid and total-variation distance of the weights to
/// the oracle fixed point, at every checkpoint. Metrics without their
/// ingredients stay NaN and print as empty CSV fields.
fn assemble_trial(
    config: &ExperimentConfig,
    raw: RawTrial,
    trial_seed: u64,
    truth: &Option<Vec<f64>>,
    theta_star: &Option<Vec<f64>>,
) -> Result<TrialOutput> {
    let mut hist = match (&config.grid, truth) {
        (Some(grid), Some(_)) => Some(GridHistogram::new(grid)?),
        _ => None,
    };
    let mut series = Vec::with_capacity(raw.checkpoints.len());
    let mut next_sample = 0usize;
    for cp in &raw.checkpoints {
        if let Some(h) = hist.as_mut() {
            while next_sample < raw.samples.len() && raw.samples[next_sample].round <= cp.round {
                h.add(&raw.samples[next_sample].x);
                next_sample += 1;
            }
        }
        let kl = match (truth, hist.as_ref()) {
            (Some(p), Some(h)) => match h.probabilities() {
                Ok(q) => kl_divergence(p, &q)?,
                Err(_) => f64::NAN,
            },
            _ => f64::NAN,
        };
        let theta_tv = match (theta_star, &cp.theta) {
            (Some(star), Some(theta)) => theta_error(star, theta),
            _ => f64::NAN,
        };
        series.push(MetricPoint {
            round: cp.round,
            kl,
            theta_tv,
            messages: cp.messages,
            wall_ms: cp.wall_ms,
        });
    }

    let theta_trace: Vec<(u64, Vec<f64>)> = raw
        .checkpoints
        .iter()
        .filter_map(|cp| cp.theta.clone().map(|t| (cp.round, t)))
        .collect();
    let final_theta = theta_trace.last().map(|(_, t)| t.clone()).unwrap_or_default();
    let wall_ms = raw.checkpoints.last().map(|cp| cp.wall_ms).unwrap_or(0);

    Ok(TrialOutput {
        result: TrialResult {
            algorithm: config.algorithm.name().to_string(),
            seed: trial_seed,
            series,
            final_theta,
            wall_ms,
            message_scalars: raw.message_scalars,
            aborted: raw.aborted,
        },
        samples: raw.samples,
        theta_trace,
        message_log: raw.message_log,
    })
}

fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{}", v)
    }
}

fn write_file(files: &mut Vec<PathBuf>, path: PathBuf, content: String) -> Result<()> {
    fs::write(&path, content)?;
    files.push(path);
    Ok(())
}

fn write_artifacts(
    config: &ExperimentConfig,
    target_dim: usize,
    trials: &[TrialOutput],
    manifest: &RunManifest,
    theta_star: &Option<Vec<f64>>,
) -> Result<Vec<PathBuf>> {
    let dir = Path::new(&config.output_dir);
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();

    write_file(&mut files, dir.join("config.json"), config.to_json())?;

    let mut manifest_json = serde_json::to_string_pretty(manifest)?;
    manifest_json.push('\n');
    write_file(&mut files, dir.join("manifest.json"), manifest_json)?;

    let mut metrics = String::from("round,algorithm,seed,kl,theta_tv,messages,wall_ms\n");
    for trial in trials {
        for p in &trial.result.series {
            metrics.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                p.round,
                trial.result.algorithm,
                trial.result.seed,
                fmt_metric(p.kl),
                fmt_metric(p.theta_tv),
                p.messages,
                p.wall_ms
            ));
        }
    }
    write_file(&mut files, dir.join("metrics.csv"), metrics)?;

    if let Some(star) = theta_star {
        let mut text = String::from("bin,weight\n");
        for (i, w) in star.iter().enumerate() {
            text.push_str(&format!("{},{}\n", i + 1, w));
        }
        write_file(&mut files, dir.join("theta_star.csv"), text)?;
    }

    if trials.iter().any(|t| !t.result.final_theta.is_empty()) {
        let mut text = String::from("algorithm,seed,bin,weight\n");
        for trial in trials {
            for (i, w) in trial.result.final_theta.iter().enumerate() {
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    trial.result.algorithm,
                    trial.result.seed,
                    i + 1,
                    w
                ));
            }
        }
        write_file(&mut files, dir.join("theta_final.csv"), text)?;
    }

    for trial in trials {
        let seed = trial.result.seed;
        if !trial.theta_trace.is_empty() {
            let mut text = String::from("iteration,bin,weight\n");
            for (round, theta) in &trial.theta_trace {
                for (i, w) in theta.iter().enumerate() {
                    text.push_str(&format!("{},{},{}\n", round, i + 1, w));
                }
            }
            write_file(&mut files, dir.join(format!("theta_trace_{}.csv", seed)), text)?;
        }
        if config.sample_stride > 0 {
            let mut text = String::from("round,chain");
            for d in 0..target_dim {
                text.push_str(&format!(",x{}", d));
            }
            text.push('\n');
            for row in &trial.samples {
                text.push_str(&format!("{},{}", row.round, row.chain));
                for v in &row.x {
                    text.push_str(&format!(",{}", v));
                }
                text.push('\n');
            }
            write_file(&mut files, dir.join(format!("samples_{}.csv", seed)), text)?;
        }
        if config.log_messages && !trial.message_log.is_empty() {
            let mut text = String::from("kind,round,id,values\n");
            for msg in &trial.message_log {
                match msg {
                    LoggedMessage::Report {
                        worker_id,
                        round,
                        indices,
                    } => {
                        let joined = indices
                            .iter()
                            .map(|i| i.to_string())
                            .collect::<Vec<_>>()
                            .join(";");
                        text.push_str(&format!("report,{},{},{}\n", round, worker_id, joined));
                    }
                    LoggedMessage::Broadcast { round, seq, weights } => {
                        let joined = weights
                            .iter()
                            .map(|w| w.to_string())
                            .collect::<Vec<_>>()
                            .join(";");
                        text.push_str(&format!("broadcast,{},{},{}\n", round, seq, joined));
                    }
                }
            }
            write_file(&mut files, dir.join(format!("messages_{}.csv", seed)), text)?;
        }
    }

    Ok(files)
}
