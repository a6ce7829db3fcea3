//! Coordinator/worker protocol for interacting chains.
//!
//! Workers step their local chains and send only band indices upstream; the
//! coordinator folds all indices into one weight update and broadcasts the
//! new weights back. Positions never cross the worker boundary. Two
//! transports implement the same round barrier: `SharedMemory` runs the loop
//! in-process, `Channels` runs one thread per worker over message queues.
//! Both synthesize identical reports, so their outputs are bit-identical
//! under equal seeds.

use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::contour::{sa_update, ContourParams, Partition, Theta};
use crate::error::{Error, Result};
use crate::exec::map_items;
use crate::samplers::{csgld_step, ChainState, LearningRateSchedule, StepSizeSchedule};
use crate::targets::Target;

/// Transport used for coordinator/worker exchange.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SharedMemory,
    Channels,
}

/// Band indices for one worker's chains, accumulated since the previous
/// weight update. Indices are `u16` on the wire, which caps the number of
/// bands at 65535.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkerReport {
    pub worker_id: u32,
    pub round: u64,
    pub indices: Vec<u16>,
}

/// Updated weights sent back to every worker after an update round.
#[derive(Clone, Debug)]
pub struct ThetaBroadcast {
    pub round: u64,
    pub seq: u64,
    pub theta: Theta,
}

/// Scalar traffic over the protocol: upstream counts one scalar per band
/// index, downstream counts the `m` weights once per worker per broadcast.
/// `broadcasts` counts per-worker sends; the message log keeps one entry per
/// update round since the payloads are identical.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MessageVolume {
    pub upstream_scalars: u64,
    pub downstream_scalars: u64,
    pub reports: u64,
    pub broadcasts: u64,
}

impl MessageVolume {
    pub fn total_scalars(&self) -> u64 {
        self.upstream_scalars + self.downstream_scalars
    }
}

/// Wire traffic entry: only indices and weights ever appear here.
#[derive(Clone, Debug, PartialEq)]
pub enum LoggedMessage {
    Report {
        worker_id: u32,
        round: u64,
        indices: Vec<u16>,
    },
    Broadcast {
        round: u64,
        seq: u64,
        weights: Vec<f64>,
    },
}

/// Snapshot taken after a weight update: the round it happened on, the
/// weights, cumulative traffic, and elapsed wall time (the only field that
/// is not a pure function of config and seeds).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub round: u64,
    pub theta: Vec<f64>,
    pub volume: MessageVolume,
    pub wall_ms: u64,
}

/// One thinned position sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRow {
    pub round: u64,
    pub chain: usize,
    pub x: Vec<f64>,
}

/// Everything a finished (or aborted) interacting run produced.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub checkpoints: Vec<Checkpoint>,
    pub samples: Vec<SampleRow>,
    pub final_theta: Theta,
    pub final_chains: Vec<ChainState>,
    pub completed_rounds: u64,
    pub chain_steps: u64,
    pub theta_updates: u64,
    pub volume: MessageVolume,
    pub message_log: Vec<LoggedMessage>,
}

/// An aborted run: the error plus whatever had been produced before it.
#[derive(Debug)]
pub struct RunFailure {
    pub partial: RunRecord,
    pub error: Error,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "run aborted after {} rounds: {}",
            self.partial.completed_rounds, self.error
        )
    }
}

/// Loop shape shared by both transports.
#[derive(Clone, Debug)]
pub struct InteractingConfig {
    pub workers: usize,
    pub mode: Mode,
    /// Rounds between weight updates (K); the final round always updates.
    pub comm_interval: u64,
    pub rounds: u64,
    pub tau: f64,
    pub eps: LearningRateSchedule,
    pub omega: StepSizeSchedule,
    /// Record every chain position each `sample_every` rounds; 0 disables.
    pub sample_every: u64,
    /// Checkpoint cadence in rounds; 0 keeps only the final checkpoint.
    /// Checkpoints land on update rounds, so with K > 1 they snap to the
    /// first update at or after each boundary.
    pub checkpoint_every: u64,
    pub log_messages: bool,
}

fn is_update_round(round: u64, comm_interval: u64, total: u64) -> bool {
    round % comm_interval == 0 || round == total
}

/// Order-normalizes one round's reports and folds all their indices into a
/// single averaged weight update.
pub fn coordinator_aggregate(
    reports: &[WorkerReport],
    theta: &Theta,
    params: &ContourParams,
    omega: f64,
    seq: u64,
) -> Result<ThetaBroadcast> {
    if reports.is_empty() {
        return Err(Error::input("no worker reports"));
    }
    let round = reports[0].round;
    let mut order: Vec<&WorkerReport> = reports.iter().collect();
    order.sort_by_key(|r| r.worker_id);
    let mut indices = Vec::new();
    for (pos, report) in order.iter().enumerate() {
        if report.round != round {
            return Err(Error::state(format!(
                "report from worker {} is for round {}, expected {}",
                report.worker_id, report.round, round
            )));
        }
        if pos > 0 && order[pos - 1].worker_id == report.worker_id {
            return Err(Error::state(format!(
                "duplicate report from worker {}",
                report.worker_id
            )));
        }
        if report.indices.is_empty() {
            return Err(Error::input(format!(
                "empty report from worker {}",
                report.worker_id
            )));
        }
        indices.extend(report.indices.iter().map(|&i| i as usize));
    }
    let theta = sa_update(theta, params, &indices, omega)?;
    Ok(ThetaBroadcast { round, seq, theta })
}

/// Coordinator state threaded through a run; identical in both modes.
struct Coordinator {
    theta: Theta,
    seq: u64,
    volume: MessageVolume,
    log: Vec<LoggedMessage>,
    checkpoints: Vec<Checkpoint>,
    theta_updates: u64,
    last_checkpoint_round: u64,
    start: Instant,
}

impl Coordinator {
    fn new(theta: Theta) -> Self {
        Coordinator {
            theta,
            seq: 0,
            volume: MessageVolume::default(),
            log: Vec::new(),
            checkpoints: Vec::new(),
            theta_updates: 0,
            last_checkpoint_round: 0,
            start: Instant::now(),
        }
    }

    fn update_round(
        &mut self,
        reports: Vec<WorkerReport>,
        config: &InteractingConfig,
        params: &ContourParams,
        num_bands: usize,
    ) -> Result<ThetaBroadcast> {
        let round = reports[0].round;
        let omega = config.omega.omega_at(round);
        let broadcast = coordinator_aggregate(&reports, &self.theta, params, omega, self.seq)?;
        self.seq += 1;
        self.theta_updates += 1;
        self.theta = broadcast.theta.clone();

        for r in &reports {
            self.volume.upstream_scalars += r.indices.len() as u64;
        }
        self.volume.reports += reports.len() as u64;
        self.volume.downstream_scalars += (config.workers * num_bands) as u64;
        self.volume.broadcasts += config.workers as u64;
        if config.log_messages {
            let mut ordered = reports;
            ordered.sort_by_key(|r| r.worker_id);
            for r in ordered {
                self.log.push(LoggedMessage::Report {
                    worker_id: r.worker_id,
                    round: r.round,
                    indices: r.indices,
                });
            }
            self.log.push(LoggedMessage::Broadcast {
                round: broadcast.round,
                seq: broadcast.seq,
                weights: broadcast.theta.weights().to_vec(),
            });
        }

        let due = round == config.rounds
            || (config.checkpoint_every > 0
                && round / config.checkpoint_every
                    > self.last_checkpoint_round / config.checkpoint_every);
        if due {
            self.checkpoints.push(Checkpoint {
                round,
                theta: self.theta.weights().to_vec(),
                volume: self.volume,
                wall_ms: self.start.elapsed().as_millis() as u64,
            });
            self.last_checkpoint_round = round;
        }
        Ok(broadcast)
    }

    fn into_record(
        self,
        samples: Vec<SampleRow>,
        chains: Vec<ChainState>,
        completed_rounds: u64,
    ) -> RunRecord {
        let chain_steps = chains.iter().map(|c| c.k).sum();
        RunRecord {
            checkpoints: self.checkpoints,
            samples,
            final_theta: self.theta,
            final_chains: chains,
            completed_rounds,
            chain_steps,
            theta_updates: self.theta_updates,
            volume: self.volume,
            message_log: self.log,
        }
    }
}

fn validate(config: &InteractingConfig, chains: &[ChainState], theta: &Theta) -> Result<()> {
    if chains.is_empty() {
        return Err(Error::input("no chains"));
    }
    if config.workers == 0 || chains.len() % config.workers != 0 {
        return Err(Error::input(format!(
            "{} chains cannot split evenly over {} workers",
            chains.len(),
            config.workers
        )));
    }
    if config.comm_interval == 0 {
        return Err(Error::input("comm_interval must be at least 1"));
    }
    if config.rounds == 0 {
        return Err(Error::input("rounds must be at least 1"));
    }
    if theta.len() > u16::MAX as usize {
        return Err(Error::input(format!(
            "{} bands exceed the wire index limit {}",
            theta.len(),
            u16::MAX
        )));
    }
    theta.validate()
}

/// Runs the full interacting loop and returns the trajectory record; on a
/// chain failure the partially built record rides along with the error.
pub fn run_interacting(
    config: &InteractingConfig,
    target: &Target,
    partition: &Partition,
    params: &ContourParams,
    theta0: &Theta,
    chains: Vec<ChainState>,
) -> std::result::Result<RunRecord, Box<RunFailure>> {
    if let Err(error) = validate(config, &chains, theta0) {
        return Err(Box::new(RunFailure {
            partial: Coordinator::new(theta0.clone()).into_record(Vec::new(), chains, 0),
            error,
        }));
    }
    match config.mode {
        Mode::SharedMemory => run_shared(config, target, partition, params, theta0, chains),
        Mode::Channels => run_channels(config, target, partition, params, theta0, chains),
    }
}

fn run_shared(
    config: &InteractingConfig,
    target: &Target,
    partition: &Partition,
    params: &ContourParams,
    theta0: &Theta,
    mut chains: Vec<ChainState>,
) -> std::result::Result<RunRecord, Box<RunFailure>> {
    let per_worker = chains.len() / config.workers;
    let mut coord = Coordinator::new(theta0.clone());
    let mut samples = Vec::new();
    let mut pending: Vec<Vec<u16>> = vec![Vec::new(); config.workers];
    let mut completed = 0u64;

    for round in 1..=config.rounds {
        let step = (|| -> Result<()> {
            let eps = config.eps.eps_at(round)?;
            let theta = &coord.theta;
            let indices: Result<Vec<usize>> =
                map_items(&mut chains, |s| {
                    csgld_step(s, theta, partition, params, target, eps, config.tau)
                })
                .into_iter()
                .collect();
            let indices = indices?;
            for (w, block) in indices.chunks(per_worker).enumerate() {
                pending[w].extend(block.iter().map(|&i| i as u16));
            }
            if config.sample_every > 0 && round % config.sample_every == 0 {
                for (chain, s) in chains.iter().enumerate() {
                    samples.push(SampleRow {
                        round,
                        chain,
                        x: s.x.clone(),
                    });
                }
            }
            if is_update_round(round, config.comm_interval, config.rounds) {
                let reports: Vec<WorkerReport> = pending
                    .iter_mut()
                    .enumerate()
                    .map(|(w, indices)| WorkerReport {
                        worker_id: w as u32,
                        round,
                        indices: std::mem::take(indices),
                    })
                    .collect();
                coord.update_round(reports, config, params, theta0.len())?;
            }
            Ok(())
        })();
        if let Err(error) = step {
            return Err(Box::new(RunFailure {
                partial: coord.into_record(samples, chains, completed),
                error,
            }));
        }
        completed = round;
    }
    Ok(coord.into_record(samples, chains, completed))
}

enum UpMsg {
    Report(WorkerReport),
    Abort {
        worker_id: u32,
        round: u64,
        message: String,
    },
}

struct WorkerReturn {
    first_chain: usize,
    chains: Vec<ChainState>,
    samples: Vec<SampleRow>,
    failure: Option<(u64, String)>,
}

fn run_channels(
    config: &InteractingConfig,
    target: &Target,
    partition: &Partition,
    params: &ContourParams,
    theta0: &Theta,
    chains: Vec<ChainState>,
) -> std::result::Result<RunRecord, Box<RunFailure>> {
    let workers = config.workers;
    let per_worker = chains.len() / workers;
    let mut coord = Coordinator::new(theta0.clone());
    let mut failure: Option<Error> = None;
    let mut completed = 0u64;

    let (up_tx, up_rx) = mpsc::channel::<UpMsg>();
    let mut down_txs = Vec::with_capacity(workers);
    let mut worker_returns: Vec<Option<WorkerReturn>> = Vec::new();

    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(workers);
        let mut blocks: Vec<Vec<ChainState>> = Vec::with_capacity(workers);
        let mut rest = chains;
        for _ in 0..workers {
            let tail = rest.split_off(per_worker);
            blocks.push(rest);
            rest = tail;
        }
        for (w, block) in blocks.into_iter().enumerate() {
            let (down_tx, down_rx) = mpsc::channel::<ThetaBroadcast>();
            down_txs.push(down_tx);
            let up = up_tx.clone();
            handles.push(scope.spawn(move || {
                worker_loop(
                    w as u32,
                    w * per_worker,
                    block,
                    config,
                    target,
                    partition,
                    params,
                    theta0.clone(),
                    up,
                    down_rx,
                )
            }));
        }
        drop(up_tx);

        'rounds: for round in 1..=config.rounds {
            if !is_update_round(round, config.comm_interval, config.rounds) {
                completed = round;
                continue;
            }
            let mut reports = Vec::with_capacity(workers);
            for _ in 0..workers {
                match up_rx.recv() {
                    Ok(UpMsg::Report(r)) => reports.push(r),
                    Ok(UpMsg::Abort {
                        worker_id,
                        round: failed_round,
                        message,
                    }) => {
                        failure = Some(Error::state(format!(
                            "worker {} aborted at round {}: {}",
                            worker_id, failed_round, message
                        )));
                        break 'rounds;
                    }
                    Err(_) => {
                        failure = Some(Error::state("worker channel closed early"));
                        break 'rounds;
                    }
                }
            }
            match coord.update_round(reports, config, params, theta0.len()) {
                Ok(broadcast) => {
                    for tx in &down_txs {
                        if tx.send(broadcast.clone()).is_err() {
                            failure = Some(Error::state("worker stopped receiving"));
                            break 'rounds;
                        }
                    }
                }
                Err(e) => {
                    failure = Some(e);
                    break 'rounds;
                }
            }
            completed = round;
        }
        // dropping the broadcast senders releases any worker still at a
        // barrier; workers then return their state through the join handle
        drop(down_txs);
        for handle in handles {
            let ret = handle.join().expect("worker thread panicked");
            worker_returns.push(Some(ret));
        }
    });

    let mut returns: Vec<WorkerReturn> = worker_returns.into_iter().flatten().collect();
    returns.sort_by_key(|r| r.first_chain);
    let mut all_chains = Vec::new();
    let mut samples = Vec::new();
    for mut ret in returns {
        if let Some((round, message)) = ret.failure.take() {
            if failure.is_none() {
                failure = Some(Error::state(format!(
                    "worker aborted at round {}: {}",
                    round, message
                )));
            }
        }
        all_chains.append(&mut ret.chains);
        samples.append(&mut ret.samples);
    }
    samples.sort_by_key(|s| (s.round, s.chain));

    match failure {
        None => Ok(coord.into_record(samples, all_chains, completed)),
        Some(error) => Err(Box::new(RunFailure {
            partial: coord.into_record(samples, all_chains, completed),
            error,
        })),
    }
}

#[allow(clippy::too_many_arguments)]
fn worker_loop(
    worker_id: u32,
    first_chain: usize,
    mut chains: Vec<ChainState>,
    config: &InteractingConfig,
    target: &Target,
    partition: &Partition,
    params: &ContourParams,
    mut theta: Theta,
    up: mpsc::Sender<UpMsg>,
    down: mpsc::Receiver<ThetaBroadcast>,
) -> WorkerReturn {
    let mut samples = Vec::new();
    let mut pending: Vec<u16> = Vec::new();
    let mut failure = None;

    'rounds: for round in 1..=config.rounds {
        let eps = match config.eps.eps_at(round) {
            Ok(e) => e,
            Err(e) => {
                failure = Some((round, e.to_string()));
                break;
            }
        };
        let results = map_items(&mut chains, |s| {
            csgld_step(s, &theta, partition, params, target, eps, config.tau)
        });
        for r in results {
            match r {
                Ok(band) => pending.push(band as u16),
                Err(e) => {
                    failure = Some((round, e.to_string()));
                    break 'rounds;
                }
            }
        }
        if config.sample_every > 0 && round % config.sample_every == 0 {
            for (i, s) in chains.iter().enumerate() {
                samples.push(SampleRow {
                    round,
                    chain: first_chain + i,
                    x: s.x.clone(),
                });
            }
        }
        if is_update_round(round, config.comm_interval, config.rounds) {
            let report = WorkerReport {
                worker_id,
                round,
                indices: std::mem::take(&mut pending),
            };
            if up.send(UpMsg::Report(report)).is_err() {
                break; // coordinator gone; stop quietly with current state
            }
            match down.recv() {
                Ok(broadcast) => theta = broadcast.theta,
                Err(_) => break, // coordinator aborted the run
            }
        }
    }
    if let Some((round, message)) = failure.clone() {
        let _ = up.send(UpMsg::Abort {
            worker_id,
            round,
            message,
        });
    }
    WorkerReturn {
        first_chain,
        chains,
        samples,
        failure,
    }
}
