//! Replica ensemble: temperature ladder, two-phase schedule, barrier swaps and
//! the coordinator that drives all replicas.
//!
//! Each replica slot keeps its temperature for the whole run; a swap moves
//! configurations between slots. Workers only ever touch the replica they were
//! handed, and hand it back at each barrier, so a threaded run and a sequential
//! run perform the same arithmetic in the same order.

use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::InferenceError;
use crate::sampler::{run_segment, ReplicaState, Target, TemperingMode};

#[derive(Debug, Error)]
pub enum TemperingError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("swap attempted before all replicas reached the barrier (iterations {0:?})")]
    NotAtBarrier(Vec<usize>),
    #[error("cached densities of replica {0} disagree with recomputation")]
    IncoherentCache(usize),
    #[error("worker for replica {replica} failed after {segments} segments; iterations reached: {iterations:?}")]
    WorkerFailed { replica: usize, segments: usize, iterations: Vec<usize> },
    #[error("initialising replica {replica}: {source}")]
    Init { replica: usize, source: InferenceError },
}

/// Geometric ladder `T_i = max_temp^((i-1)/(R-1))`, `T_1 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureLadder {
    temps: Vec<f64>,
}

impl TemperatureLadder {
    pub fn temps(&self) -> &[f64] {
        &self.temps
    }

    pub fn len(&self) -> usize {
        self.temps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temps.is_empty()
    }

    pub fn max_temp(&self) -> f64 {
        *self.temps.last().expect("ladder is never empty")
    }

    pub fn betas(&self) -> Vec<f64> {
        self.temps.iter().map(|t| 1.0 / t).collect()
    }
}

pub fn build_ladder(replicas: usize, max_temp: f64) -> Result<TemperatureLadder, TemperingError> {
    if replicas == 0 {
        return Err(TemperingError::Config("need at least one replica".into()));
    }
    if !(max_temp >= 1.0 && max_temp.is_finite()) {
        return Err(TemperingError::Config(format!("max_temp must be at least 1 (got {max_temp})")));
    }
    if replicas == 1 {
        return Ok(TemperatureLadder { temps: vec![1.0] });
    }
    let last = (replicas - 1) as f64;
    let temps = (0..replicas).map(|i| max_temp.powf(i as f64 / last)).collect();
    Ok(TemperatureLadder { temps })
}

/// Fraction of each replica's steps spent in the tempered (global) phase;
/// afterwards every replica runs at `T = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    pub global_fraction: f64,
}

impl Default for PhaseSchedule {
    fn default() -> Self {
        Self { global_fraction: 0.6 }
    }
}

impl PhaseSchedule {
    pub fn is_global(&self, sample_index: usize, total_samples: usize) -> bool {
        (sample_index as f64) < self.global_fraction * total_samples as f64
    }

    /// Number of leading steps that belong to the tempered phase.
    pub fn global_steps(&self, total_samples: usize) -> usize {
        (0..=total_samples).find(|&i| !self.is_global(i, total_samples)).unwrap_or(total_samples)
    }
}

pub fn effective_beta(
    ladder: &TemperatureLadder,
    replica_index: usize,
    sample_index: usize,
    total_samples: usize,
    schedule: &PhaseSchedule,
) -> f64 {
    if schedule.is_global(sample_index, total_samples) {
        1.0 / ladder.temps[replica_index]
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapStats {
    pub attempted: u64,
    pub accepted: u64,
}

impl SwapStats {
    pub fn percent(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            100.0 * self.accepted as f64 / self.attempted as f64
        }
    }
}

/// Outcome of one neighbour-pair exchange attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwapEvent {
    pub barrier: usize,
    /// Lower slot of the pair; the partner is `pair + 1`.
    pub pair: usize,
    pub log_alpha: f64,
    pub accepted: bool,
}

/// `ln alpha` for exchanging the configurations of slots `i` and `j` given the
/// (tempered-quantity) log densities `l_i`, `l_j` they currently hold.
pub fn swap_log_alpha(beta_i: f64, beta_j: f64, l_i: f64, l_j: f64) -> f64 {
    let la = (beta_i - beta_j) * (l_j - l_i);
    // equal temperatures: the exchange is always accepted
    if la.is_nan() {
        if beta_i == beta_j {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        la
    }
}

fn swap_energy(state: &ReplicaState, mode: TemperingMode) -> f64 {
    match mode {
        TemperingMode::Likelihood => state.loglik().value(),
        TemperingMode::Posterior => state.loglik().value() + state.logprior().value(),
    }
}

/// One sweep over adjacent pairs `(0,1), (1,2), ...` in order. Accepted swaps
/// exchange configurations; temperatures stay with their slots.
pub fn attempt_swaps<R: Rng + ?Sized>(
    states: &mut [ReplicaState],
    betas: &[f64],
    mode: TemperingMode,
    rng: &mut R,
    stats: &mut SwapStats,
    barrier: usize,
) -> Result<Vec<SwapEvent>, TemperingError> {
    if betas.len() != states.len() {
        return Err(TemperingError::Config(format!("{} betas for {} replicas", betas.len(), states.len())));
    }
    let iterations: Vec<usize> = states.iter().map(|s| s.iteration()).collect();
    if iterations.windows(2).any(|w| w[0] != w[1]) {
        return Err(TemperingError::NotAtBarrier(iterations));
    }
    let mut events = Vec::with_capacity(states.len().saturating_sub(1));
    for i in 0..states.len().saturating_sub(1) {
        let la = swap_log_alpha(betas[i], betas[i + 1], swap_energy(&states[i], mode), swap_energy(&states[i + 1], mode));
        let u: f64 = rng.random();
        let accepted = u < la.exp();
        stats.attempted += 1;
        if accepted {
            stats.accepted += 1;
            let (lo, hi) = states.split_at_mut(i + 1);
            lo[i].swap_configuration(&mut hi[0]);
        }
        events.push(SwapEvent { barrier, pair: i, log_alpha: la, accepted });
    }
    Ok(events)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    /// All replicas advanced in turn on the calling thread.
    Sequential,
    /// One worker thread per replica.
    #[default]
    Threaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub replicas: usize,
    pub max_temp: f64,
    pub swap_interval: usize,
    pub steps_per_replica: usize,
    pub schedule: PhaseSchedule,
    pub seed: u64,
    pub execution: Execution,
    /// Recompute every replica's densities at each barrier.
    pub verify_caches: bool,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<(), TemperingError> {
        if self.replicas == 0 {
            return Err(TemperingError::Config("need at least one replica".into()));
        }
        if self.swap_interval == 0 {
            return Err(TemperingError::Config("swap_interval must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.schedule.global_fraction) {
            return Err(TemperingError::Config(format!(
                "global_fraction must lie in [0, 1] (got {})",
                self.schedule.global_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleOutput {
    pub ladder: TemperatureLadder,
    /// Final replica states by slot, histories included.
    pub replicas: Vec<ReplicaState>,
    pub swap_stats: SwapStats,
    pub swaps: Vec<SwapEvent>,
    pub elapsed: Duration,
}

impl EnsembleOutput {
    /// `100 * sum accepted / sum proposed` over all replicas.
    pub fn accept_percent(&self) -> f64 {
        let (acc, prop) = self.replicas.iter().fold((0u64, 0u64), |(a, p), r| (a + r.accepted, p + r.proposed));
        if prop == 0 {
            0.0
        } else {
            100.0 * acc as f64 / prop as f64
        }
    }
}

struct Coordinator<'a> {
    config: &'a EnsembleConfig,
    target: &'a Target,
    ladder: TemperatureLadder,
    rng: ChaCha8Rng,
    stats: SwapStats,
    swaps: Vec<SwapEvent>,
    barrier: usize,
}

impl Coordinator<'_> {
    fn barrier(&mut self, states: &mut [ReplicaState]) -> Result<(), TemperingError> {
        let done = states[0].iteration();
        let steps = self.config.steps_per_replica;
        let last = done.saturating_sub(1);
        let betas: Vec<f64> = (0..states.len())
            .map(|i| effective_beta(&self.ladder, i, last, steps, &self.config.schedule))
            .collect();
        let events = attempt_swaps(states, &betas, self.target.tempering, &mut self.rng, &mut self.stats, self.barrier)?;
        self.swaps.extend(events);
        self.barrier += 1;
        if self.config.verify_caches {
            if let Some(bad) = states.iter().find(|s| !s.caches_coherent(self.target)) {
                return Err(TemperingError::IncoherentCache(bad.id));
            }
        }
        Ok(())
    }

    fn segments(&self) -> impl Iterator<Item = usize> {
        let (steps, interval) = (self.config.steps_per_replica, self.config.swap_interval);
        (0..steps).step_by(interval).map(move |start| interval.min(steps - start))
    }
}

fn advance(state: &mut ReplicaState, n: usize, target: &Target, ladder: &TemperatureLadder, config: &EnsembleConfig) {
    let slot = state.id;
    let steps = config.steps_per_replica;
    run_segment(state, n, target, |it| effective_beta(ladder, slot, it, steps, &config.schedule));
}

fn run_sequential(co: &mut Coordinator<'_>, states: &mut [ReplicaState]) -> Result<(), TemperingError> {
    let segments: Vec<usize> = co.segments().collect();
    for n in segments {
        for state in states.iter_mut() {
            advance(state, n, co.target, &co.ladder, co.config);
        }
        co.barrier(states)?;
    }
    Ok(())
}

fn run_threaded(co: &mut Coordinator<'_>, states: &mut Vec<ReplicaState>) -> Result<(), TemperingError> {
    let segments: Vec<usize> = co.segments().collect();
    let (target, config, ladder) = (co.target, co.config, co.ladder.clone());
    let ladder = &ladder;
    thread::scope(|scope| {
        let mut commands = Vec::with_capacity(states.len());
        let mut results = Vec::with_capacity(states.len());
        let mut handles = Vec::with_capacity(states.len());
        for _ in 0..states.len() {
            let (cmd_tx, cmd_rx) = mpsc::channel::<(ReplicaState, usize)>();
            let (res_tx, res_rx) = mpsc::channel::<ReplicaState>();
            handles.push(scope.spawn(move || {
                while let Ok((mut state, n)) = cmd_rx.recv() {
                    advance(&mut state, n, target, ladder, config);
                    if res_tx.send(state).is_err() {
                        break;
                    }
                }
            }));
            commands.push(cmd_tx);
            results.push(res_rx);
        }

        let mut outcome = Ok(());
        'segments: for (done, &n) in segments.iter().enumerate() {
            let iterations: Vec<usize> = states.iter().map(|s| s.iteration()).collect();
            for (tx, state) in commands.iter().zip(states.drain(..)) {
                tx.send((state, n)).expect("worker alive while coordinator holds its sender");
            }
            for (slot, rx) in results.iter().enumerate() {
                match rx.recv() {
                    Ok(state) => states.push(state),
                    Err(_) => {
                        let mut reached = iterations.clone();
                        for s in states.iter() {
                            reached[s.id] = s.iteration();
                        }
                        outcome = Err(TemperingError::WorkerFailed { replica: slot, segments: done, iterations: reached });
                        break 'segments;
                    }
                }
            }
            if let Err(e) = co.barrier(states) {
                outcome = Err(e);
                break;
            }
        }
        drop(commands);
        for h in handles {
            // a panicking worker is already reported through `outcome`
            let _ = h.join();
        }
        outcome
    })
}

/// Run the full ensemble: initialise replicas, alternate segments and swap
/// sweeps until every replica has taken `steps_per_replica` steps.
pub fn run(config: &EnsembleConfig, target: &Target) -> Result<EnsembleOutput, TemperingError> {
    config.validate()?;
    let ladder = build_ladder(config.replicas, config.max_temp)?;
    let mut states = (0..config.replicas)
        .map(|id| ReplicaState::initialise(id, config.seed, target).map_err(|source| TemperingError::Init { replica: id, source }))
        .collect::<Result<Vec<_>, _>>()?;
    for s in states.iter_mut() {
        s.history = crate::sampler::Chain::with_capacity(target.shape.param_count(), config.steps_per_replica);
    }

    let mut swap_rng = ChaCha8Rng::seed_from_u64(config.seed);
    swap_rng.set_stream(0);
    let mut co = Coordinator {
        config,
        target,
        ladder,
        rng: swap_rng,
        stats: SwapStats::default(),
        swaps: Vec::new(),
        barrier: 0,
    };

    let start = Instant::now();
    match config.execution {
        Execution::Threaded if config.replicas > 1 => run_threaded(&mut co, &mut states)?,
        _ => run_sequential(&mut co, &mut states)?,
    }
    let elapsed = start.elapsed();
    log::debug!("ensemble finished in {elapsed:?}, swap {:.2}%", co.stats.percent());

    Ok(EnsembleOutput { ladder: co.ladder, replicas: states, swap_stats: co.stats, swaps: co.swaps, elapsed })
}
