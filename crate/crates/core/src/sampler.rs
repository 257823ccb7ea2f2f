//! One tempered Metropolis-Hastings chain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::inference::{evaluate, log_prior, InferenceError, LogDensity, PriorSpec};
use crate::model::{error_and_gradient, Gradient, ModelError, NetworkShape, ParamVector};
use crate::proposal::{propose_langevin_from, propose_random_walk, select_kind, Proposal, ProposalConfig, ProposalKind};

/// Which part of the posterior the inverse temperature scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemperingMode {
    /// `beta * loglik + logprior`
    #[default]
    Likelihood,
    /// `beta * (loglik + logprior)`
    Posterior,
}

impl TemperingMode {
    pub fn tempered(self, beta: f64, loglik: f64, logprior: f64) -> f64 {
        match self {
            TemperingMode::Likelihood => beta * loglik + logprior,
            TemperingMode::Posterior => beta * (loglik + logprior),
        }
    }
}

/// Everything a replica needs to evaluate and propose; shared read-only.
#[derive(Debug, Clone)]
pub struct Target {
    pub shape: NetworkShape,
    pub train: Dataset,
    pub prior: PriorSpec,
    pub proposal: ProposalConfig,
    pub tempering: TemperingMode,
}

impl Target {
    fn gradient(&self, theta: &ParamVector) -> Result<Gradient, ModelError> {
        error_and_gradient(&self.shape, theta, self.train.inputs().view(), self.train.target_matrix().view()).map(|(_, g)| g)
    }
}

/// Per-iteration bookkeeping stored next to each retained parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    /// Step index within this replica's run (0-based).
    pub iteration: usize,
    pub beta: f64,
    pub loglik: f64,
    pub logprior: f64,
    /// Training-set metric at the retained parameters.
    pub metric: f64,
    pub accepted: bool,
    pub kind: ProposalKind,
    pub log_q_correction: f64,
}

/// Sample history stored as one flat buffer of parameter vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Chain {
    width: usize,
    thetas: Vec<f64>,
    records: Vec<SampleRecord>,
}

impl Chain {
    pub fn new(width: usize) -> Self {
        Self { width, thetas: Vec::new(), records: Vec::new() }
    }

    pub fn with_capacity(width: usize, samples: usize) -> Self {
        Self { width, thetas: Vec::with_capacity(width * samples), records: Vec::with_capacity(samples) }
    }

    pub fn push(&mut self, theta: &ParamVector, record: SampleRecord) {
        debug_assert_eq!(theta.len(), self.width);
        self.thetas.extend_from_slice(theta.as_slice());
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn theta(&self, i: usize) -> &[f64] {
        &self.thetas[i * self.width..(i + 1) * self.width]
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    /// Values of one coordinate over the whole chain.
    pub fn coordinate(&self, index: usize) -> impl Iterator<Item = f64> + '_ {
        self.thetas.chunks_exact(self.width).map(move |t| t[index])
    }
}

/// One chain of the ensemble. Cached densities always describe `theta`.
#[derive(Debug, Clone)]
pub struct ReplicaState {
    pub id: usize,
    /// Effective inverse temperature for the next step.
    pub beta: f64,
    theta: ParamVector,
    loglik: LogDensity,
    logprior: LogDensity,
    metric: f64,
    gradient: Option<Gradient>,
    pub accepted: u64,
    pub proposed: u64,
    /// Steps auto-rejected because of a non-finite density or gradient.
    pub failures: u64,
    iteration: usize,
    rng: ChaCha8Rng,
    pub history: Chain,
}

/// Independent random stream for replica `id`; stream 0 is reserved for swaps.
pub fn replica_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64 + 1);
    rng
}

impl ReplicaState {
    pub fn new(id: usize, theta: ParamVector, target: &Target, rng: ChaCha8Rng) -> Result<Self, InferenceError> {
        let fit = evaluate(&target.shape, &theta, &target.train)?;
        let logprior = log_prior(&target.prior, &target.shape, &theta);
        Ok(Self {
            id,
            beta: 1.0,
            history: Chain::new(theta.len()),
            theta,
            loglik: fit.loglik,
            logprior,
            metric: fit.metric,
            gradient: None,
            accepted: 0,
            proposed: 0,
            failures: 0,
            iteration: 0,
            rng,
        })
    }

    /// Start from an i.i.d. `N(0, 0.5^2)` draw with `eta = 0`.
    pub fn initialise(id: usize, seed: u64, target: &Target) -> Result<Self, InferenceError> {
        let mut rng = replica_rng(seed, id);
        let init = Normal::new(0.0, 0.5).expect("valid std-dev");
        let mut values: Vec<f64> = (0..target.shape.param_count()).map(|_| rng.sample(init)).collect();
        if let Some(i) = target.shape.eta_index() {
            values[i] = 0.0;
        }
        let theta = ParamVector::new(&target.shape, values)?;
        Self::new(id, theta, target, rng)
    }

    pub fn theta(&self) -> &ParamVector {
        &self.theta
    }

    pub fn loglik(&self) -> LogDensity {
        self.loglik
    }

    pub fn logprior(&self) -> LogDensity {
        self.logprior
    }

    /// Training metric at the current parameters.
    pub fn metric(&self) -> f64 {
        self.metric
    }

    /// Number of steps taken so far.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn accept_percent(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            100.0 * self.accepted as f64 / self.proposed as f64
        }
    }

    /// Recompute densities at `theta` and compare with the caches.
    pub fn caches_coherent(&self, target: &Target) -> bool {
        let Ok(fit) = evaluate(&target.shape, &self.theta, &target.train) else {
            return false;
        };
        fit.loglik == self.loglik && log_prior(&target.prior, &target.shape, &self.theta) == self.logprior
    }

    /// Exchange the configurations of two replicas: parameters, caches and
    /// cached gradient. Ids, counters, streams and histories stay put.
    pub fn swap_configuration(&mut self, other: &mut ReplicaState) {
        std::mem::swap(&mut self.theta, &mut other.theta);
        std::mem::swap(&mut self.loglik, &mut other.loglik);
        std::mem::swap(&mut self.logprior, &mut other.logprior);
        std::mem::swap(&mut self.metric, &mut other.metric);
        std::mem::swap(&mut self.gradient, &mut other.gradient);
    }

    /// Tempered log-density of the current configuration at `beta`.
    pub fn tempered(&self, mode: TemperingMode, beta: f64) -> f64 {
        mode.tempered(beta, self.loglik.value(), self.logprior.value())
    }

    fn current_gradient(&mut self, target: &Target) -> Result<&Gradient, ModelError> {
        if self.gradient.is_none() {
            self.gradient = Some(target.gradient(&self.theta)?);
        }
        Ok(self.gradient.as_ref().expect("just filled"))
    }

    fn draw_proposal(&mut self, target: &Target) -> Option<Proposal> {
        let config = &target.proposal;
        match select_kind(config, &mut self.rng) {
            ProposalKind::RandomWalk => Some(propose_random_walk(&self.theta, &target.shape, config, &mut self.rng)),
            ProposalKind::Langevin => {
                let grad = match self.current_gradient(target) {
                    Ok(g) => g.clone(),
                    Err(_) => return None,
                };
                propose_langevin_from(
                    &self.theta,
                    &grad,
                    &target.shape,
                    target.train.inputs().view(),
                    target.train.target_matrix().view(),
                    config,
                    &mut self.rng,
                )
                .ok()
            }
        }
    }

    fn record(&mut self, accepted: bool, kind: ProposalKind, log_q_correction: f64) {
        let record = SampleRecord {
            iteration: self.iteration,
            beta: self.beta,
            loglik: self.loglik.value(),
            logprior: self.logprior.value(),
            metric: self.metric,
            accepted,
            kind,
            log_q_correction,
        };
        self.history.push(&self.theta, record);
        self.iteration += 1;
    }
}

/// Log acceptance ratio of a within-replica move.
pub fn log_acceptance(
    mode: TemperingMode,
    beta: f64,
    loglik: (f64, f64),
    logprior: (f64, f64),
    log_q_correction: f64,
) -> f64 {
    let (ll_c, ll_p) = loglik;
    let (lp_c, lp_p) = logprior;
    match mode {
        TemperingMode::Likelihood => beta * (ll_p - ll_c) + (lp_p - lp_c) + log_q_correction,
        TemperingMode::Posterior => beta * ((ll_p - ll_c) + (lp_p - lp_c)) + log_q_correction,
    }
}

/// One Metropolis-Hastings step at `state.beta`. The post-decision
/// configuration is appended to the history whether or not the move is taken.
pub fn mh_step(state: &mut ReplicaState, target: &Target) {
    state.proposed += 1;
    let Some(proposal) = state.draw_proposal(target) else {
        state.failures += 1;
        // keep one uniform per step so streams stay aligned
        let _: f64 = state.rng.random();
        state.record(false, ProposalKind::Langevin, 0.0);
        return;
    };

    let fit = evaluate(&target.shape, &proposal.candidate, &target.train);
    let logprior_p = log_prior(&target.prior, &target.shape, &proposal.candidate);
    let u: f64 = state.rng.random();

    let log_alpha = match fit {
        Ok(fit) if fit.loglik.is_finite() && logprior_p.is_finite() => Some((
            fit,
            log_acceptance(
                target.tempering,
                state.beta,
                (state.loglik.value(), fit.loglik.value()),
                (state.logprior.value(), logprior_p.value()),
                proposal.log_q_correction,
            ),
        )),
        _ => {
            state.failures += 1;
            None
        }
    };

    let accepted = match log_alpha {
        Some((fit, la)) if !la.is_nan() && u < la.exp() => {
            state.theta = proposal.candidate;
            state.loglik = fit.loglik;
            state.logprior = logprior_p;
            state.metric = fit.metric;
            state.gradient = proposal.candidate_gradient;
            state.accepted += 1;
            true
        }
        _ => false,
    };
    state.record(accepted, proposal.kind, proposal.log_q_correction);
}

/// Apply `n_steps` MH steps, taking the inverse temperature for each step
/// from `beta_at(iteration)`.
pub fn run_segment(state: &mut ReplicaState, n_steps: usize, target: &Target, beta_at: impl Fn(usize) -> f64) {
    for _ in 0..n_steps {
        state.beta = beta_at(state.iteration);
        mh_step(state, target);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};

    fn toy_target(kind: ProposalKind) -> Target {
        let shape = NetworkShape::regression(1, 2).unwrap();
        let x = Array2::from_shape_fn((20, 1), |(r, _)| r as f64 / 19.0);
        let y = Array1::from_iter((0..20).map(|r| 0.2 + 0.5 * (r as f64 / 19.0)));
        Target {
            shape,
            train: Dataset::regression(x, y).unwrap(),
            prior: PriorSpec::default(),
            proposal: ProposalConfig { kind, ..Default::default() },
            tempering: TemperingMode::Likelihood,
        }
    }

    #[test]
    fn acceptance_formula() {
        let la = log_acceptance(TemperingMode::Likelihood, 0.5, (-10.0, -8.0), (-1.0, -1.0), 0.0);
        assert_eq!(la, 1.0);
        assert_eq!(la.exp().min(1.0), 1.0);
        assert_eq!(log_acceptance(TemperingMode::Likelihood, 1.0, (-3.0, -3.0), (0.5, 0.5), 0.0), 0.0);
        assert_eq!(
            log_acceptance(TemperingMode::Likelihood, 1.0, (-3.0, f64::NEG_INFINITY), (0.0, 0.0), 0.0),
            f64::NEG_INFINITY
        );
        // only the likelihood is tempered by default
        assert_eq!(log_acceptance(TemperingMode::Likelihood, 0.5, (0.0, 0.0), (0.0, -2.0), 0.0), -2.0);
        assert_eq!(log_acceptance(TemperingMode::Posterior, 0.5, (0.0, 0.0), (0.0, -2.0), 0.0), -1.0);
    }

    #[test]
    fn downhill_acceptance_grows_as_beta_falls() {
        let mut prev = 0.0;
        for k in (1..=20).rev() {
            let beta = k as f64 / 20.0;
            let alpha = log_acceptance(TemperingMode::Likelihood, beta, (-5.0, -9.0), (0.0, 0.0), 0.0).exp().min(1.0);
            assert!(alpha >= prev);
            prev = alpha;
        }
    }

    #[test]
    fn zero_steps_is_a_no_op() {
        let target = toy_target(ProposalKind::RandomWalk);
        let mut s = ReplicaState::initialise(0, 1, &target).unwrap();
        let before = s.theta().clone();
        run_segment(&mut s, 0, &target, |_| 1.0);
        assert_eq!(s.theta(), &before);
        assert_eq!((s.proposed, s.history.len()), (0, 0));
    }

    #[test]
    fn counters_and_history_grow_per_step() {
        let target = toy_target(ProposalKind::Langevin);
        let mut s = ReplicaState::initialise(0, 1, &target).unwrap();
        run_segment(&mut s, 100, &target, |_| 1.0);
        assert_eq!(s.proposed, 100);
        assert_eq!(s.history.len(), 100);
        assert!(s.accepted <= s.proposed);
        assert!(s.caches_coherent(&target));
        assert_eq!(s.accept_percent(), 100.0 * s.accepted as f64 / 100.0);
        let iters: Vec<usize> = s.history.records().iter().map(|r| r.iteration).collect();
        assert_eq!(iters, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn identical_seeds_identical_histories() {
        let target = toy_target(ProposalKind::Langevin);
        let run = || {
            let mut s = ReplicaState::initialise(2, 77, &target).unwrap();
            run_segment(&mut s, 200, &target, |i| if i < 100 { 0.3 } else { 1.0 });
            s.history
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn equal_density_proposals_always_accepted() {
        // With an enormous prior variance, a flat likelihood (no data) and a
        // symmetric kernel every move has log alpha = 0 up to rounding.
        let mut target = toy_target(ProposalKind::RandomWalk);
        target.train = target.train.select(&[]);
        target.prior.sigma2 = f64::INFINITY;
        target.prior.nu1 = -1.0;
        let mut s = ReplicaState::initialise(0, 4, &target).unwrap();
        run_segment(&mut s, 500, &target, |_| 1.0);
        assert_eq!(s.accepted, 500);
    }

    #[test]
    fn non_finite_candidates_are_rejected_and_counted() {
        let mut target = toy_target(ProposalKind::RandomWalk);
        target.proposal.step_eta = 1e6;
        let mut s = ReplicaState::initialise(0, 5, &target).unwrap();
        run_segment(&mut s, 50, &target, |_| 1.0);
        assert!(s.failures > 0);
        assert!(s.loglik().is_finite());
        assert!(s.caches_coherent(&target));
    }

    #[test]
    fn swap_configuration_exchanges_state_only() {
        let target = toy_target(ProposalKind::RandomWalk);
        let mut a = ReplicaState::initialise(0, 9, &target).unwrap();
        let mut b = ReplicaState::initialise(1, 9, &target).unwrap();
        run_segment(&mut a, 10, &target, |_| 1.0);
        let (ta, tb) = (a.theta().clone(), b.theta().clone());
        a.swap_configuration(&mut b);
        assert_eq!((a.theta(), b.theta()), (&tb, &ta));
        assert_eq!((a.id, b.id), (0, 1));
        assert_eq!((a.proposed, b.proposed), (10, 0));
        assert!(a.caches_coherent(&target) && b.caches_coherent(&target));
    }
}
