//! Random-walk and Langevin-gradient proposals.

use ndarray::ArrayView2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{error_and_gradient, Gradient, ModelError, NetworkShape, ParamVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProposalError {
    #[error("gradient is not finite")]
    NonFiniteGradient,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalKind {
    RandomWalk,
    Langevin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub kind: ProposalKind,
    /// Noise std-dev on weights and biases.
    pub step_weights: f64,
    /// Noise std-dev on `eta`.
    pub step_eta: f64,
    /// Langevin drift step size.
    pub learn_rate: f64,
    /// Probability of a Langevin move when `kind` is `Langevin`.
    pub lg_freq: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self { kind: ProposalKind::RandomWalk, step_weights: 0.025, step_eta: 0.2, learn_rate: 0.1, lg_freq: 0.5 }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.step_weights > 0.0 && self.step_weights.is_finite()) {
            return Err(format!("step_weights must be positive (got {})", self.step_weights));
        }
        if !(self.step_eta > 0.0 && self.step_eta.is_finite()) {
            return Err(format!("step_eta must be positive (got {})", self.step_eta));
        }
        if !(self.learn_rate >= 0.0 && self.learn_rate.is_finite()) {
            return Err(format!("learn_rate must be non-negative (got {})", self.learn_rate));
        }
        if !(0.0..=1.0).contains(&self.lg_freq) {
            return Err(format!("lg_freq must lie in [0, 1] (got {})", self.lg_freq));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub candidate: ParamVector,
    /// `ln q(current | candidate) - ln q(candidate | current)`.
    pub log_q_correction: f64,
    pub kind: ProposalKind,
    /// Gradient at the candidate, when the proposal had to compute it.
    pub candidate_gradient: Option<Gradient>,
}

/// Add `N(0, step^2)` noise slot by slot; `eta` uses its own step.
fn perturb<R: Rng + ?Sized>(mean: &mut [f64], shape: &NetworkShape, config: &ProposalConfig, rng: &mut R) {
    let eta = shape.eta_index();
    for (i, v) in mean.iter_mut().enumerate() {
        let z: f64 = rng.sample(StandardNormal);
        let step = if Some(i) == eta { config.step_eta } else { config.step_weights };
        *v += step * z;
    }
}

pub fn propose_random_walk<R: Rng + ?Sized>(
    current: &ParamVector,
    shape: &NetworkShape,
    config: &ProposalConfig,
    rng: &mut R,
) -> Proposal {
    let mut values = current.as_slice().to_vec();
    perturb(&mut values, shape, config, rng);
    Proposal {
        candidate: ParamVector::new(shape, values).expect("same length as current"),
        log_q_correction: 0.0,
        kind: ProposalKind::RandomWalk,
        candidate_gradient: None,
    }
}

/// Drifted mean `theta - r * grad` over the weight slots; `eta` is left as is.
fn drifted_mean(theta: &ParamVector, grad: &Gradient, learn_rate: f64) -> Vec<f64> {
    theta.as_slice().iter().zip(grad.as_slice()).map(|(t, g)| t - learn_rate * g).collect()
}

/// `ln N(current; mean(candidate), S) - ln N(candidate; mean(current), S)` with
/// `S = step_weights^2 I` over the weight slots. The `eta` slot moves by a
/// symmetric random walk and cancels, so it is left out.
pub fn langevin_log_q_correction(
    shape: &NetworkShape,
    config: &ProposalConfig,
    current: &ParamVector,
    current_grad: &Gradient,
    candidate: &ParamVector,
    candidate_grad: &Gradient,
) -> f64 {
    let nw = shape.weight_count();
    let r = config.learn_rate;
    let cur = &current.as_slice()[..nw];
    let cand = &candidate.as_slice()[..nw];
    let gc = &current_grad.as_slice()[..nw];
    let gp = &candidate_grad.as_slice()[..nw];
    let mut backward = 0.0;
    let mut forward = 0.0;
    for i in 0..nw {
        let b = cur[i] - (cand[i] - r * gp[i]);
        let f = cand[i] - (cur[i] - r * gc[i]);
        backward += b * b;
        forward += f * f;
    }
    -(backward - forward) / (2.0 * config.step_weights * config.step_weights)
}

/// Langevin proposal given the gradient at the current point.
pub fn propose_langevin_from<R: Rng + ?Sized>(
    current: &ParamVector,
    current_grad: &Gradient,
    shape: &NetworkShape,
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    config: &ProposalConfig,
    rng: &mut R,
) -> Result<Proposal, ProposalError> {
    if !current_grad.is_finite() {
        return Err(ProposalError::NonFiniteGradient);
    }
    let mut values = drifted_mean(current, current_grad, config.learn_rate);
    perturb(&mut values, shape, config, rng);
    let candidate = ParamVector::new(shape, values)?;
    let (_, candidate_grad) = error_and_gradient(shape, &candidate, inputs, targets)?;
    if !candidate_grad.is_finite() {
        return Err(ProposalError::NonFiniteGradient);
    }
    let log_q_correction = langevin_log_q_correction(shape, config, current, current_grad, &candidate, &candidate_grad);
    Ok(Proposal { candidate, log_q_correction, kind: ProposalKind::Langevin, candidate_gradient: Some(candidate_grad) })
}

/// Langevin proposal, computing the current gradient on the full dataset.
pub fn propose_langevin<R: Rng + ?Sized>(
    current: &ParamVector,
    shape: &NetworkShape,
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    config: &ProposalConfig,
    rng: &mut R,
) -> Result<Proposal, ProposalError> {
    let (_, grad) = error_and_gradient(shape, current, inputs, targets)?;
    propose_langevin_from(current, &grad, shape, inputs, targets, config, rng)
}

/// Pick the move type for one step. A uniform is drawn on every call so the
/// random stream advances identically for both kinds.
pub fn select_kind<R: Rng + ?Sized>(config: &ProposalConfig, rng: &mut R) -> ProposalKind {
    let l: f64 = rng.random();
    match config.kind {
        ProposalKind::Langevin if l < config.lg_freq => ProposalKind::Langevin,
        _ => ProposalKind::RandomWalk,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape() -> NetworkShape {
        NetworkShape::regression(2, 2).unwrap()
    }

    fn theta(shape: &NetworkShape) -> ParamVector {
        ParamVector::new(shape, (0..shape.param_count()).map(|i| 0.3 * (i as f64).sin()).collect()).unwrap()
    }

    #[test]
    fn random_walk_is_symmetric_and_seeded() {
        let shape = shape();
        let cfg = ProposalConfig::default();
        let t = theta(&shape);
        let a = propose_random_walk(&t, &shape, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let b = propose_random_walk(&t, &shape, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a.log_q_correction, 0.0);
        assert_eq!(a, b);
    }

    #[test]
    fn random_walk_step_sizes() {
        let shape = shape();
        let cfg = ProposalConfig::default();
        let t = ParamVector::zeros(&shape);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let (mut sw, mut se) = (0.0, 0.0);
        let eta = shape.eta_index().unwrap();
        for _ in 0..n {
            let p = propose_random_walk(&t, &shape, &cfg, &mut rng);
            sw += p.candidate.as_slice()[0].powi(2);
            se += p.candidate.as_slice()[eta].powi(2);
        }
        let std_w = (sw / n as f64).sqrt();
        let std_e = (se / n as f64).sqrt();
        assert!((std_w / 0.025 - 1.0).abs() < 0.02, "{std_w}");
        assert!((std_e / 0.2 - 1.0).abs() < 0.02, "{std_e}");
    }

    #[test]
    fn zero_learn_rate_matches_random_walk() {
        let shape = shape();
        let x = array![[0.1, 0.4], [0.7, 0.2], [0.5, 0.5]];
        let y = array![[0.3], [0.9], [0.1]];
        let t = theta(&shape);
        let rw = ProposalConfig::default();
        let lg = ProposalConfig { kind: ProposalKind::Langevin, learn_rate: 0.0, lg_freq: 1.0, ..rw };
        let a = propose_random_walk(&t, &shape, &rw, &mut ChaCha8Rng::seed_from_u64(5));
        let b = propose_langevin(&t, &shape, x.view(), y.view(), &lg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.candidate, b.candidate);
        assert_eq!(b.log_q_correction, 0.0);
    }

    #[test]
    fn stationary_points_need_no_correction() {
        // zero weights with targets 0.5 give zero gradient; the candidate
        // differs only in eta, which carries no drift.
        let shape = shape();
        let x = array![[0.1, 0.4], [0.7, 0.2]];
        let y = array![[0.5], [0.5]];
        let cfg = ProposalConfig { kind: ProposalKind::Langevin, learn_rate: 0.1, ..Default::default() };
        let zeros = ParamVector::zeros(&shape);
        let (_, g0) = error_and_gradient(&shape, &zeros, x.view(), y.view()).unwrap();
        let mut cand = zeros.clone();
        cand.as_mut_slice()[shape.eta_index().unwrap()] = 0.4;
        let (_, g1) = error_and_gradient(&shape, &cand, x.view(), y.view()).unwrap();
        assert_eq!(langevin_log_q_correction(&shape, &cfg, &zeros, &g0, &cand, &g1), 0.0);
    }

    #[test]
    fn correction_is_antisymmetric() {
        let shape = shape();
        let x = array![[0.1, 0.4], [0.7, 0.2], [0.5, 0.5]];
        let y = array![[0.3], [0.9], [0.1]];
        let cfg = ProposalConfig { kind: ProposalKind::Langevin, learn_rate: 0.05, ..Default::default() };
        let a = theta(&shape);
        let p = propose_langevin(&a, &shape, x.view(), y.view(), &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (_, ga) = error_and_gradient(&shape, &a, x.view(), y.view()).unwrap();
        let gb = p.candidate_gradient.clone().unwrap();
        let fwd = langevin_log_q_correction(&shape, &cfg, &a, &ga, &p.candidate, &gb);
        let back = langevin_log_q_correction(&shape, &cfg, &p.candidate, &gb, &a, &ga);
        assert_eq!(fwd, p.log_q_correction);
        assert!((fwd + back).abs() < 1e-12);
    }

    #[test]
    fn eta_gets_no_drift() {
        let shape = shape();
        let x = array![[0.1, 0.4], [0.7, 0.2]];
        let y = array![[0.0], [1.0]];
        let t = theta(&shape);
        let (_, g) = error_and_gradient(&shape, &t, x.view(), y.view()).unwrap();
        assert_eq!(g.as_slice()[shape.eta_index().unwrap()], 0.0);
    }

    #[test]
    fn select_kind_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let never = ProposalConfig { kind: ProposalKind::Langevin, lg_freq: 0.0, ..Default::default() };
        let always = ProposalConfig { kind: ProposalKind::Langevin, lg_freq: 1.0, ..Default::default() };
        let rw = ProposalConfig { lg_freq: 1.0, ..Default::default() };
        for _ in 0..1000 {
            assert_eq!(select_kind(&never, &mut rng), ProposalKind::RandomWalk);
            assert_eq!(select_kind(&always, &mut rng), ProposalKind::Langevin);
            assert_eq!(select_kind(&rw, &mut rng), ProposalKind::RandomWalk);
        }
    }

    #[test]
    fn select_kind_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = ProposalConfig { kind: ProposalKind::Langevin, lg_freq: 0.5, ..Default::default() };
        let n = 100_000;
        let hits = (0..n).filter(|_| select_kind(&cfg, &mut rng) == ProposalKind::Langevin).count();
        assert!((hits as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let shape = shape();
        let x = array![[0.1, 0.4]];
        let y = array![[0.5]];
        let t = theta(&shape);
        let (_, g) = error_and_gradient(&shape, &t, x.view(), y.view()).unwrap();
        let mut bad = g.as_slice().to_vec();
        bad[0] = f64::NAN;
        let bad = Gradient::from_values(bad);
        let cfg = ProposalConfig { kind: ProposalKind::Langevin, ..Default::default() };
        let err = propose_langevin_from(&t, &bad, &shape, x.view(), y.view(), &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(err.unwrap_err(), ProposalError::NonFiniteGradient);
    }

    #[test]
    fn config_validation() {
        assert!(ProposalConfig::default().validate().is_ok());
        assert!(ProposalConfig { step_weights: 0.0, ..Default::default() }.validate().is_err());
        assert!(ProposalConfig { lg_freq: 1.5, ..Default::default() }.validate().is_err());
        assert!(ProposalConfig { learn_rate: -0.1, ..Default::default() }.validate().is_err());
    }
}
