//! Log-likelihoods, log-prior and evaluation metrics.
//!
//! Densities are natural-log scale with additive constants that do not depend
//! on the parameters dropped where noted; samplers only ever use differences.
//! Nothing here applies a temperature.

use std::fmt;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Targets};
use crate::model::{forward_into, row_slice, softmax_in_place, ModelError, NetworkShape, ParamVector, Task, Workspace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("operation needs a {expected:?} network, got {got:?}")]
    TaskMismatch { expected: Task, got: Task },
    #[error("label {label} on row {row} is outside 0..{classes}")]
    LabelOutOfRange { row: usize, label: usize, classes: usize },
    #[error("{0} labels but {1} predictions")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Natural-log density. `-inf` encodes zero density; NaN never escapes.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LogDensity(f64);

impl LogDensity {
    pub const ZERO_DENSITY: LogDensity = LogDensity(f64::NEG_INFINITY);

    pub fn new(value: f64) -> Self {
        if value.is_nan() {
            Self::ZERO_DENSITY
        } else {
            Self(value)
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }
}

impl fmt::Display for LogDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Gaussian prior on weights and inverse-gamma prior on `tau^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub sigma2: f64,
    pub nu1: f64,
    pub nu2: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { sigma2: 25.0, nu1: 0.0, nu2: 0.0 }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.sigma2.is_nan() || self.sigma2 <= 0.0 {
            return Err(format!("prior variance must be positive (got {})", self.sigma2));
        }
        if !(self.nu1 >= 0.0 && self.nu2 >= 0.0) {
            return Err(format!("inverse-gamma constants must be non-negative (got {}, {})", self.nu1, self.nu2));
        }
        Ok(())
    }
}

fn expect_task(shape: &NetworkShape, task: Task) -> Result<(), InferenceError> {
    if shape.task() != task {
        return Err(InferenceError::TaskMismatch { expected: task, got: shape.task() });
    }
    Ok(())
}

fn check_inputs(shape: &NetworkShape, theta: &ParamVector, inputs: &ArrayView2<'_, f64>, n: usize) -> Result<(), ModelError> {
    if theta.len() != shape.param_count() {
        return Err(ModelError::ParamLength { expected: shape.param_count(), got: theta.len() });
    }
    if inputs.ncols() != shape.inputs() {
        return Err(ModelError::InputShape { expected: shape.inputs(), got: inputs.ncols() });
    }
    if inputs.nrows() != n {
        return Err(ModelError::RowMismatch { inputs: inputs.nrows(), targets: n });
    }
    Ok(())
}

/// Sum of squared residuals of a regression network.
pub fn sum_squared_error(
    shape: &NetworkShape,
    theta: &ParamVector,
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView1<'_, f64>,
) -> Result<f64, InferenceError> {
    expect_task(shape, Task::Regression)?;
    check_inputs(shape, theta, &inputs, targets.len())?;
    let layers = theta.layers(shape);
    let mut ws = Workspace::new(shape);
    let mut buf = vec![0.0; shape.inputs()];
    let mut sse = 0.0;
    for (x, y) in inputs.rows().into_iter().zip(targets.iter()) {
        forward_into(shape, &layers, row_slice(x, &mut buf), &mut ws);
        let r = y - ws.output()[0];
        sse += r * r;
    }
    Ok(sse)
}

fn gaussian_from_sse(sse: f64, n: usize, tau2: f64) -> LogDensity {
    let n = n as f64;
    LogDensity::new(-0.5 * n * (2.0 * std::f64::consts::PI * tau2).ln() - sse / (2.0 * tau2))
}

/// `-(n/2) ln(2 pi tau^2) - SSE / (2 tau^2)` with `tau^2 = exp(eta)`.
pub fn gaussian_log_likelihood(
    shape: &NetworkShape,
    theta: &ParamVector,
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView1<'_, f64>,
) -> Result<LogDensity, InferenceError> {
    let sse = sum_squared_error(shape, theta, inputs, targets)?;
    let tau2 = theta.tau2(shape).expect("regression shape has eta");
    Ok(gaussian_from_sse(sse, targets.len(), tau2))
}

/// Per-row log class probabilities folded through `visit(row, log_probs)`.
fn for_each_log_prob(
    shape: &NetworkShape,
    theta: &ParamVector,
    inputs: ArrayView2<'_, f64>,
    mut visit: impl FnMut(usize, &[f64]),
) {
    let layers = theta.layers(shape);
    let mut ws = Workspace::new(shape);
    let mut buf = vec![0.0; shape.inputs()];
    let mut logp = vec![0.0; shape.outputs()];
    for (row, x) in inputs.rows().into_iter().enumerate() {
        forward_into(shape, &layers, row_slice(x, &mut buf), &mut ws);
        let scores = ws.output();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        for (lp, s) in logp.iter_mut().zip(scores) {
            *lp = s - max - log_norm;
        }
        visit(row, &logp);
    }
}

fn check_labels(labels: &[usize], classes: usize) -> Result<(), InferenceError> {
    match labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        Some((row, &label)) => Err(InferenceError::LabelOutOfRange { row, label, classes }),
        None => Ok(()),
    }
}

/// `sum_i ln pi_{label_i}(x_i)` with `pi = softmax(forward(x_i))`.
pub fn multinomial_log_likelihood(
    shape: &NetworkShape,
    theta: &ParamVector,
    inputs: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<LogDensity, InferenceError> {
    expect_task(shape, Task::Classification)?;
    check_inputs(shape, theta, &inputs, labels.len())?;
    check_labels(labels, shape.outputs())?;
    let mut total = 0.0;
    for_each_log_prob(shape, theta, inputs, |row, logp| total += logp[labels[row]]);
    Ok(LogDensity::new(total))
}

/// Log-prior up to an additive constant.
///
/// Weights and biases are i.i.d. `N(0, sigma2)`; regression adds the
/// inverse-gamma term `-(1 + nu1) ln tau^2 - nu2 / tau^2` evaluated at
/// `tau^2 = exp(eta)` (no Jacobian for the log transform).
pub fn log_prior(spec: &PriorSpec, shape: &NetworkShape, theta: &ParamVector) -> LogDensity {
    let weights = &theta.as_slice()[..shape.weight_count()];
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    let mut lp = -sq / (2.0 * spec.sigma2);
    if let Some(i) = shape.eta_index() {
        let eta = theta.as_slice()[i];
        let tau2 = eta.exp();
        lp += -(1.0 + spec.nu1) * eta - spec.nu2 / tau2;
    }
    LogDensity::new(lp)
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> f64 {
    assert_eq!(y.len(), y_hat.len(), "rmse needs equal-length vectors");
    if y.is_empty() {
        return f64::NAN;
    }
    let sse: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    (sse / y.len() as f64).sqrt()
}

/// Percentage of positions where `labels` and `predictions` agree.
pub fn accuracy(labels: &[usize], predictions: &[usize]) -> Result<f64, InferenceError> {
    if labels.len() != predictions.len() {
        return Err(InferenceError::LengthMismatch(labels.len(), predictions.len()));
    }
    if labels.is_empty() {
        return Ok(f64::NAN);
    }
    let hits = labels.iter().zip(predictions).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Class predictions: argmax of the softmax probabilities.
pub fn predict_labels(shape: &NetworkShape, theta: &ParamVector, inputs: ArrayView2<'_, f64>) -> Result<Vec<usize>, InferenceError> {
    expect_task(shape, Task::Classification)?;
    check_inputs(shape, theta, &inputs, inputs.nrows())?;
    let layers = theta.layers(shape);
    let mut ws = Workspace::new(shape);
    let mut buf = vec![0.0; shape.inputs()];
    let mut probs = vec![0.0; shape.outputs()];
    let mut out = Vec::with_capacity(inputs.nrows());
    for x in inputs.rows() {
        forward_into(shape, &layers, row_slice(x, &mut buf), &mut ws);
        probs.copy_from_slice(ws.output());
        softmax_in_place(&mut probs);
        out.push(argmax(&probs));
    }
    Ok(out)
}

/// Untempered log-likelihood together with the task metric on the same data:
/// RMSE for regression, accuracy percentage for classification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fit {
    pub loglik: LogDensity,
    pub metric: f64,
}

/// One pass over `data` producing both the likelihood and the metric.
pub fn evaluate(shape: &NetworkShape, theta: &ParamVector, data: &Dataset) -> Result<Fit, InferenceError> {
    let inputs = data.inputs().view();
    match data.targets() {
        Targets::Values(y) => {
            let sse = sum_squared_error(shape, theta, inputs, y.view())?;
            let tau2 = theta.tau2(shape).expect("regression shape has eta");
            let n = y.len();
            let metric = if n == 0 { f64::NAN } else { (sse / n as f64).sqrt() };
            Ok(Fit { loglik: gaussian_from_sse(sse, n, tau2), metric })
        }
        Targets::Labels { labels, .. } => {
            expect_task(shape, Task::Classification)?;
            check_inputs(shape, theta, &inputs, labels.len())?;
            check_labels(labels, shape.outputs())?;
            let mut total = 0.0;
            let mut hits = 0usize;
            for_each_log_prob(shape, theta, inputs, |row, logp| {
                total += logp[labels[row]];
                // argmax of log-probabilities equals argmax of probabilities
                if argmax(logp) == labels[row] {
                    hits += 1;
                }
            });
            let metric = if labels.is_empty() { f64::NAN } else { 100.0 * hits as f64 / labels.len() as f64 };
            Ok(Fit { loglik: LogDensity::new(total), metric })
        }
    }
}

/// Task metric only (RMSE or accuracy percentage).
pub fn metric(shape: &NetworkShape, theta: &ParamVector, data: &Dataset) -> Result<f64, InferenceError> {
    evaluate(shape, theta, data).map(|f| f.metric)
}
