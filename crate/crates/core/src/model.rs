//! Single-hidden-layer feedforward network with sigmoid units.
//!
//! All weights, biases and (for regression) the log noise variance live in one
//! flat [`ParamVector`]. The layout is fixed:
//!
//! ```text
//! [ w_ih (H rows of I) | hidden bias (H) | v_ho (O rows of H) | output bias (O) | eta ]
//! ```
//!
//! where `O = 1` for regression and `O = K` for classification, and `eta = ln(tau^2)`
//! is present for regression only.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid network shape: {0}")]
    InvalidShape(String),
    #[error("parameter vector has length {got}, shape needs {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("input has {got} features, network expects {expected}")]
    InputShape { expected: usize, got: usize },
    #[error("{inputs} input rows but {targets} target rows")]
    RowMismatch { inputs: usize, targets: usize },
    #[error("target matrix has {got} columns, network has {expected} outputs")]
    TargetShape { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    inputs: usize,
    hidden: usize,
    outputs: usize,
    task: Task,
}

impl NetworkShape {
    pub fn regression(inputs: usize, hidden: usize) -> Result<Self, ModelError> {
        Self::new(inputs, hidden, 1, Task::Regression)
    }

    pub fn classification(inputs: usize, hidden: usize, classes: usize) -> Result<Self, ModelError> {
        Self::new(inputs, hidden, classes, Task::Classification)
    }

    pub fn new(inputs: usize, hidden: usize, outputs: usize, task: Task) -> Result<Self, ModelError> {
        if inputs == 0 || hidden == 0 {
            return Err(ModelError::InvalidShape(format!(
                "need at least one input and one hidden unit (got I={inputs}, H={hidden})"
            )));
        }
        match task {
            Task::Regression if outputs != 1 => {
                return Err(ModelError::InvalidShape(format!(
                    "regression networks have exactly one output (got {outputs})"
                )))
            }
            Task::Classification if outputs < 2 => {
                return Err(ModelError::InvalidShape(format!(
                    "classification needs at least two classes (got {outputs})"
                )))
            }
            _ => {}
        }
        Ok(Self { inputs, hidden, outputs, task })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn has_eta(&self) -> bool {
        self.task == Task::Regression
    }

    /// Total length of the flat parameter vector.
    pub fn param_count(&self) -> usize {
        self.weight_count() + usize::from(self.has_eta())
    }

    /// Number of weight and bias entries (everything except `eta`).
    pub fn weight_count(&self) -> usize {
        let (i, h, o) = (self.inputs, self.hidden, self.outputs);
        i * h + h + h * o + o
    }

    fn hidden_bias_offset(&self) -> usize {
        self.inputs * self.hidden
    }

    fn output_weight_offset(&self) -> usize {
        self.hidden_bias_offset() + self.hidden
    }

    fn output_bias_offset(&self) -> usize {
        self.output_weight_offset() + self.hidden * self.outputs
    }

    /// Index of the `eta` slot, if this shape carries one.
    pub fn eta_index(&self) -> Option<usize> {
        self.has_eta().then(|| self.weight_count())
    }
}

/// Free-function form of [`NetworkShape::param_count`].
pub fn param_count(shape: &NetworkShape) -> usize {
    shape.param_count()
}

/// Borrowed view of a parameter vector split into its blocks.
#[derive(Debug, Clone, Copy)]
pub struct Layers<'a> {
    /// `hidden x inputs`, row-major by hidden unit.
    pub input_weights: &'a [f64],
    pub hidden_bias: &'a [f64],
    /// `outputs x hidden`, row-major by output unit.
    pub output_weights: &'a [f64],
    pub output_bias: &'a [f64],
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(shape: &NetworkShape, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != shape.param_count() {
            return Err(ModelError::ParamLength { expected: shape.param_count(), got: values.len() });
        }
        Ok(Self(values))
    }

    pub fn zeros(shape: &NetworkShape) -> Self {
        Self(vec![0.0; shape.param_count()])
    }

    /// Assemble from blocks; the inverse of [`ParamVector::layers`].
    pub fn pack(shape: &NetworkShape, layers: &Layers<'_>) -> Result<Self, ModelError> {
        let mut values = Vec::with_capacity(shape.param_count());
        values.extend_from_slice(layers.input_weights);
        values.extend_from_slice(layers.hidden_bias);
        values.extend_from_slice(layers.output_weights);
        values.extend_from_slice(layers.output_bias);
        if shape.has_eta() {
            values.push(layers.eta.unwrap_or(0.0));
        }
        Self::new(shape, values)
    }

    pub fn layers(&self, shape: &NetworkShape) -> Layers<'_> {
        debug_assert_eq!(self.0.len(), shape.param_count());
        let v = &self.0;
        Layers {
            input_weights: &v[..shape.hidden_bias_offset()],
            hidden_bias: &v[shape.hidden_bias_offset()..shape.output_weight_offset()],
            output_weights: &v[shape.output_weight_offset()..shape.output_bias_offset()],
            output_bias: &v[shape.output_bias_offset()..shape.weight_count()],
            eta: shape.eta_index().map(|i| v[i]),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `tau^2 = exp(eta)` for regression shapes.
    pub fn tau2(&self, shape: &NetworkShape) -> Option<f64> {
        shape.eta_index().map(|i| self.0[i].exp())
    }

    fn check(&self, shape: &NetworkShape) -> Result<(), ModelError> {
        if self.0.len() != shape.param_count() {
            return Err(ModelError::ParamLength { expected: shape.param_count(), got: self.0.len() });
        }
        Ok(())
    }
}

/// Gradient of the squared-error function, laid out like [`ParamVector`].
/// The `eta` slot is always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(Vec<f64>);

impl Gradient {
    pub fn from_values(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Hidden activations for one row, written into `hidden`.
#[inline]
fn hidden_layer(shape: &NetworkShape, layers: &Layers<'_>, x: &[f64], hidden: &mut [f64]) {
    let ni = shape.inputs;
    for (h, out) in hidden.iter_mut().enumerate() {
        let w = &layers.input_weights[h * ni..(h + 1) * ni];
        let z = layers.hidden_bias[h] + w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        *out = sigmoid(z);
    }
}

#[inline]
fn output_layer(shape: &NetworkShape, layers: &Layers<'_>, hidden: &[f64], out: &mut [f64]) {
    let nh = shape.hidden;
    for (o, y) in out.iter_mut().enumerate() {
        let v = &layers.output_weights[o * nh..(o + 1) * nh];
        let z = layers.output_bias[o] + v.iter().zip(hidden).map(|(v, h)| v * h).sum::<f64>();
        *y = sigmoid(z);
    }
}

/// Reusable buffers for row-by-row evaluation.
#[derive(Debug, Clone)]
pub struct Workspace {
    hidden: Vec<f64>,
    output: Vec<f64>,
    hidden_delta: Vec<f64>,
}

impl Workspace {
    pub fn new(shape: &NetworkShape) -> Self {
        Self {
            hidden: vec![0.0; shape.hidden],
            output: vec![0.0; shape.outputs],
            hidden_delta: vec![0.0; shape.hidden],
        }
    }

    /// Output of the most recent [`forward_into`] call.
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Forward pass for one row without allocating; the result is left in
/// `ws.output()`. Callers are responsible for the dimension checks.
#[inline]
pub fn forward_into(shape: &NetworkShape, layers: &Layers<'_>, x: &[f64], ws: &mut Workspace) {
    hidden_layer(shape, layers, x, &mut ws.hidden);
    output_layer(shape, layers, &ws.hidden, &mut ws.output);
}

/// Network output for a single input vector: one value in (0, 1) for
/// regression, `K` sigmoid scores for classification.
pub fn forward(shape: &NetworkShape, theta: &ParamVector, x: &[f64]) -> Result<Vec<f64>, ModelError> {
    theta.check(shape)?;
    if x.len() != shape.inputs {
        return Err(ModelError::InputShape { expected: shape.inputs, got: x.len() });
    }
    let layers = theta.layers(shape);
    let mut ws = Workspace::new(shape);
    forward_into(shape, &layers, x, &mut ws);
    Ok(ws.output)
}

/// Forward pass over every row of `inputs`; returns an `n x outputs` matrix.
pub fn forward_batch(
    shape: &NetworkShape,
    theta: &ParamVector,
    inputs: ArrayView2<'_, f64>,
) -> Result<Array2<f64>, ModelError> {
    theta.check(shape)?;
    if inputs.ncols() != shape.inputs {
        return Err(ModelError::InputShape { expected: shape.inputs, got: inputs.ncols() });
    }
    let layers = theta.layers(shape);
    let mut ws = Workspace::new(shape);
    let mut out = Array2::zeros((inputs.nrows(), shape.outputs));
    let mut row_buf = vec![0.0; shape.inputs];
    for (x, mut y) in inputs.rows().into_iter().zip(out.rows_mut()) {
        let x = row_slice(x, &mut row_buf);
        forward_into(shape, &layers, x, &mut ws);
        for (dst, src) in y.iter_mut().zip(&ws.output) {
            *dst = *src;
        }
    }
    Ok(out)
}

/// Contiguous slice of a row, copying into `buf` only when the view is strided.
#[inline]
pub(crate) fn row_slice<'a>(row: ArrayView1<'a, f64>, buf: &'a mut [f64]) -> &'a [f64] {
    match row.to_slice() {
        Some(s) => s,
        None => {
            for (b, v) in buf.iter_mut().zip(row.iter()) {
                *b = *v;
            }
            buf
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let mut out = scores.to_vec();
    softmax_in_place(&mut out);
    out
}

pub(crate) fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
}

/// Squared error `E = sum_t sum_o (y_to - f_o(x_t))^2` and its exact gradient.
///
/// `targets` is `n x outputs`; for classification pass one-hot rows.
pub fn error_and_gradient(
    shape: &NetworkShape,
    theta: &ParamVector,
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
) -> Result<(f64, Gradient), ModelError> {
    theta.check(shape)?;
    if inputs.ncols() != shape.inputs {
        return Err(ModelError::InputShape { expected: shape.inputs, got: inputs.ncols() });
    }
    if targets.ncols() != shape.outputs {
        return Err(ModelError::TargetShape { expected: shape.outputs, got: targets.ncols() });
    }
    if inputs.nrows() != targets.nrows() {
        return Err(ModelError::RowMismatch { inputs: inputs.nrows(), targets: targets.nrows() });
    }

    let (ni, nh, no) = (shape.inputs, shape.hidden, shape.outputs);
    let layers = theta.layers(shape);
    let mut grad = vec![0.0; shape.param_count()];
    let (g_w, rest) = grad.split_at_mut(shape.hidden_bias_offset());
    let (g_hb, rest) = rest.split_at_mut(nh);
    let (g_v, rest) = rest.split_at_mut(nh * no);
    let g_ob = &mut rest[..no];

    let mut ws = Workspace::new(shape);
    let mut row_buf = vec![0.0; ni];
    let mut sse = 0.0;
    for (x, y) in inputs.rows().into_iter().zip(targets.rows()) {
        let x = row_slice(x, &mut row_buf);
        forward_into(shape, &layers, x, &mut ws);
        ws.hidden_delta.iter_mut().for_each(|d| *d = 0.0);
        for o in 0..no {
            let f = ws.output[o];
            let resid = y[o] - f;
            sse += resid * resid;
            let delta = -2.0 * resid * f * (1.0 - f);
            g_ob[o] += delta;
            let v = &layers.output_weights[o * nh..(o + 1) * nh];
            let gv = &mut g_v[o * nh..(o + 1) * nh];
            for h in 0..nh {
                gv[h] += delta * ws.hidden[h];
                ws.hidden_delta[h] += delta * v[h];
            }
        }
        for h in 0..nh {
            let a = ws.hidden[h];
            let delta = ws.hidden_delta[h] * a * (1.0 - a);
            g_hb[h] += delta;
            let gw = &mut g_w[h * ni..(h + 1) * ni];
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += delta * xi;
            }
        }
    }
    Ok((sse, Gradient(grad)))
}

/// Gradient of the squared-error proposal function.
pub fn gradient(
    shape: &NetworkShape,
    theta: &ParamVector,
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
) -> Result<Gradient, ModelError> {
    error_and_gradient(shape, theta, inputs, targets).map(|(_, g)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn param_count_examples() {
        assert_eq!(NetworkShape::regression(4, 5).unwrap().param_count(), 32);
        assert_eq!(NetworkShape::regression(1, 1).unwrap().param_count(), 5);
        assert_eq!(NetworkShape::classification(4, 12, 3).unwrap().param_count(), 99);
        assert_eq!(param_count(&NetworkShape::classification(4, 12, 3).unwrap()), 99);
    }

    #[test]
    fn shape_validation() {
        assert!(NetworkShape::regression(0, 5).is_err());
        assert!(NetworkShape::regression(3, 0).is_err());
        assert!(NetworkShape::classification(3, 2, 1).is_err());
        assert!(NetworkShape::new(3, 2, 2, Task::Regression).is_err());
    }

    #[test]
    fn layout_blocks() {
        let shape = NetworkShape::regression(2, 3).unwrap();
        let theta = ParamVector::new(&shape, (0..shape.param_count()).map(|v| v as f64).collect()).unwrap();
        let l = theta.layers(&shape);
        assert_eq!(l.input_weights, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(l.hidden_bias, &[6.0, 7.0, 8.0]);
        assert_eq!(l.output_weights, &[9.0, 10.0, 11.0]);
        assert_eq!(l.output_bias, &[12.0]);
        assert_eq!(l.eta, Some(13.0));
        assert_eq!(ParamVector::pack(&shape, &l).unwrap(), theta);

        let cls = NetworkShape::classification(2, 2, 3).unwrap();
        let theta = ParamVector::zeros(&cls);
        assert_eq!(theta.layers(&cls).eta, None);
        assert_eq!(cls.eta_index(), None);
    }

    #[test]
    fn zero_weights_give_half() {
        let shape = NetworkShape::regression(3, 4).unwrap();
        let out = forward(&shape, &ParamVector::zeros(&shape), &[1.0, -2.0, 0.3]).unwrap();
        assert_eq!(out, vec![0.5]);

        let shape = NetworkShape::classification(2, 4, 3).unwrap();
        let out = forward(&shape, &ParamVector::zeros(&shape), &[0.7, 0.1]).unwrap();
        assert_eq!(out, vec![0.5, 0.5, 0.5]);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let shape = NetworkShape::regression(3, 4).unwrap();
        let err = forward(&shape, &ParamVector::zeros(&shape), &[1.0]).unwrap_err();
        assert_eq!(err, ModelError::InputShape { expected: 3, got: 1 });
        let short = ParamVector(vec![0.0; 3]);
        assert!(matches!(forward(&shape, &short, &[0.0; 3]), Err(ModelError::ParamLength { .. })));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[3f64.ln(), 0.0]);
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        for v in softmax(&[0.0, 0.0, 0.0]) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        // large scores do not overflow
        let p = softmax(&[1000.0, 999.0]);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let shape = NetworkShape::regression(2, 2).unwrap();
        let theta = ParamVector::zeros(&shape);
        let x = array![[0.1, 0.2], [0.9, -1.0]];
        let y = array![[0.5], [0.5]];
        let g = gradient(&shape, &theta, x.view(), y.view()).unwrap();
        assert!(g.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_dimension_errors() {
        let shape = NetworkShape::regression(2, 2).unwrap();
        let theta = ParamVector::zeros(&shape);
        let x = array![[0.1, 0.2]];
        let y = array![[0.5], [0.5]];
        assert!(matches!(
            gradient(&shape, &theta, x.view(), y.view()),
            Err(ModelError::RowMismatch { .. })
        ));
        let y = array![[0.5, 0.1]];
        assert!(matches!(
            gradient(&shape, &theta, x.view(), y.view()),
            Err(ModelError::TargetShape { .. })
        ));
    }

    #[test]
    fn forward_batch_matches_rows() {
        let shape = NetworkShape::classification(2, 3, 2).unwrap();
        let theta = ParamVector::new(&shape, (0..shape.param_count()).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let x = array![[0.1, 0.2], [0.5, -0.3], [1.0, 0.0]];
        let out = forward_batch(&shape, &theta, x.view()).unwrap();
        for (r, row) in x.rows().into_iter().enumerate() {
            let single = forward(&shape, &theta, row.as_slice().unwrap()).unwrap();
            assert_eq!(out.row(r).to_vec(), single);
        }
    }
}
