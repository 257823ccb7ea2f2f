//! Fixtures shared by the benches.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ptbnn::data::{self, Dataset};
use ptbnn::model::{NetworkShape, ParamVector};
use ptbnn::proposal::{ProposalConfig, ProposalKind};
use ptbnn::sampler::{Target, TemperingMode};
use ptbnn::{series, PriorSpec};

/// Henon series embedded with `D = 4`, `T = 2`, sized like the benchmark problems.
pub fn embedded_series(points: usize) -> Dataset {
    let (scaled, _) = data::minmax_scale(&series::henon(points, 500));
    data::takens_embed(&scaled, 4, 2).expect("long enough").into_dataset()
}

pub fn random_classification(rows: usize, inputs: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((rows, inputs), |_| rng.random::<f64>());
    let labels = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    Dataset::classification(x, labels, classes).expect("valid labels")
}

pub fn target(train: Dataset, hidden: usize, kind: ProposalKind) -> Target {
    let shape = match train.task() {
        ptbnn::Task::Regression => NetworkShape::regression(train.features(), hidden),
        ptbnn::Task::Classification => NetworkShape::classification(train.features(), hidden, train.target_matrix().ncols()),
    }
    .expect("valid shape");
    Target {
        shape,
        train,
        prior: PriorSpec::default(),
        proposal: ProposalConfig { kind, lg_freq: 1.0, ..ProposalConfig::default() },
        tempering: TemperingMode::Likelihood,
    }
}

pub fn random_theta(shape: &NetworkShape, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = Array1::from_shape_fn(shape.param_count(), |_| rng.random_range(-0.5..0.5));
    ParamVector::new(shape, values.to_vec()).expect("length matches")
}
