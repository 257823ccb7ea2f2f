//! Parallel-tempering Metropolis-Hastings for small Bayesian feedforward
//! networks, with random-walk and Langevin-gradient proposals.
//!
//! The crate is organised bottom-up: [`model`] (network and gradient),
//! [`inference`] (likelihoods, prior, metrics), [`proposal`], [`sampler`]
//! (one tempered chain), [`tempering`] (ladder, swaps, coordinator), [`data`]
//! (loading, scaling, delay embedding) and [`experiment`] (end-to-end runs and
//! reporting).

pub mod data;
pub mod experiment;
pub mod inference;
pub mod model;
pub mod proposal;
pub mod sampler;
pub mod series;
pub mod tempering;

pub use data::{Dataset, Targets};
pub use experiment::{run_experiment, Method, RunConfig, RunReport};

pub use inference::{LogDensity, PriorSpec};
pub use model::{Gradient, NetworkShape, ParamVector, Task};
pub use proposal::{ProposalConfig, ProposalKind};
pub use sampler::{Chain, ReplicaState, Target, TemperingMode};
pub use tempering::{build_ladder, EnsembleConfig, Execution, PhaseSchedule, SwapStats, TemperatureLadder};
