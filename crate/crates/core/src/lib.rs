//! Execution engine for subtask graphs.
//!
//! The crate covers the exact AND/OR/NOT task semantics ([`graph`]), graph
//! generators ([`gen`]), the gradient-based GRProp scorer ([`grprop`]),
//! gridworld simulators ([`world`]), baseline and exhaustive policies
//! ([`policy`]), Monte-Carlo tree search ([`mcts`]) and the benchmark
//! harness ([`bench`]).
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below fix the scalar to `f64`.

pub mod bench;
pub mod error;
pub mod gen;
pub mod graph;
pub mod grprop;
pub mod mcts;
pub mod policy;
pub mod rng;
pub mod scalar;
pub mod world;

pub use error::{Error, Result};
pub use graph::{Domain, SubtaskId, SubtaskSet, TaskState};
pub use scalar::Scalar;

pub type Graph = graph::SubtaskGraph<f64>;
pub type GenParams = gen::GenParams<f64>;
pub type SmoothParams = grprop::SmoothParams<f64>;
pub type GrpropConfig = grprop::GrpropConfig<f64>;
pub type SmoothedEval = grprop::SmoothedEval<f64>;
pub type World = world::GridWorld<f64>;
pub type EpisodeConfig = world::EpisodeConfig<f64>;
pub type EpisodeRecord = world::EpisodeRecord<f64>;
pub type MctsConfig = mcts::MctsConfig<f64>;
