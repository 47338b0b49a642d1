//! Behavior/posture disentanglement for skeletal motion sequences.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod fsutil;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod render;
pub mod seqio;
pub mod skeleton;
pub mod synth;
pub mod tensor;
pub mod train;

pub use data::{Dataset, DatasetConfig, NormStats, PoseSequence};
pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use params::{GradRecord, ParamSet, Role};
pub use synth::{Family, SynthParams};
pub use tensor::Tensor;
