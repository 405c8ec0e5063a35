//! Semi-supervised adversarial training for Japanese predicate-argument
//! structure analysis.

pub mod adcore;
pub mod augment;
pub mod cli;
pub mod corpus;
pub mod evaluation;
pub mod experiment;
pub mod generator;
pub mod model;
pub mod scalar;
pub mod synth;
pub mod training;
pub mod validator;

pub use scalar::{Precision, Scalar};

pub type Tensor32 = adcore::Tensor<f32>;
pub type Tensor64 = adcore::Tensor<f64>;
pub type Store32 = adcore::ParameterStore<f32>;
pub type Store64 = adcore::ParameterStore<f64>;
pub type Graph32<'s> = adcore::Graph<'s, f32>;
pub type Graph64<'s> = adcore::Graph<'s, f64>;
pub type Checkpoint32 = adcore::Checkpoint<f32>;
pub type Checkpoint64 = adcore::Checkpoint<f64>;
