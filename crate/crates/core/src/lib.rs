//! Graph-network surrogates for physics simulations on meshes and surface chains.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64`/`*32` aliases below pin the precision.

pub mod config;
pub mod data;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod graph;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod testing;
pub mod train;

pub use dataset::{FeatureSpec, Preprocessor, Sample};
pub use error::{Error, Result};
pub use eval::{EvalReport, Summary};
pub use graph::{BatchedGraph, Graph};
pub use model::{GnnConfig, GnnModel, MlpShape, Prediction, TaskMode};
pub use nn::{Activation, Mlp, MlpConfig, Parameters};
pub use scalar::Scalar;
pub use train::{TrainConfig, TrainLog, Trainer};

pub type Graph64 = Graph<f64>;
pub type Graph32 = Graph<f32>;
pub type BatchedGraph64 = BatchedGraph<f64>;
pub type BatchedGraph32 = BatchedGraph<f32>;
pub type Mlp64 = Mlp<f64>;
pub type Mlp32 = Mlp<f32>;
pub type GnnModel64 = GnnModel<f64>;
pub type GnnModel32 = GnnModel<f32>;
pub type Checkpoint64 = data::Checkpoint<f64>;
pub type Checkpoint32 = data::Checkpoint<f32>;
