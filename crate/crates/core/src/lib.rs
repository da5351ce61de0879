//! Self-supervised scene flow estimation by adversarial metric learning.
//!
//! A flow extractor predicts per-point motion between two point clouds. A
//! cloud embedder maps clouds to a pyramid of latent vectors and is trained to
//! separate the measured second frame from the flow-transformed first frame,
//! while the extractor is trained to close that gap. Everything is generic over
//! [`Scalar`] (`f32` or `f64`); the aliases below fix the precision.

pub mod checkpoint;
pub mod cloud;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod flowmodels;
pub mod geometry;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod report;
pub mod sandbox;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use cloud::{FlowField, Mechanism, PointCloud, SceneMeta, ScenePair};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type PointCloud32 = PointCloud<f32>;
pub type PointCloud64 = PointCloud<f64>;
pub type FlowField32 = FlowField<f32>;
pub type FlowField64 = FlowField<f64>;
pub type ScenePair32 = ScenePair<f32>;
pub type ScenePair64 = ScenePair<f64>;
pub type CloudEmbedder32 = embedder::CloudEmbedder<f32>;
pub type CloudEmbedder64 = embedder::CloudEmbedder<f64>;
pub type ReferenceExtractor32 = flowmodels::ReferenceExtractor<f32>;
pub type ReferenceExtractor64 = flowmodels::ReferenceExtractor<f64>;
pub type TrainState32 = training::TrainState<f32>;
pub type TrainState64 = training::TrainState<f64>;
