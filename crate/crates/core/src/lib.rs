//! Simulation and analysis of ranking competitions between document-author
//! agents.

pub mod agents;
pub mod analyzer;
pub mod compare;
pub mod dataset;
pub mod engine;
pub mod llm;
pub mod model;
pub mod prompts;
pub mod ranking;
pub mod scalar;
pub mod text;

pub use scalar::Scalar;

pub type TermVectorF32 = text::TermVector<f32>;
pub type TermVectorF64 = text::TermVector<f64>;
pub type CollectionLmF64 = text::CollectionLm<f64>;
pub type MeasureSeriesF64 = analyzer::MeasureSeries<f64>;
pub type MeasureSeriesF32 = analyzer::MeasureSeries<f32>;
