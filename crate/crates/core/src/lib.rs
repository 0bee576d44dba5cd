//! Gameplay-style clustering for game telemetry.
//!
//! The pipeline turns JSON Lines event logs into a typology of play styles:
//! sessions are split into overlapping time windows, events are counted into
//! per-category features (player actions, system feedback, progression),
//! invalid and outlying sessions are removed, features are log-transformed
//! where right-tailed, standardized and reduced with PCA, sessions are
//! clustered with k-means (k chosen by average silhouette), and each cluster
//! is profiled on a radar chart relative to the population mean.

pub mod artifacts;
pub mod clean;
pub mod cluster;
pub mod config;
pub mod error;
pub mod features;
pub mod ingest;
pub mod matrix;
pub mod pipeline;
pub mod report;
pub mod seed;
pub mod simgen;

pub use clean::{CleaningRules, PcaModel, TransformRecord};
pub use cluster::{kmeans, silhouette, sweep_k, KMeansResult, SweepParams, SweepTable};
pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use features::{FeatureMatrix, FeatureSpec};
pub use ingest::{Category, Event, Session, Window, WindowConfig};
pub use matrix::Matrix;
pub use pipeline::{run, Stage, StageError};
pub use report::RadarProfile;
