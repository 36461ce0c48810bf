//! Adversarial input detection from the disagreement of two feature channels.
//!
//! Each class gets a *distribution identity*: a series of Mann-Whitney p-values
//! comparing divergence populations of clean train and test batches, built
//! separately for the raw and the denoised channel. At runtime a sample is
//! augmented with benign noise, matched against stored class references on both
//! channels, and scored by how far the two channels' class-distance vectors
//! disagree. Scores above a calibrated threshold mark the sample adversarial.
//!
//! Modules: [`stat`] (numerical primitives), [`features`] (channel sources and
//! the synthetic world), [`identity`], [`detection`], [`eval`] and [`io`].

pub mod detection;
pub mod error;
pub mod eval;
pub mod features;
pub mod identity;
pub mod io;
pub mod seed;
pub mod stat;

pub use detection::{
    calibrate, Assessment, CalibrationResult, ClassSignature, DetectionParams, DetectionVerdict,
    Detector, DistanceVector,
};
pub use error::{Error, Result};
pub use eval::{evaluate, report_table, EvaluationReport, SampleVerdict};
pub use features::{
    extract, instance, Channel, DumpSource, FeatureBatch, FeatureSource, InputSample,
    SyntheticWorld, SyntheticWorldConfig,
};
pub use identity::{
    build_all, build_identity, BinningParams, Calibration, ClassIdentity, ClassPools,
    IdentityBuildParams, IdentityStore, ReferenceStore,
};
pub use stat::{BinnedDistribution, PValueSeries, ProbVector};
