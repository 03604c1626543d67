//! Clustering of daily behavioral-sensing routines and personalized relapse
//! prediction.
//!
//! The crate turns raw mobile-sensing observations into hourly daily
//! templates, clusters those templates with two complementary models (a
//! Gaussian mixture over a PCA embedding and k-medoids over a dynamic time
//! warping distance), quantifies how cluster-derived day scores shift in the
//! weeks before a clinical relapse, and feeds windowed features into a
//! personalized balanced random forest evaluated leave-one-patient-out.
//!
//! Modules follow the processing order:
//!
//! * [`registry`], [`template`], [`ingest`], [`normalize`], [`mobility`],
//!   [`pca`] build and embed per-day templates;
//! * [`gmm`], [`dtw`], [`pam`] fit the two clustering models and score days;
//! * [`analytics`] summarizes clusters and near-relapse effect sizes;
//! * [`predictor`] builds windowed samples and runs the forecaster;
//! * [`synth`] generates fully deterministic synthetic cohorts for
//!   verification.
//!
//! Every fallible batch operation is deterministic given its inputs and an
//! explicit seed, independent of how many worker threads execute it (see
//! [`exec`]).

pub mod analytics;
pub mod dtw;
pub mod error;
pub mod exec;
pub mod gmm;
pub mod ingest;
pub mod mobility;
pub mod normalize;
pub mod pam;
pub mod pca;
pub mod predictor;
pub mod registry;
pub mod scoring;
pub mod synth;
pub mod template;
pub mod validation;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
