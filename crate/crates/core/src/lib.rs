//! Brain-alignment scoring for language-model representations.
//!
//! The crate turns model activations and human neural or behavioral
//! recordings into ceiling-normalized alignment scores, and provides the
//! statistics that relate those scores to linguistic competence and loss
//! across training checkpoints.
//!
//! - [`datamodel`]: domain types, `.npy` matrices, benchmark manifests
//! - [`metrics`]: ridge-based linear predictivity, Pearson/Spearman, CKA, RSA
//! - [`splits`]: random, grouped and subject-holdout partitions
//! - [`ceiling`]: cross-subject consistency with pool-size extrapolation
//! - [`localizer`]: sentences-vs-non-words unit localization
//! - [`behavioral`]: surprisal versus reading-time alignment
//! - [`analysis`]: normalization, aggregation, trajectory statistics

pub mod analysis;
pub mod behavioral;
pub mod ceiling;
pub mod datamodel;
pub mod error;
pub mod localizer;
pub mod metrics;
pub mod splits;
pub mod stats;
pub mod synthetic;

pub use datamodel::{
    ActivationSet, AlignmentScore, Benchmark, Modality, NeuralDataset, Presentation, SeriesKind, StimulusRecord,
    StimulusSet, SubjectData, TrajectoryRow, TrajectoryTable,
};
pub use error::{Error, Result};
pub use splits::{FoldPlan, FoldScheme, FoldSpec};
