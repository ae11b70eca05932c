//! Representation-to-brain similarity metrics.

mod cka;
mod correlation;
mod predictivity;
mod ridge;
mod rsa;

pub use cka::cka;
pub use correlation::{pearson, spearman};
pub use predictivity::{linear_predictivity, predictivity_with_plan, FoldOutcome, Predictivity, MIN_TRAIN_ROWS};
pub use ridge::{ridge_fit, FoldAggregation, RidgeConfig, RidgeModel};
pub use rsa::{rdm_compute, rsa_score, Rdm};
