//! Conditional mutual information (CMI) metrics for classifiers and
//! CMI-constrained training.
//!
//! A classifier maps each input `x` to a distribution `P_x` over `C`
//! classes. Over a labelled sample, [`metrics`] measures how tightly each
//! class clusters around its mean output (CMI), how far apart different
//! classes sit (separation `Γ`), and their ratio (NCMI). [`trainer`]
//! minimizes cross entropy plus `λ·CMI − β·Γ` by alternating SGD steps on the
//! network with updates of per-class centroid estimates.

pub mod attacks;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod numerics;
pub mod reference;
pub mod simplex;
pub mod trainer;

pub use error::{Error, Result};
pub use metrics::{CentroidSet, ErrorRates, MetricsReport};
pub use nn::{Checkpoint, Gradients, MlpModel, OptimizerState, SgdConfig, Tensor};
pub use numerics::{LabelVector, ProbMatrix, ProbVector};
