//! Deep learning of structured and continuous treatment policies for ranking
//! subjects by aggregated heterogeneous treatment effects.
//!
//! The crate is layered bottom-up:
//!
//! - [`diffcore`]: a define-by-run scalar tape with reverse-mode gradients,
//!   Adam, and a central-difference gradient oracle.
//! - [`policy_model`]: MLPs, the neural-augmented naive Bayes layer and its
//!   recursive stacking over a treatment-policy factor set.
//! - [`objectives`]: cohort softmax, treatment-effect estimators, the
//!   value/cost ratio objective, propensity weighting and barrier gating.
//! - [`learners`]: the SCPM, DRM and constrained trainers, logistic
//!   propensity, the R-learner and the Lagrangian-dual baseline.
//! - [`metrics`]: AUUC, AUQC, KRCC, LIFT@h, cost curves and AUCC.
//! - [`data`]: CSV ingestion, dataset recipes, splits and a synthetic
//!   generator with known ground truth.

pub mod data;
pub mod diffcore;
mod error;
pub mod learners;
pub mod metrics;
pub mod objectives;
pub mod policy_model;

pub use error::{Error, Result};
