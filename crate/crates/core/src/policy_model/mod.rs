//! MLPs, the neural-augmented naive Bayes layer, factor stacking, and the
//! model checkpoint container.

mod checkpoint;
mod mlp;
mod nanbl;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use mlp::{Head, MlpModel};
pub use nanbl::{
    assignment_likelihood, bell, bell_tape, intensity_likelihood, nanbl_posterior, prior_prob,
    recursive_forward, recursive_forward_tape, CohortView, PolicyFactor, PolicyFactorSet,
};
