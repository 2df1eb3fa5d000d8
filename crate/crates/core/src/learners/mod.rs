//! Trainers for the ranking models and the baseline solvers.
//!
//! - [`train_drm`]: single-layer `tanh(wᵀx + b)` scorer, cohort softmax.
//! - [`train_scpm`]: stacked policy factors; the prior alone scores at test
//!   time.
//! - [`train_constrained`]: DRM with barrier gating and an annealed
//!   temperature.
//! - [`fit_propensity`], [`fit_rlearner_tau`], [`duality_solve`] and
//!   [`train_duality`]: logistic propensity, two-stage ridge effects and the
//!   Lagrangian-dual budget baseline.

mod batch;
mod model;
mod objective;
mod plan;
mod propensity;
mod rlearner;
mod trainers;

pub use batch::StratifiedBatcher;
pub use model::{TrainedModel, TrainedScpm};
pub use objective::{
    default_factors, gradcheck, record_objective, BarrierTarget, GradcheckReport, ObjectiveNodes, ObjectiveSpec,
    Scorer,
};
pub use plan::{sweep_summary_csv, train_model, ModelKind, TrainPlan, TrainedRun, DEFAULT_PERCENTAGE};
pub use propensity::{fit_propensity, LogisticFit, PropensityConfig};
pub use rlearner::{
    duality_combined_model, duality_gradcheck, duality_solve, fit_rlearner_tau, train_duality, DualConfig, DualIterate, DualState,
    DualityModel, LambdaUpdate, RidgeTau, DEFAULT_LAMBDA_GRID, DEFAULT_RIDGE_PENALTY,
};
pub use trainers::{
    evaluate_objective, top_set_mass, train_constrained, train_drm, train_scpm, validation_aucc, TrainOutcome,
};

use crate::objectives::Direction;
use crate::{Error, Result};

/// Whether outcomes are reweighted by estimated propensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PropensityMode {
    #[default]
    Off,
    Weighted,
}

impl PropensityMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "off" => Some(PropensityMode::Off),
            "weighted" => Some(PropensityMode::Weighted),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PropensityMode::Off => "off",
            PropensityMode::Weighted => "weighted",
        }
    }
}

/// Optimization hyperparameters shared by the gradient trainers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Upper bound on the batch size; capped at the training-set size.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Passes over the training rows; ignored when `iterations` is set.
    pub epochs: usize,
    pub iterations: Option<usize>,
    pub hidden: usize,
    pub regularization: f64,
    pub seed: u64,
    pub propensity: PropensityMode,
    pub direction: Direction,
    /// Steps between validation AUCC checks (0 disables model selection).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            learning_rate: 0.001,
            epochs: 10,
            iterations: None,
            hidden: 32,
            regularization: 0.0,
            seed: 0,
            propensity: PropensityMode::Off,
            direction: Direction::ValueOverCost,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    /// Batch 8000, learning rate 0.001, hidden width 32, 1500 iterations.
    pub fn full_scale() -> Self {
        TrainConfig {
            batch_size: 8000,
            iterations: Some(1500),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::contract("batch size must be at least 2"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::contract("learning rate must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::contract("hidden width must be positive"));
        }
        if !(self.regularization >= 0.0) {
            return Err(Error::contract("regularization must be non-negative"));
        }
        if self.iterations == Some(0) || (self.iterations.is_none() && self.epochs == 0) {
            return Err(Error::contract("training needs at least one step"));
        }
        Ok(())
    }

    /// Number of optimizer steps for `n_train` rows.
    pub fn steps(&self, n_train: usize) -> usize {
        match self.iterations {
            Some(it) => it,
            None => {
                let b = self.batch_size.min(n_train).max(1);
                self.epochs * n_train.div_ceil(b)
            }
        }
    }

    /// Applies `key = value` overrides; unknown keys are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Schema(format!("bad value `{value}` for `{key}`"));
        match key {
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad())?,
            "learning_rate" | "lr" => self.learning_rate = value.parse().map_err(|_| bad())?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad())?,
            "iterations" => self.iterations = Some(value.parse().map_err(|_| bad())?),
            "hidden" => self.hidden = value.parse().map_err(|_| bad())?,
            "regularization" | "reg" => self.regularization = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "propensity" => self.propensity = PropensityMode::parse(value).ok_or_else(bad)?,
            "direction" => self.direction = Direction::parse(value).ok_or_else(bad)?,
            "eval_every" => self.eval_every = value.parse().map_err(|_| bad())?,
            _ => return Err(Error::Schema(format!("unknown training key `{key}`"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "batch_size = {}\nlearning_rate = {}\nepochs = {}\n",
            self.batch_size, self.learning_rate, self.epochs
        );
        if let Some(it) = self.iterations {
            s += &format!("iterations = {it}\n");
        }
        s += &format!(
            "hidden = {}\nregularization = {}\nseed = {}\npropensity = {}\ndirection = {}\neval_every = {}\n",
            self.hidden,
            self.regularization,
            self.seed,
            self.propensity.as_str(),
            self.direction.as_str(),
            self.eval_every
        );
        s
    }
}

/// One optimizer step of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub objective: f64,
    pub tau_r: f64,
    pub tau_c: f64,
    /// Barrier temperature or dual multiplier, when the learner has one.
    pub aux: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    /// `(step, validation AUCC)` at each model-selection check.
    pub validation: Vec<(usize, f64)>,
}

impl TrainLog {
    pub fn to_text(&self) -> String {
        let mut s = String::from("step,objective,tau_r,tau_c,aux,note\n");
        for l in &self.steps {
            s += &format!(
                "{},{:e},{:e},{:e},{},{}\n",
                l.step,
                l.objective,
                l.tau_r,
                l.tau_c,
                l.aux.map(|a| format!("{a:e}")).unwrap_or_default(),
                l.note.as_deref().unwrap_or("")
            );
        }
        for (step, a) in &self.validation {
            s += &format!("# validation step={step} aucc={a}\n");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_overrides_round_trip() {
        let mut c = TrainConfig::default();
        for (k, v) in crate::data::parse_key_values("lr = 0.01\niterations = 40\npropensity = weighted\n").unwrap() {
            c.apply(&k, &v).unwrap();
        }
        assert_eq!(c.learning_rate, 0.01);
        assert_eq!(c.steps(1000), 40);
        let mut back = TrainConfig::default();
        for (k, v) in crate::data::parse_key_values(&c.to_text()).unwrap() {
            back.apply(&k, &v).unwrap();
        }
        assert_eq!(back, c);
        assert!(c.apply("momentum", "0.9").is_err());
    }

    #[test]
    fn full_scale_matches_reported_settings() {
        let c = TrainConfig::full_scale();
        assert_eq!((c.batch_size, c.learning_rate, c.hidden, c.steps(10)), (8000, 0.001, 32, 1500));
    }

    #[test]
    fn epochs_translate_to_steps() {
        let c = TrainConfig::default();
        assert_eq!(c.steps(1000), 10 * 4);
        assert_eq!(c.steps(100), 10);
    }
}
