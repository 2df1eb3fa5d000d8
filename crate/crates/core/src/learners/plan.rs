//! Per-model training defaults, `key = value` overrides and a uniform
//! train-and-summarize entry point.

use super::{
    train_constrained, train_drm, train_duality, train_scpm, validation_aucc, TrainConfig, TrainedModel,
    DEFAULT_LAMBDA_GRID, DEFAULT_RIDGE_PENALTY,
};
use crate::data::{CohortDataset, Split};
use crate::objectives::{BarrierConfig, Constraint};
use crate::{Error, Result};

/// Selection share of the constrained model when none is given.
pub const DEFAULT_PERCENTAGE: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Scpm,
    Drm,
    Constrained,
    Duality,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Scpm, ModelKind::Drm, ModelKind::Constrained, ModelKind::Duality];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Scpm => "scpm",
            ModelKind::Drm => "drm",
            ModelKind::Constrained => "constrained",
            ModelKind::Duality => "duality",
        }
    }
}

/// Everything a training run needs besides the data and the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    pub config: TrainConfig,
    pub constraint: Constraint,
    pub temperature: f64,
    pub increment: f64,
    pub period: usize,
    pub lambda_grid: Vec<f64>,
    pub penalty: f64,
}

fn number(key: &str, value: &str) -> Result<f64> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Schema(format!("`{key}` expects a number, got `{value}`")))
}

impl TrainPlan {
    /// SCPM trains 10 epochs at batch 8000; DRM and the constrained model
    /// train 1500 iterations at batch 8000; the constrained model keeps 40%.
    pub fn defaults(kind: ModelKind) -> Self {
        let config = match kind {
            ModelKind::Scpm => TrainConfig {
                batch_size: 8000,
                ..TrainConfig::default()
            },
            _ => TrainConfig::full_scale(),
        };
        let b = BarrierConfig::percentage(DEFAULT_PERCENTAGE).expect("valid default barrier");
        TrainPlan {
            config,
            constraint: b.constraint,
            temperature: b.temperature,
            increment: b.increment,
            period: b.period,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            penalty: DEFAULT_RIDGE_PENALTY,
        }
    }

    /// Barrier, multiplier and ridge keys are handled here; the rest go to
    /// [`TrainConfig::apply`].
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "percentage" => self.constraint = Constraint::Percentage(number(key, value)?),
            "budget" => self.constraint = Constraint::Budget(number(key, value)?),
            "temperature" => self.temperature = number(key, value)?,
            "temperature_increment" => self.increment = number(key, value)?,
            "temperature_period" => {
                self.period = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Schema(format!("`{key}` expects an integer, got `{value}`")))?
            }
            "lambda_grid" => self.lambda_grid = value.split(',').map(|v| number(key, v)).collect::<Result<_>>()?,
            "penalty" => self.penalty = number(key, value)?,
            _ => self.config.apply(key, value)?,
        }
        Ok(())
    }

    pub fn barrier(&self) -> Result<BarrierConfig> {
        BarrierConfig::new(self.constraint, self.temperature, self.increment, self.period)
    }

    /// Checks the settings `kind` will use.
    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        match kind {
            ModelKind::Duality => {
                if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !l.is_finite()) {
                    return Err(Error::contract("lambda grid must be non-empty and finite"));
                }
                if !(self.penalty >= 0.0) {
                    return Err(Error::contract("ridge penalty must be non-negative"));
                }
                Ok(())
            }
            ModelKind::Constrained => {
                self.barrier()?;
                self.config.validate()
            }
            _ => self.config.validate(),
        }
    }
}

/// A trained model with its log as CSV text and named summary values.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub model: TrainedModel,
    pub log: String,
    pub summary: Vec<(String, f64)>,
}

impl TrainedRun {
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in &self.summary {
            s += &format!("{k},{v}\n");
        }
        s
    }
}

fn duality_log(grid: &[(f64, f64)]) -> String {
    let mut s = String::from("lambda,validation_aucc\n");
    for (l, a) in grid {
        s += &format!("{l:e},{a}\n");
    }
    s
}

/// Trains `kind` on `split.train` with `seed`, selecting on
/// `split.validation` where the model does, and summarizes final batch
/// statistics and validation and test AUCC.
pub fn train_model(kind: ModelKind, plan: &TrainPlan, ds: &CohortDataset, split: &Split, seed: u64) -> Result<TrainedRun> {
    plan.validate(kind)?;
    let mut cfg = plan.config.clone();
    cfg.seed = seed;
    let validation = (!split.validation.is_empty()).then_some(split.validation.as_slice());
    let mut summary = Vec::new();
    let (model, log) = match kind {
        ModelKind::Duality => {
            if split.validation.is_empty() {
                return Err(Error::contract("the duality model selects lambda on a non-empty validation split"));
            }
            let d = train_duality(ds, &split.train, &split.validation, &plan.lambda_grid, plan.penalty)?;
            summary.push(("lambda".to_string(), d.lambda));
            let log = duality_log(&d.grid);
            (
                TrainedModel::Duality {
                    tau: d.tau,
                    lambda: d.lambda,
                },
                log,
            )
        }
        _ => {
            let outcome = match kind {
                ModelKind::Scpm => train_scpm(ds, &split.train, validation, &cfg)?,
                ModelKind::Drm => train_drm(ds, &split.train, validation, &cfg)?,
                _ => train_constrained(ds, &split.train, validation, &cfg, &plan.barrier()?)?,
            };
            if let Some(last) = outcome.log.steps.last() {
                summary.push(("final_objective".to_string(), last.objective));
                summary.push(("final_tau_r".to_string(), last.tau_r));
                summary.push(("final_tau_c".to_string(), last.tau_c));
            }
            (outcome.model, outcome.log.to_text())
        }
    };
    for (name, rows) in [("validation_aucc", &split.validation), ("test_aucc", &split.test)] {
        if let Ok(a) = validation_aucc(&model, ds, rows) {
            summary.push((name.to_string(), a));
        }
    }
    Ok(TrainedRun { model, log, summary })
}

/// `metric,mean,std,n` over per-seed summaries; `std` uses `n − 1`.
pub fn sweep_summary_csv(runs: &[Vec<(String, f64)>]) -> String {
    let mut s = String::from("metric,mean,std,n\n");
    let Some(first) = runs.first() else { return s };
    for (k, _) in first {
        let vals: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.iter().find(|(n, _)| n == k).map(|(_, v)| *v))
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = if vals.len() > 1 {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        s += &format!("{k},{mean},{std},{}\n", vals.len());
    }
    s
}
