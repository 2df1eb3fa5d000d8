use std::path::Path;

use super::rlearner::RidgeTau;
use crate::data::CohortDataset;
use crate::policy_model::{Checkpoint, Head, MlpModel, PolicyFactor, PolicyFactorSet};
use crate::{Error, Result};

/// A trained SCPM factor set with its intensity standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedScpm {
    pub factors: PolicyFactorSet,
    pub intensity: (f64, f64),
}

/// Any trained ranker, reduced to what scoring and checkpoints need.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Drm(MlpModel),
    Constrained(MlpModel),
    Scpm(TrainedScpm),
    /// Linear effect model on the combined outcome `Y^r − λ Y^c`.
    Duality { tau: RidgeTau, lambda: f64 },
}

impl TrainedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            TrainedModel::Drm(_) => "drm",
            TrainedModel::Constrained(_) => "constrained",
            TrainedModel::Scpm(_) => "scpm",
            TrainedModel::Duality { .. } => "duality",
        }
    }

    /// Covariate width the model scores.
    pub fn input_dim(&self) -> usize {
        match self {
            TrainedModel::Drm(m) | TrainedModel::Constrained(m) => m.input_dim(),
            TrainedModel::Scpm(s) => s.factors.prior().input_dim(),
            TrainedModel::Duality { tau, .. } => tau.dim(),
        }
    }

    /// Ranking score of one covariate row. SCPM uses its prior only.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        match self {
            TrainedModel::Drm(m) | TrainedModel::Constrained(m) => m.predict(x),
            TrainedModel::Scpm(s) => s.factors.prior().predict(x),
            TrainedModel::Duality { tau, .. } => tau.predict(x),
        }
    }

    pub fn score_rows(&self, ds: &CohortDataset, rows: &[usize]) -> Result<Vec<f64>> {
        if ds.dim != self.input_dim() {
            return Err(Error::contract(format!(
                "model expects {} covariates, dataset has {}",
                self.input_dim(),
                ds.dim
            )));
        }
        rows.iter().map(|&i| self.score(ds.row(i))).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let ck = Checkpoint::new(self.kind());
        match self {
            TrainedModel::Drm(m) | TrainedModel::Constrained(m) => ck.with_model("scorer", m.clone()),
            TrainedModel::Scpm(s) => {
                let mut ck = ck
                    .with_meta("intensity_mean", format!("{:e}", s.intensity.0))
                    .with_meta("intensity_sd", format!("{:e}", s.intensity.1));
                for f in s.factors.factors() {
                    ck = ck.with_model(f.name(), f.model().clone());
                }
                ck
            }
            TrainedModel::Duality { tau, lambda } => ck
                .with_meta("lambda", format!("{lambda:e}"))
                .with_meta("penalty", format!("{:e}", tau.penalty))
                .with_model("outcome", tau.outcome_model())
                .with_model("tau", tau.effect_model()),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let need = |name: &str| {
            ck.model(name)
                .cloned()
                .ok_or_else(|| Error::contract(format!("{} checkpoint lacks model `{name}`", ck.kind)))
        };
        let meta = |key: &str| -> Result<f64> {
            ck.meta(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::contract(format!("{} checkpoint lacks numeric meta `{key}`", ck.kind)))
        };
        match ck.kind.as_str() {
            "drm" => Ok(TrainedModel::Drm(need("scorer")?)),
            "constrained" => Ok(TrainedModel::Constrained(need("scorer")?)),
            "scpm" => {
                let mut factors = vec![PolicyFactor::Prior(need("prior")?)];
                if let Some(m) = ck.model("intensity") {
                    factors.push(PolicyFactor::ContinuousIntensity(m.clone()));
                }
                if let Some(m) = ck.model("assignment") {
                    factors.push(PolicyFactor::DiscreteAssignment(m.clone()));
                }
                Ok(TrainedModel::Scpm(TrainedScpm {
                    factors: PolicyFactorSet::new(factors)?,
                    intensity: (meta("intensity_mean")?, meta("intensity_sd")?),
                }))
            }
            "duality" => {
                let tau = RidgeTau::from_models(&need("outcome")?, &need("tau")?, meta("penalty")?)?;
                Ok(TrainedModel::Duality {
                    tau,
                    lambda: meta("lambda")?,
                })
            }
            other => Err(Error::contract(format!("unknown checkpoint kind `{other}`"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// `tanh(wᵀx + b)` scorer.
pub(crate) fn drm_scorer(d: usize, seed: u64) -> Result<MlpModel> {
    MlpModel::init(vec![d, 1], Head::Tanh, seed)
}
