use super::batch::StratifiedBatcher;
use super::model::{drm_scorer, TrainedModel, TrainedScpm};
use super::objective::{default_factors, record_objective, BarrierTarget, ObjectiveSpec, Scorer};
use super::propensity::{fit_propensity, PropensityConfig};
use super::{PropensityMode, StepLog, TrainConfig, TrainLog};
use crate::data::CohortDataset;
use crate::diffcore::{AdamState, Graph};
use crate::metrics::{aucc_of, RankedEvalSet};
use crate::objectives::{
    barrier_apply, cohort_softmax, percentage_cut, propensity_weighted_tau, ratio_objective, tau_hat,
    BarrierConfig, CohortThresholds, Constraint, Direction, Outcome, PropensityWeights,
};
use crate::{Error, Result};

/// A trained model with its training log and the propensities it used.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub log: TrainLog,
    pub propensity: Option<PropensityWeights>,
}

impl TrainedModel {
    fn params(&self) -> Vec<f64> {
        match self {
            TrainedModel::Drm(m) | TrainedModel::Constrained(m) => m.params().to_vec(),
            TrainedModel::Scpm(s) => s.factors.params(),
            TrainedModel::Duality { .. } => Vec::new(),
        }
    }

    fn set_params(&mut self, p: &[f64]) -> Result<()> {
        match self {
            TrainedModel::Drm(m) | TrainedModel::Constrained(m) => m.set_params(p),
            TrainedModel::Scpm(s) => s.factors.set_params(p),
            TrainedModel::Duality { .. } => Err(Error::contract("the duality model has no gradient parameters")),
        }
    }

    /// The differentiable view of a gradient-trained model.
    pub fn scorer(&self) -> Result<Scorer<'_>> {
        match self {
            TrainedModel::Drm(m) | TrainedModel::Constrained(m) => Ok(Scorer::Drm(m)),
            TrainedModel::Scpm(s) => Ok(Scorer::Scpm {
                factors: &s.factors,
                intensity: s.intensity,
            }),
            TrainedModel::Duality { .. } => Err(Error::contract("the duality model has no gradient parameters")),
        }
    }
}

fn check_rows(ds: &CohortDataset, rows: &[usize], what: &str) -> Result<()> {
    if let Some(&bad) = rows.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::contract(format!("{what} row {bad} out of range")));
    }
    let t = rows.iter().filter(|&&i| ds.treated[i]).count();
    if t == 0 || t == rows.len() {
        return Err(Error::contract(format!("{what} rows need both treated and control subjects")));
    }
    Ok(())
}

fn propensity_for(ds: &CohortDataset, train: &[usize], mode: PropensityMode) -> Result<Option<PropensityWeights>> {
    match mode {
        PropensityMode::Off => Ok(None),
        PropensityMode::Weighted => {
            let x: Vec<f64> = train.iter().flat_map(|&i| ds.row(i).iter().copied()).collect();
            let t: Vec<bool> = train.iter().map(|&i| ds.treated[i]).collect();
            let fit = fit_propensity(&x, ds.dim, &t, &PropensityConfig::default())?;
            Ok(Some(fit.weights_for(ds)?))
        }
    }
}

/// AUCC of `model`'s scores on `rows`.
pub fn validation_aucc(model: &TrainedModel, ds: &CohortDataset, rows: &[usize]) -> Result<f64> {
    let eval = RankedEvalSet::new(
        model.score_rows(ds, rows)?,
        rows.iter().map(|&i| ds.treated[i]).collect(),
        rows.iter().map(|&i| ds.gain[i]).collect(),
        rows.iter().map(|&i| ds.cost[i]).collect(),
    )?;
    Ok(aucc_of(&eval)?.value)
}

/// Unregularized ratio objective of `scores` over `rows` with cohort
/// softmax probabilities; weighted when `weights` (over all dataset rows)
/// is given.
pub fn evaluate_objective(
    scores: &[f64],
    ds: &CohortDataset,
    rows: &[usize],
    weights: Option<&PropensityWeights>,
    direction: Direction,
) -> Result<f64> {
    let treated: Vec<bool> = rows.iter().map(|&i| ds.treated[i]).collect();
    let p = cohort_softmax(scores, &treated)?;
    let gain: Vec<f64> = rows.iter().map(|&i| ds.gain[i]).collect();
    let cost: Vec<f64> = rows.iter().map(|&i| ds.cost[i]).collect();
    let (tr, tc) = match weights {
        None => (tau_hat(&p, &gain, Outcome::Gain)?, tau_hat(&p, &cost, Outcome::Cost)?),
        Some(w) => {
            let w = w.subset(rows);
            (
                propensity_weighted_tau(&p, &gain, &w, Outcome::Gain)?,
                propensity_weighted_tau(&p, &cost, &w, Outcome::Cost)?,
            )
        }
    };
    Ok(ratio_objective(tr.value, tc.value, 0.0, 0.0, direction))
}

struct Run<'a> {
    ds: &'a CohortDataset,
    train: &'a [usize],
    validation: Option<&'a [usize]>,
    config: &'a TrainConfig,
    barrier: Option<(BarrierTarget, BarrierConfig)>,
}

fn optimize(run: &Run<'_>, mut model: TrainedModel) -> Result<TrainOutcome> {
    let cfg = run.config;
    cfg.validate()?;
    check_rows(run.ds, run.train, "training")?;
    if let Some(v) = run.validation {
        check_rows(run.ds, v, "validation")?;
    }
    let weights = propensity_for(run.ds, run.train, cfg.propensity)?;
    let mut params = model.params();
    let n = params.len();
    let mut adam = AdamState::new(n, cfg.learning_rate);
    let mut batcher = StratifiedBatcher::new(run.train, &run.ds.treated, cfg.batch_size, cfg.seed ^ 0x5eed_ba7c)?;
    let steps = cfg.steps(run.train.len());
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for step in 0..steps {
        let batch = batcher.next_batch();
        let temperature = run.barrier.map(|(_, b)| b.temperature_at(step));
        let spec = ObjectiveSpec {
            dataset: run.ds,
            rows: &batch,
            weights: weights.as_ref(),
            regularization: cfg.regularization,
            direction: cfg.direction,
            barrier: run.barrier.map(|(t, _)| (t, temperature.unwrap())),
        };
        let mut g = Graph::new();
        let vars = g.leaves(&params);
        let nodes = record_objective(&mut g, &vars, model.scorer()?, &spec)?;
        let objective = g.value(nodes.objective);
        let (tau_r, tau_c) = (g.value(nodes.tau_r), g.value(nodes.tau_c));
        if !objective.is_finite() {
            return Err(Error::Diverged {
                step,
                message: format!("objective {objective} (tau_r {tau_r}, tau_c {tau_c})"),
            });
        }
        let grads = g.backward(nodes.objective).map_err(|e| Error::Diverged {
            step,
            message: e.to_string(),
        })?;
        let ascent: Vec<f64> = grads[..n].iter().map(|g| -g).collect();
        adam.update(&mut params, &ascent)?;
        model.set_params(&params)?;
        log.steps.push(StepLog {
            step,
            objective,
            tau_r,
            tau_c,
            aux: temperature,
            note: nodes.barrier_skipped,
        });
        if let Some(val) = run.validation {
            let check = cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || step + 1 == steps);
            if check {
                let a = validation_aucc(&model, run.ds, val)?;
                log.validation.push((step + 1, a));
                if best.as_ref().is_none_or(|b| a > b.0) {
                    best = Some((a, params.clone()));
                }
            }
        }
    }
    if let Some((_, p)) = best {
        model.set_params(&p)?;
    }
    Ok(TrainOutcome {
        model,
        log,
        propensity: weights,
    })
}

/// Trains a `tanh(wᵀx + b)` scorer on the ratio objective.
pub fn train_drm(
    ds: &CohortDataset,
    train: &[usize],
    validation: Option<&[usize]>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let run = Run {
        ds,
        train,
        validation,
        config,
        barrier: None,
    };
    optimize(&run, TrainedModel::Drm(drm_scorer(ds.dim, config.seed)?))
}

/// Trains the stacked factor model; see [`default_factors`] for which
/// factors are used.
pub fn train_scpm(
    ds: &CohortDataset,
    train: &[usize],
    validation: Option<&[usize]>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let rho: Vec<f64> = train
        .iter()
        .filter(|&&i| ds.treated[i])
        .map(|&i| ds.intensity[i])
        .collect();
    if rho.is_empty() {
        return Err(Error::contract("training rows have no treated subject"));
    }
    let mean = rho.iter().sum::<f64>() / rho.len() as f64;
    let var = rho.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rho.len() as f64;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    let model = TrainedModel::Scpm(TrainedScpm {
        factors: default_factors(ds, config.hidden, config.seed)?,
        intensity: (mean, sd),
    });
    let run = Run {
        ds,
        train,
        validation,
        config,
        barrier: None,
    };
    optimize(&run, model)
}

/// DRM with barrier gating under `barrier`'s annealed temperature.
///
/// A budget `B` is read against the summed positive cost of the training
/// rows and enforced per batch in proportion; `B` at or above that total
/// leaves the barrier inactive.
pub fn train_constrained(
    ds: &CohortDataset,
    train: &[usize],
    validation: Option<&[usize]>,
    config: &TrainConfig,
    barrier: &BarrierConfig,
) -> Result<TrainOutcome> {
    let target = match barrier.constraint {
        Constraint::Percentage(p) => BarrierTarget::Percentage(p),
        Constraint::Budget(b) => {
            let total: f64 = train.iter().map(|&i| ds.cost[i].max(0.0)).sum();
            BarrierTarget::BudgetShare(if total > 0.0 { b / total } else { 1.0 })
        }
    };
    let run = Run {
        ds,
        train,
        validation,
        config,
        barrier: Some((target, *barrier)),
    };
    let out = optimize(&run, TrainedModel::Drm(drm_scorer(ds.dim, config.seed)?))?;
    let TrainedModel::Drm(m) = out.model else {
        unreachable!("constrained training starts from a DRM scorer")
    };
    Ok(TrainOutcome {
        model: TrainedModel::Constrained(m),
        ..out
    })
}

/// Share of the post-barrier mass of `rows`, both cohorts pooled, that
/// falls on the top `fraction` of each cohort at `temperature`.
pub fn top_set_mass(
    model: &TrainedModel,
    ds: &CohortDataset,
    rows: &[usize],
    fraction: f64,
    temperature: f64,
) -> Result<f64> {
    let scores = model.score_rows(ds, rows)?;
    let treated: Vec<bool> = rows.iter().map(|&i| ds.treated[i]).collect();
    let p = cohort_softmax(&scores, &treated)?;
    let mut cuts = CohortThresholds::default();
    let mut sets = Vec::new();
    for cohort in [true, false] {
        let idx: Vec<usize> = (0..rows.len()).filter(|&k| treated[k] == cohort).collect();
        let values: Vec<f64> = idx.iter().map(|&k| p.probs[k]).collect();
        let cut = percentage_cut(&values, fraction)?;
        let d = cut.value(&values);
        if cohort {
            cuts.treated = Some(d);
        } else {
            cuts.control = Some(d);
        }
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        let k = cut.selected_count(values.len(), &order);
        sets.push(order[..k].iter().map(|&j| idx[j]).collect::<Vec<_>>());
    }
    let gated = barrier_apply(&p, cuts, temperature)?;
    let top: f64 = sets.iter().flatten().map(|&k| gated.probs[k]).sum();
    Ok(top / gated.probs.iter().sum::<f64>())
}
