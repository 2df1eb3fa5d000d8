//! The full training objective recorded on a tape, shared by the trainers
//! and the gradient check.

use crate::data::CohortDataset;
use crate::diffcore::{finite_diff_grad, max_relative_error, Graph, Var};
use crate::objectives::{
    barrier_apply_tape, budget_cut, cohort_softmax_tape, linear_tau_tape, percentage_cut, ratio_objective_tape,
    tau_coefficients, Cut, Direction, PropensityWeights,
};
use crate::policy_model::{Head, MlpModel, PolicyFactor, PolicyFactorSet};
use crate::{Error, Result};

/// The model whose parameters the tape differentiates.
#[derive(Debug, Clone, Copy)]
pub enum Scorer<'a> {
    /// One score per subject, cohort softmax on both cohorts.
    Drm(&'a MlpModel),
    /// Stacked factors on the treated cohort, normalized prior on control.
    /// `intensity` is the `(mean, sd)` used to standardize intensities.
    Scpm {
        factors: &'a PolicyFactorSet,
        intensity: (f64, f64),
    },
}

impl Scorer<'_> {
    pub fn param_count(&self) -> usize {
        match self {
            Scorer::Drm(m) => m.params().len(),
            Scorer::Scpm { factors, .. } => factors.param_count(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Scorer::Drm(m) => m.params().to_vec(),
            Scorer::Scpm { factors, .. } => factors.params(),
        }
    }
}

/// Where the barrier cut goes in each cohort of a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BarrierTarget {
    /// Keep this fraction of each cohort.
    Percentage(f64),
    /// Spend at most this share of each cohort's summed positive cost.
    BudgetShare(f64),
}

/// What the objective is evaluated on.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveSpec<'a> {
    pub dataset: &'a CohortDataset,
    pub rows: &'a [usize],
    /// Propensities over all dataset rows, when weighting is on.
    pub weights: Option<&'a PropensityWeights>,
    pub regularization: f64,
    pub direction: Direction,
    pub barrier: Option<(BarrierTarget, f64)>,
}

/// Handles into the recorded graph.
#[derive(Debug, Clone)]
pub struct ObjectiveNodes {
    pub objective: Var,
    pub tau_r: Var,
    pub tau_c: Var,
    /// Final (post-barrier) probabilities in `rows` order.
    pub probs: Vec<Var>,
    pub treated: Vec<bool>,
    /// Set when the barrier was requested but could not be placed.
    pub barrier_skipped: Option<String>,
}

/// Prior, intensity and assignment factors sized for `ds`. The intensity
/// factor is added when treated intensities vary; the assignment factor
/// when assignments are present.
pub fn default_factors(ds: &CohortDataset, hidden: usize, seed: u64) -> Result<PolicyFactorSet> {
    let d = ds.dim;
    let mut factors = vec![PolicyFactor::Prior(MlpModel::init(
        MlpModel::widths_for(d, &[hidden], 1),
        Head::Sigmoid,
        seed,
    )?)];
    let mut treated_rho = (0..ds.len()).filter(|&i| ds.treated[i]).map(|i| ds.intensity[i]);
    let first = treated_rho.next();
    if treated_rho.any(|r| Some(r) != first) {
        factors.push(PolicyFactor::ContinuousIntensity(MlpModel::init(
            MlpModel::widths_for(d, &[hidden], 1),
            Head::Linear,
            seed.wrapping_add(1),
        )?));
    }
    if ds.assignment.is_some() {
        factors.push(PolicyFactor::DiscreteAssignment(MlpModel::init(
            MlpModel::widths_for(ds.assignment_input_dim(), &[hidden], ds.assignment_classes),
            Head::ClassLogits,
            seed.wrapping_add(2),
        )?));
    }
    PolicyFactorSet::new(factors)
}

fn normalize(g: &mut Graph, v: &[Var]) -> Vec<Var> {
    let z = g.sum(v);
    v.iter().map(|&x| g.div(x, z)).collect()
}

fn cohort_probs(g: &mut Graph, params: &[Var], scorer: Scorer<'_>, spec: &ObjectiveSpec<'_>) -> Result<Vec<Var>> {
    let ds = spec.dataset;
    let treated: Vec<bool> = spec.rows.iter().map(|&i| ds.treated[i]).collect();
    match scorer {
        Scorer::Drm(m) => {
            let scores = spec
                .rows
                .iter()
                .map(|&i| Ok(m.forward_tape(g, params, ds.row(i))?[0]))
                .collect::<Result<Vec<Var>>>()?;
            cohort_softmax_tape(g, &scores, &treated)
        }
        Scorer::Scpm { factors, intensity } => {
            let (mu, sd) = intensity;
            let ranges = factors.param_ranges();
            let prior = factors.prior();
            let t_rows: Vec<usize> = spec.rows.iter().copied().filter(|&i| ds.treated[i]).collect();
            let c_rows: Vec<usize> = spec.rows.iter().copied().filter(|&i| !ds.treated[i]).collect();
            if t_rows.is_empty() || c_rows.is_empty() {
                return Err(Error::contract("batch needs both treated and control subjects"));
            }
            let t_probs = if factors.len() == 1 {
                let f: Vec<Var> = t_rows
                    .iter()
                    .map(|&i| Ok(prior.forward_tape(g, &params[ranges[0].clone()], ds.row(i))?[0]))
                    .collect::<Result<_>>()?;
                normalize(g, &f)
            } else {
                let view = ds.cohort_view(&t_rows, |r| (r - mu) / sd);
                factors.posterior_tape(g, params, &view)?
            };
            let f: Vec<Var> = c_rows
                .iter()
                .map(|&i| Ok(prior.forward_tape(g, &params[ranges[0].clone()], ds.row(i))?[0]))
                .collect::<Result<_>>()?;
            let c_probs = normalize(g, &f);
            let (mut ti, mut ci) = (0, 0);
            Ok(treated
                .iter()
                .map(|&t| {
                    if t {
                        ti += 1;
                        t_probs[ti - 1]
                    } else {
                        ci += 1;
                        c_probs[ci - 1]
                    }
                })
                .collect())
        }
    }
}

/// Records the regularized ratio objective of `scorer` over `spec.rows`.
/// `params` must be the scorer's flat parameters as tape leaves.
pub fn record_objective(
    g: &mut Graph,
    params: &[Var],
    scorer: Scorer<'_>,
    spec: &ObjectiveSpec<'_>,
) -> Result<ObjectiveNodes> {
    if params.len() != scorer.param_count() {
        return Err(Error::contract("parameter vars do not match the scorer"));
    }
    let ds = spec.dataset;
    let treated: Vec<bool> = spec.rows.iter().map(|&i| ds.treated[i]).collect();
    let mut probs = cohort_probs(g, params, scorer, spec)?;
    let mut barrier_skipped = None;
    if let Some((target, temperature)) = spec.barrier {
        let mut cuts = [None, None];
        for (slot, cohort) in [(0, true), (1, false)] {
            let idx: Vec<usize> = (0..probs.len()).filter(|&k| treated[k] == cohort).collect();
            let vars: Vec<Var> = idx.iter().map(|&k| probs[k]).collect();
            let values = g.values_of(&vars);
            let cut = match target {
                BarrierTarget::Percentage(p) => percentage_cut(&values, p),
                BarrierTarget::BudgetShare(share) => {
                    let costs: Vec<f64> = idx.iter().map(|&k| ds.cost[spec.rows[k]].max(0.0)).collect();
                    let total: f64 = costs.iter().sum();
                    if total <= 0.0 || share >= 1.0 {
                        Ok(Cut::AllSelected { top: 0, bottom: 0 })
                    } else {
                        budget_cut(&values, &costs, share * total)
                    }
                }
            };
            match cut {
                Ok(Cut::AllSelected { .. }) => {}
                Ok(c) => cuts[slot] = Some(c.tape(g, &vars)),
                Err(e) => {
                    barrier_skipped = Some(format!("barrier skipped: {e}"));
                    break;
                }
            }
        }
        if barrier_skipped.is_none() {
            probs = barrier_apply_tape(g, &probs, &treated, cuts[0], cuts[1], temperature);
        }
    }
    let gain: Vec<f64> = spec.rows.iter().map(|&i| ds.gain[i]).collect();
    let cost: Vec<f64> = spec.rows.iter().map(|&i| ds.cost[i]).collect();
    let w = spec.weights.map(|w| w.subset(spec.rows));
    let cr = tau_coefficients(&gain, &treated, w.as_ref())?;
    let cc = tau_coefficients(&cost, &treated, w.as_ref())?;
    let tau_r = linear_tau_tape(g, &probs, &cr);
    let tau_c = linear_tau_tape(g, &probs, &cc);
    let objective = ratio_objective_tape(g, tau_r, tau_c, spec.regularization, params, spec.direction);
    Ok(ObjectiveNodes {
        objective,
        tau_r,
        tau_c,
        probs,
        treated,
        barrier_skipped,
    })
}

/// Analytic versus central-difference gradient of one objective.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub parameters: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub objective: f64,
}

impl GradcheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Compares the tape gradient of `scorer`'s objective at its current
/// parameters with central differences of step `h`.
pub fn gradcheck(scorer: Scorer<'_>, spec: &ObjectiveSpec<'_>, h: f64) -> Result<GradcheckReport> {
    let params = scorer.params();
    let n = params.len();
    let mut g = Graph::new();
    let vars = g.leaves(&params);
    let nodes = record_objective(&mut g, &vars, scorer, spec)?;
    let objective = g.value(nodes.objective);
    let analytic = g.backward(nodes.objective)?[..n].to_vec();
    let mut failure = None;
    let numeric = finite_diff_grad(
        |p| {
            let mut g = Graph::new();
            let vars = g.leaves(p);
            match record_objective(&mut g, &vars, scorer, spec) {
                Ok(nodes) => g.value(nodes.objective),
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &params,
        h,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let max_absolute_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(GradcheckReport {
        parameters: n,
        max_relative_error: max_relative_error(&analytic, &numeric, 1e-6),
        max_absolute_error,
        objective,
    })
}
