//! Differentiable effect estimators and training objectives.
//!
//! Every estimator exists twice: a plain version over `f64` and a tape
//! version over [`Var`]s. The tape versions reduce each estimator to a
//! linear combination of effectiveness probabilities, so they share one
//! code path; the plain versions follow the textbook formulas directly and
//! serve as the cross-check.

mod barrier;

pub use barrier::{
    barrier_apply, barrier_apply_tape, budget_cut, percentage_cut, threshold_for_budget,
    threshold_for_percentage, BarrierConfig, CohortThresholds, Constraint, Cut,
};

use crate::diffcore::{softplus, Graph, Var};
use crate::{Error, Result};

pub const PROPENSITY_CLIP: (f64, f64) = (0.01, 0.99);

/// Per-cohort normalized selection probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectivenessDistribution {
    pub probs: Vec<f64>,
    pub treated: Vec<bool>,
}

impl EffectivenessDistribution {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Sum of probabilities over the treated (`true`) or control cohort.
    pub fn cohort_mass(&self, treated: bool) -> f64 {
        self.probs
            .iter()
            .zip(&self.treated)
            .filter(|(_, &t)| t == treated)
            .map(|(p, _)| p)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Gain,
    Cost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    Uniform,
    Propensity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauEstimate {
    pub value: f64,
    pub outcome: Outcome,
    pub weighting: Weighting,
}

/// Per-subject propensities `e(x_i)` and the overall treated share `ê`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityWeights {
    pub per_subject: Vec<f64>,
    pub overall: f64,
}

impl PropensityWeights {
    /// Clips every `e(x_i)` into [`PROPENSITY_CLIP`].
    pub fn new(raw: Vec<f64>, overall: f64) -> Result<Self> {
        if !(overall > 0.0 && overall < 1.0) {
            return Err(Error::contract(format!("overall propensity {overall} outside (0,1)")));
        }
        let (lo, hi) = PROPENSITY_CLIP;
        let per_subject = raw.into_iter().map(|e| e.clamp(lo, hi)).collect();
        Ok(Self { per_subject, overall })
    }

    /// `e(x) ≡ ê` for every subject.
    pub fn constant(n: usize, overall: f64) -> Result<Self> {
        Self::new(vec![overall; n], overall)
    }

    /// Overall share from treatment labels.
    pub fn treated_share(treated: &[bool]) -> f64 {
        treated.iter().filter(|&&t| t).count() as f64 / treated.len() as f64
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            per_subject: rows.iter().map(|&i| self.per_subject[i]).collect(),
            overall: self.overall,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.per_subject.len() != n {
            return Err(Error::contract(format!(
                "{} propensities for {n} subjects",
                self.per_subject.len()
            )));
        }
        let (lo, hi) = PROPENSITY_CLIP;
        if let Some(e) = self.per_subject.iter().find(|e| !(**e >= lo && **e <= hi)) {
            return Err(Error::contract(format!("propensity {e} outside clip range [{lo}, {hi}]")));
        }
        if !(self.overall > 0.0 && self.overall < 1.0) {
            return Err(Error::contract("overall propensity outside (0,1)"));
        }
        Ok(())
    }
}

fn check_cohorts(treated: &[bool]) -> Result<()> {
    if !treated.iter().any(|&t| t) {
        return Err(Error::contract("treated cohort is empty"));
    }
    if !treated.iter().any(|&t| !t) {
        return Err(Error::contract("control cohort is empty"));
    }
    Ok(())
}

/// Softmax of `scores` taken separately within the treated and control
/// cohorts.
pub fn cohort_softmax(scores: &[f64], treated: &[bool]) -> Result<EffectivenessDistribution> {
    if scores.len() != treated.len() {
        return Err(Error::contract("scores and cohort labels differ in length"));
    }
    check_cohorts(treated)?;
    let mut probs = vec![0.0; scores.len()];
    for cohort in [true, false] {
        let idx: Vec<usize> = (0..scores.len()).filter(|&i| treated[i] == cohort).collect();
        let m = idx.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = idx.iter().map(|&i| (scores[i] - m).exp()).sum();
        for &i in &idx {
            probs[i] = (scores[i] - m).exp() / z;
        }
    }
    Ok(EffectivenessDistribution {
        probs,
        treated: treated.to_vec(),
    })
}

/// Tape form of [`cohort_softmax`].
pub fn cohort_softmax_tape(g: &mut Graph, scores: &[Var], treated: &[bool]) -> Result<Vec<Var>> {
    if scores.len() != treated.len() {
        return Err(Error::contract("scores and cohort labels differ in length"));
    }
    check_cohorts(treated)?;
    let mut out = scores.to_vec();
    for cohort in [true, false] {
        let idx: Vec<usize> = (0..scores.len()).filter(|&i| treated[i] == cohort).collect();
        let vars: Vec<Var> = idx.iter().map(|&i| scores[i]).collect();
        for (k, p) in softmax_tape(g, &vars).into_iter().enumerate() {
            out[idx[k]] = p;
        }
    }
    Ok(out)
}

/// Softmax of one group of vars, shifted by the current maximum value.
pub fn softmax_tape(g: &mut Graph, scores: &[Var]) -> Vec<Var> {
    let m = g
        .values_of(scores)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let shift = g.leaf(-m);
    let exps: Vec<Var> = scores
        .iter()
        .map(|&s| {
            let z = g.add(s, shift);
            g.exp(z)
        })
        .collect();
    let z = g.sum(&exps);
    exps.into_iter().map(|e| g.div(e, z)).collect()
}

fn check_lengths(p: &EffectivenessDistribution, y: &[f64]) -> Result<()> {
    if p.probs.len() != y.len() || p.treated.len() != y.len() {
        return Err(Error::contract("distribution and outcomes differ in length"));
    }
    Ok(())
}

/// `τ = Σ_{T=1} p_i Y_i − Σ_{T=0} p_i Y_i`.
pub fn tau_hat(p: &EffectivenessDistribution, y: &[f64], outcome: Outcome) -> Result<TauEstimate> {
    check_lengths(p, y)?;
    let mut treated = 0.0;
    let mut control = 0.0;
    for i in 0..y.len() {
        if p.treated[i] {
            treated += p.probs[i] * y[i];
        } else {
            control += p.probs[i] * y[i];
        }
    }
    Ok(TauEstimate {
        value: treated - control,
        outcome,
        weighting: Weighting::Uniform,
    })
}

/// `τ* = ê Σ_{T=1} Y_i p_i / e(x_i) − (1 − ê) Σ_{T=0} Y_i p_i / (1 − e(x_i))`.
pub fn propensity_weighted_tau(
    p: &EffectivenessDistribution,
    y: &[f64],
    w: &PropensityWeights,
    outcome: Outcome,
) -> Result<TauEstimate> {
    check_lengths(p, y)?;
    w.validate(y.len())?;
    let e_hat = w.overall;
    let mut treated = 0.0;
    let mut control = 0.0;
    for i in 0..y.len() {
        let e = w.per_subject[i];
        if p.treated[i] {
            treated += y[i] * p.probs[i] / e;
        } else {
            control += y[i] * p.probs[i] / (1.0 - e);
        }
    }
    Ok(TauEstimate {
        value: e_hat * treated - (1.0 - e_hat) * control,
        outcome,
        weighting: Weighting::Propensity,
    })
}

/// Coefficients `c_i` with `τ = Σ c_i p_i` for either estimator.
pub fn tau_coefficients(
    y: &[f64],
    treated: &[bool],
    weights: Option<&PropensityWeights>,
) -> Result<Vec<f64>> {
    if y.len() != treated.len() {
        return Err(Error::contract("outcomes and cohort labels differ in length"));
    }
    match weights {
        None => Ok(y
            .iter()
            .zip(treated)
            .map(|(&v, &t)| if t { v } else { -v })
            .collect()),
        Some(w) => {
            w.validate(y.len())?;
            let e_hat = w.overall;
            Ok((0..y.len())
                .map(|i| {
                    let e = w.per_subject[i];
                    if treated[i] {
                        e_hat * y[i] / e
                    } else {
                        -(1.0 - e_hat) * y[i] / (1.0 - e)
                    }
                })
                .collect())
        }
    }
}

/// `Σ c_i p_i` on the tape.
pub fn linear_tau_tape(g: &mut Graph, probs: &[Var], coefficients: &[f64]) -> Var {
    let terms: Vec<Var> = probs
        .iter()
        .zip(coefficients)
        .map(|(&p, &c)| g.scale(p, c))
        .collect();
    g.sum(&terms)
}

/// Which way the value/cost trade-off is framed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Direction {
    /// Maximize `σ_r(τ^r) / σ_r(τ^c)`.
    #[default]
    ValueOverCost,
    /// Minimize `σ_r(τ^c) / σ_r(τ^r)`; reported negated so that larger is
    /// always better.
    CostOverValue,
}

impl Direction {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "value-over-cost" => Some(Direction::ValueOverCost),
            "cost-over-value" => Some(Direction::CostOverValue),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::ValueOverCost => "value-over-cost",
            Direction::CostOverValue => "cost-over-value",
        }
    }
}

/// Softplus-rectified value/cost ratio minus an L2 penalty. Larger is
/// better under either [`Direction`].
pub fn ratio_objective(tau_r: f64, tau_c: f64, reg: f64, theta_norm_sq: f64, direction: Direction) -> f64 {
    let ratio = match direction {
        Direction::ValueOverCost => softplus(tau_r) / softplus(tau_c),
        Direction::CostOverValue => -(softplus(tau_c) / softplus(tau_r)),
    };
    ratio - reg * theta_norm_sq
}

/// Tape form of [`ratio_objective`]; the penalty is taken over `params`.
pub fn ratio_objective_tape(
    g: &mut Graph,
    tau_r: Var,
    tau_c: Var,
    reg: f64,
    params: &[Var],
    direction: Direction,
) -> Var {
    let sr = g.softplus(tau_r);
    let sc = g.softplus(tau_c);
    let ratio = match direction {
        Direction::ValueOverCost => g.div(sr, sc),
        Direction::CostOverValue => {
            let q = g.div(sc, sr);
            g.neg(q)
        }
    };
    if reg == 0.0 || params.is_empty() {
        return ratio;
    }
    let squares: Vec<Var> = params.iter().map(|&p| g.mul(p, p)).collect();
    let norm = g.sum(&squares);
    let penalty = g.scale(norm, reg);
    g.sub(ratio, penalty)
}
