//! The neural-augmented naive Bayes layer (NANBL) and its recursive
//! stacking over a treatment-policy factor set.
//!
//! Every quantity has a plain `f64` form for scoring and a tape form that
//! records onto a [`Graph`] for training. Tests keep the two in lockstep.

use std::ops::Range;

use crate::diffcore::{sigmoid, Graph, Var};
use crate::{Error, Result};

use super::mlp::{Head, MlpModel};

/// `σ(u)(1 − σ(u))`: the sigmoid derivative, a bell centred on zero with
/// peak value 1/4.
pub fn bell(u: f64) -> f64 {
    sigmoid(u) * sigmoid(-u)
}

pub fn bell_tape(g: &mut Graph, u: Var) -> Var {
    let s = g.sigmoid(u);
    let nu = g.neg(u);
    let t = g.sigmoid(nu);
    g.mul(s, t)
}

fn require_head(model: &MlpModel, head: Head, role: &str) -> Result<()> {
    if model.head() != head {
        return Err(Error::contract(format!(
            "{role} network must have a {} head, found {}",
            head.as_str(),
            model.head().as_str()
        )));
    }
    Ok(())
}

/// `p(I_x | x) = f(x)` for a sigmoid-headed prior network.
pub fn prior_prob(f: &MlpModel, x: &[f64]) -> Result<f64> {
    require_head(f, Head::Sigmoid, "prior")?;
    f.predict(x)
}

/// `p(ρ_c | x) = bell(ρ_c − ĝ(x))` for a linear-headed centre network.
pub fn intensity_likelihood(g_hat: &MlpModel, x: &[f64], intensity: f64) -> Result<f64> {
    require_head(g_hat, Head::Linear, "intensity")?;
    Ok(bell(intensity - g_hat.predict(x)?))
}

/// Softmax probability of the observed class under a class-logit network.
pub fn assignment_likelihood(f_ta: &MlpModel, x: &[f64], class: usize) -> Result<f64> {
    require_head(f_ta, Head::ClassLogits, "assignment")?;
    let k = f_ta.output_dim();
    if class >= k {
        return Err(Error::contract(format!(
            "assignment class {class} out of range for {k} classes"
        )));
    }
    let logits = f_ta.forward_raw(x)?;
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    Ok((logits[class] - m).exp() / z)
}

/// `p_i = l_i f_i / Σ_j l_j f_j`.
pub fn nanbl_posterior(prior: &[f64], likelihood: &[f64]) -> Result<Vec<f64>> {
    if prior.is_empty() || prior.len() != likelihood.len() {
        return Err(Error::contract(format!(
            "nanbl_posterior: prior of length {} vs likelihood of length {}",
            prior.len(),
            likelihood.len()
        )));
    }
    if prior.iter().chain(likelihood).any(|v| !(*v > 0.0)) {
        return Err(Error::contract("nanbl_posterior inputs must be strictly positive"));
    }
    let joint: Vec<f64> = prior.iter().zip(likelihood).map(|(f, l)| f * l).collect();
    Ok(normalize(&joint))
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let z: f64 = v.iter().sum();
    v.iter().map(|x| x / z).collect()
}

fn normalize_tape(g: &mut Graph, v: &[Var]) -> Vec<Var> {
    let z = g.sum(v);
    v.iter().map(|&x| g.div(x, z)).collect()
}

/// One factor of a treatment policy together with its forward network.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyFactor {
    /// `f(x)`: probability that the subject is selected.
    Prior(MlpModel),
    /// `ĝ(x)`: predicted centre of the observed continuous intensity.
    ContinuousIntensity(MlpModel),
    /// `f_{t_a}(x)`: logits over discrete assignment classes.
    DiscreteAssignment(MlpModel),
}

impl PolicyFactor {
    pub fn model(&self) -> &MlpModel {
        match self {
            PolicyFactor::Prior(m)
            | PolicyFactor::ContinuousIntensity(m)
            | PolicyFactor::DiscreteAssignment(m) => m,
        }
    }

    pub fn model_mut(&mut self) -> &mut MlpModel {
        match self {
            PolicyFactor::Prior(m)
            | PolicyFactor::ContinuousIntensity(m)
            | PolicyFactor::DiscreteAssignment(m) => m,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyFactor::Prior(_) => "prior",
            PolicyFactor::ContinuousIntensity(_) => "intensity",
            PolicyFactor::DiscreteAssignment(_) => "assignment",
        }
    }

    /// Per-subject forward values of this factor over a cohort.
    pub fn forward(&self, cohort: &CohortView) -> Result<Vec<f64>> {
        let n = cohort.len();
        match self {
            PolicyFactor::Prior(f) => (0..n).map(|i| prior_prob(f, &cohort.covariates[i])).collect(),
            PolicyFactor::ContinuousIntensity(gh) => (0..n)
                .map(|i| intensity_likelihood(gh, &cohort.covariates[i], cohort.intensity[i]))
                .collect(),
            PolicyFactor::DiscreteAssignment(fa) => {
                let classes = cohort.assignment_classes()?;
                (0..n)
                    .map(|i| assignment_likelihood(fa, cohort.assignment_input(i), classes[i]))
                    .collect()
            }
        }
    }

    /// Tape form of [`PolicyFactor::forward`].
    pub fn forward_tape(&self, g: &mut Graph, params: &[Var], cohort: &CohortView) -> Result<Vec<Var>> {
        let n = cohort.len();
        let mut out = Vec::with_capacity(n);
        match self {
            PolicyFactor::Prior(f) => {
                require_head(f, Head::Sigmoid, "prior")?;
                for i in 0..n {
                    out.push(f.forward_tape(g, params, &cohort.covariates[i])?[0]);
                }
            }
            PolicyFactor::ContinuousIntensity(gh) => {
                require_head(gh, Head::Linear, "intensity")?;
                for i in 0..n {
                    let centre = gh.forward_tape(g, params, &cohort.covariates[i])?[0];
                    let rho = g.leaf(cohort.intensity[i]);
                    let u = g.sub(rho, centre);
                    out.push(bell_tape(g, u));
                }
            }
            PolicyFactor::DiscreteAssignment(fa) => {
                require_head(fa, Head::ClassLogits, "assignment")?;
                let classes = cohort.assignment_classes()?;
                let k = fa.output_dim();
                for i in 0..n {
                    if classes[i] >= k {
                        return Err(Error::contract(format!(
                            "assignment class {} out of range for {k} classes",
                            classes[i]
                        )));
                    }
                    let logits = fa.forward_raw_tape(g, params, cohort.assignment_input(i))?;
                    // Shift by the (constant) max logit for stability.
                    let m = g
                        .values_of(&logits)
                        .into_iter()
                        .fold(f64::NEG_INFINITY, f64::max);
                    let shift = g.leaf(-m);
                    let exps: Vec<Var> = logits
                        .iter()
                        .map(|&l| {
                            let s = g.add(l, shift);
                            g.exp(s)
                        })
                        .collect();
                    let z = g.sum(&exps);
                    out.push(g.div(exps[classes[i]], z));
                }
            }
        }
        Ok(out)
    }
}

/// The ordered factors `Π_x = (prior, ρ_c, t_a, …)` of a treatment policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyFactorSet {
    factors: Vec<PolicyFactor>,
}

impl PolicyFactorSet {
    /// Exactly one prior, first; every factor must accept its covariates.
    pub fn new(factors: Vec<PolicyFactor>) -> Result<Self> {
        match factors.first() {
            None => return Err(Error::contract("policy factor set is empty")),
            Some(PolicyFactor::Prior(_)) => {}
            Some(other) => {
                return Err(Error::contract(format!(
                    "first policy factor must be the prior, found {}",
                    other.name()
                )))
            }
        }
        if factors[1..].iter().any(|f| matches!(f, PolicyFactor::Prior(_))) {
            return Err(Error::contract("policy factor set has more than one prior"));
        }
        let d = factors[0].model().input_dim();
        for f in &factors[1..] {
            if let PolicyFactor::ContinuousIntensity(m) = f {
                if m.input_dim() != d {
                    return Err(Error::contract(format!(
                        "intensity network input {} differs from prior input {d}",
                        m.input_dim()
                    )));
                }
            }
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[PolicyFactor] {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut [PolicyFactor] {
        &mut self.factors
    }

    pub fn prior(&self) -> &MlpModel {
        self.factors[0].model()
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Offsets of each factor's parameters in [`PolicyFactorSet::params`].
    pub fn param_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.factors
            .iter()
            .map(|f| {
                let r = start..start + f.model().params().len();
                start = r.end;
                r
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.factors.iter().map(|f| f.model().params().len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.factors
            .iter()
            .flat_map(|f| f.model().params().iter().copied())
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::contract("factor set parameter count mismatch"));
        }
        let ranges = self.param_ranges();
        for (f, r) in self.factors.iter_mut().zip(ranges) {
            f.model_mut().set_params(&params[r])?;
        }
        Ok(())
    }

    /// Drops every factor after the prior. Test-time scoring uses only the
    /// prior, so this never changes scores.
    pub fn into_prior(self) -> MlpModel {
        match self.factors.into_iter().next() {
            Some(PolicyFactor::Prior(m)) => m,
            _ => unreachable!("constructor guarantees a leading prior"),
        }
    }
}

/// The subjects of one cohort with the inputs each factor consumes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CohortView {
    /// Subject indices into the source dataset.
    pub indices: Vec<usize>,
    pub covariates: Vec<Vec<f64>>,
    /// Input rows for the assignment network. Empty means "use
    /// `covariates`"; otherwise subject and item covariates concatenated.
    pub assignment_covariates: Vec<Vec<f64>>,
    pub intensity: Vec<f64>,
    pub assignment: Option<Vec<usize>>,
}

impl CohortView {
    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    fn assignment_input(&self, i: usize) -> &[f64] {
        if self.assignment_covariates.is_empty() {
            &self.covariates[i]
        } else {
            &self.assignment_covariates[i]
        }
    }

    fn assignment_classes(&self) -> Result<&[usize]> {
        self.assignment
            .as_deref()
            .ok_or_else(|| Error::contract("cohort has no assignment classes"))
    }

    fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::contract("cohort is empty"));
        }
        if self.intensity.len() != self.len() {
            return Err(Error::contract("cohort intensity length mismatch"));
        }
        Ok(())
    }
}

/// Stacked NANBL forward pass.
///
/// A single factor returns its raw forward values. With more factors the
/// last one's likelihood multiplies the recursive result, which is then
/// renormalized over the cohort.
pub fn recursive_forward(factors: &[PolicyFactor], cohort: &CohortView) -> Result<Vec<f64>> {
    cohort.validate()?;
    let (last, rest) = factors
        .split_last()
        .ok_or_else(|| Error::contract("recursive_forward: empty factor set"))?;
    let p = last.forward(cohort)?;
    if rest.is_empty() {
        return Ok(p);
    }
    let l = recursive_forward(rest, cohort)?;
    let d: Vec<f64> = l.iter().zip(&p).map(|(a, b)| a * b).collect();
    Ok(normalize(&d))
}

/// Tape form of [`recursive_forward`]. `params` holds one slice of
/// parameter vars per factor.
pub fn recursive_forward_tape(
    g: &mut Graph,
    factors: &[PolicyFactor],
    params: &[&[Var]],
    cohort: &CohortView,
) -> Result<Vec<Var>> {
    cohort.validate()?;
    if factors.len() != params.len() {
        return Err(Error::contract("one parameter slice per factor required"));
    }
    let (last, rest) = factors
        .split_last()
        .ok_or_else(|| Error::contract("recursive_forward: empty factor set"))?;
    let p = last.forward_tape(g, params[factors.len() - 1], cohort)?;
    if rest.is_empty() {
        return Ok(p);
    }
    let l = recursive_forward_tape(g, rest, &params[..rest.len()], cohort)?;
    let d: Vec<Var> = l.iter().zip(&p).map(|(&a, &b)| g.mul(a, b)).collect();
    Ok(normalize_tape(g, &d))
}

impl PolicyFactorSet {
    pub fn posterior(&self, cohort: &CohortView) -> Result<Vec<f64>> {
        recursive_forward(&self.factors, cohort)
    }

    /// Records the posterior with parameters read from `flat`, laid out as
    /// in [`PolicyFactorSet::params`].
    pub fn posterior_tape(&self, g: &mut Graph, flat: &[Var], cohort: &CohortView) -> Result<Vec<Var>> {
        let ranges = self.param_ranges();
        let slices: Vec<&[Var]> = ranges.into_iter().map(|r| &flat[r]).collect();
        recursive_forward_tape(g, &self.factors, &slices, cohort)
    }
}
