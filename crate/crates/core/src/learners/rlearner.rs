//! Two-stage ridge effect estimation and the Lagrangian-dual budget
//! selector built on it.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::objective::GradcheckReport;
use crate::data::CohortDataset;
use crate::diffcore::{finite_diff_grad, max_relative_error, Graph, Var};
use crate::metrics::{aucc_of, RankedEvalSet};
use crate::objectives::PropensityWeights;
use crate::policy_model::{Head, MlpModel};
use crate::{Error, Result};

/// Linear outcome model `m̂(x)` and effect model `τ̂(x)`, each stored as
/// `d` weights followed by an intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeTau {
    pub outcome_coef: Vec<f64>,
    pub effect_coef: Vec<f64>,
    pub penalty: f64,
}

fn linear(coef: &[f64], x: &[f64]) -> f64 {
    let d = coef.len() - 1;
    coef[..d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + coef[d]
}

impl RidgeTau {
    pub fn dim(&self) -> usize {
        self.effect_coef.len() - 1
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::contract(format!("effect model expects {} covariates, got {}", self.dim(), x.len())));
        }
        Ok(linear(&self.effect_coef, x))
    }

    pub fn predict_outcome(&self, x: &[f64]) -> f64 {
        linear(&self.outcome_coef, x)
    }

    pub fn outcome_model(&self) -> MlpModel {
        MlpModel::from_params(vec![self.dim(), 1], Head::Linear, self.outcome_coef.clone())
            .expect("coefficient count matches width")
    }

    pub fn effect_model(&self) -> MlpModel {
        MlpModel::from_params(vec![self.dim(), 1], Head::Linear, self.effect_coef.clone())
            .expect("coefficient count matches width")
    }

    pub fn from_models(outcome: &MlpModel, effect: &MlpModel, penalty: f64) -> Result<Self> {
        for m in [outcome, effect] {
            if m.widths().len() != 2 || m.output_dim() != 1 || m.head() != Head::Linear {
                return Err(Error::contract("effect models must be single-layer linear"));
            }
        }
        if outcome.input_dim() != effect.input_dim() {
            return Err(Error::contract("outcome and effect models differ in width"));
        }
        Ok(RidgeTau {
            outcome_coef: outcome.params().to_vec(),
            effect_coef: effect.params().to_vec(),
            penalty,
        })
    }
}

/// Solves `(AᵀA + penalty·I) β = Aᵀ y` where row `i` of `A` is
/// `scale_i · [x_i, 1]`.
fn ridge(x: &[f64], dim: usize, scale: &[f64], y: &[f64], penalty: f64) -> Result<Vec<f64>> {
    let k = dim + 1;
    let mut ata = DMatrix::<f64>::zeros(k, k);
    let mut aty = DVector::<f64>::zeros(k);
    let mut row = vec![0.0; k];
    for i in 0..y.len() {
        for j in 0..dim {
            row[j] = scale[i] * x[i * dim + j];
        }
        row[dim] = scale[i];
        for a in 0..k {
            aty[a] += row[a] * y[i];
            for b in a..k {
                ata[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            ata[(a, b)] = ata[(b, a)];
        }
        ata[(a, a)] += penalty;
    }
    let chol = ata
        .cholesky()
        .ok_or_else(|| Error::contract("ridge normal matrix is not positive definite"))?;
    let beta = chol.solve(&aty);
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::contract("ridge solution is not finite"));
    }
    Ok(beta.iter().copied().collect())
}

/// Quasi-oracle two-stage ridge: `m̂` on all rows, then `τ̂` from
/// `Y − m̂(x) ≈ (T − e(x)) τ(x)`.
pub fn fit_rlearner_tau(
    x: &[f64],
    dim: usize,
    t: &[bool],
    y: &[f64],
    e: &PropensityWeights,
    penalty: f64,
) -> Result<RidgeTau> {
    let n = y.len();
    if t.len() != n || x.len() != n * dim || e.per_subject.len() != n {
        return Err(Error::contract("R-learner inputs differ in length"));
    }
    if n <= dim {
        return Err(Error::contract(format!("R-learner needs more rows ({n}) than covariates ({dim})")));
    }
    if !(penalty > 0.0) {
        return Err(Error::contract("ridge penalty must be positive"));
    }
    let outcome_coef = ridge(x, dim, &vec![1.0; n], y, penalty)?;
    let resid: Vec<f64> = (0..n)
        .map(|i| y[i] - linear(&outcome_coef, &x[i * dim..(i + 1) * dim]))
        .collect();
    let scale: Vec<f64> = (0..n)
        .map(|i| f64::from(u8::from(t[i])) - e.per_subject[i])
        .collect();
    let effect_coef = ridge(x, dim, &scale, &resid, penalty)?;
    Ok(RidgeTau {
        outcome_coef,
        effect_coef,
        penalty,
    })
}

/// R-learner on the combined outcome `Y^E = Y^r − λ Y^c`.
#[allow(clippy::too_many_arguments)]
pub fn duality_combined_model(
    x: &[f64],
    dim: usize,
    t: &[bool],
    y_gain: &[f64],
    y_cost: &[f64],
    lambda: f64,
    e: &PropensityWeights,
    penalty: f64,
) -> Result<RidgeTau> {
    if !(lambda >= 0.0) {
        return Err(Error::contract(format!("multiplier {lambda} must be non-negative")));
    }
    if y_gain.len() != y_cost.len() {
        return Err(Error::contract("gain and cost outcomes differ in length"));
    }
    let ye: Vec<f64> = y_gain.iter().zip(y_cost).map(|(r, c)| r - lambda * c).collect();
    fit_rlearner_tau(x, dim, t, &ye, e, penalty)
}

/// Direction of the multiplier update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaUpdate {
    /// `λ ← max(0, λ + α(Σ τ^c z − B))`: rises while over budget.
    #[default]
    DualAscent,
    /// `λ ← max(0, λ + α(B − Σ τ^c z))`.
    Reversed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualConfig {
    pub alpha: f64,
    pub iterations: usize,
    pub lambda0: f64,
    pub update: LambdaUpdate,
}

impl Default for DualConfig {
    fn default() -> Self {
        DualConfig {
            alpha: 0.1,
            iterations: 1000,
            lambda0: 0.0,
            update: LambdaUpdate::DualAscent,
        }
    }
}

/// One inner step: multiplier used, and the resulting selection's totals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualIterate {
    pub lambda: f64,
    pub cost: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    /// Multiplier that produced `z`.
    pub lambda: f64,
    pub z: Vec<bool>,
    pub alpha: f64,
    pub budget: f64,
    pub cost: f64,
    pub value: f64,
    pub log: Vec<DualIterate>,
    /// False when the last iterate exceeded the budget and the best
    /// feasible iterate was returned instead.
    pub converged: bool,
}

/// Alternates `z_i = [τ^r_i − λ τ^c_i ≥ 0]` with a projected multiplier
/// step, returning the best feasible selection seen.
pub fn duality_solve(tau_r: &[f64], tau_c: &[f64], budget: f64, config: &DualConfig) -> Result<DualState> {
    if tau_r.len() != tau_c.len() {
        return Err(Error::contract("effect vectors differ in length"));
    }
    if !(budget > 0.0) || !(config.alpha > 0.0) {
        return Err(Error::contract("budget and dual learning rate must be positive"));
    }
    if !(config.lambda0 >= 0.0) {
        return Err(Error::contract("initial multiplier must be non-negative"));
    }
    let select = |lambda: f64| -> Vec<bool> {
        tau_r.iter().zip(tau_c).map(|(r, c)| r - lambda * c >= 0.0).collect()
    };
    let totals = |z: &[bool]| -> (f64, f64) {
        z.iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .fold((0.0, 0.0), |(c, v), (i, _)| (c + tau_c[i], v + tau_r[i]))
    };
    let mut lambda = config.lambda0;
    let mut log = Vec::with_capacity(config.iterations);
    let empty = vec![false; tau_r.len()];
    let mut best: (Vec<bool>, f64, f64, f64) = (empty, lambda, 0.0, 0.0);
    let mut last_feasible = false;
    for _ in 0..config.iterations.max(1) {
        let z = select(lambda);
        let (cost, value) = totals(&z);
        log.push(DualIterate { lambda, cost, value });
        last_feasible = cost <= budget;
        if last_feasible && value > best.3 {
            best = (z, lambda, cost, value);
        }
        let step = match config.update {
            LambdaUpdate::DualAscent => cost - budget,
            LambdaUpdate::Reversed => budget - cost,
        };
        lambda = (lambda + config.alpha * step).max(0.0);
    }
    let (z, lambda, cost, value) = best;
    Ok(DualState {
        lambda,
        z,
        alpha: config.alpha,
        budget,
        cost,
        value,
        log,
        converged: last_feasible,
    })
}

/// Multipliers searched by [`train_duality`] unless a grid is given.
pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.001, 0.005, 0.01, 0.05, 0.1];

/// Ridge penalty used by the CLI and the acceptance runs.
pub const DEFAULT_RIDGE_PENALTY: f64 = 1.0;

/// A validation-selected combined-outcome R-learner.
#[derive(Debug, Clone, PartialEq)]
pub struct DualityModel {
    pub lambda: f64,
    pub tau: RidgeTau,
    /// `(λ, validation AUCC)` for every grid point.
    pub grid: Vec<(f64, f64)>,
}

fn gather(ds: &CohortDataset, rows: &[usize]) -> (Vec<f64>, Vec<bool>, Vec<f64>, Vec<f64>) {
    let x = rows.iter().flat_map(|&i| ds.row(i).iter().copied()).collect();
    let t = rows.iter().map(|&i| ds.treated[i]).collect();
    let yr = rows.iter().map(|&i| ds.gain[i]).collect();
    let yc = rows.iter().map(|&i| ds.cost[i]).collect();
    (x, t, yr, yc)
}

/// Fits the combined model for each `λ` in `grid` on `train`, with the
/// treated share as a constant propensity, and keeps the one with the best
/// validation AUCC (first on ties).
pub fn train_duality(
    ds: &CohortDataset,
    train: &[usize],
    validation: &[usize],
    grid: &[f64],
    penalty: f64,
) -> Result<DualityModel> {
    if grid.is_empty() {
        return Err(Error::contract("lambda grid is empty"));
    }
    let (x, t, yr, yc) = gather(ds, train);
    let e = PropensityWeights::constant(t.len(), PropensityWeights::treated_share(&t))?;
    let mut best: Option<(f64, RidgeTau, f64)> = None;
    let mut scores = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let tau = duality_combined_model(&x, ds.dim, &t, &yr, &yc, lambda, &e, penalty)?;
        let val_scores: Vec<f64> = validation
            .iter()
            .map(|&i| tau.predict(ds.row(i)))
            .collect::<Result<_>>()?;
        let eval = RankedEvalSet::new(
            val_scores,
            validation.iter().map(|&i| ds.treated[i]).collect(),
            validation.iter().map(|&i| ds.gain[i]).collect(),
            validation.iter().map(|&i| ds.cost[i]).collect(),
        )?;
        let a = aucc_of(&eval)?.value;
        scores.push((lambda, a));
        if best.as_ref().is_none_or(|b| a > b.2) {
            best = Some((lambda, tau, a));
        }
    }
    let (lambda, tau, _) = best.unwrap();
    Ok(DualityModel {
        lambda,
        tau,
        grid: scores,
    })
}

/// Gradient check of the second-stage ridge loss
/// `Σ (r_i − (T_i − ê)[x_i, 1]ᵀβ)² + penalty‖β‖²` of the combined-outcome
/// R-learner on `rows`, at a random `β` drawn from `seed`.
pub fn duality_gradcheck(
    ds: &CohortDataset,
    rows: &[usize],
    lambda: f64,
    penalty: f64,
    seed: u64,
    h: f64,
) -> Result<GradcheckReport> {
    let (x, t, yr, yc) = gather(ds, rows);
    let n = rows.len();
    let dim = ds.dim;
    if penalty <= 0.0 && n <= dim {
        return Err(Error::contract(format!("an unpenalized check needs more rows ({n}) than covariates ({dim})")));
    }
    let share = PropensityWeights::treated_share(&t);
    let y: Vec<f64> = yr.iter().zip(&yc).map(|(r, c)| r - lambda * c).collect();
    let outcome = ridge(&x, dim, &vec![1.0; n], &y, penalty)?;
    let resid: Vec<f64> = (0..n)
        .map(|i| y[i] - linear(&outcome, &x[i * dim..(i + 1) * dim]))
        .collect();
    let scale: Vec<f64> = t.iter().map(|&v| f64::from(u8::from(v)) - share).collect();
    let record = |g: &mut Graph, beta: &[Var]| -> Var {
        let mut terms = Vec::with_capacity(n + 1);
        for i in 0..n {
            let row = &x[i * dim..(i + 1) * dim];
            let parts: Vec<Var> = (0..dim).map(|j| g.scale(beta[j], scale[i] * row[j])).collect();
            let mut fit = g.sum(&parts);
            let b = g.scale(beta[dim], scale[i]);
            fit = g.add(fit, b);
            let neg = g.neg(fit);
            let target = g.leaf(resid[i]);
            let err = g.add(target, neg);
            terms.push(g.mul(err, err));
        }
        let squares: Vec<Var> = beta.iter().map(|&b| g.mul(b, b)).collect();
        let norm = g.sum(&squares);
        terms.push(g.scale(norm, penalty));
        g.sum(&terms)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point: Vec<f64> = (0..=dim).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut g = Graph::new();
    let beta = g.leaves(&point);
    let out = record(&mut g, &beta);
    let objective = g.value(out);
    let analytic = g.backward(out)?[..=dim].to_vec();
    let numeric = finite_diff_grad(
        |p| {
            let mut g = Graph::new();
            let beta = g.leaves(p);
            let out = record(&mut g, &beta);
            g.value(out)
        },
        &point,
        h,
    );
    let max_absolute_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(GradcheckReport {
        parameters: dim + 1,
        max_relative_error: max_relative_error(&analytic, &numeric, 1e-6),
        max_absolute_error,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn design(n: usize, d: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let t = (0..n).map(|_| rng.random::<bool>()).collect();
        (x, t)
    }

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn planted_effect_is_recovered() {
        let (n, d) = (10_000, 5);
        let (x, t) = design(n, d, 1);
        let beta = [1.0, -0.5, 0.25, 2.0, -1.5];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let eff: f64 = (0..d).map(|j| beta[j] * x[i * d + j]).sum();
                eff * f64::from(u8::from(t[i])) + 0.1 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let e = PropensityWeights::constant(n, 0.5).unwrap();
        let fit = fit_rlearner_tau(&x, d, &t, &y, &e, 1e-3).unwrap();
        assert!(rel_l2(&fit.effect_coef[..d], &beta) < 0.10);
    }

    #[test]
    fn exact_interpolation_limit() {
        // every covariate row appears once treated and once untreated
        let (m, d) = (200, 3);
        let (base, _) = design(m, d, 3);
        let x: Vec<f64> = base.iter().chain(&base).copied().collect();
        let t: Vec<bool> = (0..2 * m).map(|i| i < m).collect();
        let beta = [0.7, -1.2, 0.4];
        let y: Vec<f64> = (0..2 * m)
            .map(|i| f64::from(u8::from(t[i])) * (0..d).map(|j| beta[j] * x[i * d + j]).sum::<f64>())
            .collect();
        let e = PropensityWeights::constant(2 * m, 0.5).unwrap();
        let fit = fit_rlearner_tau(&x, d, &t, &y, &e, 1e-8).unwrap();
        for j in 0..d {
            assert!((fit.effect_coef[j] - beta[j]).abs() < 1e-6);
        }
        assert!(fit.effect_coef[d].abs() < 1e-6);
    }

    #[test]
    fn null_effect_stays_within_noise_floor() {
        let (n, d, sigma) = (4000, 4, 1.0);
        let (x, t) = design(n, d, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<f64> = (0..n)
            .map(|i| x[i * d] + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let e = PropensityWeights::constant(n, 0.5).unwrap();
        let fit = fit_rlearner_tau(&x, d, &t, &y, &e, 1e-6).unwrap();
        // standard error of τ̂(x_i) from the stage-two design
        let k = d + 1;
        let mut zz = DMatrix::<f64>::zeros(k, k);
        for i in 0..n {
            let s = f64::from(u8::from(t[i])) - 0.5;
            let mut z: Vec<f64> = x[i * d..(i + 1) * d].iter().map(|v| v * s).collect();
            z.push(s);
            for a in 0..k {
                for b in 0..k {
                    zz[(a, b)] += z[a] * z[b];
                }
            }
        }
        let cov = zz.try_inverse().unwrap() * (sigma * sigma);
        let mut floor = 0.0;
        let mut mean_abs = 0.0;
        for i in 0..n {
            let mut xi: Vec<f64> = x[i * d..(i + 1) * d].to_vec();
            xi.push(1.0);
            let v = DVector::from_vec(xi);
            floor += (v.transpose() * &cov * &v)[(0, 0)].sqrt();
            mean_abs += fit.predict(&x[i * d..(i + 1) * d]).unwrap().abs();
        }
        assert!(mean_abs / (n as f64) < 3.0 * floor / n as f64);
    }

    #[test]
    fn combined_model_is_linear_in_lambda() {
        let (n, d) = (500, 3);
        let (x, t) = design(n, d, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let yr: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let yc: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let e = PropensityWeights::constant(n, 0.5).unwrap();
        let r = fit_rlearner_tau(&x, d, &t, &yr, &e, 0.1).unwrap();
        let c = fit_rlearner_tau(&x, d, &t, &yc, &e, 0.1).unwrap();
        let lambda = 0.05;
        let comb = duality_combined_model(&x, d, &t, &yr, &yc, lambda, &e, 0.1).unwrap();
        for j in 0..=d {
            assert!((comb.effect_coef[j] - (r.effect_coef[j] - lambda * c.effect_coef[j])).abs() < 1e-8);
        }
        let zero = duality_combined_model(&x, d, &t, &yr, &yc, 0.0, &e, 0.1).unwrap();
        assert_eq!(zero, r);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (x, t) = design(3, 4, 8);
        let e = PropensityWeights::constant(3, 0.5).unwrap();
        assert!(fit_rlearner_tau(&x, 4, &t, &[0.0; 3], &e, 1.0).is_err());
        let (x, t) = design(30, 2, 8);
        let e = PropensityWeights::constant(30, 0.5).unwrap();
        assert!(fit_rlearner_tau(&x, 2, &t, &[0.0; 30], &e, 0.0).is_err());
    }

    #[test]
    fn two_item_hand_simulation() {
        let s = duality_solve(&[3.0, 1.0], &[1.0, 1.0], 1.0, &DualConfig::default()).unwrap();
        assert_eq!(s.log[0].cost, 2.0);
        assert_eq!(s.z, vec![true, false]);
        assert_eq!(s.cost, 1.0);
        // λ climbs by α(2 − 1) = 0.1 per step while both are selected
        assert!((s.log[5].lambda - 0.5).abs() < 1e-12);
        assert!(s.converged);
    }

    #[test]
    fn slack_constraint_drives_lambda_to_zero() {
        let s = duality_solve(&[1.0, -2.0, 0.5], &[-1.0, 0.0, -0.5], 1.0, &DualConfig { lambda0: 3.0, ..Default::default() }).unwrap();
        assert_eq!(s.log.last().unwrap().lambda, 0.0);
        assert_eq!(s.z, vec![true, false, true]);
    }

    #[test]
    fn lambda_stays_non_negative_and_rises_when_over_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tr: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 2.0 - 0.5).collect();
        let tc: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        let s = duality_solve(&tr, &tc, 3.0, &DualConfig { alpha: 0.01, iterations: 500, ..Default::default() }).unwrap();
        for w in s.log.windows(2) {
            assert!(w[1].lambda >= 0.0);
            if w[0].cost > 3.0 {
                assert!(w[1].lambda > w[0].lambda);
            }
        }
        assert!(s.cost <= 3.0);
    }

    #[test]
    fn ridge_loss_gradient_matches_finite_differences() {
        let (ds, _) = crate::data::synth_generate(&crate::data::SynthSpec {
            n: 200,
            ..crate::data::SynthSpec::planted(9)
        })
        .unwrap();
        let rows: Vec<usize> = (0..40).collect();
        let r = duality_gradcheck(&ds, &rows, 0.05, 1.0, 3, 1e-5).unwrap();
        assert_eq!(r.parameters, ds.dim + 1);
        assert!(r.passes(1e-4), "{}", r.max_relative_error);
    }
}
