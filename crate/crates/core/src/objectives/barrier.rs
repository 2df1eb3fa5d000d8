//! Sigmoid barrier gating for percentage and budget constraints.
//!
//! A threshold `d*` is placed between two adjacent sorted probabilities of a
//! cohort; every probability is multiplied by `σ(T n (p_i − d*))`, keeping
//! entries above the barrier and suppressing those below, and the cohort is
//! renormalized. Probabilities are compared on the cohort-relative scale
//! `n p_i` (mean one), so the temperature means the same thing whatever the
//! cohort size.

use crate::diffcore::{sigmoid, Graph, Var};
use crate::{Error, Result};

use super::EffectivenessDistribution;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constraint {
    /// Treat a fixed fraction `P ∈ (0,1)` of each cohort.
    Percentage(f64),
    /// Treat greedily by probability while the summed cost stays within `B`.
    Budget(f64),
}

/// Barrier settings with a stepwise annealed temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierConfig {
    pub constraint: Constraint,
    pub temperature: f64,
    pub increment: f64,
    pub period: usize,
}

impl BarrierConfig {
    /// Start at 0.5 and add 0.1 every 10 optimizer steps.
    pub fn percentage(p: f64) -> Result<Self> {
        Self::new(Constraint::Percentage(p), 0.5, 0.1, 10)
    }

    pub fn budget(b: f64) -> Result<Self> {
        Self::new(Constraint::Budget(b), 0.5, 0.1, 10)
    }

    pub fn new(constraint: Constraint, temperature: f64, increment: f64, period: usize) -> Result<Self> {
        match constraint {
            Constraint::Percentage(p) if !(p > 0.0 && p < 1.0) => {
                return Err(Error::contract(format!("percentage {p} outside (0,1)")))
            }
            Constraint::Budget(b) if !(b > 0.0) => {
                return Err(Error::contract(format!("budget {b} must be positive")))
            }
            _ => {}
        }
        if !(temperature > 0.0) || period == 0 || increment < 0.0 {
            return Err(Error::contract("barrier temperature must be positive with a non-zero period"));
        }
        Ok(Self {
            constraint,
            temperature,
            increment,
            period,
        })
    }

    /// Temperature after `step` completed optimizer steps.
    pub fn temperature_at(&self, step: usize) -> f64 {
        self.temperature + self.increment * (step / self.period) as f64
    }
}

/// Where the barrier sits relative to the sorted probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cut {
    /// Midpoint of `p[above]` (selected) and `p[below]` (not selected).
    Between { above: usize, below: usize },
    /// Nothing fits: the barrier sits above the largest entry.
    NoneSelected { top: usize, bottom: usize },
    /// Everything fits: the barrier is inactive.
    AllSelected { top: usize, bottom: usize },
}

impl Cut {
    pub fn value(&self, p: &[f64]) -> f64 {
        match *self {
            Cut::Between { above, below } => 0.5 * (p[above] + p[below]),
            Cut::NoneSelected { top, bottom } => p[top] + margin(p[top], p[bottom]),
            Cut::AllSelected { top, bottom } => p[bottom] - margin(p[top], p[bottom]),
        }
    }

    /// The same threshold as a differentiable function of the inputs.
    pub fn tape(&self, g: &mut Graph, p: &[Var]) -> Var {
        match *self {
            Cut::Between { above, below } => {
                let s = g.add(p[above], p[below]);
                g.scale(s, 0.5)
            }
            Cut::NoneSelected { top, bottom } => {
                let (vt, vb) = (g.value(p[top]), g.value(p[bottom]));
                if vt > vb {
                    let spread = g.sub(p[top], p[bottom]);
                    let half = g.scale(spread, 0.5);
                    g.add(p[top], half)
                } else {
                    let m = g.leaf(margin(vt, vb));
                    g.add(p[top], m)
                }
            }
            Cut::AllSelected { top, bottom } => {
                let (vt, vb) = (g.value(p[top]), g.value(p[bottom]));
                if vt > vb {
                    let spread = g.sub(p[top], p[bottom]);
                    let half = g.scale(spread, 0.5);
                    g.sub(p[bottom], half)
                } else {
                    let m = g.leaf(margin(vt, vb));
                    g.sub(p[bottom], m)
                }
            }
        }
    }

    pub fn selected_count(&self, n: usize, order: &[usize]) -> usize {
        match *self {
            Cut::Between { above, .. } => order.iter().position(|&i| i == above).unwrap() + 1,
            Cut::NoneSelected { .. } => 0,
            Cut::AllSelected { .. } => n,
        }
    }
}

fn margin(top: f64, bottom: f64) -> f64 {
    let spread = top - bottom;
    if spread > 0.0 {
        0.5 * spread
    } else if top != 0.0 {
        0.5 * top.abs()
    } else {
        1.0
    }
}

/// Indices sorted by descending value, ties by ascending index.
pub(crate) fn descending_order(p: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    order
}

/// Cut that leaves exactly `⌈P n⌉` entries above the barrier.
pub fn percentage_cut(p: &[f64], fraction: f64) -> Result<Cut> {
    if p.is_empty() {
        return Err(Error::contract("threshold over an empty vector"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::contract(format!("percentage {fraction} outside (0,1)")));
    }
    let n = p.len();
    // Guard against representation error such as 0.4 * 100 = 40.000000000000004.
    let k = (fraction * n as f64 - 1e-9).ceil() as usize;
    if k == 0 || k >= n {
        return Err(Error::contract(format!(
            "percentage {fraction} of {n} selects {k}: no interior cut"
        )));
    }
    let order = descending_order(p);
    let (above, below) = (order[k - 1], order[k]);
    if p[above] <= p[below] {
        return Err(Error::contract(format!(
            "no separating interval at rank {k}: tied probabilities {}",
            p[above]
        )));
    }
    Ok(Cut::Between { above, below })
}

pub fn threshold_for_percentage(p: &[f64], fraction: f64) -> Result<f64> {
    Ok(percentage_cut(p, fraction)?.value(p))
}

/// Longest prefix of the descending order whose summed cost fits in the
/// budget, backed off to the nearest position where adjacent values differ.
pub fn budget_cut(p: &[f64], costs: &[f64], budget: f64) -> Result<Cut> {
    if p.is_empty() || p.len() != costs.len() {
        return Err(Error::contract("budget threshold needs equal, non-empty p and costs"));
    }
    if !(budget > 0.0) {
        return Err(Error::contract(format!("budget {budget} must be positive")));
    }
    if costs.iter().any(|c| !(*c >= 0.0)) {
        return Err(Error::contract("budget costs must be non-negative"));
    }
    let order = descending_order(p);
    let (top, bottom) = (order[0], order[order.len() - 1]);
    let mut spent = 0.0;
    let mut k = 0;
    for &i in &order {
        if spent + costs[i] > budget {
            break;
        }
        spent += costs[i];
        k += 1;
    }
    if k == p.len() {
        return Ok(Cut::AllSelected { top, bottom });
    }
    while k > 0 && p[order[k - 1]] <= p[order[k]] {
        k -= 1;
    }
    if k == 0 {
        return Ok(Cut::NoneSelected { top, bottom });
    }
    Ok(Cut::Between {
        above: order[k - 1],
        below: order[k],
    })
}

pub fn threshold_for_budget(p: &[f64], costs: &[f64], budget: f64) -> Result<f64> {
    Ok(budget_cut(p, costs, budget)?.value(p))
}

/// Thresholds per cohort; `None` leaves that cohort ungated.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CohortThresholds {
    pub treated: Option<f64>,
    pub control: Option<f64>,
}

impl CohortThresholds {
    pub fn both(d: f64) -> Self {
        Self {
            treated: Some(d),
            control: Some(d),
        }
    }

    fn for_cohort(&self, treated: bool) -> Option<f64> {
        if treated {
            self.treated
        } else {
            self.control
        }
    }
}

/// Gates each probability by `σ(T n (p_i − d*))` and renormalizes per cohort.
pub fn barrier_apply(
    p: &EffectivenessDistribution,
    d_star: CohortThresholds,
    temperature: f64,
) -> Result<EffectivenessDistribution> {
    if !(temperature > 0.0) {
        return Err(Error::contract("barrier temperature must be positive"));
    }
    let mut probs = p.probs.clone();
    for cohort in [true, false] {
        let Some(d) = d_star.for_cohort(cohort) else {
            continue;
        };
        let idx: Vec<usize> = (0..p.len()).filter(|&i| p.treated[i] == cohort).collect();
        if idx.is_empty() {
            continue;
        }
        let scale = temperature * idx.len() as f64;
        for &i in &idx {
            probs[i] = p.probs[i] * sigmoid(scale * (p.probs[i] - d));
        }
        let z: f64 = idx.iter().map(|&i| probs[i]).sum();
        for &i in &idx {
            probs[i] /= z;
        }
    }
    Ok(EffectivenessDistribution {
        probs,
        treated: p.treated.clone(),
    })
}

/// Tape form of [`barrier_apply`] with per-cohort thresholds given as vars.
pub fn barrier_apply_tape(
    g: &mut Graph,
    probs: &[Var],
    treated: &[bool],
    treated_cut: Option<Var>,
    control_cut: Option<Var>,
    temperature: f64,
) -> Vec<Var> {
    let mut out = probs.to_vec();
    for (cohort, cut) in [(true, treated_cut), (false, control_cut)] {
        let Some(d) = cut else { continue };
        let idx: Vec<usize> = (0..probs.len()).filter(|&i| treated[i] == cohort).collect();
        if idx.is_empty() {
            continue;
        }
        let scale = temperature * idx.len() as f64;
        let gated: Vec<Var> = idx
            .iter()
            .map(|&i| {
                let diff = g.sub(probs[i], d);
                let arg = g.scale(diff, scale);
                let gate = g.sigmoid(arg);
                g.mul(probs[i], gate)
            })
            .collect();
        let z = g.sum(&gated);
        for (k, &i) in idx.iter().enumerate() {
            out[i] = g.div(gated[k], z);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(probs: Vec<f64>) -> EffectivenessDistribution {
        let n = probs.len();
        EffectivenessDistribution {
            probs,
            treated: vec![true; n],
        }
    }

    #[test]
    fn multiplier_is_half_at_threshold() {
        let p = single(vec![0.5, 0.3, 0.2]);
        let t = CohortThresholds {
            treated: Some(0.3),
            control: None,
        };
        let mut g = Graph::new();
        let vars = g.leaves(&p.probs);
        let d = g.leaf(0.3);
        let diff = g.sub(vars[1], d);
        let gate = g.sigmoid(diff);
        assert_eq!(g.value(gate), 0.5);
        let out = barrier_apply(&p, t, 2.0).unwrap();
        let raw1 = 0.3 * 0.5;
        let raw0 = 0.5 * sigmoid(2.0 * 3.0 * 0.2);
        let raw2 = 0.2 * sigmoid(2.0 * 3.0 * -0.1);
        let z = raw0 + raw1 + raw2;
        assert!((out.probs[1] - raw1 / z).abs() < 1e-15);
    }

    #[test]
    fn high_temperature_matches_hard_truncation() {
        let p = single(vec![0.7, 0.2, 0.1]);
        let out = barrier_apply(&p, CohortThresholds::both(0.15), 100.0).unwrap();
        let hard = [0.7 / 0.9, 0.2 / 0.9, 0.0];
        for (a, b) in out.probs.iter().zip(hard) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn equal_entries_above_threshold_are_unchanged() {
        let p = single(vec![0.25; 4]);
        let out = barrier_apply(&p, CohortThresholds::both(0.1), 3.0).unwrap();
        for v in out.probs {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn percentage_threshold_order_statistics() {
        let d = threshold_for_percentage(&[0.4, 0.3, 0.2, 0.1], 0.5).unwrap();
        assert!(d > 0.2 && d < 0.3);
        assert!(threshold_for_percentage(&[0.25; 4], 0.5).is_err());
        assert!(threshold_for_percentage(&[0.5, 0.5], 0.01).is_err());
        assert!(threshold_for_percentage(&[0.5, 0.5], 1.0).is_err());
    }

    #[test]
    fn percentage_cut_counts_with_awkward_fractions() {
        // 0.4 * 100 and 0.7 * 10 must not round up by representation error.
        let p: Vec<f64> = (0..100).map(|i| 1.0 / (i as f64 + 2.0)).collect();
        let d = threshold_for_percentage(&p, 0.4).unwrap();
        assert_eq!(p.iter().filter(|&&v| v > d).count(), 40);
        let q: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let d = threshold_for_percentage(&q, 0.7).unwrap();
        assert_eq!(q.iter().filter(|&&v| v > d).count(), 7);
    }

    #[test]
    fn budget_threshold_greedy() {
        let p = [0.5, 0.3, 0.2];
        let d = threshold_for_budget(&p, &[1.0, 1.0, 1.0], 2.0).unwrap();
        assert!(d > 0.2 && d < 0.3);
        let d = threshold_for_budget(&p, &[1.0, 1.0, 1.0], 3.0).unwrap();
        assert!(d < 0.2);
        let d = threshold_for_budget(&p, &[5.0, 1.0, 1.0], 2.0).unwrap();
        assert!(d > 0.5);
        assert!(matches!(
            budget_cut(&p, &[1.0, 1.0, 1.0], 10.0).unwrap(),
            Cut::AllSelected { .. }
        ));
    }

    #[test]
    fn budget_backs_off_ties() {
        let p = [0.4, 0.3, 0.3];
        let d = threshold_for_budget(&p, &[1.0, 1.0, 1.0], 2.0).unwrap();
        assert!(d > 0.3 && d < 0.4);
    }

    #[test]
    fn tape_cut_matches_plain_value() {
        let p = [0.1, 0.45, 0.3, 0.15];
        for cut in [
            percentage_cut(&p, 0.5).unwrap(),
            budget_cut(&p, &[1.0; 4], 0.5).unwrap(),
            budget_cut(&p, &[1.0; 4], 9.0).unwrap(),
        ] {
            let mut g = Graph::new();
            let v = g.leaves(&p);
            let d = cut.tape(&mut g, &v);
            assert_eq!(g.value(d), cut.value(&p));
        }
    }

    #[test]
    fn annealing_schedule() {
        let cfg = BarrierConfig::percentage(0.4).unwrap();
        assert!((cfg.temperature_at(35) - 0.8).abs() < 1e-12);
        assert_eq!(cfg.temperature_at(9), 0.5);
        assert!(BarrierConfig::percentage(1.0).is_err());
        assert!(BarrierConfig::budget(0.0).is_err());
    }
}
