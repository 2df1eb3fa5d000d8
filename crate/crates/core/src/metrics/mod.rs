//! Uplift evaluation: AUUC, AUQC, KRCC, LIFT@h, cost curves and AUCC.
//!
//! Every metric depends on the scores only through the stable ranking
//! (score descending, subject index ascending).

use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

pub const DEFAULT_KRCC_BUCKETS: usize = 10;
pub const DEFAULT_LIFT_PERCENT: f64 = 30.0;

/// Scores and observed outcomes of one evaluation population.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedEvalSet {
    pub scores: Vec<f64>,
    pub treated: Vec<bool>,
    pub gain: Vec<f64>,
    pub cost: Vec<f64>,
}

/// A normalized area together with whether its normalizer vanished (in
/// which case `value` is 0.5).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub degenerate: bool,
}

impl MetricValue {
    fn ratio(area: f64, normalizer: f64) -> Self {
        if normalizer == 0.0 || !normalizer.is_finite() {
            MetricValue {
                value: 0.5,
                degenerate: true,
            }
        } else {
            MetricValue {
                value: area / normalizer,
                degenerate: false,
            }
        }
    }
}

impl RankedEvalSet {
    pub fn new(scores: Vec<f64>, treated: Vec<bool>, gain: Vec<f64>, cost: Vec<f64>) -> Result<Self> {
        let n = scores.len();
        if treated.len() != n || gain.len() != n || cost.len() != n {
            return Err(Error::contract("evaluation columns differ in length"));
        }
        if !treated.iter().any(|&t| t) || treated.iter().all(|&t| t) {
            return Err(Error::contract("evaluation set needs both treated and control subjects"));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::contract(format!("score of subject {i} is not finite")));
        }
        Ok(Self {
            scores,
            treated,
            gain,
            cost,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Subject indices by score descending, ties by index ascending.
    pub fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        idx
    }
}

/// Running per-cohort sums along the ranking.
#[derive(Default, Clone, Copy)]
struct Prefix {
    nt: f64,
    nc: f64,
    yt: f64,
    yc: f64,
}

impl Prefix {
    fn push(&mut self, treated: bool, y: f64) {
        if treated {
            self.nt += 1.0;
            self.yt += y;
        } else {
            self.nc += 1.0;
            self.yc += y;
        }
    }

    /// `(ȳ_t − ȳ_c) · (n_t + n_c)`, zero while a cohort is empty.
    fn uplift(&self) -> f64 {
        if self.nt == 0.0 || self.nc == 0.0 {
            0.0
        } else {
            (self.yt / self.nt - self.yc / self.nc) * (self.nt + self.nc)
        }
    }

    fn qini(&self) -> f64 {
        if self.nc == 0.0 {
            self.yt
        } else {
            self.yt - self.yc * self.nt / self.nc
        }
    }
}

fn curve(eval: &RankedEvalSet, y: &[f64], point: impl Fn(&Prefix) -> f64) -> Vec<f64> {
    let mut p = Prefix::default();
    let mut out = Vec::with_capacity(eval.len() + 1);
    out.push(0.0);
    for i in eval.order() {
        p.push(eval.treated[i], y[i]);
        out.push(point(&p));
    }
    out
}

/// Trapezoidal area of `values` over unit steps.
fn unit_area(values: &[f64]) -> f64 {
    values.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum()
}

/// Uplift-curve points `uplift(k)` for `k = 0..=n`.
pub fn uplift_curve(eval: &RankedEvalSet) -> Vec<f64> {
    curve(eval, &eval.gain, Prefix::uplift)
}

/// Qini-curve points `qini(k)` for `k = 0..=n`.
pub fn qini_curve(eval: &RankedEvalSet) -> Vec<f64> {
    curve(eval, &eval.gain, Prefix::qini)
}

/// Area under the uplift curve over `|uplift(n)| · n`.
pub fn auuc(eval: &RankedEvalSet) -> MetricValue {
    let u = uplift_curve(eval);
    MetricValue::ratio(unit_area(&u), u[eval.len()].abs() * eval.len() as f64)
}

/// Area under the Qini curve over `|qini(n)| · n`.
pub fn auqc(eval: &RankedEvalSet) -> MetricValue {
    let q = qini_curve(eval);
    MetricValue::ratio(unit_area(&q), q[eval.len()].abs() * eval.len() as f64)
}

/// Kendall tau between bucket positions and per-bucket observed uplift;
/// a bucket ahead in score order that also has higher uplift is concordant.
pub fn kendall_tau_positions(uplifts: &[f64]) -> Result<f64> {
    let m = uplifts.len();
    if m < 2 {
        return Err(Error::contract(format!("Kendall tau needs at least 2 buckets, got {m}")));
    }
    let mut score = 0i64;
    for a in 0..m {
        for b in a + 1..m {
            score += match uplifts[a].partial_cmp(&uplifts[b]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    Ok(score as f64 / (m * (m - 1) / 2) as f64)
}

/// Observed uplift per score bucket, merging buckets that lack a cohort.
pub fn bucket_uplifts(eval: &RankedEvalSet, buckets: usize) -> Result<Vec<f64>> {
    if buckets < 2 {
        return Err(Error::contract("KRCC needs at least 2 buckets"));
    }
    let n = eval.len();
    let order = eval.order();
    let mut groups: Vec<Prefix> = (0..buckets)
        .map(|b| {
            let mut p = Prefix::default();
            for &i in &order[b * n / buckets..(b + 1) * n / buckets] {
                p.push(eval.treated[i], eval.gain[i]);
            }
            p
        })
        .collect();
    let usable = |p: &Prefix| p.nt > 0.0 && p.nc > 0.0;
    let mut k = 0;
    while k < groups.len() {
        if usable(&groups[k]) || groups.len() == 1 {
            k += 1;
            continue;
        }
        let g = groups.remove(k);
        let target = if k < groups.len() { k } else { k - 1 };
        let t = &mut groups[target];
        t.nt += g.nt;
        t.nc += g.nc;
        t.yt += g.yt;
        t.yc += g.yc;
        k = k.min(target);
    }
    let out: Vec<f64> = groups
        .iter()
        .filter(|p| usable(p))
        .map(|p| p.yt / p.nt - p.yc / p.nc)
        .collect();
    if out.len() < 2 {
        return Err(Error::contract(format!("only {} usable KRCC buckets", out.len())));
    }
    Ok(out)
}

pub fn krcc(eval: &RankedEvalSet, buckets: usize) -> Result<f64> {
    kendall_tau_positions(&bucket_uplifts(eval, buckets)?)
}

/// Treated mean minus control mean of the gain among the top
/// `⌈h · n / 100⌉` subjects.
pub fn lift_at_h(eval: &RankedEvalSet, h: f64) -> Result<f64> {
    if !(h > 0.0 && h <= 100.0) {
        return Err(Error::contract(format!("h = {h} outside (0, 100]")));
    }
    let k = ((h * eval.len() as f64 / 100.0) - 1e-9).ceil().max(1.0) as usize;
    let mut p = Prefix::default();
    for &i in &eval.order()[..k] {
        p.push(eval.treated[i], eval.gain[i]);
    }
    if p.nt == 0.0 {
        return Err(Error::contract(format!("top {h}% slice has no treated subject")));
    }
    if p.nc == 0.0 {
        return Err(Error::contract(format!("top {h}% slice has no control subject")));
    }
    Ok(p.yt / p.nt - p.yc / p.nc)
}

/// Cumulative incremental cost and value at prefix fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct CostCurve {
    pub fractions: Vec<f64>,
    pub costs: Vec<f64>,
    pub values: Vec<f64>,
}

impl CostCurve {
    pub fn from_points(points: &[(f64, f64)]) -> Self {
        let k = points.len();
        CostCurve {
            fractions: (0..k).map(|j| j as f64 / (k.max(2) - 1) as f64).collect(),
            costs: points.iter().map(|p| p.0).collect(),
            values: points.iter().map(|p| p.1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("fraction,cum_cost,cum_value\n");
        for j in 0..self.len() {
            let _ = writeln!(s, "{},{},{}", self.fractions[j], self.costs[j], self.values[j]);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Curve at `q ∈ {0, 1/steps, …, 1}`; each point is the prefix's
/// difference in cohort means scaled by the prefix size.
pub fn cost_curve(eval: &RankedEvalSet, steps: usize) -> Result<CostCurve> {
    if steps < 2 {
        return Err(Error::contract("cost curve needs at least 2 steps"));
    }
    let n = eval.len();
    let order = eval.order();
    let (mut pr, mut pc) = (Prefix::default(), Prefix::default());
    let mut curve = CostCurve {
        fractions: vec![0.0],
        costs: vec![0.0],
        values: vec![0.0],
    };
    let mut taken = 0;
    for j in 1..=steps {
        let k = (j * n + steps / 2) / steps;
        for &i in &order[taken..k] {
            pr.push(eval.treated[i], eval.gain[i]);
            pc.push(eval.treated[i], eval.cost[i]);
        }
        taken = k;
        curve.fractions.push(j as f64 / steps as f64);
        curve.costs.push(pc.uplift());
        curve.values.push(pr.uplift());
    }
    Ok(curve)
}

/// Trapezoidal area under the (cost, value) polyline over the rectangle
/// spanned by the extreme cumulative cost and value.
///
/// The extremes keep their sign, so a straight curve scores 0.5 whatever
/// the signs of the total cost and value.
pub fn aucc(curve: &CostCurve) -> Result<MetricValue> {
    if curve.len() < 2 {
        return Err(Error::contract("AUCC needs at least 2 curve points"));
    }
    let extreme = |v: &[f64]| v.iter().copied().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
    let area: f64 = (1..curve.len())
        .map(|j| (curve.costs[j] - curve.costs[j - 1]) * 0.5 * (curve.values[j] + curve.values[j - 1]))
        .sum();
    Ok(MetricValue::ratio(area, extreme(&curve.costs) * extreme(&curve.values)))
}

/// Cost curve and AUCC with the default 100 steps.
pub fn aucc_of(eval: &RankedEvalSet) -> Result<MetricValue> {
    aucc(&cost_curve(eval, 100)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(scores: &[f64], treated: &[bool], gain: &[f64]) -> RankedEvalSet {
        RankedEvalSet::new(scores.to_vec(), treated.to_vec(), gain.to_vec(), vec![1.0; scores.len()]).unwrap()
    }

    #[test]
    fn stable_order_breaks_ties_by_index() {
        let e = set(&[1.0, 2.0, 1.0, 2.0], &[true, false, true, false], &[0.0; 4]);
        assert_eq!(e.order(), vec![1, 3, 0, 2]);
    }

    #[test]
    fn krcc_hand_cases() {
        assert_eq!(kendall_tau_positions(&[4.0, 3.0, 2.0, 1.0]).unwrap(), 1.0);
        assert_eq!(kendall_tau_positions(&[1.0, 2.0, 3.0]).unwrap(), -1.0);
        assert!((kendall_tau_positions(&[3.0, 1.0, 2.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(kendall_tau_positions(&[1.0]).is_err());
    }

    #[test]
    fn krcc_merges_single_cohort_buckets() {
        // 3 buckets of 2; the middle one is control-only and merges forward
        let e = set(
            &[6.0, 5.0, 4.0, 3.0, 2.0, 1.0],
            &[true, false, false, false, true, false],
            &[5.0, 1.0, 0.0, 0.0, 2.0, 1.0],
        );
        let u = bucket_uplifts(&e, 3).unwrap();
        assert_eq!(u.len(), 2);
        assert_eq!(u[0], 4.0);
        assert!((u[1] - (2.0 - 1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(krcc(&e, 3).unwrap(), 1.0);
        let one = set(&[2.0, 1.0], &[true, false], &[1.0, 0.0]);
        assert!(krcc(&one, 2).is_err());
    }

    #[test]
    fn lift_hand_values() {
        // top 30% of 10 = 3 subjects: treated {2, 2}, control {1.5}
        let mut scores: Vec<f64> = (0..10).map(|i| 10.0 - i as f64).collect();
        scores[9] = -1.0;
        let treated = [true, false, true, false, true, false, true, false, true, false];
        let gain = [2.0, 1.5, 2.0, 0.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0];
        let e = set(&scores, &treated, &gain);
        assert!((lift_at_h(&e, 30.0).unwrap() - 0.5).abs() < 1e-15);
        let flat = set(&scores, &treated, &[3.0; 10]);
        assert_eq!(lift_at_h(&flat, 30.0).unwrap(), 0.0);
        let err = lift_at_h(&e, 10.0).unwrap_err().to_string();
        assert!(err.contains("control"), "{err}");
    }

    #[test]
    fn qini_single_treated_first_is_flat_at_one() {
        let e = set(&[5.0, 4.0, 3.0, 2.0], &[true, false, false, false], &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(qini_curve(&e), vec![0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn all_zero_outcomes_are_degenerate_half() {
        let e = set(&[3.0, 2.0, 1.0, 0.0], &[true, false, true, false], &[0.0; 4]);
        for m in [auuc(&e), auqc(&e)] {
            assert_eq!(m, MetricValue { value: 0.5, degenerate: true });
        }
    }

    #[test]
    fn six_subject_cost_curve_by_hand() {
        let e = RankedEvalSet::new(
            vec![6.0, 5.0, 4.0, 3.0, 2.0, 1.0],
            vec![true, false, true, false, true, false],
            vec![3.0, 1.0, 2.0, 2.0, 1.0, 0.0],
            vec![1.0, 0.0, 2.0, 1.0, 1.0, 1.0],
        )
        .unwrap();
        let c = cost_curve(&e, 3).unwrap();
        // prefixes of 2, 4, 6 subjects
        // value: (3-1)*2 = 4; (2.5-1.5)*4 = 4; (2-1)*6 = 6
        // cost:  (1-0)*2 = 2; (1.5-0.5)*4 = 4; (4/3-2/3)*6 = 4
        assert_eq!(c.values, vec![0.0, 4.0, 4.0, 6.0]);
        assert_eq!(c.costs[..3], [0.0, 2.0, 4.0]);
        assert!((c.costs[3] - 4.0).abs() < 1e-12);
        assert_eq!(c.fractions[0], 0.0);
        assert!(c.to_csv().starts_with("fraction,cum_cost,cum_value\n0,0,0\n"));
    }

    #[test]
    fn aucc_hand_trapezoids() {
        let diag = CostCurve::from_points(&[(0.0, 0.0), (0.5, 0.5), (1.0, 1.0)]);
        assert!((aucc(&diag).unwrap().value - 0.5).abs() < 1e-15);
        // 0.2*0.4 + 0.8*0.9
        let bent = CostCurve::from_points(&[(0.0, 0.0), (0.2, 0.8), (1.0, 1.0)]);
        assert!((aucc(&bent).unwrap().value - 0.80).abs() < 1e-12);
        let negative = CostCurve::from_points(&[(0.0, 0.0), (-1.0, 2.0), (-2.0, 4.0)]);
        assert!((aucc(&negative).unwrap().value - 0.5).abs() < 1e-12);
        let flat = CostCurve::from_points(&[(0.0, 0.0), (0.0, 1.0)]);
        assert!(aucc(&flat).unwrap().degenerate);
    }

    #[test]
    fn full_prefix_point_ignores_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200;
        let treated: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let gain: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let cost: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let base = cost_curve(
            &RankedEvalSet::new(vec![0.0; n], treated.clone(), gain.clone(), cost.clone()).unwrap(),
            10,
        )
        .unwrap();
        for _ in 0..5 {
            let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let c = cost_curve(&RankedEvalSet::new(scores, treated.clone(), gain.clone(), cost.clone()).unwrap(), 10)
                .unwrap();
            assert!((c.costs[10] - base.costs[10]).abs() < 1e-12 * base.costs[10].abs().max(1.0));
            assert!((c.values[10] - base.values[10]).abs() < 1e-12 * base.values[10].abs().max(1.0));
        }
    }

    #[test]
    fn metrics_invariant_under_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 500;
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let treated: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        let gain: Vec<f64> = (0..n).map(|i| scores[i] * f64::from(u8::from(treated[i])) + rng.random::<f64>()).collect();
        let cost: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let a = RankedEvalSet::new(scores.clone(), treated.clone(), gain.clone(), cost.clone()).unwrap();
        let b = RankedEvalSet::new(scores.iter().map(|s| s.exp()).collect(), treated, gain, cost).unwrap();
        assert_eq!(auuc(&a), auuc(&b));
        assert_eq!(auqc(&a), auqc(&b));
        assert_eq!(krcc(&a, 10).unwrap(), krcc(&b, 10).unwrap());
        assert_eq!(lift_at_h(&a, 30.0).unwrap(), lift_at_h(&b, 30.0).unwrap());
        assert_eq!(aucc_of(&a).unwrap(), aucc_of(&b).unwrap());
    }

    #[test]
    fn krcc_reversal_is_antisymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1000;
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let treated: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let gain: Vec<f64> = (0..n).map(|i| scores[i] * f64::from(u8::from(treated[i])) + rng.random::<f64>()).collect();
        let fwd = RankedEvalSet::new(scores.clone(), treated.clone(), gain.clone(), vec![0.0; n]).unwrap();
        let rev = RankedEvalSet::new(scores.iter().map(|s| -s).collect(), treated, gain, vec![0.0; n]).unwrap();
        assert_eq!(krcc(&fwd, 10).unwrap(), -krcc(&rev, 10).unwrap());
        assert!(krcc(&fwd, 10).unwrap() > 0.5);
    }
}
