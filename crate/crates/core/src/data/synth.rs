//! Synthetic uplift data with known per-subject treatment effects.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::dataset::CohortDataset;
use crate::diffcore::sigmoid;
use crate::{Error, Result};

/// How treatment is assigned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Propensity {
    Constant(f64),
    /// `e(x) = σ(scale · x_0 + offset)`.
    Logistic { scale: f64, offset: f64 },
}

/// Generator parameters. Effects are
/// `τ^r(x) = gain_offset + gain_heterogeneity · β_rᵀx` and
/// `τ^c(x) = cost_offset + cost_heterogeneity · σ(β_cᵀx)`, each multiplied
/// by the subject's potential intensity and assignment multiplier when
/// those factors are enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub noise: f64,
    pub propensity: Propensity,
    pub gain_offset: f64,
    pub gain_heterogeneity: f64,
    pub cost_offset: f64,
    pub cost_heterogeneity: f64,
    /// Coefficient of `x_0` in both outcome baselines.
    pub baseline_slope: f64,
    /// When set, every subject's gain outcome equals this value.
    pub constant_gain: Option<f64>,
    pub intensity: bool,
    pub assignment_classes: usize,
    pub item_dim: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 20_000,
            d: 10,
            noise: 0.5,
            propensity: Propensity::Constant(0.5),
            gain_offset: 0.5,
            gain_heterogeneity: 1.0,
            cost_offset: 0.2,
            cost_heterogeneity: 1.0,
            baseline_slope: 0.5,
            constant_gain: None,
            intensity: false,
            assignment_classes: 0,
            item_dim: 0,
            seed: 0,
        }
    }
}

pub const PRESETS: [&str; 5] = ["planted", "confounded", "ponpare-like", "null", "constant"];

impl SynthSpec {
    /// Heterogeneous linear gain uplift, positive cost uplift, randomized
    /// 50/50 assignment.
    pub fn planted(seed: u64) -> Self {
        SynthSpec {
            seed,
            ..Default::default()
        }
    }

    /// As [`SynthSpec::planted`] but treatment follows a logistic
    /// propensity in `x_0`, which also drives both outcome baselines.
    pub fn confounded(seed: u64) -> Self {
        SynthSpec {
            propensity: Propensity::Logistic { scale: 1.5, offset: 0.0 },
            baseline_slope: 2.0,
            seed,
            ..Default::default()
        }
    }

    /// Subject width 50, item width 160, discrete assignment over 8
    /// classes and a continuous intensity.
    pub fn ponpare_like(seed: u64) -> Self {
        SynthSpec {
            d: 50,
            intensity: true,
            assignment_classes: 8,
            item_dim: 160,
            seed,
            ..Default::default()
        }
    }

    /// Gain outcome identical for every subject.
    pub fn null(seed: u64) -> Self {
        SynthSpec {
            constant_gain: Some(1.0),
            seed,
            ..Default::default()
        }
    }

    /// Noise-free constant unit effects over a flat baseline.
    pub fn constant(seed: u64) -> Self {
        SynthSpec {
            noise: 0.0,
            baseline_slope: 0.0,
            gain_offset: 1.0,
            gain_heterogeneity: 0.0,
            cost_offset: 1.0,
            cost_heterogeneity: 0.0,
            seed,
            ..Default::default()
        }
    }

    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        Some(match name {
            "planted" => Self::planted(seed),
            "confounded" => Self::confounded(seed),
            "ponpare-like" => Self::ponpare_like(seed),
            "null" => Self::null(seed),
            "constant" => Self::constant(seed),
            _ => return None,
        })
    }
}

/// Ground-truth effects and propensities, one entry per subject.
///
/// Effects are evaluated at each subject's potential intensity and
/// assignment, so they are defined for control subjects too.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub tau_gain: Vec<f64>,
    pub tau_cost: Vec<f64>,
    pub propensity: Vec<f64>,
}

impl SynthTruth {
    pub fn len(&self) -> usize {
        self.tau_gain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau_gain.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect();
        SynthTruth {
            tau_gain: pick(&self.tau_gain),
            tau_cost: pick(&self.tau_cost),
            propensity: pick(&self.propensity),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = String::from("tau_gain,tau_cost,propensity\n");
        for i in 0..self.len() {
            s += &format!("{:e},{:e},{:e}\n", self.tau_gain[i], self.tau_cost[i], self.propensity[i]);
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let mut lines = text.lines();
        if lines.next() != Some("tau_gain,tau_cost,propensity") {
            return Err(bad("missing ground-truth header".into()));
        }
        let mut t = SynthTruth {
            tau_gain: Vec::new(),
            tau_cost: Vec::new(),
            propensity: Vec::new(),
        };
        for (k, line) in lines.enumerate() {
            let cells: Vec<f64> = line
                .split(',')
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(format!("row {}: unparsable", k + 1)))?;
            let [r, c, e] = cells[..] else {
                return Err(bad(format!("row {}: expected 3 cells", k + 1)));
            };
            t.tau_gain.push(r);
            t.tau_cost.push(c);
            t.propensity.push(e);
        }
        Ok(t)
    }
}

fn normals(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws a dataset and its ground truth from `spec`.
pub fn synth_generate(spec: &SynthSpec) -> Result<(CohortDataset, SynthTruth)> {
    let (n, d) = (spec.n, spec.d);
    if n < 100 || d < 2 {
        return Err(Error::contract(format!("synthetic data needs n >= 100 and d >= 2, got {n} x {d}")));
    }
    if let Propensity::Constant(p) = spec.propensity {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::contract(format!("constant propensity {p} outside (0,1)")));
        }
    }
    if spec.assignment_classes == 1 {
        return Err(Error::contract("assignment needs at least 2 classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scale = 1.0 / (d as f64).sqrt();
    let beta_r: Vec<f64> = normals(&mut rng, d).into_iter().map(|v| v * scale).collect();
    let beta_c: Vec<f64> = normals(&mut rng, d).into_iter().map(|v| v * scale).collect();
    let k = spec.assignment_classes;
    let class_weights: Vec<Vec<f64>> = (0..k).map(|_| normals(&mut rng, d)).collect();
    let class_gain: Vec<f64> = (0..k).map(|c| 0.5 + c as f64 / (k.max(2) - 1) as f64).collect();
    let items: Vec<Vec<f64>> = (0..k).map(|_| normals(&mut rng, spec.item_dim)).collect();
    let rho_weights: Vec<f64> = normals(&mut rng, d).into_iter().map(|v| 0.5 * v * scale).collect();

    let mut ds = CohortDataset {
        feature_names: (0..d).map(|j| format!("x{j}")).collect(),
        dim: d,
        assignment_classes: k,
        item_dim: if k > 0 { spec.item_dim } else { 0 },
        item_covariates: (k > 0 && spec.item_dim > 0).then(Vec::new),
        assignment: (k > 0).then(Vec::new),
        ..Default::default()
    };
    if ds.item_covariates.is_none() {
        ds.item_dim = 0;
    }
    let mut truth = SynthTruth {
        tau_gain: Vec::with_capacity(n),
        tau_cost: Vec::with_capacity(n),
        propensity: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let x = normals(&mut rng, d);
        let e = match spec.propensity {
            Propensity::Constant(p) => p,
            Propensity::Logistic { scale, offset } => sigmoid(scale * x[0] + offset),
        };
        let t = rng.random::<f64>() < e;
        let mut mult = 1.0;
        let rho = if spec.intensity {
            let z: f64 = rng.sample(StandardNormal);
            (1.0 + dot(&rho_weights, &x) + 0.2 * z).max(0.1)
        } else {
            1.0
        };
        mult *= rho;
        if k > 0 {
            let logits: Vec<f64> = class_weights.iter().map(|w| 0.5 * dot(w, &x)).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let total: f64 = w.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut class = k - 1;
            for (c, wc) in w.iter().enumerate() {
                if u < *wc {
                    class = c;
                    break;
                }
                u -= wc;
            }
            mult *= class_gain[class];
            ds.assignment.as_mut().unwrap().push(class);
            if let Some(it) = ds.item_covariates.as_mut() {
                it.extend_from_slice(&items[class]);
            }
        }
        let tau_r = mult * (spec.gain_offset + spec.gain_heterogeneity * dot(&beta_r, &x));
        let tau_c = mult * (spec.cost_offset + spec.cost_heterogeneity * sigmoid(dot(&beta_c, &x)));
        let tf = f64::from(u8::from(t));
        let nr: f64 = rng.sample(StandardNormal);
        let nc: f64 = rng.sample(StandardNormal);
        let gain = match spec.constant_gain {
            Some(v) => v,
            None => 1.0 + spec.baseline_slope * x[0] + tf * tau_r + spec.noise * nr,
        };
        let cost = 1.0 + spec.baseline_slope * x[0] + tf * tau_c + spec.noise * nc;
        ds.covariates.extend_from_slice(&x);
        ds.treated.push(t);
        ds.intensity.push(if t { rho } else { 0.0 });
        ds.gain.push(gain);
        ds.cost.push(cost);
        truth.tau_gain.push(if spec.constant_gain.is_some() { 0.0 } else { tau_r });
        truth.tau_cost.push(tau_c);
        truth.propensity.push(e);
    }
    ds.validate()?;
    Ok((ds, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diff_in_means(y: &[f64], t: &[bool]) -> f64 {
        let (mut st, mut nt, mut sc, mut nc) = (0.0, 0.0, 0.0, 0.0);
        for (v, &tr) in y.iter().zip(t) {
            if tr {
                st += v;
                nt += 1.0;
            } else {
                sc += v;
                nc += 1.0;
            }
        }
        st / nt - sc / nc
    }

    #[test]
    fn constant_effect_noise_free_difference_is_exact() {
        let (ds, truth) = synth_generate(&SynthSpec { n: 1000, ..SynthSpec::constant(3) }).unwrap();
        assert!((diff_in_means(&ds.gain, &ds.treated) - 1.0).abs() < 1e-12);
        assert!((diff_in_means(&ds.cost, &ds.treated) - 1.0).abs() < 1e-12);
        assert!(truth.tau_gain.iter().all(|&t| t == 1.0));
    }

    #[test]
    fn same_seed_same_data() {
        let spec = SynthSpec {
            n: 300,
            ..SynthSpec::planted(9)
        };
        assert_eq!(synth_generate(&spec).unwrap(), synth_generate(&spec).unwrap());
    }

    #[test]
    fn ponpare_like_has_policy_columns() {
        let spec = SynthSpec {
            n: 200,
            ..SynthSpec::ponpare_like(1)
        };
        let (ds, truth) = synth_generate(&spec).unwrap();
        assert_eq!(ds.dim, 50);
        assert_eq!(ds.item_dim, 160);
        assert_eq!(ds.assignment.as_ref().unwrap().len(), 200);
        assert_eq!(ds.item_covariates.as_ref().unwrap().len(), 200 * 160);
        assert!((0..200).all(|i| ds.treated[i] == (ds.intensity[i] > 0.0)));
        assert_eq!(truth.len(), 200);
    }

    #[test]
    fn cost_effects_positive_and_gain_mixed_sign() {
        let (_, truth) = synth_generate(&SynthSpec::planted(0)).unwrap();
        assert!(truth.tau_cost.iter().all(|&c| c > 0.0));
        assert!(truth.tau_gain.iter().any(|&r| r < 0.0));
        assert!(truth.tau_gain.iter().any(|&r| r > 0.0));
    }

    #[test]
    fn null_preset_has_identical_gain() {
        let (ds, _) = synth_generate(&SynthSpec { n: 500, ..SynthSpec::null(2) }).unwrap();
        assert!(ds.gain.iter().all(|&g| g == 1.0));
    }

    #[test]
    fn truth_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (_, truth) = synth_generate(&SynthSpec { n: 150, ..SynthSpec::confounded(4) }).unwrap();
        let p = dir.path().join("truth.csv");
        truth.write(&p).unwrap();
        assert_eq!(SynthTruth::read(&p).unwrap(), truth);
    }

    #[test]
    fn rejects_small_specs() {
        assert!(synth_generate(&SynthSpec { n: 50, ..Default::default() }).is_err());
        assert!(synth_generate(&SynthSpec { d: 1, ..Default::default() }).is_err());
    }
}
