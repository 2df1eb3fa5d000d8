use crate::data::CohortDataset;
use crate::diffcore::sigmoid;
use crate::objectives::{PropensityWeights, PROPENSITY_CLIP};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropensityConfig {
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        PropensityConfig {
            learning_rate: 0.5,
            epochs: 300,
        }
    }
}

/// Logistic regression `e(x) = σ(wᵀx + b)` fitted by full-batch gradient
/// descent on the mean log-loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coef: Vec<f64>,
    pub intercept: f64,
    /// Mean log-loss before each epoch's update, then after the last.
    pub loss_history: Vec<f64>,
    /// Clipped `e(x_i)` on the fitting rows and the treated share `ê`.
    pub weights: PropensityWeights,
}

fn log_loss(p: f64, t: bool) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    if t {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

impl LogisticFit {
    /// Unclipped probability.
    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.coef.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.intercept)
    }

    /// Clipped propensities for every row of `ds`, with the fitted `ê`.
    pub fn weights_for(&self, ds: &CohortDataset) -> Result<PropensityWeights> {
        if ds.dim != self.coef.len() {
            return Err(Error::contract("propensity model width differs from dataset"));
        }
        PropensityWeights::new((0..ds.len()).map(|i| self.probability(ds.row(i))).collect(), self.weights.overall)
    }
}

/// Fits `e(x)` on row-major covariates `x` (width `dim`) and labels `t`.
pub fn fit_propensity(x: &[f64], dim: usize, t: &[bool], config: &PropensityConfig) -> Result<LogisticFit> {
    let n = t.len();
    if x.len() != n * dim {
        return Err(Error::contract("covariate matrix and labels differ in length"));
    }
    let treated = t.iter().filter(|&&v| v).count();
    if treated == 0 || treated == n {
        return Err(Error::contract("propensity fitting needs both treated and control subjects"));
    }
    let mut coef = vec![0.0; dim];
    let mut intercept = 0.0;
    let mut history = Vec::with_capacity(config.epochs + 1);
    let mut grad = vec![0.0; dim];
    let predict = |coef: &[f64], b: f64, i: usize| {
        sigmoid(coef.iter().zip(&x[i * dim..(i + 1) * dim]).map(|(w, v)| w * v).sum::<f64>() + b)
    };
    for _ in 0..config.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        let mut loss = 0.0;
        for i in 0..n {
            let p = predict(&coef, intercept, i);
            loss += log_loss(p, t[i]);
            let r = p - f64::from(u8::from(t[i]));
            for (g, v) in grad.iter_mut().zip(&x[i * dim..(i + 1) * dim]) {
                *g += r * v;
            }
            gb += r;
        }
        history.push(loss / n as f64);
        for (w, g) in coef.iter_mut().zip(&grad) {
            *w -= config.learning_rate * g / n as f64;
        }
        intercept -= config.learning_rate * gb / n as f64;
    }
    let probs: Vec<f64> = (0..n).map(|i| predict(&coef, intercept, i)).collect();
    history.push(probs.iter().zip(t).map(|(&p, &v)| log_loss(p, v)).sum::<f64>() / n as f64);
    let (lo, hi) = PROPENSITY_CLIP;
    let overall = (treated as f64 / n as f64).clamp(lo, hi);
    Ok(LogisticFit {
        coef,
        intercept,
        loss_history: history,
        weights: PropensityWeights::new(probs, overall)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * d).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn random_assignment_gives_flat_propensity() {
        let (n, d) = (5000, 4);
        let x = gaussian(n, d, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        let fit = fit_propensity(&x, d, &t, &PropensityConfig::default()).unwrap();
        assert!(fit.weights.per_subject.iter().all(|e| (e - 0.5).abs() <= 0.1));
    }

    #[test]
    fn separable_labels_are_clipped() {
        let (n, d) = (400, 2);
        let x = gaussian(n, d, 3);
        let t: Vec<bool> = (0..n).map(|i| x[i * d] > 0.0).collect();
        let fit = fit_propensity(&x, d, &t, &PropensityConfig { learning_rate: 1.0, epochs: 3000 }).unwrap();
        let (lo, hi) = PROPENSITY_CLIP;
        assert!(fit.weights.per_subject.iter().any(|&e| e == lo));
        assert!(fit.weights.per_subject.iter().any(|&e| e == hi));
        assert!(fit.weights.per_subject.iter().all(|&e| (lo..=hi).contains(&e)));
    }

    #[test]
    fn overall_share_is_treated_fraction() {
        let x = gaussian(100, 2, 4);
        let t: Vec<bool> = (0..100).map(|i| i < 40).collect();
        let fit = fit_propensity(&x, 2, &t, &PropensityConfig { learning_rate: 0.1, epochs: 5 }).unwrap();
        assert_eq!(fit.weights.overall, 0.4);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = gaussian(10, 2, 5);
        assert!(fit_propensity(&x, 2, &[true; 10], &PropensityConfig::default()).is_err());
    }

    #[test]
    fn loss_never_increases_at_small_rate() {
        let (n, d) = (2000, 3);
        let x = gaussian(n, d, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t: Vec<bool> = (0..n).map(|i| rng.random::<f64>() < sigmoid(x[i * d] - 0.5 * x[i * d + 1])).collect();
        let fit = fit_propensity(&x, d, &t, &PropensityConfig { learning_rate: 0.01, epochs: 200 }).unwrap();
        assert!(fit.loss_history.windows(2).all(|w| w[1] <= w[0]));
    }
}
