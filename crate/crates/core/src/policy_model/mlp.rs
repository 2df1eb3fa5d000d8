use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{sigmoid, Graph, Var};
use crate::{Error, Result};

/// Output non-linearity of an [`MlpModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Sigmoid,
    Linear,
    Tanh,
    /// Raw logits over `K` classes; the softmax is applied by the consumer.
    ClassLogits,
}

impl Head {
    pub fn as_str(self) -> &'static str {
        match self {
            Head::Sigmoid => "sigmoid",
            Head::Linear => "linear",
            Head::Tanh => "tanh",
            Head::ClassLogits => "class-logits",
        }
    }

    pub fn parse(s: &str) -> Option<Head> {
        match s {
            "sigmoid" => Some(Head::Sigmoid),
            "linear" => Some(Head::Linear),
            "tanh" => Some(Head::Tanh),
            "class-logits" => Some(Head::ClassLogits),
            _ => None,
        }
    }
}

/// Feed-forward network with tanh hidden layers.
///
/// Parameters are stored flat, layer by layer: the `out x in` weight matrix
/// in row-major order followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    widths: Vec<usize>,
    head: Head,
    params: Vec<f64>,
}

impl MlpModel {
    pub fn param_count(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn validate(widths: &[usize], head: Head) -> Result<()> {
        if widths.len() < 2 {
            return Err(Error::contract("mlp needs at least input and output widths"));
        }
        if widths.contains(&0) {
            return Err(Error::contract(format!("mlp width of zero in {widths:?}")));
        }
        let out = *widths.last().unwrap();
        match head {
            Head::ClassLogits if out < 2 => Err(Error::contract(
                "class-logit head needs at least two classes",
            )),
            Head::Sigmoid | Head::Linear | Head::Tanh if out != 1 => Err(Error::contract(
                format!("{} head must have width 1, got {out}", head.as_str()),
            )),
            _ => Ok(()),
        }
    }

    pub fn from_params(widths: Vec<usize>, head: Head, params: Vec<f64>) -> Result<Self> {
        Self::validate(&widths, head)?;
        let expected = Self::param_count(&widths);
        if params.len() != expected {
            return Err(Error::contract(format!(
                "mlp {widths:?} needs {expected} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self {
            widths,
            head,
            params,
        })
    }

    pub fn zeros(widths: Vec<usize>, head: Head) -> Result<Self> {
        let n = Self::param_count(&widths);
        Self::from_params(widths, head, vec![0.0; n])
    }

    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for
    /// weights and biases alike.
    pub fn init(widths: Vec<usize>, head: Head, seed: u64) -> Result<Self> {
        Self::validate(&widths, head)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::param_count(&widths));
        for w in widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] * w[1] + w[1]) {
                params.push(rng.random_range(-bound..=bound));
            }
        }
        Self::from_params(widths, head, params)
    }

    /// `[d, hidden..., out]` with every hidden layer of width `hidden`.
    pub fn widths_for(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(hidden.len() + 2);
        w.push(input);
        w.extend_from_slice(hidden);
        w.push(output);
        w
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::contract(format!(
                "set_params: expected {}, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn squared_norm(&self) -> f64 {
        self.params.iter().map(|p| p * p).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::contract(format!(
                "covariate width {} does not match model input {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Pre-head outputs (logits for class heads, the affine output otherwise).
    pub fn forward_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let layers = self.widths.len() - 1;
        let mut act = x.to_vec();
        let mut offset = 0;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let mut next: Vec<f64> = (0..n_out)
                .map(|j| {
                    let row = &weights[j * n_in..(j + 1) * n_in];
                    row.iter().zip(&act).map(|(a, b)| a * b).sum::<f64>() + biases[j]
                })
                .collect();
            if l + 1 < layers {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            act = next;
        }
        Ok(act)
    }

    /// Outputs after the head non-linearity.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.forward_raw(x)?;
        match self.head {
            Head::Sigmoid => out.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Head::Tanh => out.iter_mut().for_each(|v| *v = v.tanh()),
            Head::Linear | Head::ClassLogits => {}
        }
        Ok(out)
    }

    /// Scalar output for single-width heads.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?[0])
    }

    /// Records the pre-head forward pass on `g`, reading parameters from
    /// `params` (which must be laid out like [`MlpModel::params`]).
    pub fn forward_raw_tape(&self, g: &mut Graph, params: &[Var], x: &[f64]) -> Result<Vec<Var>> {
        self.check_input(x)?;
        if params.len() != self.params.len() {
            return Err(Error::contract("tape parameter count mismatch"));
        }
        let layers = self.widths.len() - 1;
        let mut act: Vec<Var> = g.leaves(x);
        let mut offset = 0;
        let mut terms = Vec::new();
        for (l, w) in self.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let mut next = Vec::with_capacity(n_out);
            for j in 0..n_out {
                terms.clear();
                for (i, &a) in act.iter().enumerate() {
                    terms.push(g.mul(params[offset + j * n_in + i], a));
                }
                terms.push(params[offset + n_in * n_out + j]);
                let z = g.sum(&terms);
                next.push(if l + 1 < layers { g.tanh(z) } else { z });
            }
            offset += n_in * n_out + n_out;
            act = next;
        }
        Ok(act)
    }

    pub fn forward_tape(&self, g: &mut Graph, params: &[Var], x: &[f64]) -> Result<Vec<Var>> {
        let raw = self.forward_raw_tape(g, params, x)?;
        Ok(match self.head {
            Head::Sigmoid => raw.into_iter().map(|v| g.sigmoid(v)).collect(),
            Head::Tanh => raw.into_iter().map(|v| g.tanh(v)).collect(),
            Head::Linear | Head::ClassLogits => raw,
        })
    }
}
