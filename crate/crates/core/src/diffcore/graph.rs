//! Define-by-run scalar computation graph.
//!
//! Nodes are appended in evaluation order, so the node list is always a
//! valid topological order. Values are computed eagerly when a node is
//! pushed; [`Graph::forward_eval`] re-runs the recorded ops against a fresh
//! set of leaf values without rebuilding the topology.

use crate::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Div(usize, usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Max(usize, usize),
    Sum { start: usize, len: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Neg(..) => "neg",
            Op::Div(..) => "div",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Max(..) => "max",
            Op::Sum { .. } => "sum",
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` in the overflow-free form `ln(1 + e^{-|x|}) + max(x, 0)`.
pub fn softplus(x: f64) -> f64 {
    (-x.abs()).exp().ln_1p() + x.max(0.0)
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    ops: Vec<Op>,
    values: Vec<f64>,
    adjoints: Vec<f64>,
    operands: Vec<usize>,
    leaves: Vec<usize>,
    first_non_finite: Option<usize>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            ops: Vec::with_capacity(nodes),
            values: Vec::with_capacity(nodes),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    fn push(&mut self, op: Op) -> Var {
        let id = self.ops.len();
        let v = eval_op(op, &self.values, &self.operands);
        if !v.is_finite() && self.first_non_finite.is_none() {
            self.first_non_finite = Some(id);
        }
        self.ops.push(op);
        self.values.push(v);
        Var(id)
    }

    /// Adds an input leaf. Parameters and data constants are both leaves;
    /// [`Graph::backward`] reports a gradient for every leaf.
    pub fn leaf(&mut self, value: f64) -> Var {
        self.leaves.push(self.ops.len());
        self.push_leaf_value(value)
    }

    fn push_leaf_value(&mut self, value: f64) -> Var {
        let id = self.ops.len();
        if !value.is_finite() && self.first_non_finite.is_none() {
            self.first_non_finite = Some(id);
        }
        self.ops.push(Op::Leaf);
        self.values.push(value);
        Var(id)
    }

    pub fn leaves(&mut self, values: &[f64]) -> Vec<Var> {
        values.iter().map(|&v| self.leaf(v)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Mul(a.0, b.0))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.push(Op::Neg(a.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Div(a.0, b.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.push(Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.push(Op::Log(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.push(Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.push(Op::Sigmoid(a.0))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.push(Op::Softplus(a.0))
    }

    pub fn max(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Max(a.0, b.0))
    }

    /// Sum-reduce over any number of operands. An empty sum is 0.
    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let start = self.operands.len();
        self.operands.extend(xs.iter().map(|v| v.0));
        self.push(Op::Sum {
            start,
            len: xs.len(),
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    /// `a * c` for a data constant `c`.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let k = self.leaf(c);
        self.mul(a, k)
    }

    pub fn value(&self, v: Var) -> f64 {
        self.values[v.0]
    }

    pub fn values_of(&self, vs: &[Var]) -> Vec<f64> {
        vs.iter().map(|&v| self.values[v.0]).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn check_finite(&self) -> Result<()> {
        match self.first_non_finite {
            Some(node) => Err(Error::NumericDomain {
                node,
                op: self.ops[node].name(),
            }),
            None => Ok(()),
        }
    }

    /// Recomputes every node from new leaf values, in topological order.
    pub fn forward_eval(&mut self, leaf_values: &[f64]) -> Result<&[f64]> {
        if leaf_values.len() != self.leaves.len() {
            return Err(Error::contract(format!(
                "forward_eval: {} leaf values for {} leaves",
                leaf_values.len(),
                self.leaves.len()
            )));
        }
        for (&id, &v) in self.leaves.iter().zip(leaf_values) {
            self.values[id] = v;
        }
        self.first_non_finite = None;
        for id in 0..self.ops.len() {
            let op = self.ops[id];
            if !matches!(op, Op::Leaf) {
                self.values[id] = eval_op(op, &self.values, &self.operands);
            }
            if !self.values[id].is_finite() && self.first_non_finite.is_none() {
                self.first_non_finite = Some(id);
            }
        }
        self.check_finite()?;
        Ok(&self.values)
    }

    /// Reverse sweep from `output`; returns the gradient with respect to
    /// every leaf in creation order. Adjoints of all nodes stay available
    /// through [`Graph::grad`] until the next call.
    pub fn backward(&mut self, output: Var) -> Result<Vec<f64>> {
        if output.0 >= self.ops.len() {
            return Err(Error::contract(format!(
                "backward: node {} not in graph of {} nodes",
                output.0,
                self.ops.len()
            )));
        }
        self.check_finite()?;
        self.adjoints.clear();
        self.adjoints.resize(self.ops.len(), 0.0);
        self.adjoints[output.0] = 1.0;
        let values = &self.values;
        let adj = &mut self.adjoints;
        for id in (0..=output.0).rev() {
            let g = adj[id];
            if g == 0.0 {
                continue;
            }
            match self.ops[id] {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    adj[a] += g;
                    adj[b] += g;
                }
                Op::Mul(a, b) => {
                    adj[a] += g * values[b];
                    adj[b] += g * values[a];
                }
                Op::Neg(a) => adj[a] -= g,
                Op::Div(a, b) => {
                    let vb = values[b];
                    adj[a] += g / vb;
                    adj[b] -= g * values[a] / (vb * vb);
                }
                Op::Exp(a) => adj[a] += g * values[id],
                Op::Log(a) => adj[a] += g / values[a],
                Op::Tanh(a) => {
                    let t = values[id];
                    adj[a] += g * (1.0 - t * t);
                }
                Op::Sigmoid(a) => {
                    let s = values[id];
                    adj[a] += g * s * (1.0 - s);
                }
                Op::Softplus(a) => adj[a] += g * sigmoid(values[a]),
                Op::Max(a, b) => {
                    if values[a] >= values[b] {
                        adj[a] += g;
                    } else {
                        adj[b] += g;
                    }
                }
                Op::Sum { start, len } => {
                    for &x in &self.operands[start..start + len] {
                        adj[x] += g;
                    }
                }
            }
        }
        Ok(self.leaves.iter().map(|&id| self.adjoints[id]).collect())
    }

    /// Adjoint of `v` from the most recent [`Graph::backward`].
    pub fn grad(&self, v: Var) -> f64 {
        self.adjoints.get(v.0).copied().unwrap_or(0.0)
    }

    pub fn grads_of(&self, vs: &[Var]) -> Vec<f64> {
        vs.iter().map(|&v| self.grad(v)).collect()
    }
}

fn eval_op(op: Op, values: &[f64], operands: &[usize]) -> f64 {
    match op {
        Op::Leaf => unreachable!("leaves carry their own value"),
        Op::Add(a, b) => values[a] + values[b],
        Op::Mul(a, b) => values[a] * values[b],
        Op::Neg(a) => -values[a],
        Op::Div(a, b) => values[a] / values[b],
        Op::Exp(a) => values[a].exp(),
        Op::Log(a) => values[a].ln(),
        Op::Tanh(a) => values[a].tanh(),
        Op::Sigmoid(a) => sigmoid(values[a]),
        Op::Softplus(a) => softplus(values[a]),
        Op::Max(a, b) => values[a].max(values[b]),
        Op::Sum { start, len } => operands[start..start + len]
            .iter()
            .map(|&i| values[i])
            .sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::finite_diff_grad;

    #[test]
    fn sigmoid_and_softplus_at_zero() {
        let mut g = Graph::new();
        let x = g.leaf(0.0);
        let s = g.sigmoid(x);
        let sp = g.softplus(x);
        assert_eq!(g.value(s), 0.5);
        assert!((g.value(sp) - std::f64::consts::LN_2).abs() < 1e-15);
        g.backward(s).unwrap();
        assert!((g.grad(x) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn product_plus_operand() {
        let mut g = Graph::new();
        let x = g.leaf(2.0);
        let y = g.leaf(3.0);
        let xy = g.mul(x, y);
        let out = g.add(xy, x);
        assert_eq!(g.value(out), 8.0);
        let grads = g.backward(out).unwrap();
        assert_eq!(grads, vec![4.0, 2.0]);
    }

    #[test]
    fn square_derivative() {
        let mut g = Graph::new();
        let x = g.leaf(3.0);
        let sq = g.mul(x, x);
        assert_eq!(g.backward(sq).unwrap(), vec![6.0]);
    }

    #[test]
    fn unused_leaf_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(1.5);
        let _unused = g.leaf(-4.0);
        let e = g.exp(x);
        let grads = g.backward(e).unwrap();
        assert_eq!(grads[1], 0.0);
        assert!((grads[0] - 1.5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn sum_broadcasts_unit_gradient() {
        let mut g = Graph::new();
        let xs = g.leaves(&[0.3, -1.0, 7.0, 2.5]);
        let s = g.sum(&xs);
        assert_eq!(g.backward(s).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn empty_sum_is_zero() {
        let mut g = Graph::new();
        let s = g.sum(&[]);
        assert_eq!(g.value(s), 0.0);
    }

    #[test]
    fn overflow_is_reported_with_node_index() {
        let mut g = Graph::new();
        let x = g.leaf(1000.0);
        let e = g.exp(x);
        match g.backward(e) {
            Err(Error::NumericDomain { node, op }) => {
                assert_eq!(node, e.index());
                assert_eq!(op, "exp");
            }
            other => panic!("expected numeric-domain error, got {other:?}"),
        }
        let mut g = Graph::new();
        let x = g.leaf(1.0);
        let e = g.exp(x);
        assert!(g.forward_eval(&[1.0]).is_ok());
        assert!(matches!(
            g.forward_eval(&[800.0]),
            Err(Error::NumericDomain { node, .. }) if node == e.index()
        ));
    }

    #[test]
    fn log_of_negative_is_domain_error() {
        let mut g = Graph::new();
        let x = g.leaf(-1.0);
        let l = g.log(x);
        assert!(matches!(g.backward(l), Err(Error::NumericDomain { .. })));
    }

    #[test]
    fn forward_eval_rejects_wrong_leaf_count() {
        let mut g = Graph::new();
        let x = g.leaf(1.0);
        g.tanh(x);
        assert!(matches!(g.forward_eval(&[1.0, 2.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_rejects_foreign_node() {
        let mut g = Graph::new();
        g.leaf(1.0);
        assert!(matches!(g.backward(Var(5)), Err(Error::Contract(_))));
    }

    #[test]
    fn forward_eval_matches_eager_values() {
        let mut g = Graph::new();
        let x = g.leaf(0.7);
        let y = g.leaf(-0.2);
        let a = g.mul(x, y);
        let b = g.softplus(a);
        let c = g.div(b, x);
        let eager = g.value(c);
        let values = g.forward_eval(&[0.7, -0.2]).unwrap();
        assert_eq!(values[c.index()], eager);
        let moved = g.forward_eval(&[1.1, 0.4]).unwrap()[c.index()];
        assert!((moved - softplus(1.1 * 0.4) / 1.1).abs() < 1e-15);
    }

    #[test]
    fn repeated_sweeps_are_bit_identical() {
        let mut g = Graph::new();
        let xs = g.leaves(&[0.1, 0.2, 0.3]);
        let t: Vec<_> = xs.iter().map(|&x| g.tanh(x)).collect();
        let s = g.sum(&t);
        let out = g.softplus(s);
        let first = g.backward(out).unwrap();
        let v1 = g.forward_eval(&[0.1, 0.2, 0.3]).unwrap().to_vec();
        let second = g.backward(out).unwrap();
        let v2 = g.forward_eval(&[0.1, 0.2, 0.3]).unwrap().to_vec();
        assert_eq!(first, second);
        assert_eq!(v1, v2);
    }

    type Unary = fn(&mut Graph, Var) -> Var;
    type Binary = fn(&mut Graph, Var, Var) -> Var;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    /// Every primitive against central differences at 100 random points.
    #[test]
    fn primitives_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let unary: [(&str, Unary, f64, f64); 6] = [
            ("neg", Graph::neg, -3.0, 3.0),
            ("exp", Graph::exp, -3.0, 3.0),
            ("log", Graph::log, 0.1, 5.0),
            ("tanh", Graph::tanh, -3.0, 3.0),
            ("sigmoid", Graph::sigmoid, -6.0, 6.0),
            ("softplus", Graph::softplus, -6.0, 6.0),
        ];
        for (name, op, lo, hi) in unary {
            for _ in 0..100 {
                let x0 = rng.random_range(lo..hi);
                let mut g = Graph::new();
                let x = g.leaf(x0);
                let out = op(&mut g, x);
                let analytic = g.backward(out).unwrap()[0];
                let numeric = finite_diff_grad(
                    |p| {
                        let mut g = Graph::new();
                        let x = g.leaf(p[0]);
                        let out = op(&mut g, x);
                        g.value(out)
                    },
                    &[x0],
                    1e-5,
                )[0];
                assert!(
                    rel_err(analytic, numeric) < 1e-5,
                    "{name} at {x0}: {analytic} vs {numeric}"
                );
            }
        }
        let binary: [(&str, Binary); 4] = [
            ("add", Graph::add),
            ("mul", Graph::mul),
            ("div", Graph::div),
            ("max", Graph::max),
        ];
        for (name, op) in binary {
            let mut checked = 0;
            while checked < 100 {
                let a0 = rng.random_range(-3.0..3.0);
                let mut b0: f64 = rng.random_range(-3.0..3.0);
                if name == "div" && b0.abs() < 0.3 {
                    b0 += 0.6f64.copysign(b0);
                }
                if name == "max" && (a0 - b0).abs() < 1e-3 {
                    continue;
                }
                let mut g = Graph::new();
                let a = g.leaf(a0);
                let b = g.leaf(b0);
                let out = op(&mut g, a, b);
                let analytic = g.backward(out).unwrap();
                let numeric = finite_diff_grad(
                    |p| {
                        let mut g = Graph::new();
                        let a = g.leaf(p[0]);
                        let b = g.leaf(p[1]);
                        let out = op(&mut g, a, b);
                        g.value(out)
                    },
                    &[a0, b0],
                    1e-5,
                );
                for k in 0..2 {
                    let tol = if analytic[k] == 0.0 { 1e-9 } else { 1e-5 };
                    assert!(
                        rel_err(analytic[k], numeric[k]) < tol
                            || (analytic[k] - numeric[k]).abs() < 1e-9,
                        "{name}({a0},{b0}) d{k}: {} vs {}",
                        analytic[k],
                        numeric[k]
                    );
                }
                checked += 1;
            }
        }
    }

    #[test]
    fn softplus_is_stable_for_large_magnitudes() {
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
