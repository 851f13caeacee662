//! Layers of weight-learning nodes: forward vector-matrix product, backward
//! error propagation, and ReLU with its comparator-style derivative.

use serde::{Deserialize, Serialize};

use crate::circuit::{gms_split, step_node, translinear_multiply, CircuitParams, NodeDrive, WeightNodeState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
}

impl Activation {
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Identity => a,
            Activation::Relu => relu(a),
        }
    }

    pub fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => relu_deriv(a),
        }
    }
}

pub fn relu(a: f64) -> f64 {
    a.max(0.0)
}

/// 1 for positive input, otherwise 0. A comparator with equal inputs has no
/// winner, so the derivative at 0 is 0.
pub fn relu_deriv(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `inputs x outputs` grid of nodes; node `(i, j)` connects input `i` to
/// output `j` and is stored at `i * outputs + j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    inputs: usize,
    outputs: usize,
    nodes: Vec<WeightNodeState>,
    pub activation: Activation,
    pub params: CircuitParams,
    /// GMS geometric mean for the error split.
    pub i_gm: f64,
}

impl Layer {
    /// `weights[j][i]` is the weight from input `i` to output `j`. Both cells
    /// of every node start at `level` amperes.
    pub fn from_weights(
        weights: &[Vec<f64>],
        activation: Activation,
        params: CircuitParams,
        level: f64,
    ) -> Result<Self> {
        params.validate()?;
        let outputs = weights.len();
        let inputs = weights.first().map_or(0, Vec::len);
        if outputs == 0 || inputs == 0 {
            return Err(Error::InvalidInput("layer needs at least one input and output".into()));
        }
        if let Some(bad) = weights.iter().find(|r| r.len() != inputs) {
            return Err(Error::DimensionMismatch {
                expected: inputs,
                got: bad.len(),
            });
        }
        if !(level > 0.0) {
            return Err(Error::InvalidInput(format!("cell level must be positive, got {level}")));
        }
        let mut nodes = Vec::with_capacity(inputs * outputs);
        for i in 0..inputs {
            for row in weights {
                nodes.push(WeightNodeState::with_weight(row[i], level, &params));
            }
        }
        let i_gm = params.i_u;
        Ok(Self {
            inputs,
            outputs,
            nodes,
            activation,
            params,
            i_gm,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn node(&self, i: usize, j: usize) -> &WeightNodeState {
        &self.nodes[i * self.outputs + j]
    }

    /// Weights as `outputs` rows of `inputs`.
    pub fn weights(&self) -> Vec<Vec<f64>> {
        (0..self.outputs)
            .map(|j| (0..self.inputs).map(|i| self.node(i, j).weight(&self.params)).collect())
            .collect()
    }

    /// Pre-activations `W x` and outputs `f(W x)`. Each product is the
    /// difference of two translinear multiplies of the cell currents with
    /// `x Iu`; zero inputs contribute nothing.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.inputs {
            return Err(Error::DimensionMismatch {
                expected: self.inputs,
                got: x.len(),
            });
        }
        if let Some(v) = x.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(format!("layer inputs must be >= 0, got {v}")));
        }
        let iu = self.params.i_u;
        let mut pre = vec![0.0; self.outputs];
        for (i, xi) in x.iter().enumerate() {
            if *xi == 0.0 {
                continue;
            }
            let ix = xi * iu;
            for (j, acc) in pre.iter_mut().enumerate() {
                let n = self.node(i, j);
                let p = translinear_multiply(n.iw_plus, ix, iu)?;
                let m = translinear_multiply(n.iw_minus, ix, iu)?;
                *acc += (p - m) / iu;
            }
        }
        let out = pre.iter().map(|a| self.activation.apply(*a)).collect();
        Ok((pre, out))
    }

    /// `(W^T delta) * f'(alpha_prev)`, where `prev` is the activation that
    /// produced this layer's input. Products are four-quadrant: the error is
    /// split into a positive pair and multiplied against both cells.
    pub fn backward(&self, delta: &[f64], alpha_prev: &[f64], prev: Activation) -> Result<Vec<f64>> {
        if delta.len() != self.outputs {
            return Err(Error::DimensionMismatch {
                expected: self.outputs,
                got: delta.len(),
            });
        }
        if alpha_prev.len() != self.inputs {
            return Err(Error::DimensionMismatch {
                expected: self.inputs,
                got: alpha_prev.len(),
            });
        }
        let iu = self.params.i_u;
        let splits = delta
            .iter()
            .map(|d| gms_split(*d, self.i_gm, &self.params))
            .collect::<Result<Vec<_>>>()?;
        let mut g = vec![0.0; self.inputs];
        for (i, gi) in g.iter_mut().enumerate() {
            for (j, s) in splits.iter().enumerate() {
                let n = self.node(i, j);
                let same =
                    translinear_multiply(n.iw_plus, s.plus, iu)? + translinear_multiply(n.iw_minus, s.minus, iu)?;
                let cross =
                    translinear_multiply(n.iw_plus, s.minus, iu)? + translinear_multiply(n.iw_minus, s.plus, iu)?;
                *gi += (same - cross) / iu;
            }
            *gi *= prev.derivative(alpha_prev[i]);
        }
        Ok(g)
    }

    /// Hold `x` and the layer error `delta` for `dt` seconds, updating every
    /// node with the closed-form cell dynamics.
    pub fn step(&mut self, x: &[f64], delta: &[f64], dt: f64) -> Result<()> {
        if x.len() != self.inputs || delta.len() != self.outputs {
            return Err(Error::DimensionMismatch {
                expected: self.inputs + self.outputs,
                got: x.len() + delta.len(),
            });
        }
        if let Some(v) = x.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::InvalidInput(format!("layer inputs must be >= 0, got {v}")));
        }
        let splits = delta
            .iter()
            .map(|d| gms_split(*d, self.i_gm, &self.params))
            .collect::<Result<Vec<_>>>()?;
        for i in 0..self.inputs {
            for (j, s) in splits.iter().enumerate() {
                let k = i * self.outputs + j;
                let drive = NodeDrive {
                    ix: x[i] * self.params.i_u,
                    delta: *s,
                    inverted: false,
                };
                self.nodes[k] = step_node(&self.nodes[k], &drive, dt, &self.params)?;
            }
        }
        Ok(())
    }
}

/// Stack of layers trained on squared error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Activations of one forward pass: `inputs[k]` feeds layer `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("network needs a layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::DimensionMismatch {
                    expected: w[0].outputs(),
                    got: w[1].inputs(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardPass> {
        let mut inputs = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (a, out) = layer.forward(inputs.last().expect("non-empty"))?;
            pre.push(a);
            inputs.push(out);
        }
        let output = inputs.pop().expect("non-empty");
        Ok(ForwardPass { inputs, pre, output })
    }

    /// Per-layer errors for the loss `0.5 |out - y|^2`.
    pub fn deltas(&self, pass: &ForwardPass, y: &[f64]) -> Result<Vec<Vec<f64>>> {
        let last = self.layers.len() - 1;
        if y.len() != pass.output.len() {
            return Err(Error::DimensionMismatch {
                expected: pass.output.len(),
                got: y.len(),
            });
        }
        let top = self.layers[last].activation;
        let mut delta: Vec<f64> = pass
            .output
            .iter()
            .zip(y)
            .zip(&pass.pre[last])
            .map(|((o, t), a)| (o - t) * top.derivative(*a))
            .collect();
        let mut out = vec![Vec::new(); self.layers.len()];
        for k in (0..=last).rev() {
            let next = if k > 0 {
                Some(self.layers[k].backward(&delta, &pass.pre[k - 1], self.layers[k - 1].activation)?)
            } else {
                None
            };
            out[k] = std::mem::take(&mut delta);
            if let Some(n) = next {
                delta = n;
            }
        }
        Ok(out)
    }

    /// `dL/dW` per layer, shaped like [`Layer::weights`].
    pub fn gradients(&self, x: &[f64], y: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
        let pass = self.forward(x)?;
        let deltas = self.deltas(&pass, y)?;
        Ok(deltas
            .iter()
            .zip(&pass.inputs)
            .map(|(d, a)| d.iter().map(|dj| a.iter().map(|ai| dj * ai).collect()).collect())
            .collect())
    }

    /// One hold interval of continuous-time training on `(x, y)`.
    pub fn train_step(&mut self, x: &[f64], y: &[f64], dt: f64) -> Result<f64> {
        let pass = self.forward(x)?;
        let deltas = self.deltas(&pass, y)?;
        let loss = 0.5 * pass.output.iter().zip(y).map(|(o, t)| (o - t).powi(2)).sum::<f64>();
        for ((layer, input), d) in self.layers.iter_mut().zip(&pass.inputs).zip(&deltas) {
            layer.step(input, d, dt)?;
        }
        Ok(loss)
    }
}
