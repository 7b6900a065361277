use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{gemm, Matrix};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
}

/// Fully connected network: tanh on hidden layers, affine output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

/// Flat parameter storage.
///
/// For one [`Mlp`] the order is every weight matrix (row-major, input layer
/// first) followed by every bias vector in the same layer order. Composite
/// models concatenate their component vectors in a fixed documented order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Mlp {
    /// All-zero network with the given layer sizes `[d_in, h_1, ..., d_out]`.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "mlp layer sizes must have at least two positive entries, got {layer_sizes:?}"
            )));
        }
        let weights = layer_sizes
            .windows(2)
            .map(|w| Matrix::zeros(w[1], w[0]))
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation: Activation::Tanh,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        for w in &mut net.weights {
            let limit = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
            for v in w.as_mut_slice() {
                *v = rng.gen_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn from_parts(layer_sizes: &[usize], weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        if weights.len() != net.weights.len() || biases.len() != net.biases.len() {
            return Err(Error::DimensionMismatch {
                context: "Mlp::from_parts layer count",
                expected: net.weights.len(),
                got: weights.len(),
            });
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.shape() != net.weights[l].shape() {
                return Err(Error::DimensionMismatch {
                    context: "Mlp::from_parts weight shape",
                    expected: net.weights[l].rows() * net.weights[l].cols(),
                    got: w.rows() * w.cols(),
                });
            }
            if b.len() != net.biases[l].len() {
                return Err(Error::DimensionMismatch {
                    context: "Mlp::from_parts bias length",
                    expected: net.biases[l].len(),
                    got: b.len(),
                });
            }
        }
        net.weights = weights;
        net.biases = biases;
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn param_count(&self) -> usize {
        Self::param_count_for(&self.layer_sizes)
    }

    pub fn param_count_for(layer_sizes: &[usize]) -> usize {
        layer_sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    pub fn flatten(&self) -> ParamVector {
        let mut out = Vec::with_capacity(self.param_count());
        self.flatten_into(&mut out);
        ParamVector(out)
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for w in &self.weights {
            out.extend_from_slice(w.as_slice());
        }
        for b in &self.biases {
            out.extend_from_slice(b);
        }
    }

    /// Overwrites the parameters from `flat`, returning the unread tail.
    pub fn load_params<'a>(&mut self, flat: &'a [f64]) -> Result<&'a [f64]> {
        let need = self.param_count();
        if flat.len() < need {
            return Err(Error::DimensionMismatch {
                context: "Mlp::load_params",
                expected: need,
                got: flat.len(),
            });
        }
        let mut rest = flat;
        for w in &mut self.weights {
            let n = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&rest[..n]);
            rest = &rest[n..];
        }
        for b in &mut self.biases {
            let n = b.len();
            b.copy_from_slice(&rest[..n]);
            rest = &rest[n..];
        }
        Ok(rest)
    }

    pub fn unflatten(layer_sizes: &[usize], flat: &ParamVector) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        let rest = net.load_params(&flat.0)?;
        if !rest.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "Mlp::unflatten",
                expected: net.param_count(),
                got: flat.len(),
            });
        }
        Ok(net)
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "mlp input",
                expected: self.input_dim(),
                got: len,
            });
        }
        Ok(())
    }

    /// Hidden tanh outputs and the final output for a batch of row inputs.
    fn forward_trace(&self, x: &Matrix) -> (Vec<Matrix>, Matrix) {
        let mut hidden = Vec::with_capacity(self.num_layers() - 1);
        let mut a = x.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = Matrix::zeros(a.rows(), w.rows());
            gemm(1.0, &a, false, w, true, 0.0, &mut z);
            for r in 0..z.rows() {
                for (v, bb) in z.row_mut(r).iter_mut().zip(b) {
                    *v += bb;
                }
            }
            if l + 1 < self.num_layers() {
                for v in z.as_mut_slice() {
                    *v = v.tanh();
                }
                hidden.push(z.clone());
            }
            a = z;
        }
        (hidden, a)
    }

    /// Evaluates the network on each row of `x`.
    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x.cols())?;
        let (_, out) = self.forward_trace(x);
        out.check_finite("mlp forward")?;
        Ok(out)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = self.forward_batch(&Matrix::row_vector(x))?;
        Ok(out.into_vec())
    }

    /// `d_out x d_in` Jacobian by multiplying layer Jacobians
    /// `W_L diag(1 - t_{L-1}^2) W_{L-1} ... diag(1 - t_1^2) W_1`.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<Matrix> {
        self.check_input(x.len())?;
        let (hidden, _) = self.forward_trace(&Matrix::row_vector(x));
        let mut jac = self.weights[0].clone();
        for (l, t) in hidden.iter().enumerate() {
            for r in 0..jac.rows() {
                let d = 1.0 - t[(0, r)] * t[(0, r)];
                for v in jac.row_mut(r) {
                    *v *= d;
                }
            }
            jac = self.weights[l + 1].matmul(&jac)?;
        }
        jac.check_finite("mlp input jacobian")?;
        Ok(jac)
    }

    /// Jacobian assembled column by column from forward-mode tangents `e_j`.
    pub fn input_jacobian_forward_mode(&self, x: &[f64]) -> Result<Matrix> {
        self.check_input(x.len())?;
        let (hidden, _) = self.forward_trace(&Matrix::row_vector(x));
        // Row j of `tan` is the tangent seeded by e_j.
        let mut tan = Matrix::identity(self.input_dim());
        for (l, w) in self.weights.iter().enumerate() {
            let mut next = Matrix::zeros(tan.rows(), w.rows());
            gemm(1.0, &tan, false, w, true, 0.0, &mut next);
            if let Some(t) = hidden.get(l) {
                for r in 0..next.rows() {
                    for (c, v) in next.row_mut(r).iter_mut().enumerate() {
                        *v *= 1.0 - t[(0, c)] * t[(0, c)];
                    }
                }
            }
            tan = next;
        }
        Ok(tan.transpose())
    }

    /// Jacobian assembled row by row from reverse-mode pullbacks of `e_i`.
    pub fn input_jacobian_reverse_mode(&self, x: &[f64]) -> Result<Matrix> {
        self.check_input(x.len())?;
        let (hidden, _) = self.forward_trace(&Matrix::row_vector(x));
        let mut cot = Matrix::identity(self.output_dim());
        for l in (0..self.num_layers()).rev() {
            let w = &self.weights[l];
            let mut prev = Matrix::zeros(cot.rows(), w.cols());
            gemm(1.0, &cot, false, w, false, 0.0, &mut prev);
            if l > 0 {
                let t = &hidden[l - 1];
                for r in 0..prev.rows() {
                    for (c, v) in prev.row_mut(r).iter_mut().enumerate() {
                        *v *= 1.0 - t[(0, c)] * t[(0, c)];
                    }
                }
            }
            cot = prev;
        }
        Ok(cot)
    }

    /// Records this network's parameters on `tape`, as trainable leaves or constants.
    pub fn to_tape(&self, tape: &mut Tape, trainable: bool) -> MlpVars {
        let mut leaf = |m: Matrix| {
            if trainable {
                tape.param(m)
            } else {
                tape.constant(m)
            }
        };
        let weights = self.weights.iter().map(|w| leaf(w.clone())).collect();
        let biases = self
            .biases
            .iter()
            .map(|b| leaf(Matrix::row_vector(b)))
            .collect();
        MlpVars { weights, biases }
    }
}

/// Tape handles for one network's parameters.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

/// Recorded forward pass: tanh outputs of hidden layers plus the output node.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub hidden: Vec<Var>,
    pub output: Var,
}

impl MlpVars {
    /// Views into a flat `1 x P` parameter node laid out in [`ParamVector`]
    /// order, starting at `offset`. Returns the handles and the next offset.
    pub fn from_flat(tape: &mut Tape, theta: Var, offset: usize, layer_sizes: &[usize]) -> (Self, usize) {
        let mut at = offset;
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        for w in layer_sizes.windows(2) {
            weights.push(tape.view(theta, at, w[1], w[0]));
            at += w[0] * w[1];
        }
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for &n in &layer_sizes[1..] {
            biases.push(tape.view(theta, at, 1, n));
            at += n;
        }
        (Self { weights, biases }, at)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> MlpTrace {
        let layers = self.weights.len();
        let mut hidden = Vec::with_capacity(layers - 1);
        let mut a = x;
        for l in 0..layers {
            let z = tape.linear(a, self.weights[l], Some(self.biases[l]));
            a = if l + 1 < layers {
                let t = tape.tanh(z);
                hidden.push(t);
                t
            } else {
                z
            };
        }
        MlpTrace { hidden, output: a }
    }

    /// Forward-mode tangent of the output along input tangent `dx`.
    pub fn jvp(&self, tape: &mut Tape, trace: &MlpTrace, dx: Var) -> Var {
        let mut a = dx;
        for (l, &w) in self.weights.iter().enumerate() {
            let p = tape.linear(a, w, None);
            a = match trace.hidden.get(l) {
                Some(&t) => tape.tanh_tangent(t, p),
                None => p,
            };
        }
        a
    }

    /// Input cotangent `J^T dy` for output cotangent `dy`.
    pub fn vjp(&self, tape: &mut Tape, trace: &MlpTrace, dy: Var) -> Var {
        let mut delta = dy;
        for l in (0..self.weights.len()).rev() {
            let back = tape.linear_t(delta, self.weights[l]);
            delta = if l > 0 {
                tape.tanh_tangent(trace.hidden[l - 1], back)
            } else {
                back
            };
        }
        delta
    }

    /// Appends adjoints of this network's parameters in [`ParamVector`] order.
    pub fn collect_grads(&self, tape: &Tape, adj: &super::tape::Adjoints, out: &mut Vec<f64>) {
        for &w in &self.weights {
            out.extend_from_slice(adj.get_or_zeros(w, tape.value(w)).as_slice());
        }
        for &b in &self.biases {
            out.extend_from_slice(adj.get_or_zeros(b, tape.value(b)).as_slice());
        }
    }
}
