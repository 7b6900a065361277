//! Input-space transformations: the pseudo-reversible pair `(g, h)` and the
//! exactly invertible RevNet baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Matrix, Mlp, MlpVars, ParamVector, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Prnn,
    RevNet,
}

impl TransformKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TransformKind::Prnn => "prnn",
            TransformKind::RevNet => "revnet",
        }
    }
}

impl std::str::FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "prnn" => Ok(TransformKind::Prnn),
            "revnet" => Ok(TransformKind::RevNet),
            other => Err(Error::InvalidArgument(format!("unknown transform kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for TransformKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Pseudo-reversible network: `z = g(x)`, `x_hat = h(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prnn {
    g: Mlp,
    h: Mlp,
}

impl Prnn {
    pub fn new(g: Mlp, h: Mlp) -> Result<Self> {
        if g.layer_sizes() != h.layer_sizes() {
            return Err(Error::InvalidArgument(
                "g and h must share one architecture".into(),
            ));
        }
        if g.input_dim() != g.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "Prnn output dimension",
                expected: g.input_dim(),
                got: g.output_dim(),
            });
        }
        Ok(Self { g, h })
    }

    /// Layer sizes `[d, width x hidden_layers, d]`.
    pub fn architecture(d: usize, hidden_layers: usize, width: usize) -> Vec<usize> {
        let mut sizes = vec![d];
        sizes.extend(std::iter::repeat_n(width, hidden_layers));
        sizes.push(d);
        sizes
    }

    /// Default sizing: `10 d` neurons per hidden layer, four hidden layers, two when `d == 2`.
    pub fn default_architecture(d: usize) -> Vec<usize> {
        let layers = if d == 2 { 2 } else { 4 };
        Self::architecture(d, layers, 10 * d)
    }

    pub fn random<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        let g = Mlp::glorot(layer_sizes, rng)?;
        let h = Mlp::glorot(layer_sizes, rng)?;
        Self::new(g, h)
    }

    pub fn g(&self) -> &Mlp {
        &self.g
    }

    pub fn h(&self) -> &Mlp {
        &self.h
    }

    pub fn g_mut(&mut self) -> &mut Mlp {
        &mut self.g
    }

    pub fn h_mut(&mut self) -> &mut Mlp {
        &mut self.h
    }

    pub fn dim(&self) -> usize {
        self.g.input_dim()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        self.g.layer_sizes()
    }
}

/// One coupling block acting on the split state `(u, v)`:
/// `u += step * tanh(v K1^T + b1) K2`, then `v += step * tanh(u L1^T + b2) L2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RevBlock {
    pub k1: Matrix,
    pub b1: Vec<f64>,
    pub k2: Matrix,
    pub l1: Matrix,
    pub b2: Vec<f64>,
    pub l2: Matrix,
}

/// Reversible residual network with exact algebraic inverse.
///
/// Odd `d` is handled by appending a zero coordinate to the second half of
/// the state. The update of that coordinate is masked, so it stays zero and
/// can be stripped at the interface without losing invertibility; in storage
/// this means the two halves have sizes `ceil(d/2)` and `floor(d/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RevNet {
    d: usize,
    step_size: f64,
    hidden: usize,
    blocks: Vec<RevBlock>,
}

fn coupling(a: &Matrix, k: &Matrix, b: &[f64], out_w: &Matrix, step: f64, target: &mut Matrix) {
    let mut pre = Matrix::zeros(a.rows(), k.rows());
    gemm(1.0, a, false, k, true, 0.0, &mut pre);
    for r in 0..pre.rows() {
        for (v, bb) in pre.row_mut(r).iter_mut().zip(b) {
            *v = (*v + bb).tanh();
        }
    }
    gemm(step, &pre, false, out_w, false, 1.0, target);
}

impl RevNet {
    /// Network of `num_blocks` blocks with `hidden` neurons per coupling, all parameters zero.
    pub fn zeros(d: usize, num_blocks: usize, hidden: usize, step_size: f64) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidArgument("RevNet needs d >= 2".into()));
        }
        if !(step_size.is_finite() && step_size > 0.0) {
            return Err(Error::InvalidArgument("RevNet step size must be positive".into()));
        }
        let nu = d.div_ceil(2);
        let nv = d - nu;
        let block = RevBlock {
            k1: Matrix::zeros(hidden, nv),
            b1: vec![0.0; hidden],
            k2: Matrix::zeros(hidden, nu),
            l1: Matrix::zeros(hidden, nu),
            b2: vec![0.0; hidden],
            l2: Matrix::zeros(hidden, nv),
        };
        Ok(Self {
            d,
            step_size,
            hidden,
            blocks: vec![block; num_blocks],
        })
    }

    /// Glorot-uniform coupling weights, zero biases.
    pub fn random<R: Rng + ?Sized>(
        d: usize,
        num_blocks: usize,
        hidden: usize,
        step_size: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(d, num_blocks, hidden, step_size)?;
        for b in &mut net.blocks {
            for m in [&mut b.k1, &mut b.k2, &mut b.l1, &mut b.l2] {
                let limit = (6.0 / (m.rows() + m.cols()).max(1) as f64).sqrt();
                for v in m.as_mut_slice() {
                    *v = rng.gen_range(-limit..limit);
                }
            }
        }
        Ok(net)
    }

    /// Ten blocks, `d` rounded up to even neurons per coupling, step 0.25.
    pub fn default_for(d: usize, rng: &mut (impl Rng + ?Sized)) -> Result<Self> {
        Self::random(d, 10, d + d % 2, 0.25, rng)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn padded_dim(&self) -> usize {
        self.d + self.d % 2
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn blocks(&self) -> &[RevBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [RevBlock] {
        &mut self.blocks
    }

    fn halves(&self) -> (usize, usize) {
        let nu = self.d.div_ceil(2);
        (nu, self.d - nu)
    }

    pub fn param_count(&self) -> usize {
        let (nu, nv) = self.halves();
        let m = self.hidden;
        self.blocks.len() * (m * nv + m + m * nu + m * nu + m + m * nv)
    }

    /// Block by block: `K1, b1, K2, L1, b2, L2`.
    pub fn flatten(&self) -> ParamVector {
        let mut out = Vec::with_capacity(self.param_count());
        for b in &self.blocks {
            out.extend_from_slice(b.k1.as_slice());
            out.extend_from_slice(&b.b1);
            out.extend_from_slice(b.k2.as_slice());
            out.extend_from_slice(b.l1.as_slice());
            out.extend_from_slice(&b.b2);
            out.extend_from_slice(b.l2.as_slice());
        }
        ParamVector(out)
    }

    pub fn load_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "RevNet::load_params",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let n = dst.len();
            dst.copy_from_slice(&rest[..n]);
            rest = &rest[n..];
        };
        for b in &mut self.blocks {
            take(b.k1.as_mut_slice());
            take(&mut b.b1);
            take(b.k2.as_mut_slice());
            take(b.l1.as_mut_slice());
            take(&mut b.b2);
            take(b.l2.as_mut_slice());
        }
        Ok(())
    }

    fn split(&self, x: &Matrix) -> (Matrix, Matrix) {
        let (nu, nv) = self.halves();
        (x.columns(0, nu), x.columns(nu, nv))
    }

    fn join(u: &Matrix, v: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(u.rows(), u.cols() + v.cols());
        for r in 0..u.rows() {
            let row = out.row_mut(r);
            row[..u.cols()].copy_from_slice(u.row(r));
            row[u.cols()..].copy_from_slice(v.row(r));
        }
        out
    }

    pub fn forward_batch(&self, x: &Matrix) -> Matrix {
        let (mut u, mut v) = self.split(x);
        let s = self.step_size;
        for b in &self.blocks {
            coupling(&v, &b.k1, &b.b1, &b.k2, s, &mut u);
            coupling(&u, &b.l1, &b.b2, &b.l2, s, &mut v);
        }
        Self::join(&u, &v)
    }

    pub fn inverse_batch(&self, z: &Matrix) -> Matrix {
        let (mut u, mut v) = self.split(z);
        let s = self.step_size;
        for b in self.blocks.iter().rev() {
            coupling(&u, &b.l1, &b.b2, &b.l2, -s, &mut v);
            coupling(&v, &b.k1, &b.b1, &b.k2, -s, &mut u);
        }
        Self::join(&u, &v)
    }
}

/// Handles of one RevNet block's parameters on a tape.
struct RevBlockVars {
    k1: Var,
    b1: Var,
    k2: Var,
    l1: Var,
    b2: Var,
    l2: Var,
}

/// Tape nodes needed by the loss terms for one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossTrace {
    /// Transformed inputs `z`.
    pub z: Var,
    /// `h(g(x))` for the pseudo-reversible pair; `None` for RevNet.
    pub reconstruction: Option<Var>,
    /// Row-wise `u_i = <J_i(z), grad f(x)>`, i.e. `J(z)^T grad f(x)` for the
    /// Jacobian `J` of the (pseudo-)inverse map.
    pub projected_gradient: Var,
}

/// A trainable input-space transformation.
#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Prnn(Prnn),
    RevNet(RevNet),
}

impl From<Prnn> for Transform {
    fn from(p: Prnn) -> Self {
        Transform::Prnn(p)
    }
}

impl From<RevNet> for Transform {
    fn from(r: RevNet) -> Self {
        Transform::RevNet(r)
    }
}

impl Transform {
    pub fn kind(&self) -> TransformKind {
        match self {
            Transform::Prnn(_) => TransformKind::Prnn,
            Transform::RevNet(_) => TransformKind::RevNet,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Transform::Prnn(p) => p.dim(),
            Transform::RevNet(r) => r.dim(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Transform::Prnn(p) => p.g.param_count() + p.h.param_count(),
            Transform::RevNet(r) => r.param_count(),
        }
    }

    /// Trainable parameters: `g` then `h` for the pair, block order for RevNet.
    pub fn params(&self) -> ParamVector {
        match self {
            Transform::Prnn(p) => {
                let mut out = Vec::with_capacity(self.param_count());
                p.g.flatten_into(&mut out);
                p.h.flatten_into(&mut out);
                ParamVector(out)
            }
            Transform::RevNet(r) => r.flatten(),
        }
    }

    pub fn set_params(&mut self, theta: &ParamVector) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "Transform::set_params",
                expected: self.param_count(),
                got: theta.len(),
            });
        }
        match self {
            Transform::Prnn(p) => {
                let rest = p.g.load_params(theta.as_slice())?;
                p.h.load_params(rest)?;
            }
            Transform::RevNet(r) => r.load_params(theta.as_slice())?,
        }
        Ok(())
    }

    fn check_cols(&self, cols: usize, context: &'static str) -> Result<()> {
        if cols != self.dim() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.dim(),
                got: cols,
            });
        }
        Ok(())
    }

    /// `z` for each row of `x`.
    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        self.check_cols(x.cols(), "transform forward")?;
        let z = match self {
            Transform::Prnn(p) => p.g.forward_batch(x)?,
            Transform::RevNet(r) => r.forward_batch(x),
        };
        z.check_finite("transform forward")?;
        Ok(z)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&Matrix::row_vector(x))?.into_vec())
    }

    /// `h(z)` for the pair; the exact inverse for RevNet.
    pub fn pseudo_inverse_batch(&self, z: &Matrix) -> Result<Matrix> {
        self.check_cols(z.cols(), "transform pseudo-inverse")?;
        let x = match self {
            Transform::Prnn(p) => p.h.forward_batch(z)?,
            Transform::RevNet(r) => r.inverse_batch(z),
        };
        x.check_finite("transform pseudo-inverse")?;
        Ok(x)
    }

    pub fn pseudo_inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.pseudo_inverse_batch(&Matrix::row_vector(z))?.into_vec())
    }

    /// `d x d` Jacobian of the (pseudo-)inverse at `z`; column `i` is `J_i(z)`.
    pub fn pseudo_inverse_jacobian(&self, z: &[f64]) -> Result<Matrix> {
        self.check_cols(z.len(), "transform pseudo-inverse jacobian")?;
        match self {
            Transform::Prnn(p) => p.h.input_jacobian(z),
            Transform::RevNet(_) => {
                // Row i of the inverse Jacobian is the pullback of e_i.
                let d = self.dim();
                let zs = Matrix::from_rows(&vec![z.to_vec(); d])?;
                let jac = self.projected_gradients(&zs, &Matrix::identity(d))?;
                jac.check_finite("transform pseudo-inverse jacobian")?;
                Ok(jac)
            }
        }
    }

    /// Row-wise `J(z)^T c` for cotangents `c`, where `J` is the Jacobian of
    /// the (pseudo-)inverse map; entry `i` of each row equals `<J_i(z), c>`.
    pub fn projected_gradients(&self, z: &Matrix, cot: &Matrix) -> Result<Matrix> {
        self.check_cols(z.cols(), "projected gradients")?;
        self.check_cols(cot.cols(), "projected gradients cotangent")?;
        let mut tape = Tape::new();
        let theta = tape.constant(Matrix::row_vector(self.params().as_slice()));
        let zv = tape.constant(z.clone());
        let cv = tape.constant(cot.clone());
        let u = match self {
            Transform::Prnn(p) => {
                let (h, _) = MlpVars::from_flat(&mut tape, theta, p.g.param_count(), p.h.layer_sizes());
                let tr = h.forward(&mut tape, zv);
                h.vjp(&mut tape, &tr, cv)
            }
            Transform::RevNet(r) => {
                let vars = r.tape_vars(&mut tape, theta);
                let traces = r.tape_inverse(&mut tape, &vars, zv);
                r.tape_inverse_vjp(&mut tape, &vars, &traces.1, cv)
            }
        };
        let out = tape.value(u).clone();
        out.check_finite("projected gradients")?;
        Ok(out)
    }

    /// Records the quantities the losses need for inputs `x` and gradients
    /// `grad_f` (both `B x d` constants) against the flat parameter node `theta`.
    pub fn record_loss_trace(&self, tape: &mut Tape, theta: Var, x: Var, grad_f: Var) -> LossTrace {
        match self {
            Transform::Prnn(p) => {
                let (g, next) = MlpVars::from_flat(tape, theta, 0, p.g.layer_sizes());
                let (h, _) = MlpVars::from_flat(tape, theta, next, p.h.layer_sizes());
                let z = g.forward(tape, x).output;
                let h_trace = h.forward(tape, z);
                let u = h.vjp(tape, &h_trace, grad_f);
                LossTrace {
                    z,
                    reconstruction: Some(h_trace.output),
                    projected_gradient: u,
                }
            }
            Transform::RevNet(r) => {
                let vars = r.tape_vars(tape, theta);
                let z = r.tape_forward(tape, &vars, x);
                let (_, traces) = r.tape_inverse(tape, &vars, z);
                let u = r.tape_inverse_vjp(tape, &vars, &traces, grad_f);
                LossTrace {
                    z,
                    reconstruction: None,
                    projected_gradient: u,
                }
            }
        }
    }
}

impl RevNet {
    fn tape_vars(&self, tape: &mut Tape, theta: Var) -> Vec<RevBlockVars> {
        let (nu, nv) = self.halves();
        let m = self.hidden;
        let mut at = 0;
        let mut view = |rows: usize, cols: usize| {
            let v = tape.view(theta, at, rows, cols);
            at += rows * cols;
            v
        };
        self.blocks
            .iter()
            .map(|_| RevBlockVars {
                k1: view(m, nv),
                b1: view(1, m),
                k2: view(m, nu),
                l1: view(m, nu),
                b2: view(1, m),
                l2: view(m, nv),
            })
            .collect()
    }

    fn tape_forward(&self, tape: &mut Tape, vars: &[RevBlockVars], x: Var) -> Var {
        let (nu, nv) = self.halves();
        let s = self.step_size;
        let mut u = tape.columns(x, 0, nu);
        let mut v = tape.columns(x, nu, nv);
        for b in vars {
            let pre = tape.linear(v, b.k1, Some(b.b1));
            let t = tape.tanh(pre);
            let du = tape.linear_t(t, b.k2);
            let du = tape.scale(du, s);
            u = tape.add(u, du);
            let pre = tape.linear(u, b.l1, Some(b.b2));
            let t = tape.tanh(pre);
            let dv = tape.linear_t(t, b.l2);
            let dv = tape.scale(dv, s);
            v = tape.add(v, dv);
        }
        tape.concat_cols(u, v)
    }

    /// Inverse pass from `z`; returns the reconstruction and, per block in
    /// execution order (last block first), the tanh outputs of the `v` and
    /// `u` substeps.
    fn tape_inverse(&self, tape: &mut Tape, vars: &[RevBlockVars], z: Var) -> (Var, Vec<(Var, Var)>) {
        let (nu, nv) = self.halves();
        let s = self.step_size;
        let mut u = tape.columns(z, 0, nu);
        let mut v = tape.columns(z, nu, nv);
        let mut traces = Vec::with_capacity(vars.len());
        for b in vars.iter().rev() {
            let pre = tape.linear(u, b.l1, Some(b.b2));
            let tv = tape.tanh(pre);
            let dv = tape.linear_t(tv, b.l2);
            let dv = tape.scale(dv, s);
            v = tape.sub(v, dv);
            let pre = tape.linear(v, b.k1, Some(b.b1));
            let tu = tape.tanh(pre);
            let du = tape.linear_t(tu, b.k2);
            let du = tape.scale(du, s);
            u = tape.sub(u, du);
            traces.push((tv, tu));
        }
        (tape.concat_cols(u, v), traces)
    }

    /// Pullback of the cotangent `cot` through the recorded inverse pass.
    fn tape_inverse_vjp(
        &self,
        tape: &mut Tape,
        vars: &[RevBlockVars],
        traces: &[(Var, Var)],
        cot: Var,
    ) -> Var {
        let (nu, nv) = self.halves();
        let s = self.step_size;
        let mut ub = tape.columns(cot, 0, nu);
        let mut vb = tape.columns(cot, nu, nv);
        // traces[j] belongs to block vars.len() - 1 - j; walk execution backwards.
        for (j, b) in vars.iter().enumerate() {
            let (tv, tu) = traces[vars.len() - 1 - j];
            // u_out = u_in - s * tanh(v K1^T + b1) K2
            let a = tape.linear(ub, b.k2, None);
            let a = tape.tanh_tangent(tu, a);
            let a = tape.linear_t(a, b.k1);
            let a = tape.scale(a, s);
            vb = tape.sub(vb, a);
            // v_out = v_in - s * tanh(u L1^T + b2) L2
            let a = tape.linear(vb, b.l2, None);
            let a = tape.tanh_tangent(tv, a);
            let a = tape.linear_t(a, b.l1);
            let a = tape.scale(a, s);
            ub = tape.sub(ub, a);
        }
        tape.concat_cols(ub, vb)
    }
}
