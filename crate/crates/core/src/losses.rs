//! Training data, hyperparameters, and the three loss terms with their exact
//! parameter gradients.
//!
//! Loss values are accumulated per sample with compensated summation in
//! dataset order, so the value does not depend on how samples are chunked.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{norm2, CompensatedSum, Matrix, ParamVector, Tape};
use crate::transforms::{Prnn, Transform};

/// Samples processed per tape; bounds memory without changing results.
pub const DEFAULT_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub k_star: usize,
    /// Weights of the active-direction loss, `(0,...,0, 1,...,1)` with `k_star` zeros.
    pub omega: Vec<f64>,
    /// Include the bounded-derivative term for RevNet runs.
    #[serde(default)]
    pub revnet_bounded_derivative: bool,
}

impl HyperParams {
    /// Default weights (`lambda1 = lambda2 = 1`, `sigma = 0.01`, `alpha = 50`)
    /// with the leading-zeros `omega` pattern for `k_star` active coordinates.
    pub fn new(d: usize, k_star: usize) -> Result<Self> {
        let hp = Self {
            lambda1: 1.0,
            lambda2: 1.0,
            alpha: 50.0,
            sigma: 0.01,
            k_star,
            omega: Self::omega_pattern(d, k_star),
            revnet_bounded_derivative: false,
        };
        hp.validate(d)?;
        Ok(hp)
    }

    pub fn omega_pattern(d: usize, k_star: usize) -> Vec<f64> {
        (0..d).map(|i| if i < k_star { 0.0 } else { 1.0 }).collect()
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.k_star < 1 || self.k_star > d {
            return Err(Error::InvalidArgument(format!(
                "k_star must be in 1..={d}, got {}",
                self.k_star
            )));
        }
        if self.omega != Self::omega_pattern(d, self.k_star) {
            return Err(Error::InvalidArgument(format!(
                "omega must have {} leading zeros followed by ones over {d} entries",
                self.k_star
            )));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("alpha", self.alpha),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidArgument("sigma must be positive".into()));
        }
        Ok(())
    }
}

/// `N` samples of inputs, function values, and gradients on a box domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    values: Vec<f64>,
    gradients: Matrix,
    domain_lo: Vec<f64>,
    domain_hi: Vec<f64>,
}

impl Dataset {
    pub fn new(
        inputs: Matrix,
        values: Vec<f64>,
        gradients: Matrix,
        domain_lo: Vec<f64>,
        domain_hi: Vec<f64>,
    ) -> Result<Self> {
        let d = inputs.cols();
        if gradients.shape() != inputs.shape() {
            return Err(Error::DimensionMismatch {
                context: "Dataset gradients",
                expected: inputs.rows() * d,
                got: gradients.rows() * gradients.cols(),
            });
        }
        if values.len() != inputs.rows() {
            return Err(Error::DimensionMismatch {
                context: "Dataset values",
                expected: inputs.rows(),
                got: values.len(),
            });
        }
        if domain_lo.len() != d || domain_hi.len() != d {
            return Err(Error::DimensionMismatch {
                context: "Dataset domain bounds",
                expected: d,
                got: domain_lo.len().min(domain_hi.len()),
            });
        }
        for n in 0..inputs.rows() {
            for (j, &x) in inputs.row(n).iter().enumerate() {
                if !(domain_lo[j] <= x && x <= domain_hi[j]) {
                    return Err(Error::InvalidBounds(format!(
                        "sample {n} coordinate {j} = {x} outside [{}, {}]",
                        domain_lo[j], domain_hi[j]
                    )));
                }
            }
        }
        Ok(Self {
            inputs,
            values,
            gradients,
            domain_lo,
            domain_hi,
        })
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gradients(&self) -> &Matrix {
        &self.gradients
    }

    pub fn domain_lo(&self) -> &[f64] {
        &self.domain_lo
    }

    pub fn domain_hi(&self) -> &[f64] {
        &self.domain_hi
    }

    pub fn input(&self, n: usize) -> &[f64] {
        self.inputs.row(n)
    }

    pub fn gradient(&self, n: usize) -> &[f64] {
        self.gradients.row(n)
    }

    /// Copy with samples reordered as `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let rows = |m: &Matrix| -> Result<Matrix> {
            Matrix::from_rows(&order.iter().map(|&i| m.row(i)).collect::<Vec<_>>())
        };
        Dataset::new(
            rows(&self.inputs)?,
            order.iter().map(|&i| self.values[i]).collect(),
            rows(&self.gradients)?,
            self.domain_lo.clone(),
            self.domain_hi.clone(),
        )
    }

    /// Rows `start..end` as a dataset on the same domain.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let d = self.dim();
        Self {
            inputs: Matrix::from_vec(end - start, d, self.inputs.as_slice()[start * d..end * d].to_vec())
                .expect("slice"),
            values: self.values[start..end].to_vec(),
            gradients: Matrix::from_vec(
                end - start,
                d,
                self.gradients.as_slice()[start * d..end * d].to_vec(),
            )
            .expect("slice"),
            domain_lo: self.domain_lo.clone(),
            domain_hi: self.domain_hi.clone(),
        }
    }
}

/// `1 + alpha * exp(-grad_norm)`.
pub fn scaling_factor(grad_norm: f64, alpha: f64) -> f64 {
    1.0 + alpha * (-grad_norm).exp()
}

/// Individual loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

impl LossParts {
    /// `L1 + lambda1 L2 + lambda2 L3`.
    pub fn total(&self, hp: &HyperParams) -> f64 {
        self.l1 + hp.lambda1 * self.l2 + hp.lambda2 * self.l3
    }
}

/// Which terms enter the objective for a given transform.
#[derive(Debug, Clone, Copy)]
struct Terms {
    reversibility: bool,
    bounded_derivative: bool,
}

fn terms_for(t: &Transform, hp: &HyperParams) -> Terms {
    match t {
        Transform::Prnn(_) => Terms {
            reversibility: true,
            bounded_derivative: true,
        },
        Transform::RevNet(_) => Terms {
            reversibility: false,
            bounded_derivative: hp.revnet_bounded_derivative,
        },
    }
}

/// Evaluation result of [`loss_and_gradient`].
#[derive(Debug, Clone)]
pub struct LossEvaluation {
    pub total: f64,
    pub parts: LossParts,
    pub gradient: Option<ParamVector>,
}

/// Weights for each term's gradient contribution; zero skips the term.
#[derive(Debug, Clone, Copy)]
struct Seeds {
    l1: f64,
    l2: f64,
    l3: f64,
}

fn evaluate(
    t: &Transform,
    data: &Dataset,
    hp: &HyperParams,
    seeds: Option<Seeds>,
    chunk: usize,
) -> Result<(LossParts, Option<ParamVector>)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = data.dim();
    if t.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "loss transform dimension",
            expected: d,
            got: t.dim(),
        });
    }
    if hp.omega.len() != d {
        return Err(Error::DimensionMismatch {
            context: "omega length",
            expected: d,
            got: hp.omega.len(),
        });
    }
    if hp.k_star < 1 || hp.k_star > d {
        return Err(Error::InvalidArgument(format!("k_star {} outside 1..={d}", hp.k_star)));
    }
    if !(hp.sigma > 0.0) {
        return Err(Error::InvalidArgument("sigma must be positive".into()));
    }
    let terms = terms_for(t, hp);
    let n_total = data.len() as f64;
    let theta_vals = Matrix::row_vector(t.params().as_slice());
    let mut grad = seeds.map(|_| vec![0.0; theta_vals.cols()]);
    let (mut s1, mut s2, mut s3) = (CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new());
    let chunk = chunk.max(1);

    let mut start = 0;
    while start < data.len() {
        let end = (start + chunk).min(data.len());
        let b = end - start;
        let part = data.slice(start, end);
        let mut tape = Tape::new();
        let theta = if seeds.is_some() {
            tape.param(theta_vals.clone())
        } else {
            tape.constant(theta_vals.clone())
        };
        let x = tape.constant(part.inputs.clone());
        let gf = tape.constant(part.gradients.clone());
        let trace = t.record_loss_trace(&mut tape, theta, x, gf);
        let mut seed_list = Vec::new();

        if terms.reversibility {
            let recon = trace.reconstruction.expect("pseudo-reversible pair reconstructs");
            let r = tape.sub(x, recon);
            let sq = tape.square(r);
            let rows = tape.row_sum(sq);
            for &v in tape.value(rows).as_slice() {
                s1.add(v);
            }
            if let Some(s) = seeds.filter(|s| s.l1 != 0.0) {
                seed_list.push((rows, Matrix::filled(b, 1, s.l1 / n_total)));
            }
        }

        // Active-direction fit: gamma_n * sum_i (omega_i u_i)^2.
        let u = trace.projected_gradient;
        let omega = Matrix::from_rows(&vec![hp.omega.clone(); b])?;
        let omega = tape.constant(omega);
        let gamma: Vec<f64> = (0..b)
            .map(|n| scaling_factor(norm2(part.gradient(n)), hp.alpha))
            .collect();
        let gamma = tape.constant(Matrix::column_vector(&gamma));
        let masked = tape.mul(u, omega);
        let sq = tape.square(masked);
        let rows = tape.row_sum(sq);
        let l2_rows = tape.mul(rows, gamma);
        for &v in tape.value(l2_rows).as_slice() {
            s2.add(v);
        }
        if let Some(s) = seeds.filter(|s| s.l2 != 0.0) {
            seed_list.push((l2_rows, Matrix::filled(b, 1, s.l2 / n_total)));
        }

        if terms.bounded_derivative {
            let active = tape.columns(u, 0, hp.k_star);
            let norm = tape.row_norm(active);
            let shifted = tape.add_scalar(norm, -1.0);
            let scaled = tape.scale(shifted, 1.0 / hp.sigma);
            let l3_rows = tape.sigmoid(scaled);
            for &v in tape.value(l3_rows).as_slice() {
                s3.add(v);
            }
            if let Some(s) = seeds.filter(|s| s.l3 != 0.0) {
                seed_list.push((l3_rows, Matrix::filled(b, 1, s.l3 / n_total)));
            }
        }

        if let Some(acc) = grad.as_mut() {
            if !seed_list.is_empty() {
                let adj = tape.backward(&seed_list)?;
                if let Some(g) = adj.get(theta) {
                    for (a, v) in acc.iter_mut().zip(g.as_slice()) {
                        *a += v;
                    }
                }
            }
        }
        start = end;
    }

    let parts = LossParts {
        l1: s1.value() / n_total,
        l2: s2.value() / n_total,
        l3: s3.value() / n_total,
    };
    let grad = grad.map(ParamVector);
    if let Some(g) = &grad {
        if g.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("loss gradient".into()));
        }
    }
    Ok((parts, grad))
}

/// Total loss, its parts, and optionally the exact parameter gradient.
pub fn loss_and_gradient(
    t: &Transform,
    data: &Dataset,
    hp: &HyperParams,
    with_gradient: bool,
    chunk: usize,
) -> Result<LossEvaluation> {
    let terms = terms_for(t, hp);
    let seeds = with_gradient.then_some(Seeds {
        l1: if terms.reversibility { 1.0 } else { 0.0 },
        l2: hp.lambda1,
        l3: if terms.bounded_derivative { hp.lambda2 } else { 0.0 },
    });
    let (parts, gradient) = evaluate(t, data, hp, seeds, chunk)?;
    Ok(LossEvaluation {
        total: parts.total(hp),
        parts,
        gradient,
    })
}

/// `(1/N) sum ||x - h(g(x))||^2`.
pub fn loss_reversibility(p: &Prnn, data: &Dataset) -> Result<f64> {
    let t = Transform::Prnn(p.clone());
    let hp = HyperParams {
        lambda1: 0.0,
        lambda2: 0.0,
        alpha: 0.0,
        sigma: 1.0,
        k_star: 1,
        omega: HyperParams::omega_pattern(data.dim(), 1),
        revnet_bounded_derivative: false,
    };
    Ok(evaluate(&t, data, &hp, None, DEFAULT_CHUNK)?.0.l1)
}

/// `(1/N) sum_n gamma_n sum_i [omega_i <J_i(z_n), grad f(x_n)>]^2`.
pub fn loss_active_fit(t: &Transform, data: &Dataset, hp: &HyperParams) -> Result<f64> {
    Ok(evaluate(t, data, hp, None, DEFAULT_CHUNK)?.0.l2)
}

/// `(1/N) sum_n sigmoid((||s_n|| - 1) / sigma)` with `s_n` the first `k_star`
/// entries of `J(z_n)^T grad f(x_n)`.
pub fn loss_bounded_derivative(p: &Prnn, data: &Dataset, hp: &HyperParams) -> Result<f64> {
    let t = Transform::Prnn(p.clone());
    Ok(evaluate(&t, data, hp, None, DEFAULT_CHUNK)?.0.l3)
}

/// Total loss and its parts; see [`LossParts::total`].
pub fn loss_total(t: &Transform, data: &Dataset, hp: &HyperParams) -> Result<(f64, LossParts)> {
    let e = loss_and_gradient(t, data, hp, false, DEFAULT_CHUNK)?;
    Ok((e.total, e.parts))
}

/// Exact gradient of [`loss_total`] with respect to all trainable parameters.
pub fn loss_gradient(t: &Transform, data: &Dataset, hp: &HyperParams) -> Result<ParamVector> {
    let e = loss_and_gradient(t, data, hp, true, DEFAULT_CHUNK)?;
    Ok(e.gradient.expect("gradient requested"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mlp;
    use crate::transforms::RevNet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset {
        let x: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Dataset::new(
            Matrix::from_vec(n, d, x).unwrap(),
            v,
            Matrix::from_vec(n, d, g).unwrap(),
            vec![-1.0; d],
            vec![1.0; d],
        )
        .unwrap()
    }

    fn identity_prnn(d: usize) -> Prnn {
        let mut g = Mlp::zeros(&[d, d]).unwrap();
        g.weights_mut()[0] = Matrix::identity(d);
        Prnn::new(g.clone(), g).unwrap()
    }

    #[test]
    fn scaling_factor_examples() {
        assert_eq!(scaling_factor(0.0, 50.0), 51.0);
        assert_eq!(scaling_factor(3.7, 0.0), 1.0);
        assert!((scaling_factor(2f64.ln(), 2.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn omega_pattern_and_validation() {
        let hp = HyperParams::new(4, 1).unwrap();
        assert_eq!(hp.omega, vec![0.0, 1.0, 1.0, 1.0]);
        assert!(HyperParams::new(4, 0).is_err());
        assert!(HyperParams::new(4, 5).is_err());
        let mut bad = hp.clone();
        bad.omega = vec![1.0, 0.0, 1.0, 1.0];
        assert!(bad.validate(4).is_err());
    }

    #[test]
    fn reversibility_zero_for_identity_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = random_dataset(&mut rng, 10, 3);
        assert_eq!(loss_reversibility(&identity_prnn(3), &data).unwrap(), 0.0);
    }

    #[test]
    fn reversibility_hand_value() {
        // h(g(x)) = 0 via zero h; residuals are the inputs themselves.
        let d = 2;
        let g = Mlp::zeros(&[d, d]).unwrap();
        let p = Prnn::new(g.clone(), g).unwrap();
        let data = Dataset::new(
            Matrix::from_vec(2, 2, vec![0.5, 0.5, 0.0, 0.0]).unwrap(),
            vec![0.0, 0.0],
            Matrix::zeros(2, 2),
            vec![-1.0; 2],
            vec![1.0; 2],
        )
        .unwrap();
        assert_eq!(loss_reversibility(&p, &data).unwrap(), 0.25);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let data = Dataset::new(Matrix::zeros(0, 2), vec![], Matrix::zeros(0, 2), vec![0.0; 2], vec![1.0; 2]).unwrap();
        assert!(matches!(loss_reversibility(&identity_prnn(2), &data), Err(Error::EmptyDataset)));
    }

    #[test]
    fn active_fit_hand_value() {
        // h = identity so J = I and J_2 = e_2; use a swap to make J_2 = (1, 0).
        let mut h = Mlp::zeros(&[2, 2]).unwrap();
        h.weights_mut()[0] = Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let p = Prnn::new(h.clone(), h).unwrap();
        let data = Dataset::new(
            Matrix::from_vec(1, 2, vec![0.1, 0.2]).unwrap(),
            vec![0.0],
            Matrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap(),
            vec![-1.0; 2],
            vec![1.0; 2],
        )
        .unwrap();
        let mut hp = HyperParams::new(2, 1).unwrap();
        hp.alpha = 0.0;
        assert_eq!(loss_active_fit(&Transform::Prnn(p), &data, &hp).unwrap(), 9.0);
    }

    #[test]
    fn active_fit_masked_or_zero_gradient_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = random_dataset(&mut rng, 8, 3);
        let t = Transform::Prnn(Prnn::random(&Prnn::architecture(3, 2, 4), &mut rng).unwrap());
        let mut hp = HyperParams::new(3, 3).unwrap();
        assert_eq!(loss_active_fit(&t, &data, &hp).unwrap(), 0.0);

        let zero_grad = Dataset::new(
            data.inputs().clone(),
            data.values().to_vec(),
            Matrix::zeros(8, 3),
            vec![-1.0; 3],
            vec![1.0; 3],
        )
        .unwrap();
        hp = HyperParams::new(3, 1).unwrap();
        hp.alpha = 0.0;
        assert_eq!(loss_active_fit(&t, &zero_grad, &hp).unwrap(), 0.0);
    }

    #[test]
    fn bounded_derivative_hand_values() {
        let p = identity_prnn(2);
        let mk = |g: [f64; 2]| {
            Dataset::new(
                Matrix::from_vec(1, 2, vec![0.0, 0.0]).unwrap(),
                vec![0.0],
                Matrix::from_vec(1, 2, g.to_vec()).unwrap(),
                vec![-1.0; 2],
                vec![1.0; 2],
            )
            .unwrap()
        };
        let hp = HyperParams::new(2, 1).unwrap();
        // With J = I, s = first gradient component.
        assert_eq!(loss_bounded_derivative(&p, &mk([1.0, 0.3]), &hp).unwrap(), 0.5);
        let v = loss_bounded_derivative(&p, &mk([0.0, 0.3]), &hp).unwrap();
        assert!(v < 1e-43 && v > 0.0);
        let v = loss_bounded_derivative(&p, &mk([1.01, 0.0]), &hp).unwrap();
        assert!((v - 0.7310585786300049).abs() < 1e-9);
    }

    #[test]
    fn total_recombines_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = random_dataset(&mut rng, 12, 2);
        let t = Transform::Prnn(Prnn::random(&Prnn::architecture(2, 2, 5), &mut rng).unwrap());
        let mut hp = HyperParams::new(2, 1).unwrap();
        hp.lambda1 = 0.7;
        hp.lambda2 = 1.3;
        let (total, parts) = loss_total(&t, &data, &hp).unwrap();
        assert_eq!(total.to_bits(), (parts.l1 + 0.7 * parts.l2 + 1.3 * parts.l3).to_bits());
        hp.lambda1 = 0.0;
        hp.lambda2 = 0.0;
        let (total, parts) = loss_total(&t, &data, &hp).unwrap();
        assert_eq!(total, parts.l1);
        assert!(parts.l3 < 1.0 && parts.l1 >= 0.0 && parts.l2 >= 0.0);
    }

    #[test]
    fn revnet_total_is_active_fit_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = random_dataset(&mut rng, 12, 2);
        let t = Transform::RevNet(RevNet::default_for(2, &mut rng).unwrap());
        let hp = HyperParams::new(2, 1).unwrap();
        let (total, parts) = loss_total(&t, &data, &hp).unwrap();
        assert_eq!(parts.l1, 0.0);
        assert_eq!(parts.l3, 0.0);
        assert_eq!(total, hp.lambda1 * parts.l2);
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = random_dataset(&mut rng, 6, 2);
        let data = Dataset::new(
            base.inputs().clone(),
            base.values().to_vec(),
            Matrix::zeros(6, 2),
            vec![-1.0; 2],
            vec![1.0; 2],
        )
        .unwrap();
        let mut hp = HyperParams::new(2, 2).unwrap();
        hp.lambda2 = 0.0;
        let t = Transform::Prnn(identity_prnn(2));
        let g = loss_gradient(&t, &data, &hp).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn chunking_does_not_change_value_or_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = random_dataset(&mut rng, 37, 3);
        let t = Transform::Prnn(Prnn::random(&Prnn::architecture(3, 2, 6), &mut rng).unwrap());
        let hp = HyperParams::new(3, 1).unwrap();
        let a = loss_and_gradient(&t, &data, &hp, true, 1024).unwrap();
        let b = loss_and_gradient(&t, &data, &hp, true, 5).unwrap();
        assert!((a.total - b.total).abs() < 1e-12 * a.total.abs().max(1.0));
        let ga = a.gradient.unwrap();
        let gb = b.gradient.unwrap();
        for (x, y) in ga.as_slice().iter().zip(gb.as_slice()) {
            assert!((x - y).abs() < 1e-10 * x.abs().max(1.0));
        }
    }

    fn fd_gradient(t: &Transform, data: &Dataset, hp: &HyperParams) -> Vec<f64> {
        let theta = t.params();
        let h = 1e-6;
        (0..theta.len())
            .map(|k| {
                let mut tp = t.clone();
                let mut tm = t.clone();
                let mut p = theta.clone();
                p.0[k] += h;
                tp.set_params(&p).unwrap();
                p.0[k] -= 2.0 * h;
                tm.set_params(&p).unwrap();
                let fp = loss_total(&tp, data, hp).unwrap().0;
                let fm = loss_total(&tm, data, hp).unwrap().0;
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / y.abs().max(1e-3 * scale))
            .fold(0.0, f64::max)
    }

    #[test]
    fn gradient_matches_finite_differences_per_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = random_dataset(&mut rng, 9, 2);
        let t = Transform::Prnn(Prnn::random(&Prnn::architecture(2, 2, 5), &mut rng).unwrap());
        let mut hp = HyperParams::new(2, 1).unwrap();
        // Keep the sigmoid out of saturation so its gradient is visible.
        hp.sigma = 2.0;
        hp.alpha = 3.0;
        for (l1, l2) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (0.8, 1.5)] {
            hp.lambda1 = l1;
            hp.lambda2 = l2;
            let g = loss_gradient(&t, &data, &hp).unwrap();
            let fd = fd_gradient(&t, &data, &hp);
            let err = max_rel_err(g.as_slice(), &fd);
            assert!(err < 1e-4, "lambda=({l1},{l2}) rel err {err}");
        }
    }

    #[test]
    fn revnet_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = random_dataset(&mut rng, 7, 3);
        let t = Transform::RevNet(RevNet::random(3, 3, 4, 0.25, &mut rng).unwrap());
        let mut hp = HyperParams::new(3, 1).unwrap();
        hp.alpha = 2.0;
        let g = loss_gradient(&t, &data, &hp).unwrap();
        let fd = fd_gradient(&t, &data, &hp);
        assert!(max_rel_err(g.as_slice(), &fd) < 1e-4);
        hp.revnet_bounded_derivative = true;
        hp.sigma = 1.5;
        let g = loss_gradient(&t, &data, &hp).unwrap();
        let fd = fd_gradient(&t, &data, &hp);
        assert!(max_rel_err(g.as_slice(), &fd) < 1e-4);
    }

    #[test]
    fn value_is_independent_of_sample_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let data = random_dataset(&mut rng, 50, 2);
        let t = Transform::Prnn(Prnn::random(&Prnn::architecture(2, 2, 4), &mut rng).unwrap());
        let hp = HyperParams::new(2, 1).unwrap();
        let mut order: Vec<usize> = (0..50).collect();
        order.reverse();
        order.swap(3, 17);
        let a = loss_total(&t, &data, &hp).unwrap();
        let b = loss_total(&t, &data.permuted(&order).unwrap(), &hp).unwrap();
        assert!((a.0 - b.0).abs() <= 1e-12 * a.0.abs().max(1.0));
    }

    #[test]
    fn gradient_term_scales_linearly_in_lambda1() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = random_dataset(&mut rng, 10, 2);
        let t = Transform::Prnn(Prnn::random(&Prnn::architecture(2, 2, 4), &mut rng).unwrap());
        let mut hp = HyperParams::new(2, 1).unwrap();
        hp.lambda2 = 0.0;
        hp.lambda1 = 0.0;
        let g0 = loss_gradient(&t, &data, &hp).unwrap();
        hp.lambda1 = 1.0;
        let g1 = loss_gradient(&t, &data, &hp).unwrap();
        hp.lambda1 = 3.0;
        let g3 = loss_gradient(&t, &data, &hp).unwrap();
        for k in 0..g0.len() {
            let d1 = g1.0[k] - g0.0[k];
            let d3 = g3.0[k] - g0.0[k];
            assert!((d3 - 3.0 * d1).abs() < 1e-10 * d1.abs().max(1e-8) + 1e-12);
        }
    }
}
