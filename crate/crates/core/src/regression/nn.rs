use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{value_and_grad, Matrix, Mlp, MlpVars, ParamVector};
use crate::training::{adam_step, AdamConstants, AdamState, StepDecay};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub steps: usize,
    pub learning_rate: StepDecay,
    /// Stop once the standardized mean squared error is at or below this.
    pub stop_threshold: f64,
    pub seed: u64,
}

impl Default for NnConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 3,
            width: 20,
            steps: 20_000,
            learning_rate: StepDecay::default(),
            stop_threshold: 1e-10,
            seed: 0,
        }
    }
}

/// Tanh regression network on standardized inputs and outputs.
#[derive(Debug, Clone)]
pub struct NnRegressor {
    net: Mlp,
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
}

fn standardize(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

impl NnRegressor {
    /// Full-batch Adam on the mean squared error.
    pub fn fit(inputs: &Matrix, targets: &[f64], cfg: &NnConfig) -> Result<Self> {
        let (n, k) = inputs.shape();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if targets.len() != n {
            return Err(Error::DimensionMismatch {
                context: "nn targets",
                expected: n,
                got: targets.len(),
            });
        }
        let mut x_mean = Vec::with_capacity(k);
        let mut x_scale = Vec::with_capacity(k);
        for c in 0..k {
            let (m, s) = standardize(&inputs.column(c));
            x_mean.push(m);
            x_scale.push(s);
        }
        let (y_mean, y_scale) = standardize(targets);
        let xs = Matrix::from_vec(
            n,
            k,
            (0..n * k).map(|i| (inputs.as_slice()[i] - x_mean[i % k]) / x_scale[i % k]).collect(),
        )?;
        let ys = Matrix::column_vector(&targets.iter().map(|y| (y - y_mean) / y_scale).collect::<Vec<_>>());

        let mut sizes = vec![k];
        sizes.extend(std::iter::repeat_n(cfg.width, cfg.hidden_layers));
        sizes.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = Mlp::glorot(&sizes, &mut rng)?;
        let mut theta = net.flatten();
        let mut state = AdamState::new(theta.len(), AdamConstants::default());
        let inv_n = 1.0 / n as f64;
        for step in 0..cfg.steps {
            let (loss, grad) = value_and_grad(
                |tape, p| {
                    let (vars, _) = MlpVars::from_flat(tape, p, 0, &sizes);
                    let x = tape.constant(xs.clone());
                    let y = tape.constant(ys.clone());
                    let out = vars.forward(tape, x).output;
                    let r = tape.sub(out, y);
                    let sq = tape.square(r);
                    let s = tape.sum_all(sq);
                    tape.scale(s, inv_n)
                },
                &theta,
            )?;
            if loss <= cfg.stop_threshold {
                break;
            }
            adam_step(&mut theta.0, grad.as_slice(), &mut state, cfg.learning_rate.lr(step))?;
        }
        Ok(Self {
            net: Mlp::unflatten(&sizes, &ParamVector(theta.0))?,
            x_mean,
            x_scale,
            y_mean,
            y_scale,
        })
    }

    pub fn predict_batch(&self, inputs: &Matrix) -> Result<Vec<f64>> {
        let k = self.x_mean.len();
        if inputs.cols() != k {
            return Err(Error::DimensionMismatch {
                context: "nn query",
                expected: k,
                got: inputs.cols(),
            });
        }
        let xs = Matrix::from_vec(
            inputs.rows(),
            k,
            inputs
                .as_slice()
                .iter()
                .enumerate()
                .map(|(i, v)| (v - self.x_mean[i % k]) / self.x_scale[i % k])
                .collect(),
        )?;
        let out = self.net.forward_batch(&xs)?;
        Ok(out.as_slice().iter().map(|v| v * self.y_scale + self.y_mean).collect())
    }
}
