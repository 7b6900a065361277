//! Function prediction from a trained transform: synthesized local regression,
//! comparison baselines, the Active Subspace reduction, and error metrics.

mod active_subspace;
mod knn;
mod nn;
mod poly;

pub use active_subspace::{fit_active_subspace, ActiveSubspaceModel};
pub use knn::{knn_select, knn_select_points, neighbor_order};
pub use nn::{NnConfig, NnRegressor};
pub use poly::{design_matrix, effective_degree, monomial_count, monomial_exponents, polyfit_lsq, PolyFit};

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::Dataset;
use crate::tensor::{CompensatedSum, Matrix};
use crate::training::TrainedModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionMethod {
    /// Neighbors in input space, cubic fit in the active coordinates.
    Synthesized,
    /// Neighbors and fit both in the active coordinates.
    DirectLocal,
    /// One fit over all training samples in the active coordinates.
    Global,
    NeuralNet,
}

impl RegressionMethod {
    pub const ALL: [RegressionMethod; 4] = [
        RegressionMethod::Synthesized,
        RegressionMethod::DirectLocal,
        RegressionMethod::Global,
        RegressionMethod::NeuralNet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegressionMethod::Synthesized => "synthesized",
            RegressionMethod::DirectLocal => "direct_local",
            RegressionMethod::Global => "global",
            RegressionMethod::NeuralNet => "neural_net",
        }
    }
}

impl std::str::FromStr for RegressionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown regression method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionConfig {
    pub n_neighbors: usize,
    pub degree: usize,
    pub method: RegressionMethod,
    pub nn: NnConfig,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            n_neighbors: 30,
            degree: 3,
            method: RegressionMethod::Synthesized,
            nn: NnConfig::default(),
        }
    }
}

/// A map from inputs to active coordinates `z_A`.
pub trait ActiveProjection {
    fn dim(&self) -> usize;
    fn k_star(&self) -> usize;
    /// Row-wise `z_A` for a batch of inputs.
    fn project_batch(&self, x: &Matrix) -> Result<Matrix>;
}

impl ActiveProjection for TrainedModel {
    fn dim(&self) -> usize {
        self.transform.dim()
    }

    fn k_star(&self) -> usize {
        self.hyper.k_star
    }

    fn project_batch(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.transform.forward_batch(x)?.columns(0, self.hyper.k_star))
    }
}

impl ActiveProjection for ActiveSubspaceModel {
    fn dim(&self) -> usize {
        ActiveSubspaceModel::dim(self)
    }

    fn k_star(&self) -> usize {
        ActiveSubspaceModel::k_star(self)
    }

    fn project_batch(&self, x: &Matrix) -> Result<Matrix> {
        ActiveSubspaceModel::project_batch(self, x)
    }
}

/// First `k_star` components of the forward transform.
pub fn project_active<P: ActiveProjection + ?Sized>(model: &P, x: &[f64]) -> Result<Vec<f64>> {
    Ok(model.project_batch(&Matrix::row_vector(x))?.into_vec())
}

/// Least-squares polynomial fit evaluated in coordinates shifted to `center`
/// and divided by the largest coordinate offset of the fitted points.
#[derive(Debug, Clone)]
struct ScaledFit {
    fit: PolyFit,
    center: Vec<f64>,
    scale: f64,
}

impl ScaledFit {
    fn new(points: &Matrix, values: &[f64], center: &[f64], degree: usize) -> Result<Self> {
        let spread = points
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - center[i % center.len()]).abs())
            .fold(0.0, f64::max);
        let scale = if spread > 0.0 && spread.is_finite() { spread } else { 1.0 };
        let k = center.len();
        let local = Matrix::from_vec(
            points.rows(),
            k,
            points
                .as_slice()
                .iter()
                .enumerate()
                .map(|(i, v)| (v - center[i % k]) / scale)
                .collect(),
        )?;
        Ok(Self {
            fit: polyfit_lsq(&local, values, degree)?,
            center: center.to_vec(),
            scale,
        })
    }

    fn eval(&self, z: &[f64]) -> f64 {
        let u: Vec<f64> = z.iter().zip(&self.center).map(|(v, c)| (v - c) / self.scale).collect();
        self.fit.eval(&u)
    }
}

/// Prediction engine for one projection and training set. Projected training
/// samples, the global fit, and the regression network are computed once.
pub struct Regressor<'a, P: ActiveProjection + ?Sized> {
    projection: &'a P,
    data: &'a Dataset,
    cfg: RegressionConfig,
    z_train: Matrix,
    global: OnceLock<ScaledFit>,
    nn: OnceLock<NnRegressor>,
}

impl<'a, P: ActiveProjection + ?Sized> Regressor<'a, P> {
    pub fn new(projection: &'a P, data: &'a Dataset, cfg: &RegressionConfig) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if projection.dim() != data.dim() {
            return Err(Error::DimensionMismatch {
                context: "regression projection",
                expected: data.dim(),
                got: projection.dim(),
            });
        }
        if cfg.n_neighbors == 0 {
            return Err(Error::InvalidArgument("n_neighbors must be at least 1".into()));
        }
        if cfg.n_neighbors > data.len() {
            return Err(Error::TooFewSamples {
                requested: cfg.n_neighbors,
                available: data.len(),
            });
        }
        let z_train = projection.project_batch(data.inputs())?;
        z_train.check_finite("projected training inputs")?;
        Ok(Self {
            projection,
            data,
            cfg: cfg.clone(),
            z_train,
            global: OnceLock::new(),
            nn: OnceLock::new(),
        })
    }

    pub fn projected_training(&self) -> &Matrix {
        &self.z_train
    }

    fn local_fit(&self, neighbors: &[usize], z_query: &[f64]) -> Result<f64> {
        let k = z_query.len();
        let mut pts = Matrix::zeros(neighbors.len(), k);
        let mut vals = Vec::with_capacity(neighbors.len());
        for (r, &i) in neighbors.iter().enumerate() {
            pts.row_mut(r).copy_from_slice(self.z_train.row(i));
            vals.push(self.data.values()[i]);
        }
        Ok(ScaledFit::new(&pts, &vals, z_query, self.cfg.degree)?.eval(z_query))
    }

    fn global_fit(&self) -> Result<&ScaledFit> {
        if let Some(f) = self.global.get() {
            return Ok(f);
        }
        let k = self.z_train.cols();
        let n = self.z_train.rows() as f64;
        let center: Vec<f64> = (0..k).map(|c| self.z_train.column(c).iter().sum::<f64>() / n).collect();
        let fit = ScaledFit::new(&self.z_train, self.data.values(), &center, self.cfg.degree)?;
        Ok(self.global.get_or_init(|| fit))
    }

    fn network(&self) -> Result<&NnRegressor> {
        if let Some(n) = self.nn.get() {
            return Ok(n);
        }
        let net = NnRegressor::fit(&self.z_train, self.data.values(), &self.cfg.nn)?;
        Ok(self.nn.get_or_init(|| net))
    }

    /// Predictions at each row of `queries` with the configured method.
    pub fn predict_batch(&self, queries: &Matrix) -> Result<Vec<f64>> {
        self.predict_batch_with(self.cfg.method, queries)
    }

    pub fn predict_batch_with(&self, method: RegressionMethod, queries: &Matrix) -> Result<Vec<f64>> {
        if queries.cols() != self.data.dim() {
            return Err(Error::DimensionMismatch {
                context: "regression query",
                expected: self.data.dim(),
                got: queries.cols(),
            });
        }
        let zq = self.projection.project_batch(queries)?;
        zq.check_finite("projected queries")?;
        match method {
            RegressionMethod::Synthesized => (0..queries.rows())
                .map(|r| {
                    let nb = knn_select_points(queries.row(r), self.data.inputs(), self.cfg.n_neighbors)?;
                    self.local_fit(&nb, zq.row(r))
                })
                .collect(),
            RegressionMethod::DirectLocal => (0..queries.rows())
                .map(|r| {
                    let nb = knn_select_points(zq.row(r), &self.z_train, self.cfg.n_neighbors)?;
                    self.local_fit(&nb, zq.row(r))
                })
                .collect(),
            RegressionMethod::Global => {
                let fit = self.global_fit()?;
                Ok((0..zq.rows()).map(|r| fit.eval(zq.row(r))).collect())
            }
            RegressionMethod::NeuralNet => self.network()?.predict_batch(&zq),
        }
    }

    pub fn predict(&self, query: &[f64]) -> Result<f64> {
        Ok(self.predict_batch(&Matrix::row_vector(query))?[0])
    }
}

fn predict_one<P: ActiveProjection + ?Sized>(
    model: &P,
    data: &Dataset,
    cfg: &RegressionConfig,
    method: RegressionMethod,
    query: &[f64],
) -> Result<f64> {
    let reg = Regressor::new(model, data, cfg)?;
    Ok(reg.predict_batch_with(method, &Matrix::row_vector(query))?[0])
}

/// Fit a local polynomial in `z_A` to the `N_f` nearest training samples in
/// input space and evaluate it at the query's `z_A`.
///
/// Each call projects the whole training set; use [`Regressor`] for many queries.
pub fn predict_synthesized<P: ActiveProjection + ?Sized>(
    model: &P,
    data: &Dataset,
    cfg: &RegressionConfig,
    query: &[f64],
) -> Result<f64> {
    predict_one(model, data, cfg, RegressionMethod::Synthesized, query)
}

/// As [`predict_synthesized`] with neighbors chosen by distance in `z_A`.
pub fn predict_direct_local<P: ActiveProjection + ?Sized>(
    model: &P,
    data: &Dataset,
    cfg: &RegressionConfig,
    query: &[f64],
) -> Result<f64> {
    predict_one(model, data, cfg, RegressionMethod::DirectLocal, query)
}

/// One polynomial fit over all projected training samples.
pub fn predict_global<P: ActiveProjection + ?Sized>(
    model: &P,
    data: &Dataset,
    cfg: &RegressionConfig,
    query: &[f64],
) -> Result<f64> {
    predict_one(model, data, cfg, RegressionMethod::Global, query)
}

/// Regression network trained on `(z_A, f)` pairs.
pub fn predict_nn<P: ActiveProjection + ?Sized>(
    model: &P,
    data: &Dataset,
    cfg: &RegressionConfig,
    query: &[f64],
) -> Result<f64> {
    predict_one(model, data, cfg, RegressionMethod::NeuralNet, query)
}

/// `(NRMSE, RL1)` with `NRMSE = ||f - p||_2 / (sqrt(M) (max f - min f))` and
/// `RL1 = ||f - p||_1 / ||f||_1`.
pub fn metrics(f_true: &[f64], f_pred: &[f64]) -> Result<(f64, f64)> {
    if f_true.len() != f_pred.len() {
        return Err(Error::DimensionMismatch {
            context: "metrics",
            expected: f_true.len(),
            got: f_pred.len(),
        });
    }
    if f_true.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let max = f_true.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = f_true.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > min) {
        return Err(Error::Degenerate("range of true values (NRMSE undefined)"));
    }
    let l1_true: CompensatedSum = f_true.iter().map(|v| v.abs()).collect();
    if !(l1_true.value() > 0.0) {
        return Err(Error::Degenerate("l1 norm of true values (RL1 undefined)"));
    }
    let sq: CompensatedSum = f_true.iter().zip(f_pred).map(|(a, b)| (a - b) * (a - b)).collect();
    let ab: CompensatedSum = f_true.iter().zip(f_pred).map(|(a, b)| (a - b).abs()).collect();
    let m = f_true.len() as f64;
    let nrmse = (sq.value() / m).sqrt() / (max - min);
    Ok((nrmse, ab.value() / l1_true.value()))
}

/// Predictions over a test set with their aggregate errors.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionReport {
    pub predictions: Vec<f64>,
    pub nrmse: f64,
    pub rl1: f64,
}

impl PredictionReport {
    pub fn new(f_true: &[f64], predictions: Vec<f64>) -> Result<Self> {
        let (nrmse, rl1) = metrics(f_true, &predictions)?;
        Ok(Self {
            predictions,
            nrmse,
            rl1,
        })
    }
}

/// `RS_i = |mean(grad f . J_i)| / sum_m |mean(grad f . J_m)|` over the test
/// samples, with `J_i` the i-th column of the inverse-map Jacobian at `g(x)`.
pub fn relative_sensitivity(model: &TrainedModel, test: &Dataset) -> Result<Vec<f64>> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let z = model.transform.forward_batch(test.inputs())?;
    let u = model.transform.projected_gradients(&z, test.gradients())?;
    let n = test.len() as f64;
    let means: Vec<f64> = (0..u.cols())
        .map(|c| {
            let s: CompensatedSum = (0..u.rows()).map(|r| u[(r, c)]).collect();
            (s.value() / n).abs()
        })
        .collect();
    let denom: CompensatedSum = means.iter().copied().collect();
    let denom = denom.value();
    if !(denom > 0.0) {
        return Err(Error::Degenerate("sensitivity denominator"));
    }
    Ok(means.iter().map(|m| m / denom).collect())
}
