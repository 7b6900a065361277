use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functions::{Domain, TestFunction};
use crate::losses::HyperParams;
use crate::regression::RegressionConfig;
use crate::training::TrainConfig;
use crate::transforms::TransformKind;

/// Prediction approaches compared in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMethod {
    Synthesized,
    DirectLocal,
    Global,
    NeuralNet,
    /// Linear reduction from the gradient covariance, followed by synthesized regression.
    ActiveSubspace,
}

impl EvalMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMethod::Synthesized => "synthesized",
            EvalMethod::DirectLocal => "direct_local",
            EvalMethod::Global => "global",
            EvalMethod::NeuralNet => "neural_net",
            EvalMethod::ActiveSubspace => "active_subspace",
        }
    }

    pub fn needs_transform(self) -> bool {
        self != EvalMethod::ActiveSubspace
    }
}

/// Loss weights; `omega` follows from `k_star`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub revnet_bounded_derivative: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            alpha: 50.0,
            sigma: 0.01,
            revnet_bounded_derivative: false,
        }
    }
}

/// One experiment cell: target, data sizes, model, and replicate seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub function: String,
    pub d: usize,
    pub domain: Domain,
    pub n_train: usize,
    /// Test points per replicate; defaults to 1000 for `d <= 3`, else 10000.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    pub k_star: usize,
    #[serde(default = "default_transform")]
    pub transform: TransformKind,
    #[serde(default = "default_methods")]
    pub methods: Vec<EvalMethod>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub regression: RegressionConfig,
}

fn default_transform() -> TransformKind {
    TransformKind::Prnn
}

fn default_methods() -> Vec<EvalMethod> {
    vec![EvalMethod::Synthesized]
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

impl ExperimentSpec {
    /// Default settings for a cell.
    pub fn new(name: &str, function: &str, d: usize, domain: Domain, n_train: usize, k_star: usize) -> Self {
        Self {
            name: name.to_string(),
            function: function.to_string(),
            d,
            domain,
            n_train,
            n_test: None,
            k_star,
            transform: default_transform(),
            methods: default_methods(),
            seeds: default_seeds(),
            loss: LossWeights::default(),
            train: TrainConfig::default(),
            regression: RegressionConfig::default(),
        }
    }

    pub fn test_size(&self) -> usize {
        self.n_test.unwrap_or(if self.d <= 3 { 1000 } else { 10_000 })
    }

    pub fn test_function(&self) -> Result<TestFunction> {
        TestFunction::from_name(&self.function, self.d, self.domain)
    }

    pub fn hyper_params(&self) -> Result<HyperParams> {
        let hp = HyperParams {
            lambda1: self.loss.lambda1,
            lambda2: self.loss.lambda2,
            alpha: self.loss.alpha,
            sigma: self.loss.sigma,
            k_star: self.k_star,
            omega: HyperParams::omega_pattern(self.d, self.k_star),
            revnet_bounded_derivative: self.loss.revnet_bounded_derivative,
        };
        hp.validate(self.d)?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid experiment name `{}`", self.name)));
        }
        self.test_function()?;
        self.hyper_params()?;
        if self.n_train == 0 || self.test_size() == 0 {
            return Err(Error::Config("n_train and n_test must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// A batch of experiments: an optional base config file and a list of cells,
/// each a set of keys overriding the base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentMatrix {
    /// Base config path, relative to the matrix file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<PathBuf>,
    #[serde(default)]
    pub cell: Vec<toml::Table>,
}

impl ExperimentMatrix {
    /// Resolves every cell into a full experiment spec.
    pub fn expand(&self, base: Option<&toml::Table>) -> Result<Vec<ExperimentSpec>> {
        self.cell
            .iter()
            .map(|cell| {
                let mut merged = base.cloned().unwrap_or_default();
                merge(&mut merged, cell);
                let spec: ExperimentSpec = toml::Value::Table(merged)
                    .try_into()
                    .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
                spec.validate()?;
                Ok(spec)
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<Vec<ExperimentSpec>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: ExperimentMatrix = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = match &m.base {
            Some(b) => {
                let p = path.parent().unwrap_or(Path::new(".")).join(b);
                let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                Some(text.parse::<toml::Table>().map_err(|e| Error::Config(format!("{}: {e}", p.display())))?)
            }
            None => None,
        };
        m.expand(base.as_ref())
    }
}

/// Recursively overlays `over` onto `base`.
fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Loads either a single experiment or a matrix (a file with `cell` entries).
pub fn load_experiments(path: &Path) -> Result<Vec<ExperimentSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if table.contains_key("cell") || table.contains_key("base") {
        ExperimentMatrix::load(path)
    } else {
        Ok(vec![ExperimentSpec::load(path)?])
    }
}
