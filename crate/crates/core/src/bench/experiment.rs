use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::Dataset;
use crate::regression::{fit_active_subspace, PredictionReport, RegressionConfig, RegressionMethod, Regressor};
use crate::training::{build_dataset, init_transform, train, uniform_sample, LossHistory, TrainedModel};

use super::checkpoint::{save_checkpoint, Checkpoint, DatasetInfo};
use super::config::{EvalMethod, ExperimentSpec};

/// Independent stream seed derived from a replicate seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed streams used by one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicateSeeds {
    pub data: u64,
    pub init: u64,
    pub test: u64,
    pub train: u64,
    pub nn: u64,
}

impl ReplicateSeeds {
    pub fn new(seed: u64) -> Self {
        Self {
            data: seed,
            init: derive_seed(seed, 1),
            test: derive_seed(seed, 2),
            train: derive_seed(seed, 3),
            nn: derive_seed(seed, 4),
        }
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: EvalMethod,
    pub function: String,
    pub domain: String,
    pub d: usize,
    pub k_star: usize,
    pub n: usize,
    /// `None` on the mean row.
    pub seed: Option<u64>,
    pub nrmse: f64,
    pub rl1: f64,
}

impl ResultRow {
    pub fn is_mean(&self) -> bool {
        self.seed.is_none()
    }
}

pub const RESULTS_HEADER: &str = "method,function,domain,d,k_star,N,seed,NRMSE,RL1,mean";

pub fn write_results_csv<W: Write>(rows: &[ResultRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{RESULTS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{:e},{:e},{}",
            r.method.as_str(),
            r.function,
            r.domain,
            r.d,
            r.k_star,
            r.n,
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
            r.nrmse,
            r.rl1,
            r.is_mean()
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub seed: u64,
    pub model: Option<TrainedModel>,
    pub history: Option<LossHistory>,
    pub reports: Vec<(EvalMethod, PredictionReport)>,
    /// Set when training or prediction failed; the run moves on to the next seed.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub replicates: Vec<ReplicateOutcome>,
    /// Replicate rows in seed order followed by one mean row per method.
    pub rows: Vec<ResultRow>,
}

impl ExperimentReport {
    pub fn mean(&self, method: EvalMethod) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.is_mean() && r.method == method)
    }

    pub fn replicate_rows(&self, method: EvalMethod) -> Vec<&ResultRow> {
        self.rows.iter().filter(|r| !r.is_mean() && r.method == method).collect()
    }

    pub fn failures(&self) -> Vec<(u64, &str)> {
        self.replicates
            .iter()
            .filter_map(|r| r.error.as_deref().map(|e| (r.seed, e)))
            .collect()
    }
}

/// Trained model for one replicate of `spec`, with its training data.
pub fn train_replicate(spec: &ExperimentSpec, seed: u64) -> Result<(TrainedModel, LossHistory, Dataset)> {
    let seeds = ReplicateSeeds::new(seed);
    let f = spec.test_function()?;
    let data = build_dataset(&f, spec.n_train, seeds.data)?;
    let hp = spec.hyper_params()?;
    let t = init_transform(spec.transform, spec.d, seeds.init)?;
    let mut cfg = spec.train.clone();
    cfg.seed = seeds.train;
    let (mut model, history) = train(t, &data, &hp, &cfg)?;
    model.seed = seed;
    Ok((model, history, data))
}

/// Evaluates the requested methods on a fresh uniform test set.
pub fn evaluate_replicate(
    spec: &ExperimentSpec,
    seed: u64,
    model: Option<&TrainedModel>,
    data: &Dataset,
) -> Result<Vec<(EvalMethod, PredictionReport)>> {
    let seeds = ReplicateSeeds::new(seed);
    let f = spec.test_function()?;
    let d = spec.d;
    let test = uniform_sample(spec.test_size(), d, &spec.domain.lo(d), &spec.domain.hi(d), seeds.test)?;
    let truth: Vec<f64> = (0..test.rows())
        .map(|r| f.value(test.row(r)))
        .collect::<Result<_>>()?;
    let mut reg_cfg = spec.regression.clone();
    reg_cfg.nn.seed = seeds.nn;
    let mut out = Vec::new();
    let regressor = match model {
        Some(m) => Some(Regressor::new(m, data, &reg_cfg)?),
        None => None,
    };
    for &method in &spec.methods {
        let predictions = match method {
            EvalMethod::ActiveSubspace => {
                let asm = fit_active_subspace(data, spec.k_star)?;
                let cfg = RegressionConfig {
                    method: RegressionMethod::Synthesized,
                    ..reg_cfg.clone()
                };
                Regressor::new(&asm, data, &cfg)?.predict_batch(&test)?
            }
            other => {
                let reg = regressor
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("method needs a trained transform".into()))?;
                let rm = match other {
                    EvalMethod::Synthesized => RegressionMethod::Synthesized,
                    EvalMethod::DirectLocal => RegressionMethod::DirectLocal,
                    EvalMethod::Global => RegressionMethod::Global,
                    _ => RegressionMethod::NeuralNet,
                };
                reg.predict_batch_with(rm, &test)?
            }
        };
        out.push((method, PredictionReport::new(&truth, predictions)?));
    }
    Ok(out)
}

fn run_replicate(spec: &ExperimentSpec, seed: u64) -> ReplicateOutcome {
    let needs_model = spec.methods.iter().any(|m| m.needs_transform());
    let mut outcome = ReplicateOutcome {
        seed,
        model: None,
        history: None,
        reports: Vec::new(),
        error: None,
    };
    let result = (|| -> Result<()> {
        let data = if needs_model {
            let (model, history, data) = train_replicate(spec, seed)?;
            outcome.model = Some(model);
            outcome.history = Some(history);
            data
        } else {
            build_dataset(&spec.test_function()?, spec.n_train, ReplicateSeeds::new(seed).data)?
        };
        outcome.reports = evaluate_replicate(spec, seed, outcome.model.as_ref(), &data)?;
        Ok(())
    })();
    if let Err(e) = result {
        outcome.error = Some(e.to_string());
    }
    outcome
}

/// Runs every replicate of `spec` in seed order. With `out`, writes
/// `<name>.csv`, per-replicate `<name>_seed<k>_loss.csv` and
/// `<name>_seed<k>.ckpt`, and `<name>_failures.csv` when a replicate failed.
pub fn run_experiment(spec: &ExperimentSpec, out: Option<&Path>) -> Result<ExperimentReport> {
    spec.validate()?;
    let replicates: Vec<ReplicateOutcome> = spec.seeds.iter().map(|&s| run_replicate(spec, s)).collect();

    let mut rows = Vec::new();
    let base = |method, seed, nrmse, rl1| ResultRow {
        method,
        function: spec.function.clone(),
        domain: spec.domain.as_str().to_string(),
        d: spec.d,
        k_star: spec.k_star,
        n: spec.n_train,
        seed,
        nrmse,
        rl1,
    };
    for r in &replicates {
        for (m, rep) in &r.reports {
            rows.push(base(*m, Some(r.seed), rep.nrmse, rep.rl1));
        }
    }
    for &m in &spec.methods {
        let vals: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.method == m)
            .map(|r| (r.nrmse, r.rl1))
            .collect();
        if !vals.is_empty() {
            let n = vals.len() as f64;
            let nrmse = vals.iter().map(|v| v.0).sum::<f64>() / n;
            let rl1 = vals.iter().map(|v| v.1).sum::<f64>() / n;
            rows.push(base(m, None, nrmse, rl1));
        }
    }

    let report = ExperimentReport {
        spec: spec.clone(),
        replicates,
        rows,
    };
    if let Some(dir) = out {
        if !report.replicates.is_empty() {
            write_artifacts(&report, dir)?;
        }
    }
    Ok(report)
}

fn write_artifacts(report: &ExperimentReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = &report.spec.name;
    let path = dir.join(format!("{name}.csv"));
    let mut buf = Vec::new();
    write_results_csv(&report.rows, &mut buf).map_err(|e| Error::io(&path, e))?;
    std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;

    for r in &report.replicates {
        if let Some(h) = &r.history {
            h.save_csv(&dir.join(format!("{name}_seed{}_loss.csv", r.seed)))?;
        }
        if let Some(m) = &r.model {
            let ck = Checkpoint {
                model: m.clone(),
                dataset: Some(DatasetInfo {
                    function: report.spec.function.clone(),
                    domain: report.spec.domain,
                    n_train: report.spec.n_train,
                    seed: ReplicateSeeds::new(r.seed).data,
                }),
            };
            save_checkpoint(&ck, &dir.join(format!("{name}_seed{}.ckpt", r.seed)))?;
        }
    }
    let failures = report.failures();
    if !failures.is_empty() {
        let path = dir.join(format!("{name}_failures.csv"));
        let mut text = String::from("seed,error\n");
        for (s, e) in failures {
            text.push_str(&format!("{s},\"{}\"\n", e.replace('"', "'")));
        }
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
