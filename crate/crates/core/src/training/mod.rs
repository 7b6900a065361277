//! Data generation, optimizers, and the two-phase training loop.

mod adam;
mod lbfgs;
mod lhs;

pub use adam::{adam_step, AdamConstants, AdamState, StepDecay};
pub use lbfgs::{lbfgs_minimize, lbfgs_minimize_observed, Evaluation, LbfgsConfig, LbfgsResult, Termination};
pub use lhs::{build_dataset, dataset_at, lhs_sample, uniform_sample};

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{loss_and_gradient, Dataset, HyperParams, LossParts, DEFAULT_CHUNK};
use crate::tensor::ParamVector;
use crate::transforms::{Prnn, RevNet, Transform, TransformKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub adam_max_steps: usize,
    pub learning_rate: StepDecay,
    pub adam: AdamConstants,
    pub lbfgs_max_steps: usize,
    pub lbfgs_memory: usize,
    /// Training stops in either phase once the total loss is at or below this.
    pub stop_threshold: f64,
    /// Adam mini-batch size; `None` trains on the full batch.
    pub batch_size: Option<usize>,
    /// History stride; `None` records every step for `d = 2` and every 10th otherwise.
    pub history_every: Option<usize>,
    pub chunk: usize,
    /// Seeds parameter initialization and mini-batch shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam_max_steps: 60_000,
            learning_rate: StepDecay::default(),
            adam: AdamConstants::default(),
            lbfgs_max_steps: 200,
            lbfgs_memory: 10,
            stop_threshold: 5e-5,
            batch_size: None,
            history_every: None,
            chunk: DEFAULT_CHUNK,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn history_stride(&self, d: usize) -> usize {
        self.history_every.unwrap_or(if d == 2 { 1 } else { 10 }).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Adam,
    Lbfgs,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Adam => "adam",
            Phase::Lbfgs => "lbfgs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRecord {
    pub step: usize,
    pub phase: Phase,
    pub total: f64,
    pub parts: LossParts,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub records: Vec<HistoryRecord>,
}

impl LossHistory {
    pub fn first(&self) -> Option<&HistoryRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&HistoryRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,phase,total,L1,L2,L3")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{:e},{:e},{:e},{:e}",
                r.step,
                r.phase.as_str(),
                r.total,
                r.parts.l1,
                r.parts.l2,
                r.parts.l3
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// A transform frozen after training, with the settings that produced it.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub transform: Transform,
    pub hyper: HyperParams,
    pub final_loss: f64,
    pub final_parts: LossParts,
    pub adam_steps: usize,
    pub lbfgs_steps: usize,
    /// True when the loss reached the stop threshold.
    pub converged: bool,
    pub seed: u64,
}

impl TrainedModel {
    /// Wraps an untrained transform, evaluating its loss on `data`.
    pub fn untrained(transform: Transform, hyper: HyperParams, data: &Dataset, seed: u64) -> Result<Self> {
        let e = loss_and_gradient(&transform, data, &hyper, false, DEFAULT_CHUNK)?;
        Ok(Self {
            transform,
            hyper,
            final_loss: e.total,
            final_parts: e.parts,
            adam_steps: 0,
            lbfgs_steps: 0,
            converged: false,
            seed,
        })
    }

    pub fn k_star(&self) -> usize {
        self.hyper.k_star
    }
}

/// Freshly initialized transform of the default architecture.
pub fn init_transform(kind: TransformKind, d: usize, seed: u64) -> Result<Transform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match kind {
        TransformKind::Prnn => Transform::Prnn(Prnn::random(&Prnn::default_architecture(d), &mut rng)?),
        TransformKind::RevNet => Transform::RevNet(RevNet::default_for(d, &mut rng)?),
    })
}

fn aborted(step: usize, parts: Option<LossParts>, hp: &HyperParams) -> Error {
    let p = parts.unwrap_or(LossParts {
        l1: f64::NAN,
        l2: f64::NAN,
        l3: f64::NAN,
    });
    Error::TrainingAborted {
        step,
        total: p.total(hp),
        l1: p.l1,
        l2: p.l2,
        l3: p.l3,
    }
}

/// Evaluates the loss and gradient, converting non-finite results into a
/// training abort that carries the term values.
fn checked_eval(
    t: &Transform,
    data: &Dataset,
    hp: &HyperParams,
    chunk: usize,
    step: usize,
) -> Result<(LossParts, ParamVector)> {
    match loss_and_gradient(t, data, hp, true, chunk) {
        Ok(e) if e.total.is_finite() => Ok((e.parts, e.gradient.expect("gradient requested"))),
        Ok(e) => Err(aborted(step, Some(e.parts), hp)),
        Err(Error::NonFinite(_)) => {
            let parts = loss_and_gradient(t, data, hp, false, chunk).ok().map(|e| e.parts);
            Err(aborted(step, parts, hp))
        }
        Err(e) => Err(e),
    }
}

/// Adam with step decay, then L-BFGS, each stopping early once the total
/// loss reaches `cfg.stop_threshold`.
///
/// Steps are numbered globally: Adam evaluations are `0..adam_steps`, and
/// L-BFGS iterates continue from there.
pub fn train(
    mut t: Transform,
    data: &Dataset,
    hp: &HyperParams,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, LossHistory)> {
    hp.validate(data.dim())?;
    if t.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            context: "train transform dimension",
            expected: data.dim(),
            got: t.dim(),
        });
    }
    let stride = cfg.history_stride(data.dim());
    let mut history = LossHistory::default();
    let mut theta = t.params();
    let mut state = AdamState::new(theta.len(), cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c);
    let batch = cfg.batch_size.filter(|&b| b > 0 && b < data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = data.len();

    let mut step = 0;
    let mut last_parts = None;
    let mut converged = false;
    let mut adam_steps = 0;
    while step < cfg.adam_max_steps {
        let batch_data;
        let view = match batch {
            Some(b) => {
                if cursor + b > data.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch_data = data.permuted(&order[cursor..cursor + b])?;
                cursor += b;
                &batch_data
            }
            None => data,
        };
        let (parts, grad) = checked_eval(&t, view, hp, cfg.chunk, step)?;
        let total = parts.total(hp);
        let done = total <= cfg.stop_threshold;
        if step % stride == 0 || done || step + 1 == cfg.adam_max_steps {
            history.records.push(HistoryRecord {
                step,
                phase: Phase::Adam,
                total,
                parts,
            });
        }
        last_parts = Some(parts);
        if done {
            converged = true;
            break;
        }
        adam_step(&mut theta.0, grad.as_slice(), &mut state, cfg.learning_rate.lr(step))
            .map_err(|_| aborted(step, Some(parts), hp))?;
        t.set_params(&theta)?;
        step += 1;
        adam_steps = step;
    }

    let mut lbfgs_steps = 0;
    if !converged && cfg.lbfgs_max_steps > 0 {
        let lcfg = LbfgsConfig {
            max_iters: cfg.lbfgs_max_steps,
            memory: cfg.lbfgs_memory,
            stop_threshold: cfg.stop_threshold,
            ..LbfgsConfig::default()
        };
        let base = adam_steps;
        let mut probe = t.clone();
        let objective = |x: &[f64]| -> Result<Evaluation<LossParts>> {
            probe.set_params(&ParamVector(x.to_vec()))?;
            let e = loss_and_gradient(&probe, data, hp, true, cfg.chunk)?;
            Ok(Evaluation {
                value: e.total,
                gradient: e.gradient.expect("gradient requested").0,
                aux: e.parts,
            })
        };
        let res = lbfgs_minimize_observed(objective, theta.as_slice(), &lcfg, |it, _, e| {
            let s = base + it;
            if it == 0 || s % stride == 0 || e.value <= cfg.stop_threshold {
                history.records.push(HistoryRecord {
                    step: s,
                    phase: Phase::Lbfgs,
                    total: e.aux.total(hp),
                    parts: e.aux,
                });
            }
        })
        .map_err(|e| match e {
            Error::NonFinite(_) => aborted(base, last_parts, hp),
            other => other,
        })?;
        lbfgs_steps = res.iterations;
        if history.last().is_none_or(|r| r.step != base + res.iterations || r.phase != Phase::Lbfgs) {
            history.records.push(HistoryRecord {
                step: base + res.iterations,
                phase: Phase::Lbfgs,
                total: res.eval.aux.total(hp),
                parts: res.eval.aux,
            });
        }
        converged = res.termination == Termination::Threshold;
        theta = ParamVector(res.theta);
        t.set_params(&theta)?;
        last_parts = Some(res.eval.aux);
    }

    let final_parts = match (batch, last_parts) {
        (None, Some(p)) => p,
        _ => loss_and_gradient(&t, data, hp, false, cfg.chunk)?.parts,
    };
    let model = TrainedModel {
        transform: t,
        hyper: hp.clone(),
        final_loss: final_parts.total(hp),
        final_parts,
        adam_steps,
        lbfgs_steps,
        converged,
        seed: cfg.seed,
    };
    Ok((model, history))
}
