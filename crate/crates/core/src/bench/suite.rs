use crate::functions::Domain;
use crate::transforms::TransformKind;

use super::config::{EvalMethod, ExperimentSpec};

/// `(function, domain, d, N, k_star)` of a reported table cell.
pub type Cell = (&'static str, Domain, usize, usize, usize);

/// Every cell reported in the regression-comparison table and the four
/// high-dimensional benchmark tables.
pub fn table_cells() -> Vec<Cell> {
    let mut cells = vec![("f3", Domain::OmegaB, 2, 2500, 1)];
    let a_sizes = [500, 2500, 10_000];
    let b_sizes = [2500, 10_000, 40_000];
    for f in ["f4", "f5", "f6", "f7"] {
        let mut groups: Vec<(Domain, usize, &[usize])> = Vec::new();
        if f != "f7" {
            groups.push((Domain::OmegaA, 10, &a_sizes));
            groups.push((Domain::OmegaA, 20, &a_sizes));
        }
        groups.push((Domain::OmegaB, 8, &b_sizes));
        groups.push((Domain::OmegaB, 12, &b_sizes));
        for (dom, d, sizes) in groups {
            for &n in sizes {
                for k in [1, 2] {
                    cells.push((f, dom, d, n, k));
                }
            }
        }
    }
    cells
}

pub fn cell_name(c: &Cell) -> String {
    format!("{}_{}{}_n{}_k{}", c.0, c.1.as_str(), c.2, c.3, c.4)
}

/// Experiment specs for [`table_cells`] with default settings. The
/// regression-comparison cell runs all four regressions on the same model;
/// the benchmark cells compare against the Active Subspace reduction.
pub fn benchmark_suite() -> Vec<ExperimentSpec> {
    table_cells()
        .iter()
        .map(|c| {
            let mut spec = ExperimentSpec::new(&cell_name(c), c.0, c.2, c.1, c.3, c.4);
            spec.methods = if c.0 == "f3" {
                vec![
                    EvalMethod::Synthesized,
                    EvalMethod::DirectLocal,
                    EvalMethod::Global,
                    EvalMethod::NeuralNet,
                ]
            } else {
                vec![EvalMethod::Synthesized, EvalMethod::ActiveSubspace]
            };
            spec
        })
        .collect()
}

/// PRNN-versus-RevNet comparison on `f1`/`f2` (N = 500, `lambda2 = 0`) for the
/// given domain and `alpha`.
pub fn ablation_specs(function: &str, domain: Domain, alpha: f64) -> Vec<ExperimentSpec> {
    [TransformKind::Prnn, TransformKind::RevNet]
        .into_iter()
        .map(|kind| {
            let name = format!("ablate_{function}_{}_{}_alpha{alpha}", domain.as_str(), kind.as_str());
            let mut spec = ExperimentSpec::new(&name, function, 2, domain, 500, 1);
            spec.transform = kind;
            spec.loss.lambda2 = 0.0;
            spec.loss.alpha = alpha;
            spec.seeds = vec![0];
            spec
        })
        .collect()
}

/// Bounded-derivative weight study on `f2` over `[-1, 1]^2` (N = 500).
pub fn lambda2_study() -> Vec<ExperimentSpec> {
    [0.0, 1.0, 100.0]
        .into_iter()
        .map(|l2| {
            let mut spec = ExperimentSpec::new(&format!("lambda2_{l2}"), "f2", 2, Domain::OmegaB, 500, 1);
            spec.loss.lambda2 = l2;
            spec.seeds = vec![0];
            spec
        })
        .collect()
}
