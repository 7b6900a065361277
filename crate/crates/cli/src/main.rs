use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drills::bench::{
    emit_quiver_data, emit_regression_data, evaluate_replicate, load_checkpoint, load_experiments, mean_abs_cos,
    run_experiment, save_checkpoint, train_replicate, write_quiver_csv, write_regression_csv, write_results_csv,
    Checkpoint, DatasetInfo, EvalMethod, ExperimentSpec, ReplicateSeeds, ResultRow,
};
use drills::functions::TestFunction;
use drills::losses::Dataset;
use drills::regression::relative_sensitivity;
use drills::training::{build_dataset, dataset_at, uniform_sample, TrainedModel};
use drills::Error;

#[derive(Parser)]
#[command(name = "drills", version, about = "Level-set dimension reduction and local regression benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment file or experiment-matrix file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Runs only this replicate seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train one transform per replicate; writes checkpoints and loss histories.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate the configured methods with a saved checkpoint.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Rows of regression-plot data to emit.
        #[arg(long, default_value_t = 400)]
        points: usize,
    },
    /// Full replicated experiment: train, predict, metrics, artifacts.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Two-dimensional transform comparison: quiver data, regression data, and a summary table.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 15)]
        grid: usize,
        #[arg(long, default_value_t = 400)]
        points: usize,
    },
    /// Gradient and second inverse-Jacobian column on a uniform grid (d = 2).
    Quiver {
        #[command(flatten)]
        common: Common,
        /// Use a saved model instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 15)]
        grid: usize,
    },
    /// Relative sensitivity of each transformed coordinate on the test set.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", &e.to_string());
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}

/// Single-line error record on stderr: `error: kind=<id> message="<text>"`.
fn report(kind: &str, message: &str) {
    eprintln!("error: kind={kind} message={:?}", message.trim());
}

type Result<T> = drills::Result<T>;

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { common } => cmd_train(&common),
        Command::Predict {
            common,
            checkpoint,
            points,
        } => cmd_predict(&common, &checkpoint, points),
        Command::Bench { common } => cmd_bench(&common),
        Command::Ablate { common, grid, points } => cmd_ablate(&common, grid, points),
        Command::Quiver {
            common,
            checkpoint,
            grid,
        } => cmd_quiver(&common, checkpoint.as_deref(), grid),
        Command::Sensitivity { common, checkpoint } => cmd_sensitivity(&common, checkpoint.as_deref()),
    }
}

fn load_specs(c: &Common) -> Result<Vec<ExperimentSpec>> {
    let mut specs = load_experiments(&c.config)?;
    if let Some(s) = c.seed {
        for spec in &mut specs {
            spec.seeds = vec![s];
        }
    }
    Ok(specs)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| io_err(path, e))?;
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

fn dataset_info(spec: &ExperimentSpec, seed: u64) -> DatasetInfo {
    DatasetInfo {
        function: spec.function.clone(),
        domain: spec.domain,
        n_train: spec.n_train,
        seed: ReplicateSeeds::new(seed).data,
    }
}

/// Trains and stores a replicate's checkpoint and loss history under `out`.
fn train_and_save(spec: &ExperimentSpec, seed: u64, out: &Path) -> Result<(TrainedModel, Dataset)> {
    let (model, history, data) = train_replicate(spec, seed)?;
    history.save_csv(&out.join(format!("{}_seed{seed}_loss.csv", spec.name)))?;
    let ck = Checkpoint {
        model,
        dataset: Some(dataset_info(spec, seed)),
    };
    save_checkpoint(&ck, &out.join(format!("{}_seed{seed}.ckpt", spec.name)))?;
    Ok((ck.model, data))
}

/// Loads a checkpoint and regenerates its training set, checking it matches `spec`.
fn load_for(spec: &ExperimentSpec, path: &Path) -> Result<(TrainedModel, Dataset)> {
    let ck = load_checkpoint(path)?;
    let info = ck
        .dataset
        .ok_or_else(|| Error::Config("checkpoint does not record its training set".into()))?;
    let d = ck.model.transform.dim();
    if info.function != spec.function || info.domain != spec.domain || d != spec.d {
        return Err(Error::Config(format!(
            "checkpoint was trained on {} over {} with d={d}, config asks for {} over {} with d={}",
            info.function,
            info.domain.as_str(),
            spec.function,
            spec.domain.as_str(),
            spec.d
        )));
    }
    let f = TestFunction::from_name(&info.function, d, info.domain)?;
    let data = build_dataset(&f, info.n_train, info.seed)?;
    Ok((ck.model, data))
}

fn model_for(spec: &ExperimentSpec, seed: u64, checkpoint: Option<&Path>, out: &Path) -> Result<(TrainedModel, Dataset)> {
    match checkpoint {
        Some(p) => load_for(spec, p),
        None => train_and_save(spec, seed, out),
    }
}

fn cmd_train(c: &Common) -> Result<()> {
    ensure_dir(&c.out)?;
    for spec in load_specs(c)? {
        for &seed in &spec.seeds {
            let (model, _) = train_and_save(&spec, seed, &c.out)?;
            println!(
                "{} seed={seed} final_loss={:e} adam_steps={} lbfgs_steps={} converged={}",
                spec.name, model.final_loss, model.adam_steps, model.lbfgs_steps, model.converged
            );
        }
    }
    Ok(())
}

fn result_rows(spec: &ExperimentSpec, seed: u64, reports: &[(EvalMethod, drills::regression::PredictionReport)]) -> Vec<ResultRow> {
    reports
        .iter()
        .map(|(m, r)| ResultRow {
            method: *m,
            function: spec.function.clone(),
            domain: spec.domain.as_str().to_string(),
            d: spec.d,
            k_star: spec.k_star,
            n: spec.n_train,
            seed: Some(seed),
            nrmse: r.nrmse,
            rl1: r.rl1,
        })
        .collect()
}

fn cmd_predict(c: &Common, checkpoint: &Path, points: usize) -> Result<()> {
    ensure_dir(&c.out)?;
    for spec in load_specs(c)? {
        let (model, data) = load_for(&spec, checkpoint)?;
        let seed = c.seed.unwrap_or(model.seed);
        let reports = evaluate_replicate(&spec, seed, Some(&model), &data)?;
        let rows = result_rows(&spec, seed, &reports);
        write_file(&c.out.join(format!("{}_predict.csv", spec.name)), |w| write_results_csv(&rows, w))?;
        let f = spec.test_function()?;
        let plot = emit_regression_data(&model, &data, &f, &spec.regression, points, ReplicateSeeds::new(seed).test)?;
        write_file(&c.out.join(format!("{}_regression.csv", spec.name)), |w| {
            write_regression_csv(&plot, w)
        })?;
        for r in &rows {
            println!("{} {} NRMSE={:e} RL1={:e}", spec.name, r.method.as_str(), r.nrmse, r.rl1);
        }
    }
    Ok(())
}

fn cmd_bench(c: &Common) -> Result<()> {
    for spec in load_specs(c)? {
        let report = run_experiment(&spec, Some(&c.out))?;
        for (seed, e) in report.failures() {
            eprintln!("warning: {} seed={seed} failed: {e}", spec.name);
        }
        for &m in &spec.methods {
            if let Some(r) = report.mean(m) {
                println!("{} {} mean NRMSE={:e} RL1={:e}", spec.name, m.as_str(), r.nrmse, r.rl1);
            }
        }
    }
    Ok(())
}

fn cmd_ablate(c: &Common, grid: usize, points: usize) -> Result<()> {
    ensure_dir(&c.out)?;
    let summary_path = c.out.join("ablation.csv");
    let mut summary =
        String::from("name,transform,function,domain,alpha,lambda2,seed,mean_abs_cos,NRMSE,RL1,final_loss,converged\n");
    for spec in load_specs(c)? {
        if spec.d != 2 {
            return Err(Error::InvalidArgument(format!("{}: ablation needs d = 2", spec.name)));
        }
        let f = spec.test_function()?;
        for &seed in &spec.seeds {
            let (model, data) = train_and_save(&spec, seed, &c.out)?;
            let quiver = emit_quiver_data(&model, &f, grid)?;
            write_file(&c.out.join(format!("{}_seed{seed}_quiver.csv", spec.name)), |w| {
                write_quiver_csv(&quiver, w)
            })?;
            let plot = emit_regression_data(&model, &data, &f, &spec.regression, points, ReplicateSeeds::new(seed).test)?;
            write_file(&c.out.join(format!("{}_seed{seed}_regression.csv", spec.name)), |w| {
                write_regression_csv(&plot, w)
            })?;
            let mut synth = spec.clone();
            synth.methods = vec![EvalMethod::Synthesized];
            let reports = evaluate_replicate(&synth, seed, Some(&model), &data)?;
            let rep = &reports[0].1;
            let cos = mean_abs_cos(&quiver);
            summary.push_str(&format!(
                "{},{},{},{},{:e},{:e},{seed},{:e},{:e},{:e},{:e},{}\n",
                spec.name,
                spec.transform.as_str(),
                spec.function,
                spec.domain.as_str(),
                spec.loss.alpha,
                spec.loss.lambda2,
                cos,
                rep.nrmse,
                rep.rl1,
                model.final_loss,
                model.converged
            ));
            println!(
                "{} seed={seed} mean_abs_cos={cos:e} NRMSE={:e} converged={}",
                spec.name, rep.nrmse, model.converged
            );
        }
    }
    fs::write(&summary_path, summary).map_err(|e| io_err(&summary_path, e))
}

fn cmd_quiver(c: &Common, checkpoint: Option<&Path>, grid: usize) -> Result<()> {
    ensure_dir(&c.out)?;
    for spec in load_specs(c)? {
        let f = spec.test_function()?;
        let seeds = if checkpoint.is_some() { vec![spec.seeds.first().copied().unwrap_or(0)] } else { spec.seeds.clone() };
        for seed in seeds {
            let (model, _) = model_for(&spec, seed, checkpoint, &c.out)?;
            let rows = emit_quiver_data(&model, &f, grid)?;
            write_file(&c.out.join(format!("{}_seed{seed}_quiver.csv", spec.name)), |w| {
                write_quiver_csv(&rows, w)
            })?;
            println!("{} seed={seed} mean_abs_cos={:e}", spec.name, mean_abs_cos(&rows));
        }
    }
    Ok(())
}

fn cmd_sensitivity(c: &Common, checkpoint: Option<&Path>) -> Result<()> {
    ensure_dir(&c.out)?;
    for spec in load_specs(c)? {
        let f = spec.test_function()?;
        let seeds = if checkpoint.is_some() { vec![spec.seeds.first().copied().unwrap_or(0)] } else { spec.seeds.clone() };
        for seed in seeds {
            let (model, _) = model_for(&spec, seed, checkpoint, &c.out)?;
            let d = spec.d;
            let x = uniform_sample(spec.test_size(), d, &spec.domain.lo(d), &spec.domain.hi(d), ReplicateSeeds::new(seed).test)?;
            let rs = relative_sensitivity(&model, &dataset_at(&f, x)?)?;
            let path = c.out.join(format!("{}_seed{seed}_sensitivity.csv", spec.name));
            write_file(&path, |w| {
                writeln!(w, "i,RS")?;
                for (i, v) in rs.iter().enumerate() {
                    writeln!(w, "{},{v:e}", i + 1)?;
                }
                Ok(())
            })?;
            println!("{} seed={seed} RS_1={:e}", spec.name, rs[0]);
        }
    }
    Ok(())
}
