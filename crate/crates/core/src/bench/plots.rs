use std::io::Write;

use crate::error::{Error, Result};
use crate::functions::TestFunction;
use crate::losses::Dataset;
use crate::regression::{ActiveProjection, RegressionConfig, Regressor};
use crate::tensor::{dot, norm2, Matrix};
use crate::training::{uniform_sample, TrainedModel};

/// Gradient of `f` and the second inverse-Jacobian column at a grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuiverRow {
    pub x1: f64,
    pub x2: f64,
    pub df1: f64,
    pub df2: f64,
    pub j2_1: f64,
    pub j2_2: f64,
    /// Cosine between the two vectors, 0 when either vanishes.
    pub cos_angle: f64,
}

/// `grid x grid` uniform points spanning the domain, first coordinate slowest.
pub fn emit_quiver_data(model: &TrainedModel, f: &TestFunction, grid: usize) -> Result<Vec<QuiverRow>> {
    if f.dim() != 2 || model.transform.dim() != 2 {
        return Err(Error::InvalidArgument("quiver data needs d = 2".into()));
    }
    if grid < 2 {
        return Err(Error::InvalidArgument("grid needs at least 2 points per axis".into()));
    }
    let (lo, hi) = f.domain().bounds();
    let at = |i: usize| lo + (hi - lo) * i as f64 / (grid - 1) as f64;
    let mut rows = Vec::with_capacity(grid * grid);
    for i in 0..grid {
        for j in 0..grid {
            let x = [at(i), at(j)];
            let (_, g) = f.eval(&x)?;
            let z = model.transform.forward(&x)?;
            let jac = model.transform.pseudo_inverse_jacobian(&z)?;
            let j2 = [jac[(0, 1)], jac[(1, 1)]];
            let denom = norm2(&g) * norm2(&j2);
            let cos_angle = if denom > 0.0 {
                (dot(&g, &j2) / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            rows.push(QuiverRow {
                x1: x[0],
                x2: x[1],
                df1: g[0],
                df2: g[1],
                j2_1: j2[0],
                j2_2: j2[1],
                cos_angle,
            });
        }
    }
    Ok(rows)
}

pub fn mean_abs_cos(rows: &[QuiverRow]) -> f64 {
    rows.iter().map(|r| r.cos_angle.abs()).sum::<f64>() / rows.len().max(1) as f64
}

pub fn write_quiver_csv<W: Write>(rows: &[QuiverRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "x1,x2,df_dx1,df_dx2,J2_1,J2_2,cos_angle")?;
    for r in rows {
        writeln!(
            w,
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.x1, r.x2, r.df1, r.df2, r.j2_1, r.j2_2, r.cos_angle
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionPlotRow {
    pub z_active: Vec<f64>,
    pub f_exact: f64,
    pub f_pred: f64,
}

/// Exact and predicted values with active coordinates at `n_points` uniform
/// random domain points.
pub fn emit_regression_data(
    model: &TrainedModel,
    data: &Dataset,
    f: &TestFunction,
    cfg: &RegressionConfig,
    n_points: usize,
    seed: u64,
) -> Result<Vec<RegressionPlotRow>> {
    let d = f.dim();
    let x = uniform_sample(n_points, d, &f.domain().lo(d), &f.domain().hi(d), seed)?;
    let reg = Regressor::new(model, data, cfg)?;
    let pred = reg.predict_batch(&x)?;
    let z: Matrix = model.project_batch(&x)?;
    (0..n_points)
        .map(|r| {
            Ok(RegressionPlotRow {
                z_active: z.row(r).to_vec(),
                f_exact: f.value(x.row(r))?,
                f_pred: pred[r],
            })
        })
        .collect()
}

pub fn write_regression_csv<W: Write>(rows: &[RegressionPlotRow], mut w: W) -> std::io::Result<()> {
    let k = rows.first().map_or(0, |r| r.z_active.len());
    let mut head: Vec<String> = (1..=k).map(|i| format!("z{i}")).collect();
    head.push("f_exact".into());
    head.push("f_pred".into());
    writeln!(w, "{}", head.join(","))?;
    for r in rows {
        let mut cells: Vec<String> = r.z_active.iter().map(|v| format!("{v:e}")).collect();
        cells.push(format!("{:e}", r.f_exact));
        cells.push(format!("{:e}", r.f_pred));
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}
