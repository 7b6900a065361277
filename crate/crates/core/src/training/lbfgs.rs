use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, norm2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    pub memory: usize,
    /// Sufficient-decrease constant of the strong Wolfe conditions.
    pub c1: f64,
    /// Curvature constant of the strong Wolfe conditions.
    pub c2: f64,
    /// Stop as soon as the objective is at or below this value.
    pub stop_threshold: f64,
    /// Stop when the Euclidean gradient norm is at or below this value.
    pub grad_tol: f64,
    /// Objective evaluations allowed per line search.
    pub max_line_evals: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            stop_threshold: f64::NEG_INFINITY,
            grad_tol: 1e-12,
            max_line_evals: 25,
        }
    }
}

/// Objective value and gradient at a point, plus caller data carried along
/// with accepted iterates.
#[derive(Debug, Clone)]
pub struct Evaluation<A> {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub aux: A,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIterations,
    Threshold,
    GradientTolerance,
    /// No step along the search direction decreased the objective.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult<A> {
    pub theta: Vec<f64>,
    pub eval: Evaluation<A>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

/// Minimizes `f` from `theta0` with limited-memory BFGS and a strong Wolfe line search.
pub fn lbfgs_minimize<A, F>(f: F, theta0: &[f64], cfg: &LbfgsConfig) -> Result<LbfgsResult<A>>
where
    A: Clone,
    F: FnMut(&[f64]) -> Result<Evaluation<A>>,
{
    lbfgs_minimize_observed(f, theta0, cfg, |_, _, _| {})
}

/// As [`lbfgs_minimize`], calling `observe(iteration, theta, eval)` on the
/// starting point (iteration 0) and on every accepted iterate.
///
/// Accepted iterates have strictly decreasing objective values.
pub fn lbfgs_minimize_observed<A, F, O>(
    mut f: F,
    theta0: &[f64],
    cfg: &LbfgsConfig,
    mut observe: O,
) -> Result<LbfgsResult<A>>
where
    A: Clone,
    F: FnMut(&[f64]) -> Result<Evaluation<A>>,
    O: FnMut(usize, &[f64], &Evaluation<A>),
{
    let mut theta = theta0.to_vec();
    let mut current = f(&theta)?;
    let mut evaluations = 1;
    if !current.value.is_finite() || current.gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("objective at L-BFGS start".into()));
    }
    if current.gradient.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            context: "objective gradient",
            expected: theta.len(),
            got: current.gradient.len(),
        });
    }
    observe(0, &theta, &current);

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let termination = loop {
        if current.value <= cfg.stop_threshold {
            break Termination::Threshold;
        }
        if norm2(&current.gradient) <= cfg.grad_tol {
            break Termination::GradientTolerance;
        }
        if iterations >= cfg.max_iters {
            break Termination::MaxIterations;
        }

        let mut direction = two_loop(&current.gradient, &history);
        let mut slope = dot(&direction, &current.gradient);
        if !(slope < 0.0) || !slope.is_finite() {
            history.clear();
            direction = current.gradient.iter().map(|g| -g).collect();
            slope = dot(&direction, &current.gradient);
        }
        let alpha0 = if history.is_empty() {
            (1.0 / norm2(&current.gradient)).min(1.0)
        } else {
            1.0
        };

        let search = strong_wolfe(&mut f, &theta, &current, &direction, slope, alpha0, cfg)?;
        evaluations += search.evaluations;
        let Some(accepted) = search.point else {
            if history.is_empty() {
                break Termination::LineSearchFailed;
            }
            // Retry once along steepest descent before giving up.
            history.clear();
            continue;
        };

        let s: Vec<f64> = direction.iter().map(|d| accepted.alpha * d).collect();
        let y: Vec<f64> = accepted
            .eval
            .gradient
            .iter()
            .zip(&current.gradient)
            .map(|(a, b)| a - b)
            .collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm2(&s) * norm2(&y) && sy > 0.0 {
            if history.len() == cfg.memory.max(1) {
                history.pop_front();
            }
            history.push_back((s.clone(), y, 1.0 / sy));
        }
        for (t, si) in theta.iter_mut().zip(&s) {
            *t += si;
        }
        current = accepted.eval;
        iterations += 1;
        observe(iterations, &theta, &current);
    };

    Ok(LbfgsResult {
        theta,
        eval: current,
        iterations,
        evaluations,
        termination,
    })
}

fn two_loop(grad: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = vec![0.0; history.len()];
    for (k, (s, y, rho)) in history.iter().enumerate().rev() {
        let a = rho * dot(s, &q);
        alphas[k] = a;
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for (k, (s, y, rho)) in history.iter().enumerate() {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += si * (alphas[k] - b);
        }
    }
    q.iter().map(|v| -v).collect()
}

struct Trial<A> {
    alpha: f64,
    phi: f64,
    dphi: f64,
    eval: Option<Evaluation<A>>,
}

struct SearchOutcome<A> {
    point: Option<Accepted<A>>,
    evaluations: usize,
}

struct Accepted<A> {
    alpha: f64,
    eval: Evaluation<A>,
}

fn strong_wolfe<A, F>(
    f: &mut F,
    theta: &[f64],
    start: &Evaluation<A>,
    direction: &[f64],
    slope0: f64,
    alpha0: f64,
    cfg: &LbfgsConfig,
) -> Result<SearchOutcome<A>>
where
    A: Clone,
    F: FnMut(&[f64]) -> Result<Evaluation<A>>,
{
    let phi0 = start.value;
    let mut evaluations = 0;
    let mut trial = |alpha: f64, evaluations: &mut usize| -> Result<Trial<A>> {
        *evaluations += 1;
        let x: Vec<f64> = theta.iter().zip(direction).map(|(t, d)| t + alpha * d).collect();
        match f(&x) {
            Ok(e) if e.value.is_finite() && e.gradient.iter().all(|g| g.is_finite()) => Ok(Trial {
                alpha,
                phi: e.value,
                dphi: dot(&e.gradient, direction),
                eval: Some(e),
            }),
            // A non-finite trial is treated as an infinitely bad point.
            Ok(_) | Err(Error::NonFinite(_)) => Ok(Trial {
                alpha,
                phi: f64::INFINITY,
                dphi: f64::NAN,
                eval: None,
            }),
            Err(e) => Err(e),
        }
    };
    let armijo = |t: &Trial<A>| t.phi <= phi0 + cfg.c1 * t.alpha * slope0;
    let curvature = |t: &Trial<A>| t.dphi.abs() <= -cfg.c2 * slope0;

    let mut prev = Trial {
        alpha: 0.0,
        phi: phi0,
        dphi: slope0,
        eval: None,
    };
    let mut alpha = alpha0;
    let mut first = true;
    let (mut lo, mut hi) = loop {
        let t = trial(alpha, &mut evaluations)?;
        if !armijo(&t) || (!first && t.phi >= prev.phi) {
            break (prev, t);
        }
        if curvature(&t) {
            return Ok(SearchOutcome {
                point: accept(t),
                evaluations,
            });
        }
        if t.dphi >= 0.0 {
            break (t, prev);
        }
        if evaluations >= cfg.max_line_evals {
            return Ok(SearchOutcome {
                point: accept(t),
                evaluations,
            });
        }
        first = false;
        alpha = t.alpha * 2.0;
        prev = t;
    };

    // Zoom: `lo` satisfies sufficient decrease and has the lowest value seen.
    while evaluations < cfg.max_line_evals {
        let a = interpolate(&lo, &hi);
        let t = trial(a, &mut evaluations)?;
        if !armijo(&t) || t.phi >= lo.phi {
            hi = t;
        } else {
            if curvature(&t) {
                return Ok(SearchOutcome {
                    point: accept(t),
                    evaluations,
                });
            }
            if t.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
        if (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1.0) {
            break;
        }
    }
    Ok(SearchOutcome {
        point: if lo.alpha > 0.0 { accept(lo) } else { None },
        evaluations,
    })
}

fn accept<A>(t: Trial<A>) -> Option<Accepted<A>> {
    t.eval.map(|eval| Accepted { alpha: t.alpha, eval })
}

/// Safeguarded cubic interpolation between two bracket ends; falls back to bisection.
fn interpolate<A>(a: &Trial<A>, b: &Trial<A>) -> f64 {
    let (lo, hi) = if a.alpha < b.alpha { (a, b) } else { (b, a) };
    let width = hi.alpha - lo.alpha;
    let mid = 0.5 * (lo.alpha + hi.alpha);
    if ![lo.phi, hi.phi, lo.dphi, hi.dphi].iter().all(|v| v.is_finite()) {
        return mid;
    }
    let d1 = lo.dphi + hi.dphi - 3.0 * (lo.phi - hi.phi) / (lo.alpha - hi.alpha);
    let disc = d1 * d1 - lo.dphi * hi.dphi;
    if disc < 0.0 {
        return mid;
    }
    let d2 = disc.sqrt();
    let denom = hi.dphi - lo.dphi + 2.0 * d2;
    if denom == 0.0 {
        return mid;
    }
    let x = hi.alpha - width * (hi.dphi + d2 - d1) / denom;
    let margin = 0.1 * width;
    if x.is_finite() && x >= lo.alpha + margin && x <= hi.alpha - margin {
        x
    } else {
        mid
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn least_squares<'a>(a: &'a Matrix, b: &'a [f64]) -> impl FnMut(&[f64]) -> Result<Evaluation<()>> + 'a {
        move |theta: &[f64]| {
            let r: Vec<f64> = a.matvec(theta)?.iter().zip(b).map(|(x, y)| x - y).collect();
            let rt = Matrix::row_vector(&r);
            let g = rt.matmul(a)?.as_slice().iter().map(|v| 2.0 * v).collect();
            Ok(Evaluation {
                value: dot(&r, &r),
                gradient: g,
                aux: (),
            })
        }
    }

    #[test]
    fn convex_quadratic_converges_quickly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dims in [2, 4, 6] {
            let rows = dims + 3;
            let a = Matrix::from_vec(rows, dims, (0..rows * dims).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let b: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // Finite termination needs near-exact line searches.
            let exact = LbfgsConfig {
                grad_tol: 1e-9,
                c2: 0.1,
                ..LbfgsConfig::default()
            };
            let res = lbfgs_minimize(least_squares(&a, &b), &vec![0.0; dims], &exact).unwrap();
            assert!(norm2(&res.eval.gradient) < 1e-8, "dims {dims}: {:?}", res.termination);
            assert!(res.iterations <= dims + 5, "dims {dims}: {} iterations", res.iterations);

            let loose = LbfgsConfig {
                grad_tol: 1e-9,
                ..LbfgsConfig::default()
            };
            let res = lbfgs_minimize(least_squares(&a, &b), &vec![0.0; dims], &loose).unwrap();
            assert!(norm2(&res.eval.gradient) < 1e-8, "dims {dims}: {:?}", res.termination);
            assert!(res.iterations <= 4 * dims + 10, "dims {dims}: {} iterations", res.iterations);
        }
    }

    #[test]
    fn stationary_start_is_returned() {
        let a = Matrix::identity(3);
        let b = [1.0, 2.0, 3.0];
        let res = lbfgs_minimize(least_squares(&a, &b), &b, &LbfgsConfig::default()).unwrap();
        assert_eq!(res.theta, b.to_vec());
        assert_eq!(res.iterations, 0);
        assert_eq!(res.termination, Termination::GradientTolerance);
    }

    #[test]
    fn accepted_iterates_decrease() {
        // Rosenbrock.
        let f = |t: &[f64]| -> Result<Evaluation<()>> {
            let (x, y) = (t[0], t[1]);
            Ok(Evaluation {
                value: (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2),
                gradient: vec![-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)],
                aux: (),
            })
        };
        let mut values = Vec::new();
        let res = lbfgs_minimize_observed(f, &[-1.2, 1.0], &LbfgsConfig::default(), |_, _, e| values.push(e.value)).unwrap();
        assert!(values.windows(2).all(|w| w[1] < w[0]));
        assert!(res.eval.value < 1e-12);
        assert!(res.eval.value <= values[0]);
    }

    #[test]
    fn threshold_stops_early() {
        let a = Matrix::identity(2);
        let b = [1.0, 1.0];
        let cfg = LbfgsConfig {
            stop_threshold: 10.0,
            ..LbfgsConfig::default()
        };
        let res = lbfgs_minimize(least_squares(&a, &b), &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(res.termination, Termination::Threshold);
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn non_finite_trial_points_are_backtracked() {
        // Defined only for t < 1; minimum at t = 0.5.
        let f = |t: &[f64]| -> Result<Evaluation<()>> {
            let x = t[0];
            if x >= 1.0 {
                return Err(Error::NonFinite("outside".into()));
            }
            Ok(Evaluation {
                value: (x - 0.5).powi(2) - (1.0 - x).ln(),
                gradient: vec![2.0 * (x - 0.5) + 1.0 / (1.0 - x)],
                aux: (),
            })
        };
        let res = lbfgs_minimize(f, &[-5.0], &LbfgsConfig::default()).unwrap();
        assert!(res.theta[0] < 1.0);
        assert!(res.eval.gradient[0].abs() < 1e-8);
    }
}
