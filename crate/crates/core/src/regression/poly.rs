use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Exponent tuples of all monomials in `k` variables with total degree at
/// most `degree`, ordered by total degree, then lexicographically with
/// higher powers of earlier variables first (`1, z1, z2, z1^2, z1 z2, z2^2, ...`).
pub fn monomial_exponents(k: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for total in 0..=degree {
        let mut cur = vec![0u32; k];
        push_compositions(&mut out, &mut cur, 0, total as u32);
    }
    out
}

fn push_compositions(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, pos: usize, remaining: u32) {
    if pos + 1 >= cur.len() {
        if let Some(last) = cur.last_mut() {
            *last = remaining;
            out.push(cur.clone());
        } else if remaining == 0 {
            out.push(Vec::new());
        }
        return;
    }
    for e in (0..=remaining).rev() {
        cur[pos] = e;
        push_compositions(out, cur, pos + 1, remaining - e);
    }
    cur[pos] = 0;
}

/// `C(k + degree, degree)`.
pub fn monomial_count(k: usize, degree: usize) -> usize {
    let mut c: usize = 1;
    for i in 1..=degree {
        c = c * (k + i) / i;
    }
    c
}

/// Largest degree `<= degree` whose basis fits in `n` samples.
pub fn effective_degree(k: usize, degree: usize, n: usize) -> usize {
    let mut deg = degree;
    while deg > 0 && monomial_count(k, deg) > n {
        deg -= 1;
    }
    deg
}

/// Least-squares polynomial in monomial coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyFit {
    pub degree: usize,
    pub exponents: Vec<Vec<u32>>,
    pub coefficients: Vec<f64>,
}

impl PolyFit {
    pub fn eval(&self, z: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(&self.coefficients)
            .map(|(e, c)| c * monomial(z, e))
            .sum()
    }
}

#[inline]
fn monomial(z: &[f64], exps: &[u32]) -> f64 {
    z.iter().zip(exps).map(|(v, &e)| v.powi(e as i32)).product()
}

/// Design matrix with one row per point and one column per monomial.
pub fn design_matrix(points: &Matrix, exponents: &[Vec<u32>]) -> Matrix {
    let mut a = Matrix::zeros(points.rows(), exponents.len());
    for r in 0..points.rows() {
        let z = points.row(r);
        for (c, e) in exponents.iter().enumerate() {
            a[(r, c)] = monomial(z, e);
        }
    }
    a
}

/// Minimum-norm least-squares polynomial of total degree `<= degree`, reduced
/// until the basis has no more terms than there are points.
///
/// Solved by SVD; singular values below `max(rows, cols) * eps * s_max` are treated as zero.
pub fn polyfit_lsq(points: &Matrix, values: &[f64], degree: usize) -> Result<PolyFit> {
    let n = points.rows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if values.len() != n {
        return Err(Error::DimensionMismatch {
            context: "polyfit values",
            expected: n,
            got: values.len(),
        });
    }
    let k = points.cols();
    let degree = effective_degree(k, degree, n);
    let exponents = monomial_exponents(k, degree);
    let a = design_matrix(points, &exponents);
    a.check_finite("polynomial design matrix")?;
    let coefficients = min_norm_lstsq(&a, values)?;
    Ok(PolyFit {
        degree,
        exponents,
        coefficients,
    })
}

pub(crate) fn min_norm_lstsq(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let (m, p) = a.shape();
    let am = DMatrix::from_row_slice(m, p, a.as_slice());
    let bv = DVector::from_column_slice(b);
    let svd = am.svd(true, true);
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if s_max == 0.0 {
        return Ok(vec![0.0; p]);
    }
    let eps = m.max(p) as f64 * f64::EPSILON * s_max;
    let x = svd
        .solve(&bv, eps)
        .map_err(|_| Error::Degenerate("least-squares system"))?;
    Ok(x.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn basis_order_and_count() {
        let e = monomial_exponents(2, 2);
        assert_eq!(
            e,
            vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
        );
        for k in 1..5 {
            for d in 0..5 {
                assert_eq!(monomial_exponents(k, d).len(), monomial_count(k, d));
            }
        }
        assert_eq!(monomial_count(1, 3), 4);
        assert_eq!(monomial_count(2, 3), 10);
    }

    #[test]
    fn degree_reduction() {
        assert_eq!(effective_degree(2, 3, 30), 3);
        assert_eq!(effective_degree(2, 3, 9), 2);
        assert_eq!(effective_degree(2, 3, 2), 0);
    }

    #[test]
    fn recovers_known_cubic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth = [0.3, -1.2, 2.0, 0.7];
        let pts: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let vals: Vec<f64> = pts
            .iter()
            .map(|z| truth[0] + truth[1] * z + truth[2] * z * z + truth[3] * z * z * z)
            .collect();
        let fit = polyfit_lsq(&Matrix::column_vector(&pts), &vals, 3).unwrap();
        for (c, t) in fit.coefficients.iter().zip(truth) {
            assert!((c - t).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_data_gives_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = Matrix::from_vec(30, 2, (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let fit = polyfit_lsq(&pts, &[2.5; 30], 3).unwrap();
        assert!((fit.coefficients[0] - 2.5).abs() < 1e-10);
        assert!(fit.coefficients[1..].iter().all(|c| c.abs() < 1e-10));
    }

    #[test]
    fn rank_deficient_points_get_minimum_norm() {
        // All points share one location: only the constant is identifiable.
        let pts = Matrix::filled(5, 1, 0.0);
        let fit = polyfit_lsq(&pts, &[1.0, 2.0, 3.0, 4.0, 5.0], 3).unwrap();
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-12);
        assert!(fit.coefficients[1..].iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn residual_not_worse_than_zero_polynomial() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let pts = Matrix::from_vec(12, 2, (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let vals: Vec<f64> = (0..12).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let fit = polyfit_lsq(&pts, &vals, 3).unwrap();
            let res: f64 = (0..12).map(|r| (fit.eval(pts.row(r)) - vals[r]).powi(2)).sum();
            let zero: f64 = vals.iter().map(|v| v * v).sum();
            assert!(res <= zero);
        }
    }
}
