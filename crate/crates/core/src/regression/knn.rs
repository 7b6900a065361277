use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::losses::Dataset;
use crate::tensor::Matrix;

/// Indices of the `n_f` training inputs nearest to `query` in input space,
/// nearest first; equal distances are ordered by ascending index.
pub fn knn_select(query: &[f64], data: &Dataset, n_f: usize) -> Result<Vec<usize>> {
    knn_select_points(query, data.inputs(), n_f)
}

/// [`knn_select`] over the rows of an arbitrary point matrix.
pub fn knn_select_points(query: &[f64], points: &Matrix, n_f: usize) -> Result<Vec<usize>> {
    if n_f > points.rows() {
        return Err(Error::TooFewSamples {
            requested: n_f,
            available: points.rows(),
        });
    }
    if query.len() != points.cols() {
        return Err(Error::DimensionMismatch {
            context: "knn query",
            expected: points.cols(),
            got: query.len(),
        });
    }
    if n_f == 0 {
        return Ok(Vec::new());
    }
    let mut dist: Vec<(f64, usize)> = (0..points.rows())
        .map(|r| {
            let d2: f64 = points.row(r).iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            (d2, r)
        })
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if n_f < dist.len() {
        dist.select_nth_unstable_by(n_f - 1, cmp);
        dist.truncate(n_f);
    }
    dist.sort_unstable_by(cmp);
    Ok(dist.into_iter().map(|(_, i)| i).collect())
}

/// Orders `(distance, index)` pairs the way [`knn_select`] does.
pub fn neighbor_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_match_comes_first() {
        let pts = Matrix::from_vec(4, 2, vec![0.0, 0.0, 1.0, 1.0, 0.5, 0.5, 0.2, 0.9]).unwrap();
        assert_eq!(knn_select_points(&[0.5, 0.5], &pts, 1).unwrap(), vec![2]);
    }

    #[test]
    fn ties_break_by_index() {
        let pts = Matrix::from_vec(4, 1, vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        assert_eq!(knn_select_points(&[0.0], &pts, 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn matches_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let n = rng.gen_range(1..60);
            let d = rng.gen_range(1..5);
            let pts = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let k = rng.gen_range(0..=n);
            let mut all: Vec<(f64, usize)> = (0..n)
                .map(|r| (pts.row(r).iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(), r))
                .collect();
            all.sort_by(neighbor_order);
            let expect: Vec<usize> = all[..k].iter().map(|p| p.1).collect();
            assert_eq!(knn_select_points(&q, &pts, k).unwrap(), expect);
        }
    }

    #[test]
    fn too_many_neighbors() {
        let pts = Matrix::zeros(3, 2);
        assert!(matches!(
            knn_select_points(&[0.0, 0.0], &pts, 4),
            Err(Error::TooFewSamples { requested: 4, available: 3 })
        ));
    }
}
