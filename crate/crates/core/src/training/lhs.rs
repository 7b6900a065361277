use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::functions::TestFunction;
use crate::losses::Dataset;
use crate::tensor::Matrix;

/// Latin hypercube design: `n` points in the box `[lo, hi]`, one per stratum
/// per dimension, uniform within each stratum.
pub fn lhs_sample(n: usize, d: usize, lo: &[f64], hi: &[f64], seed: u64) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    if lo.len() != d || hi.len() != d {
        return Err(Error::InvalidBounds(format!(
            "expected {d} bounds, got lo={} hi={}",
            lo.len(),
            hi.len()
        )));
    }
    for i in 0..d {
        if !(lo[i].is_finite() && hi[i].is_finite() && lo[i] < hi[i]) {
            return Err(Error::InvalidBounds(format!(
                "dimension {i}: lo={} must be finite and below hi={}",
                lo[i], hi[i]
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Matrix::zeros(n, d);
    let mut strata: Vec<usize> = (0..n).collect();
    for j in 0..d {
        strata.shuffle(&mut rng);
        let width = (hi[j] - lo[j]) / n as f64;
        for (r, &s) in strata.iter().enumerate() {
            let u: f64 = rng.gen();
            // Clamp guards against rounding past the stratum edge.
            let x = lo[j] + width * (s as f64 + u);
            let upper = if s + 1 == n { hi[j] } else { lo[j] + width * (s + 1) as f64 };
            out[(r, j)] = x.min(upper).max(lo[j]);
        }
    }
    Ok(out)
}

/// Training set of `n` Latin hypercube inputs on the function's domain with
/// exact values and gradients.
pub fn build_dataset(f: &TestFunction, n: usize, seed: u64) -> Result<Dataset> {
    let d = f.dim();
    let lo = f.domain().lo(d);
    let hi = f.domain().hi(d);
    let inputs = lhs_sample(n, d, &lo, &hi, seed)?;
    dataset_at(f, inputs)
}

/// Dataset holding `f` and its gradient at the given inputs.
pub fn dataset_at(f: &TestFunction, inputs: Matrix) -> Result<Dataset> {
    let d = f.dim();
    let n = inputs.rows();
    let mut values = Vec::with_capacity(n);
    let mut grads = Matrix::zeros(n, d);
    for r in 0..n {
        let (v, g) = f.eval(inputs.row(r))?;
        values.push(v);
        grads.row_mut(r).copy_from_slice(&g);
    }
    Dataset::new(inputs, values, grads, f.domain().lo(d), f.domain().hi(d))
}

/// `m` i.i.d. uniform points on the function's domain.
pub fn uniform_sample(m: usize, d: usize, lo: &[f64], hi: &[f64], seed: u64) -> Result<Matrix> {
    if lo.len() != d || hi.len() != d || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return Err(Error::InvalidBounds("uniform sampling box".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Matrix::zeros(m, d);
    for r in 0..m {
        for j in 0..d {
            out[(r, j)] = rng.gen_range(lo[j]..hi[j]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::Domain;

    fn stratum_counts(x: &Matrix, j: usize, lo: f64, hi: f64) -> Vec<usize> {
        let n = x.rows();
        let mut counts = vec![0; n];
        for r in 0..n {
            let s = ((x[(r, j)] - lo) / (hi - lo) * n as f64).floor() as usize;
            counts[s.min(n - 1)] += 1;
        }
        counts
    }

    #[test]
    fn four_points_one_per_quarter() {
        let x = lhs_sample(4, 1, &[0.0], &[1.0], 9).unwrap();
        let mut v = x.column(0);
        v.sort_by(f64::total_cmp);
        for (k, val) in v.iter().enumerate() {
            assert!(*val >= k as f64 * 0.25 && *val <= (k + 1) as f64 * 0.25, "{v:?}");
        }
    }

    #[test]
    fn stratified_in_every_dimension() {
        let lo = [-1.0; 10];
        let hi = [1.0; 10];
        let x = lhs_sample(100, 10, &lo, &hi, 21).unwrap();
        for j in 0..10 {
            assert!(stratum_counts(&x, j, -1.0, 1.0).iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn seeded_bitwise() {
        let a = lhs_sample(50, 3, &[0.0; 3], &[1.0; 3], 5).unwrap();
        let b = lhs_sample(50, 3, &[0.0; 3], &[1.0; 3], 5).unwrap();
        let c = lhs_sample(50, 3, &[0.0; 3], &[1.0; 3], 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(matches!(lhs_sample(4, 1, &[1.0], &[0.0], 0), Err(Error::InvalidBounds(_))));
        assert!(matches!(lhs_sample(4, 2, &[0.0], &[1.0], 0), Err(Error::InvalidBounds(_))));
        assert!(lhs_sample(0, 2, &[0.0; 2], &[1.0; 2], 0).is_err());
    }

    #[test]
    fn dataset_gradients_match_finite_differences() {
        let f = TestFunction::from_name("f5", 4, Domain::OmegaB).unwrap();
        let data = build_dataset(&f, 40, 2).unwrap();
        assert_eq!(data.len(), 40);
        for n in 0..data.len() {
            let x = data.input(n).to_vec();
            assert_eq!(data.values()[n], f.value(&x).unwrap());
            for i in 0..4 {
                let h = 1e-6;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (f.value(&xp).unwrap() - f.value(&xm).unwrap()) / (2.0 * h);
                assert!((fd - data.gradient(n)[i]).abs() < 1e-6);
            }
        }
    }
}
