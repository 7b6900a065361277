use drills::functions::{Domain, TestFunction, FUNCTION_NAMES};
use drills::losses::{Dataset, HyperParams};
use drills::regression::{
    design_matrix, fit_active_subspace, knn_select_points, metrics, polyfit_lsq, relative_sensitivity,
};
use drills::tensor::Matrix;
use drills::training::{build_dataset, init_transform, lhs_sample, uniform_sample, TrainedModel};
use drills::transforms::{RevNet, TransformKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn residual(a: &Matrix, coef: &[f64], y: &[f64]) -> f64 {
    let fitted = a.matvec(coef).unwrap();
    fitted.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn knn_equals_full_sort(seed in any::<u64>(), n in 1usize..60, d in 1usize..5, pick in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Coarse grid coordinates produce frequent distance ties.
        let data: Vec<f64> = (0..n * d).map(|_| rng.gen_range(0..4) as f64 * 0.5).collect();
        let pts = Matrix::from_vec(n, d, data).unwrap();
        let q: Vec<f64> = (0..d).map(|_| rng.gen_range(0..4) as f64 * 0.5).collect();
        let nf = pick.min(n);
        let mut brute: Vec<(f64, usize)> = (0..n)
            .map(|i| (pts.row(i).iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut expected: Vec<usize> = brute[..nf].iter().map(|p| p.1).collect();
        let mut got = knn_select_points(&q, &pts, nf).unwrap();
        expected.sort_unstable();
        got.sort_unstable();
        prop_assert_eq!(got, expected);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn polyfit_residual_is_optimal(seed in any::<u64>(), k in 1usize..4, degree in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 40;
        let pts = random_matrix(&mut rng, n, k, 1.0);
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let fit = polyfit_lsq(&pts, &y, degree).unwrap();
        let a = design_matrix(&pts, &fit.exponents);
        let best = residual(&a, &fit.coefficients, &y);
        for j in 0..fit.coefficients.len() {
            for delta in [1e-3, -1e-3] {
                let mut c = fit.coefficients.clone();
                c[j] += delta;
                prop_assert!(residual(&a, &c, &y) >= best * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn active_subspace_is_orthonormal_eigenbasis(seed in any::<u64>(), d in 2usize..9, n in 5usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(&mut rng, n, d, 1.0);
        let g = random_matrix(&mut rng, n, d, 3.0);
        let data = Dataset::new(x, vec![0.0; n], g, vec![-1.0; d], vec![1.0; d]).unwrap();
        let k = rng.gen_range(1..=d);
        let m = fit_active_subspace(&data, k).unwrap();
        let w = &m.w_active;
        let wtw = w.transpose().matmul(w).unwrap();
        prop_assert!(wtw.max_abs_diff(&Matrix::identity(k)) < 1e-10);
        let c_norm = m.covariance.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..k {
            let col = w.column(j);
            let cw = m.covariance.matvec(&col).unwrap();
            let res = cw.iter().zip(&col).map(|(a, b)| (a - m.eigenvalues[j] * b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(res < 1e-8 * c_norm.max(f64::MIN_POSITIVE));
        }
        prop_assert!(m.eigenvalues.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn metrics_ignore_order_and_affine_rescaling(seed in any::<u64>(), n in 2usize..50, a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        t[0] = -1.5;
        t[1] = 1.5;
        let p: Vec<f64> = t.iter().map(|v| v + rng.gen_range(-0.1..0.1)).collect();
        let (e, r) = metrics(&t, &p).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.reverse();
        order.rotate_left(n / 3);
        let tp: Vec<f64> = order.iter().map(|&i| t[i]).collect();
        let pp: Vec<f64> = order.iter().map(|&i| p[i]).collect();
        let (e2, r2) = metrics(&tp, &pp).unwrap();
        prop_assert!((e - e2).abs() <= 1e-12 * e.max(1e-300) && (r - r2).abs() <= 1e-12 * r.max(1e-300));
        let ts: Vec<f64> = t.iter().map(|v| a * v + b).collect();
        let ps: Vec<f64> = p.iter().map(|v| a * v + b).collect();
        let (e3, _) = metrics(&ts, &ps).unwrap();
        prop_assert!((e - e3).abs() <= 1e-9 * e);
    }

    #[test]
    fn relative_sensitivity_sums_to_one(seed in any::<u64>(), d in 2usize..6, revnet in any::<bool>()) {
        let kind = if revnet { TransformKind::RevNet } else { TransformKind::Prnn };
        let f = TestFunction::from_name("f5", d, Domain::OmegaB).unwrap();
        let data = build_dataset(&f, 30, seed).unwrap();
        let t = init_transform(kind, d, seed).unwrap();
        let model = TrainedModel::untrained(t, HyperParams::new(d, 1).unwrap(), &data, seed).unwrap();
        let rs = relative_sensitivity(&model, &data).unwrap();
        prop_assert_eq!(rs.len(), d);
        prop_assert!(rs.iter().all(|v| *v >= 0.0));
        prop_assert!((rs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lhs_has_one_sample_per_stratum(seed in any::<u64>(), n in 1usize..200, d in 1usize..12) {
        let lo: Vec<f64> = (0..d).map(|i| -(i as f64)).collect();
        let hi: Vec<f64> = (0..d).map(|i| 1.0 + i as f64).collect();
        let x = lhs_sample(n, d, &lo, &hi, seed).unwrap();
        for j in 0..d {
            let mut hit = vec![false; n];
            for r in 0..n {
                let u = (x[(r, j)] - lo[j]) / (hi[j] - lo[j]);
                let s = ((u * n as f64).floor() as usize).min(n - 1);
                prop_assert!(!hit[s]);
                hit[s] = true;
            }
        }
        let again = lhs_sample(n, d, &lo, &hi, seed).unwrap();
        prop_assert!(x.as_slice().iter().zip(again.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn analytic_gradients_match_finite_differences(seed in any::<u64>(), d in 2usize..8) {
        for name in FUNCTION_NAMES {
            let dim = if matches!(name, "f1" | "f2" | "f3") { 2 } else { d };
            for domain in [Domain::OmegaA, Domain::OmegaB] {
                let f = TestFunction::from_name(name, dim, domain).unwrap();
                let x = uniform_sample(1, dim, &domain.lo(dim), &domain.hi(dim), seed).unwrap();
                let x = x.row(0).to_vec();
                let (_, g) = f.eval(&x).unwrap();
                let h = 1e-6;
                for i in 0..dim {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (f.value(&xp).unwrap() - f.value(&xm).unwrap()) / (2.0 * h);
                    prop_assert!((fd - g[i]).abs() < 1e-6, "{} d={} i={}: {} vs {}", name, dim, i, fd, g[i]);
                }
            }
        }
    }

    #[test]
    fn revnet_round_trip_is_exact(seed in any::<u64>(), d in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = RevNet::default_for(d, &mut rng).unwrap();
        let x = random_matrix(&mut rng, 20, d, 2.0);
        let back = net.inverse_batch(&net.forward_batch(&x));
        prop_assert!(back.max_abs_diff(&x) < 1e-10);
    }
}
