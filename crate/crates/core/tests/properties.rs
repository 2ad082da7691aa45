use mlhs::linalg::{
    complement_projector, exp_norm, exp_norm_bound, matrix_exp, projector_onto_columns, pseudo_inverse, default_rcond, DenseMatrix,
};
use mlhs::linear::{generate_linear_data_from, toy_system, SimMode};
use mlhs::manifold::{ds_gradient, ds_value, fit_pca, DsIndicator};
use mlhs::nn::{Activation, Mlp};
use mlhs::pde::{interpolate, restrict, Field2D, TrajectoryDataset};
use mlhs::runtime::{spearman, stopping_time};
use mlhs::training::{full_loss, Objective, ResolvedModel, SurrogateArch, SurrogateModel};
use proptest::prelude::*;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = DenseMatrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-1.0f64..1.0, r * c).prop_map(move |v| DenseMatrix::from_vec(r, c, v).unwrap())
    })
}

fn square(max: usize) -> impl Strategy<Value = DenseMatrix> {
    (1..=max).prop_flat_map(|n| prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| DenseMatrix::from_vec(n, n, v).unwrap()))
}

fn close(a: &DenseMatrix, b: &DenseMatrix, tol: f64) -> bool {
    a.sub(b).max_abs() <= tol * (1.0 + b.max_abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn penrose_identities(a in matrix(6, 6)) {
        let p = pseudo_inverse(&a, default_rcond(&a)).unwrap();
        prop_assert!(close(&a.mul(&p).mul(&a), &a, 1e-9));
        prop_assert!(close(&p.mul(&a).mul(&p), &p, 1e-9));
        let ap = a.mul(&p);
        let pa = p.mul(&a);
        prop_assert!(close(&ap, &ap.transpose(), 1e-9));
        prop_assert!(close(&pa, &pa.transpose(), 1e-9));
    }

    #[test]
    fn projectors_are_idempotent_and_complementary(n in 2usize..7, cols in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 1..3)) {
        let k = cols.len().min(n - 1);
        let basis = DenseMatrix::from_columns(&cols[..k].iter().map(|c| c[..n].to_vec()).collect::<Vec<_>>());
        prop_assume!(mlhs::linalg::svd(&basis).unwrap().s.iter().all(|&s| s > 1e-3));
        let p = projector_onto_columns(&basis).unwrap();
        let q = complement_projector(&basis).unwrap();
        prop_assert!(close(&p.mul(&p), &p, 1e-12));
        prop_assert!(close(&p, &p.transpose(), 1e-12));
        prop_assert!(close(&p.add(&q), &DenseMatrix::identity(n), 1e-12));
        prop_assert!(p.mul(&q).max_abs() < 1e-12);
        prop_assert!(close(&p.mul(&basis), &basis, 1e-12));
    }

    #[test]
    fn exponential_semigroup(m in square(5), s in 0.0f64..1.5, t in 0.0f64..1.5) {
        let lhs = matrix_exp(&m, s + t).unwrap();
        let rhs = matrix_exp(&m, s).unwrap().mul(&matrix_exp(&m, t).unwrap());
        prop_assert!(close(&lhs, &rhs, 1e-11));
    }

    #[test]
    fn exp_norm_bound_dominates(m in square(5), t in 0.0f64..5.0) {
        let bound = exp_norm_bound(&m, t).unwrap();
        prop_assert!(bound >= exp_norm(&m, t).unwrap() * (1.0 - 1e-12));
    }

    #[test]
    fn mlp_gradients_match_central_differences(
        dims in prop::collection::vec(1usize..5, 2..5),
        linear in any::<bool>(),
        seed in 0u64..1000,
        x_seed in 0u64..1000,
    ) {
        let act = if linear { Activation::Identity } else { Activation::Tanh };
        let net = Mlp::new(&dims, act, seed).unwrap();
        let mut rng = mlhs::rng::stream_rng(x_seed, 0);
        let x = mlhs::rng::normal_vec(&mut rng, dims[0], 1.0);
        let up = mlhs::rng::normal_vec(&mut rng, *dims.last().unwrap(), 1.0);
        let f = |n: &Mlp, x: &[f64]| n.forward(x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
        let (gp, gx) = net.backward_single(&x, &up);
        let h = 1e-5;
        let mut probe = net.clone();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..net.n_params() {
            let o = net.params()[i];
            probe.params_mut()[i] = o + h;
            let fp = f(&probe, &x);
            probe.params_mut()[i] = o - h;
            let fm = f(&probe, &x);
            probe.params_mut()[i] = o;
            let fd = (fp - fm) / (2.0 * h);
            num += (gp[i] - fd).powi(2);
            den += fd * fd;
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (f(&net, &xp) - f(&net, &xm)) / (2.0 * h);
            num += (gx[i] - fd).powi(2);
            den += fd * fd;
        }
        prop_assume!(den > 1e-12);
        prop_assert!((num / den).sqrt() < 1e-5, "relative error {}", (num / den).sqrt());
    }

    #[test]
    fn restrict_after_interpolate_is_identity(nx in 1usize..9, ny in 1usize..9, v in prop::collection::vec(-10.0f64..10.0, 64)) {
        let coarse = Field2D::from_fn(nx, ny, 0.1, |i, j| v[(j * nx + i) % v.len()]);
        let back = restrict(&interpolate(&coarse)).unwrap();
        prop_assert_eq!(back.values, coarse.values);
    }

    #[test]
    fn stopping_time_is_monotone_in_threshold(err in prop::collection::vec(0.0f64..10.0, 1..50), k1 in 0.0f64..10.0, k2 in 0.0f64..10.0) {
        let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
        prop_assert!(stopping_time(&err, lo) <= stopping_time(&err, hi));
        prop_assert!(stopping_time(&err, hi) < err.len());
    }

    #[test]
    fn spearman_ignores_monotone_transforms(a in prop::collection::vec(-5.0f64..5.0, 3..30)) {
        let b: Vec<f64> = a.iter().map(|x| x.exp() + 2.0 * x).collect();
        let r = spearman(&a, &b);
        prop_assume!(r.is_finite());
        prop_assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pca_indicator_gradient_has_unit_norm(seed in 0u64..500, latent in 1usize..3) {
        let dim = 5;
        let mut rng = mlhs::rng::stream_rng(seed, 3);
        let basis: Vec<Vec<f64>> = (0..latent).map(|_| mlhs::rng::normal_vec(&mut rng, dim, 1.0)).collect();
        let mut data = Vec::new();
        for _ in 0..20 {
            let z = mlhs::rng::normal_vec(&mut rng, latent, 1.0);
            for d in 0..dim {
                data.push((0..latent).map(|l| z[l] * basis[l][d]).sum::<f64>());
            }
        }
        let ind = DsIndicator::new(fit_pca(&data, dim, latent).unwrap(), false).unwrap();
        let u = mlhs::rng::normal_vec(&mut rng, dim, 1.0);
        prop_assume!(ds_value(&ind, &u) > 1e-6);
        let g = ds_gradient(&ind, &u);
        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn penalized_objectives_reduce_to_ols_at_zero_strength(seed in 0u64..200, hidden in 1usize..6) {
        let sys = toy_system(seed);
        let init = vec![vec![1.0, 0.1], vec![-0.3, 0.2]];
        let data = generate_linear_data_from(&sys, &init, 4, 1e-2, seed).unwrap();
        let td = TrajectoryDataset::from(&data);
        let rm = ResolvedModel::Linear { sys, mode: SimMode::DiscreteMap };
        let ind = DsIndicator::new(fit_pca(&[1.0, 0.0, -2.0, 0.0], 2, 1).unwrap(), false).unwrap();
        let base = SurrogateModel::new(SurrogateArch::Dense { time_features: false }, 2, 2, &[hidden], Activation::Tanh, Objective::Ols, seed).unwrap();
        let idx: Vec<usize> = (0..td.len()).collect();
        let ols = full_loss(&base, &rm, None, &td, &idx).unwrap();
        for obj in [Objective::Tr, Objective::Mols] {
            let m = base.clone().with_objective(obj, 0.0, 0.0);
            prop_assert_eq!(full_loss(&m, &rm, Some(&ind), &td, &idx).unwrap(), ols);
        }
    }

    #[test]
    fn dataset_bytes_round_trip(seed in 0u64..200, n in 1usize..6) {
        let sys = toy_system(seed);
        let init = vec![vec![0.5, 0.0]];
        let td = TrajectoryDataset::from(&generate_linear_data_from(&sys, &init, n, 1e-3, seed).unwrap());
        let back = TrajectoryDataset::from_bytes(&td.to_bytes()).unwrap();
        prop_assert_eq!(back, td);
    }
}
