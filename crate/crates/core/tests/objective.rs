use dflsim::data::partition_rows;
use dflsim::objective::{
    full_local_gradient, global_gradient, global_loss, local_loss, ridge_optimum, stochastic_gradient,
};
use dflsim::theory_checks::{estimate_sigma_sq, estimate_smoothness, estimate_zeta_sq, max_gradient_lipschitz_ratio};
use dflsim::{derive_stream, partition_iid, Dataset, ObjectiveConfig, Purpose, Shard, StreamKey};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn normal_vec(rng: &mut rand_chacha::ChaCha12Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

/// Central differences of `f` with step `h`.
fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |k, _| {
        let mut up = x.clone();
        let mut down = x.clone();
        up[k] += h;
        down[k] -= h;
        (f(&up) - f(&down)) / (2.0 * h)
    })
}

#[test]
fn finite_differences_match_full_batch_gradient() {
    let ds = Dataset::generate(200, 20, 0.05, 3).unwrap();
    let shards = partition_iid(&ds, 4).unwrap();
    let cfg = ObjectiveConfig { lambda: 1e-3, batch_size: 1000 };
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
    for p in 0..20 {
        let x = normal_vec(&mut rng, 20);
        let sh = &shards[p % 4];
        let analytic = stochastic_gradient(&x, sh, &ds, &cfg, &mut rng).unwrap();
        let numeric = fd_gradient(|z| local_loss(z, sh, &ds, cfg.lambda).unwrap(), &x, 1e-5);
        let rel = (&analytic - &numeric).norm() / analytic.norm();
        assert!(rel <= 1e-5, "point {p}: relative error {rel:e}");
    }
    let x = normal_vec(&mut rng, 20);
    let numeric = fd_gradient(|z| global_loss(z, &ds, cfg.lambda).unwrap(), &x, 1e-5);
    let analytic = global_gradient(&x, &ds, cfg.lambda).unwrap();
    assert!((&analytic - &numeric).norm() / analytic.norm() <= 1e-5);
}

#[test]
fn minibatch_gradient_is_unbiased() {
    let ds = Dataset::generate(64, 16, 0.05, 8).unwrap();
    let shard = ds.full_shard();
    let cfg = ObjectiveConfig { lambda: 1e-4, batch_size: 8 };
    let x = DVector::from_fn(16, |k, _| (k as f64 * 0.37).sin());
    let full = full_local_gradient(&x, &shard, &ds, cfg.lambda).unwrap();
    let draws = 2000;
    let samples: Vec<DVector<f64>> = (0..draws)
        .map(|t| {
            let mut s = derive_stream(StreamKey::new(4, 0, t, 0, Purpose::DataBatch));
            stochastic_gradient(&x, &shard, &ds, &cfg, &mut s).unwrap()
        })
        .collect();
    for k in 0..16 {
        let vals: Vec<f64> = samples.iter().map(|g| g[k]).collect();
        let mean = vals.iter().sum::<f64>() / draws as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        assert!((mean - full[k]).abs() <= 4.0 * se, "coordinate {k}");
    }
}

#[test]
fn analytic_smoothness_bounds_gradient_differences() {
    let ds = Dataset::generate(400, 30, 0.05, 21).unwrap();
    let shards = partition_iid(&ds, 8).unwrap();
    let l = estimate_smoothness(&ds, &shards, 1e-4);
    let ratio = max_gradient_lipschitz_ratio(&ds, &shards, 1e-4, 100, 2).unwrap();
    assert!(ratio <= l * (1.0 + 1e-12), "{ratio} > {l}");
}

#[test]
fn two_sample_shard_variance_by_enumeration() {
    // Batches of one from two rows: the gradient is u or v with equal
    // probability, so the variance is (|u-m|^2 + |v-m|^2)/2 with m = (u+v)/2.
    let rows = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0]);
    let ds = Dataset::from_parts(&rows, DVector::from_vec(vec![0.5, -2.0]), DVector::zeros(3)).unwrap();
    let x = DVector::from_vec(vec![0.3, -0.2, 0.1]);
    let lambda = 0.01;
    let one = |s: usize| full_local_gradient(&x, &Shard { client: 0, rows: s..s + 1 }, &ds, lambda).unwrap();
    let (u, v) = (one(0), one(1));
    let m = (&u + &v) / 2.0;
    let expected = ((&u - &m).norm_squared() + (&v - &m).norm_squared()) / 2.0;
    let cfg = ObjectiveConfig { lambda, batch_size: 1 };
    let got = estimate_sigma_sq(&[x], &[ds.full_shard()], &ds, &cfg, 500, 1).unwrap();
    assert!((got - expected).abs() <= 1e-12 * expected, "{got} vs {expected}");
}

#[test]
fn sigma_estimate_is_stable_across_seeds() {
    let ds = Dataset::generate(800, 20, 0.05, 5).unwrap();
    let shards = partition_iid(&ds, 4).unwrap();
    let cfg = ObjectiveConfig { lambda: 1e-4, batch_size: 8 };
    let x = vec![DVector::zeros(20)];
    let a = estimate_sigma_sq(&x, &shards, &ds, &cfg, 2000, 1).unwrap();
    let b = estimate_sigma_sq(&x, &shards, &ds, &cfg, 2000, 2).unwrap();
    assert!((a - b).abs() <= 0.1 * a.max(b), "{a} vs {b}");
}

#[test]
fn zeta_vanishes_for_duplicated_shards() {
    let base = Dataset::generate(25, 6, 0.05, 9).unwrap();
    let one = base.features().transpose();
    let rows = DMatrix::from_fn(100, 6, |r, c| one[(r % 25, c)]);
    let labels = DVector::from_fn(100, |r, _| base.labels()[r % 25]);
    let ds = Dataset::from_parts(&rows, labels, base.true_w().clone()).unwrap();
    let shards = partition_rows(100, 4).unwrap();
    let pts = vec![DVector::zeros(6), DVector::from_element(6, 1.5)];
    assert!(estimate_zeta_sq(&pts, &shards, &ds, 1e-4).unwrap() <= 1e-12);
    let iid = Dataset::generate(2000, 50, 0.05, 9).unwrap();
    let z = estimate_zeta_sq(&[DVector::zeros(50)], &partition_iid(&iid, 16).unwrap(), &iid, 1e-4).unwrap();
    assert!(z > 0.0 && z.is_finite());
}

#[test]
fn ridge_optimum_is_stationary_and_minimal() {
    let ds = Dataset::generate(300, 12, 0.05, 13).unwrap();
    let (x, f) = ridge_optimum(&ds, 1e-3).unwrap();
    assert!(global_gradient(&x, &ds, 1e-3).unwrap().norm() <= 1e-9);
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(2);
    for _ in 0..20 {
        let y = &x + normal_vec(&mut rng, 12) * 0.1;
        assert!(global_loss(&y, &ds, 1e-3).unwrap() >= f);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn global_loss_midpoint_convexity(seed in any::<u64>(), scale in 0.01f64..10.0) {
        let ds = Dataset::generate(40, 5, 0.05, 17).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let x = normal_vec(&mut rng, 5) * scale;
        let y = normal_vec(&mut rng, 5) * scale;
        let mid = (&x + &y) / 2.0;
        let f = |z: &DVector<f64>| global_loss(z, &ds, 1e-4).unwrap();
        prop_assert!(f(&mid) <= (f(&x) + f(&y)) / 2.0 + 1e-12 * (f(&x) + f(&y)));
    }

    #[test]
    fn partition_is_exact_cover(m in 1usize..500, n in 1usize..40) {
        prop_assume!(m >= n);
        let shards = partition_rows(m, n).unwrap();
        prop_assert_eq!(shards.len(), n);
        prop_assert_eq!(shards.iter().map(Shard::len).sum::<usize>(), m);
        let mut next = 0;
        for s in &shards {
            prop_assert_eq!(s.rows.start, next);
            prop_assert!(!s.is_empty());
            next = s.rows.end;
        }
        let sizes: Vec<usize> = shards.iter().map(Shard::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}
