use std::collections::BTreeSet;
use std::f64::consts::PI;

use dflsim::theory_checks::{check_contraction, contraction_ratio};
use dflsim::topology::{neighbors, spectral_contraction};
use dflsim::{build_mixing, TopologyKind, TopologySpec};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Circulant spectrum of the ring: `(1 + 2 cos(2πk/n)) / 3`.
fn ring_rho(n: usize) -> f64 {
    let l2 = (1..n)
        .map(|k| ((1.0 + 2.0 * (2.0 * PI * k as f64 / n as f64).cos()) / 3.0).abs())
        .fold(0.0, f64::max);
    1.0 - l2 * l2
}

/// Product of two cycles: `(1 + 2 cos(2πa/k) + 2 cos(2πb/k)) / 5`.
fn torus_rho(k: usize) -> f64 {
    let mut l2 = 0.0_f64;
    for a in 0..k {
        for b in 0..k {
            if a == 0 && b == 0 {
                continue;
            }
            let th = |v: usize| (2.0 * PI * v as f64 / k as f64).cos();
            l2 = l2.max(((1.0 + 2.0 * th(a) + 2.0 * th(b)) / 5.0).abs());
        }
    }
    1.0 - l2 * l2
}

fn ring_adjacency(n: usize, i: usize) -> BTreeSet<usize> {
    [(i + n - 1) % n, i, (i + 1) % n].into_iter().collect()
}

fn torus_adjacency(k: usize, i: usize) -> BTreeSet<usize> {
    let (r, c) = ((i / k) as i64, (i % k) as i64);
    let k = k as i64;
    [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)]
        .iter()
        .map(|(dr, dc)| ((((r + dr) % k + k) % k) * k + ((c + dc) % k + k) % k) as usize)
        .collect()
}

#[test]
fn ring_rho_matches_circulant_formula() {
    for n in 3..=40 {
        let m = build_mixing(TopologySpec::new(TopologyKind::Ring, n)).unwrap();
        assert!((m.rho() - ring_rho(n)).abs() <= 1e-9, "n = {n}");
    }
    assert!((ring_rho(16) - 0.0989).abs() < 1e-3);
}

#[test]
fn torus_rho_matches_product_formula() {
    for k in 3..=7 {
        let m = build_mixing(TopologySpec::new(TopologyKind::Torus, k * k)).unwrap();
        assert!((m.rho() - torus_rho(k)).abs() <= 1e-9, "k = {k}");
    }
    assert!((torus_rho(4) - 0.64).abs() < 1e-12);
}

#[test]
fn full_rho_is_one() {
    for n in 2..=20 {
        let m = build_mixing(TopologySpec::new(TopologyKind::FullyConnected, n)).unwrap();
        assert!((m.rho() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn neighbor_sets_match_adjacency() {
    for n in [3, 5, 16, 17] {
        let m = build_mixing(TopologySpec::new(TopologyKind::Ring, n)).unwrap();
        for i in 0..n {
            let got: BTreeSet<usize> = m.neighbors(i).unwrap().into_iter().collect();
            assert_eq!(got, ring_adjacency(n, i));
        }
    }
    for k in [3, 4, 5] {
        let m = build_mixing(TopologySpec::new(TopologyKind::Torus, k * k)).unwrap();
        for i in 0..k * k {
            let got: BTreeSet<usize> = neighbors(m.weights(), i).unwrap().into_iter().collect();
            assert_eq!(got, torus_adjacency(k, i), "k = {k}, i = {i}");
        }
    }
}

#[test]
fn contraction_bound_is_tight_on_ring() {
    let m = build_mixing(TopologySpec::new(TopologyKind::Ring, 16)).unwrap();
    let eig = SymmetricEigen::new(m.weights() - DMatrix::from_element(16, 16, 1.0 / 16.0));
    let (k, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, 0.0), |best, (k, v)| if v.abs() > best.1 { (k, v.abs()) } else { best });
    let witness = DMatrix::from_row_slice(1, 16, eig.eigenvectors.column(k).as_slice());
    let bound = 1.0 - m.rho() + 1e-9;
    let (ratio, holds) = contraction_ratio(&witness, m.weights(), bound);
    assert!(holds);
    assert!(ratio >= 0.90, "{ratio}");
    let report = check_contraction(m.weights(), m.rho(), 200, 5);
    assert!(report.passed && report.max_ratio <= bound);
}

#[test]
fn identity_fails_contraction_for_positive_rho() {
    let eye = DMatrix::<f64>::identity(6, 6);
    assert!(spectral_contraction(&eye).is_err());
    assert!(!check_contraction(&eye, 0.1, 10, 1).passed);
}

fn kinds() -> impl Strategy<Value = TopologySpec> {
    prop_oneof![
        (3usize..30).prop_map(|n| TopologySpec::new(TopologyKind::Ring, n)),
        (3usize..7).prop_map(|k| TopologySpec::new(TopologyKind::Torus, k * k)),
        (1usize..30).prop_map(|n| TopologySpec::new(TopologyKind::FullyConnected, n)),
    ]
}

proptest! {
    #[test]
    fn weights_are_symmetric_and_doubly_stochastic(spec in kinds()) {
        let m = build_mixing(spec).unwrap();
        let w = m.weights();
        prop_assert!((w - w.transpose()).amax() <= 1e-12);
        for i in 0..spec.n {
            prop_assert!((w.row(i).sum() - 1.0).abs() <= 1e-12);
            prop_assert!((w.column(i).sum() - 1.0).abs() <= 1e-12);
        }
        prop_assert!(w.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn gossip_preserves_column_average(
        spec in kinds(),
        d in 1usize..6,
        seed in any::<u64>(),
    ) {
        let m = build_mixing(spec).unwrap();
        let n = spec.n;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(d, n, |_, _| rng.random_range(-1.0..1.0));
        let mixed = &x * m.weights().transpose();
        prop_assert!((mixed.column_mean() - x.column_mean()).amax() <= 1e-10);
    }
}
