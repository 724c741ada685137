mod support;

use mpstn::model::{NormalizedAdjacency, Variant};
use mpstn::reference;
use mpstn::synthgen::{generate_network, Topology};
use mpstn::tensor::{Tape, Tensor};
use proptest::prelude::*;

#[test]
fn fast_operators_match_nested_loops() {
    for r in support::oracle_suite(60) {
        assert!(r.max_error <= 1e-10, "{}: {:e} at {}", r.name, r.max_error, r.worst);
    }
}

#[test]
fn documented_conv_example() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap());
    let k = t.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let b = t.constant(Tensor::zeros(&[1]));
    let y = t.conv2d(x, k, b, 0, 1).unwrap();
    assert_eq!(t.value(y).data(), [6.0, 8.0, 12.0, 14.0]);
}

#[test]
fn folding_is_a_bijection_without_look_ahead() {
    let audit = support::folding_audit(20, 10, 3, 4);
    assert!(audit.samples > 100 && audit.roundtrips > 300, "{audit:?}");
    assert_eq!(audit.leaks, 0, "{audit:?}");
    assert_eq!(audit.mismatches, 0, "{audit:?}");
}

#[test]
fn metric_hand_cases() {
    assert!(support::metric_cases() <= 1e-12);
    assert_eq!(support::rmse_below_mae(1000), 0);
}

#[test]
fn hourly_totals_vary_less_than_quarter_hours() {
    let (hourly, quarters) = support::inter_period_stability(60, 400);
    assert!(quarters.iter().all(|&q| hourly < q), "hourly {hourly}, quarters {quarters:?}");
}

#[test]
fn forward_is_exactly_equivariant() {
    for (i, v) in Variant::ALL.into_iter().enumerate() {
        for seed in 0..3 {
            assert_eq!(support::equivariance_gap(v, 10 * i as u64 + seed), 0.0, "{v:?}");
        }
    }
}

#[test]
fn normalized_adjacency_spectrum_in_unit_interval() {
    for (kind, s) in [(Topology::Line, 5), (Topology::Tree, 10), (Topology::TwoLineWithInterchange, 10)] {
        for seed in 0..5 {
            let net = generate_network(kind, s, seed).unwrap();
            let a = NormalizedAdjacency::from_network(&net);
            let m = nalgebra::DMatrix::from_row_slice(s, s, a.as_tensor().data());
            assert_eq!(m, m.transpose());
            let eig = m.symmetric_eigen().eigenvalues;
            assert!(eig.iter().all(|&e| (-1.0 - 1e-12..=1.0 + 1e-12).contains(&e)), "{eig}");
            // the largest eigenvalue of D^-1/2 (A+I) D^-1/2 is exactly one
            assert!((eig.max() - 1.0).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear_in_the_input(seed in 0u64..10_000, alpha in -3.0f64..3.0) {
        let mut g = support::rng(seed);
        let x = support::uniform(&mut g, &[2, 5, 6]);
        let z = support::uniform(&mut g, &[2, 5, 6]);
        let k = support::uniform(&mut g, &[3, 2, 3, 3]);
        let conv = |input: Tensor| {
            let mut t = Tape::new();
            let (xv, kv, bv) = (t.constant(input), t.constant(k.clone()), t.constant(Tensor::zeros(&[3])));
            let y = t.conv2d(xv, kv, bv, 1, 1).unwrap();
            t.value(y).clone()
        };
        let combo = Tensor::from_fn(x.shape(), |i| x.data()[i] + alpha * z.data()[i]);
        let (cx, cz, cc) = (conv(x), conv(z), conv(combo));
        let expected: Vec<f64> = cx.data().iter().zip(cz.data()).map(|(a, b)| a + alpha * b).collect();
        prop_assert!(support::max_abs_diff(cc.data(), &expected) < 1e-10);
    }

    #[test]
    fn matmul_matches_reference(n in 1usize..6, k in 1usize..6, m in 1usize..6, seed in 0u64..10_000) {
        let mut g = support::rng(seed);
        let a = support::uniform(&mut g, &[n, k]);
        let b = support::uniform(&mut g, &[k, m]);
        let mut t = Tape::new();
        let (av, bv) = (t.constant(a.clone()), t.constant(b.clone()));
        let y = t.matmul(av, bv).unwrap();
        let expected = reference::matmul(a.data(), b.data(), n, k, m);
        prop_assert!(support::max_abs_diff(t.value(y).data(), &expected) < 1e-12);
    }

    #[test]
    fn forward_values_stay_finite(seed in 0u64..1_000, scale in 0.0f64..1e3) {
        let mut g = support::rng(seed);
        let x = Tensor::from_fn(&[1, 2, 4, 4], |_| scale * rand::Rng::random_range(&mut g, -1.0..1.0));
        let mut t = Tape::new();
        let xv = t.constant(x.reshape(&[2, 4, 4]).unwrap());
        let k = t.constant(support::uniform(&mut g, &[3, 2, 3, 3]));
        let b = t.constant(Tensor::zeros(&[3]));
        let y = t.conv2d(xv, k, b, 1, 1).unwrap();
        let y = t.relu(y);
        let y = t.maxpool2d(y, 2, 2).unwrap();
        prop_assert!(t.value(y).is_finite());
    }
}
