mod support;

use mpstn::tensor::{Tape, Tensor};

const TOLERANCE: f64 = 1e-4;

#[test]
fn every_operator_matches_central_differences() {
    for r in support::op_gradient_suite(20) {
        assert_eq!(r.instances, 20);
        assert!(r.max_error < TOLERANCE, "{}: max relative error {:e}", r.name, r.max_error);
    }
}

#[test]
fn full_network_matches_central_differences() {
    let r = support::forward_gradient_suite(20, 6);
    assert!(r.max_error < TOLERANCE, "max relative error {:e} at {}", r.max_error, r.worst);
    // kinks are rare; a high rate would mean the check is not measuring much
    assert!(r.kinks * 10 < r.coordinates, "{} kinks in {} coordinates", r.kinks, r.coordinates);
}

#[test]
fn replaying_a_tape_is_bit_identical() {
    let mut g = support::rng(1);
    let x = support::uniform(&mut g, &[2, 5, 5]);
    let k = support::uniform(&mut g, &[3, 2, 3, 3]);
    let run = || {
        let mut t = Tape::new();
        let (xv, kv, bv) = (t.param(x.clone()), t.param(k.clone()), t.constant(Tensor::zeros(&[3])));
        let y = t.conv2d(xv, kv, bv, 1, 1).unwrap();
        let y = t.relu(y);
        let y = t.maxpool2d(y, 2, 2).unwrap();
        let loss = support::project(&mut t, y, 3).unwrap();
        t.backward(loss).unwrap();
        (t.grad(xv).unwrap(), t.grad(kv).unwrap())
    };
    let (a, b) = (run(), run());
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.0), bits(&b.0));
    assert_eq!(bits(&a.1), bits(&b.1));
}
