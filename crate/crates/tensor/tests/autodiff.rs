use pkchat_tensor::gradcheck::{check_gradients, check_op_case, standard_op_cases};
use pkchat_tensor::{Attrs, OpKind, ParamStore, Tape, Tensor, TensorError};
use proptest::prelude::*;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn matmul_identity_is_noop() {
    let mut tape = Tape::new();
    let x = Tensor::matrix(3, 2, vec![1.0, -2.0, 0.5, 4.0, 3.0, 7.0]).unwrap();
    let i = tape.constant(Tensor::identity(3));
    let xv = tape.constant(x.clone());
    let y = tape.matmul(i, xv).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::zeros(&[4]));
    let s = tape.softmax(z, 0).unwrap();
    assert_eq!(tape.value(s).data(), &[0.25; 4]);
}

#[test]
fn sigmoid_of_zero_is_half() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::scalar(0.0));
    let s = tape.sigmoid(z);
    assert_eq!(tape.value(s).item(), 0.5);
}

#[test]
fn shape_mismatch_names_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        TensorError::ShapeMismatch { op: "matmul", shapes: vec![vec![2, 3], vec![2, 3]] }
    );
}

#[test]
fn unknown_op_kind_rejected() {
    assert_eq!("conv2d".parse::<OpKind>(), Err(TensorError::UnknownOp("conv2d".into())));
    for kind in OpKind::all() {
        assert_eq!(kind.name().parse::<OpKind>().unwrap(), kind);
    }
}

#[test]
fn square_gradient() {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::vector(vec![3.0])).unwrap();
    let mut tape = Tape::new();
    let x = tape.param(&store, id);
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq);
    let g = tape.backward(loss).unwrap().params(&store);
    assert_eq!(g.get(id).data(), &[6.0]);
}

#[test]
fn unused_parameter_gets_zero_gradient() {
    let mut store = ParamStore::new();
    let used = store.add("used", Tensor::vector(vec![1.0, 2.0])).unwrap();
    let unused = store.add("unused", Tensor::zeros(&[2, 2])).unwrap();
    let mut tape = Tape::new();
    let x = tape.param(&store, used);
    let loss = tape.sum(x);
    let g = tape.backward(loss).unwrap().params(&store);
    assert_eq!(g.get(unused), &Tensor::zeros(&[2, 2]));
    assert_eq!(g.get(used).data(), &[1.0, 1.0]);
}

#[test]
fn non_scalar_loss_rejected() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[2]), true);
    assert_eq!(tape.backward(x).unwrap_err(), TensorError::NotScalar(vec![2]));
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let z = vec![0.3, -1.2, 2.0, 0.7];
    let mut tape = Tape::new();
    let logits = tape.leaf(Tensor::matrix(1, 4, z.clone()).unwrap(), true);
    let loss = tape.cross_entropy(logits, &[2]).unwrap();
    let g = tape.backward(loss).unwrap().wrt(&tape, logits).unwrap();
    let max = z.iter().cloned().fold(f64::MIN, f64::max);
    let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
    let expected: Vec<f64> = z
        .iter()
        .enumerate()
        .map(|(i, v)| (v - max).exp() / sum - if i == 2 { 1.0 } else { 0.0 })
        .collect();
    assert!(close(g.data(), &expected, 1e-12));

    let report = check_gradients(&[Tensor::matrix(1, 4, z).unwrap()], &[0], 1e-5, |t, v| {
        t.cross_entropy(v[0], &[2])
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn every_op_passes_finite_differences() {
    for seed in 0..5 {
        for case in standard_op_cases(seed) {
            let report = check_op_case(&case, 1e-5).unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "{} (seed {seed}): {report:?}",
                case.kind
            );
        }
    }
}

#[test]
fn standard_cases_cover_every_differentiable_kind() {
    let cases = standard_op_cases(0);
    for kind in OpKind::all().filter(|k| *k != OpKind::StraightThrough) {
        assert!(cases.iter().any(|c| c.kind == kind), "no case for {kind}");
    }
}

#[test]
fn straight_through_forwards_sample_and_passes_gradient() {
    let mut tape = Tape::new();
    let probs = tape.leaf(Tensor::matrix(1, 3, vec![0.2, 0.5, 0.3]).unwrap(), true);
    let onehot = Tensor::matrix(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
    let st = tape.straight_through(probs, onehot.clone()).unwrap();
    assert_eq!(tape.value(st), &onehot);
    let w = tape.constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
    let prod = tape.mul(st, w).unwrap();
    let loss = tape.sum(prod);
    let g = tape.backward(loss).unwrap().wrt(&tape, probs).unwrap();
    assert_eq!(g.data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn generic_dispatch_matches_direct_call() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap());
    let a = tape.forward(OpKind::Softmax, &[x], &Attrs::axis(1)).unwrap();
    let b = tape.softmax(x, 1).unwrap();
    assert_eq!(tape.value(a), tape.value(b));
    assert!(tape.forward(OpKind::Softmax, &[x], &Attrs::default()).is_err());
    assert!(tape.forward(OpKind::MatMul, &[x], &Attrs::default()).is_err());
}

#[test]
fn fully_masked_row_stays_finite() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(1, 3, vec![0.1, 0.2, 0.3]).unwrap());
    let m = tape.masked_fill(x, &[true, true, true], pkchat_tensor::MASK_FILL).unwrap();
    let s = tape.softmax(m, 1).unwrap();
    assert!(tape.value(s).is_finite());
}

fn row_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, 1..8)
}

proptest! {
    #[test]
    fn log_softmax_exponentiates_to_one(row in row_strategy()) {
        let n = row.len();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, n, row).unwrap());
        let l = tape.log_softmax(x, 1).unwrap();
        let total: f64 = tape.value(l).data().iter().map(|v| v.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        let s = tape.softmax(x, 1).unwrap();
        let total: f64 = tape.value(s).data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_shift_invariant(row in row_strategy(), shift in -50.0f64..50.0) {
        let n = row.len();
        let shifted: Vec<f64> = row.iter().map(|v| v + shift).collect();
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(1, n, row).unwrap());
        let b = tape.constant(Tensor::matrix(1, n, shifted).unwrap());
        let sa = tape.softmax(a, 1).unwrap();
        let sb = tape.softmax(b, 1).unwrap();
        prop_assert!(close(tape.value(sa).data(), tape.value(sb).data(), 1e-12));
    }

    #[test]
    fn backward_is_linear_in_the_loss(
        x in prop::collection::vec(-2.0f64..2.0, 6),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let input = Tensor::matrix(2, 3, x).unwrap();
        let grad_of = |ca: f64, cb: f64| {
            let mut tape = Tape::new();
            let v = tape.leaf(input.clone(), true);
            let s = tape.softmax(v, 1).unwrap();
            let l1 = tape.cross_entropy(v, &[0, 2]).unwrap();
            let sq = tape.mul(s, s).unwrap();
            let l2 = tape.sum(sq);
            let t1 = tape.scale(l1, ca);
            let t2 = tape.scale(l2, cb);
            let loss = tape.add(t1, t2).unwrap();
            tape.backward(loss).unwrap().wrt(&tape, v).unwrap()
        };
        let g1 = grad_of(1.0, 0.0);
        let g2 = grad_of(0.0, 1.0);
        let combined = grad_of(a, b);
        let expected: Vec<f64> = g1.data().iter().zip(g2.data()).map(|(p, q)| a * p + b * q).collect();
        prop_assert!(close(combined.data(), &expected, 1e-10));
    }
}
