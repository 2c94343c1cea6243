mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use typegraph::diff::{finite_diff_check, Activation, Mode, ParamStore, Tape, Tensor};
use typegraph::Error;

fn t(rows: &[&[f64]]) -> Tensor<f64> {
    Tensor::from_f64_rows(rows).unwrap()
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let b = tape.constant(t(&[&[5.0, 6.0], &[7.0, 8.0]]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c), &t(&[&[19.0, 22.0], &[43.0, 50.0]]));
    let i = tape.constant(Tensor::eye(2));
    let ai = tape.matmul(a, i).unwrap();
    assert_eq!(tape.value(ai), tape.value(a));
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::<f64>::zeros(2, 3));
    let b = tape.constant(Tensor::<f64>::zeros(2, 3));
    match tape.matmul(a, b) {
        Err(Error::ShapeMismatch { left, right, .. }) => {
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![2, 3]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn activation_values() {
    assert_eq!(Activation::Tanh.apply(0.0f64), 0.0);
    assert_eq!(Activation::Sigmoid.apply(0.0f64), 0.5);
    assert_eq!(Activation::Relu.apply(-2.0f64), 0.0);
    // tanh-approximated GELU at 3, computed directly.
    let x: f64 = 3.0;
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let oracle = 0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh());
    assert!((Activation::Gelu.apply(x) - oracle).abs() < 1e-15);
    assert!((Activation::Gelu.apply(x) - 2.9964).abs() < 1e-4);
    assert!(matches!("swish".parse::<Activation>(), Err(Error::UnknownActivation(_))));
}

#[test]
fn softmax_rows_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[&[0.0, 0.0], &[1.0, 0.0]]));
    let y = tape.softmax_rows(x).unwrap();
    let v = tape.value(y);
    assert_eq!(v.row(0), &[0.5, 0.5]);
    let e = std::f64::consts::E;
    assert!((v.at(1, 0) - e / (1.0 + e)).abs() < 1e-15);
}

#[test]
fn masked_softmax_zeroes_masked_columns() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[&[1.0, 5.0, 2.0]]));
    let y = tape.masked_softmax_rows(x, Some(&[true, false, true])).unwrap();
    let v = tape.value(y);
    assert_eq!(v.at(0, 1), 0.0);
    assert!((v.at(0, 0) + v.at(0, 2) - 1.0).abs() < 1e-12);
    assert!(matches!(tape.masked_softmax_rows(x, Some(&[false, false, false])), Err(Error::AllMasked)));
}

#[test]
fn concat_then_slice_is_identity() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let b = tape.constant(t(&[&[5.0], &[6.0]]));
    let c = tape.concat(&[a, b]).unwrap();
    assert_eq!(tape.value(c), &t(&[&[1.0, 2.0, 5.0], &[3.0, 4.0, 6.0]]));
    let a2 = tape.slice_cols(c, 0, 2).unwrap();
    let b2 = tape.slice_cols(c, 2, 1).unwrap();
    assert_eq!(tape.value(a2), tape.value(a));
    assert_eq!(tape.value(b2), tape.value(b));
}

#[test]
fn bce_examples() {
    let mut tape = Tape::new();
    let p = tape.constant(t(&[&[0.5]]));
    let l = tape.bce(p, &[1.0]).unwrap();
    assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
    // Clamped at ε: log(1e-12) instead of infinity.
    let p0 = tape.constant(t(&[&[0.0]]));
    let l0 = tape.bce(p0, &[1.0]).unwrap();
    assert!((tape.value(l0).item() - (-(1e-12f64).ln())).abs() < 1e-9);
}

#[test]
fn bce_gradient_is_zero_where_clamped() {
    let mut tape = Tape::new();
    let p = tape.input(t(&[&[0.0, 1.0, 0.3]]));
    let l = tape.bce(p, &[1.0, 0.0, 1.0]).unwrap();
    let g = tape.backward(l).unwrap();
    let gp = g.get(p).unwrap();
    assert_eq!(gp[0], 0.0);
    assert_eq!(gp[1], 0.0);
    assert!((gp[2] + 1.0 / 0.3).abs() < 1e-12);
}

#[test]
fn backward_of_sum_of_squares() {
    let mut tape = Tape::new();
    let x = tape.input(t(&[&[1.0, -2.0, 3.0]]));
    let sq = tape.mul(x, x).unwrap();
    let l = tape.sum(sq);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(x).unwrap(), &[2.0, -4.0, 6.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.input(t(&[&[1.0, 2.0]]));
    assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
}

#[test]
fn dropout_is_identity_in_eval_and_unbiased_in_train() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::filled(100, 100, 1.0));
    let e = tape.dropout(x, 0.3, Mode::Eval, &mut rng).unwrap();
    assert_eq!(e, x);
    let y = tape.dropout(x, 0.3, Mode::Train, &mut rng).unwrap();
    let v = tape.value(y);
    let mean = v.data().iter().sum::<f64>() / v.len() as f64;
    let zeros = v.data().iter().filter(|&&z| z == 0.0).count() as f64 / v.len() as f64;
    assert!((mean - 1.0).abs() < 0.03, "mean {mean}");
    assert!((zeros - 0.3).abs() < 0.02, "zero fraction {zeros}");
    assert!(tape.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
}

#[test]
fn max_rows_ties_take_first_row() {
    let mut tape = Tape::new();
    let x = tape.input(t(&[&[1.0, 3.0], &[1.0, 2.0]]));
    let m = tape.max_rows(x);
    assert_eq!(tape.value(m).data(), &[1.0, 3.0]);
    let l = tape.sum(m);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1.0, 1.0, 0.0, 0.0]);
}

#[test]
fn row_normalize_rejects_zero_rows() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[&[1.0, 1.0], &[0.0, 0.0]]));
    assert!(matches!(tape.row_normalize(x), Err(Error::DegenerateOperator { row: 1, .. })));
}

#[test]
fn every_operation_passes_finite_differences() {
    for seed in [11, 12, 13] {
        for (name, err) in common::op_sweep(seed, 1e-5) {
            assert!(err < 1e-4, "{name} (seed {seed}): relative error {err:e}");
        }
    }
}

#[test]
fn quadratic_agrees_to_high_precision() {
    let mut store = ParamStore::new();
    let id = store.add("theta", t(&[&[0.3, -1.2, 2.0]]), true).unwrap();
    let report = finite_diff_check(&mut store, 1e-5, |tape| {
        let x = tape.param(id);
        let sq = tape.mul(x, x)?;
        Ok(tape.sum(sq))
    })
    .unwrap();
    assert!(report.params[0].max_abs_err < 1e-9);
}

#[test]
fn matmul_tanh_chain_under_one_in_a_million() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let a = store.add("a", common::random_tensor(&mut rng, 3, 5, -1.0, 1.0), true).unwrap();
    let b = store.add("b", common::random_tensor(&mut rng, 5, 2, -1.0, 1.0), true).unwrap();
    let report = finite_diff_check(&mut store, 1e-5, |tape| {
        let (x, y) = (tape.param(a), tape.param(b));
        let z = tape.matmul(x, y)?;
        let z = tape.tanh(z);
        Ok(tape.sum(z))
    })
    .unwrap();
    assert!(report.worst() < 1e-6, "{}", report.worst());
}

#[test]
fn nondeterministic_function_is_detected() {
    let mut store = ParamStore::new();
    let id = store.add("x", t(&[&[1.0]]), true).unwrap();
    let calls = std::cell::Cell::new(0.0);
    let result = finite_diff_check(&mut store, 1e-5, |tape| {
        calls.set(calls.get() + 1.0);
        let x = tape.param(id);
        Ok(tape.scale(x, calls.get()))
    });
    assert!(matches!(result, Err(Error::NonDeterministic(_))));
}

#[test]
fn identical_seeds_give_identical_tapes_and_gradients() {
    let run = || {
        let f = common::OpFixture::new(8);
        let mut tape = Tape::with_params(&f.store);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = tape.param(f.a);
        let d = tape.dropout(a, 0.5, Mode::Train, &mut rng).unwrap();
        let y = tape.gelu(d);
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        (format!("{:?}", tape.entries()), g.param(f.a).unwrap().to_vec())
    };
    let (ea, ga) = run();
    let (eb, gb) = run();
    assert_eq!(ea, eb);
    assert_eq!(ga.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), gb.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
}

#[test]
fn frozen_parameters_receive_no_update_but_gradient_flows_through() {
    let mut store = ParamStore::new();
    let w = store.add("w", t(&[&[2.0]]), false).unwrap();
    let v = store.add("v", t(&[&[3.0]]), true).unwrap();
    let grads = {
        let mut tape = Tape::with_params(&store);
        let (a, b) = (tape.param(w), tape.param(v));
        let y = tape.mul(a, b).unwrap();
        tape.backward(y).unwrap()
    };
    store.accumulate(&grads);
    assert_eq!(store.grad(v), &[2.0]);
    assert_eq!(store.grad(w), &[0.0]);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(
        row in proptest::collection::vec(-20.0f64..20.0, 1..8),
        shift in -50.0f64..50.0,
    ) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row_vector(row.clone()));
        let shifted = tape.constant(Tensor::row_vector(row.iter().map(|v| v + shift).collect()));
        let a = tape.softmax_rows(x).unwrap();
        let b = tape.softmax_rows(shifted).unwrap();
        let sa: f64 = tape.value(a).data().iter().sum();
        prop_assert!((sa - 1.0).abs() < 1e-12);
        for (p, q) in tape.value(a).data().iter().zip(tape.value(b).data()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_is_an_involution(rows in 1usize..5, cols in 1usize..5, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = common::random_tensor(&mut rng, rows, cols, -1.0, 1.0);
        prop_assert_eq!(x.transpose().transpose(), x);
    }
}

#[test]
fn more_matmul_and_concat_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[&[1.0, 2.0]]));
    let b = tape.constant(t(&[&[3.0], &[4.0]]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[11.0]);
    let single = tape.concat(&[a]).unwrap();
    assert_eq!(tape.value(single), tape.value(a));
    let x = tape.constant(t(&[&[1.0, 2.0]]));
    let y = tape.constant(t(&[&[3.0, 4.0, 5.0]]));
    let xy = tape.concat(&[x, y]).unwrap();
    assert_eq!(tape.value(xy).data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
}

#[test]
fn softmax_is_stable_for_large_inputs() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[&[1000.0, 999.0]]));
    let y = tape.softmax_rows(x).unwrap();
    let v = tape.value(y);
    assert!(v.is_finite());
    assert!((v.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn sigmoid_is_symmetric() {
    for x in [-7.5, -1.0, 0.3, 2.0, 12.0] {
        let s = Activation::Sigmoid.apply(x) + Activation::Sigmoid.apply(-x);
        assert!((s - 1.0f64).abs() < 1e-15);
    }
    assert_eq!(Activation::Gelu.apply(0.0f64), 0.0);
}

#[test]
fn bce_two_element_oracle() {
    let mut tape = Tape::new();
    let p = tape.constant(t(&[&[0.9, 0.1]]));
    let l = tape.bce(p, &[1.0, 0.0]).unwrap();
    assert!((tape.value(l).item() - 2.0 * -(0.9f64).ln()).abs() < 1e-15);
    assert!((tape.value(l).item() - 0.2107).abs() < 1e-4);
    let exact = tape.constant(t(&[&[1.0, 0.0]]));
    let l = tape.bce(exact, &[1.0, 0.0]).unwrap();
    assert!(tape.value(l).item() <= 2.0 * (1.0 - 1e-12f64).ln().abs() + 1e-18);
}

#[test]
fn dropout_mean_within_three_standard_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::filled(1, 10_000, 2.0));
    let y = tape.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
    let v = tape.value(y).data();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((mean - 2.0).abs() < 3.0 * (var / n).sqrt(), "mean {mean}");
    let same = tape.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
    assert_eq!(same, x);
}

#[test]
fn gradient_of_plain_sum_is_all_ones() {
    let mut tape = Tape::new();
    let x = tape.input(t(&[&[1.0, -2.0], &[0.5, 4.0]]));
    let l = tape.sum(x);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1.0; 4]);
}
