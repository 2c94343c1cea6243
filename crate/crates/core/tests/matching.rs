mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use typegraph::data::Batch;
use typegraph::diff::{ParamStore, Tape, Tensor};
use typegraph::matching::{attend, fuse_gate, Interaction, MatchingParams, MatchingVars};
use typegraph::model::EntityTyper;
use typegraph::synthetic::{toy_configs, SyntheticCorpus};

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

#[test]
fn attention_closed_form() {
    let mut tape: Tape<'_, f64> = Tape::new();
    let m = tape.constant(Tensor::row_vector(vec![1.0, 0.0]));
    let h = tape.constant(Tensor::from_f64_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap());
    let wa = tape.constant(Tensor::eye(2));
    let (a, r) = attend(&mut tape, m, h, wa, None).unwrap();
    let e = std::f64::consts::E;
    let want = [e / (e + 1.0), 1.0 / (e + 1.0)];
    for (x, y) in tape.value(a).data().iter().zip(want) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!((tape.value(a).data()[0] - 0.7311).abs() < 1e-4);
    assert!((tape.value(a).data()[1] - 0.2689).abs() < 1e-4);
    // retrieved row equals the weights here since h is the identity
    for (x, y) in tape.value(r).data().iter().zip(want) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn masked_context_positions_get_no_attention() {
    let mut tape: Tape<'_, f64> = Tape::new();
    let m = tape.constant(Tensor::row_vector(vec![1.0, 0.0]));
    let h = tape.constant(Tensor::from_f64_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[5.0, 5.0]]).unwrap());
    let wa = tape.constant(Tensor::eye(2));
    let (a, _) = attend(&mut tape, m, h, wa, Some(&[true, true, false])).unwrap();
    assert_eq!(tape.value(a).data()[2], 0.0);
}

#[test]
fn scaling_affinity_sharpens_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = common::random_tensor(&mut rng, 5, 3, -1.0, 1.0);
    let m = common::random_tensor(&mut rng, 1, 3, -1.0, 1.0);
    let mut last = f64::INFINITY;
    for scale in [0.0, 1.0, 4.0, 16.0] {
        let mut tape: Tape<'_, f64> = Tape::new();
        let hv = tape.constant(h.clone());
        let mv = tape.constant(m.clone());
        let wa = tape.constant(Tensor::eye(3).map(|x| x * scale));
        let (a, _) = attend(&mut tape, mv, hv, wa, None).unwrap();
        let ent = entropy(tape.value(a).data());
        if scale == 0.0 {
            assert!((ent - 5f64.ln()).abs() < 1e-12);
        }
        assert!(ent <= last + 1e-12);
        last = ent;
    }
}

fn gate_vars(tape: &mut Tape<'_, f64>, bias: f64, rng: &mut ChaCha8Rng) -> MatchingVars {
    let h = 2;
    MatchingVars {
        w1: tape.constant(Tensor::eye(h)),
        wa: tape.constant(Tensor::eye(h)),
        wr: tape.constant(common::random_tensor(rng, 3 * h, h, -1.0, 1.0)),
        br: tape.constant(Tensor::zeros(1, h)),
        wg: tape.constant(Tensor::zeros(3 * h, h)),
        bg: tape.constant(Tensor::filled(1, h, bias)),
    }
}

#[test]
fn gate_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let r_c = Tensor::row_vector(vec![0.4, -0.2]);
    let m = Tensor::row_vector(vec![-0.7, 0.3]);

    // gate saturated open: o = r
    let mut tape: Tape<'_, f64> = Tape::new();
    let v = gate_vars(&mut tape, 50.0, &mut rng);
    let (rc, mv) = (tape.constant(r_c.clone()), tape.constant(m.clone()));
    let f = fuse_gate(&mut tape, rc, mv, &v).unwrap();
    for (o, r) in tape.value(f.o).data().iter().zip(tape.value(f.r).data()) {
        assert!((o - r).abs() < 1e-12);
    }

    // gate saturated shut: o = m_proj
    let mut tape: Tape<'_, f64> = Tape::new();
    let v = gate_vars(&mut tape, -50.0, &mut rng);
    let (rc, mv) = (tape.constant(r_c.clone()), tape.constant(m.clone()));
    let f = fuse_gate(&mut tape, rc, mv, &v).unwrap();
    for (o, x) in tape.value(f.o).data().iter().zip(m.data()) {
        assert!((o - x).abs() < 1e-12);
    }

    // zero logits: even blend
    let mut tape: Tape<'_, f64> = Tape::new();
    let v = gate_vars(&mut tape, 0.0, &mut rng);
    let (rc, mv) = (tape.constant(r_c), tape.constant(m.clone()));
    let f = fuse_gate(&mut tape, rc, mv, &v).unwrap();
    let r = tape.value(f.r).data().to_vec();
    for (k, o) in tape.value(f.o).data().iter().enumerate() {
        assert!((o - 0.5 * (r[k] + m.data()[k])).abs() < 1e-15);
    }
}

#[test]
fn register_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f64>::new();
    let p = MatchingParams::register(&mut store, 7, 4, 0.1, &mut rng).unwrap();
    assert_eq!(store.value(p.w1).shape(), &[7, 4]);
    assert_eq!(store.value(p.wa).shape(), &[4, 4]);
    assert_eq!(store.value(p.wr).shape(), &[12, 4]);
    assert_eq!(store.value(p.wg).shape(), &[12, 4]);
    assert_eq!(store.value(p.bg).shape(), &[1, 4]);
}

#[test]
fn concat_baseline_leaves_matching_parameters_untouched() {
    let (corpus_cfg, mut model_cfg) = toy_configs(3);
    model_cfg.interaction = Interaction::Concat;
    let corpus = SyntheticCorpus::generate(&corpus_cfg).unwrap();
    let samples = corpus.encode(&model_cfg.limits);
    let model: EntityTyper<f64> =
        EntityTyper::new(model_cfg, &corpus.types, &corpus.words, corpus.adjacency(corpus_cfg.samples), 3).unwrap();
    let batch = Batch::all(&samples).unwrap();
    let mut tape = Tape::with_params(model.params());
    let loss = model.eval_loss(&mut tape, &batch).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mp = model.matching_params();
    for id in [mp.w1, mp.wa, mp.wr, mp.br, mp.wg, mp.bg] {
        assert!(grads.param(id).is_none_or(|g| g.iter().all(|x| *x == 0.0)));
    }
    // the encoders still learn
    let ctx = model.params().id("context.pool.w").unwrap();
    assert!(grads.param(ctx).is_some_and(|g| g.iter().any(|x| *x != 0.0)));
}
