#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use typegraph::diff::{finite_diff_check, Csr, Mode, ParamId, ParamStore, Tape, Tensor, Var};
use typegraph::Result;

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// Parameters shared by the per-operation gradient sweep.
pub struct OpFixture {
    pub store: ParamStore<f64>,
    pub a: ParamId,
    pub b: ParamId,
    pub c: ParamId,
    pub bias: ParamId,
    pub s: ParamId,
    pub pos: ParamId,
    pub weights_3x4: Tensor<f64>,
    pub weights_4x4: Tensor<f64>,
    pub sparse: Arc<Csr<f64>>,
}

impl OpFixture {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let a = store.add("a", random_tensor(&mut rng, 3, 4, -1.0, 1.0), true).unwrap();
        let b = store.add("b", random_tensor(&mut rng, 4, 3, -1.0, 1.0), true).unwrap();
        let c = store.add("c", random_tensor(&mut rng, 3, 4, -1.0, 1.0), true).unwrap();
        let bias = store.add("bias", random_tensor(&mut rng, 1, 4, -1.0, 1.0), true).unwrap();
        let s = store.add("s", random_tensor(&mut rng, 1, 1, 0.5, 1.5), true).unwrap();
        let pos = store.add("pos", random_tensor(&mut rng, 3, 4, 0.2, 2.0), true).unwrap();
        let weights_3x4 = random_tensor(&mut rng, 3, 4, -1.0, 1.0);
        let weights_4x4 = random_tensor(&mut rng, 4, 4, -1.0, 1.0);
        let sparse = Arc::new(
            Csr::from_rows(3, vec![vec![(0, 1.5), (2, -0.5)], vec![(1, 2.0)], vec![], vec![(0, 0.3), (1, 0.7)]]).unwrap(),
        );
        Self {
            store,
            a,
            b,
            c,
            bias,
            s,
            pos,
            weights_3x4,
            weights_4x4,
            sparse,
        }
    }
}

/// Scalar readout `Σ x ∘ W` with a fixed random `W`, so that operations
/// whose plain sum is constant (softmax) still get a nontrivial gradient.
pub fn readout(tape: &mut Tape<'_, f64>, x: Var, w: &Tensor<f64>) -> Result<Var> {
    let (r, c) = tape.shape(x);
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            data.push(w.data()[(i * c + j) % w.len()]);
        }
    }
    let w = tape.constant(Tensor::new(vec![r, c], data)?);
    let prod = tape.mul(x, w)?;
    Ok(tape.sum(prod))
}

type OpFn = Box<dyn for<'p> Fn(&mut Tape<'p, f64>, &OpFixture) -> Result<Var>>;

/// One closure per differentiable tape operation, each reduced to a scalar.
pub fn op_cases() -> Vec<(&'static str, OpFn)> {
    fn w(f: &OpFixture) -> &Tensor<f64> {
        &f.weights_3x4
    }
    let mut cases: Vec<(&'static str, OpFn)> = Vec::new();
    cases.push(("matmul", Box::new(|t, f| {
        let (a, b) = (t.param(f.a), t.param(f.b));
        let y = t.matmul(a, b)?;
        readout(t, y, w(f))
    })));
    cases.push(("sparse_matmul", Box::new(|t, f| {
        let a = t.param(f.a);
        let y = t.sparse_matmul(f.sparse.clone(), a)?;
        readout(t, y, &f.weights_4x4)
    })));
    cases.push(("transpose", Box::new(|t, f| {
        let a = t.param(f.a);
        let y = t.transpose(a);
        readout(t, y, &f.weights_4x4)
    })));
    cases.push(("add", Box::new(|t, f| {
        let (a, c) = (t.param(f.a), t.param(f.c));
        let y = t.add(a, c)?;
        let y = t.mul(y, y)?;
        readout(t, y, w(f))
    })));
    cases.push(("sub", Box::new(|t, f| {
        let (a, c) = (t.param(f.a), t.param(f.c));
        let y = t.sub(a, c)?;
        let y = t.mul(y, y)?;
        readout(t, y, w(f))
    })));
    cases.push(("mul", Box::new(|t, f| {
        let (a, c) = (t.param(f.a), t.param(f.c));
        let y = t.mul(a, c)?;
        readout(t, y, w(f))
    })));
    cases.push(("add_row", Box::new(|t, f| {
        let (a, b) = (t.param(f.a), t.param(f.bias));
        let y = t.add_row(a, b)?;
        let y = t.tanh(y);
        readout(t, y, w(f))
    })));
    cases.push(("scale", Box::new(|t, f| {
        let a = t.param(f.a);
        let y = t.scale(a, -1.7);
        let y = t.mul(y, y)?;
        readout(t, y, w(f))
    })));
    cases.push(("one_minus", Box::new(|t, f| {
        let a = t.param(f.a);
        let y = t.one_minus(a);
        let y = t.mul(y, y)?;
        readout(t, y, w(f))
    })));
    cases.push(("scale_by", Box::new(|t, f| {
        let (a, s) = (t.param(f.a), t.param(f.s));
        let y = t.scale_by(a, s)?;
        let y = t.mul(y, y)?;
        readout(t, y, w(f))
    })));
    cases.push(("tanh", Box::new(|t, f| {
        let a = t.param(f.a);
        let y = t.tanh(a);
        readout(t, y, w(f))
    })));
    cases.push(("sigmoid", Box::new(|t, f| {
        let a = t.param(f.a);
        let y = t.sigmoid(a);
        readout(t, y, w(f))
    })));
    cases.push(("gelu", Box::new(|t, f| {
        let a = t.param(f.a);
        let y = t.gelu(a);
        readout(t, y, w(f))
    })));
    cases.push(("relu", Box::new(|t, f| {
        let a = t.param(f.a);
        let y = t.relu(a);
        readout(t, y, w(f))
    })));
    cases.push(("softplus", Box::new(|t, f| {
        let a = t.param(f.a);
        let y = t.softplus(a);
        readout(t, y, w(f))
    })));
    cases.push(("softmax_rows", Box::new(|t, f| {
        let a = t.param(f.a);
        let y = t.softmax_rows(a)?;
        readout(t, y, w(f))
    })));
    cases.push(("masked_softmax_rows", Box::new(|t, f| {
        let a = t.param(f.a);
        let y = t.masked_softmax_rows(a, Some(&[true, false, true, true]))?;
        readout(t, y, w(f))
    })));
    cases.push(("concat", Box::new(|t, f| {
        let (a, c) = (t.param(f.a), t.param(f.c));
        let y = t.concat(&[a, c])?;
        let y = t.tanh(y);
        readout(t, y, &f.weights_4x4)
    })));
    cases.push(("stack_rows", Box::new(|t, f| {
        let (a, c) = (t.param(f.a), t.param(f.c));
        let y = t.stack_rows(&[a, c])?;
        let y = t.tanh(y);
        readout(t, y, &f.weights_4x4)
    })));
    cases.push(("slice_cols", Box::new(|t, f| {
        let a = t.param(f.a);
        let y = t.slice_cols(a, 1, 2)?;
        let y = t.tanh(y);
        readout(t, y, w(f))
    })));
    cases.push(("row", Box::new(|t, f| {
        let a = t.param(f.a);
        let y = t.row(a, 1)?;
        let y = t.tanh(y);
        readout(t, y, w(f))
    })));
    cases.push(("sum", Box::new(|t, f| {
        let a = t.param(f.a);
        let y = t.tanh(a);
        Ok(t.sum(y))
    })));
    cases.push(("bce", Box::new(|t, f| {
        let a = t.param(f.a);
        let p = t.sigmoid(a);
        let targets: Vec<f64> = (0..12).map(|i| (i % 3 == 0) as u8 as f64).collect();
        t.bce(p, &targets)
    })));
    cases.push(("bce_masked", Box::new(|t, f| {
        let a = t.param(f.a);
        let p = t.sigmoid(a);
        let targets: Vec<f64> = (0..12).map(|i| (i % 2 == 0) as u8 as f64).collect();
        let mask: Vec<bool> = (0..12).map(|i| i % 5 != 0).collect();
        t.bce_masked(p, &targets, &mask)
    })));
    cases.push(("dropout", Box::new(|t, f| {
        let a = t.param(f.a);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = t.dropout(a, 0.4, Mode::Train, &mut rng)?;
        let y = t.tanh(y);
        readout(t, y, w(f))
    })));
    cases.push(("max_rows", Box::new(|t, f| {
        let a = t.param(f.a);
        let y = t.max_rows(a);
        readout(t, y, w(f))
    })));
    cases.push(("gather", Box::new(|t, f| {
        let a = t.param(f.a);
        let y = t.gather(a, &[2, 0, 2, 1])?;
        let y = t.tanh(y);
        readout(t, y, &f.weights_4x4)
    })));
    cases.push(("unfold", Box::new(|t, f| {
        let a = t.param(f.a);
        let y = t.unfold(a, 2)?;
        let y = t.tanh(y);
        readout(t, y, &f.weights_4x4)
    })));
    cases.push(("row_normalize", Box::new(|t, f| {
        let p = t.param(f.pos);
        let y = t.row_normalize(p)?;
        readout(t, y, w(f))
    })));
    cases
}

/// Worst relative error per operation at step `h`.
pub fn op_sweep(seed: u64, h: f64) -> Vec<(&'static str, f64)> {
    let fixture = OpFixture::new(seed);
    op_cases()
        .into_iter()
        .map(|(name, case)| {
            let mut store = fixture.store.clone();
            let report = finite_diff_check(&mut store, h, |tape| case(tape, &fixture)).unwrap();
            (name, report.worst())
        })
        .collect()
}
