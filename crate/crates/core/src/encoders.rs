//! Context and mention encoders: bidirectional LSTM over word and position
//! embeddings, self-attentive pooling, and a character CNN.

use rand::Rng;

use crate::diff::init::uniform;
use crate::diff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Number of position labels fed to the context encoder.
pub const NUM_POSITIONS: usize = 3;

/// Attention-weighted average `Σ α_t h_t` with `α = softmax_t(vᵀ tanh(W h_t))`
/// over the rows of `h` where `mask` is true.
#[derive(Clone, Copy, Debug)]
pub struct SelfAttentivePool {
    pub w: ParamId,
    pub v: ParamId,
}

impl SelfAttentivePool {
    pub fn register<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        prefix: &str,
        dim: usize,
        attn_dim: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add(format!("{prefix}.w"), uniform(rng, dim, attn_dim, scale), true)?,
            v: store.add(format!("{prefix}.v"), uniform(rng, attn_dim, 1, scale), true)?,
        })
    }

    pub fn bind<S: Scalar>(&self, tape: &mut Tape<'_, S>) -> PoolVars {
        PoolVars {
            w: tape.param(self.w),
            v: tape.param(self.v),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PoolVars {
    pub w: Var,
    pub v: Var,
}

/// Returns `(pooled 1×d, weights 1×l)`.
pub fn self_attentive_pool<S: Scalar>(
    tape: &mut Tape<'_, S>,
    h: Var,
    mask: Option<&[bool]>,
    p: PoolVars,
) -> Result<(Var, Var)> {
    let proj = tape.matmul(h, p.w)?;
    let proj = tape.tanh(proj);
    let scores = tape.matmul(proj, p.v)?;
    let scores = tape.transpose(scores);
    let alpha = tape.masked_softmax_rows(scores, mask)?;
    let pooled = tape.matmul(alpha, h)?;
    Ok((pooled, alpha))
}

/// Standard LSTM cell with gate layout `[input, forget, cell, output]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
    pub hidden: usize,
}

impl LstmCell {
    pub fn register<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        prefix: &str,
        input: usize,
        hidden: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let w_ih = store.add(format!("{prefix}.w_ih"), uniform(rng, input, 4 * hidden, scale), true)?;
        let w_hh = store.add(format!("{prefix}.w_hh"), uniform(rng, hidden, 4 * hidden, scale), true)?;
        let mut b = Tensor::zeros(1, 4 * hidden);
        // forget gate starts open
        b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|x| *x = S::one());
        let bias = store.add(format!("{prefix}.bias"), b, true)?;
        Ok(Self {
            w_ih,
            w_hh,
            bias,
            hidden,
        })
    }

    pub fn bind<S: Scalar>(&self, tape: &mut Tape<'_, S>) -> LstmVars {
        LstmVars {
            w_ih: tape.param(self.w_ih),
            w_hh: tape.param(self.w_hh),
            bias: tape.param(self.bias),
            hidden: self.hidden,
        }
    }
}

/// Runs one direction over the rows of `x` (`l × input`), visiting rows in
/// `order`. Returns the hidden state for each row index, in row order.
fn run_direction<S: Scalar>(
    tape: &mut Tape<'_, S>,
    x: Var,
    cell: LstmVars,
    order: impl Iterator<Item = usize>,
) -> Result<Vec<Var>> {
    let (l, _) = tape.shape(x);
    let hsz = cell.hidden;
    let xw = tape.matmul(x, cell.w_ih)?;
    let xw = tape.add_row(xw, cell.bias)?;
    let mut h = tape.constant(Tensor::zeros(1, hsz));
    let mut c = tape.constant(Tensor::zeros(1, hsz));
    let mut out: Vec<Option<Var>> = vec![None; l];
    for t in order {
        let xt = tape.row(xw, t)?;
        let hw = tape.matmul(h, cell.w_hh)?;
        let gates = tape.add(xt, hw)?;
        let i = tape.slice_cols(gates, 0, hsz)?;
        let f = tape.slice_cols(gates, hsz, hsz)?;
        let g = tape.slice_cols(gates, 2 * hsz, hsz)?;
        let o = tape.slice_cols(gates, 3 * hsz, hsz)?;
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        h = tape.mul(o, tc)?;
        out[t] = Some(h);
    }
    Ok(out.into_iter().map(|v| v.expect("every row visited")).collect())
}

#[derive(Clone, Copy, Debug)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

#[derive(Clone, Copy, Debug)]
pub struct BiLstmVars {
    pub forward: LstmVars,
    pub backward: LstmVars,
}

impl BiLstm {
    pub fn bind<S: Scalar>(&self, tape: &mut Tape<'_, S>) -> BiLstmVars {
        BiLstmVars {
            forward: self.forward.bind(tape),
            backward: self.backward.bind(tape),
        }
    }
}

/// Hidden states `l × 2H`; row `t` is `[forward_t; backward_t]`.
pub fn bilstm<S: Scalar>(tape: &mut Tape<'_, S>, x: Var, vars: BiLstmVars) -> Result<Var> {
    let (l, _) = tape.shape(x);
    let fw = run_direction(tape, x, vars.forward, 0..l)?;
    let bw = run_direction(tape, x, vars.backward, (0..l).rev())?;
    let rows = fw
        .into_iter()
        .zip(bw)
        .map(|(f, b)| tape.concat(&[f, b]))
        .collect::<Result<Vec<_>>>()?;
    tape.stack_rows(&rows)
}

/// Character CNN: embeddings, width-`w` convolution, max over time, relu.
#[derive(Clone, Copy, Debug)]
pub struct CharCnn {
    pub embedding: ParamId,
    pub filters: ParamId,
    pub bias: ParamId,
    pub width: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct CharCnnVars {
    pub embedding: Var,
    pub filters: Var,
    pub bias: Var,
    pub width: usize,
}

impl CharCnn {
    #[allow(clippy::too_many_arguments)]
    pub fn register<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        vocab: usize,
        char_dim: usize,
        width: usize,
        filters: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            embedding: store.add("char.embedding", uniform(rng, vocab, char_dim, scale), true)?,
            filters: store.add("char.filters", uniform(rng, width * char_dim, filters, scale), true)?,
            bias: store.add("char.bias", Tensor::zeros(1, filters), true)?,
            width,
        })
    }

    pub fn bind<S: Scalar>(&self, tape: &mut Tape<'_, S>) -> CharCnnVars {
        CharCnnVars {
            embedding: tape.param(self.embedding),
            filters: tape.param(self.filters),
            bias: tape.param(self.bias),
            width: self.width,
        }
    }
}

pub fn char_cnn<S: Scalar>(tape: &mut Tape<'_, S>, char_ids: &[usize], vars: CharCnnVars) -> Result<Var> {
    if char_ids.is_empty() {
        return Err(Error::InvalidArgument("mention has no characters".into()));
    }
    let emb = tape.gather(vars.embedding, char_ids)?;
    let windows = tape.unfold(emb, vars.width)?;
    let conv = tape.matmul(windows, vars.filters)?;
    let conv = tape.add_row(conv, vars.bias)?;
    let pooled = tape.max_rows(conv);
    Ok(tape.relu(pooled))
}

#[derive(Clone, Copy, Debug)]
pub struct ContextEncoder {
    pub positions: ParamId,
    pub lstm: BiLstm,
    pub pool: SelfAttentivePool,
}

#[derive(Clone, Copy, Debug)]
pub struct ContextVars {
    pub positions: Var,
    pub lstm: BiLstmVars,
    pub pool: PoolVars,
}

impl ContextEncoder {
    pub fn bind<S: Scalar>(&self, tape: &mut Tape<'_, S>) -> ContextVars {
        ContextVars {
            positions: tape.param(self.positions),
            lstm: self.lstm.bind(tape),
            pool: self.pool.bind(tape),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ContextEncoding {
    /// `l × h_c`, one row per valid token.
    pub hidden: Var,
    /// `1 × h_c`.
    pub pooled: Var,
}

/// Encodes the valid prefix of a context: `token_ids` and `position_ids`
/// must already be cut to the true length.
pub fn encode_context<S: Scalar>(
    tape: &mut Tape<'_, S>,
    word_embedding: Var,
    vars: ContextVars,
    token_ids: &[usize],
    position_ids: &[usize],
) -> Result<ContextEncoding> {
    if token_ids.is_empty() {
        return Err(Error::AllMasked);
    }
    if token_ids.len() != position_ids.len() {
        return Err(Error::shape("encode_context", &[token_ids.len()], &[position_ids.len()]));
    }
    let words = tape.gather(word_embedding, token_ids)?;
    let pos = tape.gather(vars.positions, position_ids)?;
    let input = tape.concat(&[words, pos])?;
    let hidden = bilstm(tape, input, vars.lstm)?;
    let (pooled, _) = self_attentive_pool(tape, hidden, None, vars.pool)?;
    Ok(ContextEncoding { hidden, pooled })
}

#[derive(Clone, Copy, Debug)]
pub struct MentionEncoder {
    pub chars: CharCnn,
    pub pool: SelfAttentivePool,
}

#[derive(Clone, Copy, Debug)]
pub struct MentionVars {
    pub chars: CharCnnVars,
    pub pool: PoolVars,
}

impl MentionEncoder {
    pub fn bind<S: Scalar>(&self, tape: &mut Tape<'_, S>) -> MentionVars {
        MentionVars {
            chars: self.chars.bind(tape),
            pool: self.pool.bind(tape),
        }
    }
}

/// `ℳ = [char feature; pooled mention words]`, `1 × (filters + d_w)`.
pub fn encode_mention<S: Scalar>(
    tape: &mut Tape<'_, S>,
    word_embedding: Var,
    vars: MentionVars,
    word_ids: &[usize],
    char_ids: &[usize],
) -> Result<Var> {
    if word_ids.is_empty() {
        return Err(Error::Data("empty mention".into()));
    }
    let char_feature = char_cnn(tape, char_ids, vars.chars)?;
    let words = tape.gather(word_embedding, word_ids)?;
    let (word_feature, _) = self_attentive_pool(tape, words, None, vars.pool)?;
    tape.concat(&[char_feature, word_feature])
}
