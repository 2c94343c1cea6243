//! Mention/context interaction: bilinear attention of the projected mention
//! over context hidden states, followed by a gated fusion.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::init::uniform;
use crate::diff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::scalar::Scalar;

/// How the mention and context representations are combined into `f`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interaction {
    /// `f = [o; 𝒞]` from the attention and gating module.
    #[default]
    Matching,
    /// `f = [𝒞; ℳ]`, the plain concatenation baseline.
    Concat,
}

#[derive(Clone, Copy, Debug)]
pub struct MatchingParams {
    /// `h_m × h_c`
    pub w1: ParamId,
    /// `h_c × h_c`
    pub wa: ParamId,
    /// `3h_c × h_c`
    pub wr: ParamId,
    pub br: ParamId,
    /// `3h_c × h_c`
    pub wg: ParamId,
    pub bg: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct MatchingVars {
    pub w1: Var,
    pub wa: Var,
    pub wr: Var,
    pub br: Var,
    pub wg: Var,
    pub bg: Var,
}

impl MatchingParams {
    pub fn register<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        mention_dim: usize,
        context_dim: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let h = context_dim;
        Ok(Self {
            w1: store.add("match.w1", uniform(rng, mention_dim, h, scale), true)?,
            wa: store.add("match.wa", uniform(rng, h, h, scale), true)?,
            wr: store.add("match.wr", uniform(rng, 3 * h, h, scale), true)?,
            br: store.add("match.br", Tensor::zeros(1, h), true)?,
            wg: store.add("match.wg", uniform(rng, 3 * h, h, scale), true)?,
            bg: store.add("match.bg", Tensor::zeros(1, h), true)?,
        })
    }

    pub fn bind<S: Scalar>(&self, tape: &mut Tape<'_, S>) -> MatchingVars {
        MatchingVars {
            w1: tape.param(self.w1),
            wa: tape.param(self.wa),
            wr: tape.param(self.wr),
            br: tape.param(self.br),
            wg: tape.param(self.wg),
            bg: tape.param(self.bg),
        }
    }
}

/// `m_proj = tanh(W₁ᵀ ℳ)`; with `ℳ` as a `1 × h_m` row this is `tanh(ℳ W₁)`.
pub fn project_mention<S: Scalar>(tape: &mut Tape<'_, S>, mention: Var, w1: Var) -> Result<Var> {
    let z = tape.matmul(mention, w1)?;
    Ok(tape.tanh(z))
}

/// Bilinear attention of `m_proj` over the rows of `context_hidden`.
/// Returns `(Ā 1×l, r_c 1×h_c)`.
pub fn attend<S: Scalar>(
    tape: &mut Tape<'_, S>,
    m_proj: Var,
    context_hidden: Var,
    wa: Var,
    mask: Option<&[bool]>,
) -> Result<(Var, Var)> {
    let query = tape.matmul(m_proj, wa)?;
    let keys = tape.transpose(context_hidden);
    let affinity = tape.matmul(query, keys)?;
    let weights = tape.masked_softmax_rows(affinity, mask)?;
    let retrieved = tape.matmul(weights, context_hidden)?;
    Ok((weights, retrieved))
}

#[derive(Clone, Copy, Debug)]
pub struct Fused {
    pub o: Var,
    pub r: Var,
    pub gate: Var,
}

/// `z = [r_c; m_proj; r_c − m_proj]`, `r = gelu(z W_r + b_r)`,
/// `g = σ(z W_g + b_g)`, `o = g∘r + (1−g)∘m_proj`.
pub fn fuse_gate<S: Scalar>(tape: &mut Tape<'_, S>, r_c: Var, m_proj: Var, v: &MatchingVars) -> Result<Fused> {
    let diff = tape.sub(r_c, m_proj)?;
    let z = tape.concat(&[r_c, m_proj, diff])?;
    let r = tape.matmul(z, v.wr)?;
    let r = tape.add_row(r, v.br)?;
    let r = tape.gelu(r);
    let g = tape.matmul(z, v.wg)?;
    let g = tape.add_row(g, v.bg)?;
    let gate = tape.sigmoid(g);
    let take = tape.mul(gate, r)?;
    let rest = tape.one_minus(gate);
    let keep = tape.mul(rest, m_proj)?;
    let o = tape.add(take, keep)?;
    Ok(Fused { o, r, gate })
}

/// Handles to the intermediate values of one sample's matching pass.
#[derive(Clone, Copy, Debug)]
pub struct MatchOutput {
    pub feature: Var,
    pub m_proj: Var,
    pub attention: Var,
    pub retrieved: Var,
    pub fused: Fused,
}

/// Full interaction for one sample: `f = [o; 𝒞]`.
pub fn match_mention_context<S: Scalar>(
    tape: &mut Tape<'_, S>,
    mention: Var,
    context_hidden: Var,
    context_pooled: Var,
    vars: &MatchingVars,
    mask: Option<&[bool]>,
) -> Result<MatchOutput> {
    let m_proj = project_mention(tape, mention, vars.w1)?;
    let (attention, retrieved) = attend(tape, m_proj, context_hidden, vars.wa, mask)?;
    let fused = fuse_gate(tape, retrieved, m_proj, vars)?;
    let feature = assemble_feature(tape, fused.o, context_pooled)?;
    Ok(MatchOutput {
        feature,
        m_proj,
        attention,
        retrieved,
        fused,
    })
}

pub fn assemble_feature<S: Scalar>(tape: &mut Tape<'_, S>, o: Var, context_pooled: Var) -> Result<Var> {
    tape.concat(&[o, context_pooled])
}
