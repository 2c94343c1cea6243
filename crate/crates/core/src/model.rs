//! The complete typing model: encoders, interaction, propagated decoder.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{granularity_groups, logits, multitask_loss, probabilities};
use crate::data::{sequential_batches, Batch, EncodeLimits, EncodedSample, Granularity, TypeVocabulary, WordVocabulary, CHAR_VOCAB};
use crate::diff::init::uniform;
use crate::diff::{softplus, Mode, ParamId, ParamStore, Tape, Tensor, Var};
use crate::encoders::{encode_context, encode_mention, BiLstm, CharCnn, ContextEncoder, LstmCell, MentionEncoder, SelfAttentivePool, NUM_POSITIONS};
use crate::error::{Error, Result};
use crate::labelgraph::{propagate, LabelGraph, PropagationConfig, PropagationVariant, TypeAdjacency, WordAffinity};
use crate::matching::{match_mention_context, Interaction, MatchOutput, MatchingParams};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub position_dim: usize,
    /// LSTM hidden size per direction; `h_c` is twice this.
    pub hidden: usize,
    /// Inner size of the self-attentive scorers.
    pub attention_dim: usize,
    pub char_dim: usize,
    pub char_filters: usize,
    pub char_width: usize,
    pub dropout_context: f64,
    pub dropout_mention: f64,
    pub dropout_feature: f64,
    pub interaction: Interaction,
    pub propagation: bool,
    pub variant: PropagationVariant,
    pub word_affinity: bool,
    pub residual: bool,
    pub binarize_adjacency: bool,
    pub tune_embeddings: bool,
    pub init_scale: f64,
    /// Start the propagation transform `T` at the identity instead of the
    /// uniform init, so the first updates see plain neighbor averaging.
    pub identity_transform: bool,
    pub lambda_init: f64,
    pub allow_dense_word_affinity: bool,
    pub limits: EncodeLimits,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            position_dim: 50,
            hidden: 100,
            attention_dim: 100,
            char_dim: 50,
            char_filters: 100,
            char_width: 5,
            dropout_context: 0.2,
            dropout_mention: 0.5,
            dropout_feature: 0.2,
            interaction: Interaction::Matching,
            propagation: true,
            variant: PropagationVariant::RowWord,
            word_affinity: true,
            residual: false,
            binarize_adjacency: false,
            tune_embeddings: false,
            init_scale: 0.1,
            identity_transform: true,
            lambda_init: 1.0,
            allow_dense_word_affinity: false,
            limits: EncodeLimits::default(),
        }
    }
}

impl ModelConfig {
    /// Propagation actually applied, after the ablation switches.
    pub fn effective_propagation(&self) -> Option<PropagationConfig> {
        if !self.propagation {
            return None;
        }
        let variant = match self.variant {
            PropagationVariant::RowWord if !self.word_affinity => PropagationVariant::Row,
            v => v,
        };
        Some(PropagationConfig {
            variant,
            residual: self.residual,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("dropout_context", self.dropout_context),
            ("dropout_mention", self.dropout_mention),
            ("dropout_feature", self.dropout_feature),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::InvalidArgument(format!("{name} = {r} not in [0, 1)")));
            }
        }
        for (name, d) in [
            ("position_dim", self.position_dim),
            ("hidden", self.hidden),
            ("attention_dim", self.attention_dim),
            ("char_dim", self.char_dim),
            ("char_filters", self.char_filters),
            ("char_width", self.char_width),
        ] {
            if d == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.lambda_init.is_nan() || self.lambda_init <= 0.0 {
            return Err(Error::InvalidArgument("lambda_init must be positive".into()));
        }
        Ok(())
    }

    pub fn context_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn mention_dim(&self, word_dim: usize) -> usize {
        self.char_filters + word_dim
    }

    pub fn feature_dim(&self, word_dim: usize) -> usize {
        match self.interaction {
            Interaction::Matching => 2 * self.context_dim(),
            Interaction::Concat => self.context_dim() + self.mention_dim(word_dim),
        }
    }
}

/// Handles returned by [`EntityTyper::forward`].
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `B × d_f`
    pub features: Var,
    /// `N × d_f`, after propagation when enabled.
    pub type_vectors: Var,
    /// `B × N`
    pub logits: Var,
    /// `B × N`
    pub probs: Var,
    /// Per-sample matching intermediates, filled only when inspection was
    /// requested and the interaction mode is `matching`.
    pub diagnostics: Vec<MatchOutput>,
}

pub struct EntityTyper<S: Scalar> {
    config: ModelConfig,
    params: ParamStore<S>,
    word_embedding: ParamId,
    context: ContextEncoder,
    mention: MentionEncoder,
    matching: MatchingParams,
    type_vectors: ParamId,
    transform: ParamId,
    lambda_raw: ParamId,
    graph: LabelGraph<S>,
    groups: Vec<Granularity>,
}

/// `softplus⁻¹(y) = ln(eʸ − 1)`.
fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl<S: Scalar> EntityTyper<S> {
    pub fn new(
        config: ModelConfig,
        tv: &TypeVocabulary,
        wv: &WordVocabulary,
        adjacency: TypeAdjacency,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if adjacency.len() != tv.len() {
            return Err(Error::shape("adjacency", &[adjacency.len()], &[tv.len()]));
        }
        let adjacency = if config.binarize_adjacency {
            adjacency.binarized()
        } else {
            adjacency
        };
        let needs_word = config
            .effective_propagation()
            .is_some_and(|p| p.variant == PropagationVariant::RowWord);
        let word = if needs_word {
            Some(WordAffinity::build(tv, wv, config.allow_dense_word_affinity)?)
        } else {
            None
        };
        let graph = LabelGraph::new(adjacency, word)?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = config.init_scale;
        let word_dim = wv.dim();
        let h = config.hidden;
        let hc = config.context_dim();
        let hm = config.mention_dim(word_dim);
        let df = config.feature_dim(word_dim);
        let n = tv.len();

        let mut params = ParamStore::new();
        let word_embedding = params.add("word.embedding", wv.embeddings().cast(), config.tune_embeddings)?;
        let context = ContextEncoder {
            positions: params.add("context.positions", uniform(&mut rng, NUM_POSITIONS, config.position_dim, scale), true)?,
            lstm: BiLstm {
                forward: LstmCell::register(&mut params, "context.lstm.fw", word_dim + config.position_dim, h, scale, &mut rng)?,
                backward: LstmCell::register(&mut params, "context.lstm.bw", word_dim + config.position_dim, h, scale, &mut rng)?,
            },
            pool: SelfAttentivePool::register(&mut params, "context.pool", hc, config.attention_dim, scale, &mut rng)?,
        };
        let mention = MentionEncoder {
            chars: CharCnn::register(
                &mut params,
                CHAR_VOCAB,
                config.char_dim,
                config.char_width,
                config.char_filters,
                scale,
                &mut rng,
            )?,
            pool: SelfAttentivePool::register(&mut params, "mention.pool", word_dim, config.attention_dim, scale, &mut rng)?,
        };
        let matching = MatchingParams::register(&mut params, hm, hc, scale, &mut rng)?;
        let type_vectors = params.add("decoder.type_vectors", uniform(&mut rng, n, df, scale), true)?;
        let transform_init = uniform(&mut rng, df, df, scale);
        let transform_init = if config.identity_transform {
            Tensor::eye(df)
        } else {
            transform_init
        };
        let transform = params.add("decoder.transform", transform_init, true)?;
        let lambda_raw = params.add(
            "decoder.lambda_raw",
            Tensor::scalar(S::lit(inverse_softplus(config.lambda_init))),
            true,
        )?;

        Ok(Self {
            config,
            params,
            word_embedding,
            context,
            mention,
            matching,
            type_vectors,
            transform,
            lambda_raw,
            graph,
            groups: granularity_groups(tv),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn graph(&self) -> &LabelGraph<S> {
        &self.graph
    }

    pub fn groups(&self) -> &[Granularity] {
        &self.groups
    }

    pub fn num_types(&self) -> usize {
        self.groups.len()
    }

    pub fn type_vectors_id(&self) -> ParamId {
        self.type_vectors
    }

    pub fn transform_id(&self) -> ParamId {
        self.transform
    }

    pub fn lambda_id(&self) -> ParamId {
        self.lambda_raw
    }

    pub fn word_embedding_id(&self) -> ParamId {
        self.word_embedding
    }

    pub fn matching_params(&self) -> &MatchingParams {
        &self.matching
    }

    /// Current word-affinity weight `λ = softplus(ρ)`.
    pub fn lambda(&self) -> f64 {
        softplus(self.params.value(self.lambda_raw).item()).as_f64()
    }

    /// Builds the forward graph for a batch. Pad positions are never read:
    /// every sample is cut to its true lengths before encoding.
    pub fn forward(
        &self,
        tape: &mut Tape<'_, S>,
        batch: &Batch,
        mode: Mode,
        rng: &mut dyn RngCore,
        inspect: bool,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let word = tape.param(self.word_embedding);
        let ctx_vars = self.context.bind(tape);
        let men_vars = self.mention.bind(tape);
        let match_vars = match cfg.interaction {
            Interaction::Matching => Some(self.matching.bind(tape)),
            Interaction::Concat => None,
        };

        let mut rows = Vec::with_capacity(batch.len());
        let mut diagnostics = Vec::new();
        for i in 0..batch.len() {
            let len = batch.context_lens[i];
            let positions: Vec<usize> = batch.positions[i][..len].iter().map(|p| p.index()).collect();
            let ctx = encode_context(tape, word, ctx_vars, &batch.context[i][..len], &positions)?;
            let pooled = tape.dropout(ctx.pooled, cfg.dropout_context, mode, rng)?;
            let mention = encode_mention(
                tape,
                word,
                men_vars,
                &batch.mention[i][..batch.mention_lens[i]],
                &batch.chars[i][..batch.char_lens[i]],
            )?;
            let mention = tape.dropout(mention, cfg.dropout_mention, mode, rng)?;
            let feature = match &match_vars {
                Some(v) => {
                    let out = match_mention_context(tape, mention, ctx.hidden, pooled, v, None)?;
                    if inspect {
                        diagnostics.push(out);
                    }
                    out.feature
                }
                None => tape.concat(&[pooled, mention])?,
            };
            rows.push(tape.dropout(feature, cfg.dropout_feature, mode, rng)?);
        }
        let features = tape.stack_rows(&rows)?;
        let type_vectors = self.decoder_vectors(tape)?;
        let logits = logits(tape, features, type_vectors)?;
        let probs = probabilities(tape, logits);
        Ok(ForwardOutput {
            features,
            type_vectors,
            logits,
            probs,
            diagnostics,
        })
    }

    /// `W′_o` on the tape, or plain `W_o` when propagation is off.
    pub fn decoder_vectors(&self, tape: &mut Tape<'_, S>) -> Result<Var> {
        let w_o = tape.param(self.type_vectors);
        match self.config.effective_propagation() {
            None => Ok(w_o),
            Some(p) => {
                let t = tape.param(self.transform);
                let lambda = if p.variant == PropagationVariant::RowWord {
                    let raw = tape.param(self.lambda_raw);
                    Some(tape.softplus(raw))
                } else {
                    None
                };
                propagate(tape, w_o, t, lambda, &self.graph, p)
            }
        }
    }

    pub fn loss(&self, tape: &mut Tape<'_, S>, out: &ForwardOutput, batch: &Batch) -> Result<Var> {
        multitask_loss(tape, out.probs, &batch.gold, &self.groups)
    }

    /// Eval-mode loss of one batch, for gradient checks.
    pub fn eval_loss(&self, tape: &mut Tape<'_, S>, batch: &Batch) -> Result<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(tape, batch, Mode::Eval, &mut rng, false)?;
        self.loss(tape, &out, batch)
    }

    /// Eval-mode type probabilities for every sample, in order.
    pub fn score(&self, samples: &[EncodedSample], batch_size: usize) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut scores = Vec::with_capacity(samples.len());
        for batch in sequential_batches(samples, batch_size.max(1))? {
            let mut tape = Tape::with_params(&self.params);
            let out = self.forward(&mut tape, &batch, Mode::Eval, &mut rng, false)?;
            let p = tape.value(out.probs);
            for r in 0..p.rows() {
                scores.push(p.row(r).iter().map(|x| x.as_f64()).collect());
            }
        }
        Ok(scores)
    }

    /// Eval-mode logits for every sample, in order.
    pub fn logits(&self, samples: &[EncodedSample]) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = Batch::all(samples)?;
        let mut tape = Tape::with_params(&self.params);
        let out = self.forward(&mut tape, &batch, Mode::Eval, &mut rng, false)?;
        let l = tape.value(out.logits);
        Ok((0..l.rows()).map(|r| l.row(r).iter().map(|x| x.as_f64()).collect()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_softplus_inverts() {
        for y in [0.1, 1.0, 3.0] {
            assert!((softplus(inverse_softplus(y)) - y).abs() < 1e-14);
        }
    }

    #[test]
    fn effective_variant_respects_switches() {
        let mut c = ModelConfig::default();
        assert_eq!(c.effective_propagation().unwrap().variant, PropagationVariant::RowWord);
        c.word_affinity = false;
        assert_eq!(c.effective_propagation().unwrap().variant, PropagationVariant::Row);
        c.propagation = false;
        assert!(c.effective_propagation().is_none());
    }
}
