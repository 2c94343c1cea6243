//! Synthetic corpora with planted label structure, plus the small fixed
//! model used for gradient checks.
//!
//! Types are organized in clusters. Each cluster has one general type, a
//! few fine types and one ultra type per fine type. A sample carries its
//! cluster's general type, one fine type and one ultra type: the fine
//! type's own child with probability `ultra_rate`, otherwise the child of
//! another fine type in the cluster. Context tokens cue the cluster, the
//! fine type and the ultra type, with some cues replaced by shared filler
//! words. Type names share tokens along the hierarchy
//! (`g3`, `g3_f3a`, `g3_f3a_uf3a`), so name embeddings reflect the
//! structure.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{encode_all, EncodedSample, Granularity, Sample, TypeVocabulary, WordVocabulary, PRONOUNS};
use crate::error::Result;
use crate::labelgraph::TypeAdjacency;
use crate::model::{EntityTyper, ModelConfig};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub clusters: usize,
    pub fine_per_cluster: usize,
    pub samples: usize,
    pub word_dim: usize,
    /// Distinct entity names per fine type.
    pub names_per_fine: usize,
    /// Probability that the ultra type is the child of the sample's fine
    /// type rather than of a sibling.
    pub ultra_rate: f64,
    /// Probability that any single cue token is replaced by filler.
    pub cue_noise: f64,
    pub pronoun_rate: f64,
    /// Context tokens on each side of the mention.
    pub context_len: usize,
    /// How many distinct filler words and pronouns are in play.
    pub fillers: usize,
    pub pronoun_forms: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            clusters: 6,
            fine_per_cluster: 2,
            samples: 200,
            word_dim: 16,
            names_per_fine: 4,
            ultra_rate: 0.8,
            cue_noise: 0.2,
            pronoun_rate: 0.2,
            context_len: 4,
            fillers: 8,
            pronoun_forms: 4,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn num_types(&self) -> usize {
        self.clusters * (1 + 2 * self.fine_per_cluster)
    }
}

pub struct SyntheticCorpus {
    pub types: TypeVocabulary,
    pub words: WordVocabulary,
    pub samples: Vec<Sample>,
}

const FILLERS: [&str; 8] = ["the", "a", "of", "and", "was", "in", "to", "with"];

fn fine_tag(c: usize, k: usize) -> String {
    format!("f{c}{}", (b'a' + k as u8) as char)
}

fn type_names(cfg: &SyntheticConfig) -> Vec<(String, Granularity)> {
    let mut out = Vec::with_capacity(cfg.num_types());
    for c in 0..cfg.clusters {
        out.push((format!("g{c}"), Granularity::General));
    }
    for c in 0..cfg.clusters {
        for k in 0..cfg.fine_per_cluster {
            out.push((format!("g{c}_{}", fine_tag(c, k)), Granularity::Fine));
        }
    }
    for c in 0..cfg.clusters {
        for k in 0..cfg.fine_per_cluster {
            let f = fine_tag(c, k);
            out.push((format!("g{c}_{f}_u{f}"), Granularity::Ultra));
        }
    }
    out
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let scale = 1.0 / (dim as f64).sqrt();
    (0..dim).map(|_| StandardNormal.sample(rng)).map(|x: f64| x * scale).collect()
}

impl SyntheticCorpus {
    pub fn generate(cfg: &SyntheticConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let types = TypeVocabulary::new(type_names(cfg))?;

        // Vocabulary: cluster cue, fine cue, entity names, type-name tokens,
        // fillers and pronouns.
        let mut tokens: Vec<String> = Vec::new();
        for c in 0..cfg.clusters {
            tokens.push(format!("cue{c}"));
            tokens.push(format!("g{c}"));
            for k in 0..cfg.fine_per_cluster {
                let f = fine_tag(c, k);
                tokens.push(format!("cue{f}"));
                tokens.push(f.clone());
                tokens.push(format!("u{f}"));
                tokens.push(format!("cueu{f}"));
                for j in 0..cfg.names_per_fine {
                    tokens.push(format!("name{f}{j}"));
                }
            }
        }
        let fillers = &FILLERS[..cfg.fillers.clamp(1, FILLERS.len())];
        let pronouns = &PRONOUNS[..cfg.pronoun_forms.clamp(1, PRONOUNS.len())];
        tokens.extend(fillers.iter().map(|s| s.to_string()));
        tokens.extend(pronouns.iter().map(|s| s.to_string()));
        let vectors = tokens.iter().map(|t| (t.clone(), random_vector(&mut rng, cfg.word_dim))).collect();
        let words = WordVocabulary::from_vectors(cfg.word_dim, vectors)?;

        let mut samples = Vec::with_capacity(cfg.samples);
        for _ in 0..cfg.samples {
            let c = rng.gen_range(0..cfg.clusters);
            let k = rng.gen_range(0..cfg.fine_per_cluster);
            let f = fine_tag(c, k);
            let uk = if cfg.fine_per_cluster > 1 && !rng.gen_bool(cfg.ultra_rate) {
                (k + rng.gen_range(1..cfg.fine_per_cluster)) % cfg.fine_per_cluster
            } else {
                k
            };
            let uf = fine_tag(c, uk);
            let gold = vec![format!("g{c}"), format!("g{c}_{f}"), format!("g{c}_{uf}_u{uf}")];
            let cue = |rng: &mut ChaCha8Rng, tok: String| {
                if rng.gen_bool(cfg.cue_noise) {
                    fillers.choose(rng).unwrap().to_string()
                } else {
                    tok
                }
            };
            let mut left: Vec<String> = (0..cfg.context_len)
                .map(|_| fillers.choose(&mut rng).unwrap().to_string())
                .collect();
            let mut right = left.clone();
            right.shuffle(&mut rng);
            left[0] = cue(&mut rng, format!("cue{c}"));
            right[0] = cue(&mut rng, format!("cue{f}"));
            if cfg.context_len > 1 {
                right[1] = cue(&mut rng, format!("cueu{uf}"));
            }
            let mention = if rng.gen_bool(cfg.pronoun_rate) {
                vec![pronouns.choose(&mut rng).unwrap().to_string()]
            } else {
                vec![format!("name{f}{}", rng.gen_range(0..cfg.names_per_fine))]
            };
            samples.push(Sample::new(left, mention, right, gold)?);
        }
        Ok(Self { types, words, samples })
    }

    /// Co-occurrence graph over the first `n` samples.
    pub fn adjacency(&self, n: usize) -> TypeAdjacency {
        TypeAdjacency::from_samples(&self.samples[..n.min(self.samples.len())], &self.types)
    }

    pub fn encode(&self, limits: &crate::data::EncodeLimits) -> Vec<EncodedSample> {
        encode_all(&self.samples, &self.words, &self.types, limits)
    }
}

/// Small dimensions that keep a full training run in seconds.
pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        position_dim: 4,
        hidden: 8,
        attention_dim: 8,
        char_dim: 6,
        char_filters: 8,
        char_width: 5,
        ..ModelConfig::default()
    }
}

/// Corpus and model settings of the gradient-check toy: 20 word rows (18
/// tokens plus unknown and padding), `h_c = 8`, six types, tunable
/// embeddings, no dropout.
pub fn toy_configs(seed: u64) -> (SyntheticConfig, ModelConfig) {
    let corpus = SyntheticConfig {
        clusters: 2,
        fine_per_cluster: 1,
        samples: 4,
        word_dim: 4,
        names_per_fine: 1,
        ultra_rate: 1.0,
        cue_noise: 0.0,
        pronoun_rate: 0.25,
        context_len: 2,
        fillers: 2,
        pronoun_forms: 2,
        seed,
    };
    let model = ModelConfig {
        position_dim: 3,
        hidden: 4,
        attention_dim: 3,
        char_dim: 3,
        char_filters: 3,
        char_width: 5,
        dropout_context: 0.0,
        dropout_mention: 0.0,
        dropout_feature: 0.0,
        tune_embeddings: true,
        init_scale: 1.0,
        ..ModelConfig::default()
    };
    (corpus, model)
}

/// The toy model of [`toy_configs`] and its encoded samples.
pub fn toy_model<S: Scalar>(seed: u64) -> Result<(EntityTyper<S>, Vec<EncodedSample>)> {
    let (cfg, model_cfg) = toy_configs(seed);
    let corpus = SyntheticCorpus::generate(&cfg)?;
    let encoded = corpus.encode(&model_cfg.limits);
    let model = EntityTyper::new(model_cfg, &corpus.types, &corpus.words, corpus.adjacency(cfg.samples), seed)?;
    Ok((model, encoded))
}
