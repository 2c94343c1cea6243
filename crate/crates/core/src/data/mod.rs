//! Dataset, embedding and type-vocabulary ingestion plus batching.

pub mod batch;
pub mod dataset;
pub mod encode;
pub mod vocab;

pub use batch::{build_batches, sequential_batches, Batch};
pub use dataset::{load_dataset, write_dataset, LoadReport, MentionKind, Sample, PRONOUNS};
pub use encode::{encode_all, encode_sample, DecodedSample, EncodeLimits, EncodedSample, Position, CHAR_VOCAB};
pub use vocab::{Granularity, TypeVocabulary, WordVocabulary, PAD_ID, UNK_ID};
