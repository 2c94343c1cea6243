use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::dataset::MentionKind;
use crate::data::encode::{EncodedSample, Position, CHAR_PAD};
use crate::data::vocab::PAD_ID;
use crate::error::{Error, Result};

/// Padded id matrices for a group of samples. Rows beyond each sample's
/// true length hold pad values; the model reads only `..len`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Positions of the member samples in the list the batch was built from.
    pub indices: Vec<usize>,
    pub context: Vec<Vec<usize>>,
    pub positions: Vec<Vec<Position>>,
    pub mention: Vec<Vec<usize>>,
    pub chars: Vec<Vec<usize>>,
    pub gold: Vec<Vec<u8>>,
    pub context_lens: Vec<usize>,
    pub mention_lens: Vec<usize>,
    pub char_lens: Vec<usize>,
    pub mention_kinds: Vec<MentionKind>,
}

fn pad<T: Copy>(rows: Vec<Vec<T>>, fill: T) -> Vec<Vec<T>> {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    rows.into_iter()
        .map(|mut r| {
            r.resize(width, fill);
            r
        })
        .collect()
}

impl Batch {
    pub fn new(samples: &[EncodedSample], indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let pick = |i: &usize| &samples[*i];
        let members: Vec<&EncodedSample> = indices.iter().map(pick).collect();
        Ok(Self {
            context_lens: members.iter().map(|s| s.context_ids.len()).collect(),
            mention_lens: members.iter().map(|s| s.mention_ids.len()).collect(),
            char_lens: members.iter().map(|s| s.char_ids.len()).collect(),
            context: pad(members.iter().map(|s| s.context_ids.clone()).collect(), PAD_ID),
            positions: pad(members.iter().map(|s| s.positions.clone()).collect(), Position::Pad),
            mention: pad(members.iter().map(|s| s.mention_ids.clone()).collect(), PAD_ID),
            chars: pad(members.iter().map(|s| s.char_ids.clone()).collect(), CHAR_PAD),
            gold: members.iter().map(|s| s.gold.clone()).collect(),
            mention_kinds: members.iter().map(|s| s.mention_kind).collect(),
            indices,
        })
    }

    /// Batch of every sample, in order.
    pub fn all(samples: &[EncodedSample]) -> Result<Self> {
        Self::new(samples, (0..samples.len()).collect())
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Seeded shuffle followed by contiguous grouping; the last batch may be
/// short.
pub fn build_batches<R: Rng + ?Sized>(samples: &[EncodedSample], size: usize, rng: &mut R) -> Result<Vec<Batch>> {
    if size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if samples.is_empty() {
        return Err(Error::Data("cannot batch an empty sample list".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    order
        .chunks(size)
        .map(|chunk| Batch::new(samples, chunk.to_vec()))
        .collect()
}

/// Contiguous batches without shuffling, for evaluation.
pub fn sequential_batches(samples: &[EncodedSample], size: usize) -> Result<Vec<Batch>> {
    if size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    (0..samples.len())
        .collect::<Vec<_>>()
        .chunks(size)
        .map(|chunk| Batch::new(samples, chunk.to_vec()))
        .collect()
}
