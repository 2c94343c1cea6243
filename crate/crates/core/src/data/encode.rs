use serde::{Deserialize, Serialize};

use crate::data::dataset::{MentionKind, Sample};
use crate::data::vocab::{TypeVocabulary, WordVocabulary};

/// Relative position of a context token with respect to the mention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Position {
    Before = 0,
    Inside = 1,
    After = 2,
    Pad = 3,
}

impl Position {
    pub fn index(self) -> usize {
        self as usize
    }
}

pub const CHAR_PAD: usize = 0;
pub const CHAR_UNK: usize = 1;
/// PAD, UNK and the 95 printable ASCII characters.
pub const CHAR_VOCAB: usize = 2 + 95;

pub fn char_id(c: char) -> usize {
    match c {
        ' '..='~' => 2 + (c as usize - ' ' as usize),
        _ => CHAR_UNK,
    }
}

pub fn id_char(id: usize) -> Option<char> {
    match id {
        2..=96 => char::from_u32((id - 2 + ' ' as usize) as u32),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodeLimits {
    /// Context tokens kept on each side of the mention, nearest first.
    pub max_context_per_side: usize,
    pub max_mention_chars: usize,
}

impl Default for EncodeLimits {
    fn default() -> Self {
        Self {
            max_context_per_side: 25,
            max_mention_chars: 25,
        }
    }
}

/// A sample mapped to ids. The context sequence is the truncated left
/// context, the mention, then the truncated right context.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSample {
    pub context_ids: Vec<usize>,
    pub positions: Vec<Position>,
    pub mention_ids: Vec<usize>,
    pub char_ids: Vec<usize>,
    /// Multi-hot over the type vocabulary.
    pub gold: Vec<u8>,
    pub mention_kind: MentionKind,
}

impl EncodedSample {
    pub fn gold_ids(&self) -> Vec<usize> {
        self.gold
            .iter()
            .enumerate()
            .filter(|(_, &g)| g == 1)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn decode(&self, wv: &WordVocabulary, tv: &TypeVocabulary) -> DecodedSample {
        let mut left = Vec::new();
        let mut mention = Vec::new();
        let mut right = Vec::new();
        for (&id, &pos) in self.context_ids.iter().zip(&self.positions) {
            let tok = wv.token(id).to_string();
            match pos {
                Position::Before => left.push(tok),
                Position::Inside => mention.push(tok),
                Position::After => right.push(tok),
                Position::Pad => {}
            }
        }
        DecodedSample {
            left_context: left,
            mention,
            right_context: right,
            mention_chars: self.char_ids.iter().filter_map(|&c| id_char(c)).collect(),
            gold_types: self.gold_ids().into_iter().map(|i| tv.name(i).to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodedSample {
    pub left_context: Vec<String>,
    pub mention: Vec<String>,
    pub right_context: Vec<String>,
    pub mention_chars: String,
    pub gold_types: Vec<String>,
}

pub fn encode_sample(s: &Sample, wv: &WordVocabulary, tv: &TypeVocabulary, limits: &EncodeLimits) -> EncodedSample {
    let keep = limits.max_context_per_side;
    let left = &s.left_context[s.left_context.len().saturating_sub(keep)..];
    let right = &s.right_context[..s.right_context.len().min(keep)];

    let mut context_ids = Vec::with_capacity(left.len() + s.mention.len() + right.len());
    let mut positions = Vec::with_capacity(context_ids.capacity());
    for (toks, pos) in [(left, Position::Before), (&s.mention[..], Position::Inside), (right, Position::After)] {
        for t in toks {
            context_ids.push(wv.id(t));
            positions.push(pos);
        }
    }
    let mention_ids = s.mention.iter().map(|t| wv.id(t)).collect();
    let mut char_ids: Vec<usize> = s.mention_text().chars().take(limits.max_mention_chars).map(char_id).collect();
    if char_ids.is_empty() {
        char_ids.push(CHAR_UNK);
    }
    let mut gold = vec![0u8; tv.len()];
    for g in &s.gold_types {
        if let Some(i) = tv.id(g) {
            gold[i] = 1;
        }
    }
    EncodedSample {
        context_ids,
        positions,
        mention_ids,
        char_ids,
        gold,
        mention_kind: s.mention_kind,
    }
}

pub fn encode_all(samples: &[Sample], wv: &WordVocabulary, tv: &TypeVocabulary, limits: &EncodeLimits) -> Vec<EncodedSample> {
    samples.iter().map(|s| encode_sample(s, wv, tv, limits)).collect()
}
