//! Type scoring, the per-granularity loss, and thresholded decisions.

use serde::Serialize;

use crate::data::{Granularity, TypeVocabulary};
use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::metrics::{pr_curve, threshold_grid};
use crate::scalar::Scalar;

/// `B × N` logits `F · W′ᵀ` for `B × d_f` features and `N × d_f` type vectors.
/// There is no bias term.
pub fn logits<S: Scalar>(tape: &mut Tape<'_, S>, features: Var, type_vectors: Var) -> Result<Var> {
    let wt = tape.transpose(type_vectors);
    tape.matmul(features, wt)
}

pub fn probabilities<S: Scalar>(tape: &mut Tape<'_, S>, logits: Var) -> Var {
    tape.sigmoid(logits)
}

/// Per-sample mask of the types whose granularity group contains at least
/// one gold type of that sample.
pub fn active_mask(gold: &[u8], groups: &[Granularity]) -> Vec<bool> {
    let mut active = [false; 3];
    for (g, &grp) in gold.iter().zip(groups) {
        if *g == 1 {
            active[grp as usize] = true;
        }
    }
    groups.iter().map(|&g| active[g as usize]).collect()
}

/// Sum of binary cross-entropies over the active granularity groups of each
/// sample, averaged over the batch.
pub fn multitask_loss<S: Scalar>(
    tape: &mut Tape<'_, S>,
    probs: Var,
    gold: &[Vec<u8>],
    groups: &[Granularity],
) -> Result<Var> {
    let (b, n) = tape.shape(probs);
    if gold.len() != b || groups.len() != n {
        return Err(Error::shape("multitask_loss", &[b, n], &[gold.len(), groups.len()]));
    }
    let mut targets = Vec::with_capacity(b * n);
    let mut mask = Vec::with_capacity(b * n);
    for row in gold {
        if row.len() != n {
            return Err(Error::shape("multitask_loss", &[n], &[row.len()]));
        }
        if !row.contains(&1) {
            return Err(Error::Data("sample with empty gold set".into()));
        }
        targets.extend(row.iter().map(|&g| if g == 1 { S::one() } else { S::zero() }));
        mask.extend(active_mask(row, groups));
    }
    let total = tape.bce_masked(probs, &targets, &mask)?;
    Ok(tape.scale(total, S::one() / S::lit(b as f64)))
}

pub fn granularity_groups(tv: &TypeVocabulary) -> Vec<Granularity> {
    (0..tv.len()).map(|i| tv.granularity(i)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub scores: Vec<f64>,
    /// Chosen type ids, ascending.
    pub chosen: Vec<usize>,
    pub threshold: f64,
    /// True when nothing cleared the threshold and the argmax was taken.
    pub fallback: bool,
}

/// Types with score ≥ `threshold`; if none and `fallback` is set, the single
/// highest-scoring type (lowest id on ties).
pub fn decide_with(probs: &[f64], threshold: f64, fallback: bool) -> Prediction {
    let mut chosen: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] >= threshold).collect();
    let mut fired = false;
    if chosen.is_empty() && fallback && !probs.is_empty() {
        let best = (0..probs.len())
            .reduce(|a, b| if probs[b] > probs[a] { b } else { a })
            .expect("nonempty");
        chosen.push(best);
        fired = true;
    }
    Prediction {
        scores: probs.to_vec(),
        chosen,
        threshold,
        fallback: fired,
    }
}

pub fn decide(probs: &[f64], threshold: f64) -> Prediction {
    decide_with(probs, threshold, true)
}

/// Grid threshold with the best macro F1 on the given scores; ties go to the
/// larger threshold.
pub fn tune_threshold(scores: &[Vec<f64>], gold: &[Vec<usize>]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Data("empty dev set".into()));
    }
    let rows = pr_curve(scores, gold);
    let mut best = (f64::NEG_INFINITY, 0.0);
    for (row, &theta) in rows.iter().zip(threshold_grid().iter()) {
        if row.f1 >= best.0 {
            best = (row.f1, theta);
        }
    }
    Ok(best.1)
}
