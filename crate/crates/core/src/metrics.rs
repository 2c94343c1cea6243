//! Evaluation: MRR, macro precision/recall/F1, the 50-point threshold sweep,
//! pronoun decomposition, and the co-occurrence consistency audit.
//!
//! MRR convention: by default every (sample, gold type) pair contributes
//! `1 / rank` of that gold type in the descending score order (ties broken
//! by ascending type id) and the result is the mean over all pairs.
//! Published numbers may use a different convention; see [`MrrConvention`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifier::{decide, decide_with};
use crate::data::MentionKind;
use crate::error::{Error, Result};
use crate::labelgraph::TypeAdjacency;

pub const GRID_POINTS: usize = 50;

/// Thresholds `0.02, 0.04, …, 1.00`.
pub fn threshold_grid() -> [f64; GRID_POINTS] {
    std::array::from_fn(|i| (i + 1) as f64 / GRID_POINTS as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MrrConvention {
    /// Mean of `1/rank` over every (sample, gold type) pair.
    #[default]
    PerPair,
    /// Mean over samples of `1/rank` of the best-ranked gold type.
    PerSampleBest,
}

/// 1-based ranks of every type under descending score, ties by ascending id.
fn ranks(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut rank = vec![0; scores.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    rank
}

pub fn mrr(scores: &[Vec<f64>], gold: &[Vec<usize>], convention: MrrConvention) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (s, g) in scores.iter().zip(gold) {
        if g.is_empty() {
            return Err(Error::Data("sample with empty gold set".into()));
        }
        let rank = ranks(s);
        match convention {
            MrrConvention::PerPair => {
                for &t in g {
                    total += 1.0 / rank[t] as f64;
                    count += 1;
                }
            }
            MrrConvention::PerSampleBest => {
                let best = g.iter().map(|&t| rank[t]).min().expect("nonempty");
                total += 1.0 / best as f64;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Data("no samples".into()));
    }
    Ok(total / count as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn overlap(pred: &[usize], gold: &[usize]) -> usize {
    pred.iter().filter(|t| gold.contains(t)).count()
}

/// Precision averages over samples with a nonempty prediction; recall over
/// every sample; F1 from the two averages.
pub fn macro_prf(pred: &[Vec<usize>], gold: &[Vec<usize>]) -> Prf {
    let mut p_sum = 0.0;
    let mut p_n = 0usize;
    let mut r_sum = 0.0;
    let mut r_n = 0usize;
    for (p, g) in pred.iter().zip(gold) {
        let hit = overlap(p, g) as f64;
        if !p.is_empty() {
            p_sum += hit / p.len() as f64;
            p_n += 1;
        }
        if !g.is_empty() {
            r_sum += hit / g.len() as f64;
        }
        r_n += 1;
    }
    let precision = if p_n > 0 { p_sum / p_n as f64 } else { 0.0 };
    let recall = if r_n > 0 { r_sum / r_n as f64 } else { 0.0 };
    Prf {
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

/// Exact-set accuracy.
pub fn strict_accuracy(pred: &[Vec<usize>], gold: &[Vec<usize>]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred
        .iter()
        .zip(gold)
        .filter(|(p, g)| {
            let mut p = p.to_vec();
            let mut g = g.to_vec();
            p.sort_unstable();
            g.sort_unstable();
            p == g
        })
        .count();
    hits as f64 / pred.len() as f64
}

/// Precision/recall/F1 pooled over every (sample, type) decision.
pub fn micro_prf(pred: &[Vec<usize>], gold: &[Vec<usize>]) -> Prf {
    let (mut hit, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (p, g) in pred.iter().zip(gold) {
        hit += overlap(p, g);
        np += p.len();
        ng += g.len();
    }
    let precision = if np > 0 { hit as f64 / np as f64 } else { 0.0 };
    let recall = if ng > 0 { hit as f64 / ng as f64 } else { 0.0 };
    Prf {
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// One row per grid threshold, predictions via [`decide`].
pub fn pr_curve(scores: &[Vec<f64>], gold: &[Vec<usize>]) -> Vec<PrRow> {
    threshold_grid()
        .iter()
        .map(|&theta| {
            let pred: Vec<Vec<usize>> = scores.iter().map(|s| decide(s, theta).chosen).collect();
            let prf = macro_prf(&pred, gold);
            PrRow {
                threshold: theta,
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
            }
        })
        .collect()
}

pub fn pr_curve_csv(rows: &[PrRow]) -> String {
    let mut out = String::from("threshold,precision,recall,f1\n");
    for r in rows {
        let _ = writeln!(out, "{:.6},{:.6},{:.6},{:.6}", r.threshold, r.precision, r.recall, r.f1);
    }
    out
}

pub fn best_f1(rows: &[PrRow]) -> f64 {
    rows.iter().map(|r| r.f1).fold(0.0, f64::max)
}

/// Fraction of samples whose predicted set contains a pair of distinct types
/// that never co-occurred in training.
pub fn consistency_audit(pred: &[Vec<usize>], adjacency: &TypeAdjacency) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let flagged = pred
        .iter()
        .filter(|p| {
            p.iter()
                .enumerate()
                .any(|(a, &i)| p[a + 1..].iter().any(|&j| i != j && adjacency.count(i, j) == 0.0))
        })
        .count();
    flagged as f64 / pred.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposed {
    /// Best grid F1 over pronoun mentions; absent when there are none.
    pub pronoun_f1: Option<f64>,
    pub other_f1: Option<f64>,
}

/// Best grid-threshold F1 computed separately for pronoun and other mentions.
pub fn decompose(scores: &[Vec<f64>], gold: &[Vec<usize>], kinds: &[MentionKind]) -> Decomposed {
    let part = |kind: MentionKind| {
        let idx: Vec<usize> = (0..scores.len()).filter(|&i| kinds[i] == kind).collect();
        if idx.is_empty() {
            return None;
        }
        let s: Vec<Vec<f64>> = idx.iter().map(|&i| scores[i].clone()).collect();
        let g: Vec<Vec<usize>> = idx.iter().map(|&i| gold[i].clone()).collect();
        Some(best_f1(&pr_curve(&s, &g)))
    };
    Decomposed {
        pronoun_f1: part(MentionKind::Pronoun),
        other_f1: part(MentionKind::Other),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub mrr: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub pr_curve: Vec<PrRow>,
    pub best_threshold: f64,
    pub best_f1: f64,
    pub decomposed: Decomposed,
    /// Present only when a training adjacency was supplied.
    pub consistency_rate: Option<f64>,
    pub strict_accuracy: f64,
    pub micro: Prf,
    pub fallback_rate: f64,
    pub samples: usize,
}

/// Full report at `threshold` from cached scores.
pub fn evaluate_scores(
    scores: &[Vec<f64>],
    gold: &[Vec<usize>],
    kinds: &[MentionKind],
    threshold: f64,
    adjacency: Option<&TypeAdjacency>,
    convention: MrrConvention,
) -> Result<EvalReport> {
    if scores.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let predictions: Vec<_> = scores.iter().map(|s| decide_with(s, threshold, true)).collect();
    let chosen: Vec<Vec<usize>> = predictions.iter().map(|p| p.chosen.clone()).collect();
    let prf = macro_prf(&chosen, gold);
    let curve = pr_curve(scores, gold);
    let (best_threshold, best) = curve
        .iter()
        .fold((0.0, f64::NEG_INFINITY), |acc, r| if r.f1 >= acc.1 { (r.threshold, r.f1) } else { acc });
    Ok(EvalReport {
        threshold,
        mrr: mrr(scores, gold, convention)?,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        pr_curve: curve,
        best_threshold,
        best_f1: best,
        decomposed: decompose(scores, gold, kinds),
        consistency_rate: adjacency.map(|a| consistency_audit(&chosen, a)),
        strict_accuracy: strict_accuracy(&chosen, gold),
        micro: micro_prf(&chosen, gold),
        fallback_rate: predictions.iter().filter(|p| p.fallback).count() as f64 / scores.len() as f64,
        samples: scores.len(),
    })
}
