//! Type co-occurrence graph, type-name word affinity, and the one-hop
//! propagation that turns the type-vector matrix `W_o` into `W′_o`.
//!
//! Three operators are supported:
//!
//! * `symmetric`: `D̃^{-1/2} Ã D̃^{-1/2} W_o T`
//! * `row`: `D̃^{-1} Ã W_o T`, i.e. every type vector becomes the
//!   count-weighted mean of itself and its co-occurring types
//! * `row+word`: `deg(M)^{-1} M W_o T` with `M = Ã + λ A′_word`
//!
//! where `Ã = A + I`. In `row+word` the degrees are taken from `M` itself
//! on every forward pass, so the operator stays row-stochastic while `λ`
//! is trained. There is never a nonlinearity and never more than one hop.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Sample, TypeVocabulary, WordVocabulary};
use crate::diff::{Csr, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Word affinity is dense `N × N`; larger vocabularies need an override.
pub const MAX_DENSE_TYPES: usize = 2000;

/// Lower bound applied to scaled similarities so every entry stays in (0, 1].
pub const MIN_AFFINITY: f64 = 1e-12;

/// Symmetric co-occurrence counts with implicit self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct TypeAdjacency {
    n: usize,
    /// Off-diagonal counts keyed by `(i, j)` with `i < j`.
    edges: BTreeMap<(usize, usize), f64>,
    /// Row lists of `A` (both directions), sorted by column.
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl TypeAdjacency {
    /// Counts every unordered pair of distinct gold types per sample.
    pub fn from_gold_sets<I, G>(n: usize, gold_sets: I) -> Self
    where
        I: IntoIterator<Item = G>,
        G: AsRef<[usize]>,
    {
        let mut edges = BTreeMap::new();
        for set in gold_sets {
            let mut ids: Vec<usize> = set.as_ref().to_vec();
            ids.sort_unstable();
            ids.dedup();
            for (a, &i) in ids.iter().enumerate() {
                for &j in &ids[a + 1..] {
                    *edges.entry((i, j)).or_insert(0.0) += 1.0;
                }
            }
        }
        Self::from_edges(n, edges)
    }

    pub fn from_samples(samples: &[Sample], tv: &TypeVocabulary) -> Self {
        let sets = samples
            .iter()
            .map(|s| s.gold_types.iter().filter_map(|g| tv.id(g)).collect::<Vec<_>>());
        Self::from_gold_sets(tv.len(), sets)
    }

    /// Builds from explicit `(i, j) → count` entries; keys need not be ordered
    /// but diagonal entries are rejected.
    pub fn from_counts(n: usize, counts: impl IntoIterator<Item = ((usize, usize), f64)>) -> Result<Self> {
        let mut edges = BTreeMap::new();
        for ((i, j), c) in counts {
            if i == j || i >= n || j >= n || c.is_nan() || c < 0.0 {
                return Err(Error::InvalidArgument(format!("bad adjacency entry ({i}, {j}) = {c}")));
            }
            if c > 0.0 {
                *edges.entry((i.min(j), i.max(j))).or_insert(0.0) += c;
            }
        }
        Ok(Self::from_edges(n, edges))
    }

    fn from_edges(n: usize, edges: BTreeMap<(usize, usize), f64>) -> Self {
        let mut neighbors = vec![Vec::new(); n];
        for (&(i, j), &c) in &edges {
            neighbors[i].push((j, c));
            neighbors[j].push((i, c));
        }
        for row in &mut neighbors {
            row.sort_by_key(|&(j, _)| j);
        }
        Self { n, edges, neighbors }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `A[i, j]`; zero on the diagonal.
    pub fn count(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        self.edges.get(&(i.min(j), i.max(j))).copied().unwrap_or(0.0)
    }

    /// `Ã[i, j] = A[i, j] + [i = j]`.
    pub fn tilde(&self, i: usize, j: usize) -> f64 {
        self.count(i, j) + if i == j { 1.0 } else { 0.0 }
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// `D̃[i, i] = Σ_j Ã[i, j]`, always at least one.
    pub fn degree(&self, i: usize) -> f64 {
        1.0 + self.neighbors[i].iter().map(|&(_, c)| c).sum::<f64>()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Unordered edges `(i, j, count)` with `i < j`, sorted.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges.iter().map(|(&(i, j), &c)| (i, j, c))
    }

    /// Same graph with every positive count replaced by one.
    pub fn binarized(&self) -> Self {
        let edges = self.edges.keys().map(|&k| (k, 1.0)).collect();
        Self::from_edges(self.n, edges)
    }

    pub fn dense_tilde<S: Scalar>(&self) -> Tensor<S> {
        let mut t = Tensor::eye(self.n);
        for (&(i, j), &c) in &self.edges {
            t.row_mut(i)[j] = S::lit(c);
            t.row_mut(j)[i] = S::lit(c);
        }
        t
    }

    fn operator<S: Scalar>(&self, weight: impl Fn(usize, usize, f64) -> f64) -> Csr<S> {
        let rows = (0..self.n)
            .map(|i| {
                let mut row: Vec<(usize, S)> = Vec::with_capacity(self.neighbors[i].len() + 1);
                let mut self_done = false;
                for &(j, c) in &self.neighbors[i] {
                    if !self_done && j > i {
                        row.push((i, S::lit(weight(i, i, 1.0))));
                        self_done = true;
                    }
                    row.push((j, S::lit(weight(i, j, c))));
                }
                if !self_done {
                    row.push((i, S::lit(weight(i, i, 1.0))));
                }
                row
            })
            .collect();
        Csr::from_rows(self.n, rows).expect("columns sorted")
    }

    /// `D̃^{-1/2} Ã D̃^{-1/2}`.
    pub fn symmetric_operator<S: Scalar>(&self) -> Csr<S> {
        let inv_sqrt: Vec<f64> = (0..self.n).map(|i| 1.0 / self.degree(i).sqrt()).collect();
        self.operator(|i, j, a| inv_sqrt[i] * a * inv_sqrt[j])
    }

    /// `D̃^{-1} Ã`.
    pub fn row_operator<S: Scalar>(&self) -> Csr<S> {
        let inv: Vec<f64> = (0..self.n).map(|i| 1.0 / self.degree(i)).collect();
        self.operator(|i, _, a| inv[i] * a)
    }

    /// SHA-256 over the node count and the sorted edge list.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.n.to_le_bytes());
        for (&(i, j), &c) in &self.edges {
            h.update(i.to_le_bytes());
            h.update(j.to_le_bytes());
            h.update(c.to_bits().to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }

    /// Edge list as `i<TAB>j<TAB>count` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("i\tj\tcount\n");
        for (i, j, c) in self.edges() {
            out.push_str(&format!("{i}\t{j}\t{c}\n"));
        }
        out
    }

    pub fn stats(&self) -> GraphStats {
        let mut hist = BTreeMap::new();
        for i in 0..self.n {
            *hist.entry(self.neighbors[i].len()).or_insert(0) += 1;
        }
        GraphStats {
            nodes: self.n,
            edges: self.edges.len(),
            degree_histogram: hist,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    /// Number of distinct neighbors (self excluded) → number of types.
    pub degree_histogram: BTreeMap<usize, usize>,
}

/// Sum of the embeddings of the tokens of a type name split on `_` and
/// spaces. Tokens without a vector use the UNK row.
pub fn type_name_embedding(name: &str, wv: &WordVocabulary) -> Vec<f64> {
    let mut out = vec![0.0; wv.dim()];
    for tok in name.split(['_', ' ']).filter(|t| !t.is_empty()) {
        for (o, &x) in out.iter_mut().zip(wv.vector(wv.id(tok))) {
            *o += x;
        }
    }
    out
}

/// `A′_word = (cos + 1) / 2` over type-name embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct WordAffinity {
    scaled: Tensor<f64>,
}

impl WordAffinity {
    pub fn from_embeddings(embeddings: &[Vec<f64>], allow_large: bool) -> Result<Self> {
        let n = embeddings.len();
        if n == 0 {
            return Err(Error::InvalidArgument("no type embeddings".into()));
        }
        if n > MAX_DENSE_TYPES && !allow_large {
            return Err(Error::InvalidArgument(format!(
                "dense word affinity over {n} types exceeds {MAX_DENSE_TYPES}; set the override to allow it"
            )));
        }
        let norms: Vec<f64> = embeddings.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        let mut scaled = Tensor::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let cos = if norms[i] == 0.0 || norms[j] == 0.0 {
                    0.0
                } else if i == j {
                    1.0
                } else {
                    let dot: f64 = embeddings[i].iter().zip(&embeddings[j]).map(|(a, b)| a * b).sum();
                    (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
                };
                let v = ((cos + 1.0) / 2.0).max(MIN_AFFINITY);
                scaled.row_mut(i)[j] = v;
                scaled.row_mut(j)[i] = v;
            }
        }
        Ok(Self { scaled })
    }

    pub fn build(tv: &TypeVocabulary, wv: &WordVocabulary, allow_large: bool) -> Result<Self> {
        let emb: Vec<Vec<f64>> = tv.names().iter().map(|n| type_name_embedding(n, wv)).collect();
        Self::from_embeddings(&emb, allow_large)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scaled.at(i, j)
    }

    pub fn matrix(&self) -> &Tensor<f64> {
        &self.scaled
    }

    pub fn len(&self) -> usize {
        self.scaled.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PropagationVariant {
    #[serde(rename = "symmetric")]
    Symmetric,
    #[serde(rename = "row")]
    Row,
    #[default]
    #[serde(rename = "row+word")]
    RowWord,
}

impl FromStr for PropagationVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "symmetric" => Ok(Self::Symmetric),
            "row" => Ok(Self::Row),
            "row+word" => Ok(Self::RowWord),
            other => Err(format!("unknown propagation variant `{other}` (symmetric|row|row+word)")),
        }
    }
}

impl fmt::Display for PropagationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Symmetric => "symmetric",
            Self::Row => "row",
            Self::RowWord => "row+word",
        })
    }
}

/// Propagation settings for one run. The layer is always a single hop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PropagationConfig {
    pub variant: PropagationVariant,
    /// Adds `W_o` to the propagated matrix.
    pub residual: bool,
}

impl PropagationConfig {
    pub const HOPS: usize = 1;
}

/// Immutable graph operators shared by every forward pass.
#[derive(Clone, Debug)]
pub struct LabelGraph<S> {
    adjacency: TypeAdjacency,
    word: Option<WordAffinity>,
    symmetric: Arc<Csr<S>>,
    row: Arc<Csr<S>>,
    tilde_dense: Option<Tensor<S>>,
    word_dense: Option<Tensor<S>>,
}

impl<S: Scalar> LabelGraph<S> {
    pub fn new(adjacency: TypeAdjacency, word: Option<WordAffinity>) -> Result<Self> {
        if let Some(w) = &word {
            if w.len() != adjacency.len() {
                return Err(Error::shape("label graph", &[adjacency.len()], &[w.len()]));
            }
        }
        Ok(Self {
            symmetric: Arc::new(adjacency.symmetric_operator()),
            row: Arc::new(adjacency.row_operator()),
            tilde_dense: word.as_ref().map(|_| adjacency.dense_tilde()),
            word_dense: word.as_ref().map(|w| w.matrix().cast()),
            adjacency,
            word,
        })
    }

    pub fn adjacency(&self) -> &TypeAdjacency {
        &self.adjacency
    }

    pub fn word_affinity(&self) -> Option<&WordAffinity> {
        self.word.as_ref()
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }
}

/// `W′_o` for the configured operator. `lambda` is the `1 × 1` weight of
/// the word-affinity term and is only read by `row+word`.
pub fn propagate<S: Scalar>(
    tape: &mut Tape<'_, S>,
    w_o: Var,
    transform: Var,
    lambda: Option<Var>,
    graph: &LabelGraph<S>,
    cfg: PropagationConfig,
) -> Result<Var> {
    let (n, _) = tape.shape(w_o);
    if n != graph.len() {
        return Err(Error::shape("propagate", &[n], &[graph.len()]));
    }
    let mixed = match cfg.variant {
        PropagationVariant::Symmetric => tape.sparse_matmul(graph.symmetric.clone(), w_o)?,
        PropagationVariant::Row => tape.sparse_matmul(graph.row.clone(), w_o)?,
        PropagationVariant::RowWord => {
            let (Some(tilde), Some(word)) = (&graph.tilde_dense, &graph.word_dense) else {
                return Err(Error::InvalidArgument(
                    "row+word propagation needs a word affinity matrix".into(),
                ));
            };
            let lambda =
                lambda.ok_or_else(|| Error::InvalidArgument("row+word propagation needs lambda".into()))?;
            let tilde = tape.constant(tilde.clone());
            let word = tape.constant(word.clone());
            let weighted = tape.scale_by(word, lambda)?;
            let combined = tape.add(tilde, weighted)?;
            let op = tape.row_normalize(combined)?;
            tape.matmul(op, w_o)?
        }
    };
    let out = tape.matmul(mixed, transform)?;
    if cfg.residual {
        tape.add(out, w_o)
    } else {
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_pairs_gives_identity() {
        let a = TypeAdjacency::from_gold_sets(3, [vec![0usize]]);
        assert_eq!(a.num_edges(), 0);
        assert_eq!(a.dense_tilde::<f64>(), Tensor::eye(3));
        assert_eq!(a.degree(0), 1.0);
    }

    #[test]
    fn hand_counted_degrees() {
        // golds {a,b}, {a,b}, {a,c}
        let a = TypeAdjacency::from_gold_sets(3, [vec![0usize, 1], vec![1, 0], vec![0, 2]]);
        assert_eq!(a.count(0, 1), 2.0);
        assert_eq!(a.count(1, 0), 2.0);
        assert_eq!(a.count(0, 2), 1.0);
        assert_eq!(a.count(1, 2), 0.0);
        assert_eq!(a.degree(0), 4.0);
        assert_eq!(a.degree(1), 3.0);
    }

    #[test]
    fn stats_and_tsv() {
        let a = TypeAdjacency::from_gold_sets(4, [vec![0usize, 1, 2]]);
        let s = a.stats();
        assert_eq!(s.nodes, 4);
        assert_eq!(s.edges, 3);
        assert_eq!(s.degree_histogram.get(&2), Some(&3));
        assert_eq!(s.degree_histogram.get(&0), Some(&1));
        assert_eq!(a.to_tsv().lines().count(), 4);
    }

    #[test]
    fn binarize_flattens_counts() {
        let a = TypeAdjacency::from_gold_sets(2, [vec![0usize, 1], vec![0, 1]]);
        assert_eq!(a.binarized().count(0, 1), 1.0);
        assert_ne!(a.fingerprint(), a.binarized().fingerprint());
    }

    #[test]
    fn word_affinity_special_cases() {
        let emb = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]];
        let w = WordAffinity::from_embeddings(&emb, false).unwrap();
        assert_eq!(w.get(0, 1), 1.0);
        assert_eq!(w.get(0, 2), MIN_AFFINITY);
        assert_eq!(w.get(0, 3), 0.5);
        assert_eq!(w.get(4, 0), 0.5);
        assert_eq!(w.get(4, 4), 0.5);
        assert_eq!(w.get(3, 3), 1.0);
    }

    #[test]
    fn dense_limit_needs_override() {
        let emb = vec![vec![1.0]; MAX_DENSE_TYPES + 1];
        assert!(WordAffinity::from_embeddings(&emb, false).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [PropagationVariant::Symmetric, PropagationVariant::Row, PropagationVariant::RowWord] {
            assert_eq!(v.to_string().parse::<PropagationVariant>().unwrap(), v);
        }
    }
}
