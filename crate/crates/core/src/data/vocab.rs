use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};

/// Granularity group of a type, used by the per-group loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    General,
    Fine,
    Ultra,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Granularity::General, Granularity::Fine, Granularity::Ultra];

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::General => "general",
            Granularity::Fine => "fine",
            Granularity::Ultra => "ultra",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "general" => Ok(Self::General),
            "fine" => Ok(Self::Fine),
            "ultra" => Ok(Self::Ultra),
            other => Err(format!("unknown granularity `{other}`")),
        }
    }
}

/// Ordered type inventory. Position in `names` is the type id used for
/// rows of the type-vector matrix and columns of every score vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TypeVocabulary {
    names: Vec<String>,
    granularity: Vec<Granularity>,
    index: HashMap<String, usize>,
}

impl TypeVocabulary {
    pub fn new(entries: Vec<(String, Granularity)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        let mut names = Vec::with_capacity(entries.len());
        let mut granularity = Vec::with_capacity(entries.len());
        for (i, (name, g)) in entries.into_iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate type `{name}`")));
            }
            names.push(name);
            granularity.push(g);
        }
        if names.is_empty() {
            return Err(Error::Data("empty type vocabulary".into()));
        }
        Ok(Self {
            names,
            granularity,
            index,
        })
    }

    /// Reads `name<TAB>granularity` lines. Blank lines are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut entries = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let name = cols.next().unwrap_or_default().trim().to_string();
            let Some(tag) = cols.next() else {
                return Err(parse_err(lineno, "expected `name<TAB>granularity`".into()));
            };
            if cols.next().is_some() || name.is_empty() {
                return Err(parse_err(lineno, "expected exactly two columns".into()));
            }
            let g = tag.trim().parse::<Granularity>().map_err(|m| parse_err(lineno, m))?;
            if let Some(first) = seen.insert(name.clone(), lineno) {
                return Err(parse_err(
                    lineno,
                    format!("duplicate type `{name}` (first defined on line {first})"),
                ));
            }
            entries.push((name, g));
        }
        Self::new(entries).map_err(|e| match e {
            Error::Data(msg) => parse_err(0, msg),
            other => other,
        })
    }

    pub fn to_tsv(&self) -> String {
        self.names
            .iter()
            .zip(&self.granularity)
            .map(|(n, g)| format!("{n}\t{g}\n"))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn granularity(&self, id: usize) -> Granularity {
        self.granularity[id]
    }

    /// `mask[i]` is true iff type `i` belongs to `group`.
    pub fn group_mask(&self, group: Granularity) -> Vec<bool> {
        self.granularity.iter().map(|&g| g == group).collect()
    }

    pub fn group_size(&self, group: Granularity) -> usize {
        self.granularity.iter().filter(|&&g| g == group).count()
    }

    /// Fails if any of `required` has no members.
    pub fn check_groups(&self, required: &[Granularity]) -> Result<()> {
        for &g in required {
            if self.group_size(g) == 0 {
                return Err(Error::Data(format!("granularity group `{g}` is empty")));
            }
        }
        Ok(())
    }
}

pub const UNK_ID: usize = 0;
pub const PAD_ID: usize = 1;
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";

/// Tokens with pre-trained vectors. Row `UNK_ID` is the mean of all loaded
/// vectors and row `PAD_ID` is zero.
#[derive(Clone, Debug)]
pub struct WordVocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    embeddings: Tensor<f64>,
}

impl WordVocabulary {
    /// Builds a vocabulary from `(token, vector)` pairs in order. Later
    /// duplicates of a token are ignored.
    pub fn from_vectors(dim: usize, vectors: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        let mut tokens = vec![UNK_TOKEN.to_string(), PAD_TOKEN.to_string()];
        let mut index = HashMap::new();
        index.insert(UNK_TOKEN.to_string(), UNK_ID);
        index.insert(PAD_TOKEN.to_string(), PAD_ID);
        let mut rows: Vec<f64> = vec![0.0; 2 * dim];
        let mut mean = vec![0.0; dim];
        let mut loaded = 0usize;
        for (tok, v) in vectors {
            if v.len() != dim {
                return Err(Error::Data(format!(
                    "token `{tok}` has {} values, expected {dim}",
                    v.len()
                )));
            }
            if index.contains_key(&tok) {
                continue;
            }
            index.insert(tok.clone(), tokens.len());
            tokens.push(tok);
            for (m, &x) in mean.iter_mut().zip(&v) {
                *m += x;
            }
            rows.extend_from_slice(&v);
            loaded += 1;
        }
        if loaded == 0 {
            return Err(Error::Data("no embedding vectors loaded".into()));
        }
        for (slot, m) in rows[..dim].iter_mut().zip(&mean) {
            *slot = m / loaded as f64;
        }
        let embeddings = Tensor::new(vec![tokens.len(), dim], rows)?;
        Ok(Self {
            tokens,
            index,
            embeddings,
        })
    }

    /// Reads whitespace-separated text: a token followed by `dim` floats.
    pub fn load(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut vectors = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            let Some(tok) = fields.next() else { continue };
            let values: std::result::Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
            let values = values.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            if values.len() != dim {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected {dim} values, found {}", values.len()),
                });
            }
            vectors.push((tok.to_string(), values));
        }
        if vectors.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: "empty embedding file".into(),
            });
        }
        Self::from_vectors(dim, vectors)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    /// Exact lookup with a lowercase fallback; unknown tokens map to UNK.
    pub fn id(&self, token: &str) -> usize {
        self.index
            .get(token)
            .or_else(|| self.index.get(&token.to_lowercase()))
            .copied()
            .unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn embeddings(&self) -> &Tensor<f64> {
        &self.embeddings
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        self.embeddings.row(id)
    }
}
