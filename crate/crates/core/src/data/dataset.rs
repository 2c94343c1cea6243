use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::vocab::TypeVocabulary;
use crate::error::{Error, Result};

/// Single-token mentions matched (lowercased) against this list are
/// classified as pronouns.
pub const PRONOUNS: &[&str] = &[
    "he", "she", "it", "they", "him", "her", "them", "his", "hers", "its", "their", "theirs", "i", "you", "we", "me",
    "us", "myself", "himself", "herself", "itself", "themselves",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MentionKind {
    Pronoun,
    Other,
}

impl MentionKind {
    pub fn classify(mention: &[String]) -> Self {
        match mention {
            [single] if PRONOUNS.contains(&single.to_lowercase().as_str()) => Self::Pronoun,
            _ => Self::Other,
        }
    }
}

/// One typing instance: a mention span in its sentence with its gold types.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub left_context: Vec<String>,
    pub mention: Vec<String>,
    pub right_context: Vec<String>,
    /// Gold type names, deduplicated, in file order.
    pub gold_types: Vec<String>,
    pub mention_kind: MentionKind,
}

impl Sample {
    pub fn new(left: Vec<String>, mention: Vec<String>, right: Vec<String>, gold: Vec<String>) -> Result<Self> {
        if mention.is_empty() {
            return Err(Error::Data("mention span is empty".into()));
        }
        let mut gold_types: Vec<String> = Vec::with_capacity(gold.len());
        for g in gold {
            if !gold_types.contains(&g) {
                gold_types.push(g);
            }
        }
        if gold_types.is_empty() {
            return Err(Error::Data("gold type set is empty".into()));
        }
        let mention_kind = MentionKind::classify(&mention);
        Ok(Self {
            left_context: left,
            mention,
            right_context: right,
            gold_types,
            mention_kind,
        })
    }

    pub fn mention_text(&self) -> String {
        self.mention.join(" ")
    }
}

/// On-disk record, field names as in the public Ultra-Fine release.
#[derive(Debug, Serialize, Deserialize)]
struct Record {
    left_context_token: Vec<String>,
    mention_span: String,
    right_context_token: Vec<String>,
    y_str: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub lines: usize,
    pub kept: usize,
    pub dropped_unknown_type: usize,
}

/// Reads JSON lines. Samples naming any type outside `vocab` are dropped
/// and counted.
pub fn load_dataset(path: impl AsRef<Path>, vocab: &TypeVocabulary) -> Result<(Vec<Sample>, LoadReport)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut report = LoadReport::default();
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        report.lines += 1;
        let rec: Record = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if rec.y_str.iter().any(|t| vocab.id(t).is_none()) {
            report.dropped_unknown_type += 1;
            continue;
        }
        let mention: Vec<String> = rec.mention_span.split_whitespace().map(str::to_string).collect();
        let sample = Sample::new(rec.left_context_token, mention, rec.right_context_token, rec.y_str)
            .map_err(|e| parse_err(e.to_string()))?;
        samples.push(sample);
    }
    report.kept = samples.len();
    if samples.is_empty() {
        return Err(Error::Data(format!("{}: no usable samples", path.display())));
    }
    Ok((samples, report))
}

pub fn write_dataset(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for s in samples {
        let rec = Record {
            left_context_token: s.left_context.clone(),
            mention_span: s.mention_text(),
            right_context_token: s.right_context.clone(),
            y_str: s.gold_types.clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::vocab::Granularity;

    fn vocab() -> TypeVocabulary {
        TypeVocabulary::new(vec![
            ("location".into(), Granularity::General),
            ("person".into(), Granularity::General),
            ("city".into(), Granularity::Fine),
        ])
        .unwrap()
    }

    fn tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn single_line() {
        let f = tmp(r#"{"left_context_token":["Today",","], "mention_span":"Taiwan", "right_context_token":["is"], "y_str":["location"]}"#);
        let (s, r) = load_dataset(f.path(), &vocab()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].gold_types, vec!["location"]);
        assert_eq!(s[0].mention, vec!["Taiwan"]);
        assert_eq!(s[0].mention_kind, MentionKind::Other);
        assert_eq!(r.dropped_unknown_type, 0);
    }

    #[test]
    fn pronoun_mentions() {
        let f = tmp(r#"{"left_context_token":[], "mention_span":"He", "right_context_token":["won"], "y_str":["person"]}"#);
        let (s, _) = load_dataset(f.path(), &vocab()).unwrap();
        assert_eq!(s[0].mention_kind, MentionKind::Pronoun);
        assert_eq!(MentionKind::classify(&["he".into(), "said".into()]), MentionKind::Other);
    }

    #[test]
    fn unknown_types_dropped_and_counted() {
        let lines = [
            r#"{"left_context_token":[], "mention_span":"Paris", "right_context_token":[], "y_str":["city","location"]}"#,
            r#"{"left_context_token":[], "mention_span":"Bob", "right_context_token":[], "y_str":["person","wizard"]}"#,
            r#"{"left_context_token":[], "mention_span":"she", "right_context_token":[], "y_str":["person"]}"#,
        ];
        let f = tmp(&lines.join("\n"));
        let (s, r) = load_dataset(f.path(), &vocab()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(r.dropped_unknown_type, 1);
        assert_eq!(r.lines, 3);
    }

    #[test]
    fn malformed_line_reports_number() {
        let f = tmp("{\"left_context_token\":[], \"mention_span\":\"x\", \"right_context_token\":[], \"y_str\":[\"person\"]}\nnot json\n");
        let err = load_dataset(f.path(), &vocab()).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn zero_usable_samples() {
        let f = tmp(r#"{"left_context_token":[], "mention_span":"x", "right_context_token":[], "y_str":["wizard"]}"#);
        assert!(load_dataset(f.path(), &vocab()).is_err());
    }
}
