//! Domain types and embedding ingestion.
//!
//! A corpus is an ordered collection of candidate demonstrations, each
//! carrying an opaque id, a dense embedding, a label, and the serialized
//! record text that goes into prompts. Everything downstream (graph,
//! cohorts, search) addresses records by their position in the corpus.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: invalid record: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: record '{id}' has dimension {got}, corpus dimension is {expected}")]
    DimensionMismatch {
        line: usize,
        id: String,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: record '{id}' contains a non-finite embedding value")]
    NonFinite { line: usize, id: String },
    #[error("line {line}: duplicate id '{id}'")]
    DuplicateId { line: usize, id: String },
    #[error("corpus is empty")]
    Empty,
    #[error("query '{id}' has dimension {got}, corpus dimension is {expected}")]
    QueryDimension {
        id: String,
        expected: usize,
        got: usize,
    },
}

/// A record label: binary/categorical classes arrive as numbers, free-text
/// labels as strings. Kept in its source form so re-serialization is lossless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Int(i64),
    Float(f64),
    Text(String),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Int(v) => write!(f, "{v}"),
            Label::Float(v) => write!(f, "{v}"),
            Label::Text(v) => write!(f, "{v}"),
        }
    }
}

impl Label {
    /// Binary view of the label, when it has one (0/1, "0"/"1").
    pub fn as_binary(&self) -> Option<bool> {
        match self {
            Label::Int(0) => Some(false),
            Label::Int(1) => Some(true),
            Label::Float(v) if *v == 0.0 => Some(false),
            Label::Float(v) if *v == 1.0 => Some(true),
            Label::Text(s) if s == "0" => Some(false),
            Label::Text(s) if s == "1" => Some(true),
            _ => None,
        }
    }
}

/// One candidate demonstration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    #[serde(rename = "vector")]
    pub embedding: Vec<f64>,
    pub label: Label,
    #[serde(rename = "record")]
    pub record_text: String,
}

/// A test instance to select demonstrations for. Same wire schema as
/// `InstanceRecord` minus the label (a label, if present, is ignored).
#[derive(Debug, Clone)]
pub struct Query {
    pub id: String,
    pub embedding: Vec<f64>,
    pub record_text: String,
}

#[derive(Deserialize)]
struct QueryLine {
    id: String,
    vector: Vec<f64>,
    #[allow(dead_code)]
    label: Option<Label>,
    record: String,
}

/// An ingested, validated demonstration corpus.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct Corpus {
    records: Vec<InstanceRecord>,
    dim: usize,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus from records, enforcing the ingestion invariants
    /// (uniform dimension, unique ids, finite values).
    pub fn new(records: Vec<InstanceRecord>) -> Result<Self, CorpusError> {
        if records.is_empty() {
            return Err(CorpusError::Empty);
        }
        let dim = records[0].embedding.len();
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            let line = i + 1;
            if rec.embedding.len() != dim {
                return Err(CorpusError::DimensionMismatch {
                    line,
                    id: rec.id.clone(),
                    expected: dim,
                    got: rec.embedding.len(),
                });
            }
            if rec.embedding.iter().any(|v| !v.is_finite()) {
                return Err(CorpusError::NonFinite {
                    line,
                    id: rec.id.clone(),
                });
            }
            if by_id.insert(rec.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId {
                    line,
                    id: rec.id.clone(),
                });
            }
        }
        Ok(Corpus {
            records,
            dim,
            by_id,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[InstanceRecord] {
        &self.records
    }

    pub fn record(&self, idx: usize) -> &InstanceRecord {
        &self.records[idx]
    }

    pub fn embedding(&self, idx: usize) -> &[f64] {
        &self.records[idx].embedding
    }

    /// Position of a record id in the corpus, if present.
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Validates that a query matches the corpus dimension.
    pub fn check_query(&self, query: &Query) -> Result<(), CorpusError> {
        if query.embedding.len() != self.dim {
            return Err(CorpusError::QueryDimension {
                id: query.id.clone(),
                expected: self.dim,
                got: query.embedding.len(),
            });
        }
        Ok(())
    }
}

/// Loads a JSONL corpus: one record per line with keys
/// `id`, `vector`, `label`, `record`.
pub fn ingest_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut dim: Option<usize> = None;
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord =
            serde_json::from_str(&line).map_err(|source| CorpusError::Parse {
                line: line_no,
                source,
            })?;
        let expected = *dim.get_or_insert(rec.embedding.len());
        if rec.embedding.len() != expected {
            return Err(CorpusError::DimensionMismatch {
                line: line_no,
                id: rec.id.clone(),
                expected,
                got: rec.embedding.len(),
            });
        }
        if rec.embedding.iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::NonFinite {
                line: line_no,
                id: rec.id.clone(),
            });
        }
        if seen.insert(rec.id.clone(), line_no).is_some() {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: rec.id.clone(),
            });
        }
        records.push(rec);
    }
    Corpus::new(records)
}

/// Writes a corpus back out as JSONL. Inverse of [`ingest_corpus`] up to
/// float formatting (f64 values round-trip exactly through serde_json).
pub fn write_corpus(corpus: &Corpus, out: &mut dyn Write) -> std::io::Result<()> {
    for rec in corpus.records() {
        let line = serde_json::to_string(rec).expect("record serializes");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Loads queries from JSONL (same schema as the corpus; `label` optional
/// and ignored). Dimension is validated against `dim` when provided.
pub fn load_queries(path: &Path, dim: Option<usize>) -> Result<Vec<Query>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut queries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: QueryLine =
            serde_json::from_str(&line).map_err(|source| CorpusError::Parse {
                line: line_no,
                source,
            })?;
        if parsed.vector.iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::NonFinite {
                line: line_no,
                id: parsed.id.clone(),
            });
        }
        if let Some(d) = dim {
            if parsed.vector.len() != d {
                return Err(CorpusError::QueryDimension {
                    id: parsed.id,
                    expected: d,
                    got: parsed.vector.len(),
                });
            }
        }
        queries.push(Query {
            id: parsed.id,
            embedding: parsed.vector,
            record_text: parsed.record,
        });
    }
    Ok(queries)
}

/// Cosine similarity in [-1, 1]. A zero-norm input yields 0.0; use
/// [`cosine_sim_flagged`] when the caller needs to see the degenerate case.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    cosine_sim_flagged(a, b).0
}

/// Cosine similarity plus a flag marking a zero-norm (degenerate) input,
/// for which the similarity is defined as 0 rather than NaN.
pub fn cosine_sim_flagged(a: &[f64], b: &[f64]) -> (f64, bool) {
    debug_assert_eq!(a.len(), b.len(), "cosine_sim dimension mismatch");
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return (0.0, true);
    }
    ((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0), false)
}
