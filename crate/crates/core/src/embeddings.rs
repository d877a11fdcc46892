//! Static word embeddings: loading, normalization and saving.
//!
//! Two whitespace-delimited text formats are supported:
//!
//! * `word2vec-text`: a header line `<vocab_count> <dim>` followed by one
//!   `<word> <v1> ... <vd>` line per word.
//! * `glove-text`: the same rows without a header; the dimension is taken
//!   from the first row.
//!
//! The binary word2vec format is not supported.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum EmbeddingFormat {
    #[default]
    #[serde(rename = "word2vec-text")]
    Word2VecText,
    #[serde(rename = "glove-text")]
    GloveText,
}

impl FromStr for EmbeddingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word2vec-text" | "word2vec" => Ok(EmbeddingFormat::Word2VecText),
            "glove-text" | "glove" => Ok(EmbeddingFormat::GloveText),
            other => Err(Error::Schema(format!("unknown embedding format '{other}'"))),
        }
    }
}

impl fmt::Display for EmbeddingFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingFormat::Word2VecText => "word2vec-text",
            EmbeddingFormat::GloveText => "glove-text",
        })
    }
}

/// Immutable vocabulary-to-vector map with a fixed dimension.
///
/// Vectors are stored row-major in one contiguous buffer; row `i` belongs to
/// `vocab[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    dim: usize,
    normalized: bool,
}

/// Side information gathered while reading an embedding file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    /// Rows whose word had already been seen; the first occurrence wins.
    pub duplicates: usize,
    pub duplicate_words: Vec<String>,
}

impl EmbeddingSet {
    /// Build a set from words and their vectors. Duplicate words are rejected.
    pub fn from_rows<S: Into<String>>(words: Vec<S>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if words.len() != rows.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} words but {} vectors",
                words.len(),
                rows.len()
            )));
        }
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptyFile)?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    line: i + 1,
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        let vocab: Vec<String> = words.into_iter().map(Into::into).collect();
        Self::from_parts(vocab, data, dim)
    }

    /// Build a set from a row-major buffer.
    pub fn from_parts(vocab: Vec<String>, data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || vocab.is_empty() {
            return Err(Error::EmptyFile);
        }
        if data.len() != vocab.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "buffer of {} values does not hold {} rows of dimension {}",
                data.len(),
                vocab.len(),
                dim
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::MalformedLine {
                line: pos / dim + 1,
                reason: format!("non-finite value for '{}'", vocab[pos / dim]),
            });
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, w) in vocab.iter().enumerate() {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::MalformedLine {
                    line: i + 1,
                    reason: format!("invalid word {w:?}"),
                });
            }
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate word '{w}'")));
            }
        }
        Ok(EmbeddingSet {
            vocab,
            index,
            data,
            dim,
            normalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn words(&self) -> &[String] {
        &self.vocab
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Exact lookup, then (optionally) a lookup of the lowercased word.
    pub fn resolve(&self, word: &str, lowercase_fallback: bool) -> Option<usize> {
        self.index_of(word).or_else(|| {
            if lowercase_fallback {
                let lower = word.to_lowercase();
                if lower != word {
                    return self.index_of(&lower);
                }
            }
            None
        })
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index_of(word).map(|i| self.row(i))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rescale every row to unit L2 norm.
    pub fn normalize(&self) -> Result<EmbeddingSet> {
        if let Some(i) = self.rows().position(|r| vector::norm(r) < 1e-12) {
            return Err(Error::ZeroVector(self.vocab[i].clone()));
        }
        let mut data = self.data.clone();
        data.par_chunks_mut(self.dim).for_each(|r| {
            let n = vector::norm(r);
            vector::scale(r, 1.0 / n);
        });
        Ok(EmbeddingSet {
            vocab: self.vocab.clone(),
            index: self.index.clone(),
            data,
            dim: self.dim,
            normalized: true,
        })
    }

    /// True if every row has unit norm within `tol`.
    pub fn rows_are_unit(&self, tol: f64) -> bool {
        self.rows().all(|r| (vector::norm(r) - 1.0).abs() <= tol)
    }

    /// Copy of this set whose buffer is replaced; vocabulary and order are kept.
    pub(crate) fn with_data(&self, data: Vec<f64>, normalized: bool) -> EmbeddingSet {
        debug_assert_eq!(data.len(), self.data.len());
        EmbeddingSet {
            vocab: self.vocab.clone(),
            index: self.index.clone(),
            data,
            dim: self.dim,
            normalized,
        }
    }

    /// Mark a set as normalized after checking every row (tolerance 1e-6).
    pub fn assume_normalized(mut self) -> Result<EmbeddingSet> {
        if let Some(i) = self.rows().position(|r| (vector::norm(r) - 1.0).abs() > 1e-6) {
            return Err(Error::Schema(format!(
                "row '{}' is not unit length",
                self.vocab[i]
            )));
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn write<W: Write>(&self, mut w: W, format: EmbeddingFormat) -> std::io::Result<()> {
        if format == EmbeddingFormat::Word2VecText {
            writeln!(w, "{} {}", self.len(), self.dim)?;
        }
        let mut line = String::new();
        for (word, row) in self.vocab.iter().zip(self.rows()) {
            use std::fmt::Write as _;
            line.clear();
            line.push_str(word);
            for x in row {
                // Shortest representation that parses back to the same f64.
                let _ = write!(line, " {x}");
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        w.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>, format: EmbeddingFormat) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(BufWriter::new(file), format)
            .map_err(|e| Error::io(path, e))
    }
}

/// Parse embeddings from a reader. Returned sets are never marked normalized.
pub fn read_embeddings<R: BufRead>(
    reader: R,
    format: EmbeddingFormat,
) -> Result<(EmbeddingSet, LoadReport)> {
    let mut lines = reader.lines().enumerate();
    let mut declared: Option<(usize, usize)> = None;

    if format == EmbeddingFormat::Word2VecText {
        let header = loop {
            match lines.next() {
                None => return Err(Error::EmptyFile),
                Some((no, line)) => {
                    let line = line.map_err(|e| Error::MalformedLine {
                        line: no + 1,
                        reason: e.to_string(),
                    })?;
                    if !line.trim().is_empty() {
                        break (no + 1, line);
                    }
                }
            }
        };
        let (no, line) = header;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| s.parse::<usize>().ok();
        match fields.as_slice() {
            [count, dim] => match (parse(count), parse(dim)) {
                (Some(c), Some(d)) if d > 0 => declared = Some((c, d)),
                _ => {
                    return Err(Error::MalformedLine {
                        line: no,
                        reason: format!("invalid header {line:?}"),
                    })
                }
            },
            _ => {
                return Err(Error::MalformedLine {
                    line: no,
                    reason: "header must be '<vocab_count> <dim>'".into(),
                })
            }
        }
    }

    let mut dim = declared.map(|(_, d)| d);
    let mut vocab = Vec::with_capacity(declared.map_or(0, |(c, _)| c));
    let mut data = Vec::with_capacity(declared.map_or(0, |(c, d)| c * d));
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut report = LoadReport::default();
    let mut rows = 0usize;

    for (no, line) in lines {
        let line_no = no + 1;
        let line = line.map_err(|e| Error::MalformedLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().expect("nonblank line has a field");
        let start = data.len();
        let mut found = 0usize;
        for f in fields {
            let x: f64 = f.parse().map_err(|_| Error::MalformedLine {
                line: line_no,
                reason: format!("'{f}' is not a number (words may not contain whitespace)"),
            })?;
            if !x.is_finite() {
                return Err(Error::MalformedLine {
                    line: line_no,
                    reason: format!("non-finite value '{f}'"),
                });
            }
            data.push(x);
            found += 1;
        }
        if found == 0 {
            return Err(Error::MalformedLine {
                line: line_no,
                reason: "word without vector".into(),
            });
        }
        let expected = *dim.get_or_insert(found);
        if found != expected {
            return Err(Error::DimensionMismatch {
                line: line_no,
                expected,
                found,
            });
        }
        rows += 1;
        if seen.contains_key(word) {
            data.truncate(start);
            report.duplicates += 1;
            report.duplicate_words.push(word.to_string());
            continue;
        }
        seen.insert(word.to_string(), vocab.len());
        vocab.push(word.to_string());
    }

    if vocab.is_empty() {
        return Err(Error::EmptyFile);
    }
    if let Some((count, _)) = declared {
        if count != rows {
            return Err(Error::CountMismatch {
                expected: count,
                found: rows,
            });
        }
    }
    if report.duplicates > 0 {
        tracing::warn!(
            duplicates = report.duplicates,
            "duplicate words in embedding file; kept first occurrence"
        );
    }
    let dim = dim.expect("nonempty vocabulary has a dimension");
    Ok((
        EmbeddingSet {
            index: seen,
            vocab,
            data,
            dim,
            normalized: false,
        },
        report,
    ))
}

pub fn load_embeddings(
    path: impl AsRef<Path>,
    format: EmbeddingFormat,
) -> Result<(EmbeddingSet, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::with_capacity(1 << 20, file), format)
}
