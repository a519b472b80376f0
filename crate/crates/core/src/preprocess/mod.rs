//! Text normalisation, pretrained embedding tables and fixed-length encoding.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DIM: usize = 100;
pub const DEFAULT_MAX_LEN: usize = 100;

const ENGLISH_STOPWORDS: &str = include_str!("stopwords_en.txt");

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: expected {expected} components, found {found}")]
    WrongDimension {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}:{line}: {message}")]
    BadValue {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unknown stemmer {0:?} (expected \"english\" or \"none\")")]
    UnknownStemmer(String),
}

/// Normalised tokens of one comment.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn join(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Whitespace tokens dropped before any other processing: mentions and links.
fn is_mention_or_url(token: &str) -> bool {
    token.starts_with('@') || token.starts_with("http")
}

/// Tokenises `text`: lowercase, drop mentions and URLs, split on
/// non-alphanumeric characters, remove stopwords, then stem.
pub fn tokenize<F>(text: &str, stopwords: &HashSet<String>, stem: F) -> TokenSequence
where
    F: Fn(&str) -> String,
{
    let lower = text.to_lowercase();
    let tokens = lower
        .split_whitespace()
        .filter(|t| !is_mention_or_url(t))
        .flat_map(|t| t.split(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty() && !stopwords.contains(*t))
        .map(stem)
        .filter(|t| !t.is_empty())
        .collect();
    TokenSequence { tokens }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StemmerKind {
    /// Snowball English (Porter2).
    English,
    None,
}

impl std::str::FromStr for StemmerKind {
    type Err = PreprocessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "english" | "porter2" | "snowball" => Ok(StemmerKind::English),
            "none" => Ok(StemmerKind::None),
            _ => Err(PreprocessError::UnknownStemmer(s.to_string())),
        }
    }
}

/// Stopword list plus stemmer, as pinned in the run configuration.
pub struct Tokenizer {
    stopwords: HashSet<String>,
    stemmer: Option<rust_stemmers::Stemmer>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer::new(english_stopwords(), StemmerKind::English)
    }
}

impl Tokenizer {
    pub fn new(stopwords: HashSet<String>, stemmer: StemmerKind) -> Self {
        let stemmer = match stemmer {
            StemmerKind::English => Some(rust_stemmers::Stemmer::create(rust_stemmers::Algorithm::English)),
            StemmerKind::None => None,
        };
        Tokenizer { stopwords, stemmer }
    }

    /// Loads a stopword file (one word per line) or falls back to the built-in English list.
    pub fn from_config(stopwords_path: Option<&Path>, stemmer: StemmerKind) -> Result<Self, PreprocessError> {
        let stopwords = match stopwords_path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| PreprocessError::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                parse_word_list(&text)
            }
            None => english_stopwords(),
        };
        Ok(Tokenizer::new(stopwords, stemmer))
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        match &self.stemmer {
            Some(s) => tokenize(text, &self.stopwords, |t| s.stem(t).into_owned()),
            None => tokenize(text, &self.stopwords, str::to_string),
        }
    }
}

fn parse_word_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

pub fn english_stopwords() -> HashSet<String> {
    parse_word_list(ENGLISH_STOPWORDS)
}

/// Frozen token → vector table in GloVe text format.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vocab: HashMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vocab: HashMap::new(),
        }
    }

    /// Inserts or replaces a vector; panics on a dimension mismatch or non-finite value.
    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f32>) {
        assert_eq!(vector.len(), self.dim, "embedding dimension mismatch");
        assert!(vector.iter().all(|v| v.is_finite()), "non-finite embedding component");
        self.vocab.insert(token.into(), vector);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.vocab.get(token).map(Vec::as_slice)
    }

    /// Writes the table sorted by token, one `token v1 … vd` line each.
    pub fn write(&self, path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let mut tokens: Vec<&String> = self.vocab.keys().collect();
        tokens.sort();
        for t in tokens {
            write!(w, "{t}")?;
            for v in &self.vocab[t] {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }
}

/// Loads a GloVe-style text file. Repeated tokens keep their last vector.
pub fn load_embeddings(path: &Path, dim: usize) -> Result<EmbeddingTable, PreprocessError> {
    let io_err = |source| PreprocessError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut table = EmbeddingTable::new(dim);
    let mut duplicates = 0usize;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        let lineno = i + 1;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(PreprocessError::WrongDimension {
                path: path.to_path_buf(),
                line: lineno,
                expected: dim,
                found: values.len(),
            });
        }
        let mut vector = Vec::with_capacity(dim);
        for v in values {
            let x: f32 = v.parse().map_err(|_| PreprocessError::BadValue {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("cannot parse {v:?} as a number"),
            })?;
            if !x.is_finite() {
                return Err(PreprocessError::BadValue {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: format!("non-finite value {v:?}"),
                });
            }
            vector.push(x);
        }
        if table.vocab.insert(token.to_string(), vector).is_some() {
            duplicates += 1;
        }
    }
    if duplicates > 0 {
        log::warn!(
            "{}: {duplicates} repeated token(s); the last occurrence was kept",
            path.display()
        );
    }
    Ok(table)
}

/// A comment as a `max_len × dim` matrix of embeddings, zero-padded at the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedComment {
    pub max_len: usize,
    pub dim: usize,
    /// Number of non-padding rows.
    pub length: usize,
    /// Row-major `max_len × dim`.
    pub vectors: Vec<f32>,
}

impl EncodedComment {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// The non-padding rows.
    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.vectors.chunks_exact(self.dim).take(self.length)
    }
}

/// Looks every token up in `table`; unknown tokens become zero rows and
/// sequences longer than `max_len` keep their first `max_len` tokens.
pub fn encode(tokens: &TokenSequence, table: &EmbeddingTable, max_len: usize) -> EncodedComment {
    assert!(max_len >= 1, "max_len must be at least 1");
    let dim = table.dim();
    let mut vectors = vec![0f32; max_len * dim];
    let length = tokens.len().min(max_len);
    for (i, token) in tokens.tokens.iter().take(length).enumerate() {
        if let Some(v) = table.get(token) {
            vectors[i * dim..(i + 1) * dim].copy_from_slice(v);
        }
    }
    EncodedComment {
        max_len,
        dim,
        length,
        vectors,
    }
}
