//! Human annotation: the label store behind the annotation API, agreement
//! statistics, and aggregation of per-annotator labels into gold labels.

mod agreement;
mod gold;
mod kappa;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Comment;
use crate::jsonl::{self, LineError};
use crate::labels::{MoralLabel, Stance};

pub use agreement::{agreement_report, AgreementReport, DimensionAgreement};
pub use gold::{aggregate_gold, export_gold, import_gold, GoldLabel, GoldReport};
pub use kappa::{cohen_kappa, KappaError};

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("unknown comment {0:?}")]
    UnknownComment(String),
    #[error("annotator id must not be empty")]
    EmptyAnnotator,
    #[error("a NonRelevant comment cannot carry moral labels")]
    NonRelevantWithMorals,
    #[error("a comment marked non-moral cannot carry moral labels")]
    NonMoralWithMorals,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl AnnotationError {
    /// True for errors caused by the submitted record itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            AnnotationError::UnknownComment(_)
                | AnnotationError::EmptyAnnotator
                | AnnotationError::NonRelevantWithMorals
                | AnnotationError::NonMoralWithMorals
        )
    }
}

/// One annotator's labels for one comment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub comment_id: String,
    pub annotator_id: String,
    pub stance: Stance,
    #[serde(default)]
    pub morals: BTreeSet<MoralLabel>,
    #[serde(default)]
    pub non_moral: bool,
    #[serde(default = "Utc::now")]
    pub created_at: DateTime<Utc>,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<(), AnnotationError> {
        if self.annotator_id.is_empty() {
            return Err(AnnotationError::EmptyAnnotator);
        }
        if self.stance == Stance::NonRelevant && !self.morals.is_empty() {
            return Err(AnnotationError::NonRelevantWithMorals);
        }
        if self.non_moral && !self.morals.is_empty() {
            return Err(AnnotationError::NonMoralWithMorals);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Ack {
    /// Whether an earlier record by the same annotator was overwritten.
    pub replaced: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub labeled: usize,
    pub per_annotator: BTreeMap<String, usize>,
}

#[derive(Default)]
struct State {
    comments: Vec<Comment>,
    index: HashMap<String, usize>,
    /// Keyed by (comment_id, annotator_id).
    records: BTreeMap<(String, String), AnnotationRecord>,
    label_counts: Vec<usize>,
    annotators: BTreeSet<String>,
}

impl State {
    fn insert(&mut self, record: AnnotationRecord) -> Result<Ack, AnnotationError> {
        record.validate()?;
        let idx = *self
            .index
            .get(&record.comment_id)
            .ok_or_else(|| AnnotationError::UnknownComment(record.comment_id.clone()))?;
        self.annotators.insert(record.annotator_id.clone());
        let key = (record.comment_id.clone(), record.annotator_id.clone());
        let replaced = self.records.insert(key, record).is_some();
        if !replaced {
            self.label_counts[idx] += 1;
        }
        Ok(Ack { replaced })
    }
}

/// Thread-safe annotation store over a fixed set of target comments.
///
/// Records are keyed by (comment, annotator) with last-write-wins. When a
/// journal path is configured every accepted record is appended to it, and
/// reopening the store replays the journal.
pub struct AnnotationStore {
    state: RwLock<State>,
    journal: Option<(PathBuf, Mutex<File>)>,
}

impl AnnotationStore {
    pub fn new(comments: Vec<Comment>) -> Self {
        let index = comments
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.clone(), i))
            .collect();
        let label_counts = vec![0; comments.len()];
        AnnotationStore {
            state: RwLock::new(State {
                comments,
                index,
                label_counts,
                ..State::default()
            }),
            journal: None,
        }
    }

    /// Opens a store backed by an append-only JSONL journal of records.
    pub fn with_journal(comments: Vec<Comment>, path: &Path) -> Result<Self, AnnotationError> {
        let mut store = AnnotationStore::new(comments);
        if path.exists() {
            for record in read_records(path)? {
                store.state.get_mut().unwrap().insert(record)?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| AnnotationError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        store.journal = Some((path.to_path_buf(), Mutex::new(file)));
        Ok(store)
    }

    /// A comment this annotator has not labeled yet, preferring the comments
    /// with the fewest labels overall (ties resolved by target order).
    pub fn next_task(&self, annotator_id: &str) -> Result<Option<Comment>, AnnotationError> {
        if annotator_id.is_empty() {
            return Err(AnnotationError::EmptyAnnotator);
        }
        let mut state = self.state.write().unwrap();
        state.annotators.insert(annotator_id.to_string());
        let best = state
            .comments
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                !state
                    .records
                    .contains_key(&(c.id.clone(), annotator_id.to_string()))
            })
            .min_by_key(|(i, _)| (state.label_counts[*i], *i))
            .map(|(_, c)| c.clone());
        Ok(best)
    }

    pub fn record_label(&self, record: AnnotationRecord) -> Result<Ack, AnnotationError> {
        let mut state = self.state.write().unwrap();
        let line = serde_json::to_string(&record).expect("record serializes");
        let ack = state.insert(record)?;
        if let Some((path, file)) = &self.journal {
            let mut file = file.lock().unwrap();
            writeln!(file, "{line}")
                .and_then(|_| file.flush())
                .map_err(|source| AnnotationError::Io {
                    path: path.clone(),
                    source,
                })?;
        }
        Ok(ack)
    }

    /// All records, ordered by (comment_id, annotator_id).
    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.state.read().unwrap().records.values().cloned().collect()
    }

    pub fn annotators(&self) -> Vec<String> {
        self.state.read().unwrap().annotators.iter().cloned().collect()
    }

    pub fn comments(&self) -> Vec<Comment> {
        self.state.read().unwrap().comments.clone()
    }

    pub fn progress(&self) -> Progress {
        let state = self.state.read().unwrap();
        let mut per_annotator: BTreeMap<String, usize> =
            state.annotators.iter().map(|a| (a.clone(), 0)).collect();
        for (_, annotator) in state.records.keys() {
            *per_annotator.entry(annotator.clone()).or_default() += 1;
        }
        Progress {
            total: state.comments.len(),
            labeled: state.label_counts.iter().filter(|&&n| n > 0).count(),
            per_annotator,
        }
    }
}

pub fn read_records(path: &Path) -> Result<Vec<AnnotationRecord>, AnnotationError> {
    jsonl::read(path).map_err(|e| match e {
        LineError::Io(source) => AnnotationError::Io {
            path: path.to_path_buf(),
            source,
        },
        LineError::Parse { line, message } => AnnotationError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        },
    })
}
