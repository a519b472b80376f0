use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnnotationError, AnnotationRecord, AnnotationStore};
use crate::jsonl::{self, LineError};
use crate::labels::{MoralLabel, Stance};

/// Aggregated training target for one comment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub comment_id: String,
    pub stance: Stance,
    pub morals: BTreeSet<MoralLabel>,
    /// Number of annotators whose records contributed.
    pub support: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldReport {
    pub gold: Vec<GoldLabel>,
    /// Comments without a strict stance majority.
    pub ties: Vec<String>,
}

/// Majority aggregation: the stance needs a strict majority (ties are
/// excluded and reported), and a moral label is kept when at least half of the
/// comment's annotators marked it. Non-relevant gold labels carry no morals.
pub fn aggregate_gold(store: &AnnotationStore) -> GoldReport {
    aggregate_records(&store.records())
}

pub(crate) fn aggregate_records(records: &[AnnotationRecord]) -> GoldReport {
    let mut by_comment: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in records {
        by_comment.entry(r.comment_id.as_str()).or_default().push(r);
    }
    let mut report = GoldReport::default();
    for (comment_id, recs) in by_comment {
        let n = recs.len();
        let mut stance_votes: BTreeMap<Stance, usize> = BTreeMap::new();
        let mut moral_votes: BTreeMap<MoralLabel, usize> = BTreeMap::new();
        for r in &recs {
            *stance_votes.entry(r.stance).or_default() += 1;
            for m in &r.morals {
                *moral_votes.entry(*m).or_default() += 1;
            }
        }
        let Some((&stance, _)) = stance_votes.iter().find(|(_, &v)| 2 * v > n) else {
            report.ties.push(comment_id.to_string());
            continue;
        };
        let morals = if stance.is_relevant() {
            moral_votes
                .into_iter()
                .filter(|(_, v)| 2 * v >= n)
                .map(|(m, _)| m)
                .collect()
        } else {
            BTreeSet::new()
        };
        report.gold.push(GoldLabel {
            comment_id: comment_id.to_string(),
            stance,
            morals,
            support: n,
        });
    }
    report
}

/// Writes the aggregated gold labels as JSONL and returns them.
pub fn export_gold(store: &AnnotationStore, path: &Path) -> Result<GoldReport, AnnotationError> {
    let report = aggregate_gold(store);
    jsonl::write(path, &report.gold).map_err(|source| AnnotationError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(report)
}

pub fn import_gold(path: &Path) -> Result<Vec<GoldLabel>, AnnotationError> {
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
