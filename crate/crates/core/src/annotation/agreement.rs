use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{cohen_kappa, AnnotationRecord, AnnotationStore};
use crate::labels::{Foundation, Stance};

/// Agreement along one labelling dimension, averaged over annotator pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionAgreement {
    /// Pair-averaged kappa weighted by shared-item count; `None` when no pair
    /// of annotators shares an item on this dimension.
    pub kappa: Option<f64>,
    pub pairs: usize,
    pub items: usize,
}

impl DimensionAgreement {
    fn from_pairs(pairs: &[(f64, usize)]) -> Self {
        let items: usize = pairs.iter().map(|(_, n)| n).sum();
        let kappa = (items > 0)
            .then(|| pairs.iter().map(|(k, n)| k * *n as f64).sum::<f64>() / items as f64);
        DimensionAgreement {
            kappa,
            pairs: pairs.len(),
            items,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub annotators: usize,
    /// Three-way stance agreement over all shared comments.
    pub stance: DimensionAgreement,
    /// Per-foundation presence agreement over shared comments both annotators
    /// considered relevant (only those carry moral labels).
    pub presence: BTreeMap<Foundation, DimensionAgreement>,
}

/// Pairwise Cohen's kappa for stance and for per-foundation presence.
pub fn agreement_report(store: &AnnotationStore) -> AgreementReport {
    report_from_records(&store.records())
}

pub(crate) fn report_from_records(records: &[AnnotationRecord]) -> AgreementReport {
    let mut by_annotator: BTreeMap<&str, HashMap<&str, &AnnotationRecord>> = BTreeMap::new();
    for r in records {
        by_annotator
            .entry(r.annotator_id.as_str())
            .or_default()
            .insert(r.comment_id.as_str(), r);
    }
    let annotators: Vec<&str> = by_annotator.keys().copied().collect();

    let mut stance_pairs = Vec::new();
    let mut presence_pairs: BTreeMap<Foundation, Vec<(f64, usize)>> = BTreeMap::new();
    for (i, a) in annotators.iter().enumerate() {
        for b in &annotators[i + 1..] {
            let (la, lb) = (&by_annotator[a], &by_annotator[b]);
            let mut shared: Vec<(&AnnotationRecord, &AnnotationRecord)> = la
                .iter()
                .filter_map(|(c, ra)| lb.get(c).map(|rb| (*ra, *rb)))
                .collect();
            if shared.is_empty() {
                continue;
            }
            shared.sort_by(|x, y| x.0.comment_id.cmp(&y.0.comment_id));

            let sa: Vec<Stance> = shared.iter().map(|(x, _)| x.stance).collect();
            let sb: Vec<Stance> = shared.iter().map(|(_, y)| y.stance).collect();
            let k = cohen_kappa(&sa, &sb).expect("non-empty equal-length sequences");
            stance_pairs.push((k, shared.len()));

            let relevant: Vec<_> = shared
                .iter()
                .filter(|(x, y)| x.stance.is_relevant() && y.stance.is_relevant())
                .collect();
            if relevant.is_empty() {
                continue;
            }
            for f in Foundation::ALL {
                let has = |r: &AnnotationRecord| r.morals.iter().any(|m| m.foundation == f);
                let pa: Vec<bool> = relevant.iter().map(|(x, _)| has(x)).collect();
                let pb: Vec<bool> = relevant.iter().map(|(_, y)| has(y)).collect();
                let k = cohen_kappa(&pa, &pb).expect("non-empty equal-length sequences");
                presence_pairs.entry(f).or_default().push((k, relevant.len()));
            }
        }
    }

    AgreementReport {
        annotators: annotators.len(),
        stance: DimensionAgreement::from_pairs(&stance_pairs),
        presence: Foundation::ALL
            .into_iter()
            .map(|f| {
                let pairs = presence_pairs.get(&f).map(Vec::as_slice).unwrap_or(&[]);
                (f, DimensionAgreement::from_pairs(pairs))
            })
            .collect(),
    }
}
