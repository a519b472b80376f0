//! Cross-validation, AUROC and the model comparison tables.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entitylink::{build_entity_vocab, entity_features, EntityAnnotation};
use crate::labels::{Foundation, MoralLabel, PageStance, Stance};
use crate::models::{
    predict_relevance, train_polarity, train_presence, train_relevance, ModelConfig, ModelError, MoralExample,
    RelevanceExample, RelevanceVariant,
};
use crate::preprocess::{EncodedComment, TokenSequence};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("AUROC undefined with {positives} positive(s) and {negatives} negative(s)")]
    Degenerate { positives: usize, negatives: usize },
    #[error("score is NaN")]
    NanScore,
    #[error("cannot split {n} item(s) into {k} folds")]
    BadFolds { k: usize, n: usize },
    #[error("duplicate id {0:?} in dataset")]
    DuplicateId(String),
    #[error("id {0:?} is not covered by the fold plan")]
    Unplanned(String),
    #[error("fold {fold}: {source}")]
    Model {
        fold: usize,
        #[source]
        source: ModelError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half. Computed from midranks.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::NanScore);
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::Degenerate { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Assignment of every item to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub stratify_on: String,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments.get(id).copied()
    }

    pub fn fold_ids(&self, fold: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

/// Stratified k-fold split. Within each class the ids are sorted, shuffled
/// under `seed` and dealt round-robin; the dealing position carries over
/// between classes so fold sizes also stay within one of each other.
pub fn kfold_split<C: Ord>(items: &[(String, C)], k: usize, seed: u64, stratify_on: &str) -> Result<FoldPlan, EvalError> {
    if k < 2 || items.len() < k {
        return Err(EvalError::BadFolds { k, n: items.len() });
    }
    let mut by_class: BTreeMap<&C, Vec<&str>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for (id, class) in items {
        if !seen.insert(id.as_str()) {
            return Err(EvalError::DuplicateId(id.clone()));
        }
        by_class.entry(class).or_default().push(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = BTreeMap::new();
    let mut next = 0;
    for ids in by_class.values_mut() {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        for id in ids.iter() {
            assignments.insert(id.to_string(), next % k);
            next += 1;
        }
    }
    Ok(FoldPlan {
        k,
        seed,
        stratify_on: stratify_on.to_string(),
        assignments,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub target: String,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub defined_folds: usize,
    pub undefined_folds: usize,
}

/// Per-target AUROC across folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub k: usize,
    pub seed: u64,
    pub targets: Vec<String>,
    /// `per_fold[target][fold]`; `None` where the held-out fold had a single class.
    pub per_fold: Vec<Vec<Option<f64>>>,
    pub summary: Vec<TargetSummary>,
    /// Mean of the defined per-target means.
    pub macro_mean: Option<f64>,
    pub runtime_secs: f64,
}

impl MetricReport {
    pub fn from_folds(model: &str, plan: &FoldPlan, targets: Vec<String>, per_fold: Vec<Vec<Option<f64>>>, runtime_secs: f64) -> Self {
        let summary: Vec<TargetSummary> = targets
            .iter()
            .zip(&per_fold)
            .map(|(t, vals)| {
                let defined: Vec<f64> = vals.iter().flatten().copied().collect();
                let (mean, std) = mean_std(&defined).unzip();
                TargetSummary {
                    target: t.clone(),
                    mean,
                    std,
                    defined_folds: defined.len(),
                    undefined_folds: vals.len() - defined.len(),
                }
            })
            .collect();
        let means: Vec<f64> = summary.iter().filter_map(|s| s.mean).collect();
        MetricReport {
            model: model.to_string(),
            k: plan.k,
            seed: plan.seed,
            targets,
            per_fold,
            macro_mean: mean_std(&means).map(|(m, _)| m),
            summary,
            runtime_secs,
        }
    }

    pub fn summary_for(&self, target: &str) -> Option<&TargetSummary> {
        self.summary.iter().find(|s| s.target == target)
    }

    pub fn mean_for(&self, target: &str) -> Option<f64> {
        self.summary_for(target).and_then(|s| s.mean)
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, std))
}

/// Runs `train_and_score` once per fold and scores the held-out items.
///
/// `truth(item)` gives the binary label of each target and `train_and_score`
/// returns one score vector (same target order) per test item. Folds run on
/// up to `parallelism` threads; results do not depend on the thread count.
pub fn cross_validate<D, T, F>(
    model: &str,
    dataset: &[D],
    id: impl Fn(&D) -> &str,
    targets: Vec<String>,
    truth: T,
    plan: &FoldPlan,
    parallelism: usize,
    train_and_score: F,
) -> Result<MetricReport, EvalError>
where
    D: Sync,
    T: Fn(&D) -> Vec<bool>,
    F: Fn(usize, &[&D], &[&D]) -> Result<Vec<Vec<f64>>, ModelError> + Sync,
{
    let start = Instant::now();
    let mut folds: Vec<(Vec<&D>, Vec<&D>)> = (0..plan.k).map(|_| (Vec::new(), Vec::new())).collect();
    for item in dataset {
        let f = plan.fold_of(id(item)).ok_or_else(|| EvalError::Unplanned(id(item).to_string()))?;
        for (g, (train, test)) in folds.iter_mut().enumerate() {
            if g == f {
                test.push(item);
            } else {
                train.push(item);
            }
        }
    }
    let mut results: Vec<Option<Result<Vec<Vec<f64>>, ModelError>>> = (0..plan.k).map(|_| None).collect();
    let run = &train_and_score;
    for batch in (0..plan.k).collect::<Vec<_>>().chunks(parallelism.max(1)) {
        std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .iter()
                .map(|&f| {
                    let (train, test) = &folds[f];
                    (f, s.spawn(move || run(f, train, test)))
                })
                .collect();
            for (f, h) in handles {
                results[f] = Some(h.join().expect("fold thread panicked"));
            }
        });
    }
    let mut per_fold = vec![vec![None; plan.k]; targets.len()];
    for (f, res) in results.into_iter().enumerate() {
        let scores = res.unwrap().map_err(|source| EvalError::Model { fold: f, source })?;
        let test = &folds[f].1;
        let labels: Vec<Vec<bool>> = test.iter().map(|d| truth(d)).collect();
        for (t, slot) in per_fold.iter_mut().enumerate() {
            let s: Vec<f64> = scores.iter().map(|v| v[t]).collect();
            let l: Vec<bool> = labels.iter().map(|v| v[t]).collect();
            slot[f] = match auroc(&s, &l) {
                Ok(a) => Some(a),
                Err(EvalError::Degenerate { .. }) => None,
                Err(e) => return Err(e),
            };
        }
    }
    Ok(MetricReport::from_folds(model, plan, targets, per_fold, start.elapsed().as_secs_f64()))
}

// ---------------------------------------------------------------------------
// Relevance task

/// A gold-labeled comment with everything the relevance models and the
/// baseline consume. `entities` are already thresholded by confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceItem {
    pub id: String,
    pub tokens: TokenSequence,
    pub text: EncodedComment,
    pub entities: Vec<EntityAnnotation>,
    pub page: PageStance,
    pub stance: Stance,
}

pub fn stance_targets() -> Vec<String> {
    Stance::ALL.iter().map(|s| s.to_string()).collect()
}

fn stance_truth(item: &RelevanceItem) -> Vec<bool> {
    Stance::ALL.iter().map(|&s| s == item.stance).collect()
}

pub fn relevance_plan(items: &[RelevanceItem], k: usize, seed: u64) -> Result<FoldPlan, EvalError> {
    let keyed: Vec<(String, Stance)> = items.iter().map(|i| (i.id.clone(), i.stance)).collect();
    kfold_split(&keyed, k, seed, "stance")
}

/// Trains on `train` (entity vocabulary from the training items only) and scores `test`.
pub fn relevance_fold(config: &ModelConfig, variant: RelevanceVariant, train: &[&RelevanceItem], test: &[&RelevanceItem]) -> Result<Vec<Vec<f64>>, ModelError> {
    let vocab = build_entity_vocab(train.iter().map(|i| i.entities.as_slice()), config.entity_k);
    let example = |i: &RelevanceItem| RelevanceExample {
        id: i.id.clone(),
        text: i.text.clone(),
        entities: entity_features(&i.entities, &vocab),
        page: i.page,
        stance: i.stance,
    };
    let examples: Vec<RelevanceExample> = train.iter().map(|i| example(i)).collect();
    let model = train_relevance(config, &examples, variant)?;
    test.iter()
        .map(|i| {
            let p = predict_relevance(&model, &i.text, &entity_features(&i.entities, &vocab), i.page)?;
            Ok(Stance::ALL.iter().map(|&s| p.get(s)).collect())
        })
        .collect()
}

pub fn cross_validate_relevance(
    config: &ModelConfig,
    variant: RelevanceVariant,
    items: &[RelevanceItem],
    plan: &FoldPlan,
    parallelism: usize,
) -> Result<MetricReport, EvalError> {
    let name = match variant {
        RelevanceVariant::Full => "LSTM full",
        RelevanceVariant::TextOnly => "LSTM branch",
    };
    cross_validate(name, items, |i| &i.id, stance_targets(), stance_truth, plan, parallelism, |fold, train, test| {
        let cfg = fold_config(config, fold);
        relevance_fold(&cfg, variant, train, test)
    })
}

fn fold_config(config: &ModelConfig, fold: usize) -> ModelConfig {
    ModelConfig {
        seed: config.seed.wrapping_add(fold as u64),
        ..config.clone()
    }
}

/// Multinomial logistic regression over token counts.
#[derive(Debug, Clone, PartialEq)]
pub struct BowLogReg {
    vocab: HashMap<String, usize>,
    classes: usize,
    /// `classes × (vocab + 1)`; the last column is the bias.
    weights: Vec<f64>,
}

impl BowLogReg {
    const ITERATIONS: usize = 300;
    const LEARNING_RATE: f64 = 0.5;
    const L2: f64 = 1e-4;

    fn featurize(&self, tokens: &TokenSequence) -> Vec<(usize, f64)> {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in &tokens.tokens {
            if let Some(&i) = self.vocab.get(t) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        counts.into_iter().collect()
    }

    fn logits(&self, x: &[(usize, f64)]) -> Vec<f64> {
        let width = self.vocab.len() + 1;
        (0..self.classes)
            .map(|c| {
                let row = &self.weights[c * width..(c + 1) * width];
                row[width - 1] + x.iter().map(|&(i, v)| row[i] * v).sum::<f64>()
            })
            .collect()
    }

    /// Full-batch gradient descent on mean cross-entropy with a small L2 penalty.
    pub fn fit(docs: &[&TokenSequence], labels: &[usize], classes: usize) -> Self {
        let mut words: Vec<&str> = docs.iter().flat_map(|d| d.tokens.iter().map(String::as_str)).collect();
        words.sort_unstable();
        words.dedup();
        let vocab: HashMap<String, usize> = words.iter().enumerate().map(|(i, w)| (w.to_string(), i)).collect();
        let width = vocab.len() + 1;
        let mut model = BowLogReg {
            vocab,
            classes,
            weights: vec![0.0; classes * width],
        };
        let xs: Vec<Vec<(usize, f64)>> = docs.iter().map(|d| model.featurize(d)).collect();
        let n = docs.len().max(1) as f64;
        for _ in 0..Self::ITERATIONS {
            let mut grad: Vec<f64> = model.weights.iter().map(|w| Self::L2 * w).collect();
            for (x, &y) in xs.iter().zip(labels) {
                let p = crate::nn::softmax(&model.logits(x));
                for c in 0..classes {
                    let d = (p[c] - f64::from(u8::from(c == y))) / n;
                    let row = c * width;
                    grad[row + width - 1] += d;
                    for &(i, v) in x {
                        grad[row + i] += d * v;
                    }
                }
            }
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                *w -= Self::LEARNING_RATE * g;
            }
        }
        model
    }

    pub fn predict(&self, tokens: &TokenSequence) -> Vec<f64> {
        crate::nn::softmax(&self.logits(&self.featurize(tokens)))
    }
}

pub fn baseline_bow_logreg(items: &[RelevanceItem], plan: &FoldPlan) -> Result<MetricReport, EvalError> {
    cross_validate("Regression", items, |i| &i.id, stance_targets(), stance_truth, plan, 1, |_, train, test| {
        let docs: Vec<&TokenSequence> = train.iter().map(|i| &i.tokens).collect();
        let labels: Vec<usize> = train.iter().map(|i| i.stance.index()).collect();
        let model = BowLogReg::fit(&docs, &labels, Stance::ALL.len());
        Ok(test.iter().map(|i| model.predict(&i.tokens)).collect())
    })
}

/// The three relevance models evaluated on identical folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub plan: FoldPlan,
    pub baseline: MetricReport,
    pub text_only: MetricReport,
    pub full: MetricReport,
}

impl AblationReport {
    pub fn reports(&self) -> [&MetricReport; 3] {
        [&self.baseline, &self.text_only, &self.full]
    }

    pub fn to_csv(&self) -> String {
        comparison_csv(&self.reports())
    }
}

pub fn ablation_run(config: &ModelConfig, items: &[RelevanceItem], plan: &FoldPlan, parallelism: usize) -> Result<AblationReport, EvalError> {
    Ok(AblationReport {
        plan: plan.clone(),
        baseline: baseline_bow_logreg(items, plan)?,
        text_only: cross_validate_relevance(config, RelevanceVariant::TextOnly, items, plan, parallelism)?,
        full: cross_validate_relevance(config, RelevanceVariant::Full, items, plan, parallelism)?,
    })
}

// ---------------------------------------------------------------------------
// Moral tasks

pub fn presence_plan(items: &[MoralExample], foundation: Foundation, k: usize, seed: u64) -> Result<FoldPlan, EvalError> {
    let keyed: Vec<(String, bool)> = items.iter().map(|i| (i.id.clone(), i.has_foundation(foundation))).collect();
    kfold_split(&keyed, k, seed, &format!("{foundation} presence"))
}

pub fn polarity_plan(items: &[MoralExample], k: usize, seed: u64) -> Result<FoldPlan, EvalError> {
    let keyed: Vec<(String, bool)> = items.iter().map(|i| (i.id.clone(), !i.morals.is_empty())).collect();
    kfold_split(&keyed, k, seed, "any moral")
}

pub fn cross_validate_presence(
    config: &ModelConfig,
    items: &[MoralExample],
    foundation: Foundation,
    plan: &FoldPlan,
    parallelism: usize,
) -> Result<MetricReport, EvalError> {
    cross_validate(
        &format!("{foundation} presence"),
        items,
        |i| &i.id,
        vec![foundation.to_string()],
        |i| vec![i.has_foundation(foundation)],
        plan,
        parallelism,
        |fold, train, test| {
            let train: Vec<MoralExample> = train.iter().map(|&i| i.clone()).collect();
            let model = train_presence(&fold_config(config, fold), &train, foundation)?;
            test.iter().map(|i| Ok(vec![model.predict(&i.text)?])).collect()
        },
    )
}

pub fn cross_validate_polarity(config: &ModelConfig, items: &[MoralExample], plan: &FoldPlan, parallelism: usize) -> Result<MetricReport, EvalError> {
    cross_validate(
        "polarity",
        items,
        |i| &i.id,
        MoralLabel::all().map(|m| m.to_string()).collect(),
        |i| i.polarity_targets().iter().map(|&y| y > 0.5).collect(),
        plan,
        parallelism,
        |fold, train, test| {
            let train: Vec<MoralExample> = train.iter().map(|&i| i.clone()).collect();
            let model = train_polarity(&fold_config(config, fold), &train)?;
            test.iter().map(|i| model.predict(&i.text)).collect()
        },
    )
}

// ---------------------------------------------------------------------------
// Report rendering

pub fn format_cell(s: Option<&TargetSummary>) -> String {
    match s.and_then(|s| s.mean.zip(s.std)) {
        Some((m, sd)) => format!("{m:.3} ± {sd:.3}"),
        None => "undefined".to_string(),
    }
}

/// Rows are targets of the first report plus a macro row; one column per model.
pub fn comparison_csv(reports: &[&MetricReport]) -> String {
    let mut rows = vec![std::iter::once("target".to_string()).chain(reports.iter().map(|r| r.model.clone())).collect()];
    let targets = reports.first().map(|r| r.targets.clone()).unwrap_or_default();
    for t in &targets {
        rows.push(
            std::iter::once(t.clone())
                .chain(reports.iter().map(|r| format_cell(r.summary_for(t))))
                .collect(),
        );
    }
    rows.push(
        std::iter::once("macro".to_string())
            .chain(reports.iter().map(|r| r.macro_mean.map_or_else(|| "undefined".to_string(), |m| format!("{m:.3}"))))
            .collect(),
    );
    crate::table::csv_string(&rows)
}

/// Six foundation rows with presence, Virtue and Vice columns.
pub fn moral_table_csv(presence: &[MetricReport], polarity: &MetricReport) -> String {
    let mut rows = vec![["foundation", "presence", "Virtue", "Vice"].map(String::from).to_vec()];
    for f in Foundation::ALL {
        let p = presence.iter().find_map(|r| r.summary_for(f.as_str()));
        let cell = |pol| format_cell(polarity.summary_for(&MoralLabel::new(f, pol).to_string()));
        rows.push(vec![
            f.to_string(),
            format_cell(p),
            cell(crate::labels::Polarity::Virtue),
            cell(crate::labels::Polarity::Vice),
        ]);
    }
    crate::table::csv_string(&rows)
}

pub fn write_text(path: &Path, contents: &str) -> Result<(), EvalError> {
    std::fs::write(path, contents).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EvalError> {
    let json = serde_json::to_string_pretty(value).expect("reports serialize");
    write_text(path, &json)
}
