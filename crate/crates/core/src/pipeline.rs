//! Glue between stored artifacts (corpus, gold labels, link results, model
//! bundles) and the model and evaluation code.

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{PolarityProbs, PredictionRecord};
use crate::annotation::GoldLabel;
use crate::corpus::Corpus;
use crate::entitylink::{entity_features, filter_by_rho, EntityAnnotation, EntityFeatures, EntityVocab};
use crate::eval::RelevanceItem;
use crate::jsonl::{self, LineError};
use crate::labels::{Foundation, MoralLabel, PageStance, Polarity};
use crate::models::{predict_relevance, ModelError, MoralExample, PolarityModel, PresenceModel, RelevanceModel, RelevanceVariant};
use crate::preprocess::{encode, EmbeddingTable, EncodedComment, TokenSequence, Tokenizer};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("gold label refers to unknown comment {0:?}")]
    UnknownComment(String),
    #[error("comment {comment} refers to unknown page {page}")]
    UnknownPage { comment: String, page: String },
    #[error("model bundle at {0} has no relevance model vocabulary for entity features")]
    MissingVocab(PathBuf),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

/// Tokenizer, embedding table and input limits used for every comment.
pub struct Featurizer {
    pub tokenizer: Tokenizer,
    pub table: EmbeddingTable,
    pub max_len: usize,
    pub rho_min: f64,
}

impl Featurizer {
    pub fn text(&self, text: &str) -> (TokenSequence, EncodedComment) {
        let tokens = self.tokenizer.tokenize(text);
        let encoded = encode(&tokens, &self.table, self.max_len);
        (tokens, encoded)
    }
}

/// Unthresholded linker output for one comment, as written by the `link` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub comment_id: String,
    pub annotations: Vec<EntityAnnotation>,
}

pub fn read_links(path: &Path) -> Result<HashMap<String, Vec<EntityAnnotation>>, PipelineError> {
    let records: Vec<LinkRecord> = jsonl::read(path).map_err(|e| line_error(path, e))?;
    Ok(records.into_iter().map(|r| (r.comment_id, r.annotations)).collect())
}

pub fn write_links(path: &Path, records: &[LinkRecord]) -> Result<(), PipelineError> {
    jsonl::write(path, records).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn line_error(path: &Path, e: LineError) -> PipelineError {
    match e {
        LineError::Io(source) => PipelineError::Io {
            path: path.to_path_buf(),
            source,
        },
        LineError::Parse { line, message } => PipelineError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        },
    }
}

fn page_of(corpus: &Corpus, comment_id: &str, page_id: &str) -> Result<PageStance, PipelineError> {
    corpus
        .page(page_id)
        .map(|p| p.stance)
        .ok_or_else(|| PipelineError::UnknownPage {
            comment: comment_id.to_string(),
            page: page_id.to_string(),
        })
}

/// Joins gold labels with their comments. Comments without link results get no entities.
pub fn relevance_items(
    featurizer: &Featurizer,
    corpus: &Corpus,
    gold: &[GoldLabel],
    links: &HashMap<String, Vec<EntityAnnotation>>,
) -> Result<Vec<RelevanceItem>, PipelineError> {
    let index = corpus.comment_index();
    gold.iter()
        .map(|g| {
            let c = index
                .get(g.comment_id.as_str())
                .ok_or_else(|| PipelineError::UnknownComment(g.comment_id.clone()))?;
            let (tokens, text) = featurizer.text(&c.text);
            let entities = links
                .get(&c.id)
                .map(|a| filter_by_rho(a, featurizer.rho_min))
                .unwrap_or_default();
            Ok(RelevanceItem {
                id: c.id.clone(),
                tokens,
                text,
                entities,
                page: page_of(corpus, &c.id, &c.page_id)?,
                stance: g.stance,
            })
        })
        .collect()
}

/// Moral-model examples from the relevant (Pro/Anti) gold labels.
pub fn moral_examples(featurizer: &Featurizer, corpus: &Corpus, gold: &[GoldLabel]) -> Result<Vec<MoralExample>, PipelineError> {
    let index = corpus.comment_index();
    gold.iter()
        .filter(|g| g.stance.is_relevant())
        .map(|g| {
            let c = index
                .get(g.comment_id.as_str())
                .ok_or_else(|| PipelineError::UnknownComment(g.comment_id.clone()))?;
            Ok(MoralExample {
                id: c.id.clone(),
                text: featurizer.text(&c.text).1,
                morals: g.morals.clone(),
            })
        })
        .collect()
}

/// Relevance model, per-foundation presence models and the polarity model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub relevance: RelevanceModel,
    pub presence: BTreeMap<Foundation, PresenceModel>,
    pub polarity: PolarityModel,
}

pub fn relevance_dir(bundle: &Path) -> PathBuf {
    bundle.join("relevance")
}

pub fn presence_dir(bundle: &Path, f: Foundation) -> PathBuf {
    bundle.join("presence").join(f.as_str())
}

pub fn polarity_dir(bundle: &Path) -> PathBuf {
    bundle.join("polarity")
}

impl ModelBundle {
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        self.relevance.save(&relevance_dir(dir))?;
        for (f, m) in &self.presence {
            m.save(&presence_dir(dir, *f))?;
        }
        self.polarity.save(&polarity_dir(dir))?;
        Ok(())
    }

    /// Presence models are optional per foundation; the other two are required.
    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let relevance = RelevanceModel::load(&relevance_dir(dir))?;
        if relevance.variant == RelevanceVariant::Full && relevance.entity_vocab.is_none() {
            return Err(PipelineError::MissingVocab(dir.to_path_buf()));
        }
        let mut presence = BTreeMap::new();
        for f in Foundation::ALL {
            let p = presence_dir(dir, f);
            if p.exists() {
                presence.insert(f, PresenceModel::load(&p)?);
            }
        }
        let polarity = PolarityModel::load(&polarity_dir(dir))?;
        Ok(ModelBundle {
            relevance,
            presence,
            polarity,
        })
    }

    fn entity_features(&self, annotations: &[EntityAnnotation], rho_min: f64) -> EntityFeatures {
        match &self.relevance.entity_vocab {
            Some(v) => entity_features(&filter_by_rho(annotations, rho_min), v),
            None => entity_features(&[], &EntityVocab::from_ids(self.relevance.config.entity_k, Vec::new())),
        }
    }

    /// Scores every comment of `corpus` with all models, in corpus order.
    pub fn predict_corpus(
        &self,
        featurizer: &Featurizer,
        corpus: &Corpus,
        links: &HashMap<String, Vec<EntityAnnotation>>,
    ) -> Result<Vec<PredictionRecord>, PipelineError> {
        corpus
            .comments
            .iter()
            .map(|c| {
                let (_, text) = featurizer.text(&c.text);
                let page = page_of(corpus, &c.id, &c.page_id)?;
                let features = self.entity_features(links.get(&c.id).map_or(&[][..], Vec::as_slice), featurizer.rho_min);
                let stance_probs = predict_relevance(&self.relevance, &text, &features, page)?;
                let mut presence = BTreeMap::new();
                for (f, m) in &self.presence {
                    presence.insert(*f, m.predict(&text)?);
                }
                let pol = self.polarity.predict(&text)?;
                let polarity = Foundation::ALL
                    .iter()
                    .map(|&f| {
                        let at = |p| pol[MoralLabel::new(f, p).target_index()];
                        (
                            f,
                            PolarityProbs {
                                virtue: at(Polarity::Virtue),
                                vice: at(Polarity::Vice),
                            },
                        )
                    })
                    .collect();
                Ok(PredictionRecord {
                    comment_id: c.id.clone(),
                    created_at: c.created_at,
                    page_stance: page,
                    stance_probs,
                    presence,
                    polarity,
                })
            })
            .collect()
    }
}
