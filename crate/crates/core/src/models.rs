//! The three classifier families: stance relevance (Pro/Anti/NR), moral
//! presence (one model per foundation) and moral polarity (12 binary targets).

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::GoldLabel;
use crate::entitylink::{EntityFeatures, EntityVocab};
use crate::labels::{Foundation, MoralLabel, PageStance, Stance};
use crate::nn::{self, Adam, Architecture, Head, Input, Network, Target, WeightsError};
use crate::preprocess::EncodedComment;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("loss became non-finite ({loss}) at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("{0}")]
    SingleClass(String),
    #[error("not enough examples per class: {}", format_deficits(.0))]
    InsufficientClass(Vec<ClassDeficit>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Weights {
        path: PathBuf,
        #[source]
        source: WeightsError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassDeficit {
    pub class: String,
    pub available: usize,
    pub required: usize,
}

fn format_deficits(d: &[ClassDeficit]) -> String {
    d.iter()
        .map(|c| format!("{} has {} of {}", c.class, c.available, c.required))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Hyperparameters shared by all model families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_len: usize,
    pub seed: u64,
    #[serde(rename = "entity_K")]
    pub entity_k: usize,
    /// Feed the page-stance one-hot into the relevance model.
    pub page_branch: bool,
    /// Global gradient-norm clip for Adam; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_size: 64,
            dropout_rate: 0.5,
            epochs: 10,
            learning_rate: 1e-3,
            batch_size: 32,
            max_len: crate::preprocess::DEFAULT_MAX_LEN,
            seed: 7,
            entity_k: crate::entitylink::DEFAULT_ENTITY_K,
            page_branch: true,
            clip_norm: Some(5.0),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.hidden_size == 0 {
            return bad("hidden_size must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_len == 0 {
            return bad("max_len must be positive");
        }
        if self.entity_k == 0 {
            return bad("entity_K must be positive");
        }
        if matches!(self.clip_norm, Some(c) if c.is_nan() || c <= 0.0) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }
}

/// Loss curve of one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean training loss per epoch (with dropout active).
    pub epoch_losses: Vec<f64>,
    /// Final per-target loss without dropout (sigmoid heads only); `None` for untrainable targets.
    pub target_losses: Vec<Option<f64>>,
}

struct Fit<'a> {
    ids: Vec<&'a str>,
    inputs: Vec<Input<'a>>,
    targets: Vec<Target>,
    weights: Vec<f64>,
}

/// Mini-batch training with a data order that depends only on example ids and the seed.
fn fit(net: &mut Network, data: Fit, config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<TrainLog, ModelError> {
    let mut order: Vec<usize> = (0..data.inputs.len()).collect();
    order.sort_by(|&a, &b| data.ids[a].cmp(data.ids[b]));
    let mut adam = Adam::new(config.learning_rate, config.clip_norm);
    let mut log = TrainLog::default();
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(Input, &Target)> = chunk.iter().map(|&i| (data.inputs[i], &data.targets[i])).collect();
            let (loss, grad) = net
                .loss_and_grad(&batch, &data.weights, Some((config.dropout_rate, &mut *rng)))
                .map_err(ModelError::Dimension)?;
            if !loss.is_finite() {
                log::error!("non-finite loss at epoch {epoch}, batch {b}; epoch losses so far {:?}", log.epoch_losses);
                return Err(ModelError::NonFiniteLoss { epoch, batch: b, loss });
            }
            epoch_loss += loss * chunk.len() as f64;
            adam.step(net, &grad);
        }
        let mean = epoch_loss / order.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.5}");
        log.epoch_losses.push(mean);
    }
    if let Head::Sigmoid(n) = net.arch.head {
        let mut per_target = vec![None; n];
        for j in 0..n {
            if data.weights[j] == 0.0 {
                continue;
            }
            let mut w = vec![0.0; n];
            w[j] = 1.0;
            let batch: Vec<(Input, &Target)> = data.inputs.iter().copied().zip(&data.targets).collect();
            per_target[j] = Some(net.loss(&batch, &w).map_err(ModelError::Dimension)?);
        }
        log::info!("final per-target training loss: {per_target:?}");
        log.target_losses = per_target;
    }
    Ok(log)
}

fn check_text_dims<'a>(texts: impl Iterator<Item = &'a EncodedComment>, config: &ModelConfig) -> Result<usize, ModelError> {
    let mut dim = None;
    for t in texts {
        if t.max_len != config.max_len {
            return Err(ModelError::Dimension(format!(
                "encoded comment has max_len {}, config says {}",
                t.max_len, config.max_len
            )));
        }
        match dim {
            None => dim = Some(t.dim),
            Some(d) if d != t.dim => {
                return Err(ModelError::Dimension(format!("mixed embedding dimensions {d} and {}", t.dim)));
            }
            _ => {}
        }
    }
    dim.ok_or(ModelError::EmptyDataset)
}

// ---------------------------------------------------------------------------
// Relevance

/// One training or evaluation example for the stance model.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceExample {
    pub id: String,
    pub text: EncodedComment,
    pub entities: EntityFeatures,
    pub page: PageStance,
    pub stance: Stance,
}

/// Which inputs the relevance network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceVariant {
    /// Text, entity and (if enabled in the config) page-stance branches.
    Full,
    /// The recurrent text branch alone.
    TextOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StanceProbs {
    #[serde(rename = "Pro")]
    pub pro: f64,
    #[serde(rename = "Anti")]
    pub anti: f64,
    #[serde(rename = "NonRelevant")]
    pub non_relevant: f64,
}

impl StanceProbs {
    pub fn from_slice(p: &[f64]) -> Self {
        StanceProbs {
            pro: p[0],
            anti: p[1],
            non_relevant: p[2],
        }
    }

    pub fn get(&self, s: Stance) -> f64 {
        match s {
            Stance::Pro => self.pro,
            Stance::Anti => self.anti,
            Stance::NonRelevant => self.non_relevant,
        }
    }

    /// Most probable stance; ties go to the earlier class in Pro, Anti, NR order.
    pub fn argmax(&self) -> Stance {
        let mut best = Stance::Pro;
        for s in Stance::ALL {
            if self.get(s) > self.get(best) {
                best = s;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceModel {
    pub config: ModelConfig,
    pub variant: RelevanceVariant,
    pub network: Network,
    pub log: TrainLog,
    /// Entity vocabulary the features were built with, when known.
    pub entity_vocab: Option<EntityVocab>,
}

fn relevance_input<'a>(variant: RelevanceVariant, config: &ModelConfig, text: &'a EncodedComment, entities: &'a EntityFeatures, page: PageStance) -> Input<'a> {
    match variant {
        RelevanceVariant::Full => Input {
            text,
            entities: Some(&entities.vector),
            page: config.page_branch.then_some(page),
        },
        RelevanceVariant::TextOnly => Input {
            text,
            entities: None,
            page: None,
        },
    }
}

pub fn train_relevance(config: &ModelConfig, dataset: &[RelevanceExample], variant: RelevanceVariant) -> Result<RelevanceModel, ModelError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let dim = check_text_dims(dataset.iter().map(|e| &e.text), config)?;
    if let Some(bad) = dataset.iter().find(|e| e.entities.vector.len() != config.entity_k) {
        return Err(ModelError::Dimension(format!(
            "entity features of {:?} have length {}, config entity_K is {}",
            bad.id,
            bad.entities.vector.len(),
            config.entity_k
        )));
    }
    let mut arch = Architecture::text_only(dim, config.hidden_size, Head::Softmax(3));
    if variant == RelevanceVariant::Full {
        arch = arch.with_branches(Some(config.entity_k), config.page_branch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut network = Network::new(arch, &mut rng);
    let data = Fit {
        ids: dataset.iter().map(|e| e.id.as_str()).collect(),
        inputs: dataset
            .iter()
            .map(|e| relevance_input(variant, config, &e.text, &e.entities, e.page))
            .collect(),
        targets: dataset.iter().map(|e| Target::Class(e.stance.index())).collect(),
        weights: Vec::new(),
    };
    let log = fit(&mut network, data, config, &mut rng)?;
    Ok(RelevanceModel {
        config: config.clone(),
        variant,
        network,
        log,
        entity_vocab: None,
    })
}

pub fn predict_relevance(
    model: &RelevanceModel,
    encoded: &EncodedComment,
    entity_features: &EntityFeatures,
    page_stance: PageStance,
) -> Result<StanceProbs, ModelError> {
    let input = relevance_input(model.variant, &model.config, encoded, entity_features, page_stance);
    let p = model.network.predict(&input).map_err(ModelError::Dimension)?;
    Ok(StanceProbs::from_slice(&p))
}

/// Draws exactly `per_class` gold labels of each stance, uniformly without
/// replacement. The result depends only on the label set and `seed`.
pub fn balanced_sample(gold: &[GoldLabel], per_class: usize, seed: u64) -> Result<Vec<GoldLabel>, ModelError> {
    let mut by_class: BTreeMap<Stance, Vec<&GoldLabel>> = Stance::ALL.iter().map(|&s| (s, Vec::new())).collect();
    for g in gold {
        by_class.get_mut(&g.stance).unwrap().push(g);
    }
    let deficits: Vec<ClassDeficit> = by_class
        .iter()
        .filter(|(_, v)| v.len() < per_class)
        .map(|(s, v)| ClassDeficit {
            class: s.to_string(),
            available: v.len(),
            required: per_class,
        })
        .collect();
    if !deficits.is_empty() {
        return Err(ModelError::InsufficientClass(deficits));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * by_class.len());
    for (_, mut items) in by_class {
        items.sort_by(|a, b| a.comment_id.cmp(&b.comment_id));
        let mut picked: Vec<&GoldLabel> = items.choose_multiple(&mut rng, per_class).copied().collect();
        picked.sort_by(|a, b| a.comment_id.cmp(&b.comment_id));
        out.extend(picked.into_iter().cloned());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Moral presence and polarity

/// A relevant (Pro/Anti) gold comment with its moral labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MoralExample {
    pub id: String,
    pub text: EncodedComment,
    pub morals: BTreeSet<MoralLabel>,
}

impl MoralExample {
    pub fn has_foundation(&self, f: Foundation) -> bool {
        self.morals.iter().any(|m| m.foundation == f)
    }

    /// 12-dimensional 0/1 indicator over [`MoralLabel::target_index`].
    pub fn polarity_targets(&self) -> Vec<f64> {
        let mut y = vec![0.0; MoralLabel::COUNT];
        for m in &self.morals {
            y[m.target_index()] = 1.0;
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresenceModel {
    pub foundation: Foundation,
    pub config: ModelConfig,
    pub network: Network,
    pub log: TrainLog,
}

impl PresenceModel {
    pub fn predict(&self, encoded: &EncodedComment) -> Result<f64, ModelError> {
        let p = self
            .network
            .predict(&Input {
                text: encoded,
                entities: None,
                page: None,
            })
            .map_err(ModelError::Dimension)?;
        Ok(p[0])
    }
}

/// Positives are comments labeled with `foundation` in either polarity.
pub fn train_presence(config: &ModelConfig, dataset: &[MoralExample], foundation: Foundation) -> Result<PresenceModel, ModelError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let positives = dataset.iter().filter(|e| e.has_foundation(foundation)).count();
    if positives == 0 || positives == dataset.len() {
        return Err(ModelError::SingleClass(format!(
            "{foundation} presence has {positives} positive(s) among {} examples",
            dataset.len()
        )));
    }
    let dim = check_text_dims(dataset.iter().map(|e| &e.text), config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut network = Network::new(Architecture::text_only(dim, config.hidden_size, Head::Sigmoid(1)), &mut rng);
    let data = Fit {
        ids: dataset.iter().map(|e| e.id.as_str()).collect(),
        inputs: dataset
            .iter()
            .map(|e| Input {
                text: &e.text,
                entities: None,
                page: None,
            })
            .collect(),
        targets: dataset
            .iter()
            .map(|e| Target::Binary(vec![f64::from(u8::from(e.has_foundation(foundation)))]))
            .collect(),
        weights: vec![1.0],
    };
    let log = fit(&mut network, data, config, &mut rng)?;
    Ok(PresenceModel {
        foundation,
        config: config.clone(),
        network,
        log,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarityModel {
    pub config: ModelConfig,
    pub network: Network,
    pub log: TrainLog,
    /// Targets without both positive and negative examples; excluded from the loss.
    pub untrainable: Vec<MoralLabel>,
    /// The untrainable targets that every training example carried.
    pub saturated: Vec<MoralLabel>,
}

impl PolarityModel {
    /// Probabilities indexed by [`MoralLabel::target_index`]. Untrainable
    /// targets get their training frequency (0, or 1 when saturated).
    pub fn predict(&self, encoded: &EncodedComment) -> Result<Vec<f64>, ModelError> {
        let mut p = self
            .network
            .predict(&Input {
                text: encoded,
                entities: None,
                page: None,
            })
            .map_err(ModelError::Dimension)?;
        for m in &self.untrainable {
            p[m.target_index()] = if self.saturated.contains(m) { 1.0 } else { 0.0 };
        }
        Ok(p)
    }
}

pub fn train_polarity(config: &ModelConfig, dataset: &[MoralExample]) -> Result<PolarityModel, ModelError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let dim = check_text_dims(dataset.iter().map(|e| &e.text), config)?;
    let targets: Vec<Vec<f64>> = dataset.iter().map(MoralExample::polarity_targets).collect();
    let mut weights = vec![1.0; MoralLabel::COUNT];
    let mut untrainable = Vec::new();
    let mut saturated = Vec::new();
    for (j, w) in weights.iter_mut().enumerate() {
        let pos = targets.iter().filter(|y| y[j] > 0.5).count();
        if pos == 0 || pos == dataset.len() {
            *w = 0.0;
            let m = MoralLabel::from_target_index(j).unwrap();
            untrainable.push(m);
            if pos > 0 {
                saturated.push(m);
            }
        }
    }
    if !untrainable.is_empty() {
        log::warn!(
            "untrainable polarity targets: {}",
            untrainable.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut network = Network::new(
        Architecture::text_only(dim, config.hidden_size, Head::Sigmoid(MoralLabel::COUNT)),
        &mut rng,
    );
    let log = if untrainable.len() == MoralLabel::COUNT {
        TrainLog::default()
    } else {
        let data = Fit {
            ids: dataset.iter().map(|e| e.id.as_str()).collect(),
            inputs: dataset
                .iter()
                .map(|e| Input {
                    text: &e.text,
                    entities: None,
                    page: None,
                })
                .collect(),
            targets: targets.into_iter().map(Target::Binary).collect(),
            weights,
        };
        fit(&mut network, data, config, &mut rng)?
    };
    Ok(PolarityModel {
        config: config.clone(),
        network,
        log,
        untrainable,
        saturated,
    })
}

// ---------------------------------------------------------------------------
// Persistence

/// `config.json` of a saved model: every [`ModelConfig`] field plus model metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SavedConfig {
    kind: String,
    #[serde(flatten)]
    config: ModelConfig,
    architecture: Architecture,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variant: Option<RelevanceVariant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    foundation: Option<Foundation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    untrainable: Vec<MoralLabel>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    saturated: Vec<MoralLabel>,
    log: TrainLog,
}

const CONFIG_FILE: &str = "config.json";
const WEIGHTS_FILE: &str = "weights.bin";
const VOCAB_FILE: &str = "entity_vocab.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ModelError> {
    let file = File::create(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::to_writer_pretty(BufWriter::new(file), value).map_err(|source| ModelError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ModelError> {
    let file = File::open(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| ModelError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn save(dir: &Path, meta: &SavedConfig, net: &Network) -> Result<(), ModelError> {
    std::fs::create_dir_all(dir).map_err(|source| ModelError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_json(&dir.join(CONFIG_FILE), meta)?;
    let path = dir.join(WEIGHTS_FILE);
    let file = File::create(&path).map_err(|source| ModelError::Io {
        path: path.clone(),
        source,
    })?;
    nn::write_weights(net, BufWriter::new(file)).map_err(|source| ModelError::Io { path, source })
}

fn load(dir: &Path, kind: &str) -> Result<(SavedConfig, Network), ModelError> {
    let meta: SavedConfig = read_json(&dir.join(CONFIG_FILE))?;
    if meta.kind != kind {
        return Err(ModelError::Config(format!("{} holds a {} model, not {kind}", dir.display(), meta.kind)));
    }
    meta.config.validate()?;
    let mut net = Network::zeros(meta.architecture);
    let path = dir.join(WEIGHTS_FILE);
    let file = File::open(&path).map_err(|source| ModelError::Io {
        path: path.clone(),
        source,
    })?;
    nn::read_weights(&mut net, BufReader::new(file)).map_err(|source| ModelError::Weights { path, source })?;
    Ok((meta, net))
}

impl RelevanceModel {
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        let meta = SavedConfig {
            kind: "relevance".into(),
            config: self.config.clone(),
            architecture: self.network.arch,
            variant: Some(self.variant),
            foundation: None,
            untrainable: Vec::new(),
            saturated: Vec::new(),
            log: self.log.clone(),
        };
        save(dir, &meta, &self.network)?;
        if let Some(vocab) = &self.entity_vocab {
            write_json(&dir.join(VOCAB_FILE), vocab)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let (meta, network) = load(dir, "relevance")?;
        let vocab_path = dir.join(VOCAB_FILE);
        let entity_vocab = if vocab_path.exists() {
            let v: EntityVocab = read_json(&vocab_path)?;
            Some(v.reindexed())
        } else {
            None
        };
        if let (Some(v), Some((k, _))) = (&entity_vocab, network.arch.entity) {
            if v.capacity != k {
                return Err(ModelError::Dimension(format!("entity vocab capacity {} but model expects {k}", v.capacity)));
            }
        }
        Ok(RelevanceModel {
            config: meta.config,
            variant: meta.variant.unwrap_or(RelevanceVariant::Full),
            network,
            log: meta.log,
            entity_vocab,
        })
    }
}

impl PresenceModel {
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        let meta = SavedConfig {
            kind: "presence".into(),
            config: self.config.clone(),
            architecture: self.network.arch,
            variant: None,
            foundation: Some(self.foundation),
            untrainable: Vec::new(),
            saturated: Vec::new(),
            log: self.log.clone(),
        };
        save(dir, &meta, &self.network)
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let (meta, network) = load(dir, "presence")?;
        let foundation = meta
            .foundation
            .ok_or_else(|| ModelError::Config("presence model without a foundation".into()))?;
        Ok(PresenceModel {
            foundation,
            config: meta.config,
            network,
            log: meta.log,
        })
    }
}

impl PolarityModel {
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        let meta = SavedConfig {
            kind: "polarity".into(),
            config: self.config.clone(),
            architecture: self.network.arch,
            variant: None,
            foundation: None,
            untrainable: self.untrainable.clone(),
            saturated: self.saturated.clone(),
            log: self.log.clone(),
        };
        save(dir, &meta, &self.network)
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let (meta, network) = load(dir, "polarity")?;
        Ok(PolarityModel {
            config: meta.config,
            network,
            log: meta.log,
            untrainable: meta.untrainable,
            saturated: meta.saturated,
        })
    }
}
