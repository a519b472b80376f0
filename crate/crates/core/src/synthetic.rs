//! Seeded synthetic datasets with a known planted signal, used by tests,
//! the acceptance suite and the `demo` command.

use std::collections::{BTreeSet, HashMap};
use std::io;
use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analytics::{PolarityProbs, PredictionRecord};
use crate::annotation::GoldLabel;
use crate::corpus::{Comment, Corpus, Page};
use crate::entitylink::{EntityAnnotation, EntityVocab};
use crate::eval::RelevanceItem;
use crate::labels::{Foundation, MoralLabel, PageStance, Polarity, Stance};
use crate::models::{MoralExample, StanceProbs};
use crate::pipeline::{self, Featurizer, LinkRecord};
use crate::preprocess::{EmbeddingTable, Tokenizer};

const FILLER: &[&str] = &[
    "today", "doctor", "child", "school", "news", "people", "health", "read", "think", "year", "week", "family", "friend",
    "story", "share", "page", "city", "time", "world", "parent", "nurse", "study", "report", "data", "town", "local",
    "video", "photo", "link", "question", "answer", "life", "work", "money", "law", "state", "mother", "father", "baby",
    "clinic", "hospital", "office", "book", "paper", "article", "group", "community", "country", "choice", "risk",
];

/// One keyword per stance in [`Stance::ALL`] order.
pub const STANCE_KEYWORDS: [&str; 3] = ["immunize", "poison", "recipe"];
pub const LIBERTY_VIRTUE_KEYWORD: &str = "libertas";
pub const AUTHORITY_VICE_KEYWORD: &str = "tyrannus";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticComment {
    pub id: String,
    pub text: String,
    pub page: PageStance,
    pub stance: Stance,
    pub morals: BTreeSet<MoralLabel>,
    /// Unthresholded linker output.
    pub entities: Vec<EntityAnnotation>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub comments: Vec<SyntheticComment>,
    pub embeddings: EmbeddingTable,
}

fn filler<R: Rng>(rng: &mut R, lo: usize, hi: usize) -> Vec<String> {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| FILLER.choose(rng).unwrap().to_string()).collect()
}

fn insert_at_random<R: Rng>(rng: &mut R, words: &mut Vec<String>, w: &str) {
    let at = rng.gen_range(0..=words.len());
    words.insert(at, w.to_string());
}

fn timestamp<R: Rng>(rng: &mut R) -> DateTime<Utc> {
    let start = Utc.with_ymd_and_hms(2012, 1, 1, 0, 0, 0).unwrap();
    start + Duration::seconds(rng.gen_range(0..(7 * 365 + 180) * 86_400))
}

fn annotation(id: u64, rho: f64) -> EntityAnnotation {
    EntityAnnotation {
        spot: format!("entity{id}"),
        entity_id: id,
        title: format!("Entity {id}"),
        rho,
    }
}

/// Shared, class-independent entities (ids 1..=20).
fn noise_entities<R: Rng>(rng: &mut R) -> Vec<EntityAnnotation> {
    (0..rng.gen_range(0..=2))
        .map(|_| annotation(rng.gen_range(1..=20), rng.gen_range(0.0..1.0)))
        .collect()
}

/// Random vector per distinct token the default tokenizer produces on `texts`.
fn embeddings_for<'a, R: Rng>(rng: &mut R, texts: impl Iterator<Item = &'a str>, dim: usize) -> EmbeddingTable {
    let tokenizer = Tokenizer::default();
    let mut tokens: Vec<String> = texts.flat_map(|t| tokenizer.tokenize(t).tokens).collect();
    tokens.sort_unstable();
    tokens.dedup();
    let mut table = EmbeddingTable::new(dim);
    for t in tokens {
        let v = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        table.insert(t, v);
    }
    table
}

fn build(n: usize, seed: u64, dim: usize, mut make: impl FnMut(&mut ChaCha8Rng, usize) -> SyntheticComment) -> SyntheticSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comments: Vec<SyntheticComment> = (0..n).map(|i| make(&mut rng, i)).collect();
    let embeddings = embeddings_for(&mut rng, comments.iter().map(|c| c.text.as_str()), dim);
    SyntheticSet { comments, embeddings }
}

fn balanced_stance(i: usize) -> Stance {
    Stance::ALL[i % 3]
}

/// Each comment contains its stance's keyword among random filler words.
/// Page stance and entities carry no signal.
pub fn planted_keyword(n: usize, seed: u64, dim: usize) -> SyntheticSet {
    build(n, seed, dim, |rng, i| {
        let stance = balanced_stance(i);
        let mut words = filler(rng, 5, 12);
        insert_at_random(rng, &mut words, STANCE_KEYWORDS[stance.index()]);
        SyntheticComment {
            id: format!("kw{i:05}"),
            text: words.join(" "),
            page: *PageStance::ALL.choose(rng).unwrap(),
            stance,
            morals: BTreeSet::new(),
            entities: noise_entities(rng),
            created_at: timestamp(rng),
        }
    })
}

/// Text is drawn from one distribution for all classes; the stance is
/// carried by a confidently linked class entity (ids 101..=105 for Pro,
/// 111..=115 for Anti, 121..=125 for NR). Some comments also carry a
/// low-confidence (ρ < 0.1) entity of a different class as a decoy.
pub fn entity_signal(n: usize, seed: u64, dim: usize) -> SyntheticSet {
    build(n, seed, dim, |rng, i| {
        let stance = balanced_stance(i);
        let class_entity = |rng: &mut ChaCha8Rng, s: Stance| 101 + 10 * s.index() as u64 + rng.gen_range(0..5);
        let mut entities = vec![annotation(class_entity(rng, stance), rng.gen_range(0.2..1.0))];
        if rng.gen_bool(0.5) {
            let other = Stance::ALL[(stance.index() + rng.gen_range(1..3)) % 3];
            entities.push(annotation(class_entity(rng, other), rng.gen_range(0.0..0.1)));
        }
        entities.extend(noise_entities(rng));
        entities.shuffle(rng);
        SyntheticComment {
            id: format!("en{i:05}"),
            text: filler(rng, 5, 12).join(" "),
            page: *PageStance::ALL.choose(rng).unwrap(),
            stance,
            morals: BTreeSet::new(),
            entities,
            created_at: timestamp(rng),
        }
    })
}

/// Stances drawn uniformly at random, independent of every input.
pub fn random_labels(n: usize, seed: u64, dim: usize) -> SyntheticSet {
    build(n, seed, dim, |rng, i| SyntheticComment {
        id: format!("rl{i:05}"),
        text: filler(rng, 5, 12).join(" "),
        page: *PageStance::ALL.choose(rng).unwrap(),
        stance: *Stance::ALL.choose(rng).unwrap(),
        morals: BTreeSet::new(),
        entities: noise_entities(rng),
        created_at: timestamp(rng),
    })
}

/// Relevant comments where one keyword marks Liberty/Virtue and another
/// Authority/Vice, each present independently with probability 0.4.
pub fn planted_morals(n: usize, seed: u64, dim: usize) -> SyntheticSet {
    build(n, seed, dim, |rng, i| {
        let mut words = filler(rng, 5, 12);
        let mut morals = BTreeSet::new();
        if rng.gen_bool(0.4) {
            insert_at_random(rng, &mut words, LIBERTY_VIRTUE_KEYWORD);
            morals.insert(MoralLabel::new(Foundation::Liberty, Polarity::Virtue));
        }
        if rng.gen_bool(0.4) {
            insert_at_random(rng, &mut words, AUTHORITY_VICE_KEYWORD);
            morals.insert(MoralLabel::new(Foundation::Authority, Polarity::Vice));
        }
        SyntheticComment {
            id: format!("mo{i:05}"),
            text: words.join(" "),
            page: *PageStance::ALL.choose(rng).unwrap(),
            stance: if i % 2 == 0 { Stance::Pro } else { Stance::Anti },
            morals,
            entities: Vec::new(),
            created_at: timestamp(rng),
        }
    })
}

/// Stance keywords as in [`planted_keyword`], and for relevant comments the
/// two moral keywords of [`planted_morals`]. Used by the `demo` command.
pub fn demo(n: usize, seed: u64, dim: usize) -> SyntheticSet {
    build(n, seed, dim, |rng, i| {
        let stance = balanced_stance(i);
        let mut words = filler(rng, 5, 12);
        insert_at_random(rng, &mut words, STANCE_KEYWORDS[stance.index()]);
        let mut morals = BTreeSet::new();
        if stance.is_relevant() {
            for (keyword, label) in [
                (LIBERTY_VIRTUE_KEYWORD, MoralLabel::new(Foundation::Liberty, Polarity::Virtue)),
                (AUTHORITY_VICE_KEYWORD, MoralLabel::new(Foundation::Authority, Polarity::Vice)),
            ] {
                if rng.gen_bool(0.4) {
                    insert_at_random(rng, &mut words, keyword);
                    morals.insert(label);
                }
            }
        }
        SyntheticComment {
            id: format!("dm{i:05}"),
            text: words.join(" "),
            page: *PageStance::ALL.choose(rng).unwrap(),
            stance,
            morals,
            entities: noise_entities(rng),
            created_at: timestamp(rng),
        }
    })
}

fn page_id(p: PageStance) -> String {
    format!("page-{p}")
}

impl SyntheticSet {
    pub fn corpus(&self) -> Corpus {
        let pages = PageStance::ALL
            .iter()
            .map(|&s| Page {
                id: page_id(s),
                name: format!("Synthetic {s} page"),
                stance: s,
            })
            .collect();
        let comments = self
            .comments
            .iter()
            .map(|c| Comment::new(c.id.clone(), format!("post-{}", c.page), page_id(c.page), c.created_at, c.text.clone()))
            .collect();
        Corpus::new(pages, Vec::new(), comments).expect("synthetic corpus is consistent")
    }

    pub fn gold(&self) -> Vec<GoldLabel> {
        self.comments
            .iter()
            .map(|c| GoldLabel {
                comment_id: c.id.clone(),
                stance: c.stance,
                morals: if c.stance.is_relevant() { c.morals.clone() } else { BTreeSet::new() },
                support: 1,
            })
            .collect()
    }

    pub fn links(&self) -> HashMap<String, Vec<EntityAnnotation>> {
        self.comments.iter().map(|c| (c.id.clone(), c.entities.clone())).collect()
    }

    pub fn link_records(&self) -> Vec<LinkRecord> {
        self.comments
            .iter()
            .map(|c| LinkRecord {
                comment_id: c.id.clone(),
                annotations: c.entities.clone(),
            })
            .collect()
    }

    pub fn featurizer(&self, max_len: usize) -> Featurizer {
        Featurizer {
            tokenizer: Tokenizer::default(),
            table: self.embeddings.clone(),
            max_len,
            rho_min: crate::entitylink::DEFAULT_RHO_MIN,
        }
    }

    pub fn relevance_items(&self, max_len: usize) -> Vec<RelevanceItem> {
        pipeline::relevance_items(&self.featurizer(max_len), &self.corpus(), &self.gold(), &self.links())
            .expect("synthetic gold labels resolve")
    }

    pub fn moral_examples(&self, max_len: usize) -> Vec<MoralExample> {
        pipeline::moral_examples(&self.featurizer(max_len), &self.corpus(), &self.gold()).expect("synthetic gold labels resolve")
    }

    /// Writes `pages.jsonl`, `comments.jsonl`, `gold.jsonl`, `links.jsonl` and `embeddings.txt`.
    pub fn write_dir(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        self.corpus().write_dir(dir).map_err(io::Error::other)?;
        crate::jsonl::write(&dir.join("gold.jsonl"), &self.gold())?;
        crate::jsonl::write(&dir.join("links.jsonl"), &self.link_records())?;
        self.embeddings.write(&dir.join("embeddings.txt"))
    }
}

/// Entity vocabulary over every entity id the set mentions (for quick checks).
pub fn full_vocab(set: &SyntheticSet, k: usize) -> EntityVocab {
    crate::entitylink::build_entity_vocab(set.comments.iter().map(|c| c.entities.as_slice()), k)
}

/// Random prediction records spread over 2012-2019, with a share of
/// probabilities placed exactly on the 0.5 decision boundary.
pub fn predictions(n: usize, seed: u64) -> Vec<PredictionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prob = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.05) { 0.5 } else { rng.gen_range(0.0..1.0) };
    // below 0.8 so most comments end up with few decided labels
    let polarity_prob = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.05) { 0.5 } else { rng.gen_range(0.0..0.8) };
    (0..n)
        .map(|i| {
            let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.01..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|x| x / sum).collect();
            PredictionRecord {
                comment_id: format!("pr{i:05}"),
                created_at: timestamp(&mut rng),
                page_stance: *PageStance::ALL.choose(&mut rng).unwrap(),
                stance_probs: StanceProbs::from_slice(&probs),
                presence: Foundation::ALL.iter().map(|&f| (f, prob(&mut rng))).collect(),
                polarity: Foundation::ALL
                    .iter()
                    .map(|&f| {
                        let virtue = polarity_prob(&mut rng);
                        (f, PolarityProbs { virtue, vice: polarity_prob(&mut rng) })
                    })
                    .collect(),
            }
        })
        .collect()
}
