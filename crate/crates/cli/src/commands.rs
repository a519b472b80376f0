//! Subcommand implementations. Each writes its outputs and the resolved
//! configuration into its output directory.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use moralframe::analytics::{self, GroupBy};
use moralframe::annotation::{self, AnnotationStore, GoldLabel};
use moralframe::config::RunConfig;
use moralframe::corpus::{self, Corpus};
use moralframe::entitylink::{
    build_entity_vocab, entity_features, link_batch, EntityAnnotation, EntityLinker, FixtureLinker, RemoteLinker,
    ResponseCache,
};
use moralframe::eval::{self, MetricReport};
use moralframe::models::{self, ModelError, RelevanceExample, RelevanceVariant};
use moralframe::pipeline::{self, Featurizer, LinkRecord, ModelBundle};
use moralframe::preprocess::{load_embeddings, Tokenizer};
use moralframe::{synthetic, Foundation};

use crate::{plot, server};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn finish(config: &RunConfig, out: &Path) -> Result<()> {
    config.write_resolved(out)?;
    Ok(())
}

pub fn featurizer(config: &RunConfig) -> Result<Featurizer> {
    let Some(path) = &config.embeddings else {
        bail!("no embeddings configured; set \"embeddings\" in the config file or pass --embeddings");
    };
    let stemmer = config.stemmer.parse()?;
    Ok(Featurizer {
        tokenizer: Tokenizer::from_config(config.stopwords.as_deref(), stemmer)?,
        table: load_embeddings(path, config.embedding_dim)?,
        max_len: config.model.max_len,
        rho_min: config.rho_min,
    })
}

fn links_or_empty(path: Option<&Path>) -> Result<HashMap<String, Vec<EntityAnnotation>>> {
    match path {
        Some(p) => Ok(pipeline::read_links(p)?),
        None => Ok(HashMap::new()),
    }
}

/// Gold labels, reduced to a class-balanced sample when `per_class` is configured.
fn relevance_gold(config: &RunConfig, path: &Path) -> Result<Vec<GoldLabel>> {
    let gold = annotation::import_gold(path)?;
    match config.per_class {
        Some(n) => Ok(models::balanced_sample(&gold, n, config.model.seed)?),
        None => Ok(gold),
    }
}

pub struct IngestArgs {
    pub pages: PathBuf,
    pub comments: PathBuf,
    pub posts: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn ingest(config: &RunConfig, a: &IngestArgs) -> Result<()> {
    let corpus = corpus::load_corpus(&a.pages, &a.comments, a.posts.as_deref())?;
    let stats = corpus::corpus_stats(&corpus, config.min_tokens);
    let filtered = corpus::filter_comments(&corpus, config.min_tokens);
    create_dir(&a.out)?;
    filtered.write_dir(&a.out.join("corpus"))?;
    write_json(&a.out.join("stats.json"), &stats)?;
    for (stance, s) in &stats.by_stance {
        println!(
            "{stance}: {} pages, {} posts, {} comments, {} after filtering",
            s.pages, s.posts, s.original_comments, s.filtered_comments
        );
    }
    finish(config, &a.out)
}

fn open_store(corpus_dir: &Path, journal: &Path) -> Result<AnnotationStore> {
    let corpus = Corpus::read_dir(corpus_dir)?;
    Ok(AnnotationStore::with_journal(corpus.comments, journal)?)
}

pub fn annotate_serve(corpus_dir: &Path, journal: &Path, addr: &str, static_dir: Option<&Path>) -> Result<()> {
    let store = Arc::new(open_store(corpus_dir, journal)?);
    let progress = store.progress();
    println!("{} target comments, {} already labeled", progress.total, progress.labeled);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime
        .block_on(server::serve(store, static_dir, addr))
        .with_context(|| format!("serving on {addr}"))
}

pub fn annotate_export(corpus_dir: &Path, journal: &Path, out: &Path) -> Result<()> {
    let store = open_store(corpus_dir, journal)?;
    create_dir(out)?;
    let report = annotation::export_gold(&store, &out.join("gold.jsonl"))?;
    write_json(&out.join("agreement.json"), &annotation::agreement_report(&store))?;
    if !report.ties.is_empty() {
        write_text(&out.join("ties.txt"), &(report.ties.join("\n") + "\n"))?;
    }
    println!("{} gold labels, {} comments without a stance majority", report.gold.len(), report.ties.len());
    Ok(())
}

pub struct LinkArgs {
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub fixture: Option<PathBuf>,
    pub cache: Option<PathBuf>,
}

pub fn link(config: &RunConfig, a: &LinkArgs) -> Result<()> {
    let corpus = Corpus::read_dir(&a.corpus)?;
    create_dir(&a.out)?;
    let texts: Vec<String> = corpus.comments.iter().map(|c| c.text.clone()).collect();
    let linker: Box<dyn EntityLinker + Sync> = match &a.fixture {
        Some(path) => Box::new(FixtureLinker::from_file(path)?),
        None => {
            let Some(token) = &config.tagme_token else {
                bail!("remote linking needs a token in {}; pass --fixture to link offline", moralframe::config::TOKEN_ENV);
            };
            let cache_path = a.cache.clone().unwrap_or_else(|| a.out.join("link_cache.jsonl"));
            Box::new(RemoteLinker::http(&config.tagme_endpoint, token, ResponseCache::open(&cache_path)?))
        }
    };
    let results = link_batch(linker.as_ref(), &texts, config.link_parallelism);
    let mut records = Vec::with_capacity(results.len());
    for (c, r) in corpus.comments.iter().zip(results) {
        let annotations = r.with_context(|| format!("linking comment {}", c.id))?;
        records.push(LinkRecord {
            comment_id: c.id.clone(),
            annotations,
        });
    }
    pipeline::write_links(&a.out.join("links.jsonl"), &records)?;
    println!("linked {} comments", records.len());
    finish(config, &a.out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TrainTarget {
    Relevance,
    Presence,
    Polarity,
}

pub struct DataArgs {
    pub corpus: PathBuf,
    pub gold: PathBuf,
    pub links: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn train(config: &RunConfig, target: TrainTarget, text_only: bool, a: &DataArgs) -> Result<()> {
    let featurizer = featurizer(config)?;
    let corpus = Corpus::read_dir(&a.corpus)?;
    create_dir(&a.out)?;
    match target {
        TrainTarget::Relevance => {
            let gold = relevance_gold(config, &a.gold)?;
            let links = links_or_empty(a.links.as_deref())?;
            let items = pipeline::relevance_items(&featurizer, &corpus, &gold, &links)?;
            let vocab = build_entity_vocab(items.iter().map(|i| i.entities.as_slice()), config.model.entity_k);
            let examples: Vec<RelevanceExample> = items
                .iter()
                .map(|i| RelevanceExample {
                    id: i.id.clone(),
                    text: i.text.clone(),
                    entities: entity_features(&i.entities, &vocab),
                    page: i.page,
                    stance: i.stance,
                })
                .collect();
            let variant = if text_only { RelevanceVariant::TextOnly } else { RelevanceVariant::Full };
            let mut model = models::train_relevance(&config.model, &examples, variant)?;
            model.entity_vocab = Some(vocab);
            model.save(&pipeline::relevance_dir(&a.out))?;
            println!("trained relevance model on {} comments", examples.len());
        }
        TrainTarget::Presence => {
            let examples = pipeline::moral_examples(&featurizer, &corpus, &annotation::import_gold(&a.gold)?)?;
            let mut trained = 0;
            for f in Foundation::ALL {
                match models::train_presence(&config.model, &examples, f) {
                    Ok(m) => {
                        m.save(&pipeline::presence_dir(&a.out, f))?;
                        trained += 1;
                    }
                    Err(ModelError::SingleClass(reason)) => log::warn!("skipping {f} presence model: {reason}"),
                    Err(e) => return Err(e.into()),
                }
            }
            println!("trained {trained} presence models on {} comments", examples.len());
        }
        TrainTarget::Polarity => {
            let examples = pipeline::moral_examples(&featurizer, &corpus, &annotation::import_gold(&a.gold)?)?;
            let model = models::train_polarity(&config.model, &examples)?;
            model.save(&pipeline::polarity_dir(&a.out))?;
            let flagged: Vec<String> = model.untrainable.iter().map(ToString::to_string).collect();
            println!("trained polarity model on {} comments", examples.len());
            if !flagged.is_empty() {
                println!("untrainable targets: {}", flagged.join(", "));
            }
        }
    }
    finish(config, &a.out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalTask {
    Relevance,
    Moral,
}

pub fn evaluate(config: &RunConfig, task: EvalTask, a: &DataArgs) -> Result<()> {
    let featurizer = featurizer(config)?;
    let corpus = Corpus::read_dir(&a.corpus)?;
    let seed = config.model.seed;
    create_dir(&a.out)?;
    match task {
        EvalTask::Relevance => {
            let gold = relevance_gold(config, &a.gold)?;
            let links = links_or_empty(a.links.as_deref())?;
            let items = pipeline::relevance_items(&featurizer, &corpus, &gold, &links)?;
            let plan = eval::relevance_plan(&items, config.folds, seed)?;
            let report = eval::ablation_run(&config.model, &items, &plan, config.parallelism)?;
            let csv = report.to_csv();
            write_text(&a.out.join("relevance_auroc.csv"), &csv)?;
            write_json(&a.out.join("relevance_auroc.json"), &report)?;
            print!("{csv}");
        }
        EvalTask::Moral => {
            let examples = pipeline::moral_examples(&featurizer, &corpus, &annotation::import_gold(&a.gold)?)?;
            let mut presence: Vec<MetricReport> = Vec::new();
            for f in Foundation::ALL {
                let positives = examples.iter().filter(|e| e.has_foundation(f)).count();
                if positives == 0 || positives == examples.len() {
                    log::warn!("no presence evaluation for {f}: {positives} of {} comments carry it", examples.len());
                    continue;
                }
                let plan = match eval::presence_plan(&examples, f, config.folds, seed) {
                    Ok(p) => p,
                    Err(e) => {
                        log::warn!("no presence evaluation for {f}: {e}");
                        continue;
                    }
                };
                presence.push(eval::cross_validate_presence(&config.model, &examples, f, &plan, config.parallelism)?);
            }
            let plan = eval::polarity_plan(&examples, config.polarity_folds, seed)?;
            let polarity = eval::cross_validate_polarity(&config.model, &examples, &plan, config.parallelism)?;
            let csv = eval::moral_table_csv(&presence, &polarity);
            write_text(&a.out.join("moral_auroc.csv"), &csv)?;
            write_json(
                &a.out.join("moral_auroc.json"),
                &serde_json::json!({ "presence": presence, "polarity": polarity }),
            )?;
            print!("{csv}");
        }
    }
    finish(config, &a.out)
}

pub struct PredictArgs {
    pub models: PathBuf,
    pub corpus: PathBuf,
    pub links: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn predict(config: &RunConfig, a: &PredictArgs) -> Result<()> {
    let bundle = ModelBundle::load(&a.models)?;
    let mut config = config.clone();
    config.model.max_len = bundle.relevance.config.max_len;
    let featurizer = featurizer(&config)?;
    let corpus = Corpus::read_dir(&a.corpus)?;
    let links = links_or_empty(a.links.as_deref())?;
    let records = bundle.predict_corpus(&featurizer, &corpus, &links)?;
    create_dir(&a.out)?;
    analytics::write_predictions(&a.out.join("predictions.jsonl"), &records)?;
    println!("wrote {} predictions", records.len());
    finish(&config, &a.out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Analysis {
    Vvr,
    Shares,
    Distribution,
    Timeseries,
}

pub fn analyze(config: &RunConfig, kind: Analysis, predictions: &Path, out: &Path) -> Result<()> {
    let preds = analytics::read_predictions(predictions)?;
    let t = config.thresholds();
    create_dir(out)?;
    match kind {
        Analysis::Vvr => {
            let report = analytics::vvr_report(&preds, config.group_by, &t);
            write_text(&out.join("vvr_report.csv"), &report.to_csv())?;
        }
        Analysis::Shares => {
            let shares = analytics::occurrence_percentages(&preds, config.group_by, &t);
            let groups = config.group_by.groups();
            let mut csv = format!("foundation,{}\n", groups.join(","));
            for (f, by_group) in &shares {
                let cells: Vec<String> = groups
                    .iter()
                    .map(|g| by_group.get(g).copied().flatten().map_or("undefined".to_string(), |v| format!("{v:.2}")))
                    .collect();
                csv.push_str(&format!("{f},{}\n", cells.join(",")));
            }
            write_text(&out.join("moral_shares.csv"), &csv)?;
        }
        Analysis::Distribution => {
            let Some(d) = analytics::moral_label_distribution(&preds, &t) else {
                bail!("{} contains no predictions", predictions.display());
            };
            write_json(&out.join("label_distribution.json"), &d)?;
            println!("zero {:.3}, one {:.3}, several {:.3}", d.zero, d.one, d.multi);
        }
        Analysis::Timeseries => {
            let mut series = analytics::stance_share_series(&preds);
            series.extend(analytics::vvr_by_month(&preds, config.group_by, &t));
            write_text(&out.join("timeseries.csv"), &analytics::timeseries_csv(&series, config.window)?)?;
        }
    }
    finish(config, out)
}

pub fn plot(input: &Path, out: &Path, raw: bool) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let points = analytics::parse_timeseries_csv(&text).map_err(|e| anyhow::anyhow!("{}: {e}", input.display()))?;
    if points.is_empty() {
        bail!("{} has no data rows", input.display());
    }
    create_dir(out)?;
    let mut written = Vec::new();
    for (group, series) in plot::group_series(&points) {
        let path = out.join(format!("{}.svg", plot::file_stem(&group)));
        write_text(&path, &plot::render(&group, &series, raw))?;
        written.push(path);
    }
    Ok(written)
}

pub const DEMO_DIM: usize = 32;

/// Runs every offline step on a synthetic dataset under `out`.
pub fn demo(n: usize, seed: u64, out: &Path) -> Result<()> {
    let data = out.join("data");
    let set = synthetic::demo(n, seed, DEMO_DIM);
    set.write_dir(&data).with_context(|| format!("writing {}", data.display()))?;

    let mut config = RunConfig {
        embeddings: Some(data.join("embeddings.txt")),
        embedding_dim: DEMO_DIM,
        folds: 3,
        polarity_folds: 3,
        group_by: GroupBy::Stance,
        ..RunConfig::default()
    };
    config.model.seed = seed;
    config.model.hidden_size = 32;
    config.model.max_len = 30;
    config.model.epochs = 15;
    config.model.batch_size = 16;
    config.model.learning_rate = 3e-3;
    config.validate()?;
    write_json(&out.join("config.json"), &config)?;

    let ingested = out.join("ingest");
    ingest(
        &config,
        &IngestArgs {
            pages: data.join("pages.jsonl"),
            comments: data.join("comments.jsonl"),
            posts: None,
            out: ingested.clone(),
        },
    )?;
    let data_args = |dir: &str| DataArgs {
        corpus: ingested.join("corpus"),
        gold: data.join("gold.jsonl"),
        links: Some(data.join("links.jsonl")),
        out: out.join(dir),
    };
    for target in [TrainTarget::Relevance, TrainTarget::Presence, TrainTarget::Polarity] {
        train(&config, target, false, &data_args("models"))?;
    }
    evaluate(&config, EvalTask::Relevance, &data_args("evaluation"))?;
    predict(
        &config,
        &PredictArgs {
            models: out.join("models"),
            corpus: ingested.join("corpus"),
            links: Some(data.join("links.jsonl")),
            out: out.join("predictions"),
        },
    )?;
    let preds = out.join("predictions/predictions.jsonl");
    for kind in [Analysis::Vvr, Analysis::Shares, Analysis::Distribution, Analysis::Timeseries] {
        analyze(&config, kind, &preds, &out.join("analysis"))?;
    }
    let charts = plot(&out.join("analysis/timeseries.csv"), &out.join("plots"), false)?;
    println!("demo finished; {} charts in {}", charts.len(), out.join("plots").display());
    Ok(())
}
