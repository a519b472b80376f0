//! The `moralframe` command line.

pub mod commands;
pub mod plot;
pub mod server;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use moralframe::analytics::GroupBy;
use moralframe::config::RunConfig;

use commands::{Analysis, DataArgs, EvalTask, IngestArgs, LinkArgs, PredictArgs, TrainTarget};

#[derive(Debug, Parser)]
#[command(name = "moralframe", version, about = "Vaccine stance and moral framing of social media comments")]
pub struct Cli {
    /// Flat JSON configuration; flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load page, post and comment exports, filter short comments and write corpus statistics.
    Ingest {
        #[arg(long)]
        pages: PathBuf,
        #[arg(long)]
        comments: PathBuf,
        #[arg(long)]
        posts: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        min_tokens: Option<usize>,
    },
    /// Annotation server and offline gold export.
    Annotate {
        #[command(subcommand)]
        command: AnnotateCommand,
    },
    /// Link entities in every corpus comment.
    Link {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSONL dictionary for offline linking instead of the remote service.
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Response cache for the remote service (default: OUT/link_cache.jsonl).
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Train one model family and save it under OUT.
    Train {
        #[arg(value_enum)]
        target: TrainTarget,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        model: ModelFlags,
        /// Relevance only: drop the entity and page branches.
        #[arg(long)]
        text_only: bool,
    },
    /// Cross-validated AUROC tables.
    Evaluate {
        #[arg(long, value_enum)]
        task: EvalTask,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Score every corpus comment with a trained model bundle.
    Predict {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        links: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Aggregate predictions into report tables.
    Analyze {
        #[arg(value_enum)]
        kind: Analysis,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// stance or page_stance
        #[arg(long)]
        group_by: Option<GroupBy>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Only count polarity labels whose foundation passes the presence model.
        #[arg(long)]
        gate_on_presence: bool,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Render timeseries.csv as SVG line charts, one per series group.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Plot raw monthly values instead of the moving average.
        #[arg(long)]
        raw: bool,
    },
    /// Run the offline pipeline end to end on synthetic data.
    Demo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum AnnotateCommand {
    /// Serve the annotation API (and the UI from --static).
    Serve {
        /// Corpus directory written by `ingest`.
        #[arg(long)]
        corpus: PathBuf,
        /// Append-only label journal, replayed on start.
        #[arg(long)]
        journal: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long = "static", value_name = "DIR")]
        static_dir: Option<PathBuf>,
    },
    /// Aggregate a label journal into gold labels and an agreement report.
    Export {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        journal: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct DataFlags {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub links: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

impl ModelFlags {
    fn apply(&self, config: &mut RunConfig) {
        if let Some(s) = self.seed {
            config.model.seed = s;
        }
        if let Some(e) = self.epochs {
            config.model.epochs = e;
        }
        if let Some(p) = &self.embeddings {
            config.embeddings = Some(p.clone());
        }
    }
}

impl From<DataFlags> for DataArgs {
    fn from(d: DataFlags) -> Self {
        DataArgs {
            corpus: d.corpus,
            gold: d.gold,
            links: d.links,
            out: d.out,
        }
    }
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 on success, 1 on operational failure, 2 on usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            1
        }
    }
}

/// The error and its causes, skipping causes already spelled out by the message before them.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg.push_str(": ");
            msg.push_str(&c);
        }
    }
    msg
}

fn execute(cli: Cli) -> Result<()> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest {
            pages,
            comments,
            posts,
            out,
            min_tokens,
        } => {
            if let Some(m) = min_tokens {
                config.min_tokens = m;
            }
            config.validate()?;
            commands::ingest(
                &config,
                &IngestArgs {
                    pages,
                    comments,
                    posts,
                    out,
                },
            )
        }
        Command::Annotate { command } => match command {
            AnnotateCommand::Serve {
                corpus,
                journal,
                addr,
                static_dir,
            } => commands::annotate_serve(&corpus, &journal, &addr, static_dir.as_deref()),
            AnnotateCommand::Export { corpus, journal, out } => commands::annotate_export(&corpus, &journal, &out),
        },
        Command::Link {
            corpus,
            out,
            fixture,
            cache,
            endpoint,
            parallelism,
        } => {
            if let Some(e) = endpoint {
                config.tagme_endpoint = e;
            }
            if let Some(p) = parallelism {
                config.link_parallelism = p;
            }
            config.validate()?;
            commands::link(
                &config,
                &LinkArgs {
                    corpus,
                    out,
                    fixture,
                    cache,
                },
            )
        }
        Command::Train {
            target,
            data,
            model,
            text_only,
        } => {
            model.apply(&mut config);
            config.validate()?;
            commands::train(&config, target, text_only, &data.into())
        }
        Command::Evaluate {
            task,
            data,
            model,
            folds,
            parallelism,
        } => {
            model.apply(&mut config);
            if let Some(k) = folds {
                config.folds = k;
                config.polarity_folds = k;
            }
            if let Some(p) = parallelism {
                config.parallelism = p;
            }
            config.validate()?;
            commands::evaluate(&config, task, &data.into())
        }
        Command::Predict {
            models,
            corpus,
            links,
            out,
            embeddings,
        } => {
            if embeddings.is_some() {
                config.embeddings = embeddings;
            }
            config.validate()?;
            commands::predict(
                &config,
                &PredictArgs {
                    models,
                    corpus,
                    links,
                    out,
                },
            )
        }
        Command::Analyze {
            kind,
            predictions,
            out,
            group_by,
            threshold,
            gate_on_presence,
            window,
        } => {
            if let Some(g) = group_by {
                config.group_by = g;
            }
            if let Some(t) = threshold {
                config.moral_threshold = t;
            }
            if gate_on_presence {
                config.gate_on_presence = true;
            }
            if let Some(w) = window {
                config.window = w;
            }
            config.validate()?;
            commands::analyze(&config, kind, &predictions, &out)
        }
        Command::Plot { input, out, raw } => {
            for path in commands::plot(&input, &out, raw)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Demo { out, n, seed } => commands::demo(n, seed, &out),
    }
}
