//! Page, post and comment exports: loading, validation, the minimum-length
//! filter and per-stance dataset statistics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, LineError};
use crate::labels::PageStance;

/// Default minimum number of non-mention tokens a comment needs to be kept.
pub const DEFAULT_MIN_TOKENS: usize = 5;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{kind} {id:?} references unknown {target} {missing:?}")]
    Dangling {
        kind: &'static str,
        id: String,
        target: &'static str,
        missing: String,
    },
    #[error("duplicate {kind} id {id:?}")]
    Duplicate { kind: &'static str, id: String },
    #[error("{kind} has an empty id")]
    EmptyId { kind: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub id: String,
    pub name: String,
    pub stance: PageStance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub page_id: String,
    pub created_at: DateTime<Utc>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RawComment {
    id: String,
    post_id: String,
    page_id: String,
    created_at: DateTime<Utc>,
    text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RawComment")]
pub struct Comment {
    pub id: String,
    pub post_id: String,
    pub page_id: String,
    pub created_at: DateTime<Utc>,
    pub text: String,
    /// Whitespace tokens not starting with `@`.
    pub token_count_excl_mentions: usize,
}

impl From<RawComment> for Comment {
    fn from(raw: RawComment) -> Self {
        Comment::new(raw.id, raw.post_id, raw.page_id, raw.created_at, raw.text)
    }
}

impl Comment {
    pub fn new(
        id: impl Into<String>,
        post_id: impl Into<String>,
        page_id: impl Into<String>,
        created_at: DateTime<Utc>,
        text: impl Into<String>,
    ) -> Self {
        let text = text.into();
        Comment {
            id: id.into(),
            post_id: post_id.into(),
            page_id: page_id.into(),
            created_at,
            token_count_excl_mentions: count_non_mention_tokens(&text),
            text,
        }
    }

    fn raw(&self) -> RawComment {
        RawComment {
            id: self.id.clone(),
            post_id: self.post_id.clone(),
            page_id: self.page_id.clone(),
            created_at: self.created_at,
            text: self.text.clone(),
        }
    }
}

/// Counts whitespace-separated tokens whose first character is not `@`.
/// Punctuation-only tokens count as words.
pub fn count_non_mention_tokens(text: &str) -> usize {
    text.split_whitespace().filter(|t| !t.starts_with('@')).count()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub pages: Vec<Page>,
    pub posts: Vec<Post>,
    pub comments: Vec<Comment>,
}

impl Corpus {
    /// Builds a corpus, checking id uniqueness and foreign keys.
    pub fn new(pages: Vec<Page>, posts: Vec<Post>, comments: Vec<Comment>) -> Result<Self, CorpusError> {
        let corpus = Corpus {
            pages,
            posts,
            comments,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let page_ids = unique_ids("page", self.pages.iter().map(|p| p.id.as_str()))?;
        let post_ids = unique_ids("post", self.posts.iter().map(|p| p.id.as_str()))?;
        unique_ids("comment", self.comments.iter().map(|c| c.id.as_str()))?;

        for post in &self.posts {
            if !page_ids.contains(post.page_id.as_str()) {
                return Err(CorpusError::Dangling {
                    kind: "post",
                    id: post.id.clone(),
                    target: "page",
                    missing: post.page_id.clone(),
                });
            }
        }
        for comment in &self.comments {
            if !page_ids.contains(comment.page_id.as_str()) {
                return Err(CorpusError::Dangling {
                    kind: "comment",
                    id: comment.id.clone(),
                    target: "page",
                    missing: comment.page_id.clone(),
                });
            }
            // Posts are optional; only check the reference when they were loaded.
            if !self.posts.is_empty() && !post_ids.contains(comment.post_id.as_str()) {
                return Err(CorpusError::Dangling {
                    kind: "comment",
                    id: comment.id.clone(),
                    target: "post",
                    missing: comment.post_id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn page(&self, id: &str) -> Option<&Page> {
        self.pages.iter().find(|p| p.id == id)
    }

    /// Map from page id to page stance.
    pub fn page_stances(&self) -> HashMap<&str, PageStance> {
        self.pages.iter().map(|p| (p.id.as_str(), p.stance)).collect()
    }

    pub fn comment_index(&self) -> HashMap<&str, &Comment> {
        self.comments.iter().map(|c| (c.id.as_str(), c)).collect()
    }

    /// Writes `pages.jsonl`, `posts.jsonl` and `comments.jsonl` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), CorpusError> {
        let io_err = |path: PathBuf| move |source| CorpusError::Io { path, source };
        std::fs::create_dir_all(dir).map_err(io_err(dir.to_path_buf()))?;
        let pages = dir.join("pages.jsonl");
        jsonl::write(&pages, &self.pages).map_err(io_err(pages.clone()))?;
        let posts = dir.join("posts.jsonl");
        jsonl::write(&posts, &self.posts).map_err(io_err(posts.clone()))?;
        let comments = dir.join("comments.jsonl");
        let raw: Vec<RawComment> = self.comments.iter().map(Comment::raw).collect();
        jsonl::write(&comments, &raw).map_err(io_err(comments.clone()))?;
        Ok(())
    }

    /// Reads a directory previously written by [`Corpus::write_dir`].
    pub fn read_dir(dir: &Path) -> Result<Self, CorpusError> {
        let posts = dir.join("posts.jsonl");
        load_corpus(
            &dir.join("pages.jsonl"),
            &dir.join("comments.jsonl"),
            posts.exists().then_some(posts.as_path()),
        )
    }
}

fn unique_ids<'a>(
    kind: &'static str,
    ids: impl Iterator<Item = &'a str>,
) -> Result<HashSet<&'a str>, CorpusError> {
    let mut seen = HashSet::new();
    for id in ids {
        if id.is_empty() {
            return Err(CorpusError::EmptyId { kind });
        }
        if !seen.insert(id) {
            return Err(CorpusError::Duplicate {
                kind,
                id: id.to_string(),
            });
        }
    }
    Ok(seen)
}

fn read_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    jsonl::read(path).map_err(|e| match e {
        LineError::Io(source) => CorpusError::Io {
            path: path.to_path_buf(),
            source,
        },
        LineError::Parse { line, message } => CorpusError::Schema {
            path: path.to_path_buf(),
            line,
            message,
        },
    })
}

/// Loads and validates a corpus from JSONL exports.
pub fn load_corpus(
    pages_path: &Path,
    comments_path: &Path,
    posts_path: Option<&Path>,
) -> Result<Corpus, CorpusError> {
    let pages: Vec<Page> = read_file(pages_path)?;
    let comments: Vec<Comment> = read_file(comments_path)?;
    let posts: Vec<Post> = match posts_path {
        Some(p) => read_file(p)?,
        None => Vec::new(),
    };
    Corpus::new(pages, posts, comments)
}

/// Keeps comments with at least `min_tokens` non-mention tokens, preserving order.
pub fn filter_comments(corpus: &Corpus, min_tokens: usize) -> Corpus {
    assert!(min_tokens >= 1, "min_tokens must be at least 1");
    Corpus {
        pages: corpus.pages.clone(),
        posts: corpus.posts.clone(),
        comments: corpus
            .comments
            .iter()
            .filter(|c| c.token_count_excl_mentions >= min_tokens)
            .cloned()
            .collect(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StanceStats {
    pub pages: usize,
    pub posts: usize,
    pub original_comments: usize,
    pub filtered_comments: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub min_tokens: usize,
    pub by_stance: BTreeMap<PageStance, StanceStats>,
}

impl StatsReport {
    pub fn get(&self, stance: PageStance) -> &StanceStats {
        &self.by_stance[&stance]
    }
}

/// Per page-stance counts of pages, posts and comments before and after filtering.
pub fn corpus_stats(corpus: &Corpus, min_tokens: usize) -> StatsReport {
    let mut by_stance: BTreeMap<PageStance, StanceStats> = PageStance::ALL
        .into_iter()
        .map(|s| (s, StanceStats::default()))
        .collect();
    let stances = corpus.page_stances();
    for page in &corpus.pages {
        by_stance.get_mut(&page.stance).unwrap().pages += 1;
    }
    for post in &corpus.posts {
        if let Some(s) = stances.get(post.page_id.as_str()) {
            by_stance.get_mut(s).unwrap().posts += 1;
        }
    }
    for comment in &corpus.comments {
        if let Some(s) = stances.get(comment.page_id.as_str()) {
            let entry = by_stance.get_mut(s).unwrap();
            entry.original_comments += 1;
            if comment.token_count_excl_mentions >= min_tokens {
                entry.filtered_comments += 1;
            }
        }
    }
    StatsReport {
        min_tokens,
        by_stance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn ts() -> DateTime<Utc> {
        "2015-03-01T10:00:00Z".parse().unwrap()
    }

    fn write(dir: &Path, name: &str, lines: &[&str]) -> PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        path
    }

    const PAGE: &str = r#"{"id":"p1","name":"Vaccines Work","stance":"PV"}"#;

    #[test]
    fn loads_three_comments_one_page() {
        let dir = tempfile::tempdir().unwrap();
        let pages = write(dir.path(), "pages.jsonl", &[PAGE]);
        let comments = write(
            dir.path(),
            "comments.jsonl",
            &[
                r#"{"id":"c1","post_id":"x","page_id":"p1","created_at":"2015-03-01T10:00:00Z","text":"one two three four five"}"#,
                r#"{"id":"c2","post_id":"x","page_id":"p1","created_at":"2015-03-02T10:00:00Z","text":"@bob hi"}"#,
                r#"{"id":"c3","post_id":"x","page_id":"p1","created_at":"2015-04-01T10:00:00Z","text":"vaccines saved my child's life today"}"#,
            ],
        );
        let corpus = load_corpus(&pages, &comments, None).unwrap();
        assert_eq!(corpus.pages.len(), 1);
        assert_eq!(corpus.comments.len(), 3);
        assert_eq!(corpus.comments[1].token_count_excl_mentions, 1);
    }

    #[test]
    fn dangling_page_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let pages = write(dir.path(), "pages.jsonl", &[PAGE]);
        let comments = write(
            dir.path(),
            "comments.jsonl",
            &[r#"{"id":"c1","post_id":"x","page_id":"X","created_at":"2015-03-01T10:00:00Z","text":"hello"}"#],
        );
        let err = load_corpus(&pages, &comments, None).unwrap_err();
        assert!(matches!(&err, CorpusError::Dangling { missing, .. } if missing == "X"));
        assert!(err.to_string().contains("\"X\""));
    }

    #[test]
    fn schema_violation_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let pages = write(dir.path(), "pages.jsonl", &[PAGE, r#"{"id":"p2","name":"x","stance":"MAYBE"}"#]);
        let comments = write(dir.path(), "comments.jsonl", &[]);
        match load_corpus(&pages, &comments, None).unwrap_err() {
            CorpusError::Schema { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_corpus(&dir.path().join("nope"), &dir.path().join("nope2"), None).unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
    }

    #[test]
    fn empty_comments_file_gives_zero_stats() {
        let dir = tempfile::tempdir().unwrap();
        let pages = write(dir.path(), "pages.jsonl", &[PAGE]);
        let comments = write(dir.path(), "comments.jsonl", &[]);
        let corpus = load_corpus(&pages, &comments, None).unwrap();
        assert!(corpus.comments.is_empty());
        let stats = corpus_stats(&corpus, DEFAULT_MIN_TOKENS);
        let pv = stats.get(PageStance::PV);
        assert_eq!(pv.pages, 1);
        assert_eq!((pv.posts, pv.original_comments, pv.filtered_comments), (0, 0, 0));
        assert_eq!(stats.get(PageStance::AV), &StanceStats::default());
    }

    #[test]
    fn duplicate_comment_ids_rejected() {
        let page = Page {
            id: "p".into(),
            name: "n".into(),
            stance: PageStance::AV,
        };
        let c = Comment::new("c", "x", "p", ts(), "text");
        let err = Corpus::new(vec![page], vec![], vec![c.clone(), c]).unwrap_err();
        assert!(matches!(err, CorpusError::Duplicate { kind: "comment", .. }));
    }

    #[test]
    fn filter_examples() {
        let page = Page {
            id: "p".into(),
            name: "n".into(),
            stance: PageStance::PV,
        };
        let texts = [
            "@john thanks for the link",
            "vaccines saved my child's life today",
            "@a @b one two three four five",
        ];
        let comments = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Comment::new(format!("c{i}"), "x", "p", ts(), *t))
            .collect();
        let corpus = Corpus::new(vec![page], vec![], comments).unwrap();
        let filtered = filter_comments(&corpus, DEFAULT_MIN_TOKENS);
        let kept: Vec<&str> = filtered.comments.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(kept, ["c1", "c2"]);
        // the input is untouched
        assert_eq!(corpus.comments.len(), 3);
    }

    #[test]
    fn stats_split_by_stance() {
        let pages = vec![
            Page {
                id: "pv".into(),
                name: "a".into(),
                stance: PageStance::PV,
            },
            Page {
                id: "av".into(),
                name: "b".into(),
                stance: PageStance::AV,
            },
        ];
        let posts = vec![Post {
            id: "post".into(),
            page_id: "av".into(),
            created_at: ts(),
            text: "post".into(),
        }];
        let comments = vec![
            Comment::new("1", "post", "av", ts(), "a b c d e"),
            Comment::new("2", "post", "av", ts(), "a b"),
            Comment::new("3", "post", "pv", ts(), "a b c d e f"),
        ];
        let stats = corpus_stats(&Corpus::new(pages, posts, comments).unwrap(), 5);
        let av = stats.get(PageStance::AV);
        assert_eq!((av.pages, av.posts, av.original_comments, av.filtered_comments), (1, 1, 2, 1));
        let pv = stats.get(PageStance::PV);
        assert_eq!((pv.pages, pv.posts, pv.original_comments, pv.filtered_comments), (1, 0, 1, 1));
    }

    #[test]
    fn write_and_read_dir() {
        let dir = tempfile::tempdir().unwrap();
        let page = Page {
            id: "p".into(),
            name: "n".into(),
            stance: PageStance::PV,
        };
        let corpus = Corpus::new(vec![page], vec![], vec![Comment::new("c", "x", "p", ts(), "a b c")]).unwrap();
        corpus.write_dir(dir.path()).unwrap();
        assert_eq!(Corpus::read_dir(dir.path()).unwrap(), corpus);
    }
}
