//! Exact top-k cosine retrieval over unit-normalized fact-check embeddings.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, Corpus};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::{Channel, DocKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub post_id: String,
    pub hits: Vec<Hit>,
}

/// Which fact-checks a post is ranked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    /// Only fact-checks in the post's language.
    #[default]
    Monolingual,
    /// Every fact-check in the corpus.
    Crosslingual,
    /// Crosslingual for crosslingual-track posts, monolingual otherwise.
    Track,
}

impl std::str::FromStr for PoolMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "monolingual" => Ok(PoolMode::Monolingual),
            "crosslingual" => Ok(PoolMode::Crosslingual),
            "track" => Ok(PoolMode::Track),
            other => Err(format!(
                "unknown mode `{other}` (expected monolingual|crosslingual|track)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k: usize,
    pub mode: PoolMode,
    pub channel: Channel,
    pub model_id: String,
}

impl RetrievalConfig {
    pub fn new(model_id: impl Into<String>, channel: Channel) -> Self {
        Self {
            k: 10,
            mode: PoolMode::default(),
            channel,
            model_id: model_id.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Dot product accumulated in f64, left to right.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Descending score, then ascending id.
pub fn hit_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

/// The `k` best rows of `pool` among `candidates` (row indices) for `query`.
pub fn top_k(query: &[f32], pool: &EmbeddingMatrix, candidates: &[usize], k: usize) -> Result<Vec<Hit>> {
    if candidates.is_empty() {
        return Err(Error::EmptyPool(String::new()));
    }
    if query.len() != pool.dim() {
        return Err(Error::DimMismatch {
            expected: pool.dim(),
            found: query.len(),
        });
    }
    let ids = pool.ids();
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .map(|&i| (dot(query, pool.row(i)), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| hit_order(a.0, &ids[a.1], b.0, &ids[b.1]);
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    Ok(scored
        .into_iter()
        .map(|(score, i)| Hit {
            id: ids[i].clone(),
            score,
        })
        .collect())
}

/// Ranks fact-checks for posts of a corpus using one model's embeddings.
pub struct Retriever<'a> {
    corpus: &'a Corpus,
    posts: &'a EmbeddingMatrix,
    factchecks: &'a EmbeddingMatrix,
    all: Vec<usize>,
    by_lang: HashMap<&'a str, Vec<usize>>,
}

impl<'a> Retriever<'a> {
    /// Every fact-check in `corpus` must have a row in `factchecks`.
    pub fn new(corpus: &'a Corpus, posts: &'a EmbeddingMatrix, factchecks: &'a EmbeddingMatrix) -> Result<Self> {
        if posts.kind() != DocKind::Post || factchecks.kind() != DocKind::FactCheck {
            return Err(Error::Config("expected a post matrix and a fact-check matrix".into()));
        }
        if posts.dim() != factchecks.dim() {
            return Err(Error::DimMismatch {
                expected: factchecks.dim(),
                found: posts.dim(),
            });
        }
        let mut all = Vec::with_capacity(corpus.factchecks().len());
        let mut by_lang: HashMap<&str, Vec<usize>> = HashMap::new();
        for fc in corpus.factchecks().values() {
            let row = factchecks
                .position(&fc.id)
                .ok_or_else(|| Error::MissingEmbedding(fc.id.clone()))?;
            all.push(row);
            by_lang.entry(fc.lang.as_str()).or_default().push(row);
        }
        Ok(Self {
            corpus,
            posts,
            factchecks,
            all,
            by_lang,
        })
    }

    pub fn retrieve(&self, post_id: &str, mode: PoolMode, k: usize) -> Result<RankedList> {
        let post = self
            .corpus
            .post(post_id)
            .ok_or_else(|| Error::UnknownId(post_id.to_string()))?;
        let query = self
            .posts
            .lookup(post_id)
            .map_err(|_| Error::MissingEmbedding(post_id.to_string()))?;
        let crosslingual = match mode {
            PoolMode::Monolingual => false,
            PoolMode::Crosslingual => true,
            PoolMode::Track => self.corpus.is_crosslingual(post_id),
        };
        let pool: &[usize] = if crosslingual {
            &self.all
        } else {
            self.by_lang.get(post.lang.as_str()).map_or(&[], Vec::as_slice)
        };
        if pool.is_empty() {
            return Err(Error::EmptyPool(post_id.to_string()));
        }
        let hits = top_k(query, self.factchecks, pool, k)?;
        Ok(RankedList {
            post_id: post_id.to_string(),
            hits,
        })
    }

    /// Parallel over posts; output follows the order of `post_ids` and does
    /// not depend on the number of worker threads.
    pub fn retrieve_batch(&self, post_ids: &[String], mode: PoolMode, k: usize) -> Result<Vec<RankedList>> {
        post_ids
            .par_iter()
            .map(|id| self.retrieve(id, mode, k))
            .collect()
    }

    /// All posts of the corpus that have an embedding, in id order.
    pub fn embedded_posts(&self) -> Vec<String> {
        self.corpus
            .posts()
            .keys()
            .filter(|id| self.posts.position(id).is_some())
            .cloned()
            .collect()
    }
}

/// Serializes one ranked list as a JSONL line with scores at 6 decimals.
pub fn ranking_line(list: &RankedList) -> String {
    let mut s = String::with_capacity(32 + list.hits.len() * 32);
    s.push_str("{\"post_id\":");
    s.push_str(&serde_json::to_string(&list.post_id).expect("string serialization"));
    s.push_str(",\"hits\":[");
    for (i, h) in list.hits.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str("{\"id\":");
        s.push_str(&serde_json::to_string(&h.id).expect("string serialization"));
        s.push_str(&format!(",\"score\":{:.6}}}", h.score));
    }
    s.push_str("]}");
    s
}

pub fn write_rankings(path: &Path, lists: &[RankedList]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for list in lists {
        writeln!(w, "{}", ranking_line(list)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rankings(path: &Path) -> Result<Vec<RankedList>> {
    read_jsonl(path)
}
