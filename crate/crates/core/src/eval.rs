//! Success@K scoring and per-language reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, GoldPairs};
use crate::error::{Error, Result};
use crate::retrieval::RankedList;

/// Column order of the report table; languages outside this list follow in
/// lexicographic order.
pub const TABLE_LANGS: [&str; 8] = ["fra", "spa", "eng", "por", "tha", "deu", "msa", "ara"];

/// Fraction of posts with at least one gold fact-check among their first `k` hits.
pub fn success_at_k(rankings: &[RankedList], gold: &GoldPairs, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if rankings.is_empty() {
        return Err(Error::EmptyCell("rankings".into()));
    }
    let mut hits = 0usize;
    for list in rankings {
        let relevant = gold
            .for_post(&list.post_id)
            .ok_or_else(|| Error::NoGold(list.post_id.clone()))?;
        if list.hits.iter().take(k).any(|h| relevant.contains(&h.id)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / rankings.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub score: f64,
    pub n_posts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub k: usize,
    /// Monolingual-track posts grouped by language.
    pub per_lang: BTreeMap<String, Cell>,
    pub crosslingual: Option<Cell>,
    /// Post-weighted mean of the monolingual cells.
    pub average: f64,
    /// Plain mean of the monolingual cells.
    pub average_unweighted: f64,
}

impl EvalReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serialization");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Splits rankings into the monolingual cells (by post language) and the
/// crosslingual cell, then scores each.
pub fn evaluate(corpus: &Corpus, rankings: &[RankedList], k: usize, model_id: &str) -> Result<EvalReport> {
    if rankings.is_empty() {
        return Err(Error::EmptyCell("all posts".into()));
    }
    let mut mono: BTreeMap<String, Vec<RankedList>> = BTreeMap::new();
    let mut cross = Vec::new();
    for list in rankings {
        let post = corpus
            .post(&list.post_id)
            .ok_or_else(|| Error::UnknownId(list.post_id.clone()))?;
        if corpus.is_crosslingual(&post.id) {
            cross.push(list.clone());
        } else {
            mono.entry(post.lang.clone()).or_default().push(list.clone());
        }
    }
    if mono.is_empty() {
        return Err(Error::EmptyCell("monolingual".into()));
    }
    let cell = |lists: &[RankedList]| -> Result<Cell> {
        Ok(Cell {
            score: success_at_k(lists, corpus.gold(), k)?,
            n_posts: lists.len(),
        })
    };
    let per_lang = mono
        .iter()
        .map(|(lang, lists)| Ok((lang.clone(), cell(lists)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let crosslingual = if cross.is_empty() { None } else { Some(cell(&cross)?) };

    let n_mono: usize = per_lang.values().map(|c| c.n_posts).sum();
    let average = per_lang.values().map(|c| c.score * c.n_posts as f64).sum::<f64>() / n_mono as f64;
    let average_unweighted = per_lang.values().map(|c| c.score).sum::<f64>() / per_lang.len() as f64;
    Ok(EvalReport {
        model_id: model_id.to_string(),
        k,
        per_lang,
        crosslingual,
        average,
        average_unweighted,
    })
}

/// Aligned text table, one row per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut extra: BTreeSet<&str> = BTreeSet::new();
    for r in reports {
        extra.extend(r.per_lang.keys().map(String::as_str));
    }
    for l in TABLE_LANGS {
        extra.remove(l);
    }
    let langs: Vec<&str> = TABLE_LANGS.iter().copied().chain(extra).collect();

    let mut header: Vec<String> = vec!["Model".into()];
    header.extend(langs.iter().map(|l| l.to_string()));
    header.extend(["Crosslingual".into(), "Average".into(), "Avg(lang)".into()]);

    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![format!("{} (S@{})", r.model_id, r.k)];
            row.extend(langs.iter().map(|l| fmt(r.per_lang.get(*l).map(|c| c.score))));
            row.push(fmt(r.crosslingual.map(|c| c.score)));
            row.push(fmt(Some(r.average)));
            row.push(fmt(Some(r.average_unweighted)));
            row
        })
        .collect();

    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            std::iter::once(&header)
                .chain(&rows)
                .map(|r| r[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in std::iter::once(&header).chain(&rows) {
        for (c, cell) in row.iter().enumerate() {
            if c == 0 {
                let _ = write!(out, "{cell:<w$}", w = widths[c]);
            } else {
                let _ = write!(out, "  {cell:>w$}", w = widths[c]);
            }
        }
        out.push('\n');
    }
    out
}
