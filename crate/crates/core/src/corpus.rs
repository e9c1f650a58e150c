//! Posts, fact-checks and gold (post, fact-check) pairs.
//!
//! A [`Corpus`] is validated once at construction and immutable afterwards.
//! Documents are keyed by id in ordered maps so every iteration order is
//! lexicographic and independent of the order lines appeared on disk.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Channel, DocKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub kind: DocKind,
    pub lang: String,
    pub text_original: String,
    /// Machine translation into English. English documents usually carry a
    /// copy of the original text here.
    pub text_english: Option<String>,
    /// Text extracted from attached images. Posts only.
    pub ocr_text: Option<String>,
}

impl Document {
    /// Text for the requested channel, if present.
    pub fn channel_text(&self, channel: Channel) -> Option<&str> {
        match channel {
            Channel::Original => Some(&self.text_original),
            Channel::English => self.text_english.as_deref(),
        }
    }

    fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidDocument {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(invalid("empty id"));
        }
        if !valid_lang(&self.lang) {
            return Err(invalid("language tag must be a nonempty lowercase code"));
        }
        if self.text_original.trim().is_empty() {
            return Err(invalid("empty text"));
        }
        if self.kind == DocKind::FactCheck && self.ocr_text.is_some() {
            return Err(invalid("fact-checks cannot carry OCR text"));
        }
        Ok(())
    }
}

fn valid_lang(lang: &str) -> bool {
    !lang.is_empty()
        && lang
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-')
}

/// Binary relevance judgements, grouped by post.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldPairs {
    by_post: BTreeMap<String, BTreeSet<String>>,
    len: usize,
}

impl GoldPairs {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false if the pair was already present.
    pub fn insert(&mut self, post_id: impl Into<String>, factcheck_id: impl Into<String>) -> bool {
        let added = self
            .by_post
            .entry(post_id.into())
            .or_default()
            .insert(factcheck_id.into());
        if added {
            self.len += 1;
        }
        added
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, post_id: &str, factcheck_id: &str) -> bool {
        self.by_post
            .get(post_id)
            .is_some_and(|s| s.contains(factcheck_id))
    }

    /// Gold fact-checks for a post; `None` when the post has no pair.
    pub fn for_post(&self, post_id: &str) -> Option<&BTreeSet<String>> {
        self.by_post.get(post_id)
    }

    /// Pairs in (post_id, factcheck_id) lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.by_post
            .iter()
            .flat_map(|(p, fs)| fs.iter().map(move |f| (p.as_str(), f.as_str())))
    }

    pub fn posts(&self) -> impl Iterator<Item = &str> {
        self.by_post.keys().map(String::as_str)
    }
}

impl FromIterator<(String, String)> for GoldPairs {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        let mut gold = GoldPairs::new();
        for (p, f) in iter {
            gold.insert(p, f);
        }
        gold
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    posts: BTreeMap<String, Document>,
    factchecks: BTreeMap<String, Document>,
    gold: GoldPairs,
    languages: BTreeSet<String>,
}

impl Corpus {
    /// Validates every document and the referential integrity of `gold`.
    pub fn new(
        posts: impl IntoIterator<Item = Document>,
        factchecks: impl IntoIterator<Item = Document>,
        gold: GoldPairs,
    ) -> Result<Self> {
        let posts = index_documents(posts, DocKind::Post)?;
        let factchecks = index_documents(factchecks, DocKind::FactCheck)?;
        for (p, f) in gold.iter() {
            if !posts.contains_key(p) {
                return Err(Error::DanglingReference {
                    kind: DocKind::Post,
                    id: p.to_string(),
                });
            }
            if !factchecks.contains_key(f) {
                return Err(Error::DanglingReference {
                    kind: DocKind::FactCheck,
                    id: f.to_string(),
                });
            }
        }
        let languages = posts
            .values()
            .chain(factchecks.values())
            .map(|d| d.lang.clone())
            .collect();
        Ok(Self {
            posts,
            factchecks,
            gold,
            languages,
        })
    }

    pub fn posts(&self) -> &BTreeMap<String, Document> {
        &self.posts
    }

    pub fn factchecks(&self) -> &BTreeMap<String, Document> {
        &self.factchecks
    }

    pub fn gold(&self) -> &GoldPairs {
        &self.gold
    }

    pub fn languages(&self) -> &BTreeSet<String> {
        &self.languages
    }

    pub fn post(&self, id: &str) -> Option<&Document> {
        self.posts.get(id)
    }

    pub fn factcheck(&self, id: &str) -> Option<&Document> {
        self.factchecks.get(id)
    }

    pub fn documents(&self, kind: DocKind) -> &BTreeMap<String, Document> {
        match kind {
            DocKind::Post => &self.posts,
            DocKind::FactCheck => &self.factchecks,
        }
    }

    /// Post and fact-check ids in language `lang`, each in lexicographic order.
    pub fn split_by_language(&self, lang: &str) -> (Vec<String>, Vec<String>) {
        let pick = |m: &BTreeMap<String, Document>| {
            m.values()
                .filter(|d| d.lang == lang)
                .map(|d| d.id.clone())
                .collect()
        };
        (pick(&self.posts), pick(&self.factchecks))
    }

    /// A post belongs to the crosslingual track when it has gold pairs and
    /// none of its gold fact-checks shares its language.
    pub fn is_crosslingual(&self, post_id: &str) -> bool {
        let (Some(post), Some(gold)) = (self.posts.get(post_id), self.gold.for_post(post_id)) else {
            return false;
        };
        gold.iter()
            .filter_map(|f| self.factchecks.get(f))
            .all(|f| f.lang != post.lang)
    }

    /// Fails on the first post without an English translation.
    pub fn require_english(&self) -> Result<()> {
        match self.posts.values().find(|p| p.text_english.is_none()) {
            Some(p) => Err(Error::MissingEnglish(p.id.clone())),
            None => Ok(()),
        }
    }

    /// Writes the three JSONL files in canonical (id-sorted) order.
    pub fn write(&self, posts_path: &Path, factchecks_path: &Path, pairs_path: &Path) -> Result<()> {
        write_jsonl(posts_path, self.posts.values().map(DocRecord::from))?;
        write_jsonl(factchecks_path, self.factchecks.values().map(DocRecord::from))?;
        write_jsonl(
            pairs_path,
            self.gold.iter().map(|(p, f)| PairRecord {
                post_id: p.to_string(),
                factcheck_id: f.to_string(),
            }),
        )
    }
}

fn index_documents(
    docs: impl IntoIterator<Item = Document>,
    kind: DocKind,
) -> Result<BTreeMap<String, Document>> {
    let mut out = BTreeMap::new();
    for doc in docs {
        if doc.kind != kind {
            return Err(Error::InvalidDocument {
                id: doc.id,
                reason: format!("expected a {kind}"),
            });
        }
        doc.validate()?;
        if out.contains_key(&doc.id) {
            return Err(Error::DuplicateId { kind, id: doc.id });
        }
        out.insert(doc.id.clone(), doc);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct DocRecord {
    id: String,
    lang: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    english: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ocr: Option<String>,
}

impl From<&Document> for DocRecord {
    fn from(d: &Document) -> Self {
        Self {
            id: d.id.clone(),
            lang: d.lang.clone(),
            text: d.text_original.clone(),
            english: d.text_english.clone(),
            ocr: d.ocr_text.clone(),
        }
    }
}

impl DocRecord {
    fn into_document(self, kind: DocKind) -> Document {
        Document {
            id: self.id,
            kind,
            lang: self.lang,
            text_original: self.text,
            text_english: self.english,
            ocr_text: self.ocr,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRecord {
    post_id: String,
    factcheck_id: String,
}

/// Parses a JSONL file, skipping blank lines. Errors carry 1-based line numbers.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(&row).expect("record serialization is infallible");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_documents(path: &Path, kind: DocKind) -> Result<Vec<Document>> {
    let records: Vec<DocRecord> = read_jsonl(path)?;
    Ok(records.into_iter().map(|r| r.into_document(kind)).collect())
}

/// Loads posts, fact-checks and gold pairs from JSONL files.
pub fn load_corpus(posts_path: &Path, factchecks_path: &Path, pairs_path: &Path) -> Result<Corpus> {
    let posts = read_documents(posts_path, DocKind::Post)?;
    let factchecks = read_documents(factchecks_path, DocKind::FactCheck)?;
    let pairs: Vec<PairRecord> = read_jsonl(pairs_path)?;
    let gold = pairs
        .into_iter()
        .map(|p| (p.post_id, p.factcheck_id))
        .collect();
    Corpus::new(posts, factchecks, gold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn doc(kind: DocKind, id: &str, lang: &str) -> Document {
        Document {
            id: id.into(),
            kind,
            lang: lang.into(),
            text_original: format!("text of {id}"),
            text_english: Some(format!("english text of {id}")),
            ocr_text: None,
        }
    }

    fn write_files(dir: &Path, posts: &str, fcs: &str, pairs: &str) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
        let p = dir.join("posts.jsonl");
        let f = dir.join("factchecks.jsonl");
        let g = dir.join("pairs.jsonl");
        fs::write(&p, posts).unwrap();
        fs::write(&f, fcs).unwrap();
        fs::write(&g, pairs).unwrap();
        (p, f, g)
    }

    const POSTS: &str = r#"{"id":"p1","lang":"fra","text":"bonjour","english":"hello","ocr":"image"}
{"id":"p2","lang":"tha","text":"สวัสดี","english":"hi"}
"#;
    const FCS: &str = r#"{"id":"f1","lang":"fra","text":"faux","english":"false"}
{"id":"f2","lang":"tha","text":"เท็จ","english":"false"}
{"id":"f3","lang":"tha","text":"จริง","english":"true"}
"#;

    #[test]
    fn loads_small_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = "{\"post_id\":\"p1\",\"factcheck_id\":\"f1\"}\n{\"post_id\":\"p2\",\"factcheck_id\":\"f3\"}\n";
        let (p, f, g) = write_files(dir.path(), POSTS, FCS, pairs);
        let c = load_corpus(&p, &f, &g).unwrap();
        assert_eq!(c.posts().len(), 2);
        assert_eq!(c.factchecks().len(), 3);
        assert_eq!(c.gold().len(), 2);
        assert_eq!(c.post("p1").unwrap().ocr_text.as_deref(), Some("image"));
        assert_eq!(
            c.languages().iter().cloned().collect::<Vec<_>>(),
            vec!["fra".to_string(), "tha".to_string()]
        );
    }

    #[test]
    fn dangling_factcheck_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = "{\"post_id\":\"p1\",\"factcheck_id\":\"f9\"}\n";
        let (p, f, g) = write_files(dir.path(), POSTS, FCS, pairs);
        let err = load_corpus(&p, &f, &g).unwrap_err();
        assert!(matches!(err, Error::DanglingReference { kind: DocKind::FactCheck, ref id } if id == "f9"));
        assert!(err.to_string().contains("f9"));
    }

    #[test]
    fn empty_pairs_file_gives_empty_gold() {
        let dir = tempfile::tempdir().unwrap();
        let (p, f, g) = write_files(dir.path(), POSTS, FCS, "");
        let c = load_corpus(&p, &f, &g).unwrap();
        assert!(c.gold().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let fcs = format!("{FCS}{{\"id\": \"f4\", \"lang\": \n");
        let (p, f, g) = write_files(dir.path(), POSTS, &fcs, "");
        match load_corpus(&p, &f, &g).unwrap_err() {
            Error::MalformedLine { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn duplicate_id_within_kind_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let posts = format!("{POSTS}{{\"id\":\"p1\",\"lang\":\"fra\",\"text\":\"again\"}}\n");
        let (p, f, g) = write_files(dir.path(), &posts, FCS, "");
        assert!(matches!(
            load_corpus(&p, &f, &g).unwrap_err(),
            Error::DuplicateId { kind: DocKind::Post, .. }
        ));
    }

    #[test]
    fn same_id_across_kinds_is_allowed() {
        let c = Corpus::new(
            vec![doc(DocKind::Post, "x", "eng")],
            vec![doc(DocKind::FactCheck, "x", "eng")],
            GoldPairs::new(),
        );
        assert!(c.is_ok());
    }

    #[test]
    fn duplicate_pairs_are_deduplicated() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = "{\"post_id\":\"p1\",\"factcheck_id\":\"f1\"}\n{\"post_id\":\"p1\",\"factcheck_id\":\"f1\"}\n";
        let (p, f, g) = write_files(dir.path(), POSTS, FCS, pairs);
        assert_eq!(load_corpus(&p, &f, &g).unwrap().gold().len(), 1);
    }

    #[test]
    fn rejects_blank_text_and_bad_lang() {
        let mut d = doc(DocKind::Post, "p", "fra");
        d.text_original = "   ".into();
        assert!(Corpus::new(vec![d], vec![], GoldPairs::new()).is_err());
        let d = doc(DocKind::Post, "p", "FRA");
        assert!(Corpus::new(vec![d], vec![], GoldPairs::new()).is_err());
        let d = doc(DocKind::Post, "p", "");
        assert!(Corpus::new(vec![d], vec![], GoldPairs::new()).is_err());
    }

    #[test]
    fn load_is_order_independent() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = "{\"post_id\":\"p2\",\"factcheck_id\":\"f3\"}\n{\"post_id\":\"p1\",\"factcheck_id\":\"f1\"}\n";
        let (p, f, g) = write_files(dir.path(), POSTS, FCS, pairs);
        let a = load_corpus(&p, &f, &g).unwrap();

        let rev = |s: &str| s.lines().rev().map(|l| format!("{l}\n")).collect::<String>();
        let dir2 = tempfile::tempdir().unwrap();
        let (p, f, g) = write_files(dir2.path(), &rev(POSTS), &rev(FCS), &rev(pairs));
        let b = load_corpus(&p, &f, &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_by_language_filters() {
        let fcs = vec![
            doc(DocKind::FactCheck, "t3", "tha"),
            doc(DocKind::FactCheck, "t1", "tha"),
            doc(DocKind::FactCheck, "e1", "eng"),
            doc(DocKind::FactCheck, "t2", "tha"),
        ];
        let c = Corpus::new(vec![doc(DocKind::Post, "p", "eng")], fcs, GoldPairs::new()).unwrap();
        assert_eq!(
            c.split_by_language("tha"),
            (vec![], vec!["t1".to_string(), "t2".into(), "t3".into()])
        );
        assert_eq!(c.split_by_language("xxx"), (vec![], vec![]));
    }

    #[test]
    fn crosslingual_track_membership() {
        let mut gold = GoldPairs::new();
        gold.insert("p1", "f1");
        gold.insert("p2", "f2");
        let c = Corpus::new(
            vec![doc(DocKind::Post, "p1", "fra"), doc(DocKind::Post, "p2", "fra"), doc(DocKind::Post, "p3", "fra")],
            vec![doc(DocKind::FactCheck, "f1", "fra"), doc(DocKind::FactCheck, "f2", "eng")],
            gold,
        )
        .unwrap();
        assert!(!c.is_crosslingual("p1"));
        assert!(c.is_crosslingual("p2"));
        assert!(!c.is_crosslingual("p3"));
    }

    #[test]
    fn english_requirement() {
        let mut p = doc(DocKind::Post, "p", "fra");
        p.text_english = None;
        let c = Corpus::new(vec![p], vec![], GoldPairs::new()).unwrap();
        assert!(matches!(c.require_english(), Err(Error::MissingEnglish(id)) if id == "p"));
    }
}
