//! Social media text cleaning and the combined post representation.
//!
//! Cleaning runs in a fixed order: emoji code points, then URLs, then
//! `#`-prefixed tokens, then whitespace. Each stage only deletes, so the
//! result never contains code points the input did not have (apart from the
//! single spaces produced by whitespace collapsing).

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::{Channel, DocKind};

static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:https?://|www\.)\S+").expect("valid URL pattern"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningConfig {
    pub strip_urls: bool,
    pub strip_hashtags: bool,
    pub strip_emoji: bool,
    pub collapse_whitespace: bool,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            strip_urls: true,
            strip_hashtags: true,
            strip_emoji: true,
            collapse_whitespace: true,
        }
    }
}

/// Code points removed by `strip_emoji`.
pub const EMOJI_RANGES: &[(char, char)] = &[
    ('\u{1F300}', '\u{1FAFF}'),
    ('\u{2600}', '\u{27BF}'),
    ('\u{FE0F}', '\u{FE0F}'),
    ('\u{200D}', '\u{200D}'),
    ('\u{1F1E6}', '\u{1F1FF}'),
];

pub fn is_emoji(c: char) -> bool {
    EMOJI_RANGES.iter().any(|&(lo, hi)| (lo..=hi).contains(&c))
}

pub fn clean_text(raw: &str, cfg: &CleaningConfig) -> String {
    let mut s: String = if cfg.strip_emoji {
        raw.chars().filter(|&c| !is_emoji(c)).collect()
    } else {
        raw.to_string()
    };
    if cfg.strip_urls {
        s = URL.replace_all(&s, "").into_owned();
    }
    if cfg.strip_hashtags {
        s = remove_hashtag_tokens(&s);
    }
    if cfg.collapse_whitespace {
        s.split_whitespace().collect::<Vec<_>>().join(" ")
    } else {
        s.trim().to_string()
    }
}

// Drops whole whitespace-delimited tokens that start with `#`, keeping the
// surrounding whitespace untouched.
fn remove_hashtag_tokens(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_tag = false;
    let mut at_token_start = true;
    for c in s.chars() {
        if c.is_whitespace() {
            in_tag = false;
            at_token_start = true;
            out.push(c);
            continue;
        }
        if at_token_start {
            in_tag = c == '#';
            at_token_start = false;
        }
        if !in_tag {
            out.push(c);
        }
    }
    out
}

/// Cleaned channel text of a post followed by its cleaned OCR text.
pub fn combine_post(post: &Document, cfg: &CleaningConfig, channel: Channel) -> Result<String> {
    if post.kind != DocKind::Post {
        return Err(Error::InvalidDocument {
            id: post.id.clone(),
            reason: "combine_post expects a post".into(),
        });
    }
    let body = post
        .channel_text(channel)
        .ok_or_else(|| Error::MissingEnglish(post.id.clone()))?;
    let body = clean_text(body, cfg);
    let ocr = post
        .ocr_text
        .as_deref()
        .map(|o| clean_text(o, cfg))
        .unwrap_or_default();
    Ok(match (body.is_empty(), ocr.is_empty()) {
        (_, true) => body,
        (true, false) => ocr,
        (false, false) => format!("{body} {ocr}"),
    })
}

/// Text handed to the encoder for any document: the combined representation
/// for posts and the cleaned channel text for fact-checks.
pub fn prepare_document(doc: &Document, cfg: &CleaningConfig, channel: Channel) -> Result<String> {
    match doc.kind {
        DocKind::Post => combine_post(doc, cfg, channel),
        DocKind::FactCheck => doc
            .channel_text(channel)
            .map(|t| clean_text(t, cfg))
            .ok_or_else(|| Error::MissingEnglish(doc.id.clone())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(text: &str, english: Option<&str>, ocr: Option<&str>) -> Document {
        Document {
            id: "p".into(),
            kind: DocKind::Post,
            lang: "eng".into(),
            text_original: text.into(),
            text_english: english.map(Into::into),
            ocr_text: ocr.map(Into::into),
        }
    }

    #[test]
    fn strips_url_hashtag_emoji() {
        let cfg = CleaningConfig::default();
        assert_eq!(clean_text("Check this! https://t.co/x #fake 😂", &cfg), "Check this!");
        assert_eq!(clean_text("", &cfg), "");
    }

    #[test]
    fn url_forms() {
        let cfg = CleaningConfig::default();
        assert_eq!(clean_text("see www.example.com/a?b now", &cfg), "see now");
        assert_eq!(clean_text("http://a.b", &cfg), "");
        assert_eq!(clean_text("prefixhttps://x.y/z tail", &cfg), "prefix tail");
    }

    #[test]
    fn hashtag_removes_whole_token_only_at_start() {
        let cfg = CleaningConfig::default();
        assert_eq!(clean_text("a #tag b c#d", &cfg), "a b c#d");
        assert_eq!(clean_text("# lone", &cfg), "lone");
    }

    #[test]
    fn emoji_removal_exposes_hashtag() {
        let cfg = CleaningConfig::default();
        assert_eq!(clean_text("x 🔥#tag y", &cfg), "x y");
    }

    #[test]
    fn flags_disable_rules() {
        let cfg = CleaningConfig {
            strip_urls: false,
            strip_hashtags: false,
            strip_emoji: false,
            collapse_whitespace: false,
        };
        assert_eq!(clean_text("  a  #b 😂 http://c  ", &cfg), "a  #b 😂 http://c");
    }

    #[test]
    fn keeps_case_and_diacritics() {
        let cfg = CleaningConfig::default();
        assert_eq!(clean_text("ÉTÉ Ça  VA", &cfg), "ÉTÉ Ça VA");
    }

    #[test]
    fn regional_indicators_and_zwj() {
        let cfg = CleaningConfig::default();
        assert_eq!(clean_text("flag 🇫🇷 family 👨\u{200D}👩 ok\u{FE0F}", &cfg), "flag family ok");
    }

    #[test]
    fn combine_appends_ocr() {
        let cfg = CleaningConfig::default();
        let p = post("claim A", Some("claim A"), Some("photo text"));
        assert_eq!(combine_post(&p, &cfg, Channel::Original).unwrap(), "claim A photo text");
        let p = post("claim A", None, None);
        assert_eq!(combine_post(&p, &cfg, Channel::Original).unwrap(), "claim A");
        let p = post("#only", None, Some("x"));
        assert_eq!(combine_post(&p, &cfg, Channel::Original).unwrap(), "x");
    }

    #[test]
    fn combine_english_requires_translation() {
        let cfg = CleaningConfig::default();
        let p = post("texte", None, None);
        assert!(matches!(
            combine_post(&p, &cfg, Channel::English),
            Err(Error::MissingEnglish(_))
        ));
        let p = post("texte", Some("text"), Some("ocr"));
        assert_eq!(combine_post(&p, &cfg, Channel::English).unwrap(), "text ocr");
    }
}
