//! Retrieval of previously fact-checked claims for social media posts.
//!
//! The crate is organised as a pipeline:
//!
//! ```text
//! corpus ──► text ──► (external encoder) ──► embedding ──► retrieval ──► eval
//!                                              │              │
//!                                              ▼              ▼
//!                                           adapter        ensemble
//! ```
//!
//! Embeddings are produced outside this crate and exchanged through the EMBX
//! binary format (see [`embedding`]). Everything downstream of the vectors is
//! exact and deterministic: retrieval is a brute-force top-k over unit
//! vectors, the adapter trainer is seeded, and fusion breaks ties by id.

pub mod adapter;
pub mod corpus;
pub mod embedding;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod retrieval;
pub mod synth;
pub mod text;

use serde::{Deserialize, Serialize};

pub use corpus::{Corpus, Document, GoldPairs};
pub use embedding::{EmbeddingMatrix, ModelRegistry};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use retrieval::{Hit, RankedList};

/// Which text variant of a document was embedded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Original,
    English,
}

impl Channel {
    pub fn code(self) -> u8 {
        match self {
            Channel::Original => 0,
            Channel::English => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Channel::Original),
            1 => Some(Channel::English),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Original => "original",
            Channel::English => "english",
        }
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "original" => Ok(Channel::Original),
            "english" => Ok(Channel::English),
            other => Err(format!("unknown channel `{other}` (expected original|english)")),
        }
    }
}

/// Post or fact-check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocKind {
    Post,
    #[serde(rename = "factcheck")]
    FactCheck,
}

impl DocKind {
    pub fn code(self) -> u8 {
        match self {
            DocKind::Post => 0,
            DocKind::FactCheck => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DocKind::Post),
            1 => Some(DocKind::FactCheck),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DocKind::Post => "post",
            DocKind::FactCheck => "factcheck",
        }
    }
}

impl std::fmt::Display for DocKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DocKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "post" => Ok(DocKind::Post),
            "factcheck" => Ok(DocKind::FactCheck),
            other => Err(format!("unknown kind `{other}` (expected post|factcheck)")),
        }
    }
}
