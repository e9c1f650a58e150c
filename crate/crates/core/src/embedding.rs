//! Embedding matrices and the EMBX interchange format.
//!
//! EMBX layout, little-endian, no padding:
//!
//! ```text
//! "EMBX" | u16 version (1) | u8 channel | u8 kind
//! | u16 len + model_id (UTF-8) | u32 dim | u64 n
//! | n × ( u16 len + id (UTF-8) | dim × f32 )
//! ```
//!
//! Rows are stored unit-normalized so that cosine similarity reduces to a dot
//! product. Rows whose norm is off by more than [`NORM_TOLERANCE`] are
//! renormalized on import and counted in [`ImportSummary`].

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Channel, DocKind};

pub const EMBX_MAGIC: &[u8; 4] = b"EMBX";
pub const EMBX_VERSION: u16 = 1;
pub const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    model_id: String,
    channel: Channel,
    kind: DocKind,
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ImportSummary {
    pub rows: usize,
    pub renormalized: usize,
}

impl EmbeddingMatrix {
    /// Builds a matrix from row-major `vectors`, renormalizing rows outside
    /// tolerance. NaN/Inf and zero rows are rejected.
    pub fn from_rows(
        model_id: impl Into<String>,
        channel: Channel,
        kind: DocKind,
        dim: usize,
        ids: Vec<String>,
        mut vectors: Vec<f32>,
    ) -> Result<(Self, ImportSummary)> {
        if dim == 0 {
            return Err(Error::Format("dimension must be positive".into()));
        }
        if vectors.len() != ids.len() * dim {
            return Err(Error::Format(format!(
                "expected {} floats for {} rows of dim {dim}, found {}",
                ids.len() * dim,
                ids.len(),
                vectors.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateEmbeddingId(id.clone()));
            }
        }
        let mut renormalized = 0;
        for (id, row) in ids.iter().zip(vectors.chunks_exact_mut(dim)) {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { id: id.clone() });
            }
            let norm = l2_norm(row);
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                if norm < 1e-12 {
                    return Err(Error::Format(format!("row `{id}` has zero norm")));
                }
                for x in row.iter_mut() {
                    *x = (*x as f64 / norm) as f32;
                }
                renormalized += 1;
            }
        }
        let summary = ImportSummary {
            rows: ids.len(),
            renormalized,
        };
        Ok((
            Self {
                model_id: model_id.into(),
                channel,
                kind,
                dim,
                ids,
                index,
                vectors,
            },
            summary,
        ))
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn kind(&self) -> DocKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.vectors.chunks_exact(self.dim))
    }

    /// The stored unit vector for `id`.
    pub fn lookup(&self, id: &str) -> Result<&[f32]> {
        self.position(id)
            .map(|i| self.row(i))
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    /// Canonical EMBX encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.vectors.len() * 4 + self.ids.len() * 16);
        out.extend_from_slice(EMBX_MAGIC);
        out.extend_from_slice(&EMBX_VERSION.to_le_bytes());
        out.push(self.channel.code());
        out.push(self.kind.code());
        put_str16(&mut out, &self.model_id);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for (id, row) in self.rows() {
            put_str16(&mut out, id);
            for x in row {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, ImportSummary)> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != EMBX_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u16()?;
        if version != EMBX_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let channel = Channel::from_code(r.u8()?)
            .ok_or_else(|| Error::Format("bad channel code".into()))?;
        let kind =
            DocKind::from_code(r.u8()?).ok_or_else(|| Error::Format("bad kind code".into()))?;
        let model_id = r.str16()?;
        let dim = r.u32()? as usize;
        let n = r.u64()?;
        // Each record needs at least 2 + 4*dim bytes; reject impossible counts
        // before allocating.
        let min_record = 2 + 4 * dim as u64;
        if n.saturating_mul(min_record) > r.remaining() as u64 {
            return Err(Error::Format("truncated payload".into()));
        }
        let n = n as usize;
        let mut ids = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n * dim);
        for _ in 0..n {
            ids.push(r.str16()?);
            for _ in 0..dim {
                vectors.push(f32::from_le_bytes(r.array()?));
            }
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        Self::from_rows(model_id, channel, kind, dim, ids, vectors)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Reads and validates an EMBX file.
pub fn import_matrix(path: &Path) -> Result<(EmbeddingMatrix, ImportSummary)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::from_bytes(&bytes)
}

pub(crate) fn l2_norm(row: &[f32]) -> f64 {
    row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

fn put_str16(out: &mut Vec<u8>, s: &str) {
    let len = u16::try_from(s.len()).expect("identifier longer than 65535 bytes");
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Bounds-checked little-endian cursor.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format("truncated payload".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    pub(crate) fn str16(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Format("identifier is not valid UTF-8".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub model_id: String,
    pub channel: Channel,
    pub kind: DocKind,
    pub dim: usize,
    pub rows: usize,
    pub path: PathBuf,
}

/// Index of the matrices available in a store directory, keyed by
/// (model_id, channel, kind).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ModelRegistry {
    entries: BTreeMap<(String, Channel, DocKind), RegistryEntry>,
}

impl ModelRegistry {
    pub const FILE_NAME: &'static str = "registry.json";

    pub fn new() -> Self {
        Self::default()
    }

    /// Re-registering an identical entry is a no-op; a different entry under
    /// the same key is a conflict.
    pub fn register(&mut self, entry: RegistryEntry) -> Result<()> {
        let key = (entry.model_id.clone(), entry.channel, entry.kind);
        match self.entries.get(&key) {
            Some(existing) if *existing == entry => Ok(()),
            Some(_) => Err(Error::RegistryConflict {
                model_id: entry.model_id,
                channel: entry.channel,
                kind: entry.kind,
            }),
            None => {
                self.entries.insert(key, entry);
                Ok(())
            }
        }
    }

    /// Drops an existing entry so it can be re-registered.
    pub fn remove(&mut self, model_id: &str, channel: Channel, kind: DocKind) -> Option<RegistryEntry> {
        self.entries.remove(&(model_id.to_string(), channel, kind))
    }

    pub fn get(&self, model_id: &str, channel: Channel, kind: DocKind) -> Option<&RegistryEntry> {
        self.entries.get(&(model_id.to_string(), channel, kind))
    }

    pub fn entries(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.values()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(Self::FILE_NAME);
        if !path.exists() {
            return Ok(Self::new());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let list: Vec<RegistryEntry> = serde_json::from_str(&text).map_err(|e| Error::MalformedLine {
            path: path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let mut reg = Self::new();
        for entry in list {
            reg.register(entry)?;
        }
        Ok(reg)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(Self::FILE_NAME);
        let list: Vec<&RegistryEntry> = self.entries.values().collect();
        let text = serde_json::to_string_pretty(&list).expect("registry serialization is infallible");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Loads the matrix registered under the key; relative paths resolve
    /// against `dir`.
    pub fn open(
        &self,
        dir: &Path,
        model_id: &str,
        channel: Channel,
        kind: DocKind,
    ) -> Result<EmbeddingMatrix> {
        let entry = self.get(model_id, channel, kind).ok_or_else(|| {
            Error::Config(format!(
                "no {kind} embeddings registered for model `{model_id}` ({channel})"
            ))
        })?;
        let (m, _) = import_matrix(&dir.join(&entry.path))?;
        if m.model_id() != model_id || m.channel() != channel || m.kind() != kind {
            return Err(Error::Format(format!(
                "{} does not match its registry entry",
                entry.path.display()
            )));
        }
        Ok(m)
    }
}

/// File name used for a matrix inside a store directory.
pub fn store_file_name(model_id: &str, channel: Channel, kind: DocKind) -> String {
    let safe: String = model_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    format!("{safe}.{channel}.{kind}.embx")
}

/// Writes `matrix` into the store directory and registers it, replacing any
/// previous matrix under the same key when `replace` is set.
pub fn store_matrix(dir: &Path, registry: &mut ModelRegistry, matrix: &EmbeddingMatrix, replace: bool) -> Result<()> {
    let file = store_file_name(matrix.model_id(), matrix.channel(), matrix.kind());
    let entry = RegistryEntry {
        model_id: matrix.model_id().to_string(),
        channel: matrix.channel(),
        kind: matrix.kind(),
        dim: matrix.dim(),
        rows: matrix.len(),
        path: PathBuf::from(&file),
    };
    if replace {
        registry.remove(&entry.model_id, entry.channel, entry.kind);
    }
    registry.register(entry)?;
    matrix.write(&dir.join(file))
}
