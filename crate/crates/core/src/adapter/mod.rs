//! Linear adapters over frozen embeddings.
//!
//! An adapter is a square matrix `W`; an adapted vector is `Wx / ‖Wx‖`. It is
//! trained with the in-batch multiple negatives ranking loss ([`mnrl`]) and
//! may be attached to queries, documents or both. An optional language scope
//! restricts training pairs and application to documents of one language on
//! the adapted side, which is how a single language's embedding space is
//! mapped onto the shared one.

pub mod mnrl;
pub mod train;

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embedding::{EmbeddingMatrix, Reader};
use crate::error::{Error, Result};
use crate::DocKind;

pub use mnrl::{mnrl_grad, mnrl_loss, mnrl_loss_and_grad, MnrlOutput, TrainingBatch};
pub use train::{train, train_with, TrainConfig, TrainOutcome};

pub const ADPT_MAGIC: &[u8; 4] = b"ADPT";

/// Which side of the similarity the adapter transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterSide {
    #[default]
    Both,
    Query,
    Document,
}

impl AdapterSide {
    pub fn adapts_queries(self) -> bool {
        matches!(self, AdapterSide::Both | AdapterSide::Query)
    }

    pub fn adapts_documents(self) -> bool {
        matches!(self, AdapterSide::Both | AdapterSide::Document)
    }

    pub fn adapts(self, kind: DocKind) -> bool {
        match kind {
            DocKind::Post => self.adapts_queries(),
            DocKind::FactCheck => self.adapts_documents(),
        }
    }

    fn code(self) -> u8 {
        match self {
            AdapterSide::Both => 0,
            AdapterSide::Query => 1,
            AdapterSide::Document => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(AdapterSide::Both),
            1 => Some(AdapterSide::Query),
            2 => Some(AdapterSide::Document),
            _ => None,
        }
    }
}

impl std::str::FromStr for AdapterSide {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "both" => Ok(AdapterSide::Both),
            "query" => Ok(AdapterSide::Query),
            "document" => Ok(AdapterSide::Document),
            other => Err(format!("unknown side `{other}` (expected both|query|document)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterModel {
    /// Base encoder this adapter was trained on.
    pub model_id: String,
    pub w: DMatrix<f64>,
    pub side: AdapterSide,
    pub scope: Option<String>,
}

impl AdapterModel {
    pub fn identity(model_id: impl Into<String>, dim: usize) -> Self {
        Self {
            model_id: model_id.into(),
            w: DMatrix::identity(dim, dim),
            side: AdapterSide::Both,
            scope: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// `W x / ‖W x‖` in f64.
    pub fn transform(&self, x: &[f32]) -> Result<DVector<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let x = DVector::from_iterator(x.len(), x.iter().map(|&v| v as f64));
        let y = &self.w * x;
        let norm = y.norm();
        if norm < 1e-12 {
            return Err(Error::DegenerateAdapter);
        }
        Ok(y / norm)
    }

    /// Canonical ADPT encoding. Version 1 holds model id, dim and `W`
    /// row-major; version 2 (written only for one-sided or scoped adapters)
    /// adds the side code and scope after the model id.
    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.dim();
        let v2 = self.side != AdapterSide::Both || self.scope.is_some();
        let mut out = Vec::with_capacity(16 + self.model_id.len() + dim * dim * 8);
        out.extend_from_slice(ADPT_MAGIC);
        out.extend_from_slice(&(if v2 { 2u16 } else { 1u16 }).to_le_bytes());
        put_str16(&mut out, &self.model_id);
        if v2 {
            out.push(self.side.code());
            put_str16(&mut out, self.scope.as_deref().unwrap_or(""));
        }
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        for r in 0..dim {
            for c in 0..dim {
                out.extend_from_slice(&self.w[(r, c)].to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != ADPT_MAGIC {
            return Err(Error::Format("bad adapter magic".into()));
        }
        let version = r.u16()?;
        if version != 1 && version != 2 {
            return Err(Error::Format(format!("unsupported adapter version {version}")));
        }
        let model_id = r.str16()?;
        let (side, scope) = if version == 2 {
            let side = AdapterSide::from_code(r.u8()?)
                .ok_or_else(|| Error::Format("bad adapter side code".into()))?;
            let scope = r.str16()?;
            (side, (!scope.is_empty()).then_some(scope))
        } else {
            (AdapterSide::Both, None)
        };
        let dim = r.u32()? as usize;
        if (dim as u64) * (dim as u64) * 8 != r.remaining() as u64 {
            return Err(Error::Format("adapter payload size does not match dim".into()));
        }
        let mut w = DMatrix::zeros(dim, dim);
        for row in 0..dim {
            for col in 0..dim {
                let v = f64::from_le_bytes(r.array()?);
                if !v.is_finite() {
                    return Err(Error::Format("non-finite adapter weight".into()));
                }
                w[(row, col)] = v;
            }
        }
        Ok(Self {
            model_id,
            w,
            side,
            scope,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_str16(out: &mut Vec<u8>, s: &str) {
    let len = u16::try_from(s.len()).expect("identifier longer than 65535 bytes");
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Identifier given to matrices produced by an adapter.
pub fn adapted_model_id(base: &str) -> String {
    format!("{base}+adapter")
}

/// Replaces every row with its adapted, renormalized version.
pub fn apply_adapter(adapter: &AdapterModel, matrix: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    apply_adapter_where(adapter, matrix, |_| true)
}

/// Like [`apply_adapter`] but rows for which `select(id)` is false are
/// copied unchanged.
pub fn apply_adapter_where(
    adapter: &AdapterModel,
    matrix: &EmbeddingMatrix,
    select: impl Fn(&str) -> bool,
) -> Result<EmbeddingMatrix> {
    if adapter.dim() != matrix.dim() {
        return Err(Error::DimMismatch {
            expected: adapter.dim(),
            found: matrix.dim(),
        });
    }
    let mut vectors = Vec::with_capacity(matrix.len() * matrix.dim());
    for (id, row) in matrix.rows() {
        if select(id) {
            let a = adapter.transform(row)?;
            vectors.extend(a.iter().map(|&v| v as f32));
        } else {
            vectors.extend_from_slice(row);
        }
    }
    let (out, _) = EmbeddingMatrix::from_rows(
        adapted_model_id(matrix.model_id()),
        matrix.channel(),
        matrix.kind(),
        matrix.dim(),
        matrix.ids().to_vec(),
        vectors,
    )?;
    Ok(out)
}

/// Applies the adapter to whichever sides it was trained for, honoring its
/// language scope. Both outputs carry the adapted model id so they can be
/// registered and retrieved together. `corpus` is required for scoped
/// adapters.
pub fn adapt_matrix(
    adapter: &AdapterModel,
    matrix: &EmbeddingMatrix,
    corpus: Option<&Corpus>,
) -> Result<EmbeddingMatrix> {
    if !adapter.side.adapts(matrix.kind()) {
        return apply_adapter_where(adapter, matrix, |_| false);
    }
    match &adapter.scope {
        None => apply_adapter(adapter, matrix),
        Some(lang) => {
            let corpus = corpus.ok_or_else(|| {
                Error::Config(format!("adapter is scoped to `{lang}`; a corpus is needed to apply it"))
            })?;
            let docs = corpus.documents(matrix.kind());
            apply_adapter_where(adapter, matrix, |id| docs.get(id).is_some_and(|d| &d.lang == lang))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::l2_norm;
    use crate::Channel;

    fn matrix() -> EmbeddingMatrix {
        let v = vec![1.0, 0.0, 0.0, 0.0, 0.6, 0.8, 0.48, 0.6, 0.64];
        EmbeddingMatrix::from_rows(
            "base",
            Channel::Original,
            DocKind::FactCheck,
            3,
            vec!["a".into(), "b".into(), "c".into()],
            v,
        )
        .unwrap()
        .0
    }

    #[test]
    fn identity_and_scaled_identity_preserve_rows() {
        let m = matrix();
        for c in [1.0, 2.0] {
            let mut a = AdapterModel::identity("base", 3);
            a.w *= c;
            let out = apply_adapter(&a, &m).unwrap();
            assert_eq!(out.model_id(), "base+adapter");
            for ((_, x), (_, y)) in m.rows().zip(out.rows()) {
                for (p, q) in x.iter().zip(y) {
                    assert!((p - q).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn output_rows_are_unit_norm() {
        let mut a = AdapterModel::identity("base", 3);
        a.w = DMatrix::from_row_slice(3, 3, &[0.3, -1.2, 0.5, 2.0, 0.1, -0.7, 0.05, 0.9, 1.4]);
        let out = apply_adapter(&a, &matrix()).unwrap();
        for (_, row) in out.rows() {
            assert!((l2_norm(row) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn dim_mismatch_and_degenerate() {
        let a = AdapterModel::identity("base", 4);
        assert!(matches!(apply_adapter(&a, &matrix()), Err(Error::DimMismatch { .. })));
        let mut a = AdapterModel::identity("base", 3);
        a.w = DMatrix::zeros(3, 3);
        assert!(matches!(apply_adapter(&a, &matrix()), Err(Error::DegenerateAdapter)));
    }

    #[test]
    fn one_sided_adapter_copies_other_side() {
        let mut a = AdapterModel::identity("base", 3);
        a.w = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        a.side = AdapterSide::Query;
        let m = matrix();
        let out = adapt_matrix(&a, &m, None).unwrap();
        assert_eq!(out.model_id(), "base+adapter");
        assert_eq!(out.row(1), m.row(1));
        a.side = AdapterSide::Document;
        assert_ne!(adapt_matrix(&a, &m, None).unwrap().row(0), m.row(0));
    }

    #[test]
    fn adpt_layout_v1() {
        let a = AdapterModel::identity("m", 2);
        let b = a.to_bytes();
        assert_eq!(&b[..4], b"ADPT");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(&b[6..9], &[1, 0, b'm']);
        assert_eq!(&b[9..13], &[2, 0, 0, 0]);
        assert_eq!(b.len(), 13 + 4 * 8);
        assert_eq!(&b[13..21], &1.0f64.to_le_bytes());
        assert_eq!(AdapterModel::from_bytes(&b).unwrap(), a);
    }

    #[test]
    fn adpt_v2_carries_side_and_scope() {
        let mut a = AdapterModel::identity("m", 2);
        a.side = AdapterSide::Document;
        a.scope = Some("spa".into());
        a.w[(0, 1)] = -0.25;
        let b = a.to_bytes();
        assert_eq!(&b[4..6], &[2, 0]);
        assert_eq!(AdapterModel::from_bytes(&b).unwrap(), a);
        assert!(AdapterModel::from_bytes(&b[..b.len() - 1]).is_err());
    }
}
