//! Multiple negatives ranking loss with in-batch negatives.
//!
//! For a batch of `N` (query, positive) pairs the logits are
//! `L[i][j] = scale · ⟨a(q_i), a(p_j)⟩` and the loss is softmax
//! cross-entropy with the diagonal as targets:
//!
//! ```text
//! loss = -(1/N) Σ_i ( L[i][i] - log Σ_j exp L[i][j] )
//! ```
//!
//! The positive is part of the denominator; every other positive in the
//! batch acts as a negative.
//!
//! Gradient: with `G = (softmax(L) - I) / N`,
//! `∂loss/∂a(q_i) = scale · Σ_j G[i][j] a(p_j)` and
//! `∂loss/∂a(p_j) = scale · Σ_i G[i][j] a(q_i)`. The normalization
//! `a = y/‖y‖`, `y = Wx` has Jacobian `(I - a aᵀ)/‖y‖`, so each adapted
//! vector contributes `((I - a aᵀ) ∂a / ‖y‖) xᵀ` to `∂loss/∂W`.

use nalgebra::DMatrix;

use super::AdapterSide;
use crate::error::{Error, Result};

/// Frozen embeddings: row `i` of `positives` is a gold document for row `i`
/// of `queries`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub queries: DMatrix<f64>,
    pub positives: DMatrix<f64>,
}

impl TrainingBatch {
    pub fn new(queries: DMatrix<f64>, positives: DMatrix<f64>) -> Result<Self> {
        if queries.shape() != positives.shape() {
            return Err(Error::Config(format!(
                "query block {:?} and positive block {:?} differ in shape",
                queries.shape(),
                positives.shape()
            )));
        }
        if queries.nrows() == 0 {
            return Err(Error::Config("empty training batch".into()));
        }
        Ok(Self { queries, positives })
    }

    pub fn len(&self) -> usize {
        self.queries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.queries.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct MnrlOutput {
    pub loss: f64,
    pub logits: DMatrix<f64>,
}

struct Adapted {
    /// Unit rows.
    unit: DMatrix<f64>,
    /// ‖W x‖ per row.
    norms: Vec<f64>,
}

fn adapt(x: &DMatrix<f64>, w: &DMatrix<f64>, apply: bool) -> Result<Adapted> {
    let mut unit = if apply { x * w.transpose() } else { x.clone() };
    let mut norms = Vec::with_capacity(unit.nrows());
    for mut row in unit.row_iter_mut() {
        let n = row.norm();
        if n < 1e-12 {
            return Err(Error::DegenerateAdapter);
        }
        row /= n;
        norms.push(n);
    }
    Ok(Adapted { unit, norms })
}

struct Forward {
    loss: f64,
    /// Row-wise softmax of the logits.
    probs: DMatrix<f64>,
    logits: DMatrix<f64>,
    q: Adapted,
    p: Adapted,
}

fn forward(batch: &TrainingBatch, w: &DMatrix<f64>, scale: f64, side: AdapterSide) -> Result<Forward> {
    if w.nrows() != batch.dim() || w.ncols() != batch.dim() {
        return Err(Error::DimMismatch {
            expected: batch.dim(),
            found: w.nrows(),
        });
    }
    let q = adapt(&batch.queries, w, side.adapts_queries())?;
    let p = adapt(&batch.positives, w, side.adapts_documents())?;
    let logits = (&q.unit * p.unit.transpose()) * scale;
    let n = batch.len();
    let mut probs = DMatrix::zeros(n, n);
    let mut total = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let max = row.max();
        let sum: f64 = row.iter().map(|&l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - logits[(i, i)];
        for j in 0..n {
            probs[(i, j)] = (logits[(i, j)] - lse).exp();
        }
    }
    Ok(Forward {
        loss: total / n as f64,
        probs,
        logits,
        q,
        p,
    })
}

pub fn mnrl_loss(batch: &TrainingBatch, w: &DMatrix<f64>, scale: f64, side: AdapterSide) -> Result<MnrlOutput> {
    let f = forward(batch, w, scale, side)?;
    Ok(MnrlOutput {
        loss: f.loss,
        logits: f.logits,
    })
}

pub fn mnrl_grad(batch: &TrainingBatch, w: &DMatrix<f64>, scale: f64, side: AdapterSide) -> Result<DMatrix<f64>> {
    mnrl_loss_and_grad(batch, w, scale, side).map(|(_, g)| g)
}

pub fn mnrl_loss_and_grad(
    batch: &TrainingBatch,
    w: &DMatrix<f64>,
    scale: f64,
    side: AdapterSide,
) -> Result<(MnrlOutput, DMatrix<f64>)> {
    let Forward { loss, probs, logits, q, p } = forward(batch, w, scale, side)?;
    let n = batch.len();
    let g = (probs - DMatrix::<f64>::identity(n, n)) / n as f64;
    let mut grad = DMatrix::zeros(w.nrows(), w.ncols());
    if side.adapts_queries() {
        let d_unit = (&g * &p.unit) * scale;
        grad += back_through_norm(&q, &d_unit).transpose() * &batch.queries;
    }
    if side.adapts_documents() {
        let d_unit = (g.transpose() * &q.unit) * scale;
        grad += back_through_norm(&p, &d_unit).transpose() * &batch.positives;
    }
    Ok((MnrlOutput { loss, logits }, grad))
}

// Rows of ∂loss/∂y given rows of ∂loss/∂a, where a = y/‖y‖.
fn back_through_norm(a: &Adapted, d_unit: &DMatrix<f64>) -> DMatrix<f64> {
    let mut dy = d_unit.clone();
    for (i, mut row) in dy.row_iter_mut().enumerate() {
        let ai = a.unit.row(i);
        let radial = ai.dot(&row);
        row -= ai * radial;
        row /= a.norms[i];
    }
    dy
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(q: &[&[f64]], p: &[&[f64]]) -> TrainingBatch {
        let d = q[0].len();
        let rows = |x: &[&[f64]]| DMatrix::from_row_slice(x.len(), d, &x.concat());
        TrainingBatch::new(rows(q), rows(p)).unwrap()
    }

    #[test]
    fn single_pair_has_zero_loss() {
        let b = batch(&[&[0.6, 0.8]], &[&[1.0, 0.0]]);
        let out = mnrl_loss(&b, &DMatrix::identity(2, 2), 20.0, AdapterSide::Both).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn identical_rows_give_ln_n() {
        let r: &[f64] = &[0.0, 1.0, 0.0];
        for n in [2usize, 3, 7] {
            let b = batch(&vec![r; n], &vec![r; n]);
            let out = mnrl_loss(&b, &DMatrix::identity(3, 3), 20.0, AdapterSide::Both).unwrap();
            assert!((out.loss - (n as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_pair_closed_form() {
        let b = batch(&[&[1.0, 0.0], &[0.0, 1.0]], &[&[1.0, 0.0], &[0.0, 1.0]]);
        let out = mnrl_loss(&b, &DMatrix::identity(2, 2), 1.0, AdapterSide::Both).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((out.loss - expected).abs() < 1e-12);
        assert!((out.loss - 0.313262).abs() < 1e-6);
        assert_eq!(out.logits, DMatrix::identity(2, 2));
    }

    #[test]
    fn degenerate_adapter_errors() {
        let b = batch(&[&[1.0, 0.0]], &[&[0.0, 1.0]]);
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(mnrl_loss(&b, &w, 1.0, AdapterSide::Both), Err(Error::DegenerateAdapter)));
        // only documents adapted: W p = p, fine
        assert!(mnrl_loss(&b, &w, 1.0, AdapterSide::Document).is_ok());
    }

    #[test]
    fn gradient_orthogonal_to_w() {
        // loss(cW) = loss(W) ⇒ ⟨∇, W⟩_F = 0
        let b = batch(
            &[&[0.6, 0.8, 0.0], &[0.0, 0.6, 0.8], &[0.8, 0.0, 0.6]],
            &[&[0.8, 0.6, 0.0], &[0.0, 0.8, 0.6], &[0.6, 0.0, 0.8]],
        );
        let w = DMatrix::from_row_slice(3, 3, &[1.1, 0.2, -0.1, 0.0, 0.9, 0.3, 0.05, -0.2, 1.0]);
        for side in [AdapterSide::Both, AdapterSide::Query, AdapterSide::Document] {
            let g = mnrl_grad(&b, &w, 5.0, side).unwrap();
            assert!(g.dot(&w).abs() < 1e-8, "{side:?}");
        }
    }

    #[test]
    fn unadapted_sides_have_zero_gradient_when_nothing_adapts() {
        let b = batch(&[&[1.0, 0.0], &[0.0, 1.0]], &[&[0.8, 0.6], &[0.6, 0.8]]);
        let w = DMatrix::identity(2, 2);
        let both = mnrl_grad(&b, &w, 3.0, AdapterSide::Both).unwrap();
        let q = mnrl_grad(&b, &w, 3.0, AdapterSide::Query).unwrap();
        let d = mnrl_grad(&b, &w, 3.0, AdapterSide::Document).unwrap();
        assert!((both - (q + d)).norm() < 1e-12);
    }
}
