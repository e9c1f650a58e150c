//! Seeded Adam training loop for linear adapters.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mnrl::{mnrl_loss_and_grad, TrainingBatch};
use super::{AdapterModel, AdapterSide};
use crate::corpus::Corpus;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Nominal learning rate on the encoder fine-tuning scale.
    pub learning_rate: f64,
    pub epochs: usize,
    pub warmup_steps: usize,
    /// Multiplier on cosine similarities before the softmax.
    pub scale: f64,
    pub seed: u64,
    /// Effective Adam step size is `learning_rate * lr_scale`. A dim×dim
    /// adapter needs far larger steps than a transformer's weights.
    pub lr_scale: f64,
    pub side: AdapterSide,
    /// Restrict training pairs to those whose adapted-side document is in
    /// this language.
    pub scope: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 3e-5,
            epochs: 3,
            warmup_steps: 100,
            scale: 20.0,
            seed: 0,
            lr_scale: 1e4,
            side: AdapterSide::Both,
            scope: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(2..=16).contains(&self.batch_size) {
            return bad(format!("batch_size {} outside [2, 16]", self.batch_size));
        }
        // Zero is accepted as an explicit no-op run.
        let lr = self.learning_rate;
        if !(lr == 0.0 || (1e-5..=3e-5).contains(&lr)) {
            return bad(format!("learning_rate {lr} outside [1e-5, 3e-5]"));
        }
        if !(1..=3).contains(&self.epochs) {
            return bad(format!("epochs {} outside [1, 3]", self.epochs));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return bad(format!("scale {} must be positive", self.scale));
        }
        if !(self.lr_scale.is_finite() && self.lr_scale > 0.0) {
            return bad(format!("lr_scale {} must be positive", self.lr_scale));
        }
        Ok(())
    }

    /// Learning rate for 0-based optimizer step `step`: linear ramp from 0
    /// over `warmup_steps`, then constant.
    pub fn lr_at(&self, step: usize) -> f64 {
        let peak = self.learning_rate * self.lr_scale;
        if step < self.warmup_steps {
            peak * step as f64 / self.warmup_steps as f64
        } else {
            peak
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub adapter: AdapterModel,
    /// Loss of every optimizer step, evaluated before the update.
    pub step_losses: Vec<f64>,
    /// Mean step loss per epoch.
    pub epoch_losses: Vec<f64>,
}

struct Adam {
    m: DMatrix<f64>,
    v: DMatrix<f64>,
    t: i32,
}

impl Adam {
    fn new(dim: usize) -> Self {
        Self {
            m: DMatrix::zeros(dim, dim),
            v: DMatrix::zeros(dim, dim),
            t: 0,
        }
    }

    fn step(&mut self, w: &mut DMatrix<f64>, grad: &DMatrix<f64>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for ((wi, &g), (m, v)) in w
            .iter_mut()
            .zip(grad.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *wi -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
}

fn row_f64(m: &EmbeddingMatrix, id: &str) -> Result<Vec<f64>> {
    m.lookup(id)
        .map(|r| r.iter().map(|&x| x as f64).collect())
        .map_err(|_| Error::MissingEmbedding(id.to_string()))
}

/// Gold pairs eligible for training as (query row, positive row) vectors.
fn training_pairs(
    corpus: &Corpus,
    posts: &EmbeddingMatrix,
    factchecks: &EmbeddingMatrix,
    cfg: &TrainConfig,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut pairs = Vec::new();
    for (p, f) in corpus.gold().iter() {
        if let Some(lang) = &cfg.scope {
            let post_lang = &corpus.post(p).expect("gold integrity").lang;
            let fc_lang = &corpus.factcheck(f).expect("gold integrity").lang;
            let in_scope = (cfg.side.adapts_queries() && post_lang == lang)
                || (cfg.side.adapts_documents() && fc_lang == lang);
            if !in_scope {
                continue;
            }
        }
        pairs.push((row_f64(posts, p)?, row_f64(factchecks, f)?));
    }
    Ok(pairs)
}

pub fn train(
    corpus: &Corpus,
    posts: &EmbeddingMatrix,
    factchecks: &EmbeddingMatrix,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(corpus, posts, factchecks, cfg, |_, _| Ok(()))
}

/// Runs training, calling `on_epoch(epoch, adapter)` after every epoch.
pub fn train_with(
    corpus: &Corpus,
    posts: &EmbeddingMatrix,
    factchecks: &EmbeddingMatrix,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &AdapterModel) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if posts.dim() != factchecks.dim() {
        return Err(Error::DimMismatch {
            expected: posts.dim(),
            found: factchecks.dim(),
        });
    }
    let pairs = training_pairs(corpus, posts, factchecks, cfg)?;
    if pairs.len() < 2 {
        return Err(Error::TooFewPairs(pairs.len()));
    }
    let dim = posts.dim();
    let mut adapter = AdapterModel {
        model_id: posts.model_id().to_string(),
        w: DMatrix::identity(dim, dim),
        side: cfg.side,
        scope: cfg.scope.clone(),
    };
    let mut adam = Adam::new(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut step_losses = Vec::new();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch = TrainingBatch::new(
                DMatrix::from_fn(chunk.len(), dim, |r, c| pairs[chunk[r]].0[c]),
                DMatrix::from_fn(chunk.len(), dim, |r, c| pairs[chunk[r]].1[c]),
            )?;
            let step = step_losses.len();
            let (out, grad) = mnrl_loss_and_grad(&batch, &adapter.w, cfg.scale, cfg.side)?;
            if !out.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss(step));
            }
            adam.step(&mut adapter.w, &grad, cfg.lr_at(step));
            if adapter.w.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteLoss(step));
            }
            step_losses.push(out.loss);
            epoch_sum += out.loss;
            epoch_steps += 1;
        }
        epoch_losses.push(epoch_sum / epoch_steps as f64);
        on_epoch(epoch, &adapter)?;
    }

    Ok(TrainOutcome {
        adapter,
        step_losses,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_ranges() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { batch_size: 1, ..Default::default() },
            TrainConfig { batch_size: 17, ..Default::default() },
            TrainConfig { learning_rate: 1e5, ..Default::default() },
            TrainConfig { learning_rate: 5e-6, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { epochs: 4, ..Default::default() },
            TrainConfig { scale: 0.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_ok());
    }

    #[test]
    fn warmup_schedule() {
        let cfg = TrainConfig {
            learning_rate: 2e-5,
            lr_scale: 1000.0,
            warmup_steps: 4,
            ..Default::default()
        };
        let lrs: Vec<f64> = (0..6).map(|s| cfg.lr_at(s)).collect();
        let peak = 2e-2;
        let expected = [0.0, 0.25 * peak, 0.5 * peak, 0.75 * peak, peak, peak];
        for (a, b) in lrs.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let no_warmup = TrainConfig { warmup_steps: 0, ..cfg };
        assert!((no_warmup.lr_at(0) - peak).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut w = DMatrix::from_element(1, 1, 1.0);
        let mut adam = Adam::new(1);
        adam.step(&mut w, &DMatrix::from_element(1, 1, 0.5), 0.1);
        assert!((w[(0, 0)] - 0.9).abs() < 1e-6);
    }
}
