//! Seeded synthetic corpora with known retrieval geometry.
//!
//! Each gold pair shares a random unit "topic" vector `u`; the post and the
//! fact-check are `normalize(u + noise)` with isotropic Gaussian noise of
//! expected norm `noise` (per-component standard deviation
//! `noise / sqrt(dim)`). Distractors are independent random unit vectors.
//!
//! With `rotate_lang = Some(r)` language `r` becomes a crosslingual target:
//! its posts are replaced by posts written in the next language whose gold
//! fact-checks are in language `r`, and every fact-check of language `r` is
//! multiplied by a fixed random rotation. Zero-shot retrieval of those pairs
//! is then at chance, and a document-side adapter scoped to `r` has to learn
//! the inverse rotation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, GoldPairs};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::eval::TABLE_LANGS;
use crate::{Channel, DocKind};

pub const SYNTH_MODEL_ID: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_langs: usize,
    pub posts_per_lang: usize,
    pub distractors_per_lang: usize,
    pub dim: usize,
    pub noise: f64,
    pub seed: u64,
    /// Index of the language whose fact-checks are rotated.
    pub rotate_lang: Option<usize>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_langs < 1 || self.posts_per_lang < 1 || self.distractors_per_lang < 1 {
            return Err(Error::Config("synthetic sizes must all be at least 1".into()));
        }
        if self.dim < 8 {
            return Err(Error::Config("synthetic dim must be at least 8".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Config("noise must be a nonnegative number".into()));
        }
        if let Some(r) = self.rotate_lang {
            if r >= self.n_langs || self.n_langs < 2 {
                return Err(Error::Config(format!(
                    "rotate_lang {r} needs at least 2 languages and must be below n_langs {}",
                    self.n_langs
                )));
            }
        }
        Ok(())
    }
}

pub struct SyntheticSet {
    pub corpus: Corpus,
    pub posts: EmbeddingMatrix,
    pub factchecks: EmbeddingMatrix,
    pub rotation: Option<DMatrix<f64>>,
    pub rotated_lang: Option<String>,
}

/// Language code for index `i`: the report-table languages first.
pub fn lang_code(i: usize) -> String {
    TABLE_LANGS
        .get(i)
        .map_or_else(|| format!("x{i:02}"), |l| l.to_string())
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = gaussian(rng, dim);
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Haar-distributed rotation (orthogonal, determinant +1).
pub fn random_rotation(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

struct Builder {
    ids: Vec<String>,
    vectors: Vec<f32>,
}

impl Builder {
    fn push(&mut self, id: &str, v: &DVector<f64>) {
        self.ids.push(id.to_string());
        self.vectors.extend(v.iter().map(|&x| x as f32));
    }
}

fn document(kind: DocKind, id: &str, lang: &str) -> Document {
    let text = format!("synthetic {kind} {id}");
    Document {
        id: id.to_string(),
        kind,
        lang: lang.to_string(),
        text_original: text.clone(),
        text_english: Some(text),
        ocr_text: None,
    }
}

pub fn make_synthetic(cfg: &SynthConfig) -> Result<SyntheticSet> {
    cfg.validate()?;
    let dim = cfg.dim;
    let sigma = cfg.noise / (dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rotation = cfg.rotate_lang.map(|_| random_rotation(&mut rng, dim));

    let langs: Vec<String> = (0..cfg.n_langs).map(lang_code).collect();
    let mut posts = Vec::new();
    let mut factchecks = Vec::new();
    let mut gold = GoldPairs::new();
    let mut post_rows = Builder { ids: Vec::new(), vectors: Vec::new() };
    let mut fc_rows = Builder { ids: Vec::new(), vectors: Vec::new() };

    let noisy = |rng: &mut ChaCha8Rng, u: &DVector<f64>| {
        let v = u + gaussian(rng, dim) * sigma;
        let n = v.norm();
        v / n
    };

    for (li, lang) in langs.iter().enumerate() {
        let rotated = cfg.rotate_lang == Some(li);
        let fc_space = |v: DVector<f64>| match (&rotation, rotated) {
            (Some(r), true) => r * v,
            _ => v,
        };
        let post_lang = if rotated { &langs[(li + 1) % langs.len()] } else { lang };
        for j in 0..cfg.posts_per_lang {
            let post_id = if rotated {
                format!("post-{lang}-x{j:05}")
            } else {
                format!("post-{lang}-{j:05}")
            };
            let fc_id = format!("fc-{lang}-g{j:05}");
            let u = random_unit(&mut rng, dim);
            let p = noisy(&mut rng, &u);
            let f = fc_space(noisy(&mut rng, &u));
            post_rows.push(&post_id, &p);
            fc_rows.push(&fc_id, &f);
            posts.push(document(DocKind::Post, &post_id, post_lang));
            factchecks.push(document(DocKind::FactCheck, &fc_id, lang));
            gold.insert(post_id, fc_id);
        }
        for j in 0..cfg.distractors_per_lang {
            let fc_id = format!("fc-{lang}-d{j:05}");
            let f = fc_space(random_unit(&mut rng, dim));
            fc_rows.push(&fc_id, &f);
            factchecks.push(document(DocKind::FactCheck, &fc_id, lang));
        }
    }

    let corpus = Corpus::new(posts, factchecks, gold)?;
    let (posts, _) = EmbeddingMatrix::from_rows(
        SYNTH_MODEL_ID,
        Channel::Original,
        DocKind::Post,
        dim,
        post_rows.ids,
        post_rows.vectors,
    )?;
    let (factchecks, _) = EmbeddingMatrix::from_rows(
        SYNTH_MODEL_ID,
        Channel::Original,
        DocKind::FactCheck,
        dim,
        fc_rows.ids,
        fc_rows.vectors,
    )?;
    Ok(SyntheticSet {
        corpus,
        posts,
        factchecks,
        rotation,
        rotated_lang: cfg.rotate_lang.map(|r| langs[r].clone()),
    })
}
