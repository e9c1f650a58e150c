//! Weighted majority voting over the ranked lists of several models.
//!
//! Every candidate a model returns gets `confidence × weight`, where the
//! weight is the model's accuracy on the post's language. Candidates are
//! ranked by the sum of these scores across models.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::retrieval::{hit_order, Hit, RankedList};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub model_id: String,
    pub lang_weights: BTreeMap<String, f64>,
    pub default_weight: f64,
}

impl ModelProfile {
    pub fn weight(&self, lang: &str) -> f64 {
        self.lang_weights.get(lang).copied().unwrap_or(self.default_weight)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| (0.0..=1.0).contains(&w);
        if !ok(self.default_weight) || !self.lang_weights.values().all(|&w| ok(w)) {
            return Err(Error::Config(format!(
                "profile `{}` has a weight outside [0, 1]",
                self.model_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    /// The raw cosine score of the hit.
    #[default]
    Similarity,
    /// `(K - rank + 1) / K` with 1-based rank and `K` the model's list length.
    #[serde(rename = "rank")]
    RankLinear,
}

impl std::str::FromStr for Confidence {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "similarity" => Ok(Confidence::Similarity),
            "rank" => Ok(Confidence::RankLinear),
            other => Err(format!("unknown confidence `{other}` (expected similarity|rank)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub confidence: Confidence,
    pub k_out: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            confidence: Confidence::Similarity,
            k_out: 10,
        }
    }
}

/// Fuses one post's ranked lists, given as `(model_id, list)` pairs.
///
/// The result does not depend on the order in which models are supplied:
/// contributions are summed in model-id order.
pub fn fuse(
    rankings: &[(&str, &RankedList)],
    profiles: &[ModelProfile],
    post_lang: &str,
    cfg: &FusionConfig,
) -> Result<RankedList> {
    if cfg.k_out < 1 {
        return Err(Error::Config("k_out must be at least 1".into()));
    }
    let Some((_, first)) = rankings.first() else {
        return Err(Error::Config("nothing to fuse".into()));
    };
    let post_id = &first.post_id;
    let by_model: HashMap<&str, &ModelProfile> =
        profiles.iter().map(|p| (p.model_id.as_str(), p)).collect();

    let mut ordered: Vec<(&str, &RankedList)> = rankings.to_vec();
    ordered.sort_by(|a, b| a.0.cmp(b.0));
    if let Some(w) = ordered.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Config(format!("model `{}` supplied twice", w[0].0)));
    }

    let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
    for (model_id, list) in ordered {
        if &list.post_id != post_id {
            return Err(Error::PostMismatch {
                expected: post_id.clone(),
                found: list.post_id.clone(),
            });
        }
        let profile = by_model
            .get(model_id)
            .ok_or_else(|| Error::Config(format!("no profile for model `{model_id}`")))?;
        let weight = profile.weight(post_lang);
        // A zero-weight model must not even contribute candidates.
        if weight == 0.0 {
            continue;
        }
        let k = list.hits.len() as f64;
        for (rank0, hit) in list.hits.iter().enumerate() {
            let conf = match cfg.confidence {
                Confidence::Similarity => hit.score,
                Confidence::RankLinear => (k - rank0 as f64) / k,
            };
            *scores.entry(hit.id.as_str()).or_insert(0.0) += conf * weight;
        }
    }

    let mut hits: Vec<Hit> = scores
        .into_iter()
        .map(|(id, score)| Hit {
            id: id.to_string(),
            score,
        })
        .collect();
    hits.sort_by(|a, b| hit_order(a.score, &a.id, b.score, &b.id));
    hits.truncate(cfg.k_out);
    Ok(RankedList {
        post_id: post_id.clone(),
        hits,
    })
}

/// Fuses whole ranking sets, one per model. Posts missing from some models
/// are fused from the lists that exist. Output is in post-id order.
pub fn fuse_all(
    model_rankings: &[(String, Vec<RankedList>)],
    corpus: &Corpus,
    profiles: &[ModelProfile],
    cfg: &FusionConfig,
) -> Result<Vec<RankedList>> {
    let mut per_post: BTreeMap<&str, Vec<(&str, &RankedList)>> = BTreeMap::new();
    for (model_id, lists) in model_rankings {
        for list in lists {
            per_post
                .entry(list.post_id.as_str())
                .or_default()
                .push((model_id.as_str(), list));
        }
    }
    per_post
        .into_iter()
        .map(|(post_id, lists)| {
            let post = corpus
                .post(post_id)
                .ok_or_else(|| Error::UnknownId(post_id.to_string()))?;
            fuse(&lists, profiles, &post.lang, cfg)
        })
        .collect()
}

/// Per-language S@10 becomes the language weight; the post-weighted average
/// becomes the default weight.
pub fn build_profiles(reports: &[EvalReport]) -> Result<Vec<ModelProfile>> {
    reports
        .iter()
        .map(|r| {
            if r.k != 10 || r.per_lang.is_empty() {
                return Err(Error::MissingS10(r.model_id.clone()));
            }
            let profile = ModelProfile {
                model_id: r.model_id.clone(),
                lang_weights: r.per_lang.iter().map(|(l, c)| (l.clone(), c.score)).collect(),
                default_weight: r.average,
            };
            profile.validate()?;
            Ok(profile)
        })
        .collect()
}

/// Profiles file: `{ model_id: { lang: weight, ..., "default": weight } }`.
pub fn write_profiles(path: &Path, profiles: &[ModelProfile]) -> Result<()> {
    let mut doc = serde_json::Map::new();
    for p in profiles {
        let mut m = serde_json::Map::new();
        for (lang, w) in &p.lang_weights {
            m.insert(lang.clone(), (*w).into());
        }
        m.insert("default".into(), p.default_weight.into());
        doc.insert(p.model_id.clone(), m.into());
    }
    let text = serde_json::to_string_pretty(&doc).expect("profile serialization");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_profiles(path: &Path) -> Result<Vec<ModelProfile>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: BTreeMap<String, BTreeMap<String, f64>> =
        serde_json::from_str(&text).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
    doc.into_iter()
        .map(|(model_id, mut weights)| {
            let default_weight = weights.remove("default").ok_or_else(|| {
                Error::Config(format!("profile `{model_id}` lacks a \"default\" weight"))
            })?;
            let p = ModelProfile {
                model_id,
                lang_weights: weights,
                default_weight,
            };
            p.validate()?;
            Ok(p)
        })
        .collect()
}
