use nalgebra::DMatrix;
use pfcr::adapter::{adapt_matrix, train, train_with, AdapterSide, TrainConfig};
use pfcr::ensemble::{build_profiles, fuse, fuse_all, read_profiles, write_profiles, Confidence, FusionConfig, ModelProfile};
use pfcr::eval::{evaluate, render_table, success_at_k};
use pfcr::retrieval::{PoolMode, Retriever};
use pfcr::synth::{make_synthetic, SynthConfig, SyntheticSet};
use pfcr::{EvalReport, Hit, RankedList};

fn synth(noise: f64, rotate: Option<usize>) -> SyntheticSet {
    make_synthetic(&SynthConfig {
        n_langs: 3,
        posts_per_lang: 60,
        distractors_per_lang: 200,
        dim: 16,
        noise,
        seed: 3,
        rotate_lang: rotate,
    })
    .unwrap()
}

fn report(s: &SyntheticSet, k: usize) -> EvalReport {
    let r = Retriever::new(&s.corpus, &s.posts, &s.factchecks).unwrap();
    let lists = r.retrieve_batch(&r.embedded_posts(), PoolMode::Track, k).unwrap();
    evaluate(&s.corpus, &lists, k, "synthetic").unwrap()
}

#[test]
fn zero_learning_rate_is_a_no_op() {
    let s = make_synthetic(&SynthConfig {
        n_langs: 2,
        posts_per_lang: 6,
        distractors_per_lang: 5,
        dim: 8,
        noise: 0.3,
        seed: 1,
        rotate_lang: None,
    })
    .unwrap();
    // 12 pairs, one batch per epoch: the batch is the same set every time
    let cfg = TrainConfig { learning_rate: 0.0, epochs: 3, ..TrainConfig::default() };
    let out = train(&s.corpus, &s.posts, &s.factchecks, &cfg).unwrap();
    assert_eq!(out.adapter.w, DMatrix::identity(8, 8));
    assert_eq!(out.step_losses.len(), 3);
    for l in &out.step_losses {
        assert!((l - out.step_losses[0]).abs() < 1e-12);
    }
}

#[test]
fn same_seed_gives_identical_weights() {
    let s = synth(0.3, Some(1));
    let cfg = TrainConfig { seed: 9, epochs: 1, ..TrainConfig::default() };
    let a = train(&s.corpus, &s.posts, &s.factchecks, &cfg).unwrap();
    let b = train(&s.corpus, &s.posts, &s.factchecks, &cfg).unwrap();
    assert_eq!(a.adapter.to_bytes(), b.adapter.to_bytes());
    assert_eq!(a.step_losses, b.step_losses);
    let c = train(&s.corpus, &s.posts, &s.factchecks, &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.adapter.to_bytes(), c.adapter.to_bytes());
}

#[test]
fn loss_decreases_when_learning_a_rotation() {
    let s = synth(0.3, Some(1));
    let cfg = TrainConfig {
        side: AdapterSide::Document,
        scope: s.rotated_lang.clone(),
        seed: 4,
        warmup_steps: 3,
        ..TrainConfig::default()
    };
    let mut epochs_seen = Vec::new();
    let out = train_with(&s.corpus, &s.posts, &s.factchecks, &cfg, |e, _| {
        epochs_seen.push(e);
        Ok(())
    })
    .unwrap();
    assert_eq!(epochs_seen, [0, 1, 2]);
    let first: f64 = out.step_losses.iter().take(10).sum::<f64>() / 10.0;
    assert!(*out.epoch_losses.last().unwrap() < first, "{:?}", out.epoch_losses);

    let before = report(&s, 10).crosslingual.unwrap().score;
    let adapted = SyntheticSet {
        posts: adapt_matrix(&out.adapter, &s.posts, Some(&s.corpus)).unwrap(),
        factchecks: adapt_matrix(&out.adapter, &s.factchecks, Some(&s.corpus)).unwrap(),
        ..s
    };
    let after = report(&adapted, 10).crosslingual.unwrap().score;
    assert!(after > before + 0.5, "{before} -> {after}");
}

#[test]
fn too_few_pairs_in_scope() {
    let s = synth(0.3, None);
    let cfg = TrainConfig { scope: Some("zzz".into()), ..TrainConfig::default() };
    assert!(matches!(
        train(&s.corpus, &s.posts, &s.factchecks, &cfg),
        Err(pfcr::Error::TooFewPairs(0))
    ));
}

#[test]
fn overwhelming_noise_gives_chance_level() {
    let s = synth(50.0, None);
    let r = report(&s, 10);
    // pool per language: 60 gold + 200 distractors
    let chance = 10.0 / 260.0;
    for (lang, cell) in &r.per_lang {
        assert!(cell.score < chance + 0.12, "{lang}: {}", cell.score);
    }
}

#[test]
fn clean_signal_is_perfect_and_full_depth_always_succeeds() {
    let s = synth(0.1, None);
    let r = report(&s, 10);
    assert!(r.per_lang.values().all(|c| c.score == 1.0));
    let noisy = synth(50.0, None);
    let deep = report(&noisy, 260);
    assert!(deep.per_lang.values().all(|c| c.score == 1.0));
    assert_eq!(deep.average, 1.0);
}

#[test]
fn report_averages_and_table() {
    let s = synth(0.3, Some(1));
    let r = report(&s, 10);
    let n: usize = r.per_lang.values().map(|c| c.n_posts).sum();
    let weighted: f64 = r.per_lang.values().map(|c| c.score * c.n_posts as f64).sum::<f64>() / n as f64;
    assert!((r.average - weighted).abs() < 1e-12);
    assert_eq!(r.crosslingual.unwrap().n_posts, 60);
    let table = render_table(&[r]);
    assert!(table.starts_with("Model"));
    assert_eq!(table.lines().count(), 2);
}

fn list(post: &str, hits: &[(&str, f64)]) -> RankedList {
    RankedList {
        post_id: post.into(),
        hits: hits.iter().map(|&(id, score)| Hit { id: id.into(), score }).collect(),
    }
}

#[test]
fn fusion_is_permutation_invariant() {
    let a = list("p", &[("x", 0.9), ("y", 0.5)]);
    let b = list("p", &[("y", 0.8), ("z", 0.7)]);
    let c = list("p", &[("z", 0.6), ("x", 0.1)]);
    let profiles: Vec<ModelProfile> = [("a", 0.3), ("b", 0.6), ("c", 0.9)]
        .iter()
        .map(|&(m, w)| ModelProfile {
            model_id: m.into(),
            lang_weights: [("eng".to_string(), w)].into(),
            default_weight: 0.5,
        })
        .collect();
    let cfg = FusionConfig { confidence: Confidence::RankLinear, k_out: 3 };
    let base = fuse(&[("a", &a), ("b", &b), ("c", &c)], &profiles, "eng", &cfg).unwrap();
    for order in [["c", "b", "a"], ["b", "a", "c"], ["a", "c", "b"]] {
        let pick = |m: &str| match m {
            "a" => &a,
            "b" => &b,
            _ => &c,
        };
        let input: Vec<(&str, &RankedList)> = order.iter().map(|&m| (m, pick(m))).collect();
        let mut rev = profiles.clone();
        rev.reverse();
        assert_eq!(fuse(&input, &rev, "eng", &cfg).unwrap(), base);
    }
    // default weight applies to an unseen language
    let other = fuse(&[("a", &a), ("b", &b), ("c", &c)], &profiles, "tha", &cfg).unwrap();
    assert_eq!(other.hits.len(), 3);
}

#[test]
fn profiles_from_reports_drive_fuse_all() {
    let s = synth(0.3, None);
    let r = report(&s, 10);
    let profiles = build_profiles(std::slice::from_ref(&r)).unwrap();
    assert_eq!(profiles[0].weight("fra"), r.per_lang["fra"].score);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("profiles.json");
    write_profiles(&path, &profiles).unwrap();
    assert_eq!(read_profiles(&path).unwrap(), profiles);

    let ret = Retriever::new(&s.corpus, &s.posts, &s.factchecks).unwrap();
    let lists = ret.retrieve_batch(&ret.embedded_posts(), PoolMode::Track, 10).unwrap();
    // fusing a model with itself under another name keeps the ranking
    let mut twin = profiles[0].clone();
    twin.model_id = "twin".into();
    let fused = fuse_all(
        &[("synthetic".into(), lists.clone()), ("twin".into(), lists.clone())],
        &s.corpus,
        &[profiles[0].clone(), twin],
        &FusionConfig::default(),
    )
    .unwrap();
    for (f, l) in fused.iter().zip(&lists) {
        let ids = |x: &RankedList| x.hits.iter().map(|h| h.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(f), ids(l));
    }
    let s_fused = success_at_k(&fused, s.corpus.gold(), 10).unwrap();
    let s_single = success_at_k(&lists, s.corpus.gold(), 10).unwrap();
    assert_eq!(s_fused, s_single);
}
