//! One function per subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use pfcr::adapter::{adapt_matrix, adapted_model_id, train_with, AdapterModel, AdapterSide, TrainConfig};
use pfcr::corpus::{load_corpus, read_jsonl, write_jsonl};
use pfcr::embedding::{import_matrix, store_matrix};
use pfcr::ensemble::{build_profiles as profiles_from, fuse_all, read_profiles, write_profiles, Confidence, FusionConfig};
use pfcr::eval::{evaluate as score, render_table, success_at_k};
use pfcr::retrieval::{read_rankings, write_rankings, PoolMode, Retriever};
use pfcr::synth::{make_synthetic, SynthConfig};
use pfcr::text::{prepare_document, CleaningConfig};
use pfcr::{Channel, Corpus, DocKind, EmbeddingMatrix, EvalReport, ModelRegistry, RankedList};
use serde::Serialize;
use serde_json::json;

use crate::manifest::{beside, in_dir, RunManifest};
use crate::{
    ApplyArgs, BuildProfilesArgs, CliError, CorpusArgs, EvaluateArgs, FuseArgs, ImportArgs, ModelArgs,
    PreprocessArgs, ReportArgs, RetrieveArgs, SearchArgs, SynthArgs, TrainArgs,
};

type Result<T = ()> = std::result::Result<T, CliError>;

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T> {
    s.parse().map_err(CliError::Usage)
}

fn corpus(args: &CorpusArgs, manifest: &mut RunManifest) -> Result<Corpus> {
    manifest.inputs(args.paths())?;
    Ok(load_corpus(&args.posts, &args.factchecks, &args.pairs)?)
}

fn create_dir(dir: &Path) -> Result {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

/// Loads the post and fact-check matrices of one model and records the
/// files in the manifest.
fn open_model(args: &ModelArgs, manifest: &mut RunManifest) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    let channel: Channel = parse(&args.channel)?;
    let registry = ModelRegistry::load(&args.store)?;
    let mut open = |kind| -> Result<EmbeddingMatrix> {
        let m = registry.open(&args.store, &args.model, channel, kind)?;
        let entry = registry.get(&args.model, channel, kind).expect("opened entry exists");
        manifest.input(&args.store.join(&entry.path))?;
        Ok(m)
    };
    Ok((open(DocKind::Post)?, open(DocKind::FactCheck)?))
}

#[derive(Serialize)]
struct PreparedRecord<'a> {
    id: &'a str,
    kind: DocKind,
    lang: &'a str,
    combined_original: String,
    combined_english: Option<String>,
}

pub fn preprocess(args: &PreprocessArgs) -> Result {
    let mut manifest = RunManifest::new("preprocess", args);
    let corpus = corpus(&args.corpus, &mut manifest)?;
    let cfg = CleaningConfig {
        strip_urls: !args.keep_urls,
        strip_hashtags: !args.keep_hashtags,
        strip_emoji: !args.keep_emoji,
        collapse_whitespace: !args.keep_whitespace,
    };
    let mut rows = Vec::with_capacity(corpus.posts().len() + corpus.factchecks().len());
    for doc in corpus.posts().values().chain(corpus.factchecks().values()) {
        rows.push(PreparedRecord {
            id: &doc.id,
            kind: doc.kind,
            lang: &doc.lang,
            combined_original: prepare_document(doc, &cfg, Channel::Original)?,
            combined_english: match doc.text_english {
                Some(_) => Some(prepare_document(doc, &cfg, Channel::English)?),
                None => None,
            },
        });
    }
    write_jsonl(&args.out, &rows)?;
    manifest.results = json!({
        "cleaning": cfg,
        "factchecks_cleaned_like_posts": true,
        "posts": corpus.posts().len(),
        "factchecks": corpus.factchecks().len(),
    });
    eprintln!("prepared {} posts and {} fact-checks", corpus.posts().len(), corpus.factchecks().len());
    manifest.write(&beside(&args.out))
}

pub fn import_embeddings(args: &ImportArgs) -> Result {
    let mut manifest = RunManifest::new("import-embeddings", args);
    create_dir(&args.store)?;
    let mut registry = ModelRegistry::load(&args.store)?;
    let mut imported = Vec::new();
    for path in &args.files {
        manifest.input(path)?;
        let (m, summary) = import_matrix(path)?;
        if summary.renormalized > 0 {
            eprintln!(
                "{}: renormalized {} of {} rows",
                path.display(),
                summary.renormalized,
                summary.rows
            );
        }
        store_matrix(&args.store, &mut registry, &m, args.replace)?;
        imported.push(json!({
            "file": path.display().to_string(),
            "model_id": m.model_id(),
            "channel": m.channel(),
            "kind": m.kind(),
            "rows": summary.rows,
            "renormalized": summary.renormalized,
        }));
    }
    registry.save(&args.store)?;
    eprintln!("imported {} matrices into {}", imported.len(), args.store.display());
    manifest.results = json!({ "imported": imported });
    manifest.write(&in_dir(&args.store, "import-embeddings"))
}

pub fn retrieve(args: &RetrieveArgs, threads: Option<usize>) -> Result {
    let mut manifest = RunManifest::new("retrieve", args);
    let mode: PoolMode = parse(&args.mode)?;
    if args.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let corpus = corpus(&args.corpus, &mut manifest)?;
    let (posts, fcs) = open_model(&args.model, &mut manifest)?;
    let r = Retriever::new(&corpus, &posts, &fcs)?;
    let ids = r.embedded_posts();
    if ids.len() < corpus.posts().len() {
        eprintln!("{} posts have no embedding and are skipped", corpus.posts().len() - ids.len());
    }
    let lists = r.retrieve_batch(&ids, mode, args.k)?;
    write_rankings(&args.out, &lists)?;
    eprintln!("ranked {} posts", lists.len());
    manifest.results = json!({ "posts_ranked": lists.len(), "threads": threads });
    manifest.write(&beside(&args.out))
}

pub fn train_adapter(args: &TrainArgs) -> Result {
    let mut manifest = RunManifest::new("train-adapter", args);
    manifest.seed = Some(args.seed);
    let corpus = corpus(&args.corpus, &mut manifest)?;
    let (posts, fcs) = open_model(&args.model, &mut manifest)?;
    let cfg = TrainConfig {
        batch_size: args.batch_size,
        learning_rate: args.lr,
        epochs: args.epochs,
        warmup_steps: args.warmup,
        scale: args.scale,
        seed: args.seed,
        lr_scale: args.lr_scale,
        side: parse::<AdapterSide>(&args.side)?,
        scope: args.lang.clone(),
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let dev = match &args.dev_pairs {
        Some(path) => {
            manifest.input(path)?;
            Some(dev_corpus(&corpus, path)?)
        }
        None => None,
    };
    let mut dev_s10 = Vec::new();
    let out = train_with(&corpus, &posts, &fcs, &cfg, |epoch, adapter| {
        match &dev {
            Some(dev) => {
                let s10 = held_out_s10(dev, adapter, &posts, &fcs)?;
                eprintln!("epoch {}/{} done, held-out S@10 {s10:.4}", epoch + 1, cfg.epochs);
                dev_s10.push(s10);
            }
            None => eprintln!("epoch {}/{} done", epoch + 1, cfg.epochs),
        }
        Ok(())
    })?;
    for (e, loss) in out.epoch_losses.iter().enumerate() {
        eprintln!("epoch {} mean loss {loss:.6}", e + 1);
    }
    out.adapter.write(&args.out)?;
    manifest.results = json!({
        "train_config": cfg,
        "steps": out.step_losses.len(),
        "epoch_losses": out.epoch_losses,
        "held_out_s10": dev.as_ref().map(|_| dev_s10),
    });
    manifest.write(&beside(&args.out))
}

/// The training corpus with its gold pairs swapped for the held-out ones.
fn dev_corpus(corpus: &Corpus, pairs: &Path) -> Result<Corpus> {
    #[derive(serde::Deserialize)]
    struct Pair {
        post_id: String,
        factcheck_id: String,
    }
    let pairs: Vec<Pair> = read_jsonl(pairs)?;
    let gold = pairs.into_iter().map(|p| (p.post_id, p.factcheck_id)).collect();
    Ok(Corpus::new(
        corpus.posts().values().cloned(),
        corpus.factchecks().values().cloned(),
        gold,
    )?)
}

fn held_out_s10(
    dev: &Corpus,
    adapter: &AdapterModel,
    posts: &EmbeddingMatrix,
    fcs: &EmbeddingMatrix,
) -> pfcr::Result<f64> {
    let posts = adapt_matrix(adapter, posts, Some(dev))?;
    let fcs = adapt_matrix(adapter, fcs, Some(dev))?;
    let r = Retriever::new(dev, &posts, &fcs)?;
    let ids: Vec<String> = dev.gold().posts().map(str::to_string).collect();
    let lists = r.retrieve_batch(&ids, PoolMode::Track, 10)?;
    success_at_k(&lists, dev.gold(), 10)
}

pub fn apply_adapter(args: &ApplyArgs) -> Result {
    let mut manifest = RunManifest::new("apply-adapter", args);
    manifest.input(&args.adapter)?;
    let adapter = AdapterModel::read(&args.adapter)?;
    let corpus = match (&args.posts, &args.factchecks, &args.pairs) {
        (Some(p), Some(f), Some(g)) => {
            manifest.inputs([p.as_path(), f.as_path(), g.as_path()])?;
            Some(load_corpus(p, f, g)?)
        }
        _ => None,
    };
    if adapter.scope.is_some() && corpus.is_none() {
        return Err(CliError::Usage(
            "this adapter is language-scoped; pass --posts, --factchecks and --pairs".into(),
        ));
    }
    let model = ModelArgs {
        store: args.store.clone(),
        model: adapter.model_id.clone(),
        channel: args.channel.clone(),
    };
    let (posts, fcs) = open_model(&model, &mut manifest)?;
    let out_model = args.out_model.clone().unwrap_or_else(|| adapted_model_id(&adapter.model_id));
    let out_store = args.out_store.clone().unwrap_or_else(|| args.store.clone());
    create_dir(&out_store)?;
    let mut registry = ModelRegistry::load(&out_store)?;
    for m in [&posts, &fcs] {
        let adapted = adapt_matrix(&adapter, m, corpus.as_ref())?.with_model_id(out_model.clone());
        store_matrix(&out_store, &mut registry, &adapted, args.replace)?;
    }
    registry.save(&out_store)?;
    eprintln!("stored adapted embeddings as `{out_model}` in {}", out_store.display());
    manifest.results = json!({ "model_id": out_model });
    manifest.write(&in_dir(&out_store, "apply-adapter"))
}

pub fn fuse(args: &FuseArgs) -> Result {
    let mut manifest = RunManifest::new("fuse", args);
    let corpus = corpus(&args.corpus, &mut manifest)?;
    manifest.input(&args.profiles)?;
    let profiles = read_profiles(&args.profiles)?;
    let mut model_rankings = Vec::new();
    for entry in &args.rankings {
        let (model, path) = entry
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--rankings expects MODEL=PATH, got `{entry}`")))?;
        let path = PathBuf::from(path);
        manifest.input(&path)?;
        let mut lists = read_rankings(&path)?;
        for l in &mut lists {
            l.hits.truncate(args.pool_k);
        }
        model_rankings.push((model.to_string(), lists));
    }
    let cfg = FusionConfig {
        confidence: parse::<Confidence>(&args.confidence)?,
        k_out: args.k_out,
    };
    let fused = fuse_all(&model_rankings, &corpus, &profiles, &cfg)?;
    write_rankings(&args.out, &fused)?;
    eprintln!("fused {} posts from {} models", fused.len(), model_rankings.len());
    manifest.write(&beside(&args.out))
}

pub fn evaluate(args: &EvaluateArgs, threads: Option<usize>) -> Result {
    let mut manifest = RunManifest::new("evaluate", args);
    if args.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let corpus = corpus(&args.corpus, &mut manifest)?;
    manifest.input(&args.rankings)?;
    let all = read_rankings(&args.rankings)?;
    let (lists, skipped): (Vec<RankedList>, Vec<RankedList>) =
        all.into_iter().partition(|l| corpus.gold().for_post(&l.post_id).is_some());
    if !skipped.is_empty() {
        eprintln!("{} ranked posts have no gold pair and are not scored", skipped.len());
    }
    let model = args.model.clone().unwrap_or_else(|| {
        args.rankings
            .file_stem()
            .map_or_else(|| "model".to_string(), |s| s.to_string_lossy().into_owned())
    });
    let report = score(&corpus, &lists, args.k, &model)?;
    report.write(&args.out)?;
    eprint!("{}", render_table(std::slice::from_ref(&report)));
    manifest.results = json!({ "scored": lists.len(), "skipped": skipped.len(), "threads": threads });
    manifest.write(&beside(&args.out))
}

fn read_reports(paths: &[PathBuf]) -> Result<Vec<EvalReport>> {
    paths.iter().map(|p| EvalReport::read(p).map_err(CliError::from)).collect()
}

pub fn report(args: &ReportArgs) -> Result {
    print!("{}", render_table(&read_reports(&args.reports)?));
    Ok(())
}

pub fn build_profiles(args: &BuildProfilesArgs) -> Result {
    let mut manifest = RunManifest::new("build-profiles", args);
    manifest.inputs(args.reports.iter().map(PathBuf::as_path))?;
    let profiles = profiles_from(&read_reports(&args.reports)?)?;
    write_profiles(&args.out, &profiles)?;
    manifest.write(&beside(&args.out))
}

pub fn synth(args: &SynthArgs) -> Result {
    let mut manifest = RunManifest::new("synth", args);
    manifest.seed = Some(args.seed);
    let cfg = SynthConfig {
        n_langs: args.langs,
        posts_per_lang: args.posts,
        distractors_per_lang: args.distractors,
        dim: args.dim,
        noise: args.noise,
        seed: args.seed,
        rotate_lang: args.rotate_lang,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let set = make_synthetic(&cfg)?;
    create_dir(&args.out)?;
    set.corpus.write(
        &args.out.join("posts.jsonl"),
        &args.out.join("factchecks.jsonl"),
        &args.out.join("pairs.jsonl"),
    )?;
    let store = args.out.join("store");
    create_dir(&store)?;
    let mut registry = ModelRegistry::new();
    store_matrix(&store, &mut registry, &set.posts, true)?;
    store_matrix(&store, &mut registry, &set.factchecks, true)?;
    registry.save(&store)?;
    let languages: Vec<&String> = set.corpus.languages().iter().collect();
    eprintln!(
        "wrote {} posts, {} fact-checks ({}), model `{}`",
        set.corpus.posts().len(),
        set.corpus.factchecks().len(),
        languages.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "),
        set.posts.model_id()
    );
    if let Some(lang) = &set.rotated_lang {
        eprintln!("fact-checks in `{lang}` are rotated");
    }
    manifest.results = json!({
        "model_id": set.posts.model_id(),
        "languages": languages,
        "rotated_lang": set.rotated_lang,
    });
    manifest.write(&in_dir(&args.out, "synth"))
}

pub fn search(args: &SearchArgs) -> Result {
    let mut manifest = RunManifest::new("search", args);
    let mode: PoolMode = parse(&args.mode)?;
    let corpus = corpus(&args.corpus, &mut manifest)?;
    let (posts, fcs) = open_model(&args.model, &mut manifest)?;
    let r = Retriever::new(&corpus, &posts, &fcs)?;
    let list = r.retrieve(&args.id, mode, args.k)?;
    let gold = corpus.gold().for_post(&args.id);
    let lang = &corpus.post(&args.id).expect("retrieved post exists").lang;
    println!("post {} ({lang})", args.id);
    println!("{:>4}  {:>9}  {:<5}  fact-check", "rank", "score", "lang");
    for (i, hit) in list.hits.iter().enumerate() {
        let fc_lang = &corpus.factcheck(&hit.id).expect("hit is a corpus fact-check").lang;
        let mark = if gold.is_some_and(|g| g.contains(&hit.id)) { "  *gold" } else { "" };
        println!("{:>4}  {:>9.6}  {:<5}  {}{mark}", i + 1, hit.score, fc_lang, hit.id);
    }
    Ok(())
}
