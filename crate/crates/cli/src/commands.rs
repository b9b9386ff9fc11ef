use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sarcasm_core::corpus::{
    build_vocabulary, clean_tweet, dataset_stats, load_records, load_texts, search_tag_set, tokenize, write_records,
    TweetRecord, DEFAULT_SEARCH_TAGS,
};
use sarcasm_core::embed::{
    load_embeddings, nearest_neighbors, save_embeddings, train_fasttext_with_losses, train_word2vec_with_losses,
    EmbedVariant,
};
use sarcasm_core::models::{build_model, embedding_table, gradcheck_model, Architecture, ModelSpec};
use sarcasm_core::synthetic::{toy_corpus, toy_texts};
use sarcasm_core::trainer::{
    encode_records, evaluate, load_checkpoint, predict as predict_text, record_tokens, report_grid, report_grid_csv,
    train as train_model, ResultRecord, RunInfo,
};
use sarcasm_core::{Error, Result};

use crate::config::ExperimentConfig;

pub const TOY_SEED: u64 = 7;

/// File names written by `sarcasm toy`.
pub const TOY_LABELED: &str = "toy_tweets.jsonl";
pub const TOY_UNLABELED: &str = "toy_embed.txt";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serialisable") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn prep(input: &Path, out: &Path, tags: Option<Vec<String>>, min_count: u64, stats: bool) -> Result<()> {
    let tags = match tags {
        Some(t) => search_tag_set(t),
        None => search_tag_set(DEFAULT_SEARCH_TAGS),
    };
    let records = load_records(input)?;
    let cleaned: Vec<TweetRecord> = records
        .iter()
        .map(|r| TweetRecord {
            text: tokenize(&clean_tweet(&r.text, &tags)).join(" "),
            ..r.clone()
        })
        .collect();
    let tokens: Vec<Vec<&str>> = cleaned
        .iter()
        .map(|r| r.text.split(' ').filter(|t| !t.is_empty()).collect())
        .collect();
    let vocab = build_vocabulary(&tokens, min_count)?;
    create_dir(out)?;
    write_records(&out.join("cleaned.jsonl"), &cleaned)?;
    vocab.save(&out.join("vocab.tsv"))?;
    if stats {
        println!("{}", dataset_stats(&records));
    }
    println!(
        "{} records, {} vocabulary entries (min_count {min_count}) -> {}",
        records.len(),
        vocab.len(),
        out.display()
    );
    Ok(())
}

fn default_embeddings(cfg: &ExperimentConfig, variant: EmbedVariant) -> PathBuf {
    cfg.output_dir().join("embeddings").join(format!("{variant}.txt"))
}

pub fn embed(
    config: &Path,
    variant: EmbedVariant,
    seed: Option<u64>,
    workers: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let mut ec = cfg.embed.clone();
    ec.seed = seed.unwrap_or(ec.seed);
    ec.workers = workers.unwrap_or(ec.workers);
    ec.validate()?;
    let tags = cfg.corpus.tag_set();
    let mut texts = Vec::new();
    for p in &cfg.corpus.unlabeled {
        texts.extend(load_texts(p)?);
    }
    if cfg.corpus.unlabeled.is_empty() {
        log::warn!("corpus.unlabeled is empty; training embeddings on the labeled corpus text");
        texts.extend(load_records(cfg.labeled()?)?.into_iter().map(|r| r.text));
    }
    let tokens: Vec<Vec<String>> = texts.iter().map(|t| tokenize(&clean_tweet(t, &tags))).collect();
    let vocab = build_vocabulary(&tokens, cfg.corpus.min_count)?;
    if vocab.is_empty() {
        return Err(Error::Input("embedding corpus has no words above min_count".into()));
    }
    log::info!(
        "training {variant} on {} tweets, {} words, dim {}",
        texts.len(),
        vocab.len() - 2,
        ec.dim
    );
    let (matrix, losses) = match variant {
        EmbedVariant::Word2vec => train_word2vec_with_losses(&tokens, &vocab, &ec)?,
        EmbedVariant::Fasttext => train_fasttext_with_losses(&tokens, &vocab, &ec)?,
    };
    for (i, l) in losses.iter().enumerate() {
        log::info!("epoch {}: mean loss {l:.4}", i + 1);
    }
    let path = out.unwrap_or_else(|| default_embeddings(&cfg, variant));
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    save_embeddings(&path, &matrix)?;
    println!("{}", path.display());
    Ok(())
}

pub fn nn(embeddings: &Path, word: &str, k: usize) -> Result<()> {
    let m = load_embeddings(embeddings)?;
    for (w, sim) in nearest_neighbors(word, k, &m)? {
        println!("{w}\t{sim:.4}");
    }
    Ok(())
}

pub fn train(
    config: &Path,
    arch: Option<Architecture>,
    variant: EmbedVariant,
    embeddings: Option<PathBuf>,
    keep_best: bool,
) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let spec = ModelSpec {
        architecture: arch.unwrap_or(cfg.model.architecture),
        ..cfg.model.clone()
    };
    spec.validate()?;
    let tags = cfg.corpus.tag_set();
    let out = cfg.output_dir();

    let records = load_records(cfg.labeled()?)?;
    let splits = sarcasm_core::corpus::split_dataset(&records, cfg.corpus.split_seed)?;
    let split_dir = out.join("splits");
    create_dir(&split_dir)?;
    for (name, part) in [
        ("train", &splits.train),
        ("validation", &splits.validation),
        ("test", &splits.test),
    ] {
        write_records(&split_dir.join(format!("{name}.jsonl")), part)?;
    }
    let vocab = build_vocabulary(&record_tokens(&splits.train, &tags), cfg.corpus.min_count)?;

    let emb_path = embeddings.unwrap_or_else(|| default_embeddings(&cfg, variant));
    if !emb_path.exists() {
        return Err(Error::Config(format!(
            "no embeddings at {}; run `sarcasm embed --variant {variant}` first",
            emb_path.display()
        )));
    }
    let matrix = load_embeddings(&emb_path)?;
    if matrix.dim != spec.embed_dim {
        return Err(Error::Config(format!(
            "embeddings have dim {} but model.embed_dim = {}",
            matrix.dim, spec.embed_dim
        )));
    }
    if matrix.variant() != variant {
        log::warn!(
            "{} holds {} vectors, not {variant}",
            emb_path.display(),
            matrix.variant()
        );
    }
    let table = embedding_table(&vocab, &matrix);

    let run_dir = out
        .join("runs")
        .join(format!("{}-{variant}-{}", spec.architecture, cfg.corpus.variant));
    let mut tc = cfg.train.clone();
    tc.keep_best |= keep_best;
    if tc.checkpoint_dir.is_none() {
        tc.checkpoint_dir = Some(run_dir.clone());
    }
    create_dir(&run_dir)?;
    let info = RunInfo {
        vocab: Some(vocab.clone()),
        search_tags: tags.iter().cloned().collect(),
        embedding: Some(variant),
        corpus: Some(cfg.corpus.variant),
    };
    let train_set = encode_records(&splits.train, &vocab, spec.max_len, &tags);
    let val_set = encode_records(&splits.validation, &vocab, spec.max_len, &tags);
    let test_set = encode_records(&splits.test, &vocab, spec.max_len, &tags);
    let mut model = build_model(&spec, table, tc.seed)?;
    log::info!(
        "{}: {} train / {} validation / {} test, {} classifier words",
        spec.architecture.display_name(),
        train_set.len(),
        val_set.len(),
        test_set.len(),
        vocab.len()
    );
    let outcome = train_model(&mut model, &train_set, &val_set, &tc, &info)?;
    let best = outcome.best_model(&spec)?;
    let report = evaluate(&best, &test_set)?;
    let best_metrics = outcome.history.get(outcome.best_epoch).expect("best epoch recorded");
    write_json(&run_dir.join("test_metrics.json"), &report)?;
    write_json(
        &run_dir.join("result.json"),
        &ResultRecord {
            architecture: spec.architecture,
            embedding: variant,
            corpus: cfg.corpus.variant,
            accuracy: report.accuracy * 100.0,
        },
    )?;
    println!(
        "{}: best epoch {} (val acc {:.4}), test acc {:.4} -> {}",
        spec.architecture,
        outcome.best_epoch,
        best_metrics.val_accuracy,
        report.accuracy,
        run_dir.display()
    );
    Ok(())
}

pub fn eval(checkpoint: &Path, test: &Path) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let vocab = ck
        .vocab
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("checkpoint has no vocabulary".into()))?;
    let tags = search_tag_set(&ck.search_tags);
    let records = load_records(test)?;
    let data = encode_records(&records, vocab, ck.model.spec.max_len, &tags);
    let report = evaluate(&ck.model, &data)?;
    let json = serde_json::json!({
        "accuracy": report.accuracy,
        "loss": report.loss,
        "n": data.len(),
        "confusion": report.confusion,
        "epoch": ck.epoch,
    });
    println!("{json}");
    Ok(())
}

pub fn predict(checkpoint: &Path, text: &str) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let vocab = ck
        .vocab
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("checkpoint has no vocabulary".into()))?;
    let p = predict_text(
        &ck.model,
        text,
        vocab,
        ck.model.spec.max_len,
        &search_tag_set(&ck.search_tags),
    )?;
    println!("{p:.3}");
    Ok(())
}

pub fn gradcheck(arch: Option<Architecture>, seed: u64, tolerance: f64) -> Result<()> {
    let archs = match arch {
        Some(a) => vec![a],
        None => Architecture::ALL.to_vec(),
    };
    let mut failed = Vec::new();
    for a in archs {
        let report = gradcheck_model(&ModelSpec::scaled(a, 8), seed, tolerance)?;
        println!("{a:<12} {report}");
        if !report.passed() {
            failed.push(a.as_str());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::GradCheck(failed.join(", ")))
    }
}

fn collect_results(dir: &Path, out: &mut Vec<ResultRecord>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_results(&p, out)?;
        } else if p
            .file_name()
            .is_some_and(|n| n == "result.json" || n.to_string_lossy().ends_with(".result.json"))
        {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let parsed: serde_json::Result<Vec<ResultRecord>> =
                serde_json::from_str(&text).or_else(|_| serde_json::from_str::<ResultRecord>(&text).map(|r| vec![r]));
            out.extend(parsed.map_err(|e| Error::parse(&p, e.line(), e.to_string()))?);
        }
    }
    Ok(())
}

/// Reads every `result.json` (or `*.result.json`) below `dir`. A file holds
/// one record or an array of them.
pub fn report(dir: &Path, csv: bool) -> Result<()> {
    let mut records = Vec::new();
    collect_results(dir, &mut records)?;
    let mut grid = BTreeMap::new();
    for r in &records {
        if grid
            .insert((r.architecture, r.embedding, r.corpus), r.accuracy)
            .is_some()
        {
            log::warn!(
                "duplicate result for {} / {} / {}; keeping the last one read",
                r.architecture,
                r.embedding,
                r.corpus
            );
        }
    }
    print!(
        "{}",
        if csv {
            report_grid_csv(&grid)
        } else {
            report_grid(&grid)
        }
    );
    Ok(())
}

pub fn toy(out: &Path, n: usize, seed: u64) -> Result<()> {
    create_dir(out)?;
    let labeled = out.join(TOY_LABELED);
    write_records(&labeled, &toy_corpus(seed, n))?;
    let unlabeled = out.join(TOY_UNLABELED);
    let text: String = toy_texts(seed + 1, 2 * n).into_iter().map(|t| t + "\n").collect();
    fs::write(&unlabeled, text).map_err(|e| Error::io(&unlabeled, e))?;
    println!("{}\n{}", labeled.display(), unlabeled.display());
    Ok(())
}
