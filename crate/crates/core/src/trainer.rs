//! Training loop, evaluation, prediction, checkpoints and result tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{clean_tweet, encode, tokenize, EncodedSequence, TweetRecord, Vocabulary};
use crate::embed::{CorpusVariant, EmbedVariant};
use crate::error::{Error, Result};
use crate::models::{Architecture, BuiltModel, ModelSpec};
use crate::nncore::{bce_value, AdamConfig, AdamState, Param, Tensor};

/// Probabilities at or above this value are classified as sarcastic.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub shuffle: bool,
    /// Where per-epoch checkpoints and the metrics history are written.
    pub checkpoint_dir: Option<PathBuf>,
    /// Delete every epoch checkpoint except the best one once training ends.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            seed: 1,
            adam: AdamConfig::default(),
            shuffle: true,
            checkpoint_dir: None,
            keep_best: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::Config(
                "train.epochs and train.batch_size must be at least 1".into(),
            ));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("train.adam.lr must be positive".into()));
        }
        Ok(())
    }
}

/// Encoded examples with 0/1 labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<EncodedSequence>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Cleaned, lowercased tokens of every record.
pub fn record_tokens(records: &[TweetRecord], search_tags: &BTreeSet<String>) -> Vec<Vec<String>> {
    records
        .iter()
        .map(|r| tokenize(&clean_tweet(&r.text, search_tags)))
        .collect()
}

pub fn encode_records(
    records: &[TweetRecord],
    vocab: &Vocabulary,
    max_len: usize,
    search_tags: &BTreeSet<String>,
) -> Dataset {
    Dataset {
        sequences: record_tokens(records, search_tags)
            .iter()
            .map(|t| encode(t, vocab, max_len))
            .collect(),
        labels: records.iter().map(|r| r.label).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean loss over the epoch's minibatches, measured during training.
    pub train_loss: f64,
    /// Accuracy over the epoch's minibatches, measured during training.
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochMetrics>,
}

impl History {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Epoch with the highest validation accuracy; ties go to the earliest.
    pub fn best_epoch(&self) -> Option<usize> {
        let mut best: Option<&EpochMetrics> = None;
        for m in &self.epochs {
            if best.is_none_or(|b| m.val_accuracy > b.val_accuracy) {
                best = Some(m);
            }
        }
        best.map(|m| m.epoch)
    }

    pub fn get(&self, epoch: usize) -> Option<&EpochMetrics> {
        self.epochs.iter().find(|m| m.epoch == epoch)
    }

    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|m| serde_json::to_string(m).expect("metrics serialise") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let epochs = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse("history.jsonl", i + 1, e.to_string())))
            .collect::<Result<_>>()?;
        Ok(History { epochs })
    }
}

/// Labels attached to checkpoints so they can be reused and reported on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunInfo {
    pub vocab: Option<Vocabulary>,
    pub search_tags: Vec<String>,
    pub embedding: Option<EmbedVariant>,
    pub corpus: Option<CorpusVariant>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: History,
    pub best_epoch: usize,
    /// Parameters as they were at the end of `best_epoch`.
    pub best_params: Vec<Param>,
    /// Checkpoint files still on disk.
    pub checkpoints: Vec<PathBuf>,
    pub optimizer_steps: u64,
}

impl TrainOutcome {
    pub fn best_model(&self, spec: &ModelSpec) -> Result<BuiltModel> {
        BuiltModel::from_params(spec, self.best_params.clone())
    }
}

fn norms(model: &BuiltModel) -> String {
    model
        .params()
        .iter()
        .filter(|p| p.trainable)
        .map(|p| format!("{}={:.4e}", p.name, p.value.norm()))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Minibatch Adam on mean binary cross-entropy. Each epoch reshuffles the
/// training set with the run's RNG, trains, then evaluates the validation
/// set in inference mode. `model` ends holding the last epoch's parameters.
pub fn train(
    model: &mut BuiltModel,
    train_set: &Dataset,
    validation: &Dataset,
    config: &TrainConfig,
    info: &RunInfo,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(Error::Input("training and validation sets must be non-empty".into()));
    }
    if let Some(dir) = &config.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let sizes: Vec<usize> = model
        .params()
        .iter()
        .filter(|p| p.trainable)
        .map(|p| p.value.len())
        .collect();
    let mut adam = AdamState::new(config.adam, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = History::default();
    let mut best: Option<(usize, f64, Vec<Param>)> = None;
    let mut checkpoints = Vec::new();

    for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<EncodedSequence> = chunk.iter().map(|&i| train_set.sequences[i].clone()).collect();
            let labels: Vec<f64> = chunk.iter().map(|&i| train_set.labels[i] as f64).collect();
            let (loss, grads, probs) = model.loss_and_grads(&batch, &labels, true, &mut rng)?;
            if !loss.is_finite() || grads.iter().flatten().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    norms: norms(model),
                });
            }
            let grads: Vec<Vec<f64>> = grads.into_iter().flatten().collect();
            let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            let mut param_refs: Vec<&mut [f64]> = model
                .params_mut()
                .iter_mut()
                .filter(|p| p.trainable)
                .map(|p| p.value.data_mut())
                .collect();
            adam.step(&mut param_refs, &grad_refs)?;
            loss_sum += loss * chunk.len() as f64;
            correct += probs
                .iter()
                .zip(&labels)
                .filter(|(p, y)| ((**p >= THRESHOLD) as u8 as f64) == **y)
                .count();
        }
        let val = evaluate(model, validation)?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4}",
            metrics.train_loss,
            metrics.train_accuracy,
            metrics.val_loss,
            metrics.val_accuracy
        );
        history.epochs.push(metrics);
        if best.as_ref().is_none_or(|b| metrics.val_accuracy > b.1) {
            best = Some((epoch, metrics.val_accuracy, model.params().to_vec()));
        }
        if let Some(dir) = &config.checkpoint_dir {
            let path = dir.join(format!("epoch-{epoch:03}.ckpt"));
            let ck = Checkpoint::new(model.clone(), epoch, Some(metrics), info, &rng);
            save_checkpoint(&path, &ck)?;
            checkpoints.push(path);
            let hist = dir.join("history.jsonl");
            fs::write(&hist, history.to_jsonl()).map_err(|e| Error::io(&hist, e))?;
        }
    }

    let (best_epoch, _, best_params) = best.expect("at least one epoch");
    if let Some(dir) = &config.checkpoint_dir {
        let best_model = BuiltModel::from_params(&model.spec, best_params.clone())?;
        let ck = Checkpoint::new(best_model, best_epoch, history.get(best_epoch).copied(), info, &rng);
        let path = dir.join("best.ckpt");
        save_checkpoint(&path, &ck)?;
        if config.keep_best {
            let keep = dir.join(format!("epoch-{best_epoch:03}.ckpt"));
            for p in checkpoints.iter().filter(|p| **p != keep) {
                fs::remove_file(p).map_err(|e| Error::io(p, e))?;
            }
            checkpoints.retain(|p| *p == keep);
        }
        checkpoints.push(path);
    }
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_params,
        checkpoints,
        optimizer_steps: adam.steps(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

impl Confusion {
    pub fn from_predictions(probs: &[f64], labels: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (&p, &y) in probs.iter().zip(labels) {
            match (p >= THRESHOLD, y == 1) {
                (true, true) => c.true_positive += 1,
                (true, false) => c.false_positive += 1,
                (false, false) => c.true_negative += 1,
                (false, true) => c.false_negative += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.true_positive + self.false_positive + self.true_negative + self.false_negative
    }

    pub fn accuracy(&self) -> f64 {
        (self.true_positive + self.true_negative) as f64 / self.total().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub loss: f64,
    pub confusion: Confusion,
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let c = &self.confusion;
        writeln!(f, "accuracy  {:.4}", self.accuracy)?;
        writeln!(f, "loss      {:.4}", self.loss)?;
        writeln!(f, "               pred 1  pred 0")?;
        writeln!(f, "  actual 1  {:>8}  {:>6}", c.true_positive, c.false_negative)?;
        write!(f, "  actual 0  {:>8}  {:>6}", c.false_positive, c.true_negative)
    }
}

const EVAL_BATCH: usize = 256;

/// Inference-mode probabilities for a whole dataset.
pub fn predict_dataset(model: &BuiltModel, data: &Dataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.sequences.chunks(EVAL_BATCH) {
        out.extend(model.predict(chunk)?);
    }
    Ok(out)
}

pub fn evaluate(model: &BuiltModel, data: &Dataset) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty dataset".into()));
    }
    let probs = predict_dataset(model, data)?;
    Ok(report_from_probs(&probs, &data.labels))
}

pub fn report_from_probs(probs: &[f64], labels: &[u8]) -> EvalReport {
    let confusion = Confusion::from_predictions(probs, labels);
    let loss = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| bce_value(p, y as f64))
        .sum::<f64>()
        / labels.len().max(1) as f64;
    EvalReport {
        accuracy: confusion.accuracy(),
        loss,
        confusion,
    }
}

/// Probability that one raw tweet is sarcastic.
pub fn predict(
    model: &BuiltModel,
    raw_text: &str,
    vocab: &Vocabulary,
    max_len: usize,
    search_tags: &BTreeSet<String>,
) -> Result<f64> {
    let tokens = tokenize(&clean_tweet(raw_text, search_tags));
    Ok(model.predict(&[encode(&tokens, vocab, max_len)])?[0])
}

const MAGIC: &[u8; 8] = b"SRCSMCK\n";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A saved model with everything needed to run it on raw text.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: BuiltModel,
    pub epoch: usize,
    pub metrics: Option<EpochMetrics>,
    pub vocab: Option<Vocabulary>,
    pub search_tags: Vec<String>,
    pub embedding: Option<EmbedVariant>,
    pub corpus: Option<CorpusVariant>,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
}

impl Checkpoint {
    pub fn new(
        model: BuiltModel,
        epoch: usize,
        metrics: Option<EpochMetrics>,
        info: &RunInfo,
        rng: &ChaCha8Rng,
    ) -> Self {
        Checkpoint {
            model,
            epoch,
            metrics,
            vocab: info.vocab.clone(),
            search_tags: info.search_tags.clone(),
            embedding: info.embedding,
            corpus: info.corpus,
            rng_seed: rng.get_seed(),
            rng_word_pos: rng.get_word_pos(),
        }
    }

    /// The RNG as it was when the checkpoint was written.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::from_seed(self.rng_seed);
        r.set_word_pos(self.rng_word_pos);
        r
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    /// Offset and length in f64 elements from the start of the payload.
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dtype: String,
    epoch: usize,
    metrics: Option<EpochMetrics>,
    spec: ModelSpec,
    vocab: Option<Vec<(String, u64)>>,
    vocab_min_count: Option<u64>,
    search_tags: Vec<String>,
    embedding: Option<EmbedVariant>,
    corpus: Option<CorpusVariant>,
    rng_seed: [u8; 32],
    rng_word_pos: String,
    tensors: Vec<TensorEntry>,
}

/// Magic bytes, little-endian u32 manifest length, JSON manifest, then each
/// tensor's values as little-endian f64 in manifest order.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let mut offset = 0;
    let tensors = ck
        .model
        .params()
        .iter()
        .map(|p| {
            let e = TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
                offset,
                len: p.value.len(),
            };
            offset += p.value.len();
            e
        })
        .collect();
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        dtype: "f64".into(),
        epoch: ck.epoch,
        metrics: ck.metrics,
        spec: ck.model.spec.clone(),
        vocab: ck
            .vocab
            .as_ref()
            .map(|v| v.entries().map(|(_, t, c)| (t.to_string(), c)).collect()),
        vocab_min_count: ck.vocab.as_ref().map(Vocabulary::min_count),
        search_tags: ck.search_tags.clone(),
        embedding: ck.embedding,
        corpus: ck.corpus,
        rng_seed: ck.rng_seed,
        rng_word_pos: ck.rng_word_pos.to_string(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(12 + json.len() + offset * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in ck.model.params() {
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("ckpt.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ck = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(ck("not a checkpoint file".into()));
    }
    let mlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let json = bytes
        .get(12..12 + mlen)
        .ok_or_else(|| ck("truncated manifest".into()))?;
    let value: serde_json::Value = serde_json::from_slice(json).map_err(|e| ck(format!("bad manifest: {e}")))?;
    match value.get("version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == CHECKPOINT_VERSION as u64 => {}
        Some(v) => {
            return Err(ck(format!(
                "unsupported checkpoint version {v} (expected {CHECKPOINT_VERSION})"
            )))
        }
        None => return Err(ck("manifest has no version".into())),
    }
    let m: Manifest = serde_json::from_value(value).map_err(|e| ck(format!("bad manifest: {e}")))?;
    if m.dtype != "f64" {
        return Err(ck(format!("unsupported dtype {:?}", m.dtype)));
    }
    let payload = &bytes[12 + mlen..];
    let mut params = Vec::with_capacity(m.tensors.len());
    let mut expected_offset = 0;
    for t in &m.tensors {
        if t.shape.iter().product::<usize>() != t.len || t.offset != expected_offset {
            return Err(ck(format!(
                "tensor {}: shape {:?} does not match length {} at offset {}",
                t.name, t.shape, t.len, t.offset
            )));
        }
        let start = t.offset * 8;
        let end = start + t.len * 8;
        let raw = payload
            .get(start..end)
            .ok_or_else(|| ck(format!("tensor {}: payload truncated", t.name)))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.push(Param {
            name: t.name.clone(),
            value: Tensor::new(t.shape.clone(), data)?,
            trainable: t.trainable,
        });
        expected_offset += t.len;
    }
    if payload.len() != expected_offset * 8 {
        return Err(ck(format!(
            "payload has {} bytes, manifest describes {}",
            payload.len(),
            expected_offset * 8
        )));
    }
    let model = BuiltModel::from_params(&m.spec, params).map_err(|e| ck(e.to_string()))?;
    let vocab = match m.vocab {
        Some(entries) => Some(Vocabulary::from_entries(entries, m.vocab_min_count.unwrap_or(1))?),
        None => None,
    };
    Ok(Checkpoint {
        model,
        epoch: m.epoch,
        metrics: m.metrics,
        vocab,
        search_tags: m.search_tags,
        embedding: m.embedding,
        corpus: m.corpus,
        rng_seed: m.rng_seed,
        rng_word_pos: m.rng_word_pos.parse().map_err(|_| ck("bad rng_word_pos".into()))?,
    })
}

/// One accuracy figure in a result grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub architecture: Architecture,
    pub embedding: EmbedVariant,
    pub corpus: CorpusVariant,
    /// Percent.
    pub accuracy: f64,
}

pub type ResultKey = (Architecture, EmbedVariant, CorpusVariant);

const COLUMNS: [(CorpusVariant, EmbedVariant); 4] = [
    (CorpusVariant::Hinglish, EmbedVariant::Word2vec),
    (CorpusVariant::Hinglish, EmbedVariant::Fasttext),
    (CorpusVariant::HinglishEnglish, EmbedVariant::Word2vec),
    (CorpusVariant::HinglishEnglish, EmbedVariant::Fasttext),
];

pub const MISSING: &str = "—";

/// Plain-text accuracy grid: one row per architecture, columns grouped by
/// embedding corpus then embedding method. Empty input gives the header only.
pub fn report_grid(results: &BTreeMap<ResultKey, f64>) -> String {
    let name_w = Architecture::ALL
        .iter()
        .map(|a| a.display_name().len())
        .max()
        .unwrap_or(0);
    let cell_w = 10;
    let group_w = 2 * cell_w + 3;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<name_w$} | {:^group_w$} | {:^group_w$}",
        "Model",
        CorpusVariant::Hinglish.display_name(),
        CorpusVariant::HinglishEnglish.display_name()
    );
    let _ = writeln!(
        s,
        "{:<name_w$} | {:>cell_w$} | {:>cell_w$} | {:>cell_w$} | {:>cell_w$}",
        "", "Word2Vec", "FastText", "Word2Vec", "FastText"
    );
    let _ = writeln!(s, "{}", "-".repeat(name_w + 4 * (cell_w + 3)));
    if results.is_empty() {
        return s;
    }
    for arch in Architecture::ALL {
        let _ = write!(s, "{:<name_w$}", arch.display_name());
        for (c, e) in COLUMNS {
            let cell = results
                .get(&(arch, e, c))
                .map(|v| format!("{v:.2}"))
                .unwrap_or_else(|| MISSING.to_string());
            // pad by characters, not bytes, so the dash lines up
            let pad = cell_w.saturating_sub(cell.chars().count());
            let _ = write!(s, " | {}{cell}", " ".repeat(pad));
        }
        s.push('\n');
    }
    s
}

/// CSV form of [`report_grid`]; missing cells are empty.
pub fn report_grid_csv(results: &BTreeMap<ResultKey, f64>) -> String {
    let mut s = String::from("model");
    for (c, e) in COLUMNS {
        let _ = write!(s, ",{}_{}", c.as_str(), e.as_str());
    }
    s.push('\n');
    if results.is_empty() {
        return s;
    }
    for arch in Architecture::ALL {
        s.push_str(arch.as_str());
        for (c, e) in COLUMNS {
            s.push(',');
            if let Some(v) = results.get(&(arch, e, c)) {
                let _ = write!(s, "{v:.2}");
            }
        }
        s.push('\n');
    }
    s
}

pub fn results_map(records: &[ResultRecord]) -> BTreeMap<ResultKey, f64> {
    records
        .iter()
        .map(|r| ((r.architecture, r.embedding, r.corpus), r.accuracy))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, search_tag_set, DEFAULT_SEARCH_TAGS, PAD};
    use crate::models::build_model;
    use crate::nncore::test_tensor;
    use crate::synthetic::toy_corpus;

    fn toy(n: usize, seed: u64, max_len: usize) -> (Dataset, Vocabulary) {
        let recs = toy_corpus(seed, n);
        let tags = search_tag_set(DEFAULT_SEARCH_TAGS);
        let vocab = build_vocabulary(&record_tokens(&recs, &tags), 1).unwrap();
        (encode_records(&recs, &vocab, max_len, &tags), vocab)
    }

    fn model(arch: Architecture, vocab: &Vocabulary, seed: u64) -> BuiltModel {
        let spec = ModelSpec {
            max_len: 16,
            ..ModelSpec::scaled(arch, 8)
        };
        build_model(&spec, test_tensor(&[vocab.len(), 8], seed, 1.0), seed).unwrap()
    }

    fn metrics(epoch: usize, val_accuracy: f64) -> EpochMetrics {
        EpochMetrics {
            epoch,
            train_loss: 0.0,
            train_accuracy: 0.0,
            val_loss: 0.0,
            val_accuracy,
        }
    }

    #[test]
    fn best_epoch_earliest_tie() {
        let h = History {
            epochs: vec![metrics(1, 0.6), metrics(2, 0.8), metrics(3, 0.7), metrics(4, 0.8)],
        };
        assert_eq!(h.best_epoch(), Some(2));
        assert_eq!(History::default().best_epoch(), None);
        let back = History::from_jsonl(&h.to_jsonl()).unwrap();
        assert_eq!(back, h);
        assert_eq!(h.to_jsonl().lines().count(), 4);
    }

    #[test]
    fn confusion_by_hand() {
        let probs = [0.9, 0.5, 0.2, 0.49];
        let labels = [1, 0, 0, 1];
        let c = Confusion::from_predictions(&probs, &labels);
        assert_eq!(
            c,
            Confusion {
                true_positive: 1,
                false_positive: 1,
                true_negative: 1,
                false_negative: 1
            }
        );
        assert_eq!(c.accuracy(), 0.5);
        let all = report_from_probs(&[0.9, 0.1], &[1, 0]);
        assert_eq!(all.accuracy, 1.0);
        let half = report_from_probs(&[0.5; 4], &[1, 0, 1, 0]);
        assert_eq!(half.accuracy, 0.5);
        assert!((half.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn single_full_batch_epoch_is_one_step() {
        let (data, vocab) = toy(32, 1, 16);
        let mut m = model(Architecture::Lstm, &vocab, 1);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let out = train(&mut m, &data, &data, &cfg, &RunInfo::default()).unwrap();
        assert_eq!(out.optimizer_steps, 1);
        assert_eq!(out.history.len(), 1);
    }

    #[test]
    fn training_is_reproducible() {
        let (data, vocab) = toy(48, 2, 16);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = model(Architecture::AttnBilstm, &vocab, 3);
            let out = train(&mut m, &data, &data, &cfg, &RunInfo::default()).unwrap();
            (out.history, m)
        };
        let (h1, m1) = run();
        let (h2, m2) = run();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        // evaluation is deterministic
        assert_eq!(evaluate(&m1, &data).unwrap(), evaluate(&m1, &data).unwrap());
    }

    #[test]
    fn invalid_config_rejected() {
        let (data, vocab) = toy(16, 2, 16);
        let mut m = model(Architecture::Lstm, &vocab, 3);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&mut m, &data, &data, &cfg, &RunInfo::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let (data, vocab) = toy(16, 2, 16);
        let mut m = model(Architecture::Lstm, &vocab, 3);
        m.param_mut("out.b").unwrap().value.data_mut()[0] = f64::NAN;
        let err = train(&mut m, &data, &data, &TrainConfig::default(), &RunInfo::default()).unwrap_err();
        match err {
            Error::NonFiniteLoss { epoch, batch, norms } => {
                assert_eq!((epoch, batch), (1, 0));
                assert!(norms.contains("out.b=NaN"), "{norms}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn checkpoints_roundtrip_and_selection() {
        let (data, vocab) = toy(40, 4, 16);
        let dir = tempfile::tempdir().unwrap();
        let mut m = model(Architecture::ParallelCnn, &vocab, 5);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            checkpoint_dir: Some(dir.path().to_path_buf()),
            keep_best: true,
            ..TrainConfig::default()
        };
        let info = RunInfo {
            vocab: Some(vocab.clone()),
            search_tags: DEFAULT_SEARCH_TAGS.iter().map(|s| s.to_string()).collect(),
            embedding: Some(EmbedVariant::Word2vec),
            corpus: Some(CorpusVariant::Hinglish),
        };
        let out = train(&mut m, &data, &data, &cfg, &info).unwrap();
        assert_eq!(out.checkpoints.len(), 2);
        assert!(dir.path().join("history.jsonl").exists());
        let best = load_checkpoint(&dir.path().join("best.ckpt")).unwrap();
        assert_eq!(best.epoch, out.best_epoch);
        assert_eq!(best.epoch, out.history.best_epoch().unwrap());
        assert_eq!(best.model.params(), out.best_params.as_slice());
        assert_eq!(best.vocab.as_ref().unwrap().tokens(), vocab.tokens());
        assert_eq!(best.embedding, Some(EmbedVariant::Word2vec));

        // bit-exact forward after reload
        let last = Checkpoint::new(m.clone(), 3, None, &info, &ChaCha8Rng::seed_from_u64(9));
        let p = dir.path().join("last.ckpt");
        save_checkpoint(&p, &last).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, last);
        assert_eq!(
            predict_dataset(&back.model, &data).unwrap(),
            predict_dataset(&m, &data).unwrap()
        );
        assert_eq!(back.rng().get_word_pos(), last.rng_word_pos);
    }

    fn rewrite_manifest(path: &Path, f: impl Fn(&mut serde_json::Value)) {
        let bytes = fs::read(path).unwrap();
        let mlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut v: serde_json::Value = serde_json::from_slice(&bytes[12..12 + mlen]).unwrap();
        f(&mut v);
        let json = serde_json::to_vec(&v).unwrap();
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&bytes[12 + mlen..]);
        fs::write(path, out).unwrap();
    }

    #[test]
    fn corrupted_checkpoints_rejected() {
        let (_, vocab) = toy(16, 2, 16);
        let m = model(Architecture::Lstm, &vocab, 3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let ck = Checkpoint::new(m, 1, None, &RunInfo::default(), &ChaCha8Rng::seed_from_u64(0));

        save_checkpoint(&p, &ck).unwrap();
        rewrite_manifest(&p, |v| v["version"] = 2.into());
        let e = load_checkpoint(&p).unwrap_err().to_string();
        assert!(e.contains("unsupported checkpoint version 2"), "{e}");

        save_checkpoint(&p, &ck).unwrap();
        let third = ck.model.params()[3].name.clone();
        rewrite_manifest(&p, |v| v["tensors"][3]["shape"] = serde_json::json!([2, 2]));
        let e = load_checkpoint(&p).unwrap_err().to_string();
        assert!(e.contains(&third), "{e}");

        save_checkpoint(&p, &ck).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        let e = load_checkpoint(&p).unwrap_err().to_string();
        assert!(e.contains("out.b") && e.contains("truncated"), "{e}");

        fs::write(&p, b"hello").unwrap();
        assert!(load_checkpoint(&p).is_err());
    }

    #[test]
    fn predict_on_raw_text() {
        let (_, vocab) = toy(40, 4, 16);
        let tags = search_tag_set(DEFAULT_SEARCH_TAGS);
        let mut m = model(Architecture::Bilstm, &vocab, 5);
        let a = predict(&m, "wah kya baat hai #sarcasm", &vocab, 16, &tags).unwrap();
        let b = predict(&m, "wah kya baat hai #sarcasm", &vocab, 16, &tags).unwrap();
        assert_eq!(a, b);
        // '#' before a non-tag word only strips the symbol
        let c = predict(&m, "#wah kya baat hai", &vocab, 16, &tags).unwrap();
        let d = predict(&m, "wah kya baat# hai", &vocab, 16, &tags).unwrap();
        assert_eq!(a, c);
        assert_eq!(a, d);
        for n in ["out.w", "out.b"] {
            m.param_mut(n)
                .unwrap()
                .value
                .data_mut()
                .iter_mut()
                .for_each(|x| *x = 0.0);
        }
        assert_eq!(predict(&m, "anything at all", &vocab, 16, &tags).unwrap(), 0.5);
        let _ = PAD;
    }

    #[test]
    fn grid_layouts() {
        let empty = report_grid(&BTreeMap::new());
        assert_eq!(empty.lines().count(), 3);
        assert_eq!(report_grid_csv(&BTreeMap::new()).lines().count(), 1);

        let mut one = BTreeMap::new();
        one.insert(
            (
                Architecture::AttnBilstm,
                EmbedVariant::Word2vec,
                CorpusVariant::HinglishEnglish,
            ),
            78.40,
        );
        let g = report_grid(&one);
        assert_eq!(g.matches(MISSING).count(), 19);
        assert!(g.contains("78.40"));
        assert_eq!(g.lines().count(), 8);
        let csv = report_grid_csv(&one);
        assert_eq!(csv.lines().nth(5).unwrap(), "attn_bilstm,,,78.40,");
    }
}
