//! Skip-gram negative-sampling word embeddings, in a plain-word variant
//! and a subword variant that composes each word from hashed character
//! n-grams.
//!
//! Training is single-threaded and bit-reproducible by default. With
//! `workers > 1` the corpus is split across threads that update the shared
//! matrices without synchronisation (Hogwild-style); reads may observe
//! partially applied updates and results are no longer deterministic.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, OOV, PAD};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedVariant {
    Word2vec,
    Fasttext,
}

impl EmbedVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbedVariant::Word2vec => "word2vec",
            EmbedVariant::Fasttext => "fasttext",
        }
    }
}

impl std::str::FromStr for EmbedVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "word2vec" | "w2v" => Ok(EmbedVariant::Word2vec),
            "fasttext" | "ft" => Ok(EmbedVariant::Fasttext),
            _ => Err(Error::Config(format!("unknown embedding variant {s:?}"))),
        }
    }
}

impl std::fmt::Display for EmbedVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which raw corpus the embeddings were trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusVariant {
    Hinglish,
    HinglishEnglish,
}

impl CorpusVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            CorpusVariant::Hinglish => "hinglish",
            CorpusVariant::HinglishEnglish => "hinglish_english",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            CorpusVariant::Hinglish => "Hinglish",
            CorpusVariant::HinglishEnglish => "Hinglish + English",
        }
    }
}

impl std::str::FromStr for CorpusVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['+', '-', ' '], "_").as_str() {
            "hinglish" => Ok(CorpusVariant::Hinglish),
            "hinglish_english" | "hinglish__english" => Ok(CorpusVariant::HinglishEnglish),
            _ => Err(Error::Config(format!("unknown corpus variant {s:?}"))),
        }
    }
}

impl std::fmt::Display for CorpusVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub min_lr: f64,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub bucket_count: u32,
    pub unigram_power: f64,
    pub seed: u64,
    /// Values above 1 enable unsynchronised multi-threaded updates.
    pub workers: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            dim: 300,
            window: 10,
            negatives: 5,
            epochs: 5,
            initial_lr: 0.025,
            min_lr: 1e-4,
            ngram_min: 3,
            ngram_max: 6,
            bucket_count: 1 << 21,
            unigram_power: 0.75,
            seed: 1,
            workers: 1,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim < 1 {
            return bad("embed.dim must be at least 1");
        }
        if self.window < 1 {
            return bad("embed.window must be at least 1");
        }
        if self.negatives < 1 {
            return bad("embed.negatives must be at least 1");
        }
        if self.ngram_min < 1 || self.ngram_min > self.ngram_max {
            return bad("embed.ngram_min must be in 1..=ngram_max");
        }
        if self.bucket_count < 1 {
            return bad("embed.bucket_count must be at least 1");
        }
        if self.workers < 1 {
            return bad("embed.workers must be at least 1");
        }
        if !(self.initial_lr > 0.0) || self.min_lr < 0.0 || self.min_lr > self.initial_lr {
            return bad("embed learning rates must satisfy 0 <= min_lr <= initial_lr, initial_lr > 0");
        }
        Ok(())
    }
}

/// Cumulative unigram^power distribution over the retained vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSamplingTable {
    tokens: Vec<usize>,
    cumulative: Vec<f64>,
}

pub fn build_sampling_table(vocab: &Vocabulary, power: f64) -> Result<NegativeSamplingTable> {
    let mut tokens = Vec::new();
    let mut weights = Vec::new();
    for (i, _, c) in vocab.entries() {
        tokens.push(i);
        weights.push((c as f64).powf(power));
    }
    if tokens.is_empty() {
        return Err(Error::Input("negative sampling needs a non-empty vocabulary".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Input("negative sampling weights sum to zero".into()));
    }
    let mut acc = 0.0;
    let mut cumulative: Vec<f64> = weights
        .iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect();
    *cumulative.last_mut().expect("non-empty") = 1.0;
    Ok(NegativeSamplingTable { tokens, cumulative })
}

impl NegativeSamplingTable {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.tokens[i.min(self.tokens.len() - 1)]
    }

    /// `(vocabulary index, probability)` pairs.
    pub fn probabilities(&self) -> Vec<(usize, f64)> {
        let mut prev = 0.0;
        self.tokens
            .iter()
            .zip(&self.cumulative)
            .map(|(&t, &c)| {
                let p = c - prev;
                prev = c;
                (t, p)
            })
            .collect()
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Loss and gradients of one skip-gram negative-sampling term.
#[derive(Debug, Clone, PartialEq)]
pub struct SgnsGrads {
    pub loss: f64,
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `L = −log σ(u_c·v) − Σ_n log σ(−u_n·v)` with its exact gradients with
/// respect to the center vector `v`, the context vector `u_c` and each
/// negative `u_n`.
pub fn sgns_loss_and_grads(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> SgnsGrads {
    let dim = center.len();
    let s = dot(context, center);
    let mut loss = -log_sigmoid(s);
    let coef = crate::nncore::sigmoid(s) - 1.0;
    let mut g_center: Vec<f64> = context.iter().map(|u| coef * u).collect();
    let g_context: Vec<f64> = center.iter().map(|v| coef * v).collect();
    let mut g_neg = Vec::with_capacity(negatives.len());
    for &u in negatives {
        let sn = dot(u, center);
        loss -= log_sigmoid(-sn);
        let c = crate::nncore::sigmoid(sn);
        for j in 0..dim {
            g_center[j] += c * u[j];
        }
        g_neg.push(center.iter().map(|v| c * v).collect());
    }
    SgnsGrads {
        loss,
        center: g_center,
        context: g_context,
        negatives: g_neg,
    }
}

/// Character n-grams of `<word>` with lengths `min..=max`, in order of start
/// position then length.
pub fn word_ngrams(word: &str, min: usize, max: usize) -> Vec<String> {
    let chars: Vec<char> = std::iter::once('<')
        .chain(word.chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut out = Vec::new();
    for start in 0..chars.len() {
        for n in min..=max {
            if start + n > chars.len() {
                break;
            }
            out.push(chars[start..start + n].iter().collect());
        }
    }
    out
}

/// 32-bit FNV-1a over UTF-8 bytes.
pub fn fnv1a(s: &str) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for b in s.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

/// Hashed n-gram vectors. Only buckets reachable from the training
/// vocabulary are materialised; every other bucket is the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SubwordTable {
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub bucket_count: u32,
    rows: HashMap<u32, usize>,
    ids: Vec<u32>,
    data: Vec<f64>,
    /// Materialised rows used by each vocabulary word.
    word_rows: Vec<Vec<usize>>,
}

impl SubwordTable {
    fn bucket_ids(&self, word: &str) -> Vec<u32> {
        word_ngrams(word, self.ngram_min, self.ngram_max)
            .iter()
            .map(|g| fnv1a(g) % self.bucket_count)
            .collect()
    }

    fn new(vocab: &Vocabulary, ngram_min: usize, ngram_max: usize, bucket_count: u32, dim: usize) -> Self {
        let mut t = SubwordTable {
            ngram_min,
            ngram_max,
            bucket_count,
            rows: HashMap::new(),
            ids: Vec::new(),
            data: Vec::new(),
            word_rows: Vec::with_capacity(vocab.len()),
        };
        for (i, tok) in vocab.tokens().iter().enumerate() {
            if i == PAD || i == OOV {
                t.word_rows.push(Vec::new());
                continue;
            }
            let rows = t.bucket_ids(tok).into_iter().map(|b| t.row_for(b, dim)).collect();
            t.word_rows.push(rows);
        }
        t
    }

    fn row_for(&mut self, bucket: u32, dim: usize) -> usize {
        if let Some(&r) = self.rows.get(&bucket) {
            return r;
        }
        let r = self.ids.len();
        self.rows.insert(bucket, r);
        self.ids.push(bucket);
        self.data.extend(std::iter::repeat_n(0.0, dim));
        r
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Vector of bucket `id` (zero if never materialised).
    pub fn bucket(&self, id: u32, dim: usize) -> Option<&[f64]> {
        self.rows.get(&id).map(|&r| &self.data[r * dim..(r + 1) * dim])
    }
}

/// Trained embeddings: input (word) vectors, output (context) vectors and,
/// for the subword variant, the n-gram bucket table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub vocab: Vocabulary,
    pub dim: usize,
    input: Vec<f64>,
    output: Vec<f64>,
    subword: Option<SubwordTable>,
}

impl EmbeddingMatrix {
    pub fn variant(&self) -> EmbedVariant {
        if self.subword.is_some() {
            EmbedVariant::Fasttext
        } else {
            EmbedVariant::Word2vec
        }
    }

    pub fn rows(&self) -> usize {
        self.vocab.len()
    }

    /// Raw stored input row.
    pub fn input_row(&self, i: usize) -> &[f64] {
        &self.input[i * self.dim..(i + 1) * self.dim]
    }

    pub fn output_row(&self, i: usize) -> &[f64] {
        &self.output[i * self.dim..(i + 1) * self.dim]
    }

    pub fn subword(&self) -> Option<&SubwordTable> {
        self.subword.as_ref()
    }

    /// Builds a plain matrix from explicit rows (used by tests and loaders).
    pub fn from_rows(vocab: Vocabulary, dim: usize, input: Vec<f64>) -> Result<Self> {
        if input.len() != vocab.len() * dim {
            return Err(Error::Shape {
                op: "embedding",
                left: vec![vocab.len(), dim],
                right: vec![input.len()],
            });
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("embedding contains non-finite values".into()));
        }
        let output = vec![0.0; input.len()];
        Ok(EmbeddingMatrix {
            vocab,
            dim,
            input,
            output,
            subword: None,
        })
    }

    fn init(vocab: &Vocabulary, config: &EmbedConfig, subword: bool, rng: &mut ChaCha8Rng) -> Self {
        let dim = config.dim;
        let bound = 0.5 / dim as f64;
        let input = (0..vocab.len() * dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let subword =
            subword.then(|| SubwordTable::new(vocab, config.ngram_min, config.ngram_max, config.bucket_count, dim));
        EmbeddingMatrix {
            vocab: vocab.clone(),
            dim,
            input,
            output: vec![0.0; vocab.len() * dim],
            subword,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.input.iter().chain(&self.output).all(|x| x.is_finite())
            && self
                .subword
                .as_ref()
                .is_none_or(|s| s.data.iter().all(|x| x.is_finite()))
    }

    fn compose_in_vocab(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(self.input_row(i));
        if let Some(sw) = &self.subword {
            let rows = &sw.word_rows[i];
            if rows.is_empty() {
                return;
            }
            for &r in rows {
                for (o, v) in out.iter_mut().zip(&sw.data[r * self.dim..(r + 1) * self.dim]) {
                    *o += v;
                }
            }
            let n = (rows.len() + 1) as f64;
            out.iter_mut().for_each(|o| *o /= n);
        }
    }

    /// Query vector for the token at vocabulary index `i`.
    pub fn vector_at(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.compose_in_vocab(i, &mut out);
        out
    }
}

/// Vector for an arbitrary word (lowercased first, matching tokenisation).
///
/// Plain variant: the stored row, or the OOV row for unknown words.
/// Subword variant: mean of the word row and its n-gram bucket rows; unknown
/// words use the mean of their n-gram buckets alone.
pub fn word_vector(word: &str, matrix: &EmbeddingMatrix) -> Vec<f64> {
    let word = word.to_lowercase();
    if let Some(i) = matrix.vocab.get(&word) {
        return matrix.vector_at(i);
    }
    let Some(sw) = &matrix.subword else {
        return matrix.input_row(OOV).to_vec();
    };
    let ids = sw.bucket_ids(&word);
    let mut out = vec![0.0; matrix.dim];
    if ids.is_empty() {
        log::warn!("no character n-grams for {word:?}; using a zero vector");
        return out;
    }
    for id in &ids {
        if let Some(row) = sw.bucket(*id, matrix.dim) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
    }
    let n = ids.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Top-`k` vocabulary words by cosine similarity to `word`, excluding the
/// word itself and the reserved entries. Ties keep vocabulary order.
pub fn nearest_neighbors(word: &str, k: usize, matrix: &EmbeddingMatrix) -> Result<Vec<(String, f64)>> {
    if k < 1 {
        return Err(Error::Input("k must be at least 1".into()));
    }
    let q = word_vector(word, matrix);
    if dot(&q, &q) == 0.0 {
        return Err(Error::Input(format!("query vector for {word:?} has zero norm")));
    }
    let own = matrix.vocab.get(&word.to_lowercase());
    let mut scored: Vec<(usize, f64)> = (2..matrix.rows())
        .filter(|&i| Some(i) != own)
        .map(|i| (i, cosine(&q, &matrix.vector_at(i))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, c)| (matrix.vocab.token(i).unwrap_or_default().to_string(), c))
        .collect())
}

/// Row storage that the SGD kernel reads and writes.
trait RowStore {
    fn read(&self, row: usize, out: &mut [f64]);
    fn add(&mut self, row: usize, scale: f64, delta: &[f64]);
}

struct Plain<'a>(&'a mut [f64]);

impl RowStore for Plain<'_> {
    fn read(&self, row: usize, out: &mut [f64]) {
        let d = out.len();
        out.copy_from_slice(&self.0[row * d..(row + 1) * d]);
    }

    fn add(&mut self, row: usize, scale: f64, delta: &[f64]) {
        let d = delta.len();
        for (x, g) in self.0[row * d..(row + 1) * d].iter_mut().zip(delta) {
            *x += scale * g;
        }
    }
}

/// Shared view for racy multi-worker updates; each element is an f64 stored
/// as bits. Read-modify-write is not atomic, so concurrent updates can be lost.
#[derive(Clone, Copy)]
struct Racy<'a>(&'a [AtomicU64]);

impl RowStore for Racy<'_> {
    fn read(&self, row: usize, out: &mut [f64]) {
        let d = out.len();
        for (o, a) in out.iter_mut().zip(&self.0[row * d..(row + 1) * d]) {
            *o = f64::from_bits(a.load(Ordering::Relaxed));
        }
    }

    fn add(&mut self, row: usize, scale: f64, delta: &[f64]) {
        let d = delta.len();
        for (a, g) in self.0[row * d..(row + 1) * d].iter().zip(delta) {
            let v = f64::from_bits(a.load(Ordering::Relaxed)) + scale * g;
            a.store(v.to_bits(), Ordering::Relaxed);
        }
    }
}

struct Schedule<'a> {
    config: &'a EmbedConfig,
    total_words: u64,
    processed: &'a AtomicU64,
}

impl Schedule<'_> {
    fn lr(&self) -> f64 {
        let done = self.processed.load(Ordering::Relaxed) as f64 / self.total_words.max(1) as f64;
        let c = self.config;
        (c.initial_lr - (c.initial_lr - c.min_lr) * done.min(1.0)).max(c.min_lr)
    }
}

/// Input rows making up one word: the word row plus its bucket rows.
struct Composition<'a> {
    word_rows: Option<&'a [Vec<usize>]>,
}

#[allow(clippy::too_many_arguments)]
fn train_pass<S: RowStore>(
    sentences: &[Vec<usize>],
    input: &mut S,
    output: &mut S,
    mut buckets: Option<&mut S>,
    comp: &Composition<'_>,
    table: &NegativeSamplingTable,
    schedule: &Schedule<'_>,
    rng: &mut ChaCha8Rng,
) -> (f64, u64) {
    let cfg = schedule.config;
    let dim = cfg.dim;
    let mut center = vec![0.0; dim];
    let mut ctx = vec![0.0; dim];
    let mut scratch = vec![0.0; dim];
    let mut negs: Vec<Vec<f64>> = vec![vec![0.0; dim]; cfg.negatives];
    let mut neg_ids = Vec::with_capacity(cfg.negatives);
    let (mut loss_sum, mut pairs) = (0.0, 0u64);

    for sent in sentences {
        for (pos, &w) in sent.iter().enumerate() {
            let lr = schedule.lr();
            let radius = rng.random_range(1..=cfg.window);
            let lo = pos.saturating_sub(radius);
            let hi = (pos + radius).min(sent.len() - 1);

            for (cpos, &c) in sent.iter().enumerate().take(hi + 1).skip(lo) {
                if cpos == pos {
                    continue;
                }
                // compose the center representation
                input.read(w, &mut center);
                let extra = comp.word_rows.map(|r| r[w].as_slice()).unwrap_or(&[]);
                if let (Some(b), false) = (buckets.as_deref_mut(), extra.is_empty()) {
                    for &r in extra {
                        b.read(r, &mut scratch);
                        center.iter_mut().zip(&scratch).for_each(|(x, y)| *x += y);
                    }
                    let n = (extra.len() + 1) as f64;
                    center.iter_mut().for_each(|x| *x /= n);
                }
                output.read(c, &mut ctx);
                neg_ids.clear();
                for _ in 0..cfg.negatives {
                    let n = table.sample(rng);
                    if n != c {
                        neg_ids.push(n);
                    }
                }
                for (slot, &n) in negs.iter_mut().zip(&neg_ids) {
                    output.read(n, slot);
                }
                let neg_refs: Vec<&[f64]> = negs[..neg_ids.len()].iter().map(Vec::as_slice).collect();
                let g = sgns_loss_and_grads(&center, &ctx, &neg_refs);
                loss_sum += g.loss;
                pairs += 1;

                output.add(c, -lr, &g.context);
                for (n, gn) in neg_ids.iter().zip(&g.negatives) {
                    output.add(*n, -lr, gn);
                }
                match (buckets.as_deref_mut(), extra.is_empty()) {
                    (Some(b), false) => {
                        let share = -lr / (extra.len() + 1) as f64;
                        input.add(w, share, &g.center);
                        for &r in extra {
                            b.add(r, share, &g.center);
                        }
                    }
                    _ => input.add(w, -lr, &g.center),
                }
            }
            schedule.processed.fetch_add(1, Ordering::Relaxed);
        }
    }
    (loss_sum, pairs)
}

/// Mean SGNS loss per (center, context) pair for each epoch.
pub type EpochLosses = Vec<f64>;

fn to_ids<S: AsRef<str>>(token_lists: &[Vec<S>], vocab: &Vocabulary) -> Vec<Vec<usize>> {
    token_lists
        .iter()
        .map(|l| {
            l.iter()
                .filter_map(|t| vocab.get(t.as_ref()))
                .filter(|&i| i > OOV)
                .collect::<Vec<_>>()
        })
        .filter(|s| s.len() > 1)
        .collect()
}

fn train_impl<S: AsRef<str>>(
    token_lists: &[Vec<S>],
    vocab: &Vocabulary,
    config: &EmbedConfig,
    subword: bool,
) -> Result<(EmbeddingMatrix, EpochLosses)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut m = EmbeddingMatrix::init(vocab, config, subword, &mut rng);
    if config.epochs == 0 {
        return Ok((m, Vec::new()));
    }
    let table = build_sampling_table(vocab, config.unigram_power)?;
    let sentences = to_ids(token_lists, vocab);
    let words_per_epoch: u64 = sentences.iter().map(|s| s.len() as u64).sum();
    let processed = AtomicU64::new(0);
    let schedule = Schedule {
        config,
        total_words: words_per_epoch * config.epochs as u64,
        processed: &processed,
    };
    let mut losses = Vec::with_capacity(config.epochs);

    let EmbeddingMatrix {
        input,
        output,
        subword: sw,
        ..
    } = &mut m;
    let (word_rows, bucket_data) = match sw {
        Some(t) => (Some(t.word_rows.as_slice()), Some(&mut t.data)),
        None => (None, None),
    };
    let comp = Composition { word_rows };

    if config.workers == 1 {
        let mut bstore = bucket_data.map(|d| Plain(d.as_mut_slice()));
        let (mut istore, mut ostore) = (Plain(input.as_mut_slice()), Plain(output.as_mut_slice()));
        for _ in 0..config.epochs {
            let (l, n) = train_pass(
                &sentences,
                &mut istore,
                &mut ostore,
                bstore.as_mut(),
                &comp,
                &table,
                &schedule,
                &mut rng,
            );
            losses.push(if n > 0 { l / n as f64 } else { 0.0 });
        }
    } else {
        let atom = |v: &[f64]| v.iter().map(|x| AtomicU64::new(x.to_bits())).collect::<Vec<_>>();
        let (ai, ao) = (atom(input), atom(output));
        let ab = bucket_data.as_deref().map(|d| atom(d));
        let chunk = sentences.len().div_ceil(config.workers).max(1);
        for epoch in 0..config.epochs {
            let results: Vec<(f64, u64)> = std::thread::scope(|s| {
                let handles: Vec<_> = sentences
                    .chunks(chunk)
                    .enumerate()
                    .map(|(wi, part)| {
                        let (mut i, mut o) = (Racy(&ai), Racy(&ao));
                        let mut b = ab.as_deref().map(Racy);
                        let (comp, table, schedule) = (&comp, &table, &schedule);
                        let seed = config.seed ^ ((epoch as u64) << 32) ^ (wi as u64 + 1);
                        s.spawn(move || {
                            let mut r = ChaCha8Rng::seed_from_u64(seed);
                            train_pass(part, &mut i, &mut o, b.as_mut(), comp, table, schedule, &mut r)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("worker panicked"))
                    .collect()
            });
            let (l, n) = results.iter().fold((0.0, 0), |a, r| (a.0 + r.0, a.1 + r.1));
            losses.push(if n > 0 { l / n as f64 } else { 0.0 });
        }
        let back = |a: &[AtomicU64], v: &mut [f64]| {
            for (x, y) in v.iter_mut().zip(a) {
                *x = f64::from_bits(y.load(Ordering::Relaxed));
            }
        };
        back(&ai, input);
        back(&ao, output);
        if let (Some(ab), Some(d)) = (ab, bucket_data) {
            back(&ab, d);
        }
    }

    if !m.is_finite() {
        return Err(Error::Input("embedding training diverged to non-finite values".into()));
    }
    Ok((m, losses))
}

/// Plain skip-gram negative sampling; also returns mean loss per epoch.
pub fn train_word2vec_with_losses<S: AsRef<str>>(
    token_lists: &[Vec<S>],
    vocab: &Vocabulary,
    config: &EmbedConfig,
) -> Result<(EmbeddingMatrix, EpochLosses)> {
    train_impl(token_lists, vocab, config, false)
}

pub fn train_word2vec<S: AsRef<str>>(
    token_lists: &[Vec<S>],
    vocab: &Vocabulary,
    config: &EmbedConfig,
) -> Result<EmbeddingMatrix> {
    train_impl(token_lists, vocab, config, false).map(|r| r.0)
}

/// Subword skip-gram: each center word is the mean of its word vector and
/// its character n-gram bucket vectors, and the gradient is shared equally
/// among them.
pub fn train_fasttext_with_losses<S: AsRef<str>>(
    token_lists: &[Vec<S>],
    vocab: &Vocabulary,
    config: &EmbedConfig,
) -> Result<(EmbeddingMatrix, EpochLosses)> {
    train_impl(token_lists, vocab, config, true)
}

pub fn train_fasttext<S: AsRef<str>>(
    token_lists: &[Vec<S>],
    vocab: &Vocabulary,
    config: &EmbedConfig,
) -> Result<EmbeddingMatrix> {
    train_impl(token_lists, vocab, config, true).map(|r| r.0)
}

fn push_row(out: &mut String, label: &str, row: &[f64]) {
    out.push_str(label);
    for v in row {
        // `{}` prints the shortest representation that parses back exactly
        write!(out, " {v}").expect("write to string");
    }
    out.push('\n');
}

/// Path of the subword sidecar written next to an embedding file.
pub fn subword_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".subword");
    PathBuf::from(s)
}

/// Writes `V dim` then `word v1 … vdim` per vocabulary entry, using the
/// query vector of each word. The subword variant additionally writes the raw
/// word rows and materialised buckets to [`subword_path`].
pub fn save_embeddings(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    let mut out = format!("{} {}\n", m.rows(), m.dim);
    for (i, tok) in m.vocab.tokens().iter().enumerate() {
        push_row(&mut out, tok, &m.vector_at(i));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;

    if let Some(sw) = &m.subword {
        let side = subword_path(path);
        let mut out = format!(
            "subword {} {} {} {} {} {}\n",
            m.rows(),
            sw.len(),
            m.dim,
            sw.ngram_min,
            sw.ngram_max,
            sw.bucket_count
        );
        for (i, tok) in m.vocab.tokens().iter().enumerate() {
            push_row(&mut out, &format!("w {tok}"), m.input_row(i));
        }
        let mut order: Vec<usize> = (0..sw.len()).collect();
        order.sort_by_key(|&r| sw.ids[r]);
        for r in order {
            push_row(
                &mut out,
                &format!("b {}", sw.ids[r]),
                &sw.data[r * m.dim..(r + 1) * m.dim],
            );
        }
        fs::write(&side, out).map_err(|e| Error::io(side, e))?;
    } else {
        let side = subword_path(path);
        if side.exists() {
            fs::remove_file(&side).map_err(|e| Error::io(side, e))?;
        }
    }
    Ok(())
}

fn parse_values(path: &Path, lineno: usize, fields: &[&str], dim: usize) -> Result<Vec<f64>> {
    if fields.len() != dim {
        return Err(Error::parse(
            path,
            lineno,
            format!("expected {dim} values, found {}", fields.len()),
        ));
    }
    fields
        .iter()
        .map(|f| match f.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) => Err(Error::parse(path, lineno, format!("non-finite value {f:?}"))),
            Err(_) => Err(Error::parse(path, lineno, format!("invalid number {f:?}"))),
        })
        .collect()
}

fn parse_header(path: &Path, line: Option<&str>, tag: Option<&str>, n: usize) -> Result<Vec<usize>> {
    let line = line.ok_or_else(|| Error::parse(path, 1, "missing header"))?;
    let mut parts: Vec<&str> = line.split_whitespace().collect();
    if let Some(tag) = tag {
        if parts.first() != Some(&tag) {
            return Err(Error::parse(path, 1, format!("header must start with {tag:?}")));
        }
        parts.remove(0);
    }
    if parts.len() != n {
        return Err(Error::parse(path, 1, format!("header needs {n} integers")));
    }
    parts
        .iter()
        .map(|p| {
            p.parse()
                .map_err(|_| Error::parse(path, 1, format!("bad header field {p:?}")))
        })
        .collect()
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let h = parse_header(path, lines.next(), None, 2)?;
    let (v, dim) = (h[0], h[1]);
    if dim == 0 {
        return Err(Error::parse(path, 1, "dimension must be positive"));
    }
    let mut tokens = Vec::with_capacity(v);
    let mut rows = Vec::with_capacity(v * dim);
    let mut lineno = 1;
    for line in lines {
        lineno += 1;
        if line.is_empty() {
            continue;
        }
        if tokens.len() == v {
            return Err(Error::parse(path, lineno, format!("more rows than the {v} declared")));
        }
        let fields: Vec<&str> = line.split(' ').collect();
        rows.extend(parse_values(path, lineno, &fields[1..], dim)?);
        tokens.push(fields[0].to_string());
    }
    if tokens.len() != v {
        return Err(Error::parse(
            path,
            lineno + 1,
            format!(
                "unexpected end of file: header declares {v} rows, found {}",
                tokens.len()
            ),
        ));
    }
    let reserved = [crate::corpus::PAD_TOKEN, crate::corpus::OOV_TOKEN];
    if v < 2 || tokens[0] != reserved[0] || tokens[1] != reserved[1] {
        return Err(Error::parse(path, 2, "first two rows must be <pad> and <oov>"));
    }
    let vocab = Vocabulary::from_entries(tokens[2..].iter().map(|t| (t.clone(), 0)).collect(), 1)?;

    let side = subword_path(path);
    if !side.exists() {
        return EmbeddingMatrix::from_rows(vocab, dim, rows);
    }
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let mut lines = text.lines();
    let h = parse_header(&side, lines.next(), Some("subword"), 6)?;
    let (nw, nb, sdim, nmin, nmax, bc) = (h[0], h[1], h[2], h[3], h[4], h[5] as u32);
    if nw != v || sdim != dim {
        return Err(Error::parse(
            &side,
            1,
            "subword sidecar does not match embedding header",
        ));
    }
    let mut m = EmbeddingMatrix {
        input: vec![0.0; v * dim],
        output: vec![0.0; v * dim],
        subword: Some(SubwordTable::new(&vocab, nmin, nmax, bc.max(1), dim)),
        vocab,
        dim,
    };
    let (mut words, mut buckets) = (0, 0);
    let mut lineno = 1;
    for line in lines {
        lineno += 1;
        let fields: Vec<&str> = line.split(' ').collect();
        match fields.first().copied() {
            Some("w") if fields.len() >= 2 => {
                if words >= v || m.vocab.token(words) != Some(fields[1]) {
                    return Err(Error::parse(&side, lineno, "word rows out of order"));
                }
                let vals = parse_values(&side, lineno, &fields[2..], dim)?;
                m.input[words * dim..(words + 1) * dim].copy_from_slice(&vals);
                words += 1;
            }
            Some("b") if fields.len() >= 2 => {
                let id: u32 = fields[1]
                    .parse()
                    .map_err(|_| Error::parse(&side, lineno, "bad bucket id"))?;
                let vals = parse_values(&side, lineno, &fields[2..], dim)?;
                let sw = m.subword.as_mut().expect("set above");
                let r = sw.row_for(id, dim);
                sw.data[r * dim..(r + 1) * dim].copy_from_slice(&vals);
                buckets += 1;
            }
            Some("") | None => {}
            _ => return Err(Error::parse(&side, lineno, "expected `w` or `b` row")),
        }
    }
    if words != nw || buckets != nb {
        return Err(Error::parse(
            &side,
            lineno + 1,
            format!("unexpected end of file: expected {nw} word and {nb} bucket rows"),
        ));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;
    use crate::synthetic::cluster_corpus;
    use proptest::{prop_assert_eq, proptest};

    fn vocab_ab() -> Vocabulary {
        Vocabulary::from_entries(vec![("a".into(), 3), ("b".into(), 1)], 1).unwrap()
    }

    #[test]
    fn sampling_table_closed_form() {
        let t = build_sampling_table(&vocab_ab(), 0.75).unwrap();
        let p = t.probabilities();
        let pa = 3f64.powf(0.75) / (3f64.powf(0.75) + 1.0);
        assert!((p[0].1 - pa).abs() < 1e-12);
        assert!((p[0].1 - 0.6951).abs() < 1e-4);
        assert!((p[1].1 - 0.3049).abs() < 1e-4);

        let u = build_sampling_table(&vocab_ab(), 0.0).unwrap().probabilities();
        assert!((u[0].1 - 0.5).abs() < 1e-12 && (u[1].1 - 0.5).abs() < 1e-12);

        let one = Vocabulary::from_entries(vec![("x".into(), 4)], 1).unwrap();
        assert_eq!(
            build_sampling_table(&one, 0.75).unwrap().probabilities(),
            vec![(2, 1.0)]
        );

        let empty = Vocabulary::from_entries(vec![], 1).unwrap();
        assert!(build_sampling_table(&empty, 0.75).is_err());
    }

    #[test]
    fn sampling_frequencies_match_distribution() {
        let v = Vocabulary::from_entries(
            vec![("a".into(), 50), ("b".into(), 20), ("c".into(), 5), ("d".into(), 1)],
            1,
        )
        .unwrap();
        let t = build_sampling_table(&v, 0.75).unwrap();
        let probs = t.probabilities();
        assert!((probs.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = [0usize; 6];
        let n = 1_000_000;
        for _ in 0..n {
            counts[t.sample(&mut rng)] += 1;
        }
        for (i, p) in probs {
            assert!((counts[i] as f64 / n as f64 - p).abs() < 0.01);
        }
    }

    #[test]
    fn sgns_zero_dot_case() {
        let z = [0.0; 4];
        let g = sgns_loss_and_grads(&z, &[1.0, 2.0, 3.0, 4.0], &[&[1.0, -1.0, 0.5, 0.0]]);
        assert!((g.loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn sgns_saturates_to_zero() {
        let v = [30.0, 0.0];
        let u = [30.0, 0.0];
        let g = sgns_loss_and_grads(&v, &u, &[]);
        assert!(g.loss < 1e-300 + 1e-200);
        assert!(g.loss >= 0.0);
    }

    fn fd_check(center: &[f64], ctx: &[f64], negs: &[Vec<f64>]) -> f64 {
        let h = 1e-5;
        let loss = |c: &[f64], x: &[f64], n: &[Vec<f64>]| {
            let r: Vec<&[f64]> = n.iter().map(Vec::as_slice).collect();
            sgns_loss_and_grads(c, x, &r).loss
        };
        let refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
        let g = sgns_loss_and_grads(center, ctx, &refs);
        let mut worst: f64 = 0.0;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        for j in 0..center.len() {
            let (mut p, mut m) = (center.to_vec(), center.to_vec());
            p[j] += h;
            m[j] -= h;
            let num = (loss(&p, ctx, negs) - loss(&m, ctx, negs)) / (2.0 * h);
            worst = worst.max(rel(g.center[j], num));
            let (mut p, mut m) = (ctx.to_vec(), ctx.to_vec());
            p[j] += h;
            m[j] -= h;
            let num = (loss(center, &p, negs) - loss(center, &m, negs)) / (2.0 * h);
            worst = worst.max(rel(g.context[j], num));
            for k in 0..negs.len() {
                let (mut p, mut m) = (negs.to_vec(), negs.to_vec());
                p[k][j] += h;
                m[k][j] -= h;
                let num = (loss(center, ctx, &p) - loss(center, ctx, &m)) / (2.0 * h);
                worst = worst.max(rel(g.negatives[k][j], num));
            }
        }
        worst
    }

    #[test]
    fn sgns_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut r = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        for _ in 0..100 {
            let c = r(5);
            let x = r(5);
            let negs = vec![r(5), r(5), r(5)];
            let e = fd_check(&c, &x, &negs);
            assert!(e < 1e-6, "relative error {e}");
        }
    }

    #[test]
    fn ngrams_and_hash() {
        assert_eq!(word_ngrams("ab", 3, 4), vec!["<ab", "<ab>", "ab>"]);
        assert!(word_ngrams("", 3, 6).is_empty());
        // FNV-1a reference values
        assert_eq!(fnv1a(""), 0x811c9dc5);
        assert_eq!(fnv1a("a"), 0xe40c292c);
    }

    fn small_config() -> EmbedConfig {
        EmbedConfig {
            dim: 16,
            window: 3,
            epochs: 3,
            bucket_count: 1 << 16,
            ..EmbedConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let corpus = vec![vec!["a", "b", "a"]];
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let cfg = EmbedConfig {
            epochs: 0,
            ..small_config()
        };
        let m = train_word2vec(&corpus, &vocab, &cfg).unwrap();
        let init = EmbeddingMatrix::init(&vocab, &cfg, false, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
        assert_eq!(m, init);
        let bound = 0.5 / 16.0;
        assert!((0..m.rows()).all(|i| m.input_row(i).iter().all(|x| x.abs() <= bound)));
        assert!((0..m.rows()).all(|i| m.output_row(i).iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn invalid_config_rejected_before_training() {
        let corpus = vec![vec!["a", "b"]];
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        for cfg in [
            EmbedConfig {
                dim: 0,
                ..small_config()
            },
            EmbedConfig {
                window: 0,
                ..small_config()
            },
            EmbedConfig {
                negatives: 0,
                ..small_config()
            },
            EmbedConfig {
                ngram_min: 5,
                ngram_max: 3,
                ..small_config()
            },
        ] {
            assert!(matches!(train_word2vec(&corpus, &vocab, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn single_worker_is_deterministic() {
        let corpus = cluster_corpus(3, 200, 8, 2);
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let a = train_word2vec(&corpus, &vocab, &small_config()).unwrap();
        let b = train_word2vec(&corpus, &vocab, &small_config()).unwrap();
        assert_eq!(a, b);
        let a = train_fasttext(&corpus, &vocab, &small_config()).unwrap();
        let b = train_fasttext(&corpus, &vocab, &small_config()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn multi_worker_trains_finite_matrix() {
        let corpus = cluster_corpus(3, 200, 8, 2);
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let cfg = EmbedConfig {
            workers: 4,
            ..small_config()
        };
        let m = train_word2vec(&corpus, &vocab, &cfg).unwrap();
        assert!(m.is_finite());
        let m = train_fasttext(&corpus, &vocab, &cfg).unwrap();
        assert!(m.is_finite());
    }

    #[test]
    fn loss_decreases_over_first_epochs() {
        let corpus = cluster_corpus(11, 600, 60, 4);
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        for seed in 0..5 {
            let cfg = EmbedConfig {
                seed,
                epochs: 4,
                dim: 32,
                ..small_config()
            };
            let (_, losses) = train_word2vec_with_losses(&corpus, &vocab, &cfg).unwrap();
            for w in losses.windows(2).take(3) {
                assert!(w[1] < w[0], "seed {seed}: {losses:?}");
            }
        }
    }

    #[test]
    fn clusters_are_recovered() {
        let corpus = cluster_corpus(7, 400, 10, 2);
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let cfg = EmbedConfig {
            dim: 32,
            epochs: 5,
            ..small_config()
        };
        let m = train_word2vec(&corpus, &vocab, &cfg).unwrap();
        let mut same = 0;
        for (_, w, _) in vocab.entries() {
            let nn = nearest_neighbors(w, 1, &m).unwrap();
            if nn[0].0.as_bytes()[0] == w.as_bytes()[0] {
                same += 1;
            }
        }
        assert!(
            same as f64 >= 0.9 * (vocab.len() - 2) as f64,
            "{same}/{}",
            vocab.len() - 2
        );
    }

    #[test]
    fn subword_query_composition() {
        let corpus = vec![vec!["acha", "hai", "acha", "bhai"]; 5];
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let m = train_fasttext(&corpus, &vocab, &small_config()).unwrap();
        let i = vocab.get("acha").unwrap();
        let sw = m.subword().unwrap();
        let ids = sw.bucket_ids("acha");
        let mut want = m.input_row(i).to_vec();
        for id in &ids {
            let b = sw.bucket(*id, m.dim).unwrap();
            want.iter_mut().zip(b).for_each(|(w, x)| *w += x);
        }
        want.iter_mut().for_each(|w| *w /= (ids.len() + 1) as f64);
        let got = word_vector("acha", &m);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
        // casing variants normalise to the same word
        assert_eq!(word_vector("ACHA", &m), got);

        // an unseen word made only of untouched buckets is the zero vector
        let zero = word_vector("zzzzqqqq", &m);
        let unseen: Vec<u32> = sw.bucket_ids("zzzzqqqq");
        if unseen.iter().all(|id| sw.bucket(*id, m.dim).is_none()) {
            assert!(zero.iter().all(|&x| x == 0.0));
        }
        // an unseen spelling sharing n-grams gets a non-zero vector
        assert!(word_vector("achaa", &m).iter().any(|&x| x != 0.0));
        // no extractable n-grams
        let cfg = EmbedConfig {
            ngram_min: 3,
            ngram_max: 3,
            ..small_config()
        };
        let m3 = train_fasttext(&corpus, &vocab, &cfg).unwrap();
        assert!(word_vector("", &m3).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn subword_vectors_without_word_row_stay_finite() {
        // removing the word's own vector leaves a well-defined n-gram mean
        let corpus = vec![vec!["acha", "hai", "acha", "bhai"]; 5];
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let m = train_fasttext(&corpus, &vocab, &small_config()).unwrap();
        let mut stripped = m.clone();
        let i = vocab.get("acha").unwrap();
        let d = m.dim;
        stripped.input[i * d..(i + 1) * d].iter_mut().for_each(|x| *x = 0.0);
        let full = word_vector("acha", &m);
        let part = word_vector("acha", &stripped);
        let n = (m.subword().unwrap().word_rows[i].len() + 1) as f64;
        for j in 0..d {
            assert!((full[j] - part[j] - m.input_row(i)[j] / n).abs() < 1e-15);
        }
    }

    #[test]
    fn plain_lookup_and_oov() {
        let v = vocab_ab();
        let rows: Vec<f64> = (0..8).map(|x| x as f64).collect();
        let m = EmbeddingMatrix::from_rows(v, 2, rows).unwrap();
        assert_eq!(word_vector("a", &m), vec![4.0, 5.0]);
        assert_eq!(word_vector("nope", &m), vec![2.0, 3.0]);
    }

    #[test]
    fn neighbors_cases() {
        let v = Vocabulary::from_entries(vec![("a".into(), 3), ("b".into(), 2), ("c".into(), 1)], 1).unwrap();
        // a and c are duplicates, b orthogonal
        let rows = vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let m = EmbeddingMatrix::from_rows(v.clone(), 2, rows).unwrap();
        let nn = nearest_neighbors("a", 2, &m).unwrap();
        assert_eq!(nn[0], ("c".to_string(), 1.0));
        assert_eq!(nn[1], ("b".to_string(), 0.0));
        assert!(nearest_neighbors("a", 0, &m).is_err());
        // zero query (OOV row is zero)
        let err = nearest_neighbors("zzz", 1, &m).unwrap_err().to_string();
        assert!(err.contains("zero norm"), "{err}");

        let onehot = vec![0.0; 6]
            .into_iter()
            .chain([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .collect();
        let m = EmbeddingMatrix::from_rows(v, 3, onehot).unwrap();
        for (_, c) in nearest_neighbors("b", 2, &m).unwrap() {
            assert_eq!(c, 0.0);
        }
    }

    #[test]
    fn file_roundtrip_both_variants() {
        let corpus = cluster_corpus(3, 60, 6, 2);
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for sub in [false, true] {
            let m = train_impl(&corpus, &vocab, &small_config(), sub).unwrap().0;
            let p = dir.path().join(format!("e{sub}.txt"));
            save_embeddings(&p, &m).unwrap();
            let l = load_embeddings(&p).unwrap();
            assert_eq!(l.variant(), m.variant());
            for i in 0..m.rows() {
                assert_eq!(l.input_row(i), m.input_row(i));
                assert_eq!(l.vector_at(i), m.vector_at(i));
            }
            assert_eq!(word_vector("qqqq", &l), word_vector("qqqq", &m));
        }
    }

    #[test]
    fn malformed_files_report_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.txt");
        fs::write(&p, "5 2\n<pad> 0 0\n<oov> 0 0\na 1 2\nb 3 4\n").unwrap();
        let err = load_embeddings(&p).unwrap_err().to_string();
        assert!(err.contains(":6:") && err.contains("end of file"), "{err}");

        fs::write(&p, "3 2\n<pad> 0 0\n<oov> 0 0\na nan 2\n").unwrap();
        let err = load_embeddings(&p).unwrap_err().to_string();
        assert!(err.contains(":4:") && err.contains("non-finite"), "{err}");

        fs::write(&p, "three 2\n").unwrap();
        assert!(load_embeddings(&p).unwrap_err().to_string().contains(":1:"));

        fs::write(&p, "3 2\n<pad> 0 0\n<oov> 0 0\na 1\n").unwrap();
        assert!(load_embeddings(&p).unwrap_err().to_string().contains(":4:"));
    }

    proptest! {
        #[test]
        fn plain_roundtrip_is_exact(vals in proptest::collection::vec(-1e6f64..1e6, 8)) {
            let m = EmbeddingMatrix::from_rows(vocab_ab(), 2, vals).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("e.txt");
            save_embeddings(&p, &m).unwrap();
            let l = load_embeddings(&p).unwrap();
            for i in 0..4 {
                prop_assert_eq!(l.input_row(i), m.input_row(i));
            }
        }
    }
}
