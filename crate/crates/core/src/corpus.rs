//! Tweet ingestion, cleaning, vocabulary construction, sequence encoding and
//! dataset splitting.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const OOV: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<oov>";
pub const DEFAULT_MIN_COUNT: u64 = 10;
pub const DEFAULT_MAX_LEN: usize = 64;

/// Hashtags used to scrape the labeled corpus. They are removed wholesale
/// during cleaning so the classifiers cannot key on them.
pub const DEFAULT_SEARCH_TAGS: [&str; 5] = ["sarcasm", "irony", "humor", "bollywood", "cricket"];

/// One labeled tweet. `label` is 1 for sarcastic, 0 otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub id: String,
    pub text: String,
    pub label: u8,
}

impl TweetRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: u8) -> Result<Self> {
        if label > 1 {
            return Err(Error::Input(format!("label must be 0 or 1, got {label}")));
        }
        Ok(TweetRecord {
            id: id.into(),
            text: text.into(),
            label,
        })
    }
}

#[derive(Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<serde_json::Value>,
    text: String,
    label: serde_json::Value,
}

fn parse_label(v: &serde_json::Value) -> Option<u8> {
    match v {
        serde_json::Value::Number(n) => match n.as_u64() {
            Some(0) => Some(0),
            Some(1) => Some(1),
            _ => None,
        },
        serde_json::Value::Bool(b) => Some(*b as u8),
        serde_json::Value::String(s) => parse_label_str(s),
        _ => None,
    }
}

fn parse_label_str(s: &str) -> Option<u8> {
    match s.trim().to_ascii_lowercase().as_str() {
        "0" | "no" | "false" => Some(0),
        "1" | "yes" | "true" => Some(1),
        _ => None,
    }
}

/// Reads a labeled corpus. Each non-blank line is either a JSON object with
/// `text`, `label` and an optional `id`, or `text<TAB>label`.
pub fn load_records(path: &Path) -> Result<Vec<TweetRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = if line.trim_start().starts_with('{') {
            let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
            let label = parse_label(&raw.label).ok_or_else(|| Error::parse(path, lineno, "label must be 0 or 1"))?;
            let id = match raw.id {
                Some(serde_json::Value::String(s)) => s,
                Some(v) if !v.is_null() => v.to_string(),
                _ => lineno.to_string(),
            };
            TweetRecord {
                id,
                text: raw.text,
                label,
            }
        } else {
            let (text, label) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::parse(path, lineno, "expected JSON object or text<TAB>label"))?;
            let label = parse_label_str(label).ok_or_else(|| Error::parse(path, lineno, "label must be 0 or 1"))?;
            TweetRecord {
                id: lineno.to_string(),
                text: text.to_string(),
                label,
            }
        };
        out.push(record);
    }
    Ok(out)
}

/// Reads an unlabeled embedding corpus: one tweet per line, either raw text
/// or a JSON object with a `text` field.
pub fn load_texts(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if line.trim_start().starts_with('{') {
            let v: serde_json::Value =
                serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            match v.get("text").and_then(|t| t.as_str()) {
                Some(t) => out.push(t.to_string()),
                None => return Err(Error::parse(path, i + 1, "missing string field `text`")),
            }
        } else {
            out.push(line);
        }
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[TweetRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("record serialises");
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Punctuation in the ASCII range plus the Unicode blocks that show up in
/// tweets (general punctuation, CJK punctuation, Devanagari danda).
pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c,
            '\u{00A1}' | '\u{00A7}' | '\u{00AB}' | '\u{00B6}' | '\u{00B7}' | '\u{00BB}' | '\u{00BF}'
            | '\u{2010}'..='\u{2027}'
            | '\u{2030}'..='\u{205E}'
            | '\u{3000}'..='\u{303F}'
            | '\u{0964}' | '\u{0965}'
            | '\u{FF01}'..='\u{FF0F}'
            | '\u{FF1A}'..='\u{FF20}')
}

fn is_url(token: &str) -> bool {
    let lower = token.to_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

/// Applies the preprocessing rules to one raw tweet.
///
/// Mentions and URLs are dropped, `#` is removed but the hashtag word kept
/// unless it is one of `search_tags` (matched lowercase), all punctuation is
/// deleted and whitespace collapsed. Case is preserved; lowercasing happens
/// in [`tokenize`].
pub fn clean_tweet(raw: &str, search_tags: &BTreeSet<String>) -> String {
    let mut words: Vec<String> = Vec::new();
    for token in raw.split_whitespace() {
        // Leading brackets/quotes should not hide a mention, hashtag or URL.
        let core = token.trim_start_matches(|c: char| is_punctuation(c) && c != '@' && c != '#');
        if core.starts_with('@') || is_url(core) {
            continue;
        }
        let word: String = token.chars().filter(|c| !is_punctuation(*c)).collect();
        if word.is_empty() {
            continue;
        }
        if core.starts_with('#') && search_tags.contains(&word.to_lowercase()) {
            continue;
        }
        words.push(word);
    }
    words.join(" ")
}

pub fn search_tag_set<I, S>(tags: I) -> BTreeSet<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    tags.into_iter()
        .map(|t| t.as_ref().trim().trim_start_matches('#').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|w| w.to_lowercase()).collect()
}

/// Token/index map with frequencies. Index 0 is padding, 1 is out-of-vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    min_count: u64,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from `(token, count)` pairs already in index order (reserved
    /// entries excluded).
    pub fn from_entries(entries: Vec<(String, u64)>, min_count: u64) -> Result<Self> {
        let mut tokens = vec![PAD_TOKEN.to_string(), OOV_TOKEN.to_string()];
        let mut counts = vec![0, 0];
        for (t, c) in entries {
            tokens.push(t);
            counts.push(c);
        }
        let mut v = Vocabulary {
            tokens,
            counts,
            min_count,
            index: HashMap::new(),
        };
        v.rebuild_index()?;
        Ok(v)
    }

    fn rebuild_index(&mut self) -> Result<()> {
        self.index.clear();
        for (i, t) in self.tokens.iter().enumerate() {
            if self.index.insert(t.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// True when only the reserved PAD/OOV entries exist.
    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn index_or_oov(&self, token: &str) -> usize {
        self.get(token).unwrap_or(OOV)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts.get(index).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Corpus tokens only, in index order, with their counts.
    pub fn entries(&self) -> impl Iterator<Item = (usize, &str, u64)> {
        self.tokens
            .iter()
            .zip(&self.counts)
            .enumerate()
            .skip(2)
            .map(|(i, (t, c))| (i, t.as_str(), *c))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for (_, t, c) in self.entries() {
            writeln!(out, "{t}\t{c}").expect("write to vec");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, min_count: u64) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (t, c) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, i + 1, "expected token<TAB>count"))?;
            let c = c
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad count {c:?}")))?;
            entries.push((t.to_string(), c));
        }
        Vocabulary::from_entries(entries, min_count)
    }
}

/// Keeps tokens seen at least `min_count` times. Indices follow descending
/// frequency with lexicographic tie-breaking, after the reserved entries.
pub fn build_vocabulary<S: AsRef<str>>(token_lists: &[Vec<S>], min_count: u64) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for list in token_lists {
        for t in list {
            let t = t.as_ref();
            if t.is_empty() || t == PAD_TOKEN || t == OOV_TOKEN {
                continue;
            }
            *freq.entry(t).or_default() += 1;
        }
    }
    if freq.is_empty() {
        log::warn!("empty corpus: vocabulary holds only PAD and OOV");
    }
    let mut kept: Vec<(&str, u64)> = freq.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_entries(kept.into_iter().map(|(t, c)| (t.to_string(), c)).collect(), min_count)
}

/// Fixed-length index vector with the number of real (non-padding) tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub indices: Vec<usize>,
    pub true_length: usize,
}

impl EncodedSequence {
    pub fn max_len(&self) -> usize {
        self.indices.len()
    }
}

pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize) -> EncodedSequence {
    assert!(max_len >= 1, "max_len must be at least 1");
    let true_length = tokens.len().min(max_len);
    let mut indices: Vec<usize> = tokens[..true_length]
        .iter()
        .map(|t| vocab.index_or_oov(t.as_ref()))
        .collect();
    indices.resize(max_len, PAD);
    EncodedSequence { indices, true_length }
}

pub fn decode(seq: &EncodedSequence, vocab: &Vocabulary) -> Vec<String> {
    seq.indices[..seq.true_length]
        .iter()
        .map(|&i| vocab.token(i).unwrap_or(OOV_TOKEN).to_string())
        .collect()
}

/// Train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<TweetRecord>,
    pub validation: Vec<TweetRecord>,
    pub test: Vec<TweetRecord>,
}

/// Shuffles under `seed` and partitions 80/10/10; remainders go to train.
pub fn split_dataset(records: &[TweetRecord], seed: u64) -> Result<Splits> {
    if records.len() < 10 {
        return Err(Error::Input(format!(
            "need at least 10 records to split, got {}",
            records.len()
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let tenth = records.len() / 10;
    let take = |ix: &[usize]| ix.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    let splits = Splits {
        validation: take(&order[..tenth]),
        test: take(&order[tenth..2 * tenth]),
        train: take(&order[2 * tenth..]),
    };

    let global = positive_ratio(records);
    for (name, part) in [
        ("train", &splits.train),
        ("validation", &splits.validation),
        ("test", &splits.test),
    ] {
        let r = positive_ratio(part);
        if (r - global).abs() > 0.05 {
            log::warn!(
                "{name} split label ratio {:.3} deviates from global {:.3} by more than 5 points",
                r,
                global
            );
        }
    }
    Ok(splits)
}

fn positive_ratio(records: &[TweetRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.label == 1).count() as f64 / records.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    pub sarcastic: usize,
    pub non_sarcastic: usize,
}

pub fn dataset_stats(records: &[TweetRecord]) -> DatasetStats {
    let sarcastic = records.iter().filter(|r| r.label == 1).count();
    DatasetStats {
        total: records.len(),
        sarcastic,
        non_sarcastic: records.len() - sarcastic,
    }
}

impl std::fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<16}{:>12}", "Category", "Tweet Count")?;
        writeln!(f, "{:<16}{:>12}", "Total Tweets", self.total)?;
        writeln!(f, "{:<16}{:>12}", "Sarcastic", self.sarcastic)?;
        write!(f, "{:<16}{:>12}", "Non-Sarcastic", self.non_sarcastic)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tags() -> BTreeSet<String> {
        search_tag_set(DEFAULT_SEARCH_TAGS)
    }

    /// Independent rewrite of the cleaning rules as a sequence of whole-string
    /// passes, used as an oracle for the token-wise implementation.
    fn reference_clean(raw: &str, tags: &BTreeSet<String>) -> String {
        let mut kept = Vec::new();
        for tok in raw.split_whitespace() {
            let stripped = tok.trim_start_matches(|c: char| is_punctuation(c) && c != '@' && c != '#');
            let lower = stripped.to_lowercase();
            if stripped.starts_with('@')
                || lower.starts_with("http://")
                || lower.starts_with("https://")
                || lower.starts_with("www.")
            {
                continue;
            }
            if let Some(tag) = stripped.strip_prefix('#') {
                let tag: String = tag.chars().filter(|c| !is_punctuation(*c)).collect();
                if tags.contains(&tag.to_lowercase()) {
                    continue;
                }
            }
            kept.push(tok.replace(|c: char| is_punctuation(c), ""));
        }
        kept.retain(|w| !w.is_empty());
        kept.join(" ")
    }

    #[test]
    fn cleans_annotated_example() {
        let raw = "Koi Rah Mushkil Nahi hain bus vo rah #bengalurutraffic se bach jaayein #sarcasm @random";
        let want = "Koi Rah Mushkil Nahi hain bus vo rah bengalurutraffic se bach jaayein";
        assert_eq!(reference_clean(raw, &tags()), want);
        assert_eq!(clean_tweet(raw, &tags()), want);
    }

    #[test]
    fn cleans_url_and_punctuation() {
        let raw = "check this http://t.co/xyz !!!";
        assert_eq!(reference_clean(raw, &tags()), "check this");
        assert_eq!(clean_tweet(raw, &tags()), "check this");
        assert_eq!(clean_tweet("", &tags()), "");
    }

    #[test]
    fn bracketed_mentions_and_tags_are_recognised() {
        assert_eq!(clean_tweet("(@user) wah (#Cricket) www.x.com ok", &tags()), "wah ok");
        assert_eq!(clean_tweet("a#b c@d", &tags()), "ab cd");
        assert_eq!(clean_tweet("#SARCASM! nice", &tags()), "nice");
    }

    #[test]
    fn tokenize_cases() {
        assert_eq!(tokenize("Koi Rah"), vec!["koi", "rah"]);
        assert_eq!(tokenize("a  b"), vec!["a", "b"]);
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn vocabulary_threshold() {
        let mut corpus = vec![vec!["acha".to_string(); 12]];
        corpus.push(vec!["xq".to_string(); 9]);
        let v = build_vocabulary(&corpus, 10).unwrap();
        assert!(v.get("acha").is_some());
        assert!(v.get("xq").is_none());

        let v = build_vocabulary(&[vec!["a", "b"]], 1).unwrap();
        assert_eq!(v.len(), 4);
        let v = build_vocabulary::<String>(&[], 10).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<oov>"]);
        assert!(build_vocabulary(&[vec!["a"]], 0).is_err());
    }

    #[test]
    fn vocabulary_order_is_frequency_then_lexicographic() {
        let v = build_vocabulary(&[vec!["b", "a", "c", "c", "b", "d"]], 1).unwrap();
        assert_eq!(&v.tokens()[2..], &["b", "c", "a", "d"]);
    }

    #[test]
    fn reserved_tokens_never_collide() {
        let v = build_vocabulary(&[vec!["<pad>", "<oov>", "x"]], 1).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.get("<pad>"), Some(PAD));
    }

    #[test]
    fn encode_cases() {
        let v = Vocabulary::from_entries(vec![("koi".into(), 5), ("rah".into(), 4)], 1).unwrap();
        let e = encode(&["koi", "rah", "zz"], &v, 5);
        assert_eq!(e.indices, vec![2, 3, 1, 0, 0]);
        assert_eq!(e.true_length, 3);
        let e = encode::<&str>(&[], &v, 3);
        assert_eq!(e.indices, vec![0, 0, 0]);
        assert_eq!(e.true_length, 0);
        let long: Vec<String> = (0..10)
            .map(|i| if i % 2 == 0 { "koi" } else { "rah" }.to_string())
            .collect();
        let e = encode(&long, &v, 4);
        assert_eq!(e.indices, vec![2, 3, 2, 3]);
        assert_eq!(e.true_length, 4);
    }

    fn records(n: usize) -> Vec<TweetRecord> {
        (0..n)
            .map(|i| TweetRecord::new(i.to_string(), format!("t{i}"), (i % 2) as u8).unwrap())
            .collect()
    }

    #[test]
    fn split_sizes() {
        let s = split_dataset(&records(100), 7).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (80, 10, 10));
        let s = split_dataset(&records(105), 7).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (85, 10, 10));
        assert_eq!(
            split_dataset(&records(100), 3).unwrap(),
            split_dataset(&records(100), 3).unwrap()
        );
        assert!(split_dataset(&records(9), 3).is_err());
    }

    #[test]
    fn stats_cases() {
        assert_eq!(
            dataset_stats(&[]),
            DatasetStats {
                total: 0,
                sarcastic: 0,
                non_sarcastic: 0
            }
        );
        let rs: Vec<_> = [1, 1, 0]
            .iter()
            .enumerate()
            .map(|(i, &l)| TweetRecord::new(i.to_string(), "x", l).unwrap())
            .collect();
        assert_eq!(
            dataset_stats(&rs),
            DatasetStats {
                total: 3,
                sarcastic: 2,
                non_sarcastic: 1
            }
        );
    }

    #[test]
    fn rejects_bad_label() {
        assert!(TweetRecord::new("a", "b", 2).is_err());
    }

    #[test]
    fn loads_jsonl_and_tsv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        fs::write(
            &p,
            "{\"id\":\"x\",\"text\":\"hello\",\"label\":1}\n\nwah re\t0\n{\"text\":\"t\",\"label\":\"yes\"}\n",
        )
        .unwrap();
        let rs = load_records(&p).unwrap();
        assert_eq!(rs.len(), 3);
        assert_eq!(rs[0], TweetRecord::new("x", "hello", 1).unwrap());
        assert_eq!(rs[1].text, "wah re");
        assert_eq!(rs[2].label, 1);

        fs::write(&p, "ok\t7\n").unwrap();
        let err = load_records(&p).unwrap_err().to_string();
        assert!(err.contains(":1:"), "{err}");
    }

    #[test]
    fn vocab_file_roundtrip() {
        let v = build_vocabulary(&[vec!["b", "a", "c", "c"]], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.tsv");
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p, 1).unwrap(), v);
    }

    fn tweetish() -> impl Strategy<Value = String> {
        let piece = prop_oneof![
            "[a-zA-Z]{1,8}",
            "#[a-zA-Z]{1,8}",
            "@[a-z0-9_]{1,6}",
            "(https?://|www\\.)[a-z./]{1,10}",
            "[!?.,;:'\"()]{1,3}",
            Just("#sarcasm".to_string()),
            Just("#Cricket!".to_string()),
            "[a-z]{1,4}[#@.,][a-z]{1,4}",
            "[\u{0900}-\u{097F}]{1,4}",
            Just("…".to_string()),
        ];
        proptest::collection::vec(piece, 0..12).prop_map(|v| v.join(" "))
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(s in tweetish()) {
            let once = clean_tweet(&s, &tags());
            prop_assert_eq!(clean_tweet(&once, &tags()), once.clone());
        }

        #[test]
        fn clean_matches_reference(s in tweetish()) {
            prop_assert_eq!(clean_tweet(&s, &tags()), reference_clean(&s, &tags()));
        }

        #[test]
        fn encode_decode_roundtrip(ix in proptest::collection::vec(0usize..5, 0..8), max_len in 8usize..12) {
            let words = ["a", "b", "c", "d", "e"];
            let v = build_vocabulary(&[words.to_vec()], 1).unwrap();
            let toks: Vec<&str> = ix.iter().map(|&i| words[i]).collect();
            let e = encode(&toks, &v, max_len);
            prop_assert!(e.indices[e.true_length..].iter().all(|&i| i == PAD));
            prop_assert_eq!(decode(&e, &v), toks.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        }

        #[test]
        fn vocabulary_counts_match_corpus(ix in proptest::collection::vec(0usize..6, 0..60), min_count in 1u64..4) {
            let words = ["w0", "w1", "w2", "w3", "w4", "w5"];
            let toks: Vec<&str> = ix.iter().map(|&i| words[i]).collect();
            let v = build_vocabulary(std::slice::from_ref(&toks), min_count).unwrap();
            for (i, t, c) in v.entries() {
                prop_assert_eq!(v.get(t), Some(i));
                prop_assert_eq!(c, toks.iter().filter(|&&x| x == t).count() as u64);
                prop_assert!(c >= min_count);
            }
            for w in words {
                let n = toks.iter().filter(|&&x| x == w).count() as u64;
                prop_assert_eq!(v.get(w).is_some(), n >= min_count);
            }
        }

        #[test]
        fn splits_are_disjoint_and_exhaustive(n in 10usize..120, seed in 0u64..1000) {
            let rs = records(n);
            let s = split_dataset(&rs, seed).unwrap();
            let mut ids: Vec<String> = s.train.iter().chain(&s.validation).chain(&s.test).map(|r| r.id.clone()).collect();
            ids.sort();
            let mut want: Vec<String> = rs.iter().map(|r| r.id.clone()).collect();
            want.sort();
            prop_assert_eq!(ids, want);
        }
    }
}
