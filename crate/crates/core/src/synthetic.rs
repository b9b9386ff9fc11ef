//! Generated corpora with known structure, used for demos and tests.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::TweetRecord;

/// Sentences drawn from `clusters` disjoint vocabularies of
/// `words_per_cluster` words each. Words of cluster `k` start with the letter
/// `'a' + k` (`a0`, `a1`, … then `b0`, …) and never co-occur with other
/// clusters.
pub fn cluster_corpus(seed: u64, sentences: usize, words_per_cluster: usize, clusters: usize) -> Vec<Vec<String>> {
    assert!(clusters <= 26, "at most 26 clusters");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..sentences)
        .map(|s| {
            let k = s % clusters;
            let letter = (b'a' + k as u8) as char;
            (0..8)
                .map(|_| format!("{letter}{}", rng.random_range(0..words_per_cluster)))
                .collect()
        })
        .collect()
}

const FILLER: &[&str] = &[
    "yaar", "aaj", "kal", "bhai", "match", "office", "traffic", "log", "sab", "kuch", "nahi", "hai", "tha", "ho",
    "gaya", "raha", "kya", "baat", "the", "is", "was", "so", "very", "day", "time", "phir", "se", "bhi", "mera",
    "tera", "ghar", "chai", "paani", "barish", "metro", "train", "exam", "result", "movie", "song", "team", "score",
    "phone", "battery", "boss", "meeting", "weekend", "monday", "news", "sarkar", "road", "weather", "khana", "dost",
    "abhi", "and", "with", "for", "today", "again",
];

/// Cue words planted in sarcastic tweets.
pub const SARCASTIC_CUES: &[&str] = &["wah", "waah", "obviously", "sure", "great", "kamaal", "shabash", "wow"];

/// Cue words planted in non-sarcastic tweets.
pub const PLAIN_CUES: &[&str] = &[
    "sach", "thanks", "shukriya", "finally", "khush", "update", "report", "dekho",
];

const HANDLES: &[&str] = &["@rahul_k", "@priya", "@news24", "@cricbuzz"];
const TAGS: &[&str] = &["#cricket", "#bollywood", "#mumbai", "#mondaymotivation", "#traffic"];

/// One raw tweet: filler words with a single planted cue, plus optional
/// mentions, URLs, hashtags and punctuation. Sarcastic tweets sometimes
/// carry the `#sarcasm` search tag, which cleaning removes.
fn toy_tweet(rng: &mut ChaCha8Rng, sarcastic: bool) -> String {
    let len = rng.random_range(6..=14);
    let mut words: Vec<String> = (0..len)
        .map(|_| FILLER.choose(rng).expect("non-empty").to_string())
        .collect();
    let cues = if sarcastic { SARCASTIC_CUES } else { PLAIN_CUES };
    let pos = rng.random_range(0..=words.len());
    let mut cue = cues.choose(rng).expect("non-empty").to_string();
    if rng.random_bool(0.2) {
        cue = cue.to_uppercase();
    }
    if rng.random_bool(0.3) {
        cue.push_str(if sarcastic { "!!" } else { "." });
    }
    words.insert(pos, cue);
    if rng.random_bool(0.3) {
        words.insert(0, HANDLES.choose(rng).expect("non-empty").to_string());
    }
    if rng.random_bool(0.25) {
        words.push(TAGS.choose(rng).expect("non-empty").to_string());
    }
    if rng.random_bool(0.15) {
        words.push(format!("https://t.co/{}", rng.random_range(10000..99999)));
    }
    if sarcastic && rng.random_bool(0.4) {
        words.push("#sarcasm".into());
    }
    words.join(" ")
}

/// Balanced keyword-planted corpus of `n` labeled tweets (raw text).
pub fn toy_corpus(seed: u64, n: usize) -> Vec<TweetRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| TweetRecord {
            id: format!("toy{i:05}"),
            text: toy_tweet(&mut rng, label == 1),
            label,
        })
        .collect()
}

/// Unlabeled raw tweets from the same generator, for embedding training.
pub fn toy_texts(seed: u64, n: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| toy_tweet(&mut rng, i % 2 == 0)).collect()
}
