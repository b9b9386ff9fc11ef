//! Experiment configuration file.
//!
//! TOML with four sections plus a top-level output directory. Every key is
//! optional; missing keys take the full-size defaults. Relative paths are
//! resolved against the directory holding the config file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use sarcasm_core::corpus::{search_tag_set, DEFAULT_MIN_COUNT, DEFAULT_SEARCH_TAGS};
use sarcasm_core::embed::{CorpusVariant, EmbedConfig};
use sarcasm_core::models::ModelSpec;
use sarcasm_core::trainer::TrainConfig;
use sarcasm_core::{Error, Result};
use serde::Deserialize;

/// Overrides `output_dir` from the config file.
pub const OUTPUT_DIR_ENV: &str = "SARCASM_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Labeled tweets, JSON lines or `text<TAB>label`.
    pub labeled: Option<PathBuf>,
    /// Unlabeled tweets for embedding training, one per line.
    pub unlabeled: Vec<PathBuf>,
    /// Which unlabeled corpus mix this is, for result tables.
    pub variant: CorpusVariant,
    pub search_tags: Vec<String>,
    pub min_count: u64,
    pub split_seed: u64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            labeled: None,
            unlabeled: Vec::new(),
            variant: CorpusVariant::Hinglish,
            search_tags: DEFAULT_SEARCH_TAGS.iter().map(|s| s.to_string()).collect(),
            min_count: DEFAULT_MIN_COUNT,
            split_seed: 1,
        }
    }
}

impl CorpusSection {
    pub fn tag_set(&self) -> BTreeSet<String> {
        search_tag_set(&self.search_tags)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: Option<PathBuf>,
    pub corpus: CorpusSection,
    pub embed: EmbedConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.corpus.labeled.as_mut() {
            resolve(p);
        }
        cfg.corpus.unlabeled.iter_mut().for_each(resolve);
        if let Some(p) = cfg.output_dir.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.train.checkpoint_dir.as_mut() {
            resolve(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for p in self.corpus.labeled.iter().chain(&self.corpus.unlabeled) {
            if !p.exists() {
                return Err(Error::Config(format!("corpus file {} does not exist", p.display())));
            }
        }
        if self.corpus.min_count < 1 {
            return Err(Error::Config("corpus.min_count must be at least 1".into()));
        }
        self.embed.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.embed.dim != self.model.embed_dim {
            return Err(Error::Config(format!(
                "embed.dim = {} but model.embed_dim = {}",
                self.embed.dim, self.model.embed_dim
            )));
        }
        Ok(())
    }

    /// `output_dir`, overridden by the environment, defaulting to `./out`.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
        }
    }

    pub fn labeled(&self) -> Result<&Path> {
        self.corpus
            .labeled
            .as_deref()
            .ok_or_else(|| Error::Config("corpus.labeled is not set".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sarcasm_core::models::Architecture;

    #[test]
    fn empty_config_is_full_size() {
        let c = ExperimentConfig::parse("", Path::new(".")).unwrap();
        assert_eq!(c.model, ModelSpec::full(Architecture::AttnBilstm));
        assert_eq!(c.embed.dim, 300);
        assert_eq!(c.train.epochs, 20);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.corpus.min_count, 10);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            "bogus = 1",
            "[model]\nlayers = 3",
            "[train.adam]\nmomentum = 0.9",
            "[nope]",
        ] {
            let e = ExperimentConfig::parse(text, Path::new(".")).unwrap_err();
            assert_eq!(e.kind(), "config", "{text}");
        }
    }

    #[test]
    fn dim_mismatch_rejected() {
        let e = ExperimentConfig::parse("[embed]\ndim = 16", Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("model.embed_dim"), "{e}");
        let ok = ExperimentConfig::parse("[embed]\ndim = 16\n[model]\nembed_dim = 16", Path::new("."));
        assert!(ok.is_ok());
    }

    #[test]
    fn paths_resolve_and_must_exist() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("l.jsonl"), "").unwrap();
        let c = ExperimentConfig::parse("output_dir = \"o\"\n[corpus]\nlabeled = \"l.jsonl\"", dir.path()).unwrap();
        assert_eq!(c.labeled().unwrap(), dir.path().join("l.jsonl"));
        assert_eq!(c.output_dir, Some(dir.path().join("o")));
        let e = ExperimentConfig::parse("[corpus]\nunlabeled = [\"missing.txt\"]", dir.path()).unwrap_err();
        assert!(e.to_string().contains("missing.txt"));
    }

    #[test]
    fn sections_override_defaults() {
        let text = "[corpus]\nvariant = \"hinglish_english\"\nmin_count = 2\n[model]\narchitecture = \"lstm\"\nattention = \"dot\"\n[train]\nepochs = 3\n[train.adam]\nlr = 0.01";
        let c = ExperimentConfig::parse(text, Path::new(".")).unwrap();
        assert_eq!(c.corpus.variant, CorpusVariant::HinglishEnglish);
        assert_eq!(c.model.architecture, Architecture::Lstm);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.adam.lr, 0.01);
        assert_eq!(c.train.adam.beta2, 0.999);
    }
}
