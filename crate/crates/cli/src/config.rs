use anyhow::Context;
use serde::{Deserialize, Serialize};
use xict_core::{Bm25Params, ReaderConfig, SyntheticCorpusConfig, TrainConfig};

/// Everything a run can be parameterized by. Loaded from TOML; command-line
/// flags take precedence. The resolved seed replaces every section seed and
/// `k` replaces the reader's block count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub k: usize,
    /// Pivot language for translate-then-retrieve; defaults to the first
    /// lexicon language.
    pub pivot: Option<String>,
    pub synth: SyntheticCorpusConfig,
    pub retriever: TrainConfig,
    pub reader: ReaderConfig,
    pub bm25: Bm25Params,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k: 5,
            pivot: None,
            synth: SyntheticCorpusConfig::default(),
            retriever: TrainConfig::default(),
            reader: ReaderConfig::default(),
            bm25: Bm25Params::default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub k: Option<usize>,
}

impl RunConfig {
    /// `text` is the TOML source, if a config file was given.
    pub fn resolve(text: Option<&str>, overrides: &Overrides) -> anyhow::Result<Self> {
        let mut config = match text {
            None => Self::default(),
            Some(t) => toml::from_str(t).context("parsing config")?,
        };
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(k) = overrides.k {
            config.k = k;
        }
        config.synth.seed = config.seed;
        config.retriever.seed = config.seed;
        config.reader.seed = config.seed;
        config.reader.k = config.k;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_override_reaches_every_section() {
        let text = "seed = 3\nk = 2\n[reader]\nepochs = 7\n";
        let c = RunConfig::resolve(
            Some(text),
            &Overrides {
                seed: Some(9),
                k: None,
            },
        )
        .unwrap();
        assert_eq!((c.seed, c.k, c.reader.epochs), (9, 2, 7));
        assert_eq!((c.synth.seed, c.retriever.seed, c.reader.seed), (9, 9, 9));
        assert_eq!(c.reader.k, 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::resolve(Some("sede = 3\n"), &Overrides::default()).is_err());
    }
}
