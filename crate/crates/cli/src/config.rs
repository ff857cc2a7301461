//! Run configuration: command-line flags override the `--config` TOML file,
//! which overrides built-in defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use serde::Deserialize;

use qgrank_core::{BeamConfig, PartialCopyConfig, RerankConfig};

use crate::error::CliError;

pub const DEFAULT_MAX_LENGTH: usize = 30;
pub const DEFAULT_MAX_SPAN: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSource {
    Toy(PathBuf),
    Replay(PathBuf),
}

impl FromStr for ModelSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("toy", p)) if !p.is_empty() => Ok(ModelSource::Toy(p.into())),
            Some(("replay", p)) if !p.is_empty() => Ok(ModelSource::Replay(p.into())),
            _ => Err(format!(
                "model must be `toy:<model.json>` or `replay:<trace.jsonl>`, got {s:?}"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleSource {
    ToySpan(usize),
    Replay(PathBuf),
}

impl FromStr for OracleSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad =
            || format!("oracle must be `toy-span[:<max span>]` or `replay:<predictions.jsonl>`, got {s:?}");
        match s.split_once(':') {
            None if s == "toy-span" => Ok(OracleSource::ToySpan(DEFAULT_MAX_SPAN)),
            Some(("toy-span", n)) => match n.parse::<usize>() {
                Ok(n) if n > 0 => Ok(OracleSource::ToySpan(n)),
                _ => Err(bad()),
            },
            Some(("replay", p)) if !p.is_empty() => Ok(OracleSource::Replay(p.into())),
            _ => Err(bad()),
        }
    }
}

/// Settings shared by every subcommand; each may come from a flag or the
/// config file.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Overlap threshold gamma in [0, 1] (default 0.7)
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Partial-copy strength lambda1 >= 0 (default 1.0)
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Rerank interpolation weight lambda2 in [0, 1] (default 0.2)
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Beam size (default 20)
    #[arg(long)]
    pub beam_size: Option<usize>,
    /// Number of candidates kept per example (default: beam size)
    #[arg(long = "nbest")]
    #[serde(alias = "nbest")]
    pub nbest_size: Option<usize>,
    /// Maximum generated tokens, end marker included (default 30)
    #[arg(long)]
    pub max_length: Option<usize>,
    /// Generator: `toy:<model.json>` or `replay:<trace.jsonl>`
    #[arg(long)]
    pub model: Option<String>,
    /// Vocabulary file (one token per line) for replay models
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// QA oracle: `toy-span[:<max span>]` or `replay:<predictions.jsonl>`
    #[arg(long)]
    pub oracle: Option<String>,
    /// Turn the partial-copy adjustment off
    #[arg(long = "no-copy", action = clap::ArgAction::SetTrue)]
    #[serde(skip)]
    pub no_copy: bool,
    #[arg(skip)]
    pub copy_enabled: Option<bool>,
    /// Lowercase words before computing overlap rates
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub case_fold: Option<bool>,
    /// Divide decoder log-probabilities by length before reranking
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub length_normalize: Option<bool>,
}

impl Settings {
    fn or(self, file: Settings) -> Settings {
        Settings {
            gamma: self.gamma.or(file.gamma),
            lambda1: self.lambda1.or(file.lambda1),
            lambda2: self.lambda2.or(file.lambda2),
            beam_size: self.beam_size.or(file.beam_size),
            nbest_size: self.nbest_size.or(file.nbest_size),
            max_length: self.max_length.or(file.max_length),
            model: self.model.or(file.model),
            vocab: self.vocab.or(file.vocab),
            oracle: self.oracle.or(file.oracle),
            no_copy: false,
            copy_enabled: if self.no_copy {
                Some(false)
            } else {
                file.copy_enabled
            },
            case_fold: self.case_fold.or(file.case_fold),
            length_normalize: self.length_normalize.or(file.length_normalize),
        }
    }
}

/// Fully resolved and validated settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub copy: PartialCopyConfig,
    pub beam: BeamConfig,
    pub rerank: RerankConfig,
    pub model: Option<ModelSource>,
    pub vocab: Option<PathBuf>,
    pub oracle: OracleSource,
}

impl RunConfig {
    pub fn resolve(flags: Settings, config_file: Option<&Path>) -> Result<Self, CliError> {
        let file = match config_file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                toml::from_str::<Settings>(&text)
                    .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?
            }
            None => Settings::default(),
        };
        let s = flags.or(file);

        let gamma = s.gamma.unwrap_or(0.7);
        let lambda1 = s.lambda1.unwrap_or(1.0);
        let mut copy = PartialCopyConfig::new(gamma, lambda1).map_err(|_| {
            if (0.0..=1.0).contains(&gamma) {
                CliError::Usage(format!("--lambda1 must be a finite number >= 0 (got {lambda1})"))
            } else {
                CliError::Usage(format!("--gamma must lie in [0, 1] (got {gamma})"))
            }
        })?;
        copy.enabled = s.copy_enabled.unwrap_or(true);
        copy.case_fold = s.case_fold.unwrap_or(false);

        let lambda2 = s.lambda2.unwrap_or(0.2);
        let mut rerank = RerankConfig::new(lambda2)
            .map_err(|_| CliError::Usage(format!("--lambda2 must lie in [0, 1] (got {lambda2})")))?;
        rerank.length_normalize = s.length_normalize.unwrap_or(false);

        let beam_size = s.beam_size.unwrap_or(20);
        let nbest = s.nbest_size.unwrap_or(beam_size);
        let max_length = s.max_length.unwrap_or(DEFAULT_MAX_LENGTH);
        let beam = BeamConfig::new(beam_size, max_length, nbest).map_err(|e| {
            CliError::Usage(format!(
                "{e} (check --beam-size {beam_size}, --nbest {nbest}, --max-length {max_length})"
            ))
        })?;

        let model = s
            .model
            .as_deref()
            .map(str::parse)
            .transpose()
            .map_err(CliError::Usage)?;
        let oracle = s
            .oracle
            .as_deref()
            .unwrap_or("toy-span")
            .parse()
            .map_err(CliError::Usage)?;
        Ok(Self {
            copy,
            beam,
            rerank,
            model,
            vocab: s.vocab,
            oracle,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::resolve(Settings::default(), None).unwrap();
        assert_eq!(c.copy.gamma.value(), 0.7);
        assert_eq!(c.copy.lambda1, 1.0);
        assert!(c.copy.enabled);
        assert_eq!(c.rerank.lambda2, 0.2);
        assert_eq!(c.beam.beam_size, 20);
        assert_eq!(c.beam.nbest_size, 20);
        assert_eq!(c.oracle, OracleSource::ToySpan(DEFAULT_MAX_SPAN));
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "lambda1 = 2.0\nlambda2 = 0.5\nbeam_size = 4\ncopy_enabled = false\n",
        )
        .unwrap();
        let flags = Settings {
            lambda2: Some(0.8),
            ..Default::default()
        };
        let c = RunConfig::resolve(flags, Some(&path)).unwrap();
        assert_eq!(c.copy.lambda1, 2.0);
        assert!(!c.copy.enabled);
        assert_eq!(c.rerank.lambda2, 0.8);
        assert_eq!(c.beam.nbest_size, 4);
    }

    #[test]
    fn rejects_out_of_range() {
        let bad = |s: Settings| match RunConfig::resolve(s, None) {
            Err(CliError::Usage(m)) => m,
            other => panic!("expected usage error, got {other:?}"),
        };
        let m = bad(Settings {
            lambda2: Some(1.5),
            ..Default::default()
        });
        assert!(m.contains("--lambda2"), "{m}");
        let m = bad(Settings {
            lambda1: Some(-1.0),
            ..Default::default()
        });
        assert!(m.contains("--lambda1"), "{m}");
        let m = bad(Settings {
            gamma: Some(2.0),
            ..Default::default()
        });
        assert!(m.contains("--gamma"), "{m}");
        bad(Settings {
            beam_size: Some(2),
            nbest_size: Some(3),
            ..Default::default()
        });
    }

    #[test]
    fn source_parsing() {
        assert_eq!("toy:m.json".parse(), Ok(ModelSource::Toy("m.json".into())));
        assert!("neural:x".parse::<ModelSource>().is_err());
        assert_eq!("toy-span:2".parse(), Ok(OracleSource::ToySpan(2)));
        assert!("toy-span:0".parse::<OracleSource>().is_err());
        assert_eq!(
            "replay:p.jsonl".parse(),
            Ok(OracleSource::Replay("p.jsonl".into()))
        );
    }
}
