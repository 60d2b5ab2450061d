//! Run configuration: built-in defaults, a TOML file, then command-line flags.
//!
//! ```toml
//! seed = 7
//! out = "out"
//! scenario = "scenario.json"
//! strategies = ["tbs", "thkfirst", "spkfirst", "interleaved:8:20"]
//!
//! [policy]
//! think_segment_tokens = 80
//! response_segment_tokens = 100
//!
//! [rates]
//! formulation_rate = 50.0
//! tts_buffer_tokens = 0
//!
//! [backend.formulation]
//! backend_kind = "remote"
//! endpoint = "http://localhost:8000/v1/chat/completions"
//! model = "my-model"
//!
//! [corpus]
//! input = "samples.jsonl"
//! mode = "prefix"
//! ```
//!
//! Without a `[backend]` section both brains replay the scenario script.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::backend::GeneratorSpec;
use crate::corpus::{PruneMode, PrunePolicy};
use crate::model::{RateModel, SegmentationPolicy};
use crate::scheduler::Strategy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyOverrides {
    pub think_segment_tokens: Option<usize>,
    pub response_segment_tokens: Option<usize>,
    pub text_per_chunk: Option<usize>,
    pub audio_per_chunk: Option<usize>,
    pub max_think_tokens: Option<usize>,
    pub max_response_tokens: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateOverrides {
    pub formulation_rate: Option<f64>,
    pub articulation_rate: Option<f64>,
    pub audio_token_seconds: Option<f64>,
    pub tts_buffer_tokens: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub formulation: GeneratorSpec,
    /// Defaults to the formulation spec: one shared model.
    #[serde(default)]
    pub articulation: Option<GeneratorSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusOverrides {
    pub input: Option<PathBuf>,
    pub mode: Option<String>,
    pub keep_prob: Option<f64>,
    pub fixed_l: Option<usize>,
}

/// Contents of a config file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub strategies: Option<Vec<String>>,
    #[serde(default)]
    pub policy: PolicyOverrides,
    #[serde(default)]
    pub rates: RateOverrides,
    pub backend: Option<BackendConfig>,
    #[serde(default)]
    pub corpus: CorpusOverrides,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let display = path.display().to_string();
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: display.clone(),
            source,
        })?;
        toml::from_str(&raw).map_err(|source| ConfigError::Parse {
            path: display,
            source: Box::new(source),
        })
    }
}

/// Values given on the command line; `None` means "not given".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlagOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub strategies: Vec<String>,
    pub policy: PolicyOverrides,
    pub rates: RateOverrides,
    pub corpus: CorpusOverrides,
}

/// Fully resolved settings for `run` and `compare`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub scenario: Option<PathBuf>,
    /// Strategy names as given; parsed by the caller so it can report them.
    pub strategies: Vec<String>,
    pub policy: SegmentationPolicy,
    pub rates: RateModel,
    pub backend: Option<(GeneratorSpec, GeneratorSpec)>,
}

pub const DEFAULT_OUT_DIR: &str = "out";
pub const DEFAULT_CORPUS_OUT: &str = "records.jsonl";

fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>, default: T) -> T {
    flag.clone().or_else(|| file.clone()).unwrap_or(default)
}

pub fn resolve_run(flags: &FlagOverrides, file: &FileConfig) -> RunConfig {
    let d = SegmentationPolicy::default();
    let (fp, cp) = (&flags.policy, &file.policy);
    let policy = SegmentationPolicy {
        think_segment_tokens: pick(&fp.think_segment_tokens, &cp.think_segment_tokens, d.think_segment_tokens),
        response_segment_tokens: pick(&fp.response_segment_tokens, &cp.response_segment_tokens, d.response_segment_tokens),
        text_per_chunk: pick(&fp.text_per_chunk, &cp.text_per_chunk, d.text_per_chunk),
        audio_per_chunk: pick(&fp.audio_per_chunk, &cp.audio_per_chunk, d.audio_per_chunk),
        max_think_tokens: pick(&fp.max_think_tokens, &cp.max_think_tokens, d.max_think_tokens),
        max_response_tokens: pick(&fp.max_response_tokens, &cp.max_response_tokens, d.max_response_tokens),
    };
    let r = RateModel::default();
    let (fr, cr) = (&flags.rates, &file.rates);
    let rates = RateModel {
        formulation_rate: pick(&fr.formulation_rate, &cr.formulation_rate, r.formulation_rate),
        articulation_rate: pick(&fr.articulation_rate, &cr.articulation_rate, r.articulation_rate),
        audio_token_seconds: pick(&fr.audio_token_seconds, &cr.audio_token_seconds, r.audio_token_seconds),
        tts_buffer_tokens: pick(&fr.tts_buffer_tokens, &cr.tts_buffer_tokens, r.tts_buffer_tokens),
    };
    let strategies = if flags.strategies.is_empty() {
        file.strategies.clone().unwrap_or_default()
    } else {
        flags.strategies.clone()
    };
    RunConfig {
        seed: pick(&flags.seed, &file.seed, 0),
        out: pick(&flags.out, &file.out, PathBuf::from(DEFAULT_OUT_DIR)),
        scenario: flags.scenario.clone().or_else(|| file.scenario.clone()),
        strategies,
        policy,
        rates,
        backend: file.backend.as_ref().map(|b| {
            let articulation = b.articulation.clone().unwrap_or_else(|| b.formulation.clone());
            (b.formulation.clone(), articulation)
        }),
    }
}

/// Fully resolved settings for `corpus`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub input: PathBuf,
    pub out: PathBuf,
    pub policy: PrunePolicy,
}

pub fn resolve_corpus(flags: &FlagOverrides, file: &FileConfig) -> Result<CorpusConfig, ConfigError> {
    let (f, c) = (&flags.corpus, &file.corpus);
    let input = f
        .input
        .clone()
        .or_else(|| c.input.clone())
        .ok_or_else(|| ConfigError::Invalid("corpus needs an input file (--input)".into()))?;
    let mode = pick(&f.mode, &c.mode, "prefix".to_string());
    let mode = match mode.as_str() {
        "prefix" | "prefix-truncate" => PruneMode::PrefixTruncate {
            fixed_l: f.fixed_l.or(c.fixed_l),
        },
        "drop" | "paragraph-drop" => PruneMode::ParagraphDrop {
            keep_prob: pick(&f.keep_prob, &c.keep_prob, 0.6),
        },
        other => return Err(ConfigError::Invalid(format!("unknown prune mode {other:?} (expected prefix or drop)"))),
    };
    let policy = PrunePolicy {
        mode,
        seed: pick(&flags.seed, &file.seed, 0),
    };
    policy.validate().map_err(ConfigError::Invalid)?;
    Ok(CorpusConfig {
        input,
        out: pick(&flags.out, &file.out, PathBuf::from(DEFAULT_CORPUS_OUT)),
        policy,
    })
}

/// Parses strategy names, reporting the first unknown one.
pub fn parse_strategies(names: &[String]) -> Result<Vec<Strategy>, crate::scheduler::UnknownStrategy> {
    names.iter().map(|n| n.parse()).collect()
}
