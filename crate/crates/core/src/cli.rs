//! Command-line front end.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use thiserror::Error;

use crate::backend::{BrainPair, GeneratorSpec};
use crate::config::{
    parse_strategies, resolve_corpus, resolve_run, ConfigError, CorpusOverrides, FileConfig, FlagOverrides,
    PolicyOverrides, RateOverrides, RunConfig,
};
use crate::corpus::{build_corpus, write_records};
use crate::metrics::{comparison_report, TurnMetrics};
use crate::model::{RateModel, SegmentationPolicy};
use crate::par::{self, ExecMode};
use crate::scenario::{scripted_backend_from_scenario, Scenario};
use crate::scheduler::{run_turn, Strategy};
use crate::transcript::Transcript;

#[derive(Debug, Parser)]
#[command(name = "mindpace", version, about = "Dual-brain speech scheduling simulator and corpus builder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one turn per strategy; write transcript and metrics JSON.
    Run(RunArgs),
    /// Simulate several strategies and print a comparison table.
    Compare(RunArgs),
    /// Build think-incomplete training records from line-delimited samples.
    Corpus(CorpusArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (run, compare) or records file (corpus).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// tbs, thkfirst, spkfirst, interleaved[:T:R] or direct. Repeatable.
    #[arg(long = "strategy")]
    pub strategies: Vec<String>,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Think segment size in tokens.
    #[arg(long)]
    pub tc: Option<usize>,
    /// Response segment size in tokens.
    #[arg(long)]
    pub tr: Option<usize>,
    #[arg(long)]
    pub formulation_rate: Option<f64>,
    #[arg(long)]
    pub articulation_rate: Option<f64>,
    #[arg(long)]
    pub audio_token_seconds: Option<f64>,
    #[arg(long)]
    pub tts_buffer_tokens: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// prefix or drop.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub keep_prob: Option<f64>,
    #[arg(long)]
    pub fixed_l: Option<usize>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    UnknownStrategy(#[from] crate::scheduler::UnknownStrategy),
    #[error("{0}")]
    Scenario(String),
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Aborted(String),
    #[error("{0}")]
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::UnknownStrategy(_) => 3,
            CliError::Scenario(_) => 4,
            CliError::Backend(_) => 5,
            CliError::Io(_) => 6,
            CliError::Aborted(_) => 7,
            CliError::Config(_) => 8,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::UnknownStrategy(_) => "unknown_strategy",
            CliError::Scenario(_) => "scenario",
            CliError::Backend(_) => "backend",
            CliError::Io(_) => "io",
            CliError::Aborted(_) => "aborted",
            CliError::Config(_) => "config",
        }
    }

    /// Single-line JSON for standard error.
    pub fn to_json(&self) -> String {
        json!({"error": {"kind": self.kind(), "code": self.exit_code(), "message": self.to_string()}}).to_string()
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Invalid(m) => CliError::Usage(m),
            other => CliError::Config(other.to_string()),
        }
    }
}

fn io_error(what: &str, path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("cannot {what} {}: {e}", path.display()))
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    Ok(match path {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    })
}

impl RunArgs {
    fn overrides(&self) -> FlagOverrides {
        FlagOverrides {
            seed: self.common.seed,
            out: self.common.out.clone(),
            scenario: self.scenario.clone(),
            strategies: self.strategies.clone(),
            policy: PolicyOverrides {
                think_segment_tokens: self.tc,
                response_segment_tokens: self.tr,
                ..Default::default()
            },
            rates: RateOverrides {
                formulation_rate: self.formulation_rate,
                articulation_rate: self.articulation_rate,
                audio_token_seconds: self.audio_token_seconds,
                tts_buffer_tokens: self.tts_buffer_tokens,
            },
            corpus: CorpusOverrides::default(),
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::Corpus(args) => cmd_corpus(&args),
    }
}

/// Filesystem-safe strategy label.
pub fn file_label(strategy: Strategy) -> String {
    strategy.to_string().replace(':', "-")
}

struct Prepared {
    config: RunConfig,
    strategies: Vec<Strategy>,
    scenario: Scenario,
}

const DEFAULT_SCENARIO_COT: usize = 762;
const DEFAULT_SCENARIO_RESPONSE: usize = 300;

fn prepare(args: &RunArgs, default_strategies: &[Strategy]) -> Result<Prepared, CliError> {
    let file = load_file_config(args.common.config.as_deref())?;
    let config = resolve_run(&args.overrides(), &file);
    let mut strategies = parse_strategies(&config.strategies)?;
    if strategies.is_empty() {
        strategies = default_strategies.to_vec();
    }
    for s in &strategies {
        s.validate().map_err(CliError::Usage)?;
    }
    config.policy.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    config.rates.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let scenario = match &config.scenario {
        Some(p) => Scenario::load(p).map_err(|e| CliError::Scenario(e.to_string()))?,
        None => Scenario::synthetic("default", DEFAULT_SCENARIO_COT, DEFAULT_SCENARIO_RESPONSE),
    };
    Ok(Prepared {
        config,
        strategies,
        scenario,
    })
}

/// Runs one strategy on a scenario with scripted backends, or with `backend`
/// when given. Interleaved runs key the script by their own chunk sizes.
pub fn simulate_scenario(
    scenario: &Scenario,
    strategy: Strategy,
    policy: &SegmentationPolicy,
    rates: &RateModel,
    backend: Option<&(GeneratorSpec, GeneratorSpec)>,
    seed: u64,
) -> Result<Transcript, CliError> {
    let (think, response) = match strategy {
        Strategy::Interleaved {
            think_chunk,
            response_chunk,
        } => (think_chunk, response_chunk),
        _ => (policy.think_segment_tokens, policy.response_segment_tokens),
    };
    let (f, a) = match backend {
        Some(pair) => pair.clone(),
        None => scripted_backend_from_scenario(scenario, think, response, seed)
            .map_err(|e| CliError::Scenario(e.to_string()))?,
    };
    let brains = BrainPair::from_specs(&f, &a).map_err(|e| CliError::Backend(e.message))?;
    let input = scenario.turn_input().map_err(|e| CliError::Scenario(e.to_string()))?;
    run_turn(strategy, &input, &brains, policy, rates, &scenario.id).map_err(|e| CliError::Usage(e.to_string()))
}

fn simulate_all(p: &Prepared) -> Result<Vec<Transcript>, CliError> {
    par::map(ExecMode::available(), &p.strategies, |s| {
        simulate_scenario(
            &p.scenario,
            *s,
            &p.config.policy,
            &p.config.rates,
            p.config.backend.as_ref(),
            p.config.seed,
        )
    })
        .into_iter()
        .collect()
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_error("encode", path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_error("write", path, e))
}

fn abort_error(transcripts: &[Transcript]) -> Result<(), CliError> {
    let aborted: Vec<String> = transcripts
        .iter()
        .filter(|t| t.aborted)
        .map(|t| {
            let why = t
                .notes
                .iter()
                .rev()
                .find_map(|n| match n {
                    crate::transcript::Note::BackendFailure { message, .. } => Some(message.as_str()),
                    _ => None,
                })
                .unwrap_or("unknown failure");
            format!("{}: {why}", t.strategy)
        })
        .collect();
    if aborted.is_empty() {
        Ok(())
    } else {
        Err(CliError::Aborted(format!("turn aborted ({})", aborted.join("; "))))
    }
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let p = prepare(args, &[Strategy::SpeakFirst])?;
    let transcripts = simulate_all(&p)?;
    let out = &p.config.out;
    fs::create_dir_all(out).map_err(|e| io_error("create", out, e))?;
    for t in &transcripts {
        let label = file_label(t.strategy);
        let metrics = TurnMetrics::from_transcript(t);
        write_json(&out.join(format!("transcript-{label}.json")), t)?;
        write_json(&out.join(format!("metrics-{label}.json")), &metrics)?;
        println!(
            "{}: extra_tokens={} first_audio_s={} stalls={} total_s={:.3}{}",
            t.strategy,
            metrics.extra_tokens_before_first_response,
            metrics
                .first_audible_latency_s
                .map_or("-".to_string(), |v| format!("{v:.3}")),
            metrics.stall_count,
            metrics.total_turn_s,
            if t.aborted { " (aborted)" } else { "" }
        );
    }
    abort_error(&transcripts)
}

const TABLE_STRATEGIES: [Strategy; 4] = [
    Strategy::Tbs,
    Strategy::ThinkFirst,
    Strategy::SpeakFirst,
    Strategy::DEFAULT_INTERLEAVED,
];

fn cmd_compare(args: &RunArgs) -> Result<(), CliError> {
    let p = prepare(args, &TABLE_STRATEGIES)?;
    if p.strategies.len() < 2 {
        return Err(CliError::Usage("compare needs at least two strategies".into()));
    }
    let transcripts = simulate_all(&p)?;
    let report = comparison_report(&transcripts).map_err(|e| CliError::Usage(e.to_string()))?;
    let out = &p.config.out;
    fs::create_dir_all(out).map_err(|e| io_error("create", out, e))?;
    let path = out.join("report.json");
    let mut json = report.to_json();
    json.push('\n');
    fs::write(&path, json).map_err(|e| io_error("write", &path, e))?;
    print!("{}", report.to_table());
    abort_error(&transcripts)
}

fn cmd_corpus(args: &CorpusArgs) -> Result<(), CliError> {
    let file = load_file_config(args.common.config.as_deref())?;
    let flags = FlagOverrides {
        seed: args.common.seed,
        out: args.common.out.clone(),
        corpus: CorpusOverrides {
            input: args.input.clone(),
            mode: args.mode.clone(),
            keep_prob: args.keep_prob,
            fixed_l: args.fixed_l,
        },
        ..Default::default()
    };
    let config = resolve_corpus(&flags, &file)?;
    let input = fs::File::open(&config.input).map_err(|e| io_error("open", &config.input, e))?;
    let (records, stats) = build_corpus(
        BufReader::new(input),
        &config.input.display().to_string(),
        &config.policy,
        ExecMode::available(),
    )
    .map_err(|e| CliError::Io(e.to_string()))?;
    let out = fs::File::create(&config.out).map_err(|e| io_error("create", &config.out, e))?;
    write_records(std::io::BufWriter::new(out), &records).map_err(|e| io_error("write", &config.out, e))?;
    let mut stats_path = config.out.clone().into_os_string();
    stats_path.push(".stats.json");
    write_json(Path::new(&stats_path), &stats)?;
    let dropped: usize = stats.dropped.values().sum();
    println!(
        "samples={} records={} dropped={} malformed={} pruned_fraction={:.3}",
        stats.samples, stats.records, dropped, stats.malformed_lines, stats.pruned_fraction
    );
    Ok(())
}
