//! Think-incomplete fine-tuning records from distilled dialogue samples.
//!
//! Input is line-delimited JSON, one sample per line:
//!
//! ```json
//! {"query": "...", "cot_paragraphs": ["...", "..."], "response": "..."}
//! {"query": "...", "cot": "first paragraph\n\nsecond paragraph", "response": "..."}
//! ```
//!
//! Output is one `{"prompt", "target"}` object per kept sample, where
//! `target = "<think>" + kept paragraphs joined by a blank line + "</think>" + response`.

mod filter;
mod prune;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, ExecMode};

pub use filter::{clean_text, filter_compatibility, is_emoji, DropReason, Verdict};
pub use prune::{kept_indices, prune_cot, PruneMode, PrunePolicy};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const PARAGRAPH_SEPARATOR: &str = "\n\n";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}:{line}: {source}")]
    Io {
        path: String,
        line: usize,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid prune policy: {0}")]
    Policy(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSampleWire")]
pub struct RawSample {
    pub query: String,
    pub cot_paragraphs: Vec<String>,
    pub response: String,
}

#[derive(Deserialize)]
struct RawSampleWire {
    query: String,
    #[serde(default)]
    cot_paragraphs: Option<Vec<String>>,
    #[serde(default)]
    cot: Option<String>,
    response: String,
}

impl TryFrom<RawSampleWire> for RawSample {
    type Error = String;

    fn try_from(w: RawSampleWire) -> Result<Self, String> {
        let paragraphs = match (w.cot_paragraphs, w.cot) {
            (Some(p), None) => p,
            (None, Some(cot)) => split_paragraphs(&cot),
            (Some(_), Some(_)) => return Err("give either cot_paragraphs or cot, not both".into()),
            (None, None) => return Err("missing cot_paragraphs".into()),
        };
        Ok(RawSample {
            query: w.query,
            cot_paragraphs: paragraphs,
            response: w.response,
        })
    }
}

/// Splits on blank lines; paragraphs are trimmed and empty ones dropped.
pub fn split_paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(current.join("\n").trim().to_string());
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        out.push(current.join("\n").trim().to_string());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub prompt: String,
    pub target: String,
}

pub fn build_target(paragraphs: &[String], response: &str) -> String {
    format!("{THINK_OPEN}{}{THINK_CLOSE}{response}", paragraphs.join(PARAGRAPH_SEPARATOR))
}

/// One think block at the very start, then the response.
pub fn check_record_grammar(target: &str) -> bool {
    let Some(rest) = target.strip_prefix(THINK_OPEN) else {
        return false;
    };
    let Some(close) = rest.find(THINK_CLOSE) else {
        return false;
    };
    let (think, response) = (&rest[..close], &rest[close + THINK_CLOSE.len()..]);
    !think.contains(THINK_OPEN) && ![THINK_OPEN, THINK_CLOSE].iter().any(|tag| response.contains(tag))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub lines_read: usize,
    pub malformed_lines: usize,
    pub samples: usize,
    pub dropped: BTreeMap<DropReason, usize>,
    pub records: usize,
    /// Kept paragraph count per record.
    pub l_histogram: BTreeMap<usize, usize>,
    pub paragraphs_in: usize,
    pub paragraphs_kept: usize,
    /// Share of paragraphs removed by pruning, over all records.
    pub pruned_fraction: f64,
}

/// A parsed sample with its position among all parsed samples.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedSample {
    pub index: u64,
    pub sample: RawSample,
}

/// Parses line-delimited samples. Blank lines are ignored; malformed lines
/// are logged and counted, never fatal.
pub fn read_samples(reader: impl BufRead, path: &str, stats: &mut CorpusStats) -> Result<Vec<IndexedSample>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_string(),
            line: i + 1,
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        stats.lines_read += 1;
        match serde_json::from_str::<RawSample>(&line) {
            Ok(sample) => {
                out.push(IndexedSample {
                    index: out.len() as u64,
                    sample,
                });
            }
            Err(e) => {
                log::warn!("{path}:{}: skipped malformed sample: {e}", i + 1);
                stats.malformed_lines += 1;
            }
        }
    }
    stats.samples = out.len();
    Ok(out)
}

/// Prunes and formats already-filtered samples, one record each.
pub fn emit_records(samples: &[IndexedSample], policy: &PrunePolicy, mode: ExecMode, stats: &mut CorpusStats) -> Vec<TrainingRecord> {
    let pruned = par::map(mode, samples, |s| {
        let kept = prune_cot(&s.sample.cot_paragraphs, policy, s.index);
        let record = TrainingRecord {
            prompt: s.sample.query.clone(),
            target: build_target(&kept, &s.sample.response),
        };
        (record, s.sample.cot_paragraphs.len(), kept.len())
    });
    let mut records = Vec::with_capacity(pruned.len());
    for (record, total, kept) in pruned {
        stats.paragraphs_in += total;
        stats.paragraphs_kept += kept;
        *stats.l_histogram.entry(kept).or_default() += 1;
        records.push(record);
    }
    stats.records += records.len();
    stats.pruned_fraction = if stats.paragraphs_in == 0 {
        0.0
    } else {
        (stats.paragraphs_in - stats.paragraphs_kept) as f64 / stats.paragraphs_in as f64
    };
    records
}

/// Filters, prunes and formats a whole input stream.
pub fn build_corpus(
    reader: impl BufRead,
    path: &str,
    policy: &PrunePolicy,
    mode: ExecMode,
) -> Result<(Vec<TrainingRecord>, CorpusStats), CorpusError> {
    policy.validate().map_err(CorpusError::Policy)?;
    let mut stats = CorpusStats::default();
    let samples = read_samples(reader, path, &mut stats)?;
    let verdicts = par::map(mode, &samples, |s| filter_compatibility(&s.sample));
    let mut kept = Vec::with_capacity(samples.len());
    for (s, verdict) in samples.into_iter().zip(verdicts) {
        match verdict {
            Verdict::Keep(sample) => kept.push(IndexedSample { index: s.index, sample }),
            Verdict::Drop(reason) => *stats.dropped.entry(reason).or_default() += 1,
        }
    }
    let records = emit_records(&kept, policy, mode, &mut stats);
    Ok((records, stats))
}

pub fn write_records(mut out: impl Write, records: &[TrainingRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
