//! Latency and token accounting over finished transcripts.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{RateModel, Segment, SegmentKind, SegmentationPolicy, TokenKind};
use crate::scheduler::Strategy;
use crate::transcript::{EventPayload, Transcript};

/// Slack for float rounding when converting a time span to a token count.
const COUNT_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("expected a response segment, got think segment {0}")]
    NotAResponseSegment(usize),
    #[error("report mixes scenarios {0:?} and {1:?}")]
    MixedScenarios(String, String),
    #[error("report needs at least one transcript")]
    Empty,
}

/// Seconds of audio in a response segment. Text tokens are silent.
pub fn playback_duration(segment: &Segment, rates: &RateModel) -> Result<f64, MetricsError> {
    if segment.kind != SegmentKind::Response {
        return Err(MetricsError::NotAResponseSegment(segment.index));
    }
    Ok(segment.count_kind(TokenKind::Audio) as f64 * rates.audio_token_seconds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtraTokens {
    pub count: usize,
    /// No response token was produced; `count` is every think token.
    pub no_response: bool,
}

/// Think tokens whose generation began strictly before the first response
/// token's. A think token starting at the same instant does not count.
pub fn extra_tokens_before_first_response(transcript: &Transcript) -> ExtraTokens {
    let Some(first) = transcript.response_segments.iter().find(|s| !s.is_empty()) else {
        return ExtraTokens {
            count: transcript.final_think.len(),
            no_response: true,
        };
    };
    let cutoff = first.start_time;
    let count = transcript
        .think_segments
        .iter()
        .map(|s| tokens_started_before(s, cutoff))
        .sum();
    ExtraTokens {
        count,
        no_response: false,
    }
}

fn tokens_started_before(segment: &Segment, cutoff: f64) -> usize {
    if segment.is_empty() || segment.start_time >= cutoff {
        return 0;
    }
    let n = ((cutoff - segment.start_time) / segment.token_seconds - COUNT_EPSILON).ceil();
    (n.max(0.0) as usize).min(segment.len())
}

/// Time of the first audio, or `None` when nothing was played.
pub fn first_audible_latency(transcript: &Transcript) -> Option<f64> {
    transcript
        .events_where(|p| matches!(p, EventPayload::PlaybackStart { .. }))
        .next()
        .map(|e| e.time)
}

/// Whether a think segment is always ready before the previous response
/// segment finishes playing.
pub fn pacing_feasible(policy: &SegmentationPolicy, rates: &RateModel) -> bool {
    let audio = (0..policy.response_segment_tokens)
        .filter(|&p| policy.ta_kind_at(p) == TokenKind::Audio)
        .count();
    pacing_feasible_raw(
        policy.think_segment_tokens,
        rates.formulation_rate,
        audio as f64 * rates.audio_token_seconds,
    )
}

/// `think_tokens / formulation_rate <= playback_seconds`.
pub fn pacing_feasible_raw(think_tokens: usize, formulation_rate: f64, playback_seconds: f64) -> bool {
    think_tokens == 0 || think_tokens as f64 / formulation_rate <= playback_seconds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTiming {
    pub kind: SegmentKind,
    pub index: usize,
    pub tokens: usize,
    pub gen_start_s: f64,
    pub gen_end_s: f64,
    pub playback_start_s: Option<f64>,
    pub playback_end_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnMetrics {
    pub turn_id: String,
    pub strategy: Strategy,
    pub aborted: bool,
    pub extra_tokens_before_first_response: usize,
    pub no_response: bool,
    pub first_audible_latency_s: Option<f64>,
    pub stall_count: usize,
    pub stall_total_s: f64,
    pub total_turn_s: f64,
    pub segments: Vec<SegmentTiming>,
}

impl TurnMetrics {
    pub fn from_transcript(t: &Transcript) -> Self {
        let extra = extra_tokens_before_first_response(t);
        let stalls: Vec<f64> = t
            .events
            .iter()
            .filter_map(|e| match e.payload {
                EventPayload::Stall { duration, .. } => Some(duration),
                _ => None,
            })
            .collect();
        let playback = |start: bool, index: usize| {
            t.time_of(&if start {
                EventPayload::PlaybackStart { response_index: index }
            } else {
                EventPayload::PlaybackEnd { response_index: index }
            })
        };
        let mut segments: Vec<SegmentTiming> = t
            .think_segments
            .iter()
            .map(|s| SegmentTiming {
                kind: s.kind,
                index: s.index,
                tokens: s.len(),
                gen_start_s: s.start_time,
                gen_end_s: s.end_time,
                playback_start_s: None,
                playback_end_s: None,
            })
            .collect();
        segments.extend(t.response_segments.iter().map(|s| SegmentTiming {
            kind: s.kind,
            index: s.index,
            tokens: s.len(),
            gen_start_s: s.start_time,
            gen_end_s: s.end_time,
            playback_start_s: playback(true, s.index),
            playback_end_s: playback(false, s.index),
        }));
        TurnMetrics {
            turn_id: t.turn_id.clone(),
            strategy: t.strategy,
            aborted: t.aborted,
            extra_tokens_before_first_response: extra.count,
            no_response: extra.no_response,
            first_audible_latency_s: first_audible_latency(t),
            stall_count: stalls.len(),
            stall_total_s: stalls.iter().fold(0.0, |a, b| a + b),
            total_turn_s: t.end_time(),
            segments,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: Strategy,
    pub extra_tokens: usize,
    pub first_audible_latency_s: Option<f64>,
    pub stall_count: usize,
    pub stall_total_s: f64,
    pub total_turn_s: f64,
    pub aborted: bool,
}

/// One row per strategy for a single scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let header = ["strategy", "extra_tokens", "first_audio_s", "stalls", "stall_s", "total_s"];
        let cells: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                let name = if r.aborted {
                    format!("{} (aborted)", r.strategy)
                } else {
                    r.strategy.to_string()
                };
                [
                    name,
                    r.extra_tokens.to_string(),
                    r.first_audible_latency_s.map_or("-".into(), |v| format!("{v:.3}")),
                    r.stall_count.to_string(),
                    format!("{:.3}", r.stall_total_s),
                    format!("{:.3}", r.total_turn_s),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = format!("scenario: {}\n", self.scenario);
        let line = |out: &mut String, row: &[&str]| {
            for (i, (c, w)) in row.iter().zip(widths).enumerate() {
                if i == 0 {
                    let _ = write!(out, "{c:<w$}");
                } else {
                    let _ = write!(out, "  {c:>w$}");
                }
            }
            out.push('\n');
        };
        line(&mut out, &header);
        for row in &cells {
            let refs: Vec<&str> = row.iter().map(String::as_str).collect();
            line(&mut out, &refs);
        }
        out
    }
}

/// Builds the per-strategy comparison. Rows are ordered Tbs, ThinkFirst,
/// SpeakFirst, Interleaved, Direct.
pub fn comparison_report(transcripts: &[Transcript]) -> Result<Report, MetricsError> {
    let first = transcripts.first().ok_or(MetricsError::Empty)?;
    if let Some(other) = transcripts.iter().find(|t| t.turn_id != first.turn_id) {
        return Err(MetricsError::MixedScenarios(first.turn_id.clone(), other.turn_id.clone()));
    }
    let mut rows: Vec<ReportRow> = transcripts
        .iter()
        .map(|t| {
            let m = TurnMetrics::from_transcript(t);
            ReportRow {
                strategy: m.strategy,
                extra_tokens: m.extra_tokens_before_first_response,
                first_audible_latency_s: m.first_audible_latency_s,
                stall_count: m.stall_count,
                stall_total_s: m.stall_total_s,
                total_turn_s: m.total_turn_s,
                aborted: m.aborted,
            }
        })
        .collect();
    rows.sort_by_key(|r| (r.strategy.report_rank(), r.strategy));
    Ok(Report {
        scenario: first.turn_id.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BrainPair, GeneratorSpec, MockSpec};
    use crate::model::{segment_stream, Token, TurnInput};
    use crate::scheduler::run_turn;
    use proptest::prelude::*;
    use crate::scheduler::Strategy;

    fn ta(n: usize) -> Vec<Token> {
        let p = SegmentationPolicy::default();
        (0..n)
            .map(|i| match p.ta_kind_at(i) {
                TokenKind::Text => Token::text(i as u32).unwrap(),
                _ => Token::audio(i as u32).unwrap(),
            })
            .collect()
    }

    fn turn(strategy: Strategy, cot: usize, resp: usize, rates: RateModel) -> Transcript {
        let spec = GeneratorSpec::Mock(MockSpec::new(3, cot, resp));
        let brains = BrainPair::from_specs(&spec, &spec).unwrap();
        let input = TurnInput::new(vec![Token::audio(9).unwrap()], vec![]).unwrap();
        run_turn(strategy, &input, &brains, &SegmentationPolicy::default(), &rates, "m").unwrap()
    }

    #[test]
    fn ta4_segment_plays_for_3_2_seconds() {
        let seg = &segment_stream(&ta(100), 100, SegmentKind::Response)[0];
        assert!((playback_duration(seg, &RateModel::default()).unwrap() - 3.2).abs() < 1e-12);
        let one = &segment_stream(&ta(5), 5, SegmentKind::Response)[0];
        assert!((playback_duration(one, &RateModel::default()).unwrap() - 0.16).abs() < 1e-12);
    }

    #[test]
    fn durations_add_up() {
        let rates = RateModel::default();
        let whole = &segment_stream(&ta(450), 450, SegmentKind::Response)[0];
        let parts: f64 = segment_stream(&ta(450), 100, SegmentKind::Response)
            .iter()
            .map(|s| playback_duration(s, &rates).unwrap())
            .sum();
        assert!((parts - playback_duration(whole, &rates).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn think_segment_has_no_playback() {
        let seg = &segment_stream(&ta(10), 10, SegmentKind::Think)[0];
        assert_eq!(
            playback_duration(seg, &RateModel::default()),
            Err(MetricsError::NotAResponseSegment(1))
        );
    }

    #[test]
    fn feasibility_examples() {
        let p = SegmentationPolicy::default();
        assert!(pacing_feasible(&p, &RateModel::default()));
        let slow = RateModel {
            formulation_rate: 20.0,
            ..Default::default()
        };
        assert!(!pacing_feasible(&p, &slow));
        assert!(pacing_feasible_raw(0, 1e-6, 0.0));
    }

    #[test]
    fn feasibility_matches_simulation() {
        let t = turn(Strategy::SpeakFirst, 400, 500, RateModel::default());
        assert_eq!(TurnMetrics::from_transcript(&t).stall_count, 0);
        let slow = RateModel {
            formulation_rate: 20.0,
            ..Default::default()
        };
        let t = turn(Strategy::SpeakFirst, 400, 500, slow);
        assert!(TurnMetrics::from_transcript(&t).stall_count >= 1);
    }

    #[test]
    fn latency_examples() {
        let rates = RateModel::default();
        let speak = first_audible_latency(&turn(Strategy::SpeakFirst, 300, 300, rates)).unwrap();
        assert!((speak - 1.0 / 50.0).abs() < 1e-12);
        let think = first_audible_latency(&turn(Strategy::ThinkFirst, 300, 300, rates)).unwrap();
        assert!((think - (1.6 + 1.0 / 50.0)).abs() < 1e-9);
        let buffered = RateModel {
            tts_buffer_tokens: 25,
            ..rates
        };
        let b = first_audible_latency(&turn(Strategy::ThinkFirst, 300, 300, buffered)).unwrap();
        assert!((b - think - 25.0 / 50.0).abs() < 1e-9);
    }

    #[test]
    fn extra_token_ordering() {
        let rates = RateModel::default();
        let extra = |s| TurnMetrics::from_transcript(&turn(s, 300, 300, rates)).extra_tokens_before_first_response;
        assert_eq!(extra(Strategy::Tbs), 300);
        assert_eq!(extra(Strategy::ThinkFirst), 80);
        assert_eq!(extra(Strategy::SpeakFirst), 0);
        assert_eq!(extra(Strategy::DEFAULT_INTERLEAVED), 8);
        assert_eq!(extra(Strategy::Direct), 0);
    }

    #[test]
    fn missing_response_is_flagged() {
        let t = turn(Strategy::Tbs, 50, 0, RateModel::default());
        let e = extra_tokens_before_first_response(&t);
        assert!(e.no_response);
        assert_eq!(e.count, 50);
        assert_eq!(first_audible_latency(&t), None);
    }

    #[test]
    fn report_rows_and_round_trip() {
        let rates = RateModel::default();
        let ts: Vec<Transcript> = [Strategy::DEFAULT_INTERLEAVED, Strategy::SpeakFirst, Strategy::Tbs, Strategy::ThinkFirst]
            .into_iter()
            .map(|s| turn(s, 762, 300, rates))
            .collect();
        let report = comparison_report(&ts).unwrap();
        let extras: Vec<usize> = report.rows.iter().map(|r| r.extra_tokens).collect();
        assert_eq!(extras, vec![762, 80, 0, 8]);
        let json = report.to_json();
        assert_eq!(Report::from_json(&json).unwrap().to_json(), json);
        let table = report.to_table();
        assert_eq!(table.lines().count(), 6);
        assert!(table.lines().nth(2).unwrap().starts_with("tbs "));

        let single = comparison_report(&ts[..1]).unwrap();
        assert_eq!(single.rows.len(), 1);
    }

    #[test]
    fn mixed_scenarios_are_rejected() {
        let a = turn(Strategy::Tbs, 10, 10, RateModel::default());
        let mut b = a.clone();
        b.turn_id = "other".into();
        assert!(matches!(comparison_report(&[a, b]), Err(MetricsError::MixedScenarios(..))));
        assert_eq!(comparison_report(&[]), Err(MetricsError::Empty));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn faster_thinking_never_hurts(cot in 0usize..500, resp in 1usize..400, f in 5.0f64..150.0, bump in 1.0f64..3.0, a in 10.0f64..150.0, s in 0usize..4) {
            let strategy = [Strategy::Tbs, Strategy::ThinkFirst, Strategy::SpeakFirst, Strategy::DEFAULT_INTERLEAVED][s];
            let slow = RateModel { formulation_rate: f, articulation_rate: a, ..Default::default() };
            let fast = RateModel { formulation_rate: f * bump, ..slow };
            let ms = TurnMetrics::from_transcript(&turn(strategy, cot, resp, slow));
            let mf = TurnMetrics::from_transcript(&turn(strategy, cot, resp, fast));
            prop_assert!(mf.first_audible_latency_s.unwrap() <= ms.first_audible_latency_s.unwrap() + 1e-9);
            prop_assert!(mf.stall_total_s <= ms.stall_total_s + 1e-9, "{} > {}", mf.stall_total_s, ms.stall_total_s);
            prop_assert_eq!(mf.stall_count == 0, mf.stall_total_s == 0.0);
        }

        #[test]
        fn extra_tokens_are_ordered(cot in 1usize..500, resp in 1usize..300, f in 5.0f64..150.0, a in 5.0f64..150.0) {
            let rates = RateModel { formulation_rate: f, articulation_rate: a, ..Default::default() };
            let extra = |s| TurnMetrics::from_transcript(&turn(s, cot, resp, rates)).extra_tokens_before_first_response;
            let (tbs, thk, spk) = (extra(Strategy::Tbs), extra(Strategy::ThinkFirst), extra(Strategy::SpeakFirst));
            prop_assert!(tbs >= thk);
            prop_assert!(thk >= spk);
            prop_assert_eq!(spk, 0);
        }
    }
}
