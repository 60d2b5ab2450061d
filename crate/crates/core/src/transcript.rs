//! Append-only record of one simulated turn.

use serde::{Deserialize, Serialize};

use crate::model::{Brain, Segment, SegmentKind, Token};
use crate::scheduler::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegmentRef {
    pub kind: SegmentKind,
    pub index: usize,
}

impl SegmentRef {
    pub fn think(index: usize) -> Self {
        SegmentRef {
            kind: SegmentKind::Think,
            index,
        }
    }

    pub fn response(index: usize) -> Self {
        SegmentRef {
            kind: SegmentKind::Response,
            index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventPayload {
    GenStart { brain: Brain, segment: SegmentRef },
    GenEnd { brain: Brain, segment: SegmentRef },
    SegmentHandoff { think_index: usize },
    PlaybackStart { response_index: usize },
    PlaybackEnd { response_index: usize },
    Stall { start: f64, duration: f64 },
    TurnEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    #[serde(flatten)]
    pub payload: EventPayload,
}

/// One articulation step: what the prompt showed and when it ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub think_segments: usize,
    pub response_segments: usize,
    pub think_closed: bool,
    /// Runs to end-of-response instead of stopping after one segment.
    pub free_running: bool,
    pub ready_time: f64,
    pub start_time: f64,
    pub prompt_tokens: usize,
}

impl StepRecord {
    /// The step sat idle waiting for thinking.
    pub fn waited_on_think(&self) -> bool {
        self.start_time > self.ready_time
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "note", rename_all = "snake_case")]
pub enum Note {
    /// Thinking hit the token cap and was closed by the scheduler.
    ForcedClose { time: f64, think_tokens: usize },
    /// The response hit its token cap before end-of-response.
    ResponseBudgetExhausted { time: f64 },
    /// A backend failed; the turn was cut short.
    BackendFailure {
        time: f64,
        brain: Brain,
        message: String,
        retriable: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub turn_id: String,
    pub strategy: Strategy,
    pub aborted: bool,
    pub events: Vec<Event>,
    pub steps: Vec<StepRecord>,
    pub think_segments: Vec<Segment>,
    pub response_segments: Vec<Segment>,
    pub final_think: Vec<Token>,
    pub final_response: Vec<Token>,
    #[serde(default)]
    pub notes: Vec<Note>,
}

impl Transcript {
    pub fn end_time(&self) -> f64 {
        self.events.last().map(|e| e.time).unwrap_or(0.0)
    }

    pub fn events_where<'a>(
        &'a self,
        pred: impl Fn(&EventPayload) -> bool + 'a,
    ) -> impl Iterator<Item = &'a Event> + 'a {
        self.events.iter().filter(move |e| pred(&e.payload))
    }

    /// Time of the first event matching `payload` exactly.
    pub fn time_of(&self, payload: &EventPayload) -> Option<f64> {
        self.events
            .iter()
            .find(|e| &e.payload == payload)
            .map(|e| e.time)
    }

    /// Structural invariants every finished transcript must satisfy.
    pub fn check_invariants(&self) -> Result<(), String> {
        for w in self.events.windows(2) {
            if w[1].time < w[0].time {
                return Err(format!("events out of order at t={} -> t={}", w[0].time, w[1].time));
            }
        }
        match self.events.last() {
            Some(Event {
                payload: EventPayload::TurnEnd,
                ..
            }) => {}
            _ => return Err("transcript does not end with TurnEnd".into()),
        }
        let joined: Vec<Token> = self.think_segments.iter().flat_map(|s| s.tokens.iter().copied()).collect();
        if joined != self.final_think {
            return Err("think segments do not concatenate to final_think".into());
        }
        let joined: Vec<Token> = self
            .response_segments
            .iter()
            .flat_map(|s| s.tokens.iter().copied())
            .collect();
        if joined != self.final_response {
            return Err("response segments do not concatenate to final_response".into());
        }
        for (kind, segs) in [
            (SegmentKind::Think, &self.think_segments),
            (SegmentKind::Response, &self.response_segments),
        ] {
            for (i, s) in segs.iter().enumerate() {
                if s.kind != kind || s.index != i + 1 {
                    return Err(format!("bad segment numbering at {kind:?} {}", i + 1));
                }
                if s.start_time > s.end_time {
                    return Err(format!("{kind:?} segment {} ends before it starts", s.index));
                }
                if s.tokens.iter().any(|t| t.is_control()) {
                    return Err(format!("{kind:?} segment {} holds a control token", s.index));
                }
            }
        }
        for (i, ev) in self.events.iter().enumerate() {
            if let EventPayload::GenStart { brain, segment } = &ev.payload {
                let ends: Vec<&Event> = self
                    .events
                    .iter()
                    .filter(|e| {
                        matches!(&e.payload, EventPayload::GenEnd { brain: b, segment: s } if b == brain && s == segment)
                    })
                    .collect();
                if ends.len() != 1 || ends[0].time < ev.time {
                    return Err(format!("GenStart #{i} for {segment:?} lacks a single later GenEnd"));
                }
            }
        }
        Ok(())
    }
}
