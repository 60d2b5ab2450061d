//! Deterministic virtual-time engine for one turn.
//!
//! Every generated token occupies `1 / rate` virtual seconds of its brain.
//! Each running brain has exactly one pending wake-up: the completion of the
//! token it is currently producing. Playback is a third actor that plays
//! response segments back to back.

use crate::assembler::{build_articulation_prompt, build_formulation_prompt, StepContext};
use crate::backend::{generate, BackendError, BrainPair, Completion, StopCondition, TokenStream};
use crate::model::{Brain, RateModel, Segment, SegmentKind, SegmentationPolicy, Token, TokenKind, TurnInput};
use crate::transcript::{Event, EventPayload, Note, SegmentRef, StepRecord, Transcript};

use super::agenda::{Actor, Agenda};
use super::strategy::{Strategy, ThinkRequirement};

/// Playback gaps shorter than this are treated as rounding noise.
pub const GAP_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Wake {
    Token { worker: Worker, token: Token },
    ForcedClose { worker: Worker },
    PlaybackDone,
}

/// Physical worker. Under the interleaved strategy the articulation brain
/// also produces the thinking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Worker {
    Formulation,
    Articulation,
}

impl Worker {
    fn actor(self) -> Actor {
        match self {
            Worker::Formulation => Actor::Formulation,
            Worker::Articulation => Actor::Articulation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Purpose {
    Think,
    Respond { free_running: bool },
}

struct Run {
    stream: TokenStream,
    purpose: Purpose,
    start: f64,
    token_seconds: f64,
    issued: usize,
}

impl Run {
    fn next_completion(&self) -> f64 {
        self.start + (self.issued + 1) as f64 * self.token_seconds
    }
}

#[derive(Default)]
struct ThinkState {
    handed: Vec<Segment>,
    pending: Vec<Token>,
    pending_start: f64,
    produced: usize,
    closed: bool,
}

struct OpenSegment {
    tokens: Vec<Token>,
    start: f64,
    token_seconds: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct SegmentMeta {
    waited_on_think: bool,
    available: bool,
    complete: bool,
}

#[derive(Default)]
struct ResponseState {
    segments: Vec<Segment>,
    meta: Vec<SegmentMeta>,
    open: Option<OpenSegment>,
    produced: usize,
    done: bool,
    steps: usize,
}

#[derive(Default)]
struct Playback {
    next: usize,
    playing: Option<PlayingSegment>,
    last_end: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct PlayingSegment {
    index: usize,
    start: f64,
    end_scheduled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Advance {
    /// One wake-up was processed at this virtual time.
    Progress(f64),
    /// The turn is over.
    Finished,
}

/// Articulation step waiting for its think segments.
#[derive(Debug, Clone, Copy)]
struct Blocked {
    ready_time: f64,
}

/// Mutable state of one simulated turn.
pub struct TurnEngine {
    turn_id: String,
    strategy: Strategy,
    input: TurnInput,
    brains: BrainPair,
    policy: SegmentationPolicy,
    rates: RateModel,
    think_segment_tokens: usize,
    response_segment_tokens: usize,

    agenda: Agenda<Wake>,
    clock: f64,
    finished: bool,
    aborted: bool,

    think: ThinkState,
    response: ResponseState,
    formulation_run: Option<Run>,
    articulation_run: Option<Run>,
    blocked: Option<Blocked>,
    current_step_waited: bool,
    playback: Playback,

    events: Vec<Event>,
    steps: Vec<StepRecord>,
    notes: Vec<Note>,
}

impl TurnEngine {
    /// Sets up the turn at virtual time zero. Inputs must already be valid.
    pub fn new(
        turn_id: impl Into<String>,
        strategy: Strategy,
        input: TurnInput,
        brains: BrainPair,
        policy: SegmentationPolicy,
        rates: RateModel,
    ) -> Self {
        let (think_segment_tokens, response_segment_tokens) = match strategy {
            Strategy::Interleaved {
                think_chunk,
                response_chunk,
            } => (think_chunk, response_chunk),
            _ => (policy.think_segment_tokens, policy.response_segment_tokens),
        };
        let mut engine = TurnEngine {
            turn_id: turn_id.into(),
            strategy,
            input,
            brains,
            policy,
            rates,
            think_segment_tokens,
            response_segment_tokens,
            agenda: Agenda::new(),
            clock: 0.0,
            finished: false,
            aborted: false,
            think: ThinkState::default(),
            response: ResponseState::default(),
            formulation_run: None,
            articulation_run: None,
            blocked: None,
            current_step_waited: false,
            playback: Playback::default(),
            events: Vec::new(),
            steps: Vec::new(),
            notes: Vec::new(),
        };
        engine.start();
        engine
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    fn start(&mut self) {
        match self.strategy {
            Strategy::Direct => {
                self.think.closed = true;
                self.try_start_step();
            }
            Strategy::Interleaved { .. } => self.start_think_run(Worker::Articulation),
            _ => {
                self.start_think_run(Worker::Formulation);
                self.try_start_step();
            }
        }
        self.finish_if_idle();
    }

    /// Processes the earliest pending wake-up.
    pub fn advance(&mut self) -> Advance {
        if self.finished {
            return Advance::Finished;
        }
        let (time, _actor, wake) = self
            .agenda
            .pop()
            .expect("scheduler invariant violated: no pending wake-up before the turn ended");
        assert!(time >= self.clock, "virtual clock moved backwards: {} -> {time}", self.clock);
        self.clock = time;
        match wake {
            Wake::Token { worker, token } => self.on_token(worker, token),
            Wake::ForcedClose { worker } => {
                self.close_think();
                self.after_think_run(worker);
            }
            Wake::PlaybackDone => self.on_playback_done(),
        }
        self.finish_if_idle();
        Advance::Progress(time)
    }

    /// Runs the turn to completion.
    pub fn run(mut self) -> Transcript {
        while self.advance() != Advance::Finished {}
        self.into_transcript()
    }

    pub fn into_transcript(self) -> Transcript {
        let final_think = self.think.handed.iter().flat_map(|s| s.tokens.iter().copied()).collect();
        let final_response = self
            .response
            .segments
            .iter()
            .flat_map(|s| s.tokens.iter().copied())
            .collect();
        Transcript {
            turn_id: self.turn_id,
            strategy: self.strategy,
            aborted: self.aborted,
            events: self.events,
            steps: self.steps,
            think_segments: self.think.handed,
            response_segments: self.response.segments,
            final_think,
            final_response,
            notes: self.notes,
        }
    }

    fn emit(&mut self, payload: EventPayload) {
        self.events.push(Event {
            time: self.clock,
            payload,
        });
    }

    fn think_brain(&self) -> Brain {
        match self.strategy {
            Strategy::Interleaved { .. } => Brain::Articulation,
            _ => Brain::Formulation,
        }
    }

    fn run_slot(&mut self, worker: Worker) -> &mut Option<Run> {
        match worker {
            Worker::Formulation => &mut self.formulation_run,
            Worker::Articulation => &mut self.articulation_run,
        }
    }

    fn token_seconds(&self, worker: Worker) -> f64 {
        match worker {
            Worker::Formulation => self.rates.formulation_token_seconds(),
            Worker::Articulation => self.rates.articulation_token_seconds(),
        }
    }

    // ---- thinking -------------------------------------------------------

    fn start_think_run(&mut self, worker: Worker) {
        let remaining = self.policy.max_think_tokens.saturating_sub(self.think.produced);
        if remaining == 0 {
            self.force_close(worker);
            return;
        }
        let budget = match self.strategy {
            Strategy::Interleaved { think_chunk, .. } => think_chunk.min(remaining),
            _ => remaining,
        };
        let prior: Vec<Token> = self
            .think
            .handed
            .iter()
            .flat_map(|s| s.tokens.iter().copied())
            .chain(self.think.pending.iter().copied())
            .collect();
        let prompt = build_formulation_prompt(&self.input, &prior);
        let generator = match worker {
            Worker::Formulation => self.brains.formulation.clone(),
            Worker::Articulation => self.brains.articulation.clone(),
        };
        let stream = generate(generator.as_ref(), &prompt, &StopCondition::think(budget));
        *self.run_slot(worker) = Some(Run {
            stream,
            purpose: Purpose::Think,
            start: self.clock,
            token_seconds: self.token_seconds(worker),
            issued: 0,
        });
        self.pull(worker);
    }

    fn force_close(&mut self, worker: Worker) {
        self.notes.push(Note::ForcedClose {
            time: self.clock,
            think_tokens: self.think.produced,
        });
        let at = self.clock + self.token_seconds(worker);
        self.agenda.push(at, worker.actor(), Wake::ForcedClose { worker });
    }

    fn on_think_token(&mut self, worker: Worker, token: Token) {
        if token.kind() == TokenKind::ThinkClose {
            *self.run_slot(worker) = None;
            self.close_think();
            self.after_think_run(worker);
            return;
        }
        if token.is_control() {
            let error = BackendError::fatal(format!("formulation emitted {token} inside thinking"));
            self.abort(worker, Purpose::Think, error);
            return;
        }
        self.think.pending.push(token);
        self.think.produced += 1;
        if self.think.pending.len() == self.think_segment_tokens {
            self.hand_off(true);
        }
        self.pull(worker);
    }

    /// Emits the pending tokens as the next think segment.
    fn hand_off(&mut self, notify: bool) {
        let index = self.think.handed.len() + 1;
        let brain = self.think_brain();
        let tokens = std::mem::take(&mut self.think.pending);
        if tokens.is_empty() {
            // empty closing segment: its generation interval is the close itself
            self.think.pending_start = self.clock;
            self.emit(EventPayload::GenStart {
                brain,
                segment: SegmentRef::think(index),
            });
        }
        let token_seconds = self.token_seconds(match brain {
            Brain::Formulation => Worker::Formulation,
            Brain::Articulation => Worker::Articulation,
        });
        self.think.handed.push(Segment {
            kind: SegmentKind::Think,
            index,
            tokens,
            start_time: self.think.pending_start,
            end_time: self.clock,
            token_seconds,
        });
        self.emit(EventPayload::GenEnd {
            brain,
            segment: SegmentRef::think(index),
        });
        if notify {
            self.emit(EventPayload::SegmentHandoff { think_index: index });
            if self.blocked.is_some() {
                self.try_start_step();
            }
        }
    }

    fn close_think(&mut self) {
        // the final segment, possibly short or empty, leaves with the close
        self.think.closed = true;
        self.hand_off(true);
    }

    fn after_think_run(&mut self, worker: Worker) {
        *self.run_slot(worker) = None;
        if worker == Worker::Articulation {
            // interleaved: the same brain now answers
            self.try_start_step();
        } else if self.blocked.is_some() {
            self.try_start_step();
        }
    }

    // ---- articulation ---------------------------------------------------

    fn try_start_step(&mut self) {
        if self.response.done || self.articulation_run.is_some() {
            return;
        }
        let step = self.response.steps + 1;
        let ready_time = self.blocked.map_or(self.clock, |b| b.ready_time);
        let visible = match self.strategy.requirement(step) {
            ThinkRequirement::Closed => self.think.closed.then_some(self.think.handed.len()),
            ThinkRequirement::Segments(n) => (self.think.handed.len() >= n).then_some(n),
        };
        let Some(visible) = visible else {
            assert!(
                !self.think.closed,
                "step {step} needs think segments that will never exist"
            );
            self.blocked = Some(Blocked { ready_time });
            return;
        };
        self.blocked = None;
        self.start_step(step, visible, ready_time);
    }

    fn start_step(&mut self, step: usize, visible: usize, ready_time: f64) {
        let shown = self.response.segments.len();
        if let Some(expected) = self.strategy.expected_response_segments(visible) {
            assert_eq!(
                shown, expected,
                "step {step}: {visible} think segments require {expected} response segments, have {shown}"
            );
        }
        let free_running = self.think.closed && visible == self.think.handed.len();
        let remaining = self.policy.max_response_tokens.saturating_sub(self.response.produced);
        if remaining == 0 {
            self.end_response_on_budget();
            return;
        }
        let budget = if free_running {
            remaining
        } else {
            self.response_segment_tokens.min(remaining)
        };
        let ctx = StepContext {
            input: &self.input,
            think_segments: &self.think.handed[..visible],
            response_segments: &self.response.segments,
            think_closed: self.think.closed,
        };
        let prompt = build_articulation_prompt(&ctx);
        self.response.steps = step;
        self.current_step_waited = self.clock > ready_time;
        self.steps.push(StepRecord {
            step,
            think_segments: visible,
            response_segments: shown,
            think_closed: self.think.closed,
            free_running,
            ready_time,
            start_time: self.clock,
            prompt_tokens: prompt.len(),
        });
        let generator = self.brains.articulation.clone();
        let stream = generate(generator.as_ref(), &prompt, &StopCondition::response(budget));
        self.articulation_run = Some(Run {
            stream,
            purpose: Purpose::Respond { free_running },
            start: self.clock,
            token_seconds: self.rates.articulation_token_seconds(),
            issued: 0,
        });
        self.pull(Worker::Articulation);
    }

    fn on_response_token(&mut self, token: Token) {
        if token.is_control() && token.kind() != TokenKind::EndOfResponse {
            let error = BackendError::fatal(format!("articulation emitted {token} inside a response"));
            self.abort(Worker::Articulation, Purpose::Respond { free_running: false }, error);
            return;
        }
        if token.kind() == TokenKind::EndOfResponse {
            self.articulation_run = None;
            self.close_response_segment();
            self.response.done = true;
            self.try_start_playback();
            return;
        }
        let open = self
            .response
            .open
            .as_mut()
            .expect("response token without an open segment");
        open.tokens.push(token);
        let len = open.tokens.len();
        self.response.produced += 1;
        let idx = self.response.meta.len() - 1;
        if len == self.rates.tts_buffer_tokens + 1 {
            self.response.meta[idx].available = true;
        }
        if len == self.response_segment_tokens {
            self.close_response_segment();
        }
        self.try_start_playback();
        self.pull(Worker::Articulation);
    }

    fn open_response_segment(&mut self) {
        let index = self.response.meta.len() + 1;
        let first_of_step = self
            .steps
            .last()
            .is_some_and(|s| s.response_segments + 1 == index);
        self.response.meta.push(SegmentMeta {
            waited_on_think: first_of_step && self.current_step_waited,
            ..Default::default()
        });
        self.response.open = Some(OpenSegment {
            tokens: Vec::new(),
            start: self.clock,
            token_seconds: self.rates.articulation_token_seconds(),
        });
        self.emit(EventPayload::GenStart {
            brain: Brain::Articulation,
            segment: SegmentRef::response(index),
        });
    }

    fn close_response_segment(&mut self) {
        let Some(open) = self.response.open.take() else {
            return;
        };
        let index = self.response.segments.len() + 1;
        self.response.segments.push(Segment {
            kind: SegmentKind::Response,
            index,
            tokens: open.tokens,
            start_time: open.start,
            end_time: self.clock,
            token_seconds: open.token_seconds,
        });
        let meta = &mut self.response.meta[index - 1];
        meta.available = true;
        meta.complete = true;
        self.emit(EventPayload::GenEnd {
            brain: Brain::Articulation,
            segment: SegmentRef::response(index),
        });
        if let Some(p) = self.playback.playing {
            if p.index == index && !p.end_scheduled {
                self.schedule_playback_end();
            }
        }
    }

    fn end_response_on_budget(&mut self) {
        self.close_response_segment();
        self.response.done = true;
        self.notes.push(Note::ResponseBudgetExhausted { time: self.clock });
        self.try_start_playback();
    }

    fn after_response_run(&mut self, free_running: bool) {
        self.articulation_run = None;
        self.close_response_segment();
        if free_running || self.response.produced >= self.policy.max_response_tokens {
            self.end_response_on_budget();
            return;
        }
        match self.strategy {
            Strategy::Interleaved { .. } if !self.think.closed => self.start_think_run(Worker::Articulation),
            _ => self.try_start_step(),
        }
    }

    // ---- token plumbing -------------------------------------------------

    /// Pulls the next token of `worker`'s run and schedules its completion.
    fn pull(&mut self, worker: Worker) {
        let Some(run) = self.run_slot(worker).as_mut() else {
            return;
        };
        let purpose = run.purpose;
        match run.stream.next() {
            Some(token) => {
                let at = run.next_completion();
                run.issued += 1;
                if !token.is_control() {
                    match purpose {
                        Purpose::Think if self.think.pending.is_empty() => {
                            self.think.pending_start = self.clock;
                            let index = self.think.handed.len() + 1;
                            let brain = self.think_brain();
                            self.emit(EventPayload::GenStart {
                                brain,
                                segment: SegmentRef::think(index),
                            });
                        }
                        Purpose::Respond { .. } if self.response.open.is_none() => self.open_response_segment(),
                        _ => {}
                    }
                }
                self.agenda.push(at, worker.actor(), Wake::Token { worker, token });
            }
            None => {
                let completion = run
                    .stream
                    .completion()
                    .cloned()
                    .expect("exhausted stream records a completion");
                self.on_run_end(worker, purpose, completion);
            }
        }
    }

    fn on_run_end(&mut self, worker: Worker, purpose: Purpose, completion: Completion) {
        match (purpose, completion) {
            (_, Completion::BackendError(e)) => self.abort(worker, purpose, e),
            (Purpose::Think, Completion::Budget) => {
                *self.run_slot(worker) = None;
                if self.think.produced >= self.policy.max_think_tokens {
                    self.force_close(worker);
                } else {
                    self.after_think_run(worker);
                }
            }
            (Purpose::Respond { free_running }, Completion::Budget) => self.after_response_run(free_running),
            (_, Completion::StopToken) => {
                // stop tokens are handled when they complete
                *self.run_slot(worker) = None;
            }
        }
    }

    fn on_token(&mut self, worker: Worker, token: Token) {
        let purpose = self
            .run_slot(worker)
            .as_ref()
            .map(|r| r.purpose)
            .expect("token wake-up for an idle worker");
        match purpose {
            Purpose::Think => self.on_think_token(worker, token),
            Purpose::Respond { .. } => self.on_response_token(token),
        }
    }

    fn abort(&mut self, worker: Worker, purpose: Purpose, error: BackendError) {
        let brain = match (worker, purpose) {
            (Worker::Formulation, _) => Brain::Formulation,
            (Worker::Articulation, Purpose::Think) => self.think_brain(),
            (Worker::Articulation, _) => Brain::Articulation,
        };
        self.notes.push(Note::BackendFailure {
            time: self.clock,
            brain,
            message: error.message,
            retriable: error.retriable,
        });
        self.aborted = true;
        self.agenda.clear();
        self.formulation_run = None;
        self.articulation_run = None;
        self.blocked = None;
        if !self.think.pending.is_empty() {
            self.hand_off(false);
        }
        self.close_response_segment();
        self.response.done = true;
        if let Some(p) = self.playback.playing.take() {
            self.emit(EventPayload::PlaybackEnd {
                response_index: p.index,
            });
        }
        self.playback.next = self.response.segments.len();
    }

    // ---- playback -------------------------------------------------------

    fn try_start_playback(&mut self) {
        if self.aborted || self.playback.playing.is_some() {
            return;
        }
        let idx = self.playback.next;
        let Some(meta) = self.response.meta.get(idx).copied() else {
            return;
        };
        if !meta.available {
            return;
        }
        let index = idx + 1;
        if let Some(last_end) = self.playback.last_end {
            let gap = self.clock - last_end;
            if gap > GAP_EPSILON && meta.waited_on_think {
                self.emit(EventPayload::Stall {
                    start: last_end,
                    duration: gap,
                });
            }
        }
        self.emit(EventPayload::PlaybackStart { response_index: index });
        self.playback.playing = Some(PlayingSegment {
            index,
            start: self.clock,
            end_scheduled: false,
        });
        if meta.complete {
            self.schedule_playback_end();
        }
    }

    /// Audio plays for its duration but cannot end before it is generated.
    fn schedule_playback_end(&mut self) {
        let playing = self.playback.playing.as_mut().expect("nothing is playing");
        let seg = &self.response.segments[playing.index - 1];
        let duration = seg.count_kind(TokenKind::Audio) as f64 * self.rates.audio_token_seconds;
        let end = (playing.start + duration).max(self.clock);
        playing.end_scheduled = true;
        self.agenda.push(end, Actor::Playback, Wake::PlaybackDone);
    }

    fn on_playback_done(&mut self) {
        let playing = self.playback.playing.take().expect("playback end without playback");
        self.emit(EventPayload::PlaybackEnd {
            response_index: playing.index,
        });
        self.playback.last_end = Some(self.clock);
        self.playback.next += 1;
        self.try_start_playback();
    }

    // ---- termination ----------------------------------------------------

    fn finish_if_idle(&mut self) {
        if self.finished {
            return;
        }
        if self.aborted {
            self.agenda.clear();
            self.finish();
            return;
        }
        if !self.agenda.is_empty() {
            return;
        }
        assert!(
            self.blocked.is_none() && self.formulation_run.is_none() && self.articulation_run.is_none(),
            "scheduler deadlock at t={}",
            self.clock
        );
        assert!(
            self.response.done || self.aborted,
            "turn went idle before the response finished"
        );
        assert!(
            self.playback.playing.is_none() && self.playback.next == self.response.segments.len(),
            "turn went idle with unplayed audio"
        );
        self.finish();
    }

    fn finish(&mut self) {
        self.emit(EventPayload::TurnEnd);
        self.finished = true;
    }
}
