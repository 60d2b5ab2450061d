//! Prompt construction for both brains.
//!
//! The formulation brain sees the user turn and its own chain of thought so
//! far. The articulation brain sees the user turn, every think segment handed
//! to it wrapped in `<think>`/`</think>`, then its own earlier response
//! segments. The closing marker is always present, even while thinking is
//! still in progress, and an empty think block is kept rather than omitted.
//!
//! Because each new think segment lands *before* the response history, the
//! articulation prompt for step n+1 is not an extension of the one for step n.
//! Prompts are rebuilt from scratch at every step.

use crate::model::{Segment, SegmentKind, Token, TokenKind, TurnInput};

/// Everything the articulation brain is conditioned on at one step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub input: &'a TurnInput,
    pub think_segments: &'a [Segment],
    pub response_segments: &'a [Segment],
    pub think_closed: bool,
}

impl StepContext<'_> {
    /// Checks kinds and 1..k / 1..m index contiguity.
    pub fn check(&self) -> Result<(), String> {
        check_run(self.think_segments, SegmentKind::Think)?;
        check_run(self.response_segments, SegmentKind::Response)
    }
}

fn check_run(segments: &[Segment], kind: SegmentKind) -> Result<(), String> {
    for (i, s) in segments.iter().enumerate() {
        if s.kind != kind {
            return Err(format!("segment {} has kind {:?}, expected {kind:?}", s.index, s.kind));
        }
        if s.index != i + 1 {
            return Err(format!("{kind:?} segment at position {} has index {}", i + 1, s.index));
        }
    }
    Ok(())
}

/// `[input…, <think>, prior_think…]`
pub fn build_formulation_prompt(input: &TurnInput, prior_think: &[Token]) -> Vec<Token> {
    debug_assert!(prior_think.iter().all(|t| t.kind() != TokenKind::ThinkClose));
    let mut prompt = Vec::with_capacity(input.len() + 1 + prior_think.len());
    prompt.extend(input.tokens());
    prompt.push(Token::THINK_OPEN);
    prompt.extend_from_slice(prior_think);
    prompt
}

/// `[input…, <think>, T1…Tk, </think>, R1…Rm]`
pub fn build_articulation_prompt(ctx: &StepContext<'_>) -> Vec<Token> {
    debug_assert!(ctx.check().is_ok(), "{:?}", ctx.check());
    let think: usize = ctx.think_segments.iter().map(Segment::len).sum();
    let response: usize = ctx.response_segments.iter().map(Segment::len).sum();
    let mut prompt = Vec::with_capacity(ctx.input.len() + 2 + think + response);
    prompt.extend(ctx.input.tokens());
    prompt.push(Token::THINK_OPEN);
    for s in ctx.think_segments {
        prompt.extend_from_slice(&s.tokens);
    }
    prompt.push(Token::THINK_CLOSE);
    for s in ctx.response_segments {
        prompt.extend_from_slice(&s.tokens);
    }
    prompt
}
