use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{prompt_phase, BackendError, Generator, PromptPhase, RawTokens, StopCondition};
use crate::model::Token;

/// Number of think and response segments visible in an articulation prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContinuationKey {
    pub think_segments: usize,
    pub response_segments: usize,
}

impl std::fmt::Display for ContinuationKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.think_segments, self.response_segments)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyedContinuation {
    #[serde(flatten)]
    pub key: ContinuationKey,
    pub tokens: Vec<Token>,
}

/// Response continuations keyed by how many segments the prompt shows.
///
/// Segment counts are derived from token counts with the segment sizes in
/// effect for the run, so a partial final think segment counts as one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticulationScript {
    pub think_segment_tokens: usize,
    pub response_segment_tokens: usize,
    pub continuations: Vec<KeyedContinuation>,
}

impl ArticulationScript {
    pub fn key_for(&self, think_len: usize, response_len: usize) -> ContinuationKey {
        ContinuationKey {
            think_segments: think_len.div_ceil(self.think_segment_tokens.max(1)),
            response_segments: response_len.div_ceil(self.response_segment_tokens.max(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptSpec {
    pub script_id: String,
    /// Full chain of thought, without the closing marker.
    pub cot: Vec<Token>,
    #[serde(default)]
    pub articulation: Option<ArticulationScript>,
}

type ContinuationTable = BTreeMap<ContinuationKey, Arc<[Token]>>;

/// Replays a fixed script. Pure in the prompt: the thinking position is read
/// from the prompt, and articulation continuations are looked up by key.
#[derive(Debug)]
pub struct ScriptedGenerator {
    id: String,
    cot: Arc<[Token]>,
    continuations: Option<(ArticulationScript, ContinuationTable)>,
}

impl ScriptedGenerator {
    pub fn new(spec: ScriptSpec) -> Self {
        let continuations = spec.articulation.map(|script| {
            let map = script
                .continuations
                .iter()
                .map(|c| (c.key, Arc::from(c.tokens.as_slice())))
                .collect();
            (script, map)
        });
        ScriptedGenerator {
            id: spec.script_id,
            cot: Arc::from(spec.cot),
            continuations,
        }
    }
}

struct SliceIter {
    tokens: Arc<[Token]>,
    pos: usize,
}

impl Iterator for SliceIter {
    type Item = Result<Token, BackendError>;

    fn next(&mut self) -> Option<Self::Item> {
        let t = self.tokens.get(self.pos).copied()?;
        self.pos += 1;
        Some(Ok(t))
    }
}

impl Generator for ScriptedGenerator {
    fn raw_stream(&self, prompt: &[Token], _stop: &StopCondition) -> Result<RawTokens, BackendError> {
        match prompt_phase(prompt)? {
            PromptPhase::Thinking { prior_think } => {
                if prior_think.len() > self.cot.len() || self.cot[..prior_think.len()] != *prior_think {
                    return Err(BackendError::fatal(format!(
                        "script {}: prompt thinking diverges from the scripted chain of thought",
                        self.id
                    )));
                }
                let rest = SliceIter {
                    tokens: self.cot.clone(),
                    pos: prior_think.len(),
                };
                Ok(Box::new(rest.chain(std::iter::once(Ok(Token::THINK_CLOSE)))))
            }
            PromptPhase::Responding { think, response } => {
                let (script, map) = self.continuations.as_ref().ok_or_else(|| {
                    BackendError::fatal(format!("script {} has no articulation continuations", self.id))
                })?;
                let key = script.key_for(think.len(), response.len());
                let tokens = map.get(&key).ok_or_else(|| {
                    BackendError::fatal(format!(
                        "script {}: missing articulation continuation for key {key}",
                        self.id
                    ))
                })?;
                Ok(Box::new(SliceIter {
                    tokens: tokens.clone(),
                    pos: 0,
                }))
            }
        }
    }

    fn describe(&self) -> String {
        format!("scripted({})", self.id)
    }
}
