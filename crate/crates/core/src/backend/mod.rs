//! Token generators standing in for the shared language model behind both
//! brains.
//!
//! A [`Generator`] maps a prompt to a raw token source. [`TokenStream`] wraps
//! that source and applies the [`StopCondition`] uniformly, so every backend
//! terminates the same way and reports a [`Completion`].

mod mock;
#[cfg(feature = "remote")]
mod remote;
mod scripted;
pub mod sse;
pub mod tokenizer;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Token, TokenKind};

pub use mock::{MockGenerator, MockSpec};
#[cfg(feature = "remote")]
pub use remote::RemoteGenerator;
pub use scripted::{ArticulationScript, ContinuationKey, KeyedContinuation, ScriptSpec, ScriptedGenerator};

/// Environment variable holding the bearer token for remote endpoints.
pub const REMOTE_TOKEN_ENV: &str = "MINDPACE_API_KEY";

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[error("{message}")]
pub struct BackendError {
    pub message: String,
    pub retriable: bool,
}

impl BackendError {
    pub fn fatal(message: impl Into<String>) -> Self {
        BackendError {
            message: message.into(),
            retriable: false,
        }
    }

    pub fn retriable(message: impl Into<String>) -> Self {
        BackendError {
            message: message.into(),
            retriable: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopCondition {
    pub max_tokens: usize,
    pub stop_kinds: BTreeSet<TokenKind>,
}

impl StopCondition {
    pub fn new(max_tokens: usize, stop_kinds: impl IntoIterator<Item = TokenKind>) -> Self {
        assert!(max_tokens >= 1, "max_tokens must be at least 1");
        StopCondition {
            max_tokens,
            stop_kinds: stop_kinds.into_iter().collect(),
        }
    }

    pub fn think(max_tokens: usize) -> Self {
        Self::new(max_tokens, [TokenKind::ThinkClose])
    }

    pub fn response(max_tokens: usize) -> Self {
        Self::new(max_tokens, [TokenKind::EndOfResponse])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum Completion {
    StopToken,
    Budget,
    BackendError(BackendError),
}

pub type RawTokens = Box<dyn Iterator<Item = Result<Token, BackendError>> + Send>;

/// Something that can continue a prompt one token at a time.
pub trait Generator: Send + Sync {
    /// Returns the raw continuation of `prompt`. The source may run past the
    /// stop condition; [`TokenStream`] cuts it.
    fn raw_stream(&self, prompt: &[Token], stop: &StopCondition) -> Result<RawTokens, BackendError>;

    fn describe(&self) -> String;
}

/// Opens a stopping token stream on `generator`.
pub fn generate(generator: &dyn Generator, prompt: &[Token], stop: &StopCondition) -> TokenStream {
    if prompt.is_empty() {
        return TokenStream::failed(BackendError::fatal("prompt must not be empty"));
    }
    match generator.raw_stream(prompt, stop) {
        Ok(raw) => TokenStream::new(raw, stop.clone()),
        Err(e) => TokenStream::failed(e),
    }
}

/// Incremental token stream with a uniform stop rule.
///
/// Yields tokens until a stop-kind token (which is yielded) or `max_tokens`
/// tokens have been produced. Once exhausted, [`TokenStream::completion`]
/// tells why.
pub struct TokenStream {
    raw: Option<RawTokens>,
    stop: StopCondition,
    emitted: usize,
    completion: Option<Completion>,
}

impl TokenStream {
    fn new(raw: RawTokens, stop: StopCondition) -> Self {
        TokenStream {
            raw: Some(raw),
            stop,
            emitted: 0,
            completion: None,
        }
    }

    fn failed(error: BackendError) -> Self {
        TokenStream {
            raw: None,
            stop: StopCondition::new(1, []),
            emitted: 0,
            completion: Some(Completion::BackendError(error)),
        }
    }

    pub fn completion(&self) -> Option<&Completion> {
        self.completion.as_ref()
    }

    pub fn emitted(&self) -> usize {
        self.emitted
    }

    /// Drains the stream, returning all tokens and the completion reason.
    pub fn collect_all(mut self) -> (Vec<Token>, Completion) {
        let tokens: Vec<Token> = self.by_ref().collect();
        let completion = self
            .completion
            .expect("exhausted stream always records a completion");
        (tokens, completion)
    }

    fn finish(&mut self, completion: Completion) -> Option<Token> {
        self.raw = None;
        self.completion = Some(completion);
        None
    }
}

impl Iterator for TokenStream {
    type Item = Token;

    fn next(&mut self) -> Option<Token> {
        if self.completion.is_some() {
            return None;
        }
        if self.emitted >= self.stop.max_tokens {
            return self.finish(Completion::Budget);
        }
        let raw = self.raw.as_mut()?;
        match raw.next() {
            Some(Ok(token)) => {
                self.emitted += 1;
                if self.stop.stop_kinds.contains(&token.kind()) {
                    self.raw = None;
                    self.completion = Some(Completion::StopToken);
                }
                Some(token)
            }
            Some(Err(e)) => self.finish(Completion::BackendError(e)),
            None => self.finish(Completion::BackendError(BackendError::fatal(
                "generator ran out of tokens before a stop token",
            ))),
        }
    }
}

impl fmt::Debug for TokenStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TokenStream")
            .field("emitted", &self.emitted)
            .field("completion", &self.completion)
            .finish()
    }
}

/// Declarative description of a generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend_kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Scripted(ScriptSpec),
    Mock(MockSpec),
    Remote(RemoteSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteSpec {
    /// Full URL of the streaming chat-completion endpoint.
    pub endpoint: String,
    pub model: String,
    /// Extra request fields passed through verbatim (temperature etc.).
    #[serde(default)]
    pub extra: serde_json::Map<String, serde_json::Value>,
    #[serde(default = "default_chunk")]
    pub text_per_chunk: usize,
    #[serde(default = "default_audio")]
    pub audio_per_chunk: usize,
}

fn default_chunk() -> usize {
    1
}

fn default_audio() -> usize {
    4
}

impl GeneratorSpec {
    /// Resolves the spec into a live generator.
    pub fn build(&self) -> Result<Arc<dyn Generator>, BackendError> {
        match self {
            GeneratorSpec::Scripted(s) => Ok(Arc::new(ScriptedGenerator::new(s.clone()))),
            GeneratorSpec::Mock(m) => Ok(Arc::new(MockGenerator::new(m.clone()))),
            GeneratorSpec::Remote(r) => build_remote(r),
        }
    }
}

#[cfg(feature = "remote")]
fn build_remote(spec: &RemoteSpec) -> Result<Arc<dyn Generator>, BackendError> {
    let token = std::env::var(REMOTE_TOKEN_ENV).ok();
    Ok(Arc::new(RemoteGenerator::new(spec.clone(), token)?))
}

#[cfg(not(feature = "remote"))]
fn build_remote(_spec: &RemoteSpec) -> Result<Arc<dyn Generator>, BackendError> {
    Err(BackendError::fatal(
        "remote backend support was not compiled in (enable the `remote` feature)",
    ))
}

/// One-shot convenience: build `spec` and open a stream on it.
pub fn generate_stream(
    spec: &GeneratorSpec,
    prompt: &[Token],
    stop: &StopCondition,
) -> Result<TokenStream, BackendError> {
    let generator = spec.build()?;
    Ok(generate(generator.as_ref(), prompt, stop))
}

/// Generators for the formulation and articulation brains.
#[derive(Clone)]
pub struct BrainPair {
    pub formulation: Arc<dyn Generator>,
    pub articulation: Arc<dyn Generator>,
}

impl BrainPair {
    pub fn shared(generator: Arc<dyn Generator>) -> Self {
        BrainPair {
            formulation: generator.clone(),
            articulation: generator,
        }
    }

    pub fn from_specs(
        formulation: &GeneratorSpec,
        articulation: &GeneratorSpec,
    ) -> Result<Self, BackendError> {
        let f = formulation.build()?;
        let a = if formulation == articulation {
            f.clone()
        } else {
            articulation.build()?
        };
        Ok(BrainPair {
            formulation: f,
            articulation: a,
        })
    }
}

impl fmt::Debug for BrainPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BrainPair")
            .field("formulation", &self.formulation.describe())
            .field("articulation", &self.articulation.describe())
            .finish()
    }
}

/// Where a prompt stands: inside an open think block, or after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PromptPhase<'a> {
    /// `[input…, <think>, prior_think…]`
    Thinking { prior_think: &'a [Token] },
    /// `[input…, <think>, think…, </think>, response…]`
    Responding {
        think: &'a [Token],
        response: &'a [Token],
    },
}

pub(crate) fn prompt_phase(prompt: &[Token]) -> Result<PromptPhase<'_>, BackendError> {
    let open = prompt
        .iter()
        .position(|t| t.kind() == TokenKind::ThinkOpen)
        .ok_or_else(|| BackendError::fatal("prompt has no <think> marker"))?;
    let rest = &prompt[open + 1..];
    match rest.iter().position(|t| t.kind() == TokenKind::ThinkClose) {
        None => Ok(PromptPhase::Thinking { prior_think: rest }),
        Some(close) => Ok(PromptPhase::Responding {
            think: &rest[..close],
            response: &rest[close + 1..],
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Endless;

    impl Generator for Endless {
        fn raw_stream(&self, _: &[Token], _: &StopCondition) -> Result<RawTokens, BackendError> {
            Ok(Box::new((0..).map(|i| Ok(Token::text(i).unwrap()))))
        }

        fn describe(&self) -> String {
            "endless".into()
        }
    }

    struct Short;

    impl Generator for Short {
        fn raw_stream(&self, _: &[Token], _: &StopCondition) -> Result<RawTokens, BackendError> {
            Ok(Box::new(
                vec![Ok(Token::text(1).unwrap()), Ok(Token::THINK_CLOSE)].into_iter(),
            ))
        }

        fn describe(&self) -> String {
            "short".into()
        }
    }

    #[test]
    fn budget_of_one_yields_one_token() {
        let prompt = [Token::THINK_OPEN];
        let (tokens, completion) = generate(&Endless, &prompt, &StopCondition::think(1)).collect_all();
        assert_eq!(tokens.len(), 1);
        assert_eq!(completion, Completion::Budget);
    }

    #[test]
    fn stop_token_is_included() {
        let prompt = [Token::THINK_OPEN];
        let (tokens, completion) = generate(&Short, &prompt, &StopCondition::think(10)).collect_all();
        assert_eq!(tokens, vec![Token::text(1).unwrap(), Token::THINK_CLOSE]);
        assert_eq!(completion, Completion::StopToken);
    }

    #[test]
    fn exhausted_source_is_a_fatal_error() {
        let prompt = [Token::THINK_OPEN];
        let (_, completion) = generate(&Short, &prompt, &StopCondition::response(10)).collect_all();
        match completion {
            Completion::BackendError(e) => assert!(!e.retriable),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_prompt_is_rejected() {
        let (tokens, completion) = generate(&Endless, &[], &StopCondition::think(4)).collect_all();
        assert!(tokens.is_empty());
        assert!(matches!(completion, Completion::BackendError(_)));
    }

    #[test]
    fn prompt_phases() {
        let x = Token::audio(3).unwrap();
        let t = Token::text(5).unwrap();
        let r = Token::audio(9).unwrap();
        assert_eq!(
            prompt_phase(&[x, Token::THINK_OPEN, t]).unwrap(),
            PromptPhase::Thinking { prior_think: &[t] }
        );
        assert_eq!(
            prompt_phase(&[x, Token::THINK_OPEN, t, Token::THINK_CLOSE, r]).unwrap(),
            PromptPhase::Responding {
                think: &[t],
                response: &[r]
            }
        );
        assert!(prompt_phase(&[x]).is_err());
    }
}
