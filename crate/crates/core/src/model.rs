//! Domain types shared by the scheduler, the backends and the metrics.
//!
//! Tokens are opaque ids tagged with a [`TokenKind`]. Control tokens
//! (`<think>`, `</think>`, end-of-response) are singletons whose ids live in a
//! reserved range no content token can occupy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// First id of the reserved control range. Content ids must be below it.
pub const RESERVED_ID_BASE: u32 = 0xFFFF_FF00;
const THINK_OPEN_ID: u32 = RESERVED_ID_BASE;
const THINK_CLOSE_ID: u32 = RESERVED_ID_BASE + 1;
const END_OF_RESPONSE_ID: u32 = RESERVED_ID_BASE + 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("content token id {0} falls in the reserved control range")]
    ReservedId(u32),
    #[error("malformed token literal {0:?}")]
    BadTokenLiteral(String),
    #[error("response segment of {len} tokens is not a multiple of the {chunk}-token ta chunk")]
    MalformedResponseSegment { len: usize, chunk: usize },
    #[error("invalid segmentation policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid rate model: {0}")]
    InvalidRates(String),
    #[error("expected a {expected:?} segment, got {actual:?}")]
    WrongSegmentKind {
        expected: SegmentKind,
        actual: SegmentKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Text,
    Audio,
    ThinkOpen,
    ThinkClose,
    EndOfResponse,
}

impl TokenKind {
    pub fn is_control(self) -> bool {
        matches!(
            self,
            TokenKind::ThinkOpen | TokenKind::ThinkClose | TokenKind::EndOfResponse
        )
    }
}

/// A single generated or input token.
///
/// Serialized as a compact literal: `t:<id>`, `a:<id>`, `<think>`,
/// `</think>` or `<eor>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token {
    id: u32,
    kind: TokenKind,
}

impl Token {
    pub const THINK_OPEN: Token = Token {
        id: THINK_OPEN_ID,
        kind: TokenKind::ThinkOpen,
    };
    pub const THINK_CLOSE: Token = Token {
        id: THINK_CLOSE_ID,
        kind: TokenKind::ThinkClose,
    };
    pub const END_OF_RESPONSE: Token = Token {
        id: END_OF_RESPONSE_ID,
        kind: TokenKind::EndOfResponse,
    };

    pub fn text(id: u32) -> Result<Self, ModelError> {
        Self::content(id, TokenKind::Text)
    }

    pub fn audio(id: u32) -> Result<Self, ModelError> {
        Self::content(id, TokenKind::Audio)
    }

    fn content(id: u32, kind: TokenKind) -> Result<Self, ModelError> {
        if id >= RESERVED_ID_BASE {
            return Err(ModelError::ReservedId(id));
        }
        Ok(Token { id, kind })
    }

    /// Builds a content token, folding the id into the legal range.
    pub(crate) fn content_wrapping(id: u32, kind: TokenKind) -> Self {
        debug_assert!(!kind.is_control());
        Token {
            id: id % RESERVED_ID_BASE,
            kind,
        }
    }

    pub fn id(self) -> u32 {
        self.id
    }

    pub fn kind(self) -> TokenKind {
        self.kind
    }

    pub fn is_control(self) -> bool {
        self.kind.is_control()
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TokenKind::Text => write!(f, "t:{}", self.id),
            TokenKind::Audio => write!(f, "a:{}", self.id),
            TokenKind::ThinkOpen => f.write_str("<think>"),
            TokenKind::ThinkClose => f.write_str("</think>"),
            TokenKind::EndOfResponse => f.write_str("<eor>"),
        }
    }
}

impl FromStr for Token {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "<think>" => return Ok(Token::THINK_OPEN),
            "</think>" => return Ok(Token::THINK_CLOSE),
            "<eor>" => return Ok(Token::END_OF_RESPONSE),
            _ => {}
        }
        let bad = || ModelError::BadTokenLiteral(s.to_string());
        let (prefix, id) = s.split_once(':').ok_or_else(bad)?;
        let id: u32 = id.parse().map_err(|_| bad())?;
        match prefix {
            "t" => Token::text(id),
            "a" => Token::audio(id),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Token {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Token {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// User turn: speech tokens plus optional text instruction tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnInput {
    speech_tokens: Vec<Token>,
    #[serde(default)]
    text_tokens: Vec<Token>,
}

impl TurnInput {
    pub fn new(speech_tokens: Vec<Token>, text_tokens: Vec<Token>) -> Result<Self, String> {
        if speech_tokens.is_empty() {
            return Err("turn input needs at least one speech token".into());
        }
        if let Some(t) = speech_tokens.iter().find(|t| t.kind() != TokenKind::Audio) {
            return Err(format!("speech input holds non-audio token {t}"));
        }
        if let Some(t) = text_tokens.iter().find(|t| t.kind() != TokenKind::Text) {
            return Err(format!("text input holds non-text token {t}"));
        }
        Ok(TurnInput {
            speech_tokens,
            text_tokens,
        })
    }

    pub fn speech_tokens(&self) -> &[Token] {
        &self.speech_tokens
    }

    pub fn text_tokens(&self) -> &[Token] {
        &self.text_tokens
    }

    /// Speech tokens followed by text tokens, as they appear in every prompt.
    pub fn tokens(&self) -> impl Iterator<Item = Token> + '_ {
        self.speech_tokens
            .iter()
            .chain(self.text_tokens.iter())
            .copied()
    }

    pub fn len(&self) -> usize {
        self.speech_tokens.len() + self.text_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Think,
    Response,
}

/// A contiguous slice of the chain of thought or of the response.
///
/// Times are virtual seconds: `start_time` is when the first token began
/// generating and `end_time` when the last one completed. `token_seconds` is
/// the per-token generation time of the brain that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub index: usize,
    pub tokens: Vec<Token>,
    pub start_time: f64,
    pub end_time: f64,
    pub token_seconds: f64,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn count_kind(&self, kind: TokenKind) -> usize {
        self.tokens.iter().filter(|t| t.kind() == kind).count()
    }
}

/// Splits `tokens` into consecutive chunks of `size`; the last may be short.
///
/// Timing fields of the returned segments are zero.
///
/// # Panics
///
/// Panics if `size` is zero.
pub fn segment_stream(tokens: &[Token], size: usize, kind: SegmentKind) -> Vec<Segment> {
    assert!(size >= 1, "segment size must be at least 1");
    tokens
        .chunks(size)
        .enumerate()
        .map(|(i, chunk)| Segment {
            kind,
            index: i + 1,
            tokens: chunk.to_vec(),
            start_time: 0.0,
            end_time: 0.0,
            token_seconds: 0.0,
        })
        .collect()
}

/// Segment sizes, ta interleave format and generation caps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationPolicy {
    pub think_segment_tokens: usize,
    pub response_segment_tokens: usize,
    pub text_per_chunk: usize,
    pub audio_per_chunk: usize,
    pub max_think_tokens: usize,
    pub max_response_tokens: usize,
}

impl Default for SegmentationPolicy {
    fn default() -> Self {
        SegmentationPolicy {
            think_segment_tokens: 80,
            response_segment_tokens: 100,
            text_per_chunk: 1,
            audio_per_chunk: 4,
            max_think_tokens: 4096,
            max_response_tokens: 4096,
        }
    }
}

impl SegmentationPolicy {
    pub fn chunk_size(&self) -> usize {
        self.text_per_chunk + self.audio_per_chunk
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidPolicy(m.to_string()));
        if self.think_segment_tokens == 0 {
            return bad("think_segment_tokens must be positive");
        }
        if self.response_segment_tokens == 0 {
            return bad("response_segment_tokens must be positive");
        }
        if self.text_per_chunk == 0 {
            return bad("text_per_chunk must be positive");
        }
        if self.max_think_tokens == 0 || self.max_response_tokens == 0 {
            return bad("token caps must be positive");
        }
        if !self.response_segment_tokens.is_multiple_of(self.chunk_size()) {
            return Err(ModelError::InvalidPolicy(format!(
                "response_segment_tokens {} is not a multiple of the ta chunk size {}",
                self.response_segment_tokens,
                self.chunk_size()
            )));
        }
        Ok(())
    }

    /// Kind of the token at `position` (0-based) of a ta-formatted response.
    pub fn ta_kind_at(&self, position: usize) -> TokenKind {
        if position % self.chunk_size() < self.text_per_chunk {
            TokenKind::Text
        } else {
            TokenKind::Audio
        }
    }
}

/// Text and audio token counts of a ta-formatted response segment.
pub fn ta_interleave_counts(
    segment_tokens: usize,
    policy: &SegmentationPolicy,
) -> Result<(usize, usize), ModelError> {
    let chunk = policy.chunk_size();
    if segment_tokens == 0 || chunk == 0 || !segment_tokens.is_multiple_of(chunk) {
        return Err(ModelError::MalformedResponseSegment {
            len: segment_tokens,
            chunk,
        });
    }
    let chunks = segment_tokens / chunk;
    Ok((chunks * policy.text_per_chunk, chunks * policy.audio_per_chunk))
}

/// Generation speeds of the two brains and the playback model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    /// Formulation brain tokens per second.
    pub formulation_rate: f64,
    /// Articulation brain tokens per second.
    pub articulation_rate: f64,
    /// Playback seconds per audio token.
    pub audio_token_seconds: f64,
    /// Response tokens that must exist before a segment starts playing.
    pub tts_buffer_tokens: usize,
}

impl Default for RateModel {
    fn default() -> Self {
        RateModel {
            formulation_rate: 50.0,
            articulation_rate: 50.0,
            audio_token_seconds: 0.040,
            tts_buffer_tokens: 0,
        }
    }
}

impl RateModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("formulation_rate", self.formulation_rate),
            ("articulation_rate", self.articulation_rate),
            ("audio_token_seconds", self.audio_token_seconds),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(ModelError::InvalidRates(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn formulation_token_seconds(&self) -> f64 {
        1.0 / self.formulation_rate
    }

    pub fn articulation_token_seconds(&self) -> f64 {
        1.0 / self.articulation_rate
    }
}

/// The two cooperating generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Brain {
    Formulation,
    Articulation,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cot(n: usize) -> Vec<Token> {
        (0..n as u32).map(|i| Token::text(i).unwrap()).collect()
    }

    #[test]
    fn control_ids_are_reserved() {
        assert!(Token::text(RESERVED_ID_BASE).is_err());
        assert!(Token::audio(u32::MAX).is_err());
        for c in [Token::THINK_OPEN, Token::THINK_CLOSE, Token::END_OF_RESPONSE] {
            assert!(c.id() >= RESERVED_ID_BASE);
            assert!(c.is_control());
        }
    }

    #[test]
    fn token_literals_round_trip() {
        for t in [
            Token::text(7).unwrap(),
            Token::audio(0).unwrap(),
            Token::THINK_OPEN,
            Token::THINK_CLOSE,
            Token::END_OF_RESPONSE,
        ] {
            assert_eq!(t.to_string().parse::<Token>().unwrap(), t);
        }
        assert!("x:1".parse::<Token>().is_err());
        assert!("t:".parse::<Token>().is_err());
        assert!(format!("t:{}", RESERVED_ID_BASE).parse::<Token>().is_err());
    }

    #[test]
    fn segments_762_by_80() {
        let segs = segment_stream(&cot(762), 80, SegmentKind::Think);
        assert_eq!(segs.len(), 10);
        assert!(segs[..9].iter().all(|s| s.len() == 80));
        assert_eq!(segs[9].len(), 42);
        assert_eq!(segs[9].index, 10);
    }

    #[test]
    fn empty_stream_has_no_segments() {
        assert!(segment_stream(&[], 80, SegmentKind::Think).is_empty());
    }

    #[test]
    fn two_full_segments() {
        let tokens = cot(160);
        let segs = segment_stream(&tokens, 80, SegmentKind::Think);
        assert_eq!(segs.len(), 2);
        let joined: Vec<Token> = segs.iter().flat_map(|s| s.tokens.clone()).collect();
        assert_eq!(joined, tokens);
    }

    #[test]
    fn ta4_counts() {
        let p = SegmentationPolicy::default();
        assert_eq!(ta_interleave_counts(100, &p).unwrap(), (20, 80));
        assert_eq!(ta_interleave_counts(5, &p).unwrap(), (1, 4));
        assert!(matches!(
            ta_interleave_counts(7, &p),
            Err(ModelError::MalformedResponseSegment { len: 7, chunk: 5 })
        ));
    }

    #[test]
    fn ta4_counts_match_generated_stream() {
        let p = SegmentationPolicy::default();
        let kinds: Vec<TokenKind> = (0..300).map(|i| p.ta_kind_at(i)).collect();
        let text = kinds.iter().filter(|k| **k == TokenKind::Text).count();
        let audio = kinds.iter().filter(|k| **k == TokenKind::Audio).count();
        assert_eq!((text, audio), (60, 240));
        assert_eq!(ta_interleave_counts(300, &p).unwrap(), (text, audio));
    }

    #[test]
    fn policy_validation() {
        assert!(SegmentationPolicy::default().validate().is_ok());
        let p = SegmentationPolicy {
            response_segment_tokens: 99,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = SegmentationPolicy {
            think_segment_tokens: 0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn rate_validation() {
        assert!(RateModel::default().validate().is_ok());
        let r = RateModel {
            formulation_rate: f64::NAN,
            ..Default::default()
        };
        assert!(r.validate().is_err());
        let r = RateModel {
            articulation_rate: 0.0,
            ..Default::default()
        };
        assert!(r.validate().is_err());
    }

    #[test]
    fn turn_input_requires_speech() {
        assert!(TurnInput::new(vec![], vec![]).is_err());
        assert!(TurnInput::new(vec![Token::text(1).unwrap()], vec![]).is_err());
        let input = TurnInput::new(vec![Token::audio(1).unwrap()], vec![]).unwrap();
        assert_eq!(input.len(), 1);
    }

    proptest! {
        #[test]
        fn segment_conservation(len in 0usize..500, size in 1usize..120) {
            let tokens = cot(len);
            let segs = segment_stream(&tokens, size, SegmentKind::Think);
            let joined: Vec<Token> = segs.iter().flat_map(|s| s.tokens.iter().copied()).collect();
            prop_assert_eq!(joined, tokens);
            prop_assert_eq!(segs.len(), len.div_ceil(size));
            for (i, s) in segs.iter().enumerate() {
                prop_assert_eq!(s.index, i + 1);
                prop_assert!(!s.is_empty() && s.len() <= size);
            }
        }

        #[test]
        fn ta_accounting(text in 1usize..4, audio in 0usize..8, chunks in 1usize..60) {
            let p = SegmentationPolicy { text_per_chunk: text, audio_per_chunk: audio, ..Default::default() };
            let len = chunks * p.chunk_size();
            let (t, a) = ta_interleave_counts(len, &p).unwrap();
            prop_assert_eq!(t + a, len);
            prop_assert_eq!(t * audio, a * text);
        }
    }
}
