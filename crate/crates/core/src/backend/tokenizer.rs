//! Mapping between the text of a chat endpoint and local tokens.

use crate::model::{Token, TokenKind};

pub trait TokenizerShim: Send + Sync {
    /// Encodes generated text into text tokens.
    fn encode(&self, text: &str) -> Vec<Token>;

    /// Renders a prompt as text. Audio tokens have no textual form and are
    /// skipped.
    fn render(&self, prompt: &[Token]) -> String;
}

/// One text token per UTF-8 byte.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteShim;

impl TokenizerShim for ByteShim {
    fn encode(&self, text: &str) -> Vec<Token> {
        text.bytes()
            .map(|b| Token::content_wrapping(b as u32, TokenKind::Text))
            .collect()
    }

    fn render(&self, prompt: &[Token]) -> String {
        let mut bytes = Vec::new();
        for t in prompt {
            match t.kind() {
                TokenKind::Text => bytes.push((t.id() & 0xFF) as u8),
                TokenKind::Audio => {}
                TokenKind::ThinkOpen => bytes.extend_from_slice(b"<think>"),
                TokenKind::ThinkClose => bytes.extend_from_slice(b"</think>"),
                TokenKind::EndOfResponse => {}
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

/// Projects a text-only token stream onto the ta layout by inserting
/// positional audio tokens after every `text_per_chunk` text tokens.
#[derive(Debug, Clone)]
pub struct TaProjector {
    text_per_chunk: usize,
    audio_per_chunk: usize,
    position: usize,
    text_in_chunk: usize,
}

impl TaProjector {
    /// `position` is the number of response tokens already in the prompt.
    pub fn new(text_per_chunk: usize, audio_per_chunk: usize, position: usize) -> Self {
        TaProjector {
            text_per_chunk: text_per_chunk.max(1),
            audio_per_chunk,
            position,
            text_in_chunk: 0,
        }
    }

    pub fn push(&mut self, text: Token, out: &mut Vec<Token>) {
        out.push(text);
        self.position += 1;
        self.text_in_chunk += 1;
        if self.text_in_chunk == self.text_per_chunk {
            self.text_in_chunk = 0;
            for _ in 0..self.audio_per_chunk {
                out.push(Token::content_wrapping(self.position as u32, TokenKind::Audio));
                self.position += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_shim_round_trip() {
        let shim = ByteShim;
        let mut prompt = vec![Token::audio(3).unwrap(), Token::THINK_OPEN];
        prompt.extend(shim.encode("héllo"));
        prompt.push(Token::THINK_CLOSE);
        assert_eq!(shim.render(&prompt), "<think>héllo</think>");
    }

    #[test]
    fn projector_builds_ta4() {
        let mut p = TaProjector::new(1, 4, 0);
        let mut out = Vec::new();
        for t in ByteShim.encode("abcd") {
            p.push(t, &mut out);
        }
        assert_eq!(out.len(), 20);
        let text = out.iter().filter(|t| t.kind() == TokenKind::Text).count();
        assert_eq!(text, 4);
        assert_eq!(out[0].kind(), TokenKind::Text);
        assert!(out[1..5].iter().all(|t| t.kind() == TokenKind::Audio));
    }
}
