//! Server-sent events framing and chat-completion chunk decoding.

use std::io::BufRead;

use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SseEvent {
    pub event: Option<String>,
    pub data: String,
}

/// Reads SSE events from a line-oriented source.
///
/// Multi-line `data:` fields are joined with `\n`; comment lines and unknown
/// fields are ignored. A trailing event without a blank line is still emitted.
pub struct SseReader<R> {
    inner: R,
    line: String,
    done: bool,
}

impl<R: BufRead> SseReader<R> {
    pub fn new(inner: R) -> Self {
        SseReader {
            inner,
            line: String::new(),
            done: false,
        }
    }
}

impl<R: BufRead> Iterator for SseReader<R> {
    type Item = std::io::Result<SseEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut event = SseEvent::default();
        let mut has_data = false;
        loop {
            self.line.clear();
            match self.inner.read_line(&mut self.line) {
                Ok(0) => {
                    self.done = true;
                    return has_data.then_some(Ok(event));
                }
                Ok(_) => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
            let line = self.line.trim_end_matches(['\r', '\n']);
            if line.is_empty() {
                if has_data {
                    return Some(Ok(event));
                }
                continue;
            }
            if line.starts_with(':') {
                continue;
            }
            let (field, value) = match line.split_once(':') {
                Some((f, v)) => (f, v.strip_prefix(' ').unwrap_or(v)),
                None => (line, ""),
            };
            match field {
                "data" => {
                    if has_data {
                        event.data.push('\n');
                    }
                    event.data.push_str(value);
                    has_data = true;
                }
                "event" => event.event = Some(value.to_string()),
                _ => {}
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChatChunk {
    Delta(String),
    Done,
    Error(String),
}

/// Decodes one `data:` payload of a streaming chat completion.
pub fn decode_chat_chunk(data: &str) -> ChatChunk {
    let data = data.trim();
    if data == "[DONE]" {
        return ChatChunk::Done;
    }
    let value: Value = match serde_json::from_str(data) {
        Ok(v) => v,
        Err(e) => return ChatChunk::Error(format!("undecodable stream chunk: {e}")),
    };
    if let Some(err) = value.get("error") {
        let msg = err
            .get("message")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| err.to_string());
        return ChatChunk::Error(msg);
    }
    let choice = value.get("choices").and_then(|c| c.get(0));
    let text = choice
        .and_then(|c| c.get("delta"))
        .and_then(|d| d.get("content"))
        .or_else(|| choice.and_then(|c| c.get("text")))
        .and_then(Value::as_str)
        .unwrap_or("");
    ChatChunk::Delta(text.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_events() {
        let body = ": keepalive\n\ndata: {\"a\":1}\n\nevent: x\ndata: l1\ndata: l2\n\ndata: tail";
        let events: Vec<_> = SseReader::new(body.as_bytes()).map(Result::unwrap).collect();
        assert_eq!(events.len(), 3);
        assert_eq!(events[0].data, "{\"a\":1}");
        assert_eq!(events[1].event.as_deref(), Some("x"));
        assert_eq!(events[1].data, "l1\nl2");
        assert_eq!(events[2].data, "tail");
    }

    #[test]
    fn crlf_lines() {
        let body = "data: hi\r\n\r\n";
        let events: Vec<_> = SseReader::new(body.as_bytes()).map(Result::unwrap).collect();
        assert_eq!(events[0].data, "hi");
    }

    #[test]
    fn decodes_chunks() {
        assert_eq!(
            decode_chat_chunk(r#"{"choices":[{"delta":{"content":"Hel"}}]}"#),
            ChatChunk::Delta("Hel".into())
        );
        assert_eq!(
            decode_chat_chunk(r#"{"choices":[{"delta":{"role":"assistant"}}]}"#),
            ChatChunk::Delta(String::new())
        );
        assert_eq!(decode_chat_chunk("[DONE]"), ChatChunk::Done);
        assert_eq!(
            decode_chat_chunk(r#"{"error":{"message":"overloaded"}}"#),
            ChatChunk::Error("overloaded".into())
        );
        assert!(matches!(decode_chat_chunk("{nope"), ChatChunk::Error(_)));
    }
}
