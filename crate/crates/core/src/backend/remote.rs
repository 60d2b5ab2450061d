use std::io::BufReader;
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};

use super::sse::{decode_chat_chunk, ChatChunk, SseReader};
use super::tokenizer::{ByteShim, TaProjector, TokenizerShim};
use super::{prompt_phase, BackendError, Generator, PromptPhase, RawTokens, RemoteSpec, StopCondition};
use crate::model::Token;

/// Streaming chat-completion client.
///
/// Each call runs its request on a worker thread that feeds decoded tokens
/// through a bounded channel, in order. Dropping the stream closes the
/// channel and the worker stops reading.
pub struct RemoteGenerator {
    spec: RemoteSpec,
    token: Option<String>,
    client: reqwest::blocking::Client,
    shim: Arc<dyn TokenizerShim>,
}

impl RemoteGenerator {
    pub fn new(spec: RemoteSpec, token: Option<String>) -> Result<Self, BackendError> {
        if spec.endpoint.is_empty() {
            return Err(BackendError::fatal("remote backend needs an endpoint URL"));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(None)
            .build()
            .map_err(|e| BackendError::fatal(format!("cannot build HTTP client: {e}")))?;
        Ok(RemoteGenerator {
            spec,
            token,
            client,
            shim: Arc::new(ByteShim),
        })
    }

    pub fn with_shim(mut self, shim: Arc<dyn TokenizerShim>) -> Self {
        self.shim = shim;
        self
    }
}

enum Mode {
    Thinking,
    Responding(TaProjector),
}

struct Job {
    client: reqwest::blocking::Client,
    endpoint: String,
    token: Option<String>,
    body: Value,
    shim: Arc<dyn TokenizerShim>,
    mode: Mode,
    tx: SyncSender<Result<Token, BackendError>>,
}

fn classify_status(status: reqwest::StatusCode, body: &str) -> BackendError {
    let msg = format!("endpoint returned {status}: {}", body.trim());
    if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
        BackendError::retriable(msg)
    } else {
        BackendError::fatal(msg)
    }
}

impl Job {
    fn run(mut self) {
        if let Err(e) = self.stream() {
            let _ = self.tx.send(Err(e));
        }
    }

    /// Returns `Ok` when the stream finished or the consumer hung up.
    fn stream(&mut self) -> Result<(), BackendError> {
        let body = serde_json::to_vec(&self.body).map_err(|e| BackendError::fatal(format!("cannot encode request: {e}")))?;
        let mut req = self
            .client
            .post(&self.endpoint)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| BackendError::retriable(format!("transport failure: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(classify_status(status, &body));
        }
        let mut pending_text = String::new();
        for event in SseReader::new(BufReader::new(resp)) {
            let event = event.map_err(|e| BackendError::retriable(format!("stream read failed: {e}")))?;
            match decode_chat_chunk(&event.data) {
                ChatChunk::Delta(text) => {
                    if !self.emit_text(&mut pending_text, &text) {
                        return Ok(());
                    }
                }
                ChatChunk::Done => break,
                ChatChunk::Error(msg) => return Err(BackendError::retriable(msg)),
            }
        }
        let closing = match self.mode {
            Mode::Thinking => Token::THINK_CLOSE,
            Mode::Responding(_) => Token::END_OF_RESPONSE,
        };
        if !pending_text.is_empty() {
            let rest = std::mem::take(&mut pending_text);
            if !self.send_text(&rest) {
                return Ok(());
            }
        }
        let _ = self.tx.send(Ok(closing));
        Ok(())
    }

    /// Buffers a possible partial `</think>` so the marker is detected across
    /// chunk boundaries. Returns false when reading should stop.
    fn emit_text(&mut self, pending: &mut String, text: &str) -> bool {
        pending.push_str(text);
        if let Mode::Thinking = self.mode {
            if let Some(at) = pending.find("</think>") {
                let before = pending[..at].to_string();
                pending.clear();
                if self.send_text(&before) {
                    let _ = self.tx.send(Ok(Token::THINK_CLOSE));
                }
                // thinking is over; nothing after the marker belongs to it
                return false;
            }
            let keep = partial_marker_suffix(pending, "</think>");
            let flush_to = pending.len() - keep;
            let flush: String = pending[..flush_to].to_string();
            pending.drain(..flush_to);
            return self.send_text(&flush);
        }
        let flush = std::mem::take(pending);
        self.send_text(&flush)
    }

    fn send_text(&mut self, text: &str) -> bool {
        let mut out = Vec::new();
        for t in self.shim.encode(text) {
            match &mut self.mode {
                Mode::Thinking => out.push(t),
                Mode::Responding(proj) => proj.push(t, &mut out),
            }
        }
        out.into_iter().all(|t| self.tx.send(Ok(t)).is_ok())
    }
}

/// Length of the longest suffix of `s` that is a proper prefix of `marker`.
fn partial_marker_suffix(s: &str, marker: &str) -> usize {
    (1..marker.len())
        .rev()
        .find(|&n| s.len() >= n && s.is_char_boundary(s.len() - n) && marker.starts_with(&s[s.len() - n..]))
        .unwrap_or(0)
}

struct ChannelIter(Receiver<Result<Token, BackendError>>);

impl Iterator for ChannelIter {
    type Item = Result<Token, BackendError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.0.recv().ok()
    }
}

impl Generator for RemoteGenerator {
    fn raw_stream(&self, prompt: &[Token], stop: &StopCondition) -> Result<RawTokens, BackendError> {
        let mode = match prompt_phase(prompt)? {
            PromptPhase::Thinking { .. } => Mode::Thinking,
            PromptPhase::Responding { response, .. } => Mode::Responding(TaProjector::new(
                self.spec.text_per_chunk,
                self.spec.audio_per_chunk,
                response.len(),
            )),
        };
        let mut body = json!({
            "model": self.spec.model,
            "stream": true,
            "max_tokens": stop.max_tokens,
            "messages": [{"role": "user", "content": self.shim.render(prompt)}],
        });
        if let Value::Object(map) = &mut body {
            for (k, v) in &self.spec.extra {
                map.insert(k.clone(), v.clone());
            }
        }
        let (tx, rx) = sync_channel(256);
        let job = Job {
            client: self.client.clone(),
            endpoint: self.spec.endpoint.clone(),
            token: self.token.clone(),
            body,
            shim: self.shim.clone(),
            mode,
            tx,
        };
        thread::Builder::new()
            .name("remote-generate".into())
            .spawn(move || job.run())
            .map_err(|e| BackendError::fatal(format!("cannot spawn stream worker: {e}")))?;
        Ok(Box::new(ChannelIter(rx)))
    }

    fn describe(&self) -> String {
        format!("remote({} @ {})", self.spec.model, self.spec.endpoint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_suffix() {
        assert_eq!(partial_marker_suffix("abc</th", "</think>"), 4);
        assert_eq!(partial_marker_suffix("abc", "</think>"), 0);
        assert_eq!(partial_marker_suffix("x<", "</think>"), 1);
    }
}
