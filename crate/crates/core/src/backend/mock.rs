use serde::{Deserialize, Serialize};

use super::{prompt_phase, BackendError, Generator, PromptPhase, RawTokens, StopCondition};
use crate::model::{Token, TokenKind};

/// Seeded synthetic language model.
///
/// Inside an open think block it continues a chain of thought of exactly
/// `cot_tokens` text tokens and then closes it. After the block it produces a
/// ta-formatted response of `response_tokens` tokens whose ids depend on the
/// visible thinking, then ends the response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockSpec {
    pub seed: u64,
    pub cot_tokens: usize,
    pub response_tokens: usize,
    #[serde(default = "one")]
    pub text_per_chunk: usize,
    #[serde(default = "four")]
    pub audio_per_chunk: usize,
}

fn one() -> usize {
    1
}

fn four() -> usize {
    4
}

impl MockSpec {
    pub fn new(seed: u64, cot_tokens: usize, response_tokens: usize) -> Self {
        MockSpec {
            seed,
            cot_tokens,
            response_tokens,
            text_per_chunk: 1,
            audio_per_chunk: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockGenerator {
    spec: MockSpec,
}

impl MockGenerator {
    pub fn new(spec: MockSpec) -> Self {
        MockGenerator { spec }
    }
}

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn hash_tokens(seed: u64, tokens: &[Token]) -> u64 {
    tokens.iter().fold(splitmix(seed), |h, t| {
        splitmix(h ^ ((t.id() as u64) << 8) ^ t.kind() as u64)
    })
}

impl Generator for MockGenerator {
    fn raw_stream(&self, prompt: &[Token], _stop: &StopCondition) -> Result<RawTokens, BackendError> {
        let open = prompt
            .iter()
            .position(|t| t.kind() == TokenKind::ThinkOpen)
            .unwrap_or(prompt.len());
        let input_hash = hash_tokens(self.spec.seed, &prompt[..open]);
        match prompt_phase(prompt)? {
            PromptPhase::Thinking { prior_think } => {
                let total = self.spec.cot_tokens;
                let start = prior_think.len().min(total);
                let tokens = (start..total)
                    .map(move |i| {
                        Token::content_wrapping(
                            splitmix(input_hash ^ (i as u64).wrapping_mul(0x1000_0001)) as u32,
                            TokenKind::Text,
                        )
                    })
                    .chain(std::iter::once(Token::THINK_CLOSE))
                    .map(Ok);
                Ok(Box::new(tokens))
            }
            PromptPhase::Responding { think, response } => {
                let think_hash = hash_tokens(input_hash, think);
                let total = self.spec.response_tokens;
                let chunk = (self.spec.text_per_chunk + self.spec.audio_per_chunk).max(1);
                let text_per_chunk = self.spec.text_per_chunk;
                let start = response.len().min(total);
                let tokens = (start..total)
                    .map(move |p| {
                        let kind = if p % chunk < text_per_chunk {
                            TokenKind::Text
                        } else {
                            TokenKind::Audio
                        };
                        let id = splitmix(think_hash ^ (p as u64).wrapping_mul(0x2000_0003)) as u32;
                        Token::content_wrapping(id, kind)
                    })
                    .chain(std::iter::once(Token::END_OF_RESPONSE))
                    .map(Ok);
                Ok(Box::new(tokens))
            }
        }
    }

    fn describe(&self) -> String {
        format!(
            "mock(seed={}, cot={}, response={})",
            self.spec.seed, self.spec.cot_tokens, self.spec.response_tokens
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{generate, Completion};
    use proptest::prelude::*;

    fn prompt() -> Vec<Token> {
        vec![Token::audio(11).unwrap(), Token::audio(12).unwrap(), Token::THINK_OPEN]
    }

    #[test]
    fn same_inputs_same_stream() {
        let g = MockGenerator::new(MockSpec::new(42, 100, 50));
        let stop = StopCondition::think(4096);
        let a = generate(&g, &prompt(), &stop).collect_all();
        let b = generate(&g, &prompt(), &stop).collect_all();
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 101);
        assert_eq!(a.1, Completion::StopToken);
    }

    #[test]
    fn seed_changes_content() {
        let stop = StopCondition::think(4096);
        let a = generate(&MockGenerator::new(MockSpec::new(1, 20, 5)), &prompt(), &stop).collect_all();
        let b = generate(&MockGenerator::new(MockSpec::new(2, 20, 5)), &prompt(), &stop).collect_all();
        assert_ne!(a.0, b.0);
    }

    #[test]
    fn response_follows_ta_layout_and_depends_on_think() {
        let g = MockGenerator::new(MockSpec::new(5, 20, 100));
        let stop = StopCondition::response(4096);
        let t = Token::text(1).unwrap();
        let mut p1 = prompt();
        p1.extend([t, Token::THINK_CLOSE]);
        let mut p2 = prompt();
        p2.extend([t, t, Token::THINK_CLOSE]);
        let (r1, c1) = generate(&g, &p1, &stop).collect_all();
        let (r2, _) = generate(&g, &p2, &stop).collect_all();
        assert_eq!(c1, Completion::StopToken);
        assert_eq!(r1.len(), 101);
        assert_eq!(*r1.last().unwrap(), Token::END_OF_RESPONSE);
        let text = r1.iter().filter(|t| t.kind() == TokenKind::Text).count();
        assert_eq!(text, 20);
        assert_ne!(r1, r2);
    }

    #[test]
    fn resumed_thinking_matches_one_shot() {
        let g = MockGenerator::new(MockSpec::new(9, 30, 5));
        let stop = StopCondition::think(4096);
        let (full, _) = generate(&g, &prompt(), &stop).collect_all();
        let mut resumed = prompt();
        resumed.extend_from_slice(&full[..12]);
        let (rest, _) = generate(&g, &resumed, &stop).collect_all();
        assert_eq!(&full[12..], &rest[..]);
    }

    proptest! {
        #[test]
        fn prefix_stability(seed in any::<u64>(), cot in 0usize..200, k in 1usize..250) {
            let g = MockGenerator::new(MockSpec::new(seed, cot, 10));
            let (full, _) = generate(&g, &prompt(), &StopCondition::think(4096)).collect_all();
            let (cut, completion) = generate(&g, &prompt(), &StopCondition::think(k)).collect_all();
            prop_assert_eq!(&full[..k.min(full.len())], &cut[..]);
            if k < full.len() {
                prop_assert_eq!(completion, Completion::Budget);
            }
        }
    }
}
