//! Scenario files: one user turn plus the scripted model behaviour for it.
//!
//! ```json
//! {
//!   "id": "demo",
//!   "input": { "speech": ["a:1", "a:2"], "text": [] },
//!   "cot": { "synthetic_len": 762 },
//!   "articulation": { "synthetic_response_len": 300 }
//! }
//! ```
//!
//! `cot` is either an explicit token list or `{synthetic_len, seed?}`.
//! `articulation` is either `{continuations: [...]}` keyed by visible segment
//! counts, or `{synthetic_response_len, seed?}` for a fixed response that is
//! replayed from wherever the prompt left off. Omitted seeds take the run seed.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{ArticulationScript, ContinuationKey, GeneratorSpec, KeyedContinuation, ScriptSpec};
use crate::model::{Token, TokenKind, TurnInput, RESERVED_ID_BASE};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid scenario {id}: {reason}")]
    Invalid { id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioInput {
    #[serde(default)]
    pub speech: Vec<Token>,
    #[serde(default)]
    pub text: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CotSource {
    Explicit(Vec<Token>),
    Synthetic {
        synthetic_len: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArticulationSource {
    Keyed { continuations: Vec<KeyedContinuation> },
    Synthetic {
        synthetic_response_len: usize,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default = "one")]
        text_per_chunk: usize,
        #[serde(default = "four")]
        audio_per_chunk: usize,
    },
}

fn one() -> usize {
    1
}

fn four() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub input: ScenarioInput,
    pub cot: CotSource,
    pub articulation: ArticulationSource,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let display = path.display().to_string();
        let raw = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: display.clone(),
            source,
        })?;
        serde_json::from_str(&raw).map_err(|source| ScenarioError::Parse { path: display, source })
    }

    /// Built-in scenario used when none is given.
    pub fn synthetic(id: &str, cot_len: usize, response_len: usize) -> Self {
        Scenario {
            id: id.to_string(),
            input: ScenarioInput {
                speech: (1..=16).map(|i| Token::audio(i).expect("small id")).collect(),
                text: vec![],
            },
            cot: CotSource::Synthetic {
                synthetic_len: cot_len,
                seed: None,
            },
            articulation: ArticulationSource::Synthetic {
                synthetic_response_len: response_len,
                seed: None,
                text_per_chunk: 1,
                audio_per_chunk: 4,
            },
        }
    }

    fn invalid(&self, reason: impl Into<String>) -> ScenarioError {
        ScenarioError::Invalid {
            id: self.id.clone(),
            reason: reason.into(),
        }
    }

    pub fn turn_input(&self) -> Result<TurnInput, ScenarioError> {
        TurnInput::new(self.input.speech.clone(), self.input.text.clone()).map_err(|r| self.invalid(r))
    }

    /// The full chain of thought, resolving synthetic sources with `seed`.
    pub fn cot_tokens(&self, seed: u64) -> Result<Vec<Token>, ScenarioError> {
        let tokens = match &self.cot {
            CotSource::Explicit(tokens) => tokens.clone(),
            CotSource::Synthetic { synthetic_len, seed: s } => {
                let mut rng = ChaCha8Rng::seed_from_u64(s.unwrap_or(seed));
                (0..*synthetic_len)
                    .map(|_| Token::text(rng.random_range(0..RESERVED_ID_BASE)).expect("id below reserved range"))
                    .collect()
            }
        };
        if tokens.iter().any(|t| t.kind() != TokenKind::Text) {
            return Err(self.invalid("chain of thought must hold only text tokens"));
        }
        Ok(tokens)
    }
}

fn synthetic_response(len: usize, seed: u64, text_per_chunk: usize, audio_per_chunk: usize) -> Vec<Token> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005E_ED0F_A0D1_0000);
    let chunk = text_per_chunk + audio_per_chunk;
    (0..len)
        .map(|p| {
            let id = rng.random_range(0..RESERVED_ID_BASE);
            if p % chunk < text_per_chunk {
                Token::text(id).expect("id below reserved range")
            } else {
                Token::audio(id).expect("id below reserved range")
            }
        })
        .collect()
}

/// Builds the (formulation, articulation) scripted generators for a scenario.
///
/// Continuation keys are counted in segments of the given sizes, which must
/// be the sizes the run uses (for the interleaved strategy, its chunk sizes).
/// Both scripts carry the chain of thought so either brain can think.
pub fn scripted_backend_from_scenario(
    scenario: &Scenario,
    think_segment_tokens: usize,
    response_segment_tokens: usize,
    seed: u64,
) -> Result<(GeneratorSpec, GeneratorSpec), ScenarioError> {
    if think_segment_tokens == 0 || response_segment_tokens == 0 {
        return Err(scenario.invalid("segment sizes must be positive"));
    }
    let cot = scenario.cot_tokens(seed)?;
    let continuations = match &scenario.articulation {
        ArticulationSource::Keyed { continuations } => {
            for c in continuations {
                if c.tokens.iter().any(|t| t.is_control() && *t != Token::END_OF_RESPONSE) {
                    return Err(scenario.invalid(format!("continuation {} holds a stray control token", c.key)));
                }
            }
            continuations.clone()
        }
        ArticulationSource::Synthetic {
            synthetic_response_len,
            seed: s,
            text_per_chunk,
            audio_per_chunk,
        } => {
            if *text_per_chunk == 0 {
                return Err(scenario.invalid("text_per_chunk must be positive"));
            }
            let response = synthetic_response(*synthetic_response_len, s.unwrap_or(seed), *text_per_chunk, *audio_per_chunk);
            let max_k = cot.len().div_ceil(think_segment_tokens);
            let max_m = response.len().div_ceil(response_segment_tokens);
            let mut out = Vec::with_capacity((max_k + 1) * (max_m + 1));
            for k in 0..=max_k {
                for m in 0..=max_m {
                    let from = (m * response_segment_tokens).min(response.len());
                    let mut tokens = response[from..].to_vec();
                    tokens.push(Token::END_OF_RESPONSE);
                    out.push(KeyedContinuation {
                        key: ContinuationKey {
                            think_segments: k,
                            response_segments: m,
                        },
                        tokens,
                    });
                }
            }
            out
        }
    };
    let script = ArticulationScript {
        think_segment_tokens,
        response_segment_tokens,
        continuations,
    };
    let formulation = ScriptSpec {
        script_id: format!("{}/formulation", scenario.id),
        cot: cot.clone(),
        articulation: None,
    };
    let articulation = ScriptSpec {
        script_id: format!("{}/articulation", scenario.id),
        cot,
        articulation: Some(script),
    };
    Ok((GeneratorSpec::Scripted(formulation), GeneratorSpec::Scripted(articulation)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explicit_scenario_parses() {
        let json = r#"{
            "id": "x",
            "input": {"speech": ["a:1"], "text": ["t:2"]},
            "cot": ["t:5", "t:6"],
            "articulation": {"continuations": [
                {"think_segments": 0, "response_segments": 0, "tokens": ["t:1", "a:2", "<eor>"]}
            ]}
        }"#;
        let s: Scenario = serde_json::from_str(json).unwrap();
        assert_eq!(s.cot_tokens(0).unwrap().len(), 2);
        let (f, a) = scripted_backend_from_scenario(&s, 80, 100, 0).unwrap();
        assert!(matches!(f, GeneratorSpec::Scripted(_)));
        match a {
            GeneratorSpec::Scripted(spec) => assert_eq!(spec.articulation.unwrap().continuations.len(), 1),
            _ => panic!(),
        }
    }

    #[test]
    fn synthetic_sources_follow_the_seed() {
        let s = Scenario::synthetic("s", 762, 300);
        assert_eq!(s.cot_tokens(1).unwrap(), s.cot_tokens(1).unwrap());
        assert_ne!(s.cot_tokens(1).unwrap(), s.cot_tokens(2).unwrap());
        assert_eq!(s.cot_tokens(1).unwrap().len(), 762);
    }

    #[test]
    fn synthetic_keys_cover_every_step() {
        let s = Scenario::synthetic("s", 762, 300);
        let (_, a) = scripted_backend_from_scenario(&s, 80, 100, 3).unwrap();
        let GeneratorSpec::Scripted(spec) = a else { panic!() };
        let keys = spec.articulation.unwrap().continuations;
        assert_eq!(keys.len(), 11 * 4);
        let empty = Scenario::synthetic("e", 0, 300);
        let (_, a) = scripted_backend_from_scenario(&empty, 80, 100, 3).unwrap();
        let GeneratorSpec::Scripted(spec) = a else { panic!() };
        assert!(spec
            .articulation
            .unwrap()
            .continuations
            .iter()
            .all(|c| c.key.think_segments == 0));
    }

    #[test]
    fn think_content_must_be_text() {
        let mut s = Scenario::synthetic("s", 0, 10);
        s.cot = CotSource::Explicit(vec![Token::audio(1).unwrap()]);
        assert!(matches!(s.cot_tokens(0), Err(ScenarioError::Invalid { .. })));
    }
}
