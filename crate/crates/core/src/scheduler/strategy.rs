use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// How formulation and articulation are paced against each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    /// Full chain of thought, then the whole response.
    Tbs,
    /// Articulation step n waits for think segments 1..=n.
    ThinkFirst,
    /// Articulation step n waits for think segments 1..n; step 1 starts at once.
    SpeakFirst,
    /// One brain alternating fixed-size think and response chunks.
    Interleaved {
        think_chunk: usize,
        response_chunk: usize,
    },
    /// Response without any thinking.
    Direct,
}

/// What an articulation step needs before it may start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThinkRequirement {
    /// The first `n` think segments must have been handed off.
    Segments(usize),
    /// Thinking must be finished.
    Closed,
}

impl Strategy {
    pub const DEFAULT_INTERLEAVED: Strategy = Strategy::Interleaved {
        think_chunk: 8,
        response_chunk: 20,
    };

    /// Position in reports: Tbs, ThinkFirst, SpeakFirst, Interleaved, Direct.
    pub fn report_rank(&self) -> u8 {
        match self {
            Strategy::Tbs => 0,
            Strategy::ThinkFirst => 1,
            Strategy::SpeakFirst => 2,
            Strategy::Interleaved { .. } => 3,
            Strategy::Direct => 4,
        }
    }

    pub fn uses_formulation(&self) -> bool {
        !matches!(self, Strategy::Direct)
    }

    /// Requirement for 1-based articulation step `step`.
    pub fn requirement(&self, step: usize) -> ThinkRequirement {
        debug_assert!(step >= 1);
        match self {
            Strategy::Tbs => ThinkRequirement::Closed,
            Strategy::ThinkFirst | Strategy::Interleaved { .. } => ThinkRequirement::Segments(step),
            Strategy::SpeakFirst => ThinkRequirement::Segments(step - 1),
            Strategy::Direct => ThinkRequirement::Segments(0),
        }
    }

    /// Response segments step `step` must see given `think_segments` visible,
    /// or `None` when the strategy does not tie the two counts.
    pub fn expected_response_segments(&self, think_segments: usize) -> Option<usize> {
        match self {
            Strategy::ThinkFirst | Strategy::Interleaved { .. } => Some(think_segments.saturating_sub(1)),
            Strategy::SpeakFirst => Some(think_segments),
            Strategy::Tbs | Strategy::Direct => Some(0),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if let Strategy::Interleaved {
            think_chunk,
            response_chunk,
        } = self
        {
            if *think_chunk == 0 || *response_chunk == 0 {
                return Err("interleaved chunk sizes must be at least 1".into());
            }
        }
        Ok(())
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Tbs => f.write_str("tbs"),
            Strategy::ThinkFirst => f.write_str("thkfirst"),
            Strategy::SpeakFirst => f.write_str("spkfirst"),
            Strategy::Interleaved {
                think_chunk,
                response_chunk,
            } => write!(f, "interleaved:{think_chunk}:{response_chunk}"),
            Strategy::Direct => f.write_str("direct"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown strategy {0:?} (expected tbs, thkfirst, spkfirst, interleaved[:T:R] or direct)")]
pub struct UnknownStrategy(pub String);

impl FromStr for Strategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let err = || UnknownStrategy(s.to_string());
        match lower.as_str() {
            "tbs" => return Ok(Strategy::Tbs),
            "thkfirst" | "think-first" | "thinkfirst" => return Ok(Strategy::ThinkFirst),
            "spkfirst" | "speak-first" | "speakfirst" => return Ok(Strategy::SpeakFirst),
            "direct" | "wo-thk" => return Ok(Strategy::Direct),
            "interleaved" => return Ok(Strategy::DEFAULT_INTERLEAVED),
            _ => {}
        }
        let rest = lower.strip_prefix("interleaved:").ok_or_else(err)?;
        let (t, r) = rest.split_once(':').ok_or_else(err)?;
        let strategy = Strategy::Interleaved {
            think_chunk: t.parse().map_err(|_| err())?,
            response_chunk: r.parse().map_err(|_| err())?,
        };
        strategy.validate().map_err(|_| err())?;
        Ok(strategy)
    }
}

impl Serialize for Strategy {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for s in [
            Strategy::Tbs,
            Strategy::ThinkFirst,
            Strategy::SpeakFirst,
            Strategy::Interleaved {
                think_chunk: 8,
                response_chunk: 20,
            },
            Strategy::Direct,
        ] {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("interleaved".parse::<Strategy>().unwrap(), Strategy::DEFAULT_INTERLEAVED);
        assert!("interleaved:0:20".parse::<Strategy>().is_err());
        assert!("bogus".parse::<Strategy>().is_err());
    }

    #[test]
    fn requirements() {
        assert_eq!(Strategy::ThinkFirst.requirement(3), ThinkRequirement::Segments(3));
        assert_eq!(Strategy::SpeakFirst.requirement(1), ThinkRequirement::Segments(0));
        assert_eq!(Strategy::SpeakFirst.requirement(3), ThinkRequirement::Segments(2));
        assert_eq!(Strategy::Tbs.requirement(1), ThinkRequirement::Closed);
    }
}
