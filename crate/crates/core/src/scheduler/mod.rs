//! Turn scheduling: strategies, the event agenda and the virtual-time engine.

mod agenda;
mod engine;
mod strategy;

pub use agenda::{Actor, Agenda};
pub use engine::{Advance, TurnEngine, GAP_EPSILON};
pub use strategy::{Strategy, ThinkRequirement, UnknownStrategy};

use thiserror::Error;

use crate::backend::BrainPair;
use crate::model::{ModelError, RateModel, SegmentationPolicy, TurnInput};
use crate::transcript::Transcript;

#[derive(Debug, Error)]
pub enum TurnError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid strategy {strategy}: {reason}")]
    Strategy { strategy: Strategy, reason: String },
}

/// Simulates one turn under `strategy`.
///
/// Backend failures do not surface as errors: the transcript comes back with
/// `aborted` set and a note describing the failure.
pub fn run_turn(
    strategy: Strategy,
    input: &TurnInput,
    brains: &BrainPair,
    policy: &SegmentationPolicy,
    rates: &RateModel,
    turn_id: &str,
) -> Result<Transcript, TurnError> {
    policy.validate()?;
    rates.validate()?;
    strategy
        .validate()
        .map_err(|reason| TurnError::Strategy { strategy, reason })?;
    let engine = TurnEngine::new(turn_id, strategy, input.clone(), brains.clone(), *policy, *rates);
    Ok(engine.run())
}
