//! Batch simulation over many configurations.

use serde::{Deserialize, Serialize};

use crate::backend::{BrainPair, GeneratorSpec, MockSpec};
use crate::metrics::{pacing_feasible, TurnMetrics};
use crate::model::{RateModel, SegmentationPolicy, Token, TurnInput};
use crate::par::{self, ExecMode};
use crate::scheduler::{run_turn, Strategy, TurnError};

/// One simulated configuration, backed by the mock generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub policy: SegmentationPolicy,
    pub rates: RateModel,
    pub cot_tokens: usize,
    pub response_tokens: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub point: SweepPoint,
    pub strategy: Strategy,
    pub feasible: bool,
    pub metrics: TurnMetrics,
}

fn simulate(point: &SweepPoint, strategy: Strategy) -> Result<SweepOutcome, TurnError> {
    let mut spec = MockSpec::new(point.seed, point.cot_tokens, point.response_tokens);
    spec.text_per_chunk = point.policy.text_per_chunk;
    spec.audio_per_chunk = point.policy.audio_per_chunk;
    let brains = BrainPair::from_specs(&GeneratorSpec::Mock(spec.clone()), &GeneratorSpec::Mock(spec))
        .expect("mock backends always resolve");
    let input = TurnInput::new(vec![Token::audio(1).expect("small id")], vec![]).expect("non-empty input");
    let transcript = run_turn(strategy, &input, &brains, &point.policy, &point.rates, "sweep")?;
    Ok(SweepOutcome {
        point: *point,
        strategy,
        feasible: pacing_feasible(&point.policy, &point.rates),
        metrics: TurnMetrics::from_transcript(&transcript),
    })
}

/// Runs every strategy on every point. Output order is points-major,
/// strategies-minor, whatever the execution mode.
pub fn run_sweep(points: &[SweepPoint], strategies: &[Strategy], mode: ExecMode) -> Result<Vec<SweepOutcome>, TurnError> {
    let jobs: Vec<(SweepPoint, Strategy)> = points
        .iter()
        .flat_map(|p| strategies.iter().map(move |s| (*p, *s)))
        .collect();
    par::map(mode, &jobs, |(p, s)| simulate(p, *s)).into_iter().collect()
}
