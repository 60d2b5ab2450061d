use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PruneMode {
    /// Keep the first L paragraphs; L is uniform in `0..=count` unless fixed.
    PrefixTruncate {
        #[serde(default)]
        fixed_l: Option<usize>,
    },
    /// Keep each paragraph independently with probability `keep_prob`.
    ParagraphDrop { keep_prob: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrunePolicy {
    #[serde(flatten)]
    pub mode: PruneMode,
    pub seed: u64,
}

impl PrunePolicy {
    pub fn validate(&self) -> Result<(), String> {
        if let PruneMode::ParagraphDrop { keep_prob } = self.mode {
            if !(0.0..=1.0).contains(&keep_prob) {
                return Err(format!("keep_prob must lie in [0, 1], got {keep_prob}"));
            }
        }
        Ok(())
    }

    /// Generator for one sample; independent of how samples are scheduled.
    pub fn rng_for(&self, sample_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(sample_index);
        rng
    }
}

/// Indices of the paragraphs that survive, in order.
pub fn kept_indices(count: usize, policy: &PrunePolicy, sample_index: u64) -> Vec<usize> {
    let mut rng = policy.rng_for(sample_index);
    match policy.mode {
        PruneMode::PrefixTruncate { fixed_l } => {
            let l = fixed_l.map_or_else(|| rng.random_range(0..=count), |l| l.min(count));
            (0..l).collect()
        }
        PruneMode::ParagraphDrop { keep_prob } => (0..count).filter(|_| rng.random_bool(keep_prob)).collect(),
    }
}

/// Prunes whole paragraphs; kept paragraphs are returned unchanged.
pub fn prune_cot(paragraphs: &[String], policy: &PrunePolicy, sample_index: u64) -> Vec<String> {
    kept_indices(paragraphs.len(), policy, sample_index)
        .into_iter()
        .map(|i| paragraphs[i].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paras(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("P{i}")).collect()
    }

    fn prefix(l: usize) -> PrunePolicy {
        PrunePolicy {
            mode: PruneMode::PrefixTruncate { fixed_l: Some(l) },
            seed: 0,
        }
    }

    #[test]
    fn fixed_prefixes() {
        assert_eq!(prune_cot(&paras(5), &prefix(2), 0), vec!["P1", "P2"]);
        assert_eq!(prune_cot(&paras(5), &prefix(5), 0), paras(5));
        assert_eq!(prune_cot(&paras(5), &prefix(9), 0), paras(5));
        assert!(prune_cot(&paras(5), &prefix(0), 0).is_empty());
    }

    #[test]
    fn random_prefix_covers_the_range() {
        let policy = PrunePolicy {
            mode: PruneMode::PrefixTruncate { fixed_l: None },
            seed: 9,
        };
        let mut seen = [false; 4];
        for i in 0..200 {
            seen[prune_cot(&paras(3), &policy, i).len()] = true;
        }
        assert_eq!(seen, [true; 4]);
    }

    #[test]
    fn drop_extremes() {
        let all = PrunePolicy {
            mode: PruneMode::ParagraphDrop { keep_prob: 1.0 },
            seed: 1,
        };
        let none = PrunePolicy {
            mode: PruneMode::ParagraphDrop { keep_prob: 0.0 },
            seed: 1,
        };
        assert_eq!(prune_cot(&paras(7), &all, 3), paras(7));
        assert!(prune_cot(&paras(7), &none, 3).is_empty());
        assert!(PrunePolicy {
            mode: PruneMode::ParagraphDrop { keep_prob: 1.5 },
            seed: 1
        }
        .validate()
        .is_err());
    }

    #[test]
    fn same_seed_same_choice() {
        let p = PrunePolicy {
            mode: PruneMode::ParagraphDrop { keep_prob: 0.6 },
            seed: 42,
        };
        assert_eq!(prune_cot(&paras(20), &p, 5), prune_cot(&paras(20), &p, 5));
        assert_ne!(kept_indices(64, &p, 5), kept_indices(64, &p, 6));
    }
}
