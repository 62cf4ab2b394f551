//! History-baselined, progress-gated reward and group-standardized advantages.

use serde::{Deserialize, Serialize};

use crate::alignment::{grounding_score, score_pool, AlignConfig, StepSequence};
use crate::corpus::CorpusIndex;
use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;

/// Which pool the history baseline is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselinePool {
    /// The history runs its own Stage 1 retrieval.
    #[default]
    Independent,
    /// The history is re-scored against the pool retrieved for the full sequence.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Minimum relative progress for a positive reward.
    pub tau: f64,
    /// Penalty slope below the gate.
    pub alpha: f64,
    /// Floor on the remaining gap `1 - a_hist`.
    pub eps: f64,
    pub baseline: BaselinePool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            tau: 0.10,
            alpha: 2.0,
            eps: 1e-6,
            baseline: BaselinePool::Independent,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub a_full: f64,
    pub a_hist: f64,
    pub rho: f64,
    pub reward: f64,
    pub gated: bool,
    pub best_record_full: usize,
    pub best_record_hist: usize,
}

/// Relative progress, gate and reward from the two grounding scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatedReward {
    pub rho: f64,
    pub reward: f64,
    pub gated: bool,
}

pub fn gated_reward(a_full: f64, a_hist: f64, cfg: &RewardConfig) -> GatedReward {
    let rho = (a_full - a_hist) / (1.0 - a_hist).max(cfg.eps);
    let gated = rho >= cfg.tau;
    let reward = if gated {
        a_full
    } else {
        (cfg.alpha * (rho - cfg.tau)).clamp(-1.0, 0.0)
    };
    GatedReward { rho, reward, gated }
}

/// Step-level concatenation; embedding rows are copied, never recomputed.
pub fn concat_steps(history: &StepSequence, completion: &StepSequence) -> Result<StepSequence> {
    if history.is_empty() && completion.is_empty() {
        return Err(Error::Empty("cannot concatenate two empty step sequences"));
    }
    if history.dim() != completion.dim() {
        return Err(Error::DimMismatch {
            expected: history.dim(),
            found: completion.dim(),
        });
    }
    let mut steps = history.steps().to_vec();
    steps.extend_from_slice(completion.steps());
    let mut data = history.embeddings().as_slice().to_vec();
    data.extend_from_slice(completion.embeddings().as_slice());
    StepSequence::new(steps, EmbeddingMatrix::new(history.dim(), data)?)
}

/// Reward for one completion given its history.
pub fn compute_reward(
    history: &StepSequence,
    completion: &StepSequence,
    index: &CorpusIndex,
    acfg: &AlignConfig,
    rcfg: &RewardConfig,
) -> Result<RewardBreakdown> {
    if history.is_empty() {
        return Err(Error::Empty("history must contain at least one step"));
    }
    rcfg.validate()?;
    let hist = grounding_score(history, index, acfg)?;
    let full = if completion.is_empty() {
        hist.clone()
    } else {
        grounding_score(&concat_steps(history, completion)?, index, acfg)?
    };
    let hist = match rcfg.baseline {
        BaselinePool::Independent => hist,
        BaselinePool::Shared => score_pool(history, index, &full.pool_ids(), acfg)?,
    };
    Ok(breakdown(
        full.score,
        hist.score,
        full.best.record_idx,
        hist.best.record_idx,
        rcfg,
    ))
}

pub(crate) fn breakdown(
    a_full: f64,
    a_hist: f64,
    best_full: usize,
    best_hist: usize,
    rcfg: &RewardConfig,
) -> RewardBreakdown {
    let g = gated_reward(a_full, a_hist, rcfg);
    RewardBreakdown {
        a_full,
        a_hist,
        rho: g.rho,
        reward: g.reward,
        gated: g.gated,
        best_record_full: best_full,
        best_record_hist: best_hist,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageGroup {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Smallest standard deviation used as a divisor.
pub const STD_FLOOR: f64 = 1e-12;

/// Standardize rewards within a group using the population standard deviation.
///
/// Groups whose rewards are all identical get zero advantages.
pub fn group_advantages(rewards: &[f64]) -> Result<AdvantageGroup> {
    if rewards.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "group advantages need at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidInput("rewards must be finite".into()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let all_equal = rewards.iter().all(|&r| r == rewards[0]);
    let std = if all_equal {
        0.0
    } else {
        (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt()
    };
    let advantages = if all_equal {
        vec![0.0; rewards.len()]
    } else {
        let sigma = std.max(STD_FLOOR);
        rewards.iter().map(|r| (r - mean) / sigma).collect()
    };
    Ok(AdvantageGroup {
        rewards: rewards.to_vec(),
        advantages,
        mean,
        std,
    })
}
