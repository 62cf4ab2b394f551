//! Wire types: one JSON object per line in each direction.

use serde::{Deserialize, Serialize};

use crate::alignment::AlignConfig;
use crate::reward::{BaselinePool, RewardBreakdown, RewardConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    #[default]
    Score,
    Health,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoringRequest {
    pub id: String,
    #[serde(default, skip_serializing_if = "is_score")]
    pub op: Op,
    /// Accepted and logged; the reward does not depend on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<String>,
    #[serde(default)]
    pub history: Vec<String>,
    #[serde(default)]
    pub completions: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overrides: Option<Overrides>,
    /// Precomputed step vectors used instead of embedding the texts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vectors: Option<InlineVectors>,
}

fn is_score(op: &Op) -> bool {
    *op == Op::Score
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub align: Option<AlignOverrides>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardOverrides>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignOverrides {
    pub top_k: Option<usize>,
    pub gap_penalty: Option<f64>,
    pub nw_clip_lo: Option<f64>,
    pub nw_clip_hi: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardOverrides {
    pub tau: Option<f64>,
    pub alpha: Option<f64>,
    pub eps: Option<f64>,
    pub baseline: Option<BaselinePool>,
}

impl AlignOverrides {
    pub fn apply(&self, base: &AlignConfig) -> AlignConfig {
        AlignConfig {
            top_k: self.top_k.unwrap_or(base.top_k),
            gap_penalty: self.gap_penalty.unwrap_or(base.gap_penalty),
            nw_clip_lo: self.nw_clip_lo.unwrap_or(base.nw_clip_lo),
            nw_clip_hi: self.nw_clip_hi.unwrap_or(base.nw_clip_hi),
        }
    }
}

impl RewardOverrides {
    pub fn apply(&self, base: &RewardConfig) -> RewardConfig {
        RewardConfig {
            tau: self.tau.unwrap_or(base.tau),
            alpha: self.alpha.unwrap_or(base.alpha),
            eps: self.eps.unwrap_or(base.eps),
            baseline: self.baseline.unwrap_or(base.baseline),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineVectors {
    pub history: Vec<Vec<f32>>,
    pub completions: Vec<Vec<Vec<f32>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringResponse {
    pub id: String,
    /// One breakdown per completion, in request order.
    pub results: Vec<RewardBreakdown>,
    /// Present only for groups of two or more completions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantages: Option<Vec<f64>>,
    pub corpus_tag: String,
    pub timing_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub corpus_tag: String,
    pub embedder: String,
    pub dim: usize,
    pub record_count: usize,
    pub segment_count: usize,
    pub align: AlignConfig,
    pub reward: RewardConfig,
    pub max_steps: usize,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub id: String,
    pub health: Health,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Not JSON, or not a request object.
    ParseError,
    EmptyHistory,
    NoCompletions,
    /// More steps than the configured cap.
    TooLarge,
    InvalidConfig,
    /// Inline vectors disagree with the index or with the step lists.
    BadVectors,
    /// Text steps sent to a server whose corpus embedder is unavailable.
    NoEmbedder,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub id: Option<String>,
    pub error: ErrorBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reply {
    Score(ScoringResponse),
    Health(HealthResponse),
    Error(ErrorResponse),
}

impl Reply {
    pub fn error(id: Option<String>, code: ErrorCode, message: impl Into<String>) -> Self {
        Reply::Error(ErrorResponse {
            id,
            error: ErrorBody {
                code,
                message: message.into(),
            },
        })
    }

    pub fn is_error(&self) -> bool {
        matches!(self, Reply::Error(_))
    }

    pub fn id(&self) -> Option<&str> {
        match self {
            Reply::Score(r) => Some(&r.id),
            Reply::Health(r) => Some(&r.id),
            Reply::Error(r) => r.id.as_deref(),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("replies always serialize")
    }
}
