//! Request handling shared by the network server and offline batch scoring.

use std::sync::Arc;
use std::time::Instant;

use log::{debug, info, warn};
use rayon::prelude::*;

use super::protocol::{ErrorCode, Health, HealthResponse, InlineVectors, Op, Reply, ScoringRequest, ScoringResponse};
use crate::alignment::{AlignConfig, StepSequence};
use crate::corpus::CorpusIndex;
use crate::embedder::Embedder;
use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;
use crate::reward::{compute_reward, group_advantages, RewardConfig};

pub const DEFAULT_MAX_STEPS: usize = 512;

/// Server-wide defaults that individual requests may override.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub align: AlignConfig,
    pub reward: RewardConfig,
    /// Cap on history plus completion steps in one request.
    pub max_steps: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            align: AlignConfig::default(),
            reward: RewardConfig::default(),
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

/// Immutable scoring state: one shared index, one embedder, fixed defaults.
pub struct Engine {
    index: Arc<CorpusIndex>,
    embedder: Option<Box<dyn Embedder>>,
    config: EngineConfig,
    corpus_tag: String,
}

type Failure = (ErrorCode, String);

impl Engine {
    /// `embedder` may be `None` for corpora built from precomputed vectors;
    /// such an engine only accepts requests carrying inline vectors.
    pub fn new(index: Arc<CorpusIndex>, embedder: Option<Box<dyn Embedder>>, config: EngineConfig) -> Result<Self> {
        config.align.validate()?;
        config.reward.validate()?;
        if config.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
        }
        if let Some(e) = &embedder {
            if e.dim() != index.dim() {
                return Err(Error::DimMismatch {
                    expected: index.dim(),
                    found: e.dim(),
                });
            }
            if e.tag() != index.manifest().embedder {
                warn!(
                    "embedder {} differs from the corpus embedder {}",
                    e.tag(),
                    index.manifest().embedder
                );
            }
        }
        let m = index.manifest();
        let corpus_tag = format!("{}@{}", m.embedder, m.checksum);
        Ok(Self {
            index,
            embedder,
            config,
            corpus_tag,
        })
    }

    pub fn index(&self) -> &CorpusIndex {
        &self.index
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn corpus_tag(&self) -> &str {
        &self.corpus_tag
    }

    pub fn health(&self) -> Health {
        let m = self.index.manifest();
        Health {
            corpus_tag: self.corpus_tag.clone(),
            embedder: m.embedder.clone(),
            dim: m.dim,
            record_count: m.record_count,
            segment_count: m.segment_count,
            align: self.config.align,
            reward: self.config.reward,
            max_steps: self.config.max_steps,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Parse and answer one request line. Never panics on bad input.
    pub fn handle_line(&self, line: &str) -> Reply {
        match serde_json::from_str::<ScoringRequest>(line) {
            Ok(req) => self.handle(&req),
            Err(e) => {
                // salvage the id so the client can still match the error
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|id| id.as_str()).map(str::to_string));
                Reply::error(id, ErrorCode::ParseError, e.to_string())
            }
        }
    }

    pub fn handle(&self, req: &ScoringRequest) -> Reply {
        match req.op {
            Op::Health => Reply::Health(HealthResponse {
                id: req.id.clone(),
                health: self.health(),
            }),
            Op::Score => match self.score(req) {
                Ok(resp) => Reply::Score(resp),
                Err((code, message)) => Reply::error(Some(req.id.clone()), code, message),
            },
        }
    }

    pub fn score(&self, req: &ScoringRequest) -> std::result::Result<ScoringResponse, Failure> {
        let start = Instant::now();
        if let Some(goal) = &req.goal {
            debug!("request {} goal {:?} (not used in the reward)", req.id, goal);
        }
        let (align, reward) = self.resolve_configs(req)?;
        let (history, completions) = self.sequences(req)?;

        let breakdowns = completions
            .par_iter()
            .map(|c| compute_reward(&history, c, &self.index, &align, &reward))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| (ErrorCode::Internal, e.to_string()))?;

        let advantages = if breakdowns.len() >= 2 {
            let rewards: Vec<f64> = breakdowns.iter().map(|b| b.reward).collect();
            let group = group_advantages(&rewards).map_err(|e| (ErrorCode::Internal, e.to_string()))?;
            Some(group.advantages)
        } else {
            None
        };
        let timing_ms = start.elapsed().as_secs_f64() * 1e3;
        info!(
            "request {} scored {} completions in {:.2} ms",
            req.id,
            breakdowns.len(),
            timing_ms
        );
        Ok(ScoringResponse {
            id: req.id.clone(),
            results: breakdowns,
            advantages,
            corpus_tag: self.corpus_tag.clone(),
            timing_ms,
        })
    }

    fn resolve_configs(&self, req: &ScoringRequest) -> std::result::Result<(AlignConfig, RewardConfig), Failure> {
        let mut align = self.config.align;
        let mut reward = self.config.reward;
        if let Some(o) = &req.overrides {
            if let Some(a) = &o.align {
                align = a.apply(&align);
            }
            if let Some(r) = &o.reward {
                reward = r.apply(&reward);
            }
        }
        align
            .validate()
            .map_err(|e| (ErrorCode::InvalidConfig, e.to_string()))?;
        reward
            .validate()
            .map_err(|e| (ErrorCode::InvalidConfig, e.to_string()))?;
        Ok((align, reward))
    }

    fn sequences(&self, req: &ScoringRequest) -> std::result::Result<(StepSequence, Vec<StepSequence>), Failure> {
        match &req.vectors {
            Some(v) => self.inline_sequences(req, v),
            None => {
                check_shape(
                    req.history.len(),
                    req.completions.iter().map(Vec::len),
                    self.config.max_steps,
                )?;
                let embedder = self.embedder.as_deref().ok_or_else(|| {
                    (
                        ErrorCode::NoEmbedder,
                        format!(
                            "corpus embedder {} is not available; send inline vectors",
                            self.index.manifest().embedder
                        ),
                    )
                })?;
                let history = StepSequence::embed(req.history.clone(), embedder);
                let completions = req
                    .completions
                    .iter()
                    .map(|c| StepSequence::embed(c.clone(), embedder))
                    .collect();
                Ok((history, completions))
            }
        }
    }

    fn inline_sequences(
        &self,
        req: &ScoringRequest,
        v: &InlineVectors,
    ) -> std::result::Result<(StepSequence, Vec<StepSequence>), Failure> {
        check_shape(
            v.history.len(),
            v.completions.iter().map(Vec::len),
            self.config.max_steps,
        )?;
        let texts_given = !req.history.is_empty() || !req.completions.is_empty();
        if texts_given {
            let same = req.history.len() == v.history.len()
                && req.completions.len() == v.completions.len()
                && req
                    .completions
                    .iter()
                    .zip(&v.completions)
                    .all(|(t, m)| t.len() == m.len());
            if !same {
                return Err((
                    ErrorCode::BadVectors,
                    "step texts and inline vectors differ in shape".into(),
                ));
            }
        }
        let dim = self.index.dim();
        let seq = |texts: Option<&Vec<String>>, rows: &[Vec<f32>]| {
            let m = EmbeddingMatrix::from_rows(dim, rows).map_err(|e| (ErrorCode::BadVectors, e.to_string()))?;
            let steps = texts.cloned().unwrap_or_else(|| vec![String::new(); rows.len()]);
            StepSequence::new(steps, m).map_err(|e| (ErrorCode::BadVectors, e.to_string()))
        };
        let history = seq(texts_given.then_some(&req.history), &v.history)?;
        let completions = v
            .completions
            .iter()
            .enumerate()
            .map(|(i, rows)| seq(req.completions.get(i), rows))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok((history, completions))
    }
}

fn check_shape(
    history: usize,
    completions: impl ExactSizeIterator<Item = usize>,
    max_steps: usize,
) -> std::result::Result<(), Failure> {
    if history == 0 {
        return Err((ErrorCode::EmptyHistory, "history must contain at least one step".into()));
    }
    if completions.len() == 0 {
        return Err((ErrorCode::NoCompletions, "at least one completion is required".into()));
    }
    let total = history + completions.sum::<usize>();
    if total > max_steps {
        return Err((
            ErrorCode::TooLarge,
            format!("{total} steps exceed the cap of {max_steps}"),
        ));
    }
    Ok(())
}
