//! Two-stage grounding of a step sequence against the narration corpus.
//!
//! Stage 1 ranks every record by monotonic coverage: each step picks its best
//! segment, with segment indices nondecreasing along the steps. The top-K
//! records are re-scored in Stage 2 by a global alignment (Needleman–Wunsch
//! over cosine similarities with a linear gap penalty) normalized by the
//! length of the optimal path. The grounding score is the best Stage 2 score
//! in the pool.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusIndex;
use crate::embedder::{fill_similarity, similarity_matrix, Embedder, SimMatrix};
use crate::error::{Error, Result};
use crate::matrix::{EmbeddingMatrix, MatrixView, UNIT_NORM_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub top_k: usize,
    pub gap_penalty: f64,
    pub nw_clip_lo: f64,
    pub nw_clip_hi: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            top_k: 25,
            gap_penalty: -0.05,
            nw_clip_lo: 1e-6,
            nw_clip_hi: 1.0,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be at least 1".into()));
        }
        if !(self.gap_penalty <= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gap_penalty must be <= 0, got {}",
                self.gap_penalty
            )));
        }
        if !(0.0 < self.nw_clip_lo && self.nw_clip_lo < self.nw_clip_hi && self.nw_clip_hi <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < nw_clip_lo < nw_clip_hi <= 1, got [{}, {}]",
                self.nw_clip_lo, self.nw_clip_hi
            )));
        }
        Ok(())
    }
}

/// Ordered steps with one unit-norm embedding row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSequence {
    steps: Vec<String>,
    embeddings: EmbeddingMatrix,
}

impl StepSequence {
    pub fn new(steps: Vec<String>, embeddings: EmbeddingMatrix) -> Result<Self> {
        if steps.len() != embeddings.rows() {
            return Err(Error::RowCountMismatch {
                expected: steps.len(),
                found: embeddings.rows(),
            });
        }
        embeddings.check_unit_norm(UNIT_NORM_TOL)?;
        Ok(Self { steps, embeddings })
    }

    pub fn embed(steps: Vec<String>, embedder: &dyn Embedder) -> Self {
        let embeddings = embedder.embed_all(&steps);
        Self { steps, embeddings }
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            steps: Vec::new(),
            embeddings: EmbeddingMatrix::empty(dim),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn steps(&self) -> &[String] {
        &self.steps
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }
}

/// Length-normalized monotonic coverage of a similarity matrix.
pub fn mono_coverage(w: &SimMatrix) -> Result<f64> {
    if w.rows() == 0 || w.cols() == 0 {
        return Err(Error::Empty("mono_coverage needs at least one step and one segment"));
    }
    let mut scratch = Vec::new();
    Ok(mono_coverage_raw(w.as_slice(), w.rows(), w.cols(), &mut scratch))
}

/// `D[i][k] = W[i][k] + max_{k' <= k} D[i-1][k']`, one rolling row.
fn mono_coverage_raw(w: &[f64], m: usize, l: usize, row: &mut Vec<f64>) -> f64 {
    row.clear();
    row.extend_from_slice(&w[..l]);
    for i in 1..m {
        let wi = &w[i * l..(i + 1) * l];
        let mut best_prefix = f64::NEG_INFINITY;
        for (d, &wik) in row.iter_mut().zip(wi) {
            best_prefix = best_prefix.max(*d);
            *d = wik + best_prefix;
        }
    }
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max) / m as f64
}

/// One move of a global alignment path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Move {
    /// Step `i` aligned to segment `k`.
    Diagonal,
    /// Step consumed against a gap.
    Vertical,
    /// Segment consumed against a gap.
    Horizontal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NwAlignment {
    /// Raw optimal score `F[M][L]`.
    pub score: f64,
    /// Optimal path in forward order, from `(0, 0)` to `(M, L)`.
    pub moves: Vec<Move>,
    /// `clip(score / max(|path|, 1), lo, hi)`.
    pub normalized: f64,
}

impl NwAlignment {
    /// Lattice points visited by the path, starting at `(0, 0)`.
    pub fn points(&self) -> Vec<[usize; 2]> {
        let mut at = [0usize, 0usize];
        let mut pts = Vec::with_capacity(self.moves.len() + 1);
        pts.push(at);
        for mv in &self.moves {
            match mv {
                Move::Diagonal => {
                    at[0] += 1;
                    at[1] += 1;
                }
                Move::Vertical => at[0] += 1,
                Move::Horizontal => at[1] += 1,
            }
            pts.push(at);
        }
        pts
    }
}

/// Global alignment with linear gap penalty; leading and trailing gaps pay.
///
/// Backtrace prefers diagonal, then vertical, then horizontal.
pub fn nw_align(w: &SimMatrix, cfg: &AlignConfig) -> Result<NwAlignment> {
    let (m, l) = (w.rows(), w.cols());
    if m == 0 || l == 0 {
        return Err(Error::Empty("nw_align needs at least one step and one segment"));
    }
    let g = cfg.gap_penalty;
    let stride = l + 1;
    let mut f = vec![0f64; (m + 1) * stride];
    for k in 1..=l {
        f[k] = f[k - 1] + g;
    }
    for i in 1..=m {
        f[i * stride] = f[(i - 1) * stride] + g;
        for k in 1..=l {
            let diag = f[(i - 1) * stride + k - 1] + w.get(i - 1, k - 1);
            let up = f[(i - 1) * stride + k] + g;
            let left = f[i * stride + k - 1] + g;
            f[i * stride + k] = diag.max(up).max(left);
        }
    }

    let mut moves = Vec::with_capacity(m + l);
    let (mut i, mut k) = (m, l);
    while i > 0 || k > 0 {
        let here = f[i * stride + k];
        let mv = if i == 0 {
            Move::Horizontal
        } else if k == 0 {
            Move::Vertical
        } else if here == f[(i - 1) * stride + k - 1] + w.get(i - 1, k - 1) {
            Move::Diagonal
        } else if here == f[(i - 1) * stride + k] + g {
            Move::Vertical
        } else {
            Move::Horizontal
        };
        match mv {
            Move::Diagonal => {
                i -= 1;
                k -= 1;
            }
            Move::Vertical => i -= 1,
            Move::Horizontal => k -= 1,
        }
        moves.push(mv);
    }
    moves.reverse();

    let score = f[m * stride + l];
    let normalized = (score / moves.len().max(1) as f64).clamp(cfg.nw_clip_lo, cfg.nw_clip_hi);
    Ok(NwAlignment {
        score,
        moves,
        normalized,
    })
}

/// Descending by score, ties to the lower record index.
fn rank(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Stage 1: monotonic coverage against every record, top `cfg.top_k` kept.
///
/// Scoring runs on the ambient rayon pool; the result does not depend on the
/// number of workers.
pub fn stage1_retrieve(s: &StepSequence, index: &CorpusIndex, cfg: &AlignConfig) -> Result<Vec<(usize, f64)>> {
    if index.is_empty() {
        return Err(Error::Empty("corpus index has no records"));
    }
    if s.is_empty() {
        return Err(Error::Empty("step sequence has no steps"));
    }
    if s.dim() != index.dim() {
        return Err(Error::DimMismatch {
            expected: index.dim(),
            found: s.dim(),
        });
    }
    let steps = s.embeddings().view();
    let m = s.len();
    let spans = index.spans();
    let all = index.embeddings();

    let mut scored: Vec<(usize, f64)> = (0..spans.len())
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(wbuf, row), j| {
                let span = spans[j];
                let segs = all.slice(span.start_row, span.len).expect("spans partition the matrix");
                fill_similarity(steps, segs, wbuf).expect("dims checked above");
                (j, mono_coverage_raw(wbuf, m, span.len, row))
            },
        )
        .collect();

    let k = cfg.top_k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank);
        scored.truncate(k);
    }
    scored.sort_by(rank);
    Ok(scored)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentOutcome {
    pub record_idx: usize,
    pub video_id: String,
    pub stage1_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grounding {
    pub score: f64,
    pub best: AlignmentOutcome,
    pub pool: Vec<AlignmentOutcome>,
}

impl Grounding {
    pub fn pool_ids(&self) -> Vec<(usize, f64)> {
        self.pool.iter().map(|o| (o.record_idx, o.stage1_score)).collect()
    }
}

/// `A(s, N)`: the best Stage 2 score over the Stage 1 pool.
pub fn grounding_score(s: &StepSequence, index: &CorpusIndex, cfg: &AlignConfig) -> Result<Grounding> {
    cfg.validate()?;
    let pool = stage1_retrieve(s, index, cfg)?;
    score_pool(s, index, &pool, cfg)
}

/// Stage 2 over an explicit pool of `(record_idx, stage1_score)` pairs.
pub fn score_pool(
    s: &StepSequence,
    index: &CorpusIndex,
    pool: &[(usize, f64)],
    cfg: &AlignConfig,
) -> Result<Grounding> {
    if pool.is_empty() {
        return Err(Error::Empty("empty candidate pool"));
    }
    if s.is_empty() {
        return Err(Error::Empty("step sequence has no steps"));
    }
    let outcomes = pool
        .par_iter()
        .map(|&(idx, s1)| {
            let segs: MatrixView<'_> = index.segment_embeddings(idx)?;
            let w = similarity_matrix(s.embeddings().view(), segs)?;
            let nw = nw_align(&w, cfg)?;
            Ok(AlignmentOutcome {
                record_idx: idx,
                video_id: index.records()[idx].video_id.clone(),
                stage1_score: s1,
                stage2_score: Some(nw.normalized),
                path: Some(nw.points()),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let best = outcomes
        .iter()
        .max_by(|a, b| {
            let (sa, sb) = (a.stage2_score.unwrap(), b.stage2_score.unwrap());
            sa.total_cmp(&sb).then(b.record_idx.cmp(&a.record_idx))
        })
        .cloned()
        .expect("pool is non-empty");
    Ok(Grounding {
        score: best.stage2_score.unwrap(),
        best,
        pool: outcomes,
    })
}
