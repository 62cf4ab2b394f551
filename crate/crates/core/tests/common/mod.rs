//! Brute-force oracles and fixture builders shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stepground_core::{AlignConfig, CorpusIndex, EmbeddingMatrix, Move, NarrationRecord, NarrationSegment, SimMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, m: usize, l: usize) -> SimMatrix {
    let data = (0..m * l).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    SimMatrix::new(m, l, data).unwrap()
}

/// Entries from a small dyadic grid, so distinct paths tie exactly.
pub fn grid_matrix(rng: &mut impl Rng, m: usize, l: usize) -> SimMatrix {
    const GRID: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let data = (0..m * l).map(|_| GRID[rng.gen_range(0..GRID.len())]).collect();
    SimMatrix::new(m, l, data).unwrap()
}

/// Best mean of `W[i][k_i]` over every nondecreasing `k_0 <= .. <= k_{M-1}`.
pub fn brute_mono(w: &SimMatrix) -> f64 {
    fn go(w: &SimMatrix, i: usize, lo: usize, acc: f64, best: &mut f64) {
        if i == w.rows() {
            *best = best.max(acc);
            return;
        }
        for k in lo..w.cols() {
            go(w, i + 1, k, acc + w.get(i, k), best);
        }
    }
    let mut best = f64::NEG_INFINITY;
    go(w, 0, 0, 0.0, &mut best);
    best / w.rows() as f64
}

/// Every monotone lattice path from `(0, 0)` to `(M, L)` with its forward-summed score.
pub fn all_paths(w: &SimMatrix, gap: f64) -> Vec<(f64, Vec<Move>)> {
    fn go(
        w: &SimMatrix,
        gap: f64,
        i: usize,
        k: usize,
        acc: f64,
        path: &mut Vec<Move>,
        out: &mut Vec<(f64, Vec<Move>)>,
    ) {
        if i == w.rows() && k == w.cols() {
            out.push((acc, path.clone()));
            return;
        }
        if i < w.rows() && k < w.cols() {
            path.push(Move::Diagonal);
            go(w, gap, i + 1, k + 1, acc + w.get(i, k), path, out);
            path.pop();
        }
        if i < w.rows() {
            path.push(Move::Vertical);
            go(w, gap, i + 1, k, acc + gap, path, out);
            path.pop();
        }
        if k < w.cols() {
            path.push(Move::Horizontal);
            go(w, gap, i, k + 1, acc + gap, path, out);
            path.pop();
        }
    }
    let mut out = Vec::new();
    go(w, gap, 0, 0, 0.0, &mut Vec::new(), &mut out);
    out
}

fn move_rank(m: Move) -> u8 {
    match m {
        Move::Diagonal => 0,
        Move::Vertical => 1,
        Move::Horizontal => 2,
    }
}

pub struct OracleNw {
    pub score: f64,
    pub moves: Vec<Move>,
    pub normalized: f64,
}

/// Exhaustive global alignment. Among optimal paths, the one read backwards
/// from `(M, L)` that prefers diagonal, then vertical, then horizontal.
pub fn brute_nw(w: &SimMatrix, cfg: &AlignConfig) -> OracleNw {
    let paths = all_paths(w, cfg.gap_penalty);
    let best = paths.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let (score, moves) = paths
        .into_iter()
        .filter(|p| p.0 == best)
        .min_by(|a, b| {
            let ka = a.1.iter().rev().map(|&m| move_rank(m));
            let kb = b.1.iter().rev().map(|&m| move_rank(m));
            ka.cmp(kb)
        })
        .unwrap();
    let normalized = (score / moves.len() as f64).clamp(cfg.nw_clip_lo, cfg.nw_clip_hi);
    OracleNw {
        score,
        moves,
        normalized,
    }
}

pub fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

/// Vectors drawn from a small pool, so records share segments and scores tie.
pub fn pooled_vectors(rng: &mut impl Rng, dim: usize, pool: usize, n: usize) -> Vec<Vec<f32>> {
    let base: Vec<Vec<f32>> = (0..pool).map(|_| unit_vector(rng, dim)).collect();
    (0..n).map(|_| base[rng.gen_range(0..pool)].clone()).collect()
}

pub fn records_from_lengths(lengths: &[usize]) -> Vec<NarrationRecord> {
    lengths
        .iter()
        .enumerate()
        .map(|(j, &len)| NarrationRecord {
            video_id: format!("v{j:06}"),
            segments: (0..len)
                .map(|k| NarrationSegment {
                    start_s: k as f64,
                    end_s: k as f64 + 1.0,
                    text: format!("segment {k}"),
                })
                .collect(),
        })
        .collect()
}

/// Index over explicit per-record segment vectors.
pub fn index_from_vectors(records: &[Vec<Vec<f32>>], dim: usize) -> CorpusIndex {
    let lengths: Vec<usize> = records.iter().map(Vec::len).collect();
    let rows: Vec<&Vec<f32>> = records.iter().flatten().collect();
    let m = EmbeddingMatrix::from_rows(dim, &rows).unwrap();
    CorpusIndex::new(records_from_lengths(&lengths), m, "test-vectors").unwrap()
}

pub fn random_corpus(rng: &mut impl Rng, n: usize, max_len: usize, dim: usize, pool: usize) -> Vec<Vec<Vec<f32>>> {
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=max_len);
            pooled_vectors(rng, dim, pool, len)
        })
        .collect()
}

/// Cosine matrix with the same clamp as the library.
pub fn cosine(query: &[Vec<f32>], segs: &[Vec<f32>]) -> SimMatrix {
    let rows: Vec<Vec<f64>> = query
        .iter()
        .map(|q| {
            segs.iter()
                .map(|s| stepground_core::matrix::dot(q, s).clamp(-1.0, 1.0))
                .collect()
        })
        .collect();
    SimMatrix::from_rows(&rows).unwrap()
}

pub struct OracleGrounding {
    pub score: f64,
    pub best: usize,
    pub pool: Vec<(usize, f64)>,
}

/// Full-corpus two-stage oracle: exhaustive coverage for every record, stable
/// sort, top-K, exhaustive alignment, first maximum in record order.
pub fn two_stage_oracle(query: &[Vec<f32>], corpus: &[Vec<Vec<f32>>], cfg: &AlignConfig) -> OracleGrounding {
    let mut ranked: Vec<(usize, f64)> = corpus
        .iter()
        .enumerate()
        .map(|(j, segs)| (j, brute_mono(&cosine(query, segs))))
        .collect();
    ranked.sort_by(|a, b| match b.1.partial_cmp(&a.1).unwrap() {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    ranked.truncate(cfg.top_k);
    let mut by_idx = ranked.clone();
    by_idx.sort_by_key(|p| p.0);
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for &(j, _) in &by_idx {
        let s = brute_nw(&cosine(query, &corpus[j]), cfg).normalized;
        if s > best.1 {
            best = (j, s);
        }
    }
    OracleGrounding {
        score: best.1,
        best: best.0,
        pool: ranked,
    }
}

pub fn step_sequence(vectors: &[Vec<f32>]) -> stepground_core::StepSequence {
    let dim = vectors[0].len();
    let steps = (0..vectors.len()).map(|i| format!("step {i}")).collect();
    stepground_core::StepSequence::new(steps, EmbeddingMatrix::from_rows(dim, vectors).unwrap()).unwrap()
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub mod checks;
