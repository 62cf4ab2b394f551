use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{CorpusIndex, NarrationRecord, NarrationSegment};
use crate::embedder::Embedder;
use crate::error::{Error, Result};
use crate::matrix::{l2_norm, EmbeddingMatrix, UNIT_NORM_TOL};

/// Rows further than this from unit norm are rejected instead of renormalized.
pub const RENORMALIZE_TOL: f64 = 1e-2;

/// Where segment embeddings come from.
pub enum EmbeddingSource<'a> {
    /// Embed every kept segment text.
    Compute(&'a dyn Embedder),
    /// One row per raw input segment, in file order (including segments
    /// that are later dropped).
    Precomputed {
        matrix: EmbeddingMatrix,
        tag: String,
        expected_dim: Option<usize>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records_read: usize,
    pub dropped_records: usize,
    pub dropped_empty_segments: usize,
    pub renormalized_rows: usize,
}

pub fn ingest_corpus(narrations: &Path, source: EmbeddingSource<'_>) -> Result<(CorpusIndex, IngestReport)> {
    let file = File::open(narrations).map_err(|e| Error::io(narrations, e))?;
    ingest_reader(BufReader::new(file), source)
}

pub fn ingest_reader(reader: impl BufRead, source: EmbeddingSource<'_>) -> Result<(CorpusIndex, IngestReport)> {
    let mut raw = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::MalformedLine {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: NarrationRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: lineno,
            message: e.to_string(),
        })?;
        raw.push((lineno, rec));
    }
    build_index(raw, source)
}

/// Clean, sort and embed raw `(line number, record)` pairs.
pub fn build_index(
    raw: Vec<(usize, NarrationRecord)>,
    source: EmbeddingSource<'_>,
) -> Result<(CorpusIndex, IngestReport)> {
    let total_segments: usize = raw.iter().map(|(_, r)| r.segments.len()).sum();
    let (precomputed, tag, embedder) = match source {
        EmbeddingSource::Compute(e) => (None, e.tag(), Some(e)),
        EmbeddingSource::Precomputed {
            matrix,
            tag,
            expected_dim,
        } => {
            if let Some(dim) = expected_dim {
                if dim != matrix.dim() {
                    return Err(Error::DimMismatch {
                        expected: dim,
                        found: matrix.dim(),
                    });
                }
            }
            if matrix.rows() != total_segments {
                return Err(Error::RowCountMismatch {
                    expected: total_segments,
                    found: matrix.rows(),
                });
            }
            (Some(matrix), tag, None)
        }
    };
    let dim = match (&precomputed, embedder) {
        (Some(m), _) => m.dim(),
        (None, Some(e)) => e.dim(),
        (None, None) => unreachable!(),
    };

    let mut report = IngestReport {
        records_read: raw.len(),
        ..IngestReport::default()
    };
    let mut records = Vec::with_capacity(raw.len());
    let mut rows = EmbeddingMatrix::empty(dim);
    let mut seen = HashSet::with_capacity(raw.len());
    let mut raw_row = 0usize;

    for (lineno, rec) in raw {
        let first_row = raw_row;
        raw_row += rec.segments.len();
        for s in &rec.segments {
            check_segment(s).map_err(|message| Error::MalformedLine { line: lineno, message })?;
        }
        if !seen.insert(rec.video_id.clone()) {
            return Err(Error::MalformedLine {
                line: lineno,
                message: format!("duplicate video_id {:?}", rec.video_id),
            });
        }

        let mut kept: Vec<(usize, NarrationSegment)> = Vec::with_capacity(rec.segments.len());
        for (j, s) in rec.segments.into_iter().enumerate() {
            if s.text.trim().is_empty() {
                report.dropped_empty_segments += 1;
            } else {
                kept.push((first_row + j, s));
            }
        }
        if kept.is_empty() {
            report.dropped_records += 1;
            continue;
        }
        // stable: equal (start, end) keep input order
        kept.sort_by(|(_, a), (_, b)| a.start_s.total_cmp(&b.start_s).then(a.end_s.total_cmp(&b.end_s)));

        for (src_row, seg) in &kept {
            match (&precomputed, embedder) {
                (Some(m), _) => {
                    let row = m.row(*src_row);
                    let norm = l2_norm(row);
                    let dev = (norm - 1.0).abs();
                    if dev > RENORMALIZE_TOL || !norm.is_finite() {
                        return Err(Error::NotUnitNorm { row: *src_row, norm });
                    }
                    if dev > 0.0 {
                        let fixed: Vec<f32> = row.iter().map(|&x| (f64::from(x) / norm) as f32).collect();
                        if fixed != row {
                            report.renormalized_rows += 1;
                        }
                        rows.push_row(&fixed)?;
                    } else {
                        rows.push_row(row)?;
                    }
                }
                (None, Some(e)) => rows.push_row(&e.embed(&seg.text))?,
                (None, None) => unreachable!(),
            }
        }
        records.push(NarrationRecord {
            video_id: rec.video_id,
            segments: kept.into_iter().map(|(_, s)| s).collect(),
        });
    }

    if report.dropped_records > 0 {
        warn!(
            "dropped {} degenerate records ({} empty segments removed)",
            report.dropped_records, report.dropped_empty_segments
        );
    }
    rows.check_unit_norm(UNIT_NORM_TOL)?;
    let index = CorpusIndex::new(records, rows, tag)?;
    Ok((index, report))
}

fn check_segment(s: &NarrationSegment) -> std::result::Result<(), String> {
    if !s.start_s.is_finite() || !s.end_s.is_finite() {
        return Err("segment times must be finite".into());
    }
    if s.start_s < 0.0 {
        return Err(format!("segment start_s {} is negative", s.start_s));
    }
    if s.end_s < s.start_s {
        return Err(format!("segment end_s {} precedes start_s {}", s.end_s, s.start_s));
    }
    Ok(())
}
