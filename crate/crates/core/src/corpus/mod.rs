//! Narration corpus: records, their embedding rows, and the on-disk index.

pub mod blob;
mod ingest;
mod store;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{EmbeddingMatrix, MatrixView, UNIT_NORM_TOL};

pub use ingest::{build_index, ingest_corpus, ingest_reader, EmbeddingSource, IngestReport};
pub use store::{read_index, write_index, EMBEDDINGS_FILE, MANIFEST_FILE, RECORDS_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrationSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrationRecord {
    pub video_id: String,
    pub segments: Vec<NarrationSegment>,
}

/// Contiguous row range of one record inside the embedding matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSpan {
    pub start_row: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dim: usize,
    pub record_count: usize,
    pub segment_count: usize,
    pub embedder: String,
    /// Hex-encoded 64-bit checksum of the embedding payload.
    pub checksum: String,
}

/// Immutable, validated corpus with one embedding row per segment.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusIndex {
    records: Vec<NarrationRecord>,
    spans: Vec<RecordSpan>,
    embeddings: EmbeddingMatrix,
    manifest: Manifest,
}

impl CorpusIndex {
    /// Assemble an index from cleaned records and their rows, in record order.
    pub fn new(
        records: Vec<NarrationRecord>,
        embeddings: EmbeddingMatrix,
        embedder_tag: impl Into<String>,
    ) -> Result<Self> {
        let mut spans = Vec::with_capacity(records.len());
        let mut row = 0;
        for r in &records {
            spans.push(RecordSpan {
                start_row: row,
                len: r.segments.len(),
            });
            row += r.segments.len();
        }
        let manifest = Manifest {
            format_version: blob::FORMAT_VERSION,
            dim: embeddings.dim(),
            record_count: records.len(),
            segment_count: row,
            embedder: embedder_tag.into(),
            checksum: format!("{:016x}", blob::matrix_checksum(&embeddings)),
        };
        let index = Self {
            records,
            spans,
            embeddings,
            manifest,
        };
        index.validate()?;
        Ok(index)
    }

    pub(crate) fn from_parts(
        records: Vec<NarrationRecord>,
        spans: Vec<RecordSpan>,
        embeddings: EmbeddingMatrix,
        manifest: Manifest,
    ) -> Result<Self> {
        let index = Self {
            records,
            spans,
            embeddings,
            manifest,
        };
        index.validate()?;
        Ok(index)
    }

    fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        if m.dim != self.embeddings.dim() {
            return Err(Error::DimMismatch {
                expected: m.dim,
                found: self.embeddings.dim(),
            });
        }
        if m.record_count != self.records.len() || self.spans.len() != self.records.len() {
            return Err(Error::Corrupt(format!(
                "manifest lists {} records, found {} records and {} spans",
                m.record_count,
                self.records.len(),
                self.spans.len()
            )));
        }
        let mut next = 0;
        for (i, (span, rec)) in self.spans.iter().zip(&self.records).enumerate() {
            if span.start_row != next || span.len != rec.segments.len() || span.len == 0 {
                return Err(Error::Corrupt(format!(
                    "record {i} span {}+{} does not continue the partition at row {next}",
                    span.start_row, span.len
                )));
            }
            next += span.len;
        }
        if next != m.segment_count || next != self.embeddings.rows() {
            return Err(Error::RowCountMismatch {
                expected: m.segment_count,
                found: self.embeddings.rows(),
            });
        }
        let mut seen = std::collections::HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if !seen.insert(r.video_id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate video_id {:?}", r.video_id)));
            }
        }
        self.embeddings.check_unit_norm(UNIT_NORM_TOL)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn records(&self) -> &[NarrationRecord] {
        &self.records
    }

    pub fn record(&self, idx: usize) -> Result<&NarrationRecord> {
        self.records.get(idx).ok_or(Error::OutOfRange {
            index: idx,
            len: self.records.len(),
        })
    }

    pub fn spans(&self) -> &[RecordSpan] {
        &self.spans
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// The `L × d` rows of one record, borrowed from the shared matrix.
    pub fn segment_embeddings(&self, record_idx: usize) -> Result<MatrixView<'_>> {
        let span = self.spans.get(record_idx).ok_or(Error::OutOfRange {
            index: record_idx,
            len: self.records.len(),
        })?;
        self.embeddings.slice(span.start_row, span.len)
    }
}
