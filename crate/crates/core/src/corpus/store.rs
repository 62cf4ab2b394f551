use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{blob, CorpusIndex, Manifest, NarrationRecord, NarrationSegment, RecordSpan};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const RECORDS_FILE: &str = "records.jsonl";

#[derive(Serialize, Deserialize)]
struct StoredRecord {
    video_id: String,
    start_row: usize,
    len: usize,
    segments: Vec<NarrationSegment>,
}

pub fn write_index(index: &CorpusIndex, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let blob_path = dir.join(EMBEDDINGS_FILE);
    blob::write_blob(&blob_path, index.embeddings())?;

    let records_path = dir.join(RECORDS_FILE);
    let file = fs::File::create(&records_path).map_err(|e| Error::io(&records_path, e))?;
    let mut w = BufWriter::new(file);
    for (rec, span) in index.records().iter().zip(index.spans()) {
        let stored = StoredRecord {
            video_id: rec.video_id.clone(),
            start_row: span.start_row,
            len: span.len,
            segments: rec.segments.clone(),
        };
        serde_json::to_writer(&mut w, &stored)?;
        w.write_all(b"\n").map_err(|e| Error::io(&records_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&records_path, e))?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(index.manifest())?;
    text.push('\n');
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != blob::FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: blob::FORMAT_VERSION,
            found: manifest.format_version,
        });
    }
    Ok(manifest)
}

pub fn read_index(dir: &Path) -> Result<CorpusIndex> {
    let manifest = read_manifest(dir)?;

    let blob_path = dir.join(EMBEDDINGS_FILE);
    let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let decoded = blob::decode(&bytes)?;
    let stored_sum = format!("{:016x}", decoded.checksum);
    if stored_sum != manifest.checksum {
        return Err(Error::Corrupt(format!(
            "manifest checksum {} does not match embedding blob {stored_sum}",
            manifest.checksum
        )));
    }
    if decoded.matrix.dim() != manifest.dim {
        return Err(Error::DimMismatch {
            expected: manifest.dim,
            found: decoded.matrix.dim(),
        });
    }

    let records_path = dir.join(RECORDS_FILE);
    let file = fs::File::open(&records_path).map_err(|e| Error::io(&records_path, e))?;
    let mut records = Vec::with_capacity(manifest.record_count);
    let mut spans = Vec::with_capacity(manifest.record_count);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&records_path, e))?;
        if line.is_empty() {
            continue;
        }
        let stored: StoredRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        spans.push(RecordSpan {
            start_row: stored.start_row,
            len: stored.len,
        });
        records.push(NarrationRecord {
            video_id: stored.video_id,
            segments: stored.segments,
        });
    }

    CorpusIndex::from_parts(records, spans, decoded.matrix, manifest)
}
