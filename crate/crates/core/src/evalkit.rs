//! Evaluation arithmetic over already-judged transcripts.
//!
//! Nothing here calls a model: judge outputs arrive as JSON lines, are
//! penalized and aggregated into per-dataset and per-split macro accuracy.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::sync::OnceLock;

use log::warn;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::embedder::Embedder;
use crate::error::{Error, Result};
use crate::matrix::{dot, EmbeddingMatrix, UNIT_NORM_TOL};

/// The six rubric axes, in report order.
pub const CRITERIA: [&str; 6] = [
    "logical_progression",
    "temporal_alignment",
    "spatial_grounding",
    "continuation",
    "clarity",
    "semantic_alignment",
];

pub const MAX_CRITERION: u8 = 5;
pub const MAX_TOTAL: f64 = 30.0;

const CLARITY: usize = 4;
const SEMANTIC: usize = 5;
const FLUFF_CAP: u8 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedExample {
    pub dataset: String,
    /// Post-penalty scores in [`CRITERIA`] order.
    pub scores: [u8; 6],
    #[serde(default)]
    pub fluff: bool,
    #[serde(default)]
    pub fatal: bool,
}

impl JudgedExample {
    pub fn total(&self) -> u32 {
        self.scores.iter().map(|&s| u32::from(s)).sum()
    }

    /// Percentage of the 30-point maximum.
    pub fn percent(&self) -> f64 {
        f64::from(self.total()) / MAX_TOTAL * 100.0
    }
}

/// Fatal zeroes everything; fluff caps clarity and semantic alignment at 2.
pub fn apply_penalties(dataset: &str, raw: [i64; 6], fluff: bool, fatal: bool) -> Result<JudgedExample> {
    let mut scores = [0u8; 6];
    for (i, (&r, s)) in raw.iter().zip(&mut scores).enumerate() {
        if !(0..=i64::from(MAX_CRITERION)).contains(&r) {
            return Err(Error::InvalidInput(format!("{} score {r} outside 0..=5", CRITERIA[i])));
        }
        *s = r as u8;
    }
    if fatal {
        scores = [0; 6];
    } else if fluff {
        scores[CLARITY] = scores[CLARITY].min(FLUFF_CAP);
        scores[SEMANTIC] = scores[SEMANTIC].min(FLUFF_CAP);
    }
    Ok(JudgedExample {
        dataset: dataset.to_string(),
        scores,
        fluff,
        fatal,
    })
}

/// One line of a judged transcript: structured scores, or the judge's raw text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_output: Option<String>,
    #[serde(default)]
    pub fluff: bool,
    #[serde(default)]
    pub fatal: bool,
}

fn criterion_index(key: &str) -> Option<usize> {
    let norm: String = key
        .trim()
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .collect();
    let norm = match norm.as_str() {
        "temporal_sequencing" | "temporal" => "temporal_alignment",
        "logic" | "logical" => "logical_progression",
        "spatial" => "spatial_grounding",
        "semantic" => "semantic_alignment",
        other => other,
    };
    CRITERIA.iter().position(|&c| c == norm)
}

fn key_value_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"["']?([A-Za-z][A-Za-z _\-]*?)["']?\s*[:=]\s*["']?(-?\d+)"#).expect("valid regex"))
}

/// Fallback parse of free-form judge output: key-value pairs, values clamped
/// to `0..=5`. Returns the scores and the names of criteria that were absent.
pub fn parse_judge_output(text: &str) -> ([i64; 6], Vec<&'static str>) {
    let mut found = [None; 6];
    for cap in key_value_regex().captures_iter(text) {
        if let Some(i) = criterion_index(&cap[1]) {
            if found[i].is_none() {
                let v: i64 = cap[2].parse().unwrap_or(0);
                found[i] = Some(v.clamp(0, i64::from(MAX_CRITERION)));
            }
        }
    }
    let missing = CRITERIA
        .iter()
        .zip(&found)
        .filter(|(_, v)| v.is_none())
        .map(|(&c, _)| c)
        .collect();
    (found.map(|v| v.unwrap_or(0)), missing)
}

impl TranscriptLine {
    pub fn into_example(self) -> Result<JudgedExample> {
        let raw = match (&self.scores, &self.raw_output) {
            (Some(map), _) => {
                let mut raw = [None; 6];
                for (k, &v) in map {
                    let i =
                        criterion_index(k).ok_or_else(|| Error::InvalidInput(format!("unknown criterion {k:?}")))?;
                    raw[i] = Some(v);
                }
                let mut out = [0i64; 6];
                for (i, v) in raw.iter().enumerate() {
                    out[i] = v.ok_or_else(|| Error::InvalidInput(format!("missing criterion {}", CRITERIA[i])))?;
                }
                out
            }
            (None, Some(text)) => {
                let (raw, missing) = parse_judge_output(text);
                if !missing.is_empty() {
                    warn!(
                        "judge output for {} is missing {:?}; scored as 0",
                        self.id.as_deref().unwrap_or(&self.dataset),
                        missing
                    );
                }
                raw
            }
            (None, None) => {
                return Err(Error::InvalidInput(
                    "transcript line has neither scores nor raw_output".into(),
                ));
            }
        };
        apply_penalties(&self.dataset, raw, self.fluff, self.fatal)
    }
}

pub fn read_transcript(reader: impl BufRead) -> Result<Vec<JudgedExample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::MalformedLine {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TranscriptLine = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: lineno,
            message: e.to_string(),
        })?;
        out.push(parsed.into_example().map_err(|e| Error::MalformedLine {
            line: lineno,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Split name to its datasets, in column order.
pub type SplitMap = Vec<(String, Vec<String>)>;

/// Parse `{"in_domain": ["CC4D", ...], "zero_shot": [...]}`, keeping key order.
pub fn parse_split_map(text: &str) -> Result<SplitMap> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::InvalidInput("split map must be a JSON object".into()))?;
    obj.iter()
        .map(|(split, ds)| {
            let ds: Vec<String> = serde_json::from_value(ds.clone())?;
            Ok((split.clone(), ds))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub dataset: String,
    pub split: String,
    pub examples: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub split: String,
    pub datasets: Vec<String>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroReport {
    pub datasets: Vec<DatasetScore>,
    pub splits: Vec<SplitScore>,
}

/// Per-example percent, averaged per dataset, then unweighted across each split.
pub fn macro_accuracy(examples: &[JudgedExample], splits: &SplitMap) -> Result<MacroReport> {
    let mut sums: HashMap<&str, (f64, usize)> = HashMap::new();
    for ex in examples {
        let e = sums.entry(ex.dataset.as_str()).or_default();
        e.0 += ex.percent();
        e.1 += 1;
    }
    let mapped: HashMap<&str, &str> = splits
        .iter()
        .flat_map(|(s, ds)| ds.iter().map(move |d| (d.as_str(), s.as_str())))
        .collect();
    if let Some(ex) = examples.iter().find(|e| !mapped.contains_key(e.dataset.as_str())) {
        return Err(Error::InvalidInput(format!(
            "dataset {:?} is not in the split map",
            ex.dataset
        )));
    }

    let mut datasets = Vec::new();
    let mut split_scores = Vec::new();
    for (split, names) in splits {
        if names.is_empty() {
            return Err(Error::InvalidInput(format!("split {split:?} lists no datasets")));
        }
        let mut accs = Vec::with_capacity(names.len());
        for name in names {
            let &(sum, n) = sums
                .get(name.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("dataset {name:?} has no examples")))?;
            let accuracy = sum / n as f64;
            accs.push(accuracy);
            datasets.push(DatasetScore {
                dataset: name.clone(),
                split: split.clone(),
                examples: n,
                accuracy,
            });
        }
        split_scores.push(SplitScore {
            split: split.clone(),
            datasets: names.clone(),
            accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
        });
    }
    Ok(MacroReport {
        datasets,
        splits: split_scores,
    })
}

impl MacroReport {
    /// One row in the per-dataset table layout: datasets, then split averages.
    pub fn to_csv(&self, model: &str) -> String {
        let mut header = vec!["model".to_string()];
        header.extend(self.datasets.iter().map(|d| d.dataset.clone()));
        header.extend(self.splits.iter().map(|s| s.split.clone()));
        let mut row = vec![model.to_string()];
        row.extend(self.datasets.iter().map(|d| format!("{:.1}", d.accuracy)));
        row.extend(self.splits.iter().map(|s| format!("{:.1}", s.accuracy)));
        format!("{}\n{}\n", header.join(","), row.join(","))
    }

    pub fn split(&self, name: &str) -> Option<f64> {
        self.splits.iter().find(|s| s.split == name).map(|s| s.accuracy)
    }
}

const DIVERSITY_LEVELS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Mean judged difference over all unordered pairs of one prompt's generations.
pub fn diversity_score(pairwise: &[Vec<f64>]) -> Result<f64> {
    let n = pairwise.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "diversity needs at least 2 generations, got {n}"
        )));
    }
    if pairwise.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidInput("pairwise matrix must be square".into()));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (pairwise[i][j], pairwise[j][i]);
            if a != b {
                return Err(Error::InvalidInput(format!(
                    "pair ({i}, {j}) is asymmetric: {a} vs {b}"
                )));
            }
            if !DIVERSITY_LEVELS.contains(&a) {
                return Err(Error::InvalidInput(format!(
                    "pair ({i}, {j}) value {a} is not a judged level"
                )));
            }
            sum += a;
        }
    }
    Ok(2.0 * sum / (n * (n - 1)) as f64)
}

/// Model-level diversity: mean of per-prompt scores.
pub fn mean_diversity(prompts: &[Vec<Vec<f64>>]) -> Result<f64> {
    if prompts.is_empty() {
        return Err(Error::Empty("no prompts to average"));
    }
    let scores = prompts.iter().map(|p| diversity_score(p)).collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Closed action set with one unit-norm embedding per action.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    actions: Vec<String>,
    embeddings: EmbeddingMatrix,
}

impl Taxonomy {
    pub fn embed(actions: Vec<String>, embedder: &dyn Embedder) -> Result<Self> {
        let embeddings = embedder.embed_all(&actions);
        Self::new(actions, embeddings)
    }

    pub fn new(actions: Vec<String>, embeddings: EmbeddingMatrix) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::Empty("taxonomy has no actions"));
        }
        if actions.len() != embeddings.rows() {
            return Err(Error::RowCountMismatch {
                expected: actions.len(),
                found: embeddings.rows(),
            });
        }
        embeddings.check_unit_norm(UNIT_NORM_TOL)?;
        Ok(Self { actions, embeddings })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn action(&self, i: usize) -> &str {
        &self.actions[i]
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }
}

/// Nearest action by cosine similarity; ties go to the lowest index.
pub fn remap_vector(vector: &[f32], taxonomy: &Taxonomy) -> Result<usize> {
    if vector.len() != taxonomy.embeddings.dim() {
        return Err(Error::DimMismatch {
            expected: taxonomy.embeddings.dim(),
            found: vector.len(),
        });
    }
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for i in 0..taxonomy.len() {
        let sim = dot(vector, taxonomy.embeddings.row(i));
        if sim > best_sim {
            best = i;
            best_sim = sim;
        }
    }
    Ok(best)
}

pub fn remap_to_taxonomy(step: &str, taxonomy: &Taxonomy, embedder: &dyn Embedder) -> Result<usize> {
    remap_vector(&embedder.embed(step), taxonomy)
}
